//! Detection scoring: greedy TP/FP assignment, precision-recall curves,
//! and all-points average precision.
//!
//! Within an image, detections are processed in descending score (ties by
//! input order). Each detection looks at the not-yet-consumed ground truth
//! of highest IoU: at or above the threshold it is a true positive and
//! consumes that ground truth, unless the ground truth is marked invalid,
//! in which case the detection is ignored (neither TP nor FP) and the
//! ground truth stays in the pool to absorb further matches. Everything
//! else is a false positive. Subset evaluation reuses the same machinery:
//! out-of-subset faces get their invalid flag set, so matching them
//! ignores the detection instead of penalizing it.
//!
//! The PR curve ranks all non-ignored detections globally by score and
//! records cumulative precision and recall per rank. Average precision is
//! the all-points interpolation: the integral over recall of the precision
//! envelope (the maximum precision at any recall at least r). An
//! evaluation with no countable ground truth has no defined AP and is
//! reported as the dedicated no-ground-truth error, never as 0.

use crate::dataio::{DetectionRecord, FaceAnnotation, ImageRecord};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, ScoredBox};
use serde::Serialize;
use std::collections::{HashMap, HashSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    /// Treat invalid-flagged ground truth as ignore regions (default).
    /// When false they count and match like any other face.
    pub ignore_invalid: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            ignore_invalid: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::invalid(format!(
                "IoU threshold {} outside (0, 1)",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DetFlag {
    Tp,
    Fp,
    Ignored,
}

/// Flag one image's detections against its ground truth. The returned
/// flags align with the input detection order. Ties in the best-overlap
/// ground truth go to the lower face index.
pub fn assign_tp_fp(
    dets: &[ScoredBox],
    gts: &[FaceAnnotation],
    config: &EvalConfig,
) -> Result<Vec<DetFlag>> {
    config.validate()?;
    let boxes: Vec<Option<BBox>> = gts.iter().map(FaceAnnotation::bbox).collect();
    let ignored: Vec<bool> = gts
        .iter()
        .map(|g| config.ignore_invalid && g.is_invalid())
        .collect();

    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut consumed = vec![false; gts.len()];
    let mut flags = vec![DetFlag::Fp; dets.len()];
    for &d in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt_box) in boxes.iter().enumerate() {
            let Some(gt_box) = gt_box else { continue };
            if consumed[g] {
                continue;
            }
            let v = iou(&dets[d].bbox, gt_box);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        flags[d] = match best {
            Some((g, v)) if v >= config.iou_threshold => {
                if ignored[g] {
                    DetFlag::Ignored
                } else {
                    consumed[g] = true;
                    DetFlag::Tp
                }
            }
            _ => DetFlag::Fp,
        };
    }
    Ok(flags)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PRPoint {
    pub recall: f64,
    pub precision: f64,
    /// Score of the detection at this rank; the curve point applies when
    /// thresholding at this value.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PRCurve {
    pub points: Vec<PRPoint>,
    pub num_gt: usize,
    pub tp: usize,
    pub fp: usize,
}

/// Build the global PR curve from scored flags across all images.
/// Ignored detections contribute nothing; ties rank by input order.
pub fn pr_curve(scored_flags: &[(f64, DetFlag)], num_gt: usize) -> Result<PRCurve> {
    if num_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    let mut order: Vec<usize> = (0..scored_flags.len())
        .filter(|&i| scored_flags[i].1 != DetFlag::Ignored)
        .collect();
    order.sort_by(|&a, &b| {
        scored_flags[b]
            .0
            .partial_cmp(&scored_flags[a].0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut points = Vec::with_capacity(order.len());
    for &i in &order {
        match scored_flags[i].1 {
            DetFlag::Tp => tp += 1,
            DetFlag::Fp => fp += 1,
            DetFlag::Ignored => unreachable!(),
        }
        if tp > num_gt {
            return Err(Error::invalid(format!(
                "{tp} true positives exceed {num_gt} ground truths"
            )));
        }
        points.push(PRPoint {
            recall: tp as f64 / num_gt as f64,
            precision: tp as f64 / (tp + fp) as f64,
            score: scored_flags[i].0,
        });
    }
    Ok(PRCurve {
        points,
        num_gt,
        tp,
        fp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct APResult {
    pub ap: f64,
    pub tp: usize,
    pub fp: usize,
    pub num_gt: usize,
}

/// Precision envelope per point: the maximum precision at this or any
/// later (higher-recall) point.
pub fn precision_envelope(curve: &PRCurve) -> Vec<f64> {
    let mut env = vec![0.0; curve.points.len()];
    let mut run: f64 = 0.0;
    for (i, p) in curve.points.iter().enumerate().rev() {
        run = run.max(p.precision);
        env[i] = run;
    }
    env
}

/// All-points average precision: sum of envelope precision times recall
/// increments. An empty curve (no detections) gives AP 0.
pub fn average_precision(curve: &PRCurve) -> APResult {
    let env = precision_envelope(curve);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, p) in curve.points.iter().enumerate() {
        if p.recall > prev_recall {
            ap += (p.recall - prev_recall) * env[i];
            prev_recall = p.recall;
        }
    }
    APResult {
        ap,
        tp: curve.tp,
        fp: curve.fp,
        num_gt: curve.num_gt,
    }
}

fn countable(face: &FaceAnnotation, config: &EvalConfig) -> bool {
    face.bbox().is_some() && !(config.ignore_invalid && face.is_invalid())
}

/// Ground truths that enter the recall denominator under this config.
pub fn count_ground_truth(annotations: &[ImageRecord], config: &EvalConfig) -> usize {
    annotations
        .iter()
        .flat_map(|r| &r.faces)
        .filter(|f| countable(f, config))
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub result: APResult,
    pub curve: PRCurve,
}

/// Full pipeline: per-image assignment, global ranking, AP.
pub fn evaluate(
    annotations: &[ImageRecord],
    detections: &[DetectionRecord],
    config: &EvalConfig,
) -> Result<Evaluation> {
    config.validate()?;
    let mut by_path: HashMap<&str, usize> = HashMap::new();
    for (i, rec) in annotations.iter().enumerate() {
        if by_path.insert(rec.path.as_str(), i).is_some() {
            return Err(Error::invalid(format!(
                "duplicate annotation image {}",
                rec.path
            )));
        }
    }
    let mut seen = HashSet::new();
    let mut scored_flags = Vec::new();
    for det_rec in detections {
        if !seen.insert(det_rec.path.as_str()) {
            return Err(Error::invalid(format!(
                "duplicate detection image {}",
                det_rec.path
            )));
        }
        let &idx = by_path.get(det_rec.path.as_str()).ok_or_else(|| {
            Error::invalid(format!("detections for unknown image {}", det_rec.path))
        })?;
        let flags = assign_tp_fp(&det_rec.detections, &annotations[idx].faces, config)?;
        scored_flags.extend(
            det_rec
                .detections
                .iter()
                .zip(flags)
                .map(|(d, f)| (d.score, f)),
        );
    }
    let num_gt = count_ground_truth(annotations, config);
    let curve = pr_curve(&scored_flags, num_gt)?;
    Ok(Evaluation {
        result: average_precision(&curve),
        curve,
    })
}

/// Parse a subset list: one "filename face_index" pair per line.
pub fn parse_subset_list(text: &str) -> Result<Vec<(String, usize)>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let (Some(name), Some(index), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::parse(
                i + 1,
                "expected \"filename face_index\"".to_string(),
            ));
        };
        let index: usize = index
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("bad face index {index:?}")))?;
        pairs.push((name.to_string(), index));
    }
    Ok(pairs)
}

/// Mark every face outside the subset invalid, so matching it ignores the
/// detection rather than counting a false positive. Faces already invalid
/// stay invalid even when listed.
pub fn subset_filter(
    records: &[ImageRecord],
    pairs: &[(String, usize)],
) -> Result<Vec<ImageRecord>> {
    let mut by_path: HashMap<&str, usize> = HashMap::new();
    for (i, rec) in records.iter().enumerate() {
        if by_path.insert(rec.path.as_str(), i).is_some() {
            return Err(Error::invalid(format!(
                "duplicate annotation image {}",
                rec.path
            )));
        }
    }
    let mut keep: HashSet<(usize, usize)> = HashSet::new();
    for (path, face) in pairs {
        let &rec = by_path
            .get(path.as_str())
            .ok_or_else(|| Error::invalid(format!("subset references unknown image {path}")))?;
        if *face >= records[rec].faces.len() {
            return Err(Error::invalid(format!(
                "subset references face {face} of {path}, which has {}",
                records[rec].faces.len()
            )));
        }
        keep.insert((rec, *face));
    }
    let mut out = records.to_vec();
    for (r, rec) in out.iter_mut().enumerate() {
        for (f, face) in rec.faces.iter_mut().enumerate() {
            if !keep.contains(&(r, f)) {
                face.invalid = 1;
            }
        }
    }
    Ok(out)
}
