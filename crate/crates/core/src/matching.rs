//! Anchor-to-face matching.
//!
//! Baseline matching runs in two phases. Phase A walks faces in input order
//! and lets each claim the unclaimed anchor of highest IoU (a claim needs
//! positive overlap, ties go to the lower anchor index). Phase B assigns
//! every remaining anchor whose IoU with some face exceeds the threshold to
//! the face of its maximum IoU, ties to the lower face index. Everything
//! else is background.
//!
//! Scale-compensated matching guarantees small faces enough anchors: stage
//! one is the baseline at a reduced threshold; stage two computes a target
//! count N (per-image average of stage-one counts, rounded half-up and
//! floored at 1, unless a fixed N is configured) and tops up every face
//! below N from its still-unassigned anchors above a low IoU floor, best
//! overlap first. Stage-one assignments are never removed, and any matched
//! pair in a compensated result clears the floor, so stage-one bipartite
//! claims also require overlap above it.

use crate::anchors::AnchorGrid;
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NPolicy {
    /// N = mean stage-one matched count over this image's faces, rounded
    /// half-up, floored at 1 (taken as 1 when there are no faces).
    PerImageAverage,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchConfig {
    pub stage1_threshold: f64,
    pub stage2_floor: f64,
    pub n_policy: NPolicy,
    /// Conventional single-stage threshold, kept for tooling that compares
    /// the two strategies.
    pub baseline_threshold: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            stage1_threshold: 0.35,
            stage2_floor: 0.1,
            n_policy: NPolicy::PerImageAverage,
            baseline_threshold: 0.5,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 < self.stage2_floor
            && self.stage2_floor < self.stage1_threshold
            && self.stage1_threshold <= self.baseline_threshold
            && self.baseline_threshold < 1.0;
        if !ordered {
            return Err(Error::invalid(format!(
                "thresholds must satisfy 0 < floor ({}) < stage one ({}) <= baseline ({}) < 1",
                self.stage2_floor, self.stage1_threshold, self.baseline_threshold
            )));
        }
        Ok(())
    }
}

/// Outcome of matching one image's faces against one anchor grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// Per anchor: `Some(face index)` or `None` for background.
    pub anchor_assignment: Vec<Option<usize>>,
    /// Per face: matched anchor indices, ascending. Lists are disjoint.
    pub per_face_anchors: Vec<Vec<usize>>,
    /// The N applied in stage two; `None` for baseline results.
    pub n_used: Option<usize>,
}

impl MatchResult {
    pub fn matched_count(&self, face: usize) -> usize {
        self.per_face_anchors[face].len()
    }
}

struct BaselineRun {
    assignment: Vec<Option<usize>>,
    per_face: Vec<Vec<usize>>,
    /// Cached per-face positive-overlap candidates from the grid.
    candidates: Vec<Vec<(usize, f64)>>,
}

fn run_baseline(
    faces: &[BBox],
    grid: &AnchorGrid,
    threshold: f64,
    claim_floor: f64,
) -> BaselineRun {
    let mut assignment: Vec<Option<usize>> = vec![None; grid.len()];
    let mut per_face: Vec<Vec<usize>> = vec![Vec::new(); faces.len()];
    let candidates: Vec<Vec<(usize, f64)>> = faces.iter().map(|f| grid.overlapping(f)).collect();

    // Phase A: bipartite claims in face order.
    for (f, cands) in candidates.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for &(idx, v) in cands {
            // Candidate lists are ascending by index, so a strict comparison
            // keeps the lowest index among ties.
            if assignment[idx].is_none() && v > claim_floor && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((idx, v));
            }
        }
        if let Some((idx, _)) = best {
            assignment[idx] = Some(f);
            per_face[f].push(idx);
        }
    }

    // Phase B: leftover anchors above the threshold, by best face.
    let mut claims: Vec<Option<(usize, f64)>> = vec![None; grid.len()];
    for (f, cands) in candidates.iter().enumerate() {
        for &(idx, v) in cands {
            if assignment[idx].is_some() || v <= threshold {
                continue;
            }
            // Faces arrive in ascending order, so a strict comparison keeps
            // the lowest face index among ties.
            if claims[idx].is_none_or(|(_, bv)| v > bv) {
                claims[idx] = Some((f, v));
            }
        }
    }
    for (idx, claim) in claims.into_iter().enumerate() {
        if let Some((f, _)) = claim {
            assignment[idx] = Some(f);
            per_face[f].push(idx);
        }
    }
    for list in &mut per_face {
        list.sort_unstable();
    }
    BaselineRun {
        assignment,
        per_face,
        candidates,
    }
}

/// Baseline matching at the given threshold (usually 0.5).
pub fn match_baseline(faces: &[BBox], grid: &AnchorGrid, threshold: f64) -> Result<MatchResult> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "matching threshold {threshold} outside (0, 1)"
        )));
    }
    let run = run_baseline(faces, grid, threshold, 0.0);
    Ok(MatchResult {
        anchor_assignment: run.assignment,
        per_face_anchors: run.per_face,
        n_used: None,
    })
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Two-stage scale-compensated matching.
pub fn match_scale_compensated(
    faces: &[BBox],
    grid: &AnchorGrid,
    config: &MatchConfig,
) -> Result<MatchResult> {
    config.validate()?;
    let mut run = run_baseline(faces, grid, config.stage1_threshold, config.stage2_floor);

    let n = match config.n_policy {
        NPolicy::Fixed(n) => n,
        NPolicy::PerImageAverage => {
            let total: usize = run.per_face.iter().map(Vec::len).sum();
            let mean = if faces.is_empty() {
                0.0
            } else {
                total as f64 / faces.len() as f64
            };
            round_half_up(mean).max(1)
        }
    };

    // Stage two, in face order: top up to N from unassigned anchors above
    // the floor, best overlap first, lower index on ties.
    for f in 0..faces.len() {
        let have = run.per_face[f].len();
        if have >= n {
            continue;
        }
        let mut cands: Vec<(usize, f64)> = run.candidates[f]
            .iter()
            .filter(|&&(idx, v)| run.assignment[idx].is_none() && v > config.stage2_floor)
            .copied()
            .collect();
        cands.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(idx, _) in cands.iter().take(n - have) {
            run.assignment[idx] = Some(f);
            run.per_face[f].push(idx);
        }
    }
    for list in &mut run.per_face {
        list.sort_unstable();
    }
    Ok(MatchResult {
        anchor_assignment: run.assignment,
        per_face_anchors: run.per_face,
        n_used: Some(n),
    })
}

/// Mean matched-anchor count, binned by face scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchStats {
    /// Bin i covers `[bin_edges[i], bin_edges[i+1])`.
    pub bin_edges: Vec<f64>,
    /// `None` for bins containing no faces.
    pub mean_matched: Vec<Option<f64>>,
    pub face_counts: Vec<usize>,
}

/// Accumulation-friendly form of [`matched_count_stats`]: per-bin totals
/// of matched anchors and of faces, so results from several images can be
/// summed exactly before averaging.
pub fn matched_count_sums(
    faces: &[BBox],
    result: &MatchResult,
    bin_edges: &[f64],
) -> Result<(Vec<usize>, Vec<usize>)> {
    if result.per_face_anchors.len() != faces.len() {
        return Err(Error::invalid(format!(
            "result covers {} faces, got {}",
            result.per_face_anchors.len(),
            faces.len()
        )));
    }
    if bin_edges.len() < 2 {
        return Err(Error::invalid("need at least two bin edges"));
    }
    if bin_edges.iter().any(|e| !e.is_finite()) || bin_edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(
            "bin edges must be finite and strictly increasing",
        ));
    }

    let nbins = bin_edges.len() - 1;
    let mut sums = vec![0usize; nbins];
    let mut counts = vec![0usize; nbins];
    for (face, matched) in faces.iter().zip(&result.per_face_anchors) {
        let scale = (face.width() * face.height()).sqrt();
        if scale < bin_edges[0] || scale >= bin_edges[nbins] {
            continue;
        }
        let bin = bin_edges.partition_point(|e| *e <= scale) - 1;
        sums[bin] += matched.len();
        counts[bin] += 1;
    }
    Ok((sums, counts))
}

/// Bin faces by scale (`sqrt(w * h)`) and average their matched counts.
/// Faces outside the binned range are not counted anywhere.
pub fn matched_count_stats(
    faces: &[BBox],
    result: &MatchResult,
    bin_edges: &[f64],
) -> Result<MatchStats> {
    let (sums, counts) = matched_count_sums(faces, result, bin_edges)?;
    Ok(MatchStats {
        bin_edges: bin_edges.to_vec(),
        mean_matched: sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| (c > 0).then(|| s as f64 / c as f64))
            .collect(),
        face_counts: counts,
    })
}
