//! Classification and regression loss with max-out background scoring,
//! hard negative mining, and analytic gradients.
//!
//! Anchors on the finest layer carry `n_m` background logits plus one face
//! logit, ordered (bg_1 .. bg_n_m, face); max-out keeps the highest
//! background logit and discards the rest, reducing every anchor to a
//! two-way (background, face) decision. Classification uses stabilized
//! softmax cross-entropy; regression uses elementwise smooth L1 on box
//! deltas. The classification term is averaged over positives plus the
//! mined negatives and weighted by lambda; the regression term is averaged
//! over positives alone.
//!
//! `multitask_loss` and `loss_gradients` expect a batch whose negatives
//! were already reduced by `mine_batch`: every negative present is treated
//! as mined. With no positives the mining quota is zero, so a mined batch
//! is empty and contributes nothing.

use crate::error::{Error, Result};
use crate::geometry::BoxDelta;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Background,
    Face,
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Background),
            1 => Ok(Label::Face),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::Background => 0,
            Label::Face => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_n_m")]
    pub n_m: usize,
    #[serde(default = "default_ratio")]
    pub neg_pos_ratio: f64,
}

fn default_lambda() -> f64 {
    4.0
}
fn default_n_m() -> usize {
    3
}
fn default_ratio() -> f64 {
    3.0
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: default_lambda(),
            n_m: default_n_m(),
            neg_pos_ratio: default_ratio(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid(format!(
                "lambda {} must be positive",
                self.lambda
            )));
        }
        if self.n_m < 1 {
            return Err(Error::invalid("n_m must be at least 1"));
        }
        if !(self.neg_pos_ratio.is_finite() && self.neg_pos_ratio >= 1.0) {
            return Err(Error::invalid(format!(
                "neg_pos_ratio {} must be at least 1",
                self.neg_pos_ratio
            )));
        }
        Ok(())
    }
}

/// One anchor's prediction and supervision. `logits` holds either two
/// scores (background, face) or, on the max-out layer, `n_m + 1` scores
/// (bg_1 .. bg_n_m, face). `target` is present exactly for positives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSample {
    pub label: Label,
    #[serde(default)]
    pub layer: Option<String>,
    pub logits: Vec<f64>,
    pub delta: BoxDelta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<BoxDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub anchors: Vec<AnchorSample>,
}

impl SampleBatch {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self, config: &LossConfig) -> Result<()> {
        config.validate()?;
        for (i, anchor) in self.anchors.iter().enumerate() {
            let n = anchor.logits.len();
            if n != 2 && n != config.n_m + 1 {
                return Err(Error::invalid(format!(
                    "anchor {i}: {n} logits, expected 2 or {}",
                    config.n_m + 1
                )));
            }
            if anchor.logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("anchor {i}: non-finite logit")));
            }
            if anchor.delta.as_array().iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("anchor {i}: non-finite delta")));
            }
            match (anchor.label, &anchor.target) {
                (Label::Face, None) => {
                    return Err(Error::invalid(format!(
                        "anchor {i}: positive without target"
                    )));
                }
                (Label::Background, Some(_)) => {
                    return Err(Error::invalid(format!("anchor {i}: negative with target")));
                }
                (Label::Face, Some(t)) if t.as_array().iter().any(|v| !v.is_finite()) => {
                    return Err(Error::invalid(format!("anchor {i}: non-finite target")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Reduce max-out logits (bg_1 .. bg_n_m, face) to (background, face).
pub fn maxout_background(logits: &[f64], n_m: usize) -> Result<[f64; 2]> {
    if logits.len() != n_m + 1 {
        return Err(Error::invalid(format!(
            "max-out expects {} logits, got {}",
            n_m + 1,
            logits.len()
        )));
    }
    let bg = logits[..n_m]
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    Ok([bg, logits[n_m]])
}

/// (background, face) logits and the index of the winning background logit.
/// Two logits pass through; longer vectors are max-out reduced. Ties keep
/// the lowest index.
fn effective_two(logits: &[f64]) -> ([f64; 2], usize) {
    if logits.len() == 2 {
        return ([logits[0], logits[1]], 0);
    }
    let n_m = logits.len() - 1;
    let mut arg = 0;
    for i in 1..n_m {
        if logits[i] > logits[arg] {
            arg = i;
        }
    }
    ([logits[arg], logits[n_m]], arg)
}

/// Two-class softmax cross-entropy, stabilized by max subtraction.
pub fn softmax_ce(background: f64, face: f64, label: Label) -> f64 {
    let m = background.max(face);
    let lse = m + ((background - m).exp() + (face - m).exp()).ln();
    let correct = match label {
        Label::Background => background,
        Label::Face => face,
    };
    lse - correct
}

fn smooth_l1_scalar(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

/// Elementwise smooth L1 between predicted and target deltas, summed over
/// the four coordinates.
pub fn smooth_l1(t: &BoxDelta, t_star: &BoxDelta) -> f64 {
    t.as_array()
        .iter()
        .zip(t_star.as_array())
        .map(|(a, b)| smooth_l1_scalar(a - b))
        .sum()
}

/// Indices (ascending) of the top-k negatives by loss, where
/// k = min(#negatives, floor(ratio * num_pos)). Ties prefer lower indices.
pub fn hard_negative_mine(neg_losses: &[f64], num_pos: usize, ratio: f64) -> Vec<usize> {
    let want = ratio * num_pos as f64;
    let k = if want >= neg_losses.len() as f64 {
        neg_losses.len()
    } else {
        want.floor() as usize
    };
    let mut order: Vec<usize> = (0..neg_losses.len()).collect();
    order.sort_by(|&a, &b| {
        neg_losses[b]
            .partial_cmp(&neg_losses[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut selected = order[..k].to_vec();
    selected.sort_unstable();
    selected
}

fn anchor_ce(anchor: &AnchorSample) -> f64 {
    let ([bg, face], _) = effective_two(&anchor.logits);
    softmax_ce(bg, face, anchor.label)
}

/// Keep all positives and the mined negatives, preserving anchor order.
pub fn mine_batch(batch: &SampleBatch, config: &LossConfig) -> Result<SampleBatch> {
    batch.validate(config)?;
    let num_pos = batch
        .anchors
        .iter()
        .filter(|a| a.label == Label::Face)
        .count();
    let neg_indices: Vec<usize> = batch
        .anchors
        .iter()
        .enumerate()
        .filter(|(_, a)| a.label == Label::Background)
        .map(|(i, _)| i)
        .collect();
    let neg_losses: Vec<f64> = neg_indices
        .iter()
        .map(|&i| anchor_ce(&batch.anchors[i]))
        .collect();
    let keep: std::collections::HashSet<usize> =
        hard_negative_mine(&neg_losses, num_pos, config.neg_pos_ratio)
            .into_iter()
            .map(|j| neg_indices[j])
            .collect();
    let anchors = batch
        .anchors
        .iter()
        .enumerate()
        .filter(|(i, a)| a.label == Label::Face || keep.contains(i))
        .map(|(_, a)| a.clone())
        .collect();
    Ok(SampleBatch { anchors })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
}

/// Loss over a pre-mined batch: cls = (lambda / N_cls) * sum of CE over all
/// anchors, reg = (1 / N_reg) * sum of smooth L1 over positives, with
/// N_cls = batch size and N_reg = positive count. Empty terms are zero.
pub fn multitask_loss(batch: &SampleBatch, config: &LossConfig) -> Result<LossBreakdown> {
    batch.validate(config)?;
    let num_pos = batch
        .anchors
        .iter()
        .filter(|a| a.label == Label::Face)
        .count();
    let n_cls = batch.anchors.len();

    let cls = if n_cls > 0 {
        let sum: f64 = batch.anchors.iter().map(anchor_ce).sum();
        config.lambda / n_cls as f64 * sum
    } else {
        0.0
    };
    let reg = if num_pos > 0 {
        let sum: f64 = batch
            .anchors
            .iter()
            .filter(|a| a.label == Label::Face)
            .map(|a| smooth_l1(&a.delta, a.target.as_ref().unwrap()))
            .sum();
        sum / num_pos as f64
    } else {
        0.0
    };
    Ok(LossBreakdown {
        total: cls + reg,
        cls,
        reg,
    })
}

/// Per-anchor gradient of the batch loss. `d_logits` matches the anchor's
/// logit vector; under max-out only the winning background logit receives
/// gradient. `d_delta` is zero for negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGradient {
    pub d_logits: Vec<f64>,
    pub d_delta: [f64; 4],
}

pub fn loss_gradients(batch: &SampleBatch, config: &LossConfig) -> Result<Vec<AnchorGradient>> {
    batch.validate(config)?;
    let num_pos = batch
        .anchors
        .iter()
        .filter(|a| a.label == Label::Face)
        .count();
    let n_cls = batch.anchors.len();
    let cls_scale = if n_cls > 0 {
        config.lambda / n_cls as f64
    } else {
        0.0
    };

    let mut out = Vec::with_capacity(batch.anchors.len());
    for anchor in &batch.anchors {
        let ([bg, face], arg_bg) = effective_two(&anchor.logits);
        let m = bg.max(face);
        let eb = (bg - m).exp();
        let ef = (face - m).exp();
        let sum = eb + ef;
        let p_bg = eb / sum;
        let p_face = ef / sum;
        let (g_bg, g_face) = match anchor.label {
            Label::Background => (p_bg - 1.0, p_face),
            Label::Face => (p_bg, p_face - 1.0),
        };
        let mut d_logits = vec![0.0; anchor.logits.len()];
        d_logits[arg_bg] = g_bg * cls_scale;
        *d_logits.last_mut().unwrap() = g_face * cls_scale;

        let mut d_delta = [0.0; 4];
        if let (Label::Face, Some(target)) = (anchor.label, &anchor.target) {
            let diff = anchor.delta.as_array();
            let tgt = target.as_array();
            for c in 0..4 {
                d_delta[c] = (diff[c] - tgt[c]).clamp(-1.0, 1.0) / num_pos as f64;
            }
        }
        out.push(AnchorGradient { d_logits, d_delta });
    }
    Ok(out)
}
