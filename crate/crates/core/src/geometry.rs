//! Box arithmetic: IoU, the standard box-regression delta encoding, and
//! greedy non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in corner form with continuous coordinates.
///
/// The checked constructors guarantee `x2 > x1` and `y2 > y1`. Fields stay
/// public for plain-data ergonomics; functions that would misbehave on a
/// hand-built degenerate box either define a result (`iou` returns 0) or
/// report an error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(Error::invalid("box coordinates must be finite"));
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(Error::invalid(format!(
                "degenerate box ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Overlap region if it has positive area.
    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        (x2 > x1 && y2 > y1).then_some(BBox { x1, y1, x2, y2 })
    }

    /// Clip to `[0, width] x [0, height]`. Boxes are tiled and regressed
    /// unclipped everywhere in this crate; clipping is only ever an explicit
    /// final step. Returns None when nothing with positive area remains.
    pub fn clip(&self, width: f64, height: f64) -> Option<BBox> {
        let x1 = self.x1.max(0.0);
        let y1 = self.y1.max(0.0);
        let x2 = self.x2.min(width);
        let y2 = self.y2.min(height);
        (x2 > x1 && y2 > y1).then_some(BBox { x1, y1, x2, y2 })
    }
}

/// A box with a detection confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
}

impl ScoredBox {
    pub fn new(bbox: BBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::invalid(format!("score {score} outside [0, 1]")));
        }
        Ok(Self { bbox, score })
    }
}

/// Regression offsets between an anchor and a target box:
/// center shifts normalized by the anchor size, log size ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxDelta {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl BoxDelta {
    pub const ZERO: BoxDelta = BoxDelta {
        tx: 0.0,
        ty: 0.0,
        tw: 0.0,
        th: 0.0,
    };

    pub fn as_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BoxDelta {
            tx: a[0],
            ty: a[1],
            tw: a[2],
            th: a[3],
        }
    }
}

/// Intersection over union. Defined as 0 whenever the union has no positive
/// area, so degenerate inputs never divide by zero.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Encode `gt` relative to `anchor`.
pub fn encode_box(gt: &BBox, anchor: &BBox) -> Result<BoxDelta> {
    if anchor.width() <= 0.0 || anchor.height() <= 0.0 {
        return Err(Error::invalid("anchor must have positive dimensions"));
    }
    if gt.width() <= 0.0 || gt.height() <= 0.0 {
        return Err(Error::invalid("target must have positive dimensions"));
    }
    let (acx, acy) = anchor.center();
    let (gcx, gcy) = gt.center();
    Ok(BoxDelta {
        tx: (gcx - acx) / anchor.width(),
        ty: (gcy - acy) / anchor.height(),
        tw: (gt.width() / anchor.width()).ln(),
        th: (gt.height() / anchor.height()).ln(),
    })
}

/// Invert `encode_box`. Errors if the exponentials overflow or underflow to
/// a non-finite or degenerate box.
pub fn decode_box(delta: &BoxDelta, anchor: &BBox) -> Result<BBox> {
    if anchor.width() <= 0.0 || anchor.height() <= 0.0 {
        return Err(Error::invalid("anchor must have positive dimensions"));
    }
    let (acx, acy) = anchor.center();
    let cx = acx + delta.tx * anchor.width();
    let cy = acy + delta.ty * anchor.height();
    let w = anchor.width() * delta.tw.exp();
    let h = anchor.height() * delta.th.exp();
    if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) || w <= 0.0 || h <= 0.0
    {
        return Err(Error::Numeric(format!(
            "decoded box is not representable (cx={cx}, cy={cy}, w={w}, h={h})"
        )));
    }
    BBox::from_center(cx, cy, w, h)
}

/// Greedy NMS parameters. Defaults are the usual single-shot inference
/// pipeline constants: confidence floor 0.05, keep top 400 before
/// suppression at IoU 0.3, keep top 200 after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsParams {
    pub iou_thresh: f64,
    pub pre_top: usize,
    pub post_top: usize,
    pub conf_thresh: f64,
}

impl Default for NmsParams {
    fn default() -> Self {
        NmsParams {
            iou_thresh: 0.3,
            pre_top: 400,
            post_top: 200,
            conf_thresh: 0.05,
        }
    }
}

impl NmsParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_thresh > 0.0 && self.iou_thresh < 1.0) {
            return Err(Error::invalid(format!(
                "NMS IoU threshold {} outside (0, 1)",
                self.iou_thresh
            )));
        }
        if !(self.conf_thresh >= 0.0 && self.conf_thresh <= 1.0) {
            return Err(Error::invalid(format!(
                "confidence threshold {} outside [0, 1]",
                self.conf_thresh
            )));
        }
        Ok(())
    }
}

/// Greedy non-maximum suppression.
///
/// Boxes scoring below `conf_thresh` are dropped first (a NaN score never
/// survives this filter). The remaining boxes are ranked by descending
/// score, ties broken by lower input index, and truncated to `pre_top`.
/// The greedy pass repeatedly keeps the best remaining box and removes
/// every box whose IoU with it exceeds `iou_thresh`. At most `post_top`
/// boxes are returned, in descending score order.
pub fn nms(boxes: &[ScoredBox], params: &NmsParams) -> Vec<ScoredBox> {
    let mut order: Vec<usize> = (0..boxes.len())
        .filter(|&i| boxes[i].score >= params.conf_thresh)
        .collect();
    // Stable sort keeps the lower-index box first among equal scores.
    order.sort_by(|&a, &b| boxes[b].score.partial_cmp(&boxes[a].score).unwrap());
    order.truncate(params.pre_top);

    let mut kept: Vec<usize> = Vec::new();
    while let Some((&best, rest)) = order.split_first() {
        kept.push(best);
        order = rest
            .iter()
            .copied()
            .filter(|&i| iou(&boxes[best].bbox, &boxes[i].bbox) <= params.iou_thresh)
            .collect();
    }
    kept.truncate(params.post_top);
    kept.into_iter().map(|i| boxes[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn iou_half_overlap_is_one_third() {
        // 16x16 boxes sharing half their area: 128 / (256 + 256 - 128).
        assert_eq!(
            iou(&bx(0.0, 0.0, 16.0, 16.0), &bx(8.0, 0.0, 24.0, 16.0)),
            1.0 / 3.0
        );
    }

    #[test]
    fn iou_identical_is_one() {
        let b = bx(3.0, 4.0, 10.0, 12.0);
        assert_eq!(iou(&b, &b), 1.0);
    }

    #[test]
    fn iou_disjoint_and_touching_are_zero() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 30.0, 30.0)), 0.0);
        // Shared edge only: zero intersection area.
        assert_eq!(iou(&a, &bx(10.0, 0.0, 20.0, 10.0)), 0.0);
    }

    #[test]
    fn iou_contained_box_is_area_ratio() {
        let outer = bx(0.0, 0.0, 20.0, 20.0);
        let inner = bx(5.0, 5.0, 15.0, 15.0);
        assert_eq!(iou(&outer, &inner), 100.0 / 400.0);
    }

    #[test]
    fn iou_degenerate_is_zero() {
        let degen = BBox {
            x1: 5.0,
            y1: 5.0,
            x2: 5.0,
            y2: 9.0,
        };
        assert_eq!(iou(&degen, &bx(0.0, 0.0, 10.0, 10.0)), 0.0);
        assert_eq!(iou(&degen, &degen), 0.0);
    }

    #[test]
    fn bbox_constructors_reject_degenerate_and_non_finite() {
        assert!(BBox::new(0.0, 0.0, 0.0, 10.0).is_err());
        assert!(BBox::new(0.0, 0.0, -5.0, 10.0).is_err());
        assert!(BBox::new(0.0, f64::NAN, 5.0, 10.0).is_err());
        assert!(BBox::from_xywh(0.0, 0.0, 10.0, 0.0).is_err());
    }

    #[test]
    fn clip_is_explicit_and_can_empty_a_box() {
        let b = bx(-6.0, -6.0, 10.0, 10.0);
        assert_eq!(b.clip(640.0, 640.0), Some(bx(0.0, 0.0, 10.0, 10.0)));
        assert_eq!(bx(-10.0, -10.0, -1.0, -1.0).clip(640.0, 640.0), None);
    }

    #[test]
    fn encode_double_size_box() {
        let anchor = bx(0.0, 0.0, 16.0, 16.0);
        let gt = bx(0.0, 0.0, 32.0, 32.0);
        let d = encode_box(&gt, &anchor).unwrap();
        assert_eq!(d.tx, 0.5);
        assert_eq!(d.ty, 0.5);
        assert_eq!(d.tw, 2.0_f64.ln());
        assert_eq!(d.th, 2.0_f64.ln());
    }

    #[test]
    fn encode_rejects_degenerate_anchor() {
        let degen = BBox {
            x1: 0.0,
            y1: 0.0,
            x2: 0.0,
            y2: 16.0,
        };
        assert!(encode_box(&bx(0.0, 0.0, 8.0, 8.0), &degen).is_err());
        assert!(encode_box(&degen, &bx(0.0, 0.0, 8.0, 8.0)).is_err());
    }

    #[test]
    fn decode_overflow_is_a_numeric_error() {
        let anchor = bx(0.0, 0.0, 16.0, 16.0);
        let d = BoxDelta {
            tx: 0.0,
            ty: 0.0,
            tw: 1000.0,
            th: 0.0,
        };
        assert!(matches!(decode_box(&d, &anchor), Err(Error::Numeric(_))));
        let tiny = BoxDelta {
            tx: 0.0,
            ty: 0.0,
            tw: -800.0,
            th: 0.0,
        };
        assert!(decode_box(&tiny, &anchor).is_err());
    }

    #[test]
    fn scored_box_rejects_out_of_range_scores() {
        let b = bx(0.0, 0.0, 1.0, 1.0);
        assert!(ScoredBox::new(b, -0.1).is_err());
        assert!(ScoredBox::new(b, 1.1).is_err());
        assert!(ScoredBox::new(b, 0.0).is_ok());
        assert!(ScoredBox::new(b, 1.0).is_ok());
    }

    fn sb(b: BBox, score: f64) -> ScoredBox {
        ScoredBox::new(b, score).unwrap()
    }

    #[test]
    fn nms_suppresses_duplicate() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let out = nms(&[sb(b, 0.9), sb(b, 0.8)], &NmsParams::default());
        assert_eq!(out, vec![sb(b, 0.9)]);
    }

    #[test]
    fn nms_keeps_boxes_at_exactly_the_iou_threshold() {
        // IoU exactly 0.3 must survive: suppression is strictly greater-than.
        // Boxes 10x13 overlapping 10x6 -> 60 / (130 + 130 - 60) = 0.3.
        let a = bx(0.0, 0.0, 10.0, 13.0);
        let b = bx(0.0, 7.0, 10.0, 20.0);
        assert_eq!(iou(&a, &b), 0.3);
        let out = nms(&[sb(a, 0.9), sb(b, 0.8)], &NmsParams::default());
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn nms_confidence_floor_keeps_exact_threshold_and_drops_below() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let b = bx(100.0, 100.0, 110.0, 110.0);
        let out = nms(&[sb(a, 0.05), sb(b, 0.049)], &NmsParams::default());
        assert_eq!(out, vec![sb(a, 0.05)]);
    }

    #[test]
    fn nms_equal_scores_prefer_lower_index() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        let shifted = bx(1.0, 0.0, 11.0, 10.0);
        let out = nms(&[sb(b, 0.7), sb(shifted, 0.7)], &NmsParams::default());
        assert_eq!(out, vec![sb(b, 0.7)]);
    }

    #[test]
    fn nms_pre_top_truncates_before_suppression() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let b = bx(50.0, 50.0, 60.0, 60.0);
        let params = NmsParams {
            pre_top: 1,
            ..NmsParams::default()
        };
        let out = nms(&[sb(a, 0.6), sb(b, 0.9)], &params);
        assert_eq!(out, vec![sb(b, 0.9)]);
    }

    #[test]
    fn nms_post_top_caps_the_output() {
        let boxes: Vec<ScoredBox> = (0..5)
            .map(|i| {
                let off = i as f64 * 100.0;
                sb(bx(off, 0.0, off + 10.0, 10.0), 0.9 - i as f64 * 0.1)
            })
            .collect();
        let params = NmsParams {
            post_top: 2,
            ..NmsParams::default()
        };
        let out = nms(&boxes, &params);
        assert_eq!(out, vec![boxes[0], boxes[1]]);
    }

    prop_compose! {
        fn arb_bbox()(x in -500.0..500.0f64, y in -500.0..500.0f64,
                      w in 1.0..300.0f64, h in 1.0..300.0f64) -> BBox {
            BBox::from_xywh(x, y, w, h).unwrap()
        }
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_bbox(), b in arb_bbox()) {
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&b, &a));
        }

        #[test]
        fn iou_translation_invariant(a in arb_bbox(), b in arb_bbox(),
                                     dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
            let shift = |b: &BBox| BBox {
                x1: b.x1 + dx, y1: b.y1 + dy, x2: b.x2 + dx, y2: b.y2 + dy,
            };
            let before = iou(&a, &b);
            let after = iou(&shift(&a), &shift(&b));
            prop_assert!((before - after).abs() < 1e-12);
        }

        #[test]
        fn iou_scale_invariant(a in arb_bbox(), b in arb_bbox(), k in 0.1..10.0f64) {
            let scale = |b: &BBox| BBox {
                x1: b.x1 * k, y1: b.y1 * k, x2: b.x2 * k, y2: b.y2 * k,
            };
            let before = iou(&a, &b);
            let after = iou(&scale(&a), &scale(&b));
            prop_assert!((before - after).abs() < 1e-12);
        }

        #[test]
        fn encode_decode_roundtrip(gt in arb_bbox(), anchor in arb_bbox()) {
            let d = encode_box(&gt, &anchor).unwrap();
            let back = decode_box(&d, &anchor).unwrap();
            prop_assert!((back.x1 - gt.x1).abs() < 1e-9);
            prop_assert!((back.y1 - gt.y1).abs() < 1e-9);
            prop_assert!((back.x2 - gt.x2).abs() < 1e-9);
            prop_assert!((back.y2 - gt.y2).abs() < 1e-9);
        }

        #[test]
        fn nms_output_is_pairwise_below_threshold_and_sorted(
            raw in prop::collection::vec((arb_bbox(), 0.0..1.0f64), 0..40),
            thresh in 0.05..0.95f64,
        ) {
            let boxes: Vec<ScoredBox> =
                raw.into_iter().map(|(b, s)| sb(b, s)).collect();
            let params = NmsParams { iou_thresh: thresh, ..NmsParams::default() };
            let out = nms(&boxes, &params);
            for w in out.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
            for i in 0..out.len() {
                prop_assert!(boxes.contains(&out[i]));
                for j in i + 1..out.len() {
                    prop_assert!(iou(&out[i].bbox, &out[j].bbox) <= thresh);
                }
            }
        }

        #[test]
        fn nms_ignores_boxes_below_the_confidence_floor(
            raw in prop::collection::vec((arb_bbox(), 0.05..1.0f64), 1..20),
            extra in arb_bbox(),
        ) {
            let boxes: Vec<ScoredBox> =
                raw.into_iter().map(|(b, s)| sb(b, s)).collect();
            let mut with_extra = boxes.clone();
            with_extra.push(sb(extra, 0.01));
            let params = NmsParams::default();
            prop_assert_eq!(nms(&boxes, &params), nms(&with_extra, &params));
        }
    }
}
