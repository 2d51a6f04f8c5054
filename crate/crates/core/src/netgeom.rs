//! Receptive-field arithmetic over a chain of conv/pool layers.
//!
//! For every layer we track two quantities derived from standard CNN
//! geometry: the cumulative stride ("jump", the input-pixel distance between
//! adjacent output units) and the theoretical receptive field of one unit.
//! The recurrence, walking the chain from the input with `jump = 1`,
//! `trf = 1`:
//!
//! ```text
//! k_eff = dilation * (kernel - 1) + 1
//! trf'  = trf + (k_eff - 1) * jump     (uses the incoming jump)
//! jump' = jump * stride
//! ```
//!
//! Padding shifts alignment but not extent, so it is tracked and ignored
//! here. A detection head reading a layer through a 3x3 conv sees a wider
//! window; `trf_block` accounts for that.

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorConfig;
use crate::error::{Error, Result};

/// Kernel size of the detection head assumed when widening a single-unit
/// receptive field to `trf_block`.
pub const HEAD_KERNEL: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Pool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub kernel: u32,
    pub stride: u32,
    #[serde(default)]
    pub padding: u32,
    #[serde(default = "default_dilation")]
    pub dilation: u32,
}

fn default_dilation() -> u32 {
    1
}

impl LayerSpec {
    pub fn conv(name: &str, kernel: u32, stride: u32, padding: u32) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Conv,
            kernel,
            stride,
            padding,
            dilation: 1,
        }
    }

    pub fn pool(name: &str, kernel: u32, stride: u32) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Pool,
            kernel,
            stride,
            padding: 0,
            dilation: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 {
            return Err(Error::invalid(format!(
                "layer {}: kernel must be >= 1",
                self.name
            )));
        }
        if self.stride == 0 {
            return Err(Error::invalid(format!(
                "layer {}: stride must be >= 1",
                self.name
            )));
        }
        if self.dilation == 0 {
            return Err(Error::invalid(format!(
                "layer {}: dilation must be >= 1",
                self.name
            )));
        }
        Ok(())
    }
}

/// An ordered conv/pool stack plus the names of the layers that host
/// detection heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerChain {
    pub layers: Vec<LayerSpec>,
    pub detection_layers: Vec<String>,
}

impl LayerChain {
    pub fn from_json(text: &str) -> Result<Self> {
        let chain: LayerChain = serde_json::from_str(text)?;
        chain.validate()?;
        Ok(chain)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("layer chain is empty"));
        }
        let mut seen = std::collections::HashSet::new();
        for layer in &self.layers {
            layer.validate()?;
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate layer name {}",
                    layer.name
                )));
            }
        }
        for det in &self.detection_layers {
            if !seen.contains(det.as_str()) {
                return Err(Error::invalid(format!(
                    "detection layer {det} is not in the chain"
                )));
            }
        }
        Ok(())
    }

    /// The VGG16-derived face-detection chain: conv1_1 through pool5
    /// (3x3/1/1 convs, 2x2/2 pools), the convolutionalized fc6/fc7, and two
    /// extra stride-2 blocks. Six layers host detection heads, with
    /// cumulative strides 4, 8, 16, 32, 64, 128.
    pub fn builtin() -> Self {
        let mut layers = Vec::new();
        let blocks: [(u32, usize); 5] = [(1, 2), (2, 2), (3, 3), (4, 3), (5, 3)];
        for (block, convs) in blocks {
            for i in 1..=convs {
                layers.push(LayerSpec::conv(&format!("conv{block}_{i}"), 3, 1, 1));
            }
            layers.push(LayerSpec::pool(&format!("pool{block}"), 2, 2));
        }
        layers.push(LayerSpec::conv("conv_fc6", 3, 1, 1));
        layers.push(LayerSpec::conv("conv_fc7", 1, 1, 0));
        layers.push(LayerSpec::conv("conv6_1", 1, 1, 0));
        layers.push(LayerSpec::conv("conv6_2", 3, 2, 1));
        layers.push(LayerSpec::conv("conv7_1", 1, 1, 0));
        layers.push(LayerSpec::conv("conv7_2", 3, 2, 1));

        LayerChain {
            layers,
            detection_layers: [
                "conv3_3", "conv4_3", "conv5_3", "conv_fc7", "conv6_2", "conv7_2",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        }
    }
}

/// Geometry of one layer relative to the network input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeomSummary {
    pub layer: String,
    /// Cumulative stride: product of the strides of this and all earlier layers.
    pub jump: u64,
    /// Theoretical receptive field of a single unit.
    pub trf_single: u64,
    /// Theoretical receptive field of a `HEAD_KERNEL` x `HEAD_KERNEL` block
    /// of units: `trf_single + (HEAD_KERNEL - 1) * jump`.
    pub trf_block: u64,
}

/// Walk the chain and summarize every layer, in chain order.
pub fn trace_geometry(chain: &LayerChain) -> Result<Vec<GeomSummary>> {
    chain.validate()?;
    let mut jump: u64 = 1;
    let mut trf: u64 = 1;
    let mut out = Vec::with_capacity(chain.layers.len());
    for layer in &chain.layers {
        let k_eff = u64::from(layer.dilation) * (u64::from(layer.kernel) - 1) + 1;
        trf = trf
            .checked_add((k_eff - 1).checked_mul(jump).ok_or_else(overflow)?)
            .ok_or_else(overflow)?;
        jump = jump
            .checked_mul(u64::from(layer.stride))
            .ok_or_else(overflow)?;
        out.push(GeomSummary {
            layer: layer.name.clone(),
            jump,
            trf_single: trf,
            trf_block: trf + (HEAD_KERNEL - 1) * jump,
        });
    }
    Ok(out)
}

fn overflow() -> Error {
    Error::Numeric("receptive-field arithmetic overflowed u64".into())
}

/// Find one layer's summary by name.
pub fn summary_for<'a>(trace: &'a [GeomSummary], name: &str) -> Option<&'a GeomSummary> {
    trace.iter().find(|s| s.layer == name)
}

/// One detection layer's design checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignRow {
    pub layer: String,
    /// Cumulative stride computed from the chain.
    pub jump: u64,
    /// Stride declared in the anchor configuration.
    pub configured_stride: u32,
    pub anchor_scale: u32,
    pub trf_block: u64,
    /// Computed jump equals the configured stride.
    pub stride_ok: bool,
    /// Anchor is strictly smaller than the receptive field of the head.
    pub rf_ok: bool,
    /// Anchor scale is exactly four times the stride.
    pub proportion_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignReport {
    pub rows: Vec<DesignRow>,
}

impl DesignReport {
    pub fn all_pass(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.stride_ok && r.rf_ok && r.proportion_ok)
    }

    /// (passed, total) over the three checks of every row.
    pub fn check_counts(&self) -> (usize, usize) {
        let passed = self
            .rows
            .iter()
            .map(|r| usize::from(r.stride_ok) + usize::from(r.rf_ok) + usize::from(r.proportion_ok))
            .sum();
        (passed, self.rows.len() * 3)
    }
}

/// Check the anchor design against the chain geometry, one row per
/// detection layer: the computed cumulative stride must equal the
/// configured stride, the anchor scale must sit strictly inside the
/// receptive field of the 3x3 head, and scale must be 4x stride.
///
/// The anchor configuration must cover exactly the chain's detection
/// layers, in order.
pub fn verify_design(chain: &LayerChain, anchors: &AnchorConfig) -> Result<DesignReport> {
    let trace = trace_geometry(chain)?;
    let configured: Vec<&str> = anchors.layers.iter().map(|l| l.layer.as_str()).collect();
    let declared: Vec<&str> = chain.detection_layers.iter().map(String::as_str).collect();
    if configured != declared {
        return Err(Error::invalid(format!(
            "anchor layers {configured:?} do not match detection layers {declared:?}"
        )));
    }
    let proportion = crate::anchors::check_equal_proportion(anchors);
    let rows = anchors
        .layers
        .iter()
        .zip(proportion)
        .map(|(cfg, (_, proportion_ok))| {
            let summary = summary_for(&trace, &cfg.layer).expect("validated above");
            DesignRow {
                layer: cfg.layer.clone(),
                jump: summary.jump,
                configured_stride: cfg.stride,
                anchor_scale: cfg.scale,
                trf_block: summary.trf_block,
                stride_ok: summary.jump == u64::from(cfg.stride),
                rf_ok: u64::from(cfg.scale) < summary.trf_block,
                proportion_ok,
            }
        })
        .collect();
    Ok(DesignReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_conv_base_case() {
        let chain = LayerChain {
            layers: vec![LayerSpec::conv("c", 3, 1, 1)],
            detection_layers: vec![],
        };
        let trace = trace_geometry(&chain).unwrap();
        assert_eq!(trace[0].jump, 1);
        assert_eq!(trace[0].trf_single, 3);
        assert_eq!(trace[0].trf_block, 5);
    }

    #[test]
    fn dilation_widens_the_effective_kernel() {
        let mut spec = LayerSpec::conv("c", 3, 1, 2);
        spec.dilation = 2;
        let chain = LayerChain {
            layers: vec![spec],
            detection_layers: vec![],
        };
        let trace = trace_geometry(&chain).unwrap();
        assert_eq!(trace[0].trf_single, 5);
    }

    #[test]
    fn builtin_detection_geometry() {
        let chain = LayerChain::builtin();
        let trace = trace_geometry(&chain).unwrap();
        let expected = [
            ("conv3_3", 4, 40, 48),
            ("conv4_3", 8, 92, 108),
            ("conv5_3", 16, 196, 228),
            ("conv_fc7", 32, 276, 340),
            ("conv6_2", 64, 340, 468),
            ("conv7_2", 128, 468, 724),
        ];
        assert_eq!(chain.detection_layers.len(), 6);
        for (name, jump, trf_single, trf_block) in expected {
            let s = summary_for(&trace, name).unwrap();
            assert_eq!(s.jump, jump, "{name} jump");
            assert_eq!(s.trf_single, trf_single, "{name} trf_single");
            assert_eq!(s.trf_block, trf_block, "{name} trf_block");
        }
    }

    #[test]
    fn builtin_design_report_all_pass() {
        let report = verify_design(&LayerChain::builtin(), &AnchorConfig::builtin()).unwrap();
        assert!(report.all_pass());
        assert_eq!(report.check_counts(), (18, 18));
    }

    #[test]
    fn scale_equal_to_rf_fails_the_rf_row() {
        // conv3_3 has trf_block 48; a 48-pixel anchor is not strictly smaller.
        let mut anchors = AnchorConfig::builtin();
        anchors.layers[0].scale = 48;
        let report = verify_design(&LayerChain::builtin(), &anchors).unwrap();
        assert!(!report.rows[0].rf_ok);
        assert!(report.rows[0].stride_ok);
        assert!(!report.rows[0].proportion_ok); // 48 != 4 * 4
        assert!(report.rows[1..].iter().all(|r| r.rf_ok));
    }

    #[test]
    fn scale_64_on_conv3_3_fails_proportion() {
        let mut anchors = AnchorConfig::builtin();
        anchors.layers[0].scale = 64;
        let report = verify_design(&LayerChain::builtin(), &anchors).unwrap();
        assert!(!report.rows[0].proportion_ok);
    }

    #[test]
    fn mismatched_detection_layers_are_rejected() {
        let mut anchors = AnchorConfig::builtin();
        anchors.layers[0].layer = "conv9_9".into();
        assert!(verify_design(&LayerChain::builtin(), &anchors).is_err());
    }

    #[test]
    fn chain_validation_rejects_bad_layers() {
        let chain = LayerChain {
            layers: vec![LayerSpec::conv("a", 0, 1, 0)],
            detection_layers: vec![],
        };
        assert!(trace_geometry(&chain).is_err());

        let chain = LayerChain {
            layers: vec![LayerSpec::conv("a", 3, 1, 0), LayerSpec::conv("a", 3, 1, 0)],
            detection_layers: vec![],
        };
        assert!(trace_geometry(&chain).is_err());

        let chain = LayerChain {
            layers: vec![LayerSpec::conv("a", 3, 1, 0)],
            detection_layers: vec!["missing".into()],
        };
        assert!(trace_geometry(&chain).is_err());
    }

    #[test]
    fn json_roundtrip_and_unknown_kind() {
        let chain = LayerChain::builtin();
        let text = serde_json::to_string(&chain).unwrap();
        assert_eq!(LayerChain::from_json(&text).unwrap(), chain);

        let bad = r#"{"layers":[{"name":"a","kind":"dense","kernel":3,"stride":1}],"detection_layers":[]}"#;
        assert!(LayerChain::from_json(bad).is_err());

        // padding and dilation may be omitted in JSON.
        let minimal = r#"{"layers":[{"name":"a","kind":"conv","kernel":3,"stride":1}],"detection_layers":[]}"#;
        let parsed = LayerChain::from_json(minimal).unwrap();
        assert_eq!(parsed.layers[0].padding, 0);
        assert_eq!(parsed.layers[0].dilation, 1);
    }

    prop_compose! {
        fn arb_layer(idx: usize)(kind in 0..2usize, kernel in 1..5u32, stride in 1..4u32) -> LayerSpec {
            let name = format!("l{idx}");
            match kind {
                0 => LayerSpec::conv(&name, kernel, stride, 0),
                _ => LayerSpec::pool(&name, kernel, stride),
            }
        }
    }

    fn arb_chain(max_len: usize) -> impl Strategy<Value = LayerChain> {
        prop::collection::vec((0..2usize, 1..5u32, 1..4u32), 1..max_len).prop_map(|specs| {
            let layers = specs
                .into_iter()
                .enumerate()
                .map(|(i, (kind, kernel, stride))| {
                    let name = format!("l{i}");
                    if kind == 0 {
                        LayerSpec::conv(&name, kernel, stride, 0)
                    } else {
                        LayerSpec::pool(&name, kernel, stride)
                    }
                })
                .collect();
            LayerChain {
                layers,
                detection_layers: vec![],
            }
        })
    }

    proptest! {
        #[test]
        fn jump_is_the_product_of_strides(chain in arb_chain(12)) {
            let trace = trace_geometry(&chain).unwrap();
            let mut product: u64 = 1;
            for (layer, summary) in chain.layers.iter().zip(&trace) {
                product *= u64::from(layer.stride);
                prop_assert_eq!(summary.jump, product);
            }
        }

        #[test]
        fn trf_increases_where_kernels_exceed_one(chain in arb_chain(12)) {
            let trace = trace_geometry(&chain).unwrap();
            let mut prev = 1;
            for (layer, summary) in chain.layers.iter().zip(&trace) {
                if layer.kernel > 1 {
                    prop_assert!(summary.trf_single > prev);
                } else {
                    prop_assert_eq!(summary.trf_single, prev);
                }
                prev = summary.trf_single;
            }
        }

        #[test]
        fn pointwise_layer_changes_nothing_downstream(
            chain in arb_chain(10),
            at in 0..10usize,
        ) {
            let mut padded = chain.clone();
            let at = at.min(padded.layers.len());
            padded.layers.insert(at, LayerSpec::conv("inserted", 1, 1, 0));
            let base = trace_geometry(&chain).unwrap();
            let traced = trace_geometry(&padded).unwrap();
            // Summaries after the insertion point are unchanged apart from position.
            for (i, summary) in base.iter().enumerate().skip(at) {
                prop_assert_eq!(summary, &traced[i + 1]);
            }
        }
    }
}
