//! Square anchor tiling under the equal-proportion interval principle
//! (anchor side = 4x the hosting layer's stride, so every scale tiles the
//! image with the same density).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorLayerConfig {
    pub layer: String,
    pub stride: u32,
    /// Anchor side length in pixels (anchors are square, 1:1 aspect).
    pub scale: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnchorConfig {
    pub layers: Vec<AnchorLayerConfig>,
}

impl AnchorConfig {
    pub fn new(layers: Vec<AnchorLayerConfig>) -> Result<Self> {
        let config = AnchorConfig { layers };
        config.validate()?;
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: AnchorConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("anchor config has no layers"));
        }
        for layer in &self.layers {
            if layer.stride == 0 || layer.scale == 0 {
                return Err(Error::invalid(format!(
                    "layer {}: stride and scale must be >= 1",
                    layer.layer
                )));
            }
        }
        for pair in self.layers.windows(2) {
            if pair[1].stride <= pair[0].stride {
                return Err(Error::invalid(format!(
                    "strides must be strictly increasing ({} then {})",
                    pair[0].stride, pair[1].stride
                )));
            }
        }
        Ok(())
    }

    /// Anchor design matching the builtin detection chain: strides
    /// 4..128 doubling per layer, scale = 4x stride (16..512).
    pub fn builtin() -> Self {
        let layers = [
            ("conv3_3", 4u32),
            ("conv4_3", 8),
            ("conv5_3", 16),
            ("conv_fc7", 32),
            ("conv6_2", 64),
            ("conv7_2", 128),
        ]
        .into_iter()
        .map(|(layer, stride)| AnchorLayerConfig {
            layer: layer.to_string(),
            stride,
            scale: stride * 4,
        })
        .collect();
        AnchorConfig { layers }
    }

    pub fn smallest_stride(&self) -> u32 {
        self.layers.iter().map(|l| l.stride).min().unwrap_or(0)
    }
}

/// All anchors of one detection layer, row-major over the cell grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrid {
    pub layer: String,
    pub stride: u32,
    pub scale: u32,
    pub cols: usize,
    pub rows: usize,
    /// Flat index of this layer's first anchor in the whole grid.
    pub offset: usize,
    /// One box per cell, index `j * cols + i` for cell `(i, j)`.
    pub boxes: Vec<BBox>,
}

/// Anchors of every configured layer over one image, in layer order.
/// Anchors are unclipped and indexed globally: layer order first, then
/// row-major cells within the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    layers: Vec<LayerGrid>,
    width: u32,
    height: u32,
    total: usize,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn layer_grids(&self) -> &[LayerGrid] {
        &self.layers
    }

    pub fn anchor(&self, index: usize) -> Option<&BBox> {
        let layer = self
            .layers
            .iter()
            .find(|l| index >= l.offset && index < l.offset + l.boxes.len())?;
        Some(&layer.boxes[index - layer.offset])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &BBox)> {
        self.layers
            .iter()
            .flat_map(|l| l.boxes.iter().enumerate().map(|(i, b)| (l.offset + i, b)))
    }

    /// Anchors with positive overlap against `target`, as (flat index, IoU)
    /// in ascending index order.
    ///
    /// Exploits the regular grid: for each layer only the cell window whose
    /// anchors can touch the target is scanned, so the cost is proportional
    /// to the overlap region, not the grid size. The window is widened by a
    /// cell on each side and every candidate is IoU-checked, so the result
    /// is exactly the set a full scan would produce.
    pub fn overlapping(&self, target: &BBox) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            let stride = f64::from(layer.stride);
            let half = f64::from(layer.scale) / 2.0;
            let lo = |coord: f64| (((coord - half) / stride - 0.5).floor() as i64 - 1).max(0);
            let hi = |coord: f64, cells: usize| {
                ((((coord + half) / stride - 0.5).ceil() as i64) + 1).min(cells as i64 - 1)
            };
            let (i_lo, i_hi) = (lo(target.x1), hi(target.x2, layer.cols));
            let (j_lo, j_hi) = (lo(target.y1), hi(target.y2, layer.rows));
            for j in j_lo..=j_hi {
                for i in i_lo..=i_hi {
                    let cell = j as usize * layer.cols + i as usize;
                    let v = crate::geometry::iou(&layer.boxes[cell], target);
                    if v > 0.0 {
                        out.push((layer.offset + cell, v));
                    }
                }
            }
        }
        out
    }
}

/// Tile anchors for every configured layer over a `width` x `height` image.
/// Each layer gets `ceil(width / stride) * ceil(height / stride)` anchors of
/// side `scale`, centered at `((i + 0.5) * stride, (j + 0.5) * stride)`.
pub fn tile_anchors(width: u32, height: u32, config: &AnchorConfig) -> Result<AnchorGrid> {
    config.validate()?;
    let smallest = config.smallest_stride();
    if width < smallest || height < smallest {
        return Err(Error::invalid(format!(
            "image {width}x{height} is smaller than the smallest stride {smallest}"
        )));
    }
    let mut layers = Vec::with_capacity(config.layers.len());
    let mut offset = 0usize;
    for cfg in &config.layers {
        let cols = width.div_ceil(cfg.stride) as usize;
        let rows = height.div_ceil(cfg.stride) as usize;
        let stride = f64::from(cfg.stride);
        let half = f64::from(cfg.scale) / 2.0;
        let mut boxes = Vec::with_capacity(cols * rows);
        for j in 0..rows {
            let cy = (j as f64 + 0.5) * stride;
            for i in 0..cols {
                let cx = (i as f64 + 0.5) * stride;
                boxes.push(BBox {
                    x1: cx - half,
                    y1: cy - half,
                    x2: cx + half,
                    y2: cy + half,
                });
            }
        }
        layers.push(LayerGrid {
            layer: cfg.layer.clone(),
            stride: cfg.stride,
            scale: cfg.scale,
            cols,
            rows,
            offset,
            boxes,
        });
        offset += cols * rows;
    }
    Ok(AnchorGrid {
        layers,
        width,
        height,
        total: offset,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensusRow {
    pub layer: String,
    pub scale: u32,
    pub count: usize,
    /// Share of all anchors, as a percentage rounded to 2 decimals.
    pub percentage: f64,
}

/// Per-layer anchor counts and their share of the total.
pub fn anchor_census(width: u32, height: u32, config: &AnchorConfig) -> Result<Vec<CensusRow>> {
    let grid = tile_anchors(width, height, config)?;
    let total = grid.len() as f64;
    Ok(grid
        .layer_grids()
        .iter()
        .map(|l| CensusRow {
            layer: l.layer.clone(),
            scale: l.scale,
            count: l.boxes.len(),
            percentage: (l.boxes.len() as f64 / total * 10000.0).round() / 100.0,
        })
        .collect())
}

/// Per-layer check of the equal-proportion principle: scale = 4 * stride.
pub fn check_equal_proportion(config: &AnchorConfig) -> Vec<(String, bool)> {
    config
        .layers
        .iter()
        .map(|l| (l.layer.clone(), l.scale == 4 * l.stride))
        .collect()
}
