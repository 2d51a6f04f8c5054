//! Geometry, anchor design, matching, loss, and evaluation primitives for
//! single-shot face detection, plus WIDER-style annotation and result I/O.
//!
//! The crate is deliberately free of any image decoding or learned weights:
//! everything here is exact box arithmetic, deterministic sampling, and
//! benchmark scoring that can be verified against hand-computed oracles.

pub mod anchors;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod matching;
pub mod netgeom;

pub use error::{Error, Result};
pub use geometry::{decode_box, encode_box, iou, nms, BBox, BoxDelta, NmsParams, ScoredBox};
