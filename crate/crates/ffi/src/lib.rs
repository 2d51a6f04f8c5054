//! C ABI for facekit.
//!
//! Boxes cross the boundary as flat f64 quads (x1, y1, x2, y2), scored boxes
//! as quints with the score appended. Chain and grid handles are opaque
//! pointers owned by this library and must be released with the matching
//! free function. Every fallible call returns FK_STATUS_OK on success;
//! any other status leaves a message readable with fk_last_error on the
//! calling thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use facekit::anchors::{tile_anchors, AnchorConfig, AnchorGrid};
use facekit::dataio::{parse_wider_annotations, read_detections};
use facekit::eval::{evaluate, EvalConfig};
use facekit::loss::{mine_batch, multitask_loss, LossConfig, SampleBatch};
use facekit::matching::{match_baseline, match_scale_compensated, MatchConfig, NPolicy};
use facekit::netgeom::{summary_for, trace_geometry, LayerChain};
use facekit::{decode_box, encode_box, iou, nms, BBox, BoxDelta, Error, NmsParams, ScoredBox};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FkStatus {
    Ok = 0,
    NullPointer = 1,
    Utf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Numeric = 5,
    NoGroundTruth = 6,
    Json = 7,
    Io = 8,
    Panic = 9,
}

/// Network layer chain handle.
pub struct FkChain(LayerChain);

/// Tiled anchor grid handle.
pub struct FkGrid(AnchorGrid);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: FkStatus, message: impl std::fmt::Display) -> FkStatus {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).unwrap_or_default();
    });
    status
}

fn fail_error(err: &Error) -> FkStatus {
    let status = match err {
        Error::InvalidInput(_) => FkStatus::InvalidArgument,
        Error::Parse { .. } => FkStatus::Parse,
        Error::Numeric(_) => FkStatus::Numeric,
        Error::NoGroundTruth => FkStatus::NoGroundTruth,
        Error::Json(_) => FkStatus::Json,
        Error::Io(_) => FkStatus::Io,
    };
    fail(status, err)
}

fn guarded(body: impl FnOnce() -> FkStatus) -> FkStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(FkStatus::Panic, "internal panic"),
    }
}

macro_rules! require {
    ($ptr:expr) => {
        if $ptr.is_null() {
            return fail(FkStatus::NullPointer, concat!(stringify!($ptr), " is null"));
        }
    };
}

unsafe fn read_quad(ptr: *const f64) -> [f64; 4] {
    [*ptr, *ptr.add(1), *ptr.add(2), *ptr.add(3)]
}

unsafe fn read_bbox(ptr: *const f64) -> Result<BBox, Error> {
    let q = read_quad(ptr);
    BBox::new(q[0], q[1], q[2], q[3])
}

unsafe fn write_quad(ptr: *mut f64, q: [f64; 4]) {
    for (i, v) in q.into_iter().enumerate() {
        *ptr.add(i) = v;
    }
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, FkStatus> {
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|e| fail(FkStatus::Utf8, e))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message from the last failing call on this thread. Empty string when no
/// failure has occurred. The pointer stays valid until the next failing call
/// on the same thread.
#[no_mangle]
pub extern "C" fn fk_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Intersection over union of two boxes given as f64 quads.
///
/// # Safety
/// `a` and `b` must point to 4 readable f64 values, `out` to 1 writable.
#[no_mangle]
pub unsafe extern "C" fn fk_iou(a: *const f64, b: *const f64, out: *mut f64) -> FkStatus {
    guarded(|| {
        require!(a);
        require!(b);
        require!(out);
        let (ba, bb) = match (read_bbox(a), read_bbox(b)) {
            (Ok(ba), Ok(bb)) => (ba, bb),
            (Err(e), _) | (_, Err(e)) => return fail_error(&e),
        };
        *out = iou(&ba, &bb);
        FkStatus::Ok
    })
}

/// Regression target (tx, ty, tw, th) taking `anchor` onto `face`.
///
/// # Safety
/// `anchor` and `face` must point to 4 readable f64 values, `out_delta` to 4
/// writable ones.
#[no_mangle]
pub unsafe extern "C" fn fk_encode_box(
    anchor: *const f64,
    face: *const f64,
    out_delta: *mut f64,
) -> FkStatus {
    guarded(|| {
        require!(anchor);
        require!(face);
        require!(out_delta);
        let (a, f) = match (read_bbox(anchor), read_bbox(face)) {
            (Ok(a), Ok(f)) => (a, f),
            (Err(e), _) | (_, Err(e)) => return fail_error(&e),
        };
        match encode_box(&f, &a) {
            Ok(delta) => {
                write_quad(out_delta, delta.as_array());
                FkStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Box obtained by applying a regression `delta` to `anchor`.
///
/// # Safety
/// `anchor` and `delta` must point to 4 readable f64 values, `out_box` to 4
/// writable ones.
#[no_mangle]
pub unsafe extern "C" fn fk_decode_box(
    anchor: *const f64,
    delta: *const f64,
    out_box: *mut f64,
) -> FkStatus {
    guarded(|| {
        require!(anchor);
        require!(delta);
        require!(out_box);
        let a = match read_bbox(anchor) {
            Ok(a) => a,
            Err(e) => return fail_error(&e),
        };
        let d = BoxDelta::from_array(read_quad(delta));
        match decode_box(&d, &a) {
            Ok(b) => {
                write_quad(out_box, [b.x1, b.y1, b.x2, b.y2]);
                FkStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Greedy non-maximum suppression over `num_boxes` scored boxes laid out as
/// quints (x1, y1, x2, y2, score). Kept boxes are written to `out_boxes` in
/// the same layout, best score first; `out_len` receives their count.
/// `out_boxes` needs room for `num_boxes` quints.
///
/// # Safety
/// `boxes` must point to `5 * num_boxes` readable f64 values, `out_boxes` to
/// as many writable ones, `out_len` to a writable uintptr_t.
#[no_mangle]
pub unsafe extern "C" fn fk_nms(
    boxes: *const f64,
    num_boxes: usize,
    iou_thresh: f64,
    conf_thresh: f64,
    pre_top: usize,
    post_top: usize,
    out_boxes: *mut f64,
    out_len: *mut usize,
) -> FkStatus {
    guarded(|| {
        if num_boxes > 0 {
            require!(boxes);
        }
        require!(out_boxes);
        require!(out_len);
        let mut scored = Vec::with_capacity(num_boxes);
        for i in 0..num_boxes {
            let base = boxes.add(i * 5);
            let bbox = match read_bbox(base) {
                Ok(b) => b,
                Err(e) => return fail_error(&e),
            };
            match ScoredBox::new(bbox, *base.add(4)) {
                Ok(sb) => scored.push(sb),
                Err(e) => return fail_error(&e),
            }
        }
        let params = NmsParams {
            iou_thresh,
            conf_thresh,
            pre_top,
            post_top,
        };
        if let Err(e) = params.validate() {
            return fail_error(&e);
        }
        let kept = nms(&scored, &params);
        for (i, sb) in kept.iter().enumerate() {
            let base = out_boxes.add(i * 5);
            write_quad(base, [sb.bbox.x1, sb.bbox.y1, sb.bbox.x2, sb.bbox.y2]);
            *base.add(4) = sb.score;
        }
        *out_len = kept.len();
        FkStatus::Ok
    })
}

/// Builtin detection-network chain.
///
/// # Safety
/// `out` must point to a writable chain pointer.
#[no_mangle]
pub unsafe extern "C" fn fk_chain_builtin(out: *mut *mut FkChain) -> FkStatus {
    guarded(|| {
        require!(out);
        *out = Box::into_raw(Box::new(FkChain(LayerChain::builtin())));
        FkStatus::Ok
    })
}

/// Chain loaded from a JSON description.
///
/// # Safety
/// `json` must be a valid NUL-terminated string, `out` a writable chain
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn fk_chain_from_json(
    json: *const c_char,
    out: *mut *mut FkChain,
) -> FkStatus {
    guarded(|| {
        require!(json);
        require!(out);
        let text = match cstr(json) {
            Ok(t) => t,
            Err(status) => return status,
        };
        match LayerChain::from_json(text) {
            Ok(chain) => {
                *out = Box::into_raw(Box::new(FkChain(chain)));
                FkStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Stride and receptive field of one layer of the chain.
///
/// # Safety
/// `chain` must come from a chain constructor, `layer` must be a valid
/// NUL-terminated string, `out_stride` and `out_rf` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fk_chain_layer_geometry(
    chain: *const FkChain,
    layer: *const c_char,
    out_stride: *mut u64,
    out_rf: *mut u64,
) -> FkStatus {
    guarded(|| {
        require!(chain);
        require!(layer);
        require!(out_stride);
        require!(out_rf);
        let name = match cstr(layer) {
            Ok(t) => t,
            Err(status) => return status,
        };
        let trace = match trace_geometry(&(*chain).0) {
            Ok(t) => t,
            Err(e) => return fail_error(&e),
        };
        match summary_for(&trace, name) {
            Some(s) => {
                *out_stride = s.jump;
                *out_rf = s.trf_block;
                FkStatus::Ok
            }
            None => fail(
                FkStatus::InvalidArgument,
                format!("layer {name} not in chain"),
            ),
        }
    })
}

/// Releases a chain handle. Null is ignored.
///
/// # Safety
/// `chain` must come from a chain constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fk_chain_free(chain: *mut FkChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Anchor grid for an image, tiled with the builtin layer set.
///
/// # Safety
/// `out` must point to a writable grid pointer.
#[no_mangle]
pub unsafe extern "C" fn fk_grid_builtin(
    width: u32,
    height: u32,
    out: *mut *mut FkGrid,
) -> FkStatus {
    guarded(|| {
        require!(out);
        match tile_anchors(width, height, &AnchorConfig::builtin()) {
            Ok(grid) => {
                *out = Box::into_raw(Box::new(FkGrid(grid)));
                FkStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Anchor grid tiled with a JSON layer configuration.
///
/// # Safety
/// `config_json` must be a valid NUL-terminated string, `out` a writable grid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn fk_grid_from_json(
    width: u32,
    height: u32,
    config_json: *const c_char,
    out: *mut *mut FkGrid,
) -> FkStatus {
    guarded(|| {
        require!(config_json);
        require!(out);
        let text = match cstr(config_json) {
            Ok(t) => t,
            Err(status) => return status,
        };
        let config = match AnchorConfig::from_json(text) {
            Ok(c) => c,
            Err(e) => return fail_error(&e),
        };
        match tile_anchors(width, height, &config) {
            Ok(grid) => {
                *out = Box::into_raw(Box::new(FkGrid(grid)));
                FkStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Number of anchors in the grid. Zero for a null grid.
///
/// # Safety
/// `grid` must come from a grid constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn fk_grid_len(grid: *const FkGrid) -> usize {
    if grid.is_null() {
        0
    } else {
        (*grid).0.len()
    }
}

/// Copies anchor `index` into `out_box` as a quad.
///
/// # Safety
/// `grid` must come from a grid constructor, `out_box` must point to 4
/// writable f64 values.
#[no_mangle]
pub unsafe extern "C" fn fk_grid_anchor(
    grid: *const FkGrid,
    index: usize,
    out_box: *mut f64,
) -> FkStatus {
    guarded(|| {
        require!(grid);
        require!(out_box);
        match (*grid).0.anchor(index) {
            Some(b) => {
                write_quad(out_box, [b.x1, b.y1, b.x2, b.y2]);
                FkStatus::Ok
            }
            None => fail(
                FkStatus::InvalidArgument,
                format!("anchor index {index} out of range"),
            ),
        }
    })
}

/// Releases a grid handle. Null is ignored.
///
/// # Safety
/// `grid` must come from a grid constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fk_grid_free(grid: *mut FkGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

unsafe fn read_faces(faces: *const f64, num_faces: usize) -> Result<Vec<BBox>, Error> {
    let mut out = Vec::with_capacity(num_faces);
    for i in 0..num_faces {
        out.push(read_bbox(faces.add(i * 4))?);
    }
    Ok(out)
}

unsafe fn write_assignment(result: &[Option<usize>], out: *mut i64) {
    for (i, slot) in result.iter().enumerate() {
        *out.add(i) = match slot {
            Some(face) => *face as i64,
            None => -1,
        };
    }
}

/// Baseline anchor assignment. `out_assignment` receives one i64 per anchor:
/// the matched face index, or -1 for background. Needs room for
/// fk_grid_len(grid) values.
///
/// # Safety
/// `faces` must point to `4 * num_faces` readable f64 values (may be null
/// when `num_faces` is 0), `out_assignment` to `fk_grid_len(grid)` writable
/// i64 values.
#[no_mangle]
pub unsafe extern "C" fn fk_match_baseline(
    grid: *const FkGrid,
    faces: *const f64,
    num_faces: usize,
    threshold: f64,
    out_assignment: *mut i64,
) -> FkStatus {
    guarded(|| {
        require!(grid);
        if num_faces > 0 {
            require!(faces);
        }
        require!(out_assignment);
        let face_boxes = match read_faces(faces, num_faces) {
            Ok(f) => f,
            Err(e) => return fail_error(&e),
        };
        match match_baseline(&face_boxes, &(*grid).0, threshold) {
            Ok(result) => {
                write_assignment(&result.anchor_assignment, out_assignment);
                FkStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Two-stage scale-compensated assignment. `fixed_n` pins the per-face
/// target count; pass -1 to derive it from the stage-one per-image average.
/// `out_n_used` (optional, may be null) receives the target used.
///
/// # Safety
/// Same layout requirements as fk_match_baseline; `out_n_used` must be
/// writable when non-null.
#[no_mangle]
pub unsafe extern "C" fn fk_match_scale_compensated(
    grid: *const FkGrid,
    faces: *const f64,
    num_faces: usize,
    stage1_threshold: f64,
    stage2_floor: f64,
    fixed_n: i64,
    out_assignment: *mut i64,
    out_n_used: *mut usize,
) -> FkStatus {
    guarded(|| {
        require!(grid);
        if num_faces > 0 {
            require!(faces);
        }
        require!(out_assignment);
        let face_boxes = match read_faces(faces, num_faces) {
            Ok(f) => f,
            Err(e) => return fail_error(&e),
        };
        let n_policy = if fixed_n < 0 {
            NPolicy::PerImageAverage
        } else {
            NPolicy::Fixed(fixed_n as usize)
        };
        let config = MatchConfig {
            stage1_threshold,
            stage2_floor,
            n_policy,
            ..MatchConfig::default()
        };
        match match_scale_compensated(&face_boxes, &(*grid).0, &config) {
            Ok(result) => {
                write_assignment(&result.anchor_assignment, out_assignment);
                if !out_n_used.is_null() {
                    *out_n_used = result.n_used.unwrap_or(0);
                }
                FkStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Multi-task detection loss over a JSON batch. When `mine` is true the
/// batch first goes through hard negative mining at `neg_pos_ratio`.
/// `out_components` receives (total, classification, regression).
///
/// # Safety
/// `batch_json` must be a valid NUL-terminated string, `out_components` must
/// point to 3 writable f64 values.
#[no_mangle]
pub unsafe extern "C" fn fk_multitask_loss(
    batch_json: *const c_char,
    lambda: f64,
    n_m: usize,
    neg_pos_ratio: f64,
    mine: bool,
    out_components: *mut f64,
) -> FkStatus {
    guarded(|| {
        require!(batch_json);
        require!(out_components);
        let text = match cstr(batch_json) {
            Ok(t) => t,
            Err(status) => return status,
        };
        let config = LossConfig {
            lambda,
            n_m,
            neg_pos_ratio,
        };
        let result = SampleBatch::from_json(text).and_then(|batch| {
            let batch = if mine {
                mine_batch(&batch, &config)?
            } else {
                batch
            };
            multitask_loss(&batch, &config)
        });
        match result {
            Ok(breakdown) => {
                *out_components = breakdown.total;
                *out_components.add(1) = breakdown.cls;
                *out_components.add(2) = breakdown.reg;
                FkStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}

/// Average precision of a detection run against ground-truth annotations,
/// both passed as complete file contents.
///
/// # Safety
/// `annotations` and `detections` must be valid NUL-terminated strings; the
/// out pointers must be writable (any of them may be null to skip).
#[no_mangle]
pub unsafe extern "C" fn fk_evaluate_ap(
    annotations: *const c_char,
    detections: *const c_char,
    iou_threshold: f64,
    out_ap: *mut f64,
    out_tp: *mut usize,
    out_fp: *mut usize,
    out_num_gt: *mut usize,
) -> FkStatus {
    guarded(|| {
        require!(annotations);
        require!(detections);
        let ann_text = match cstr(annotations) {
            Ok(t) => t,
            Err(status) => return status,
        };
        let det_text = match cstr(detections) {
            Ok(t) => t,
            Err(status) => return status,
        };
        let config = EvalConfig {
            iou_threshold,
            ..EvalConfig::default()
        };
        let result = parse_wider_annotations(ann_text).and_then(|ann| {
            let dets = read_detections(det_text)?;
            evaluate(&ann, &dets, &config)
        });
        match result {
            Ok(evaluation) => {
                if !out_ap.is_null() {
                    *out_ap = evaluation.result.ap;
                }
                if !out_tp.is_null() {
                    *out_tp = evaluation.result.tp;
                }
                if !out_fp.is_null() {
                    *out_fp = evaluation.result.fp;
                }
                if !out_num_gt.is_null() {
                    *out_num_gt = evaluation.result.num_gt;
                }
                FkStatus::Ok
            }
            Err(e) => fail_error(&e),
        }
    })
}
