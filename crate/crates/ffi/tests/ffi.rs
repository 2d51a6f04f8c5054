//! Drives the C ABI the way a C caller would: flat arrays, out params,
//! status codes, and the thread-local error message.

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use facekit_ffi::*;

fn last_error() -> String {
    unsafe {
        CStr::from_ptr(fk_last_error())
            .to_string_lossy()
            .into_owned()
    }
}

fn c(text: &str) -> CString {
    CString::new(text).unwrap()
}

#[test]
fn version_is_a_semver_string() {
    let v = unsafe { CStr::from_ptr(fk_version()) }.to_str().unwrap();
    assert_eq!(v.split('.').count(), 3);
}

#[test]
fn iou_matches_hand_value() {
    let a = [0.0, 0.0, 2.0, 2.0];
    let b = [1.0, 1.0, 3.0, 3.0];
    let mut out = 0.0;
    let status = unsafe { fk_iou(a.as_ptr(), b.as_ptr(), &mut out) };
    assert_eq!(status, FkStatus::Ok);
    assert_eq!(out, 1.0 / 7.0);
}

#[test]
fn null_pointers_are_rejected_with_a_message() {
    let a = [0.0, 0.0, 2.0, 2.0];
    let mut out = 0.0;
    let status = unsafe { fk_iou(ptr::null(), a.as_ptr(), &mut out) };
    assert_eq!(status, FkStatus::NullPointer);
    assert!(last_error().contains("null"));
}

#[test]
fn degenerate_boxes_are_invalid_arguments() {
    let a = [2.0, 0.0, 2.0, 2.0];
    let b = [1.0, 1.0, 3.0, 3.0];
    let mut out = 0.0;
    let status = unsafe { fk_iou(a.as_ptr(), b.as_ptr(), &mut out) };
    assert_eq!(status, FkStatus::InvalidArgument);
    assert!(last_error().contains("degenerate"));
}

#[test]
fn encode_then_decode_recovers_the_face() {
    let anchor = [10.0, 10.0, 26.0, 26.0];
    let face = [12.0, 9.0, 30.0, 27.0];
    let mut delta = [0.0; 4];
    let status = unsafe { fk_encode_box(anchor.as_ptr(), face.as_ptr(), delta.as_mut_ptr()) };
    assert_eq!(status, FkStatus::Ok);
    let mut recovered = [0.0; 4];
    let status = unsafe { fk_decode_box(anchor.as_ptr(), delta.as_ptr(), recovered.as_mut_ptr()) };
    assert_eq!(status, FkStatus::Ok);
    for (r, f) in recovered.iter().zip(&face) {
        assert!((r - f).abs() < 1e-9);
    }
}

#[test]
fn nms_keeps_the_winner_and_the_disjoint_box() {
    // Two heavily overlapping boxes plus a distant one.
    let boxes = [
        0.0, 0.0, 10.0, 10.0, 0.9, //
        1.0, 1.0, 11.0, 11.0, 0.8, //
        50.0, 50.0, 60.0, 60.0, 0.7,
    ];
    let mut kept = [0.0; 15];
    let mut len = 0usize;
    let status = unsafe {
        fk_nms(
            boxes.as_ptr(),
            3,
            0.3,
            0.05,
            400,
            200,
            kept.as_mut_ptr(),
            &mut len,
        )
    };
    assert_eq!(status, FkStatus::Ok);
    assert_eq!(len, 2);
    assert_eq!(&kept[..5], &[0.0, 0.0, 10.0, 10.0, 0.9]);
    assert_eq!(&kept[5..10], &[50.0, 50.0, 60.0, 60.0, 0.7]);
}

#[test]
fn nms_rejects_bad_thresholds() {
    let mut kept = [0.0; 5];
    let mut len = 0usize;
    let status = unsafe {
        fk_nms(
            ptr::null(),
            0,
            1.5,
            0.05,
            400,
            200,
            kept.as_mut_ptr(),
            &mut len,
        )
    };
    assert_eq!(status, FkStatus::InvalidArgument);
}

#[test]
fn builtin_chain_reports_layer_geometry() {
    let mut chain = ptr::null_mut();
    assert_eq!(unsafe { fk_chain_builtin(&mut chain) }, FkStatus::Ok);
    let expected = [
        ("conv3_3", 4u64, 48u64),
        ("conv4_3", 8, 108),
        ("conv5_3", 16, 228),
        ("conv_fc7", 32, 340),
        ("conv6_2", 64, 468),
        ("conv7_2", 128, 724),
    ];
    for (name, stride, rf) in expected {
        let cname = c(name);
        let (mut got_stride, mut got_rf) = (0u64, 0u64);
        let status =
            unsafe { fk_chain_layer_geometry(chain, cname.as_ptr(), &mut got_stride, &mut got_rf) };
        assert_eq!(status, FkStatus::Ok, "{name}");
        assert_eq!((got_stride, got_rf), (stride, rf), "{name}");
    }
    let missing = c("conv9_9");
    let (mut s, mut r) = (0u64, 0u64);
    let status = unsafe { fk_chain_layer_geometry(chain, missing.as_ptr(), &mut s, &mut r) };
    assert_eq!(status, FkStatus::InvalidArgument);
    assert!(last_error().contains("conv9_9"));
    unsafe { fk_chain_free(chain) };
    unsafe { fk_chain_free(ptr::null_mut()) };
}

#[test]
fn malformed_chain_json_reports_json_status() {
    let text = c("{\"layers\": 7}");
    let mut chain = ptr::null_mut();
    let status = unsafe { fk_chain_from_json(text.as_ptr(), &mut chain) };
    assert_eq!(status, FkStatus::Json);
    assert!(!last_error().is_empty());
}

#[test]
fn builtin_grid_has_the_expected_census() {
    let mut grid = ptr::null_mut();
    assert_eq!(
        unsafe { fk_grid_builtin(640, 640, &mut grid) },
        FkStatus::Ok
    );
    assert_eq!(unsafe { fk_grid_len(grid) }, 34125);

    // First anchor: 16x16 centered on (2, 2).
    let mut b = [0.0; 4];
    assert_eq!(
        unsafe { fk_grid_anchor(grid, 0, b.as_mut_ptr()) },
        FkStatus::Ok
    );
    assert_eq!(b, [-6.0, -6.0, 10.0, 10.0]);

    let status = unsafe { fk_grid_anchor(grid, 34125, b.as_mut_ptr()) };
    assert_eq!(status, FkStatus::InvalidArgument);
    unsafe { fk_grid_free(grid) };
    assert_eq!(unsafe { fk_grid_len(ptr::null()) }, 0);
}

const SMALL_GRID: &str = "[{\"layer\": \"l8\", \"stride\": 8, \"scale\": 16}]";

#[test]
fn baseline_matching_over_the_c_boundary() {
    let config = c(SMALL_GRID);
    let mut grid = ptr::null_mut();
    assert_eq!(
        unsafe { fk_grid_from_json(24, 24, config.as_ptr(), &mut grid) },
        FkStatus::Ok
    );
    assert_eq!(unsafe { fk_grid_len(grid) }, 9);

    // One face centered on (6, 6): its best anchor is index 0, and anchors
    // 1 and 3 clear the 0.35 threshold.
    let faces = [-2.0, -2.0, 14.0, 14.0];
    let mut assignment = [0i64; 9];
    let status =
        unsafe { fk_match_baseline(grid, faces.as_ptr(), 1, 0.35, assignment.as_mut_ptr()) };
    assert_eq!(status, FkStatus::Ok);
    assert_eq!(assignment, [0, 0, -1, 0, -1, -1, -1, -1, -1]);

    // Scale compensation topped up to six keeps those and adds anchor 4,
    // the only remaining candidate above the 0.1 floor.
    let mut n_used = 0usize;
    let status = unsafe {
        fk_match_scale_compensated(
            grid,
            faces.as_ptr(),
            1,
            0.35,
            0.1,
            6,
            assignment.as_mut_ptr(),
            &mut n_used,
        )
    };
    assert_eq!(status, FkStatus::Ok);
    assert_eq!(n_used, 6);
    assert_eq!(assignment, [0, 0, -1, 0, 0, -1, -1, -1, -1]);

    // No faces: everything is background.
    let status = unsafe {
        fk_match_scale_compensated(
            grid,
            ptr::null(),
            0,
            0.35,
            0.1,
            -1,
            assignment.as_mut_ptr(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, FkStatus::Ok);
    assert_eq!(assignment, [-1; 9]);
    unsafe { fk_grid_free(grid) };
}

const BATCH: &str = "{\"anchors\": [\
{\"label\": 1, \"logits\": [0.1, -0.4, 0.2, 1.1], \
\"delta\": {\"tx\": 0.1, \"ty\": 0.0, \"tw\": 0.0, \"th\": 0.0}, \
\"target\": {\"tx\": 0.0, \"ty\": 0.0, \"tw\": 0.0, \"th\": 0.0}}, \
{\"label\": 0, \"logits\": [0.5, 0.2], \
\"delta\": {\"tx\": 0.0, \"ty\": 0.0, \"tw\": 0.0, \"th\": 0.0}}]}";

#[test]
fn multitask_loss_matches_known_components() {
    let batch = c(BATCH);
    let mut components = [0.0; 3];
    for mine in [false, true] {
        let status = unsafe {
            fk_multitask_loss(batch.as_ptr(), 4.0, 3, 3.0, mine, components.as_mut_ptr())
        };
        assert_eq!(status, FkStatus::Ok);
        assert_eq!(components[0], 1.796018238401229);
        assert_eq!(components[1], 1.7910182384012292);
        assert_eq!(components[2], 0.005000000000000001);
    }

    let broken = c("{\"anchors\": [{\"label\": 2, \"logits\": [0.0, 0.0]}]}");
    let status =
        unsafe { fk_multitask_loss(broken.as_ptr(), 4.0, 3, 3.0, false, components.as_mut_ptr()) };
    assert_eq!(status, FkStatus::Json);
}

const ANNOTATIONS: &str = "a.jpg\n2\n100 100 80 80 0 0 0 0 0 0\n300 300 40 40 0 0 0 0 0 0\n";
const DETECTIONS: &str = "a.jpg\n3\n100 100 80 80 0.9\n102 101 80 80 0.8\n300 300 40 40 0.7\n";

#[test]
fn evaluate_ap_over_the_c_boundary() {
    let ann = c(ANNOTATIONS);
    let det = c(DETECTIONS);
    let mut ap = 0.0;
    let (mut tp, mut fp, mut num_gt) = (0usize, 0usize, 0usize);
    let status = unsafe {
        fk_evaluate_ap(
            ann.as_ptr(),
            det.as_ptr(),
            0.5,
            &mut ap,
            &mut tp,
            &mut fp,
            &mut num_gt,
        )
    };
    assert_eq!(status, FkStatus::Ok);
    assert_eq!(ap, 0.8333333333333333);
    assert_eq!((tp, fp, num_gt), (2, 1, 2));

    // Out pointers are individually optional.
    let status = unsafe {
        fk_evaluate_ap(
            ann.as_ptr(),
            det.as_ptr(),
            0.5,
            &mut ap,
            ptr::null_mut(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, FkStatus::Ok);
}

#[test]
fn evaluate_ap_error_statuses() {
    let ann = c(ANNOTATIONS);
    let unknown = c("z.jpg\n1\n1 1 5 5 0.4\n");
    let mut ap = 0.0;
    let status = unsafe {
        fk_evaluate_ap(
            ann.as_ptr(),
            unknown.as_ptr(),
            0.5,
            &mut ap,
            ptr::null_mut(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, FkStatus::InvalidArgument);
    assert!(last_error().contains("z.jpg"));

    let all_invalid = c("c.jpg\n1\n5 5 10 10 0 0 0 1 0 0\n");
    let dets = c("c.jpg\n1\n5 5 10 10 0.9\n");
    let status = unsafe {
        fk_evaluate_ap(
            all_invalid.as_ptr(),
            dets.as_ptr(),
            0.5,
            &mut ap,
            ptr::null_mut(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, FkStatus::NoGroundTruth);

    let garbled = c("a.jpg\nnot-a-count\n");
    let status = unsafe {
        fk_evaluate_ap(
            garbled.as_ptr(),
            unknown.as_ptr(),
            0.5,
            &mut ap,
            ptr::null_mut(),
            ptr::null_mut(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, FkStatus::Parse);
    assert!(last_error().contains("line 2"));
}

#[test]
fn header_declares_the_full_surface() {
    let header = include_str!("../include/facekit.h");
    for symbol in [
        "fk_version",
        "fk_last_error",
        "fk_iou",
        "fk_encode_box",
        "fk_decode_box",
        "fk_nms",
        "fk_chain_builtin",
        "fk_chain_from_json",
        "fk_chain_layer_geometry",
        "fk_chain_free",
        "fk_grid_builtin",
        "fk_grid_from_json",
        "fk_grid_len",
        "fk_grid_anchor",
        "fk_grid_free",
        "fk_match_baseline",
        "fk_match_scale_compensated",
        "fk_multitask_loss",
        "fk_evaluate_ap",
        "FK_STATUS_OK",
        "FK_STATUS_NO_GROUND_TRUTH",
    ] {
        assert!(header.contains(symbol), "header missing {symbol}");
    }
    assert!(header.contains("typedef struct FkChain FkChain;"));
    assert!(header.contains("typedef struct FkGrid FkGrid;"));
}

#[test]
fn bool_fields_cross_as_c_char() {
    // c_char is used in every string signature; this pins the platform
    // assumption the header relies on.
    assert_eq!(std::mem::size_of::<c_char>(), 1);
    assert_eq!(std::mem::size_of::<FkStatus>(), std::mem::size_of::<i32>());
}
