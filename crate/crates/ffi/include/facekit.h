#ifndef FACEKIT_H
#define FACEKIT_H

/* Generated from the facekit-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum FkStatus {
  FK_STATUS_OK = 0,
  FK_STATUS_NULL_POINTER = 1,
  FK_STATUS_UTF8 = 2,
  FK_STATUS_INVALID_ARGUMENT = 3,
  FK_STATUS_PARSE = 4,
  FK_STATUS_NUMERIC = 5,
  FK_STATUS_NO_GROUND_TRUTH = 6,
  FK_STATUS_JSON = 7,
  FK_STATUS_IO = 8,
  FK_STATUS_PANIC = 9,
} FkStatus;

// Network layer chain handle.
typedef struct FkChain FkChain;

// Tiled anchor grid handle.
typedef struct FkGrid FkGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *fk_version(void);

// Message from the last failing call on this thread. Empty string when no
// failure has occurred. The pointer stays valid until the next failing call
// on the same thread.
const char *fk_last_error(void);

// Intersection over union of two boxes given as f64 quads.
//
// # Safety
// `a` and `b` must point to 4 readable f64 values, `out` to 1 writable.
enum FkStatus fk_iou(const double *a, const double *b, double *out);

// Regression target (tx, ty, tw, th) taking `anchor` onto `face`.
//
// # Safety
// `anchor` and `face` must point to 4 readable f64 values, `out_delta` to 4
// writable ones.
enum FkStatus fk_encode_box(const double *anchor, const double *face, double *out_delta);

// Box obtained by applying a regression `delta` to `anchor`.
//
// # Safety
// `anchor` and `delta` must point to 4 readable f64 values, `out_box` to 4
// writable ones.
enum FkStatus fk_decode_box(const double *anchor, const double *delta, double *out_box);

// Greedy non-maximum suppression over `num_boxes` scored boxes laid out as
// quints (x1, y1, x2, y2, score). Kept boxes are written to `out_boxes` in
// the same layout, best score first; `out_len` receives their count.
// `out_boxes` needs room for `num_boxes` quints.
//
// # Safety
// `boxes` must point to `5 * num_boxes` readable f64 values, `out_boxes` to
// as many writable ones, `out_len` to a writable uintptr_t.
enum FkStatus fk_nms(const double *boxes,
                     size_t num_boxes,
                     double iou_thresh,
                     double conf_thresh,
                     size_t pre_top,
                     size_t post_top,
                     double *out_boxes,
                     size_t *out_len);

// Builtin detection-network chain.
//
// # Safety
// `out` must point to a writable chain pointer.
enum FkStatus fk_chain_builtin(struct FkChain **out);

// Chain loaded from a JSON description.
//
// # Safety
// `json` must be a valid NUL-terminated string, `out` a writable chain
// pointer.
enum FkStatus fk_chain_from_json(const char *json, struct FkChain **out);

// Stride and receptive field of one layer of the chain.
//
// # Safety
// `chain` must come from a chain constructor, `layer` must be a valid
// NUL-terminated string, `out_stride` and `out_rf` must be writable.
enum FkStatus fk_chain_layer_geometry(const struct FkChain *chain,
                                      const char *layer,
                                      uint64_t *out_stride,
                                      uint64_t *out_rf);

// Releases a chain handle. Null is ignored.
//
// # Safety
// `chain` must come from a chain constructor and not be freed twice.
void fk_chain_free(struct FkChain *chain);

// Anchor grid for an image, tiled with the builtin layer set.
//
// # Safety
// `out` must point to a writable grid pointer.
enum FkStatus fk_grid_builtin(uint32_t width, uint32_t height, struct FkGrid **out);

// Anchor grid tiled with a JSON layer configuration.
//
// # Safety
// `config_json` must be a valid NUL-terminated string, `out` a writable grid
// pointer.
enum FkStatus fk_grid_from_json(uint32_t width,
                                uint32_t height,
                                const char *config_json,
                                struct FkGrid **out);

// Number of anchors in the grid. Zero for a null grid.
//
// # Safety
// `grid` must come from a grid constructor or be null.
size_t fk_grid_len(const struct FkGrid *grid);

// Copies anchor `index` into `out_box` as a quad.
//
// # Safety
// `grid` must come from a grid constructor, `out_box` must point to 4
// writable f64 values.
enum FkStatus fk_grid_anchor(const struct FkGrid *grid, size_t index, double *out_box);

// Releases a grid handle. Null is ignored.
//
// # Safety
// `grid` must come from a grid constructor and not be freed twice.
void fk_grid_free(struct FkGrid *grid);

// Baseline anchor assignment. `out_assignment` receives one i64 per anchor:
// the matched face index, or -1 for background. Needs room for
// fk_grid_len(grid) values.
//
// # Safety
// `faces` must point to `4 * num_faces` readable f64 values (may be null
// when `num_faces` is 0), `out_assignment` to `fk_grid_len(grid)` writable
// i64 values.
enum FkStatus fk_match_baseline(const struct FkGrid *grid,
                                const double *faces,
                                size_t num_faces,
                                double threshold,
                                int64_t *out_assignment);

// Two-stage scale-compensated assignment. `fixed_n` pins the per-face
// target count; pass -1 to derive it from the stage-one per-image average.
// `out_n_used` (optional, may be null) receives the target used.
//
// # Safety
// Same layout requirements as fk_match_baseline; `out_n_used` must be
// writable when non-null.
enum FkStatus fk_match_scale_compensated(const struct FkGrid *grid,
                                         const double *faces,
                                         size_t num_faces,
                                         double stage1_threshold,
                                         double stage2_floor,
                                         int64_t fixed_n,
                                         int64_t *out_assignment,
                                         size_t *out_n_used);

// Multi-task detection loss over a JSON batch. When `mine` is true the
// batch first goes through hard negative mining at `neg_pos_ratio`.
// `out_components` receives (total, classification, regression).
//
// # Safety
// `batch_json` must be a valid NUL-terminated string, `out_components` must
// point to 3 writable f64 values.
enum FkStatus fk_multitask_loss(const char *batch_json,
                                double lambda,
                                size_t n_m,
                                double neg_pos_ratio,
                                bool mine,
                                double *out_components);

// Average precision of a detection run against ground-truth annotations,
// both passed as complete file contents.
//
// # Safety
// `annotations` and `detections` must be valid NUL-terminated strings; the
// out pointers must be writable (any of them may be null to skip).
enum FkStatus fk_evaluate_ap(const char *annotations,
                             const char *detections,
                             double iou_threshold,
                             double *out_ap,
                             size_t *out_tp,
                             size_t *out_fp,
                             size_t *out_num_gt);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FACEKIT_H */
