/* C interface for the boxdistill library. Generated by cbindgen; do not edit. */

#ifndef BOXDISTILL_H
#define BOXDISTILL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum bd_status {
  BD_OK = 0,
  BD_ERR_NULL_ARGUMENT = 1,
  BD_ERR_UTF8 = 2,
  BD_ERR_IO = 3,
  BD_ERR_PARSE = 4,
  BD_ERR_GEOMETRY = 5,
  BD_ERR_NUMERICS = 6,
  BD_ERR_CONFIG = 7,
  BD_ERR_GENERATION = 8,
  BD_ERR_TRAIN = 9,
  BD_ERR_BUFFER_TOO_SMALL = 10,
  BD_ERR_PANIC = 11,
} bd_status;

/**
 * Opaque scene handle.
 */
typedef struct bd_scene bd_scene;

/**
 * One projected point record.
 */
typedef struct bd_projected_point {
  /**
   * Index into the scene's point list.
   */
  uint64_t source_index;
  /**
   * Float image coordinates.
   */
  double u;
  double v;
  /**
   * Camera-frame depth in meters.
   */
  double depth;
  /**
   * Rasterized (floored) pixel coordinates.
   */
  uint32_t pixel_u;
  uint32_t pixel_v;
} bd_projected_point;

/**
 * Training options; initialize with `bd_train_options_init`.
 */
typedef struct bd_train_options {
  uint64_t seed;
  /**
   * Number of training scenes to generate.
   */
  uint32_t scenes;
  uint32_t epochs;
  uint32_t batch_size;
  double learning_rate;
  /**
   * Distillation weight.
   */
  double lambda;
} bd_train_options;

/**
 * Results of a training run.
 */
typedef struct bd_train_summary {
  double final_seg_loss;
  double final_distill_loss;
  double final_total_loss;
  /**
   * Deepest-layer accuracy on box members of the held-out scene.
   */
  double heldout_inbox_accuracy;
  double heldout_miou;
  uint64_t steps;
} bd_train_summary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *bd_version(void);

/**
 * Copy the last error message into `buffer` and return the full message
 * length (excluding the NUL). A zero return means no pending error. The
 * message is truncated if `capacity` is too small; a capacity of at least
 * the returned length plus one holds the whole message.
 *
 * # Safety
 * `buffer` must point to writable memory of at least `capacity` bytes, or
 * be null (in which case only the length is returned).
 */
uintptr_t bd_last_error_message(char *buffer, uintptr_t capacity);

/**
 * Generate a deterministic synthetic scene.
 *
 * `objects` and `classes` may be zero to use the defaults (3 objects,
 * 4 classes including background).
 *
 * # Safety
 * `out` must be a valid pointer. On success it receives a handle that must
 * be released with `bd_scene_free`.
 */
enum bd_status bd_scene_generate(uint64_t seed,
                                 uint32_t objects,
                                 uint32_t classes,
                                 struct bd_scene **out);

/**
 * Read a scene directory (points.bin, labels.bin, calib.txt, boxes.txt,
 * image.ppm).
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be a valid pointer and
 * on success receives a handle to release with `bd_scene_free`.
 */
enum bd_status bd_scene_read(const char *dir, struct bd_scene **out);

/**
 * Write the scene into a directory, creating it if needed.
 *
 * # Safety
 * `scene` must be a live handle; `dir` must be a NUL-terminated string.
 */
enum bd_status bd_scene_write(const struct bd_scene *scene, const char *dir);

/**
 * Release a scene handle. Null is a no-op.
 *
 * # Safety
 * `scene` must be a handle returned by this library, released once.
 */
void bd_scene_free(struct bd_scene *scene);

/**
 * Number of points in the scene.
 *
 * # Safety
 * `scene` must be a live handle; `out` must be a valid pointer.
 */
enum bd_status bd_scene_point_count(const struct bd_scene *scene, uintptr_t *out);

/**
 * Number of annotated boxes in the scene.
 *
 * # Safety
 * `scene` must be a live handle; `out` must be a valid pointer.
 */
enum bd_status bd_scene_box_count(const struct bd_scene *scene, uintptr_t *out);

/**
 * Number of points that project into the camera image.
 *
 * # Safety
 * `scene` must be a live handle; `out` must be a valid pointer.
 */
enum bd_status bd_scene_projected_count(const struct bd_scene *scene, uintptr_t *out);

/**
 * Project the scene's points and fill `buffer` with up to `capacity`
 * records; `written` receives the number stored. Fails with
 * `BD_ERR_BUFFER_TOO_SMALL` (after storing `capacity` records) if the
 * buffer cannot hold every projected point; query the required size with
 * `bd_scene_projected_count`.
 *
 * # Safety
 * `scene` must be a live handle; `buffer` must point to at least
 * `capacity` records; `written` must be a valid pointer.
 */
enum bd_status bd_scene_project(const struct bd_scene *scene,
                                struct bd_projected_point *buffer,
                                uintptr_t capacity,
                                uintptr_t *written);

/**
 * Fill `options` with the library defaults.
 *
 * # Safety
 * `options` must be a valid pointer.
 */
void bd_train_options_init(struct bd_train_options *options);

/**
 * Train on generated scenes and report the final losses and held-out
 * segmentation quality.
 *
 * # Safety
 * `options` and `out` must be valid pointers.
 */
enum bd_status bd_train_run(const struct bd_train_options *options, struct bd_train_summary *out);

/**
 * Run the gradient verification suite for one seed and report the largest
 * relative error between analytic gradients and central finite differences.
 *
 * # Safety
 * `max_rel_error` must be a valid pointer.
 */
enum bd_status bd_grad_check(uint64_t seed, double step, double *max_rel_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BOXDISTILL_H */
