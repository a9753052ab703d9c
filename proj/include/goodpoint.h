/* C API of the goodpoint shared library: self-supervised keypoint/descriptor
 * training, feature extraction, matching, and evaluation.
 *
 * Every entry point returns a gp_status; on failure gp_last_error() holds a
 * message for the calling thread. Status values double as process exit codes.
 */
#ifndef GOODPOINT_H
#define GOODPOINT_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#define GP_API_VERSION 1

typedef enum gp_status {
  GP_OK = 0,
  GP_ERROR_RUNTIME = 1,
  GP_ERROR_USAGE = 2,
} gp_status;

const char* gp_version(void);

/* Message from the last failing call on this thread; empty string if none. */
const char* gp_last_error(void);

/* Every config key with its default, as JSON. Stable storage per thread. */
const char* gp_default_train_config(void);
const char* gp_default_eval_config(void);

/* Train on images under corpus_dir, writing checkpoints/metrics/resolved
 * config under out_dir. config_path NULL = defaults; resume_checkpoint NULL =
 * fresh start; seed_override >= 0 replaces the config seed; max_steps_override
 * >= 0 caps the run. */
gp_status gp_train(const char* config_path, const char* corpus_dir, const char* out_dir,
                   const char* resume_checkpoint, long long seed_override,
                   long long max_steps_override);

/* Detect + describe each image, writing "<stem>.kpts" interchange files under
 * out_dir. theta_keypoint/nms_radius < 0 keep the defaults; apply_nms is a
 * 0/1/-1 tri-state (-1 = default). */
gp_status gp_extract(const char* checkpoint_path, const char* const* image_paths, size_t n_images,
                     const char* out_dir, double theta_keypoint, double nms_radius, int apply_nms);

/* Evaluate manifest pairs with either a checkpoint or a directory of
 * extracted features (exactly one of checkpoint_path/features_dir non-NULL).
 * report_json_path receives the machine-readable report; report_text_path and
 * viz_dir are optional (NULL). */
gp_status gp_eval(const char* manifest_path, const char* checkpoint_path, const char* features_dir,
                  const char* eval_config_path, const char* report_json_path,
                  const char* report_text_path, const char* viz_dir);

/* Match two keypoint interchange files. With homography_path the geometric
 * side is computed and the training acceptance rule (indices agree and
 * distance < theta_dist) fills the accepted flag; without it dist_geom is nan
 * and acceptance means similarity >= theta_desc. */
gp_status gp_match(const char* keypoints_a_path, const char* keypoints_b_path,
                   const char* out_path, const char* homography_path, double theta_desc,
                   double theta_dist);

/* Human-readable checkpoint summary into out (NUL-terminated, truncated to
 * out_cap). */
gp_status gp_checkpoint_inspect(const char* checkpoint_path, char* out, size_t out_cap);

/* ------------------------------------------------------------------ */
/* Embedding API: load a model once, detect many images.               */

typedef struct gp_model gp_model; /* opaque */

gp_status gp_model_open(const char* checkpoint_path, gp_model** out_model);
void gp_model_close(gp_model* model);

typedef struct gp_keypoint {
  float x, y, score;
} gp_keypoint;

/* intensities: row-major height x width in [0, 1]. Outputs are allocated by
 * the library; release them with gp_buffer_free. descriptors holds
 * (*out_count) * (*out_descriptor_dim) floats, one descriptor per row. */
gp_status gp_model_detect(gp_model* model, const float* intensities, int height, int width,
                          double theta_keypoint, double nms_radius, int apply_nms,
                          gp_keypoint** out_points, float** out_descriptors, int* out_count,
                          int* out_descriptor_dim);

void gp_buffer_free(void* buffer);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* GOODPOINT_H */
