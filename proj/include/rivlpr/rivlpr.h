#ifndef RIVLPR_H
#define RIVLPR_H

/* C interface to the rivlpr place-recognition pipeline.
 *
 * Every function returns a status code; on failure a message is available from
 * rivlpr_last_error() on the calling thread. Handles are opaque and owned by the
 * caller, who releases them with the matching *_free function (NULL is accepted).
 * Distinct handles may be used from different threads concurrently. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define RIVLPR_API __declspec(dllexport)
#else
#define RIVLPR_API __attribute__((visibility("default")))
#endif

typedef enum rivlpr_status {
  RIVLPR_OK = 0,
  RIVLPR_E_ARGUMENT = 1,
  RIVLPR_E_IO = 2,
  RIVLPR_E_FORMAT = 3,
  RIVLPR_E_ALIGNMENT = 4, /* ICP failed; no pairs for this scan pair */
  RIVLPR_E_PROTOCOL = 5,  /* precondition of the protocol violated, e.g. scans too far apart */
  RIVLPR_E_SHAPE = 6,     /* dimensions of model, image or descriptors disagree */
  RIVLPR_E_NO_CANDIDATE = 7,
  RIVLPR_E_DIVERGED = 8,
  RIVLPR_E_INTERNAL = 99
} rivlpr_status;

RIVLPR_API const char* rivlpr_version(void);
/* Message of the last failed call on this thread; "" if none. */
RIVLPR_API const char* rivlpr_last_error(void);

/* ---- configuration -------------------------------------------------------- */

typedef struct rivlpr_config rivlpr_config;

RIVLPR_API rivlpr_status rivlpr_config_default(rivlpr_config** out);
RIVLPR_API rivlpr_status rivlpr_config_load(const char* path, rivlpr_config** out);
RIVLPR_API rivlpr_status rivlpr_config_parse(const char* text, rivlpr_config** out);
/* key is "section.key"; the whole config is revalidated. */
RIVLPR_API rivlpr_status rivlpr_config_set(rivlpr_config* cfg, const char* key, const char* value);
/* Copies a NUL-terminated string into buf when it fits; *needed gets the size including NUL.
 * buf == NULL with cap == 0 only queries the size. */
RIVLPR_API rivlpr_status rivlpr_config_get(const rivlpr_config* cfg, const char* key, char* buf, size_t cap,
                                           size_t* needed);
RIVLPR_API rivlpr_status rivlpr_config_dump(const rivlpr_config* cfg, char* buf, size_t cap, size_t* needed);
RIVLPR_API void rivlpr_config_free(rivlpr_config* cfg);

/* ---- scans and poses ------------------------------------------------------ */

typedef struct rivlpr_scan rivlpr_scan;

/* .bin (float32 x,y,z,reflectivity) or .csv with header x,y,z,reflectivity. */
RIVLPR_API rivlpr_status rivlpr_scan_load(const char* path, rivlpr_scan** out);
RIVLPR_API rivlpr_status rivlpr_scan_from_points(const float* xyzr, size_t count, const char* id, double timestamp,
                                                 rivlpr_scan** out);
RIVLPR_API rivlpr_status rivlpr_scan_save(const rivlpr_scan* scan, const char* path);
RIVLPR_API size_t rivlpr_scan_size(const rivlpr_scan* scan);
RIVLPR_API double rivlpr_scan_timestamp(const rivlpr_scan* scan);
RIVLPR_API const char* rivlpr_scan_id(const rivlpr_scan* scan);
RIVLPR_API void rivlpr_scan_free(rivlpr_scan* scan);

typedef struct rivlpr_poses rivlpr_poses;

/* Lines "timestamp tx ty tz qx qy qz qw"; '#' starts a comment. */
RIVLPR_API rivlpr_status rivlpr_poses_load(const char* path, rivlpr_poses** out);
RIVLPR_API size_t rivlpr_poses_size(const rivlpr_poses* poses);
/* pose7 = tx ty tz qx qy qz qw of the pose within 1 ms of timestamp. */
RIVLPR_API rivlpr_status rivlpr_poses_find(const rivlpr_poses* poses, double timestamp, double pose7[7]);
RIVLPR_API void rivlpr_poses_free(rivlpr_poses* poses);

/* ---- range images --------------------------------------------------------- */

typedef struct rivlpr_image rivlpr_image;

RIVLPR_API rivlpr_status rivlpr_project(const rivlpr_config* cfg, const rivlpr_scan* scan, rivlpr_image** out);
RIVLPR_API rivlpr_status rivlpr_image_load(const char* path, rivlpr_image** out);
RIVLPR_API rivlpr_status rivlpr_image_save(const rivlpr_image* img, const char* path);
RIVLPR_API rivlpr_status rivlpr_image_shape(const rivlpr_image* img, int* height, int* width);
/* channels: reflectivity, range / max_range, normal ratio. */
RIVLPR_API rivlpr_status rivlpr_image_pixel(const rivlpr_image* img, int row, int col, float channels[3], int* valid);
RIVLPR_API size_t rivlpr_image_valid_count(const rivlpr_image* img);
RIVLPR_API void rivlpr_image_free(rivlpr_image* img);

/* ---- mining --------------------------------------------------------------- */

typedef struct rivlpr_pairs rivlpr_pairs;

/* Poses are looked up by scan timestamp. RIVLPR_E_PROTOCOL when the scans are
 * beyond the positive radius, RIVLPR_E_ALIGNMENT when ICP fails. */
RIVLPR_API rivlpr_status rivlpr_mine(const rivlpr_config* cfg, const rivlpr_scan* a, const rivlpr_scan* b,
                                     const rivlpr_poses* poses, uint64_t seed, rivlpr_pairs** out);
RIVLPR_API size_t rivlpr_pairs_positive_count(const rivlpr_pairs* pairs);
RIVLPR_API rivlpr_status rivlpr_pairs_positive(const rivlpr_pairs* pairs, size_t k, int* patch_a, int* patch_b);
RIVLPR_API rivlpr_status rivlpr_pairs_save(const rivlpr_pairs* pairs, const char* path);
RIVLPR_API rivlpr_status rivlpr_pairs_load(const char* path, rivlpr_pairs** out);
RIVLPR_API void rivlpr_pairs_free(rivlpr_pairs* pairs);

/* ---- model ---------------------------------------------------------------- */

typedef struct rivlpr_model rivlpr_model;

RIVLPR_API rivlpr_status rivlpr_model_random(const rivlpr_config* cfg, uint64_t seed, rivlpr_model** out);
/* Loads the model stored in a CKP1 checkpoint. */
RIVLPR_API rivlpr_status rivlpr_model_load(const char* path, rivlpr_model** out);
RIVLPR_API rivlpr_status rivlpr_model_save(const rivlpr_model* model, const char* path);
RIVLPR_API size_t rivlpr_model_descriptor_dim(const rivlpr_model* model);
RIVLPR_API rivlpr_status rivlpr_model_image_shape(const rivlpr_model* model, int* height, int* width);
/* Writes descriptor_dim floats. *valid is 0 for a degenerate (all-zero) descriptor. */
RIVLPR_API rivlpr_status rivlpr_describe(const rivlpr_model* model, const rivlpr_image* img, float* out, size_t cap,
                                         int* valid);
RIVLPR_API void rivlpr_model_free(rivlpr_model* model);

/* ---- descriptor database -------------------------------------------------- */

typedef struct rivlpr_db rivlpr_db;

RIVLPR_API rivlpr_status rivlpr_db_create(rivlpr_db** out);
/* pose7 may be NULL (identity pose). */
RIVLPR_API rivlpr_status rivlpr_db_add(rivlpr_db* db, const float* descriptor, size_t dim, const char* id,
                                       double timestamp, const double pose7[7]);
RIVLPR_API rivlpr_status rivlpr_db_load(const char* path, rivlpr_db** out);
/* Writes path (DSC1) and path.idx. */
RIVLPR_API rivlpr_status rivlpr_db_save(const rivlpr_db* db, const char* path);
RIVLPR_API size_t rivlpr_db_count(const rivlpr_db* db);
RIVLPR_API size_t rivlpr_db_dim(const rivlpr_db* db);
RIVLPR_API rivlpr_status rivlpr_db_query(const rivlpr_db* db, const float* descriptor, size_t dim, int* index,
                                         double* distance);
RIVLPR_API void rivlpr_db_free(rivlpr_db* db);

/* ---- training and evaluation ---------------------------------------------- */

typedef struct rivlpr_train_row {
  int64_t step;
  double lr;
  double loss_p;
  double loss_tsap;
  double loss_final;
  double batch_loss;
} rivlpr_train_row;

typedef void (*rivlpr_train_callback)(const rivlpr_train_row* row, void* user);

/* Trains on the given scan/pose sets (scans[i] are matched to poses by timestamp).
 * resume_path may be NULL. Writes the checkpoint to ckp_path and, if trace_path is
 * not NULL, the per-step CSV trace. */
RIVLPR_API rivlpr_status rivlpr_train(const rivlpr_config* cfg, const rivlpr_scan* const* scans, size_t scan_count,
                                      const rivlpr_poses* const* poses, size_t pose_sets, const char* resume_path,
                                      const char* ckp_path, const char* trace_path, rivlpr_train_callback callback,
                                      void* user);

typedef struct rivlpr_report {
  int queries;
  int revisits;
  double recall_at_1;
  double max_f1;
  double f1_threshold;
} rivlpr_report;

/* Protocol from cfg [eval]. For intra mode queries may be NULL. out_stem may be
 * NULL; otherwise writes out_stem.json, .csv and .svg. */
RIVLPR_API rivlpr_status rivlpr_evaluate(const rivlpr_config* cfg, const rivlpr_db* db, const rivlpr_db* queries,
                                         const char* out_stem, rivlpr_report* report);

/* Renders the synthetic street world into out_dir/session<k>/ as .bin scans named
 * by timestamp plus poses.txt. */
RIVLPR_API rivlpr_status rivlpr_synthesize(const rivlpr_config* cfg, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif
