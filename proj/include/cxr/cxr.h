#ifndef CXR_CXR_H
#define CXR_CXR_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CXR_API __declspec(dllexport)
#else
#define CXR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Every fallible call returns a status; on failure cxr_last_error() holds a
 * message for the calling thread. Strings returned through char** are
 * malloc'd and released with cxr_string_free. */
typedef enum cxr_status {
  CXR_OK = 0,
  CXR_ERR_USAGE = 2,
  CXR_ERR_DATA_FORMAT = 3,
  CXR_ERR_MODEL_FORMAT = 4,
  CXR_ERR_RUNTIME = 5
} cxr_status;

typedef struct cxr_archive cxr_archive;
typedef struct cxr_model cxr_model;
typedef struct cxr_server cxr_server;

CXR_API const char* cxr_version(void);
CXR_API const char* cxr_last_error(void);
CXR_API void cxr_string_free(char* s);
CXR_API void cxr_buffer_free(unsigned char* data);
/* 0 leaves the OpenMP default. Results do not depend on the count. */
CXR_API void cxr_set_threads(int threads);

/* Lowercase hex SHA-256 of a file's bytes. */
CXR_API cxr_status cxr_file_sha256(const char* path, char** hex);

/* Class table: 0 Normal, 1 Pneumonia, 2 Tuberculosis. */
CXR_API const char* cxr_class_name(int id);
CXR_API cxr_status cxr_assign_label(const char* class_dir_name, int* out_id);
/* Accuracy of always predicting the largest class. */
CXR_API double cxr_majority_baseline(const size_t* class_counts, size_t n_classes);

/* ---- archives ---- */
CXR_API cxr_status cxr_archive_ingest(const char* root, int channels, cxr_archive** out,
                                      char** report_json);
CXR_API cxr_status cxr_archive_synthesize(size_t per_class, uint64_t seed, int channels,
                                          cxr_archive** out);
CXR_API cxr_status cxr_archive_read(const char* path, cxr_archive** out);
CXR_API cxr_status cxr_archive_write(const cxr_archive* archive, const char* path);
/* {"count","channels","class_counts","content_sha256"} */
CXR_API cxr_status cxr_archive_info(const cxr_archive* archive, char** json);
/* Writes every sample as <dir>/<Class>/<index>.png (an ingestible tree). */
CXR_API cxr_status cxr_archive_export_png(const cxr_archive* archive, const char* dir);
CXR_API void cxr_archive_free(cxr_archive* archive);

/* One synthetic 90x90 grayscale exemplar as PNG bytes. */
CXR_API cxr_status cxr_synth_image_png(int class_id, uint64_t seed, unsigned char** data,
                                       size_t* size);

/* ---- models ---- */
/* arch: custom_cnn | vgg16_style | inception_small; width_mult e.g. "1", "0.25", "1/4". */
CXR_API cxr_status cxr_model_create(const char* arch, int channels, const char* width_mult,
                                    uint64_t seed, cxr_model** out);
/* expected_channels 0 accepts any; otherwise a mismatch is a model-format error. */
CXR_API cxr_status cxr_model_load(const char* path, int expected_channels, cxr_model** out);
CXR_API cxr_status cxr_model_save(const cxr_model* model, const char* path);
/* Architecture, preprocessing fingerprint, class table, model_hash. */
CXR_API cxr_status cxr_model_info(const cxr_model* model, char** json);
CXR_API void cxr_model_free(cxr_model* model);

/* ---- training ---- */
typedef enum cxr_optimizer { CXR_OPT_ADAM = 0, CXR_OPT_SGD = 1 } cxr_optimizer;
typedef enum cxr_class_weighting { CXR_WEIGHT_OFF = 0, CXR_WEIGHT_INVERSE_FREQUENCY = 1 } cxr_class_weighting;

typedef struct cxr_train_config {
  size_t epochs;
  size_t batch_size;
  double val_fraction;
  cxr_optimizer optimizer;
  double lr;
  double beta1;
  double beta2;
  double epsilon;
  double momentum;
  uint64_t seed;
  cxr_class_weighting class_weighting;
  int stratified;
} cxr_train_config;

/* epochs 10, batch 120, val 0.2, adam(1e-3, 0.9, 0.999, 1e-8), seed 0. */
CXR_API void cxr_train_config_init(cxr_train_config* cfg);

typedef void (*cxr_epoch_fn)(const char* epoch_json, void* user);

/* Splits the archive, trains in place, records the split in the model and
 * returns the history as CSV. */
CXR_API cxr_status cxr_train(cxr_model* model, const cxr_archive* archive,
                             const cxr_train_config* cfg, cxr_epoch_fn on_epoch, void* user,
                             char** history_csv);

/* split "all" scores every sample; "val" rebuilds the validation split the
 * model was trained with (the archive must be the training archive). */
CXR_API cxr_status cxr_evaluate(const cxr_model* model, const cxr_archive* archive,
                                const char* split, char** json);

/* ---- inference ---- */
CXR_API cxr_status cxr_predict_bytes(const cxr_model* model, const unsigned char* data,
                                     size_t size, char** json);
CXR_API cxr_status cxr_predict_file(const cxr_model* model, const char* image_path, char** json);

/* ---- serving ---- */
typedef struct cxr_serve_config {
  const char* bind;        /* HOST:PORT, port 0 picks a free one */
  size_t max_body_bytes;
  int log_json;            /* access log format on stderr */
  int quiet;               /* no access log */
  const char* static_dir;  /* optional UI directory mounted at / */
  int expected_channels;   /* 0 = any */
} cxr_serve_config;

/* bind 127.0.0.1:8080, 10 MiB, text log. */
CXR_API void cxr_serve_config_init(cxr_serve_config* cfg);
CXR_API cxr_status cxr_server_create(const char* model_path, const cxr_serve_config* cfg,
                                     cxr_server** out, int* bound_port);
/* Blocks until cxr_server_stop. */
CXR_API cxr_status cxr_server_run(cxr_server* server);
CXR_API void cxr_server_stop(cxr_server* server);
CXR_API void cxr_server_free(cxr_server* server);

/* ---- verification ---- */
typedef void (*cxr_check_fn)(const char* check_json, void* user);

/* level "fast" or "full". CXR_ERR_RUNTIME when any check fails. */
CXR_API cxr_status cxr_verify(const char* level, cxr_check_fn on_check, void* user,
                              char** summary_json);

#ifdef __cplusplus
}
#endif

#endif
