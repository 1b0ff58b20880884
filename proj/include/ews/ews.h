#ifndef EWS_EWS_H
#define EWS_EWS_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(EWS_BUILDING_LIBRARY)
#define EWS_API __attribute__((visibility("default")))
#else
#define EWS_API
#endif

typedef enum ews_status {
  EWS_OK = 0,
  EWS_ERR_CONFIG = 1,
  EWS_ERR_DOMAIN = 2,
  EWS_ERR_PARSE = 3,
  EWS_ERR_IO = 4,
  EWS_ERR_NOT_FOUND = 5,
  EWS_ERR_SCHEMA = 6,
  EWS_ERR_CONFLICT = 7,
  EWS_ERR_TRAINING = 8,
  EWS_ERR_MISSING_ARTIFACT = 9,
  EWS_ERR_STALE_ARTIFACT = 10,
  EWS_ERR_INVALID_ARGUMENT = 11,
  EWS_ERR_INTERNAL = 99
} ews_status;

typedef struct ews_pipeline ews_pipeline;
typedef struct ews_model ews_model;
typedef struct ews_service ews_service;

EWS_API const char* ews_version(void);
EWS_API const char* ews_status_name(ews_status status);
/* Message of the last failed call on this thread; "" after a success. */
EWS_API const char* ews_last_error(void);
/* Frees strings returned through char** out-parameters. */
EWS_API void ews_string_free(char* s);

/* ---- oxygen physiology ---- */
EWS_API ews_status ews_severinghaus_sao2(double pao2_mmhg, double* sao2_out);
EWS_API ews_status ews_ellis_pao2(double sao2_fraction, double* pao2_out);
/* Built-in supplemental oxygen table; table_csv may be NULL. */
EWS_API ews_status ews_fio2_from_supplemental(const char* table_csv, double liters_per_min, double* fio2_out);

/* ---- labeling ----
 * pf/peep: per grid point, NaN for missing. ventilated: 0/1.
 * labels_out[i] receives -1 (undefined), 0 or 1. events_json_out (may be
 * NULL) receives `[{"start_s":..,"end_s":..},...]`. config_json may be NULL
 * or a JSON object overriding labeler constants (pf_threshold,
 * peep_threshold, window_s, quorum, merge_gap_s, min_duration_s, horizon_s,
 * label_truncated_windows). */
EWS_API ews_status ews_label_series(const double* pf, const uint8_t* ventilated, const double* peep, size_t n,
                                   int64_t step_s, const char* config_json, int8_t* labels_out,
                                   char** events_json_out);

/* ---- alarms ----
 * Writes the alarm times into alarms_out (capacity n); *n_alarms receives the count. */
EWS_API ews_status ews_silence(const int64_t* times_s, const double* scores, size_t n, double threshold,
                              int64_t silence_s, int64_t* alarms_out, size_t* n_alarms);

/* ---- pipeline ----
 * config_path may be NULL for built-in defaults. */
EWS_API ews_status ews_pipeline_open(const char* config_path, const char* run_dir, ews_pipeline** out);
/* Dotted key path and JSON value, e.g. ("scenario.n_stays", "50"). */
EWS_API ews_status ews_pipeline_set(ews_pipeline* p, const char* key_path, const char* json_value);
/* Stage names: synth, train-pao2, label, featurize, train-ews, evaluate.
 * summary_json_out may be NULL. */
EWS_API ews_status ews_pipeline_run(ews_pipeline* p, const char* stage, char** summary_json_out);
EWS_API ews_status ews_pipeline_run_all(ews_pipeline* p, char** summary_json_out);
EWS_API ews_status ews_pipeline_config_json(const ews_pipeline* p, char** out);
EWS_API void ews_pipeline_close(ews_pipeline* p);

/* ---- trained EWS model ---- */
EWS_API ews_status ews_model_load(const char* path, ews_model** out);
EWS_API size_t ews_model_num_features(const ews_model* m);
EWS_API const char* ews_model_feature_name(const ews_model* m, size_t i);
/* row has num_features values, NaN for missing. */
EWS_API ews_status ews_model_predict(const ews_model* m, const double* row, size_t n_features, double* prob_out);
EWS_API void ews_model_free(ews_model* m);

/* ---- monitor service ----
 * Strings other than data_dir may be NULL for defaults; port 0 picks a free port. */
EWS_API ews_status ews_service_create(const char* data_dir, const char* host, int port, const char* annotation_store,
                                     const char* annotation_types, const char* epoch_iso, ews_service** out);
/* Serves on a background thread; *port_out receives the bound port. */
EWS_API ews_status ews_service_start(ews_service* s, int* port_out);
/* Binds and serves on the calling thread until ews_service_stop. */
EWS_API ews_status ews_service_run(ews_service* s, int* port_out);
EWS_API void ews_service_stop(ews_service* s);
EWS_API void ews_service_free(ews_service* s);

#ifdef __cplusplus
}
#endif

#endif
