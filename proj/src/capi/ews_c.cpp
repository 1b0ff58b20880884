#include "ews/ews.h"

#include <cstring>
#include <json.hpp>
#include <set>
#include <string>

#include "ews/alarm_eval.hpp"
#include "ews/error.hpp"
#include "ews/fio2_pf.hpp"
#include "ews/gbdt.hpp"
#include "ews/labeler.hpp"
#include "ews/oxygen_curve.hpp"
#include "ews/pipeline.hpp"
#include "ews/service.hpp"

using nlohmann::json;

struct ews_pipeline {
  ews::pipeline::PipelineConfig config;
  std::string run_dir;
};

struct ews_model {
  ews::gbdt::Ensemble model;
};

struct ews_service {
  std::unique_ptr<ews::service::MonitorService> svc;
};

namespace {

thread_local std::string g_last_error;

ews_status to_status(ews::ErrorCode c) { return static_cast<ews_status>(static_cast<int>(c)); }

template <class F>
ews_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return EWS_OK;
  } catch (const ews::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const json::exception& e) {
    g_last_error = e.what();
    return EWS_ERR_PARSE;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return EWS_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return EWS_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return EWS_ERR_INTERNAL;
  }
}

ews_status invalid(const char* what) {
  g_last_error = what;
  return EWS_ERR_INVALID_ARGUMENT;
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json results_json(const std::vector<ews::pipeline::StageResult>& rs) {
  json arr = json::array();
  for (const auto& r : rs) {
    arr.push_back({{"stage", ews::pipeline::stage_name(r.stage)},
                   {"config_hash", r.config_hash},
                   {"outputs", r.outputs},
                   {"summary", r.summary}});
  }
  return arr;
}

}  // namespace

extern "C" {

const char* ews_version(void) { return "1.0.0"; }

const char* ews_status_name(ews_status s) {
  switch (s) {
    case EWS_OK: return "ok";
    case EWS_ERR_CONFIG: return "config";
    case EWS_ERR_DOMAIN: return "domain";
    case EWS_ERR_PARSE: return "parse";
    case EWS_ERR_IO: return "io";
    case EWS_ERR_NOT_FOUND: return "not_found";
    case EWS_ERR_SCHEMA: return "schema";
    case EWS_ERR_CONFLICT: return "conflict";
    case EWS_ERR_TRAINING: return "training";
    case EWS_ERR_MISSING_ARTIFACT: return "missing_artifact";
    case EWS_ERR_STALE_ARTIFACT: return "stale_artifact";
    case EWS_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case EWS_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* ews_last_error(void) { return g_last_error.c_str(); }

void ews_string_free(char* s) { std::free(s); }

ews_status ews_severinghaus_sao2(double pao2, double* out) {
  if (!out) return invalid("sao2_out is NULL");
  return guarded([&] { *out = ews::oxygen::severinghaus_sao2(pao2); });
}

ews_status ews_ellis_pao2(double sao2, double* out) {
  if (!out) return invalid("pao2_out is NULL");
  return guarded([&] { *out = ews::oxygen::ellis_pao2(sao2); });
}

ews_status ews_fio2_from_supplemental(const char* table_csv, double liters, double* out) {
  if (!out) return invalid("fio2_out is NULL");
  return guarded([&] {
    if (table_csv) {
      *out = ews::oxygen::Fio2Table::load(table_csv).lookup(liters);
    } else {
      *out = ews::oxygen::Fio2Table::builtin().lookup(liters);
    }
  });
}

ews_status ews_label_series(const double* pf, const uint8_t* ventilated, const double* peep, size_t n, int64_t step_s,
                            const char* config_json, int8_t* labels_out, char** events_json_out) {
  if (n > 0 && (!pf || !ventilated || !peep || !labels_out)) return invalid("NULL input array");
  return guarded([&] {
    ews::label::LabelerConfig cfg;
    if (config_json) {
      const json j = json::parse(config_json);
      if (!j.is_object()) ews::fail(ews::ErrorCode::kConfig, "labeler config must be a JSON object");
      static const std::set<std::string> known = {"pf_threshold",   "peep_threshold", "window_s",
                                                  "quorum",         "merge_gap_s",    "min_duration_s",
                                                  "horizon_s",      "label_truncated_windows"};
      for (const auto& [k, v] : j.items()) {
        if (!known.count(k)) ews::fail(ews::ErrorCode::kConfig, "unknown labeler key '" + k + "'");
      }
      cfg.pf_threshold = j.value("pf_threshold", cfg.pf_threshold);
      cfg.peep_threshold = j.value("peep_threshold", cfg.peep_threshold);
      cfg.window_s = j.value("window_s", cfg.window_s);
      if (j.contains("quorum")) {
        cfg.quorum_num = j["quorum"].at(0).get<int>();
        cfg.quorum_den = j["quorum"].at(1).get<int>();
      }
      cfg.label_truncated_windows = j.value("label_truncated_windows", cfg.label_truncated_windows);
      cfg.merge_gap_s = j.value("merge_gap_s", cfg.merge_gap_s);
      cfg.min_duration_s = j.value("min_duration_s", cfg.min_duration_s);
      cfg.horizon_s = j.value("horizon_s", cfg.horizon_s);
    }
    ews::oxygen::PfTrack t;
    t.pf.assign(pf, pf + n);
    t.peep.assign(peep, peep + n);
    t.ventilated.assign(ventilated, ventilated + n);
    t.pao2_est.assign(n, ews::kMissing);
    t.fio2_est.assign(n, ews::kMissing);
    t.pao2_source.assign(n, ews::oxygen::Pao2Source::kMissing);
    t.fio2_quality_flag.assign(n, 0);
    const auto r = ews::label::label_track(t, step_s, cfg);
    for (size_t i = 0; i < n; ++i) labels_out[i] = static_cast<int8_t>(r.labels[i]);
    if (events_json_out) *events_json_out = dup(ews::label::events_to_json(r.events));
  });
}

ews_status ews_silence(const int64_t* times_s, const double* scores, size_t n, double threshold, int64_t silence_s,
                       int64_t* alarms_out, size_t* n_alarms) {
  if ((n > 0 && (!times_s || !scores || !alarms_out)) || !n_alarms) return invalid("NULL argument");
  return guarded([&] {
    const auto a = ews::alarm::silence({times_s, n}, {scores, n}, threshold, silence_s);
    std::copy(a.begin(), a.end(), alarms_out);
    *n_alarms = a.size();
  });
}

ews_status ews_pipeline_open(const char* config_path, const char* run_dir, ews_pipeline** out) {
  if (!out || !run_dir) return invalid("NULL argument");
  *out = nullptr;
  return guarded([&] {
    auto p = std::make_unique<ews_pipeline>();
    if (config_path) p->config = ews::pipeline::PipelineConfig::load(config_path);
    p->run_dir = run_dir;
    *out = p.release();
  });
}

ews_status ews_pipeline_set(ews_pipeline* p, const char* key, const char* value) {
  if (!p || !key || !value) return invalid("NULL argument");
  return guarded([&] { p->config.set_override(key, value); });
}

ews_status ews_pipeline_run(ews_pipeline* p, const char* stage, char** summary) {
  if (!p || !stage) return invalid("NULL argument");
  if (summary) *summary = nullptr;
  return guarded([&] {
    const auto s = ews::pipeline::stage_from_name(stage);
    if (!s) ews::fail(ews::ErrorCode::kConfig, std::string("unknown stage '") + stage + "'");
    ews::pipeline::Pipeline pl(p->config, p->run_dir);
    const auto r = pl.run(*s);
    if (summary) *summary = dup(results_json({r})[0].dump(2));
  });
}

ews_status ews_pipeline_run_all(ews_pipeline* p, char** summary) {
  if (!p) return invalid("NULL argument");
  if (summary) *summary = nullptr;
  return guarded([&] {
    ews::pipeline::Pipeline pl(p->config, p->run_dir);
    const auto rs = pl.run_all();
    if (summary) *summary = dup(results_json(rs).dump(2));
  });
}

ews_status ews_pipeline_config_json(const ews_pipeline* p, char** out) {
  if (!p || !out) return invalid("NULL argument");
  return guarded([&] { *out = dup(p->config.doc().dump(2)); });
}

void ews_pipeline_close(ews_pipeline* p) { delete p; }

ews_status ews_model_load(const char* path, ews_model** out) {
  if (!path || !out) return invalid("NULL argument");
  *out = nullptr;
  return guarded([&] { *out = new ews_model{ews::gbdt::Ensemble::load(path)}; });
}

size_t ews_model_num_features(const ews_model* m) { return m ? m->model.feature_names.size() : 0; }

const char* ews_model_feature_name(const ews_model* m, size_t i) {
  if (!m || i >= m->model.feature_names.size()) return nullptr;
  return m->model.feature_names[i].c_str();
}

ews_status ews_model_predict(const ews_model* m, const double* row, size_t n, double* out) {
  if (!m || !row || !out) return invalid("NULL argument");
  return guarded([&] { *out = m->model.predict(std::span<const double>(row, n)); });
}

void ews_model_free(ews_model* m) { delete m; }

ews_status ews_service_create(const char* data_dir, const char* host, int port, const char* store, const char* types,
                              const char* epoch, ews_service** out) {
  if (!data_dir || !out) return invalid("NULL argument");
  if (port < 0 || port > 65535) return invalid("port out of range");
  *out = nullptr;
  return guarded([&] {
    ews::service::ServiceConfig c;
    c.data_dir = data_dir;
    if (host) c.host = host;
    c.port = port;
    if (store) c.annotation_store = store;
    if (types) c.annotation_types = types;
    if (epoch) c.epoch = epoch;
    auto s = std::make_unique<ews_service>();
    s->svc = std::make_unique<ews::service::MonitorService>(c);
    *out = s.release();
  });
}

ews_status ews_service_start(ews_service* s, int* port_out) {
  if (!s) return invalid("NULL argument");
  return guarded([&] {
    const int p = s->svc->start();
    if (port_out) *port_out = p;
  });
}

ews_status ews_service_run(ews_service* s, int* port_out) {
  if (!s) return invalid("NULL argument");
  return guarded([&] {
    const int p = s->svc->bind();
    if (port_out) *port_out = p;
    s->svc->listen();
  });
}

void ews_service_stop(ews_service* s) {
  if (s) s->svc->stop();
}

void ews_service_free(ews_service* s) { delete s; }

}  // extern "C"
