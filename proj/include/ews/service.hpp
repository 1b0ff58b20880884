#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "ews/error.hpp"
#include "ews/json_schema.hpp"

namespace ews::service {

struct AnnotationTypeDef {
  std::string name;
  nlohmann::json schema = nlohmann::json::object();
  std::string color;
};

// Reads `[{name, color, schema}, ...]`; rejects duplicate names and schemas
// using unsupported keywords.
std::vector<AnnotationTypeDef> load_annotation_types(const std::filesystem::path& path);
std::vector<AnnotationTypeDef> parse_annotation_types(const nlohmann::json& doc);

struct Annotation {
  std::string annotation_id;
  std::string stay_id;
  std::string type;
  std::int64_t start_s = 0;
  std::int64_t end_s = 0;
  std::string label;
  nlohmann::json metadata = nlohmann::json::object();
  std::optional<std::string> color;
  std::string created_at;
  std::string updated_at;
  std::int64_t version = 1;

  // `epoch_s` adds ISO `start`/`end` alongside the second offsets.
  nlohmann::json to_json(std::optional<std::int64_t> epoch_s = std::nullopt) const;
  static Annotation from_json(const nlohmann::json& j);
};

class ValidationError : public Error {
public:
  explicit ValidationError(std::vector<schema::FieldError> fields);
  const std::vector<schema::FieldError>& fields() const { return fields_; }

private:
  std::vector<schema::FieldError> fields_;
};

struct AnnotationQuery {
  std::optional<std::string> stay_id;
  std::optional<std::string> type;
  std::optional<std::int64_t> from_s;  // keep annotations overlapping [from_s, to_s]
  std::optional<std::int64_t> to_s;
  std::string sort = "start_s";        // start_s | end_s | type | created_at | label; '-' prefix reverses
};

// One JSON file per stay under `dir`, replaced by write-then-rename with an
// fsync before the rename. Writers are serialized; readers run concurrently.
class AnnotationStore {
public:
  AnnotationStore(std::filesystem::path dir, std::vector<AnnotationTypeDef> types);

  // Throws ValidationError (kSchema) on payload problems.
  Annotation create(const std::string& stay_id, const nlohmann::json& payload);
  std::optional<Annotation> get(const std::string& annotation_id) const;
  // The payload must carry the `version` it was based on; a stale version
  // throws kConflict. Absent fields keep their stored value.
  Annotation update(const std::string& annotation_id, const nlohmann::json& payload);
  // kNotFound for unknown ids; kConflict when `version` is given and stale.
  void remove(const std::string& annotation_id, std::optional<std::int64_t> version = std::nullopt);
  std::vector<Annotation> list(const AnnotationQuery& query) const;
  // Every annotation ordered by (stay_id, start_s, annotation_id).
  std::vector<Annotation> export_all() const;

  const std::vector<AnnotationTypeDef>& types() const { return types_; }

private:
  void validate(const Annotation& a) const;
  void persist(const std::string& stay_id);
  std::string new_id();

  std::filesystem::path dir_;
  std::vector<AnnotationTypeDef> types_;
  std::map<std::string, std::vector<Annotation>> by_stay_;
  std::map<std::string, std::string> stay_of_;
  mutable std::shared_mutex mutex_;
  std::uint64_t counter_ = 0;
};

// Min/max-preserving decimation: splits the points into max_points/2
// consecutive groups and keeps each group's minimum and maximum in time
// order. Returns indices into the input.
std::vector<std::size_t> decimate_min_max(const std::vector<double>& values, std::size_t max_points);

struct ServiceConfig {
  std::filesystem::path data_dir;          // pipeline run directory
  std::string host = "127.0.0.1";
  int port = 8080;                         // 0 picks a free port
  std::filesystem::path annotation_store;  // empty: <data_dir>/annotations
  std::filesystem::path annotation_types;  // empty: bundled registry
  std::string epoch = "2020-01-01T00:00:00Z";
  std::int64_t grid_step_s = 300;
  int threads = 8;
};

class MonitorService {
public:
  // Throws kIo when the data directory is unreadable.
  explicit MonitorService(ServiceConfig config);
  ~MonitorService();
  MonitorService(const MonitorService&) = delete;
  MonitorService& operator=(const MonitorService&) = delete;

  // Binds the listening socket and returns the port; kIo when busy.
  int bind();
  // Serves until stop(); bind() must have succeeded.
  void listen();
  // bind() + listen() on a background thread.
  int start();
  void stop();
  int port() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ews::service
