#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace ews::pipeline {

enum class Stage { kSynth, kTrainPao2, kLabel, kFeaturize, kTrainEws, kEvaluate };

std::string_view stage_name(Stage s);
std::optional<Stage> stage_from_name(std::string_view name);
const std::vector<Stage>& all_stages();

// Pipeline configuration: one JSON document with a section per stage. Paths
// inside it are resolved against the directory of the config file.
class PipelineConfig {
 public:
  PipelineConfig();  // built-in defaults
  static PipelineConfig load(const std::filesystem::path& path);
  static PipelineConfig from_json(const nlohmann::json& doc, std::filesystem::path base_dir);

  // Sets a value by dotted key path, e.g. "scenario.n_stays"; the value is
  // JSON text. Unknown top-level sections are rejected.
  void set_override(const std::string& key_path, const std::string& json_value);

  const nlohmann::json& doc() const { return doc_; }
  nlohmann::json section(const std::string& name) const;
  std::uint64_t seed() const;
  int jobs() const;
  std::int64_t grid_step_s() const;
  std::filesystem::path resolve(const std::string& path) const;
  void validate() const;

 private:
  nlohmann::json doc_;
  std::filesystem::path base_dir_;
};

nlohmann::json default_config();

struct StageResult {
  Stage stage;
  std::string config_hash;
  std::vector<std::string> outputs;
  nlohmann::json summary;
};

// Runs stages into a run directory. Every stage records its config hash,
// which folds in the hashes of the upstream stages it consumed, in
// manifest.json. A stage refuses to run when an upstream artifact is absent
// (kMissingArtifact) or was produced under a different configuration
// (kStaleArtifact).
class Pipeline {
 public:
  Pipeline(PipelineConfig config, std::filesystem::path run_dir);

  StageResult run(Stage stage);
  std::vector<StageResult> run_all();

  std::string expected_hash(Stage stage) const;
  nlohmann::json manifest() const;
  const std::filesystem::path& run_dir() const { return run_dir_; }
  const PipelineConfig& config() const { return config_; }

 private:
  std::vector<Stage> upstream(Stage s) const;
  void check_upstream(Stage s) const;
  void mark(Stage s, const std::string& hash, bool complete, const StageResult* result);

  StageResult synth();
  StageResult train_pao2();
  StageResult label();
  StageResult featurize();
  StageResult train_ews();
  StageResult evaluate();

  PipelineConfig config_;
  std::filesystem::path run_dir_;
};

// Layout of a run directory.
namespace layout {
inline const char* kManifest = "manifest.json";
inline const char* kCohort = "cohort";
inline const char* kPao2 = "pao2";
inline const char* kLabels = "labels";
inline const char* kFeatures = "features";
inline const char* kModels = "models";
inline const char* kEval = "eval";
inline const char* kPredictions = "predictions";
inline const char* kAnnotations = "annotations";
}  // namespace layout

}  // namespace ews::pipeline
