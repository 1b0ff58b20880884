#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ews/util.hpp"

namespace ews::oxygen {

// Named inputs available to the PaO2 estimators. Saturations are fractions.
enum class AbgaField : int {
  kSao2 = 0,          // current SaO2 (ABGA, precise)
  kSpo2,              // current SpO2 (pulse oximetry)
  kEtco2Mean10min,
  kTemperatureMean4h,
  kLastSao2,
  kLastPh,
  kLastFio2,
  kLastPao2,
  kLastHb,
  kLastMethb,
  kLastCohb,
  kLastPco2,
  kLastBe,
  kLastHco3,
  kLastLactate,
  kCount,
};

inline constexpr std::size_t kNumAbgaFields = static_cast<std::size_t>(AbgaField::kCount);

std::string_view field_name(AbgaField f);
std::optional<AbgaField> field_from_name(std::string_view name);

// The variable set the Full-NN starts from before backward selection.
std::vector<std::string> full_nn_initial_inputs();
// The four inputs the selection retained on the clinical data.
std::vector<std::string> full_nn_default_inputs();
std::vector<std::string> spo2_nn_inputs();

// One ABGA sample prepared for PaO2 estimation.
struct Pao2Example {
  std::string group_id;  // stay the sample came from; folds never split a group
  std::int64_t time_s = 0;
  double target_pao2 = kMissing;  // mmHg
  double fio2 = kMissing;         // concurrent FiO2 fraction, for P/F evaluation
  double last_abga_age_s = kMissing;
  double weight = 1.0;
  std::array<double, kNumAbgaFields> fields{};

  Pao2Example() { fields.fill(kMissing); }
  double get(AbgaField f) const { return fields[static_cast<std::size_t>(f)]; }
  void set(AbgaField f, double v) { fields[static_cast<std::size_t>(f)] = v; }
};

struct AbgaFilterConfig {
  double min_pao2 = 40.0;
  double max_pao2 = 250.0;
  double max_last_abga_age_s = 24.0 * 3600.0;
};

struct AbgaFilterReport {
  std::size_t kept = 0;
  std::size_t removed_pao2_range = 0;
  std::size_t removed_abga_age = 0;
};

// Keeps samples with min_pao2 <= pao2 <= max_pao2 and a last ABGA no older
// than max_last_abga_age_s (both bounds inclusive). A sample failing the
// range rule is counted there even if it also fails the age rule.
std::vector<Pao2Example> filter_abga_dataset(std::span<const Pao2Example> samples,
                                             const AbgaFilterConfig& config = {},
                                             AbgaFilterReport* report = nullptr);

// Saturation rounded to 0.1 percentage points, as an integer key.
std::int64_t saturation_key(double sao2_fraction);

// 1 / c^gamma with c the number of training examples sharing the sample's
// discretised SaO2. gamma absent means unweighted.
double example_weight(double sao2_value, std::span<const Pao2Example> training_set,
                      std::optional<double> gamma);

// Fills Pao2Example::weight for the whole training set in one pass.
void assign_example_weights(std::vector<Pao2Example>& training_set, std::optional<double> gamma);

// Synthetic ABGA generator. True PaO2 is drawn from a hypoxaemia-enriched
// prior; the saturation follows the Severinghaus curve evaluated at the
// temperature/pH/PCO2-corrected (virtual) PO2; SpO2 adds pulse-oximeter
// error and is reported in whole percent; the PaO2 target carries Gaussian
// measurement noise.
struct AbgaSynthConfig {
  double target_noise_sd = 5.0;    // mmHg
  double spo2_noise_sd = 0.01;     // fraction
  bool physiological_shift = true; // apply temperature/pH/PCO2 correction
  double hypoxaemic_fraction = 0.2;
  int samples_per_group = 8;
  double fio2_min = 0.21;
  double fio2_max = 0.8;
};

std::vector<Pao2Example> generate_abga_dataset(std::uint64_t seed, std::size_t n,
                                               const AbgaSynthConfig& config = {});

}  // namespace ews::oxygen
