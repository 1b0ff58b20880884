#pragma once

#include <cstdint>
#include <json.hpp>

#include "ews/cohort.hpp"

namespace ews::synth {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

// Synthetic ICU cohort. Each stay has a hidden P/F trajectory; failure stays
// carry planted episodes (P/F below 200) preceded by a gradual decline with
// rising respiratory rate and more frequent blood gases. Clinicians titrate
// oxygen from the hourly P/F, so SpO2 stays near normal while FiO2 climbs.
struct ScenarioConfig {
  int n_stays = 50;
  Range length_h{24, 168};
  double failure_fraction = 0.35;
  double second_episode_prob = 0.2;
  double ventilated_fraction = 0.4;
  double confounder_rate_per_day = 0.6;  // non-failing dips to about 240 mmHg
  Range baseline_pf{300, 450};
  Range precursor_h{6, 12};
  Range floor_pf{120, 170};
  Range failure_h{3, 10};
  Range recovery_h{2, 4};
  Range confounder_floor_pf{225, 260};
  double spo2_noise_sd = 1.0;  // percentage points
  double pao2_noise_sd = 3.0;  // mmHg
  double abga_interval_h = 4.0;
  double abga_interval_deteriorating_h = 1.0;
  std::int64_t grid_step_s = 300;

  static ScenarioConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

GriddedStay generate_stay(const ScenarioConfig& cfg, std::uint64_t seed, int index);
Cohort generate_cohort(const ScenarioConfig& cfg, std::uint64_t seed, int jobs = 1);

}  // namespace ews::synth
