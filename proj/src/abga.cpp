#include "ews/abga.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>

#include "ews/oxygen_curve.hpp"

namespace ews::oxygen {

namespace {
constexpr std::array<std::string_view, kNumAbgaFields> kFieldNames = {
    "sao2",      "spo2",       "etco2_mean_10min", "temperature_mean_4h", "last_sao2",
    "last_ph",   "last_fio2",  "last_pao2",        "last_hb",             "last_methb",
    "last_cohb", "last_pco2",  "last_be",          "last_hco3",           "last_lactate",
};
}  // namespace

std::string_view field_name(AbgaField f) { return kFieldNames[static_cast<std::size_t>(f)]; }

std::optional<AbgaField> field_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kFieldNames.size(); ++i) {
    if (kFieldNames[i] == name) return static_cast<AbgaField>(i);
  }
  return std::nullopt;
}

std::vector<std::string> full_nn_initial_inputs() {
  return {"sao2",      "etco2_mean_10min", "temperature_mean_4h", "last_sao2",  "last_ph",
          "last_fio2", "last_pao2",        "last_hb",             "last_methb", "last_cohb",
          "last_pco2", "last_be",          "last_hco3",           "last_lactate"};
}

std::vector<std::string> full_nn_default_inputs() {
  return {"sao2", "last_sao2", "last_pao2", "last_ph"};
}

std::vector<std::string> spo2_nn_inputs() { return {"sao2"}; }

std::vector<Pao2Example> filter_abga_dataset(std::span<const Pao2Example> samples,
                                             const AbgaFilterConfig& config,
                                             AbgaFilterReport* report) {
  AbgaFilterReport r;
  std::vector<Pao2Example> kept;
  kept.reserve(samples.size());
  for (const auto& s : samples) {
    if (!(s.target_pao2 >= config.min_pao2 && s.target_pao2 <= config.max_pao2)) {
      ++r.removed_pao2_range;
      continue;
    }
    // A missing previous ABGA counts as infinitely old.
    if (!(s.last_abga_age_s <= config.max_last_abga_age_s)) {
      ++r.removed_abga_age;
      continue;
    }
    kept.push_back(s);
  }
  r.kept = kept.size();
  if (report) *report = r;
  return kept;
}

std::int64_t saturation_key(double sao2_fraction) {
  return static_cast<std::int64_t>(std::llround(sao2_fraction * 1000.0));
}

double example_weight(double sao2_value, std::span<const Pao2Example> training_set,
                      std::optional<double> gamma) {
  if (!gamma) return 1.0;
  const std::int64_t key = saturation_key(sao2_value);
  std::size_t c = 0;
  for (const auto& ex : training_set) {
    if (saturation_key(ex.get(AbgaField::kSao2)) == key) ++c;
  }
  c = std::max<std::size_t>(c, 1);
  return 1.0 / std::pow(static_cast<double>(c), *gamma);
}

void assign_example_weights(std::vector<Pao2Example>& training_set, std::optional<double> gamma) {
  if (!gamma) {
    for (auto& ex : training_set) ex.weight = 1.0;
    return;
  }
  std::unordered_map<std::int64_t, std::size_t> counts;
  for (const auto& ex : training_set) ++counts[saturation_key(ex.get(AbgaField::kSao2))];
  for (auto& ex : training_set) {
    const auto c = counts[saturation_key(ex.get(AbgaField::kSao2))];
    ex.weight = 1.0 / std::pow(static_cast<double>(c), *gamma);
  }
}

namespace {

struct PatientState {
  double base_pao2;
  double temperature;
  double ph;
  double pco2;
  double hb;
  double fio2;
};

// Severinghaus virtual PO2: the PO2 that gives the same saturation under
// standard conditions (37 C, pH 7.40, PCO2 40 mmHg).
double virtual_po2(double pao2, double temperature, double ph, double pco2) {
  const double exponent =
      0.024 * (37.0 - temperature) + 0.40 * (ph - 7.40) + 0.06 * std::log10(40.0 / pco2);
  return pao2 * std::pow(10.0, exponent);
}

}  // namespace

std::vector<Pao2Example> generate_abga_dataset(std::uint64_t seed, std::size_t n,
                                               const AbgaSynthConfig& config) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto clamp = [](double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); };

  std::vector<Pao2Example> out;
  out.reserve(n);
  std::size_t group = 0;
  while (out.size() < n) {
    PatientState p{};
    if (u(rng) < config.hypoxaemic_fraction) {
      p.base_pao2 = 38.0 + 32.0 * u(rng);
    } else {
      p.base_pao2 = clamp(90.0 * std::exp(0.25 * z(rng)), 30.0, 400.0);
    }
    p.temperature = config.physiological_shift ? clamp(37.4 + 0.7 * z(rng), 35.0, 40.5) : 37.0;
    p.ph = config.physiological_shift ? clamp(7.37 + 0.06 * z(rng), 7.0, 7.6) : 7.40;
    p.pco2 = config.physiological_shift ? clamp(42.0 + 7.0 * z(rng), 25.0, 80.0) : 40.0;
    p.hb = clamp(10.0 + 1.5 * z(rng), 5.0, 16.0);
    p.fio2 = config.fio2_min + (config.fio2_max - config.fio2_min) * u(rng);

    const std::string gid = "abga-" + std::to_string(group++);
    // Previous ABGA the first sample refers to.
    double prev_pao2 = p.base_pao2 * std::exp(0.1 * z(rng));
    double prev_ph = p.ph + 0.02 * z(rng);
    double prev_pco2 = p.pco2 + 2.0 * z(rng);
    double prev_temp = p.temperature + 0.2 * z(rng);
    double prev_fio2 = p.fio2;
    double prev_sao2 =
        oxygen::severinghaus_sao2(virtual_po2(prev_pao2, prev_temp, prev_ph, prev_pco2));
    std::int64_t t = 0;
    for (int k = 0; k < config.samples_per_group && out.size() < n; ++k) {
      const double gap_h = u(rng) < 0.03 ? 24.0 + 12.0 * u(rng) : 0.5 + 7.5 * u(rng);
      t += static_cast<std::int64_t>(gap_h * 3600.0);

      const double pao2 = clamp(p.base_pao2 * std::exp(0.12 * z(rng)), 25.0, 500.0);
      const double ph = p.ph + 0.02 * z(rng);
      const double pco2 = clamp(p.pco2 + 2.0 * z(rng), 20.0, 90.0);
      const double temp = p.temperature + 0.2 * z(rng);
      const double fio2 = clamp(prev_fio2 + 0.05 * z(rng), 0.21, 1.0);
      const double sat = oxygen::severinghaus_sao2(virtual_po2(pao2, temp, ph, pco2));

      Pao2Example ex;
      ex.group_id = gid;
      ex.time_s = t;
      ex.target_pao2 = pao2 + config.target_noise_sd * z(rng);
      ex.fio2 = fio2;
      ex.last_abga_age_s = gap_h * 3600.0;
      ex.set(AbgaField::kSao2, std::round(sat * 1000.0) / 1000.0);
      ex.set(AbgaField::kSpo2, clamp(std::round((sat + config.spo2_noise_sd * z(rng)) * 100.0) / 100.0, 0.5, 1.0));
      ex.set(AbgaField::kEtco2Mean10min, pco2 - 5.0 + 2.0 * z(rng));
      ex.set(AbgaField::kTemperatureMean4h, temp);
      ex.set(AbgaField::kLastSao2, std::round(prev_sao2 * 1000.0) / 1000.0);
      ex.set(AbgaField::kLastPh, prev_ph);
      ex.set(AbgaField::kLastFio2, prev_fio2);
      ex.set(AbgaField::kLastPao2, prev_pao2);
      ex.set(AbgaField::kLastHb, p.hb + 0.3 * z(rng));
      ex.set(AbgaField::kLastMethb, clamp(1.0 + 0.3 * z(rng), 0.0, 5.0));
      ex.set(AbgaField::kLastCohb, clamp(1.5 + 0.5 * z(rng), 0.0, 8.0));
      ex.set(AbgaField::kLastPco2, prev_pco2);
      ex.set(AbgaField::kLastBe, 3.0 * z(rng));
      ex.set(AbgaField::kLastHco3, 24.0 + 3.0 * z(rng));
      ex.set(AbgaField::kLastLactate, std::exp(std::log(1.5) + 0.4 * z(rng)));
      out.push_back(ex);

      prev_pao2 = pao2;
      prev_ph = ph;
      prev_pco2 = pco2;
      prev_temp = temp;
      prev_fio2 = fio2;
      prev_sao2 = sat;
    }
  }
  return out;
}

}  // namespace ews::oxygen
