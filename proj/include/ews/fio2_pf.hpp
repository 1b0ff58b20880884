#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ews/cohort.hpp"
#include "ews/pao2.hpp"

namespace ews::oxygen {

struct OxygenationState {
  bool ventilated = false;
  double ventilator_fio2 = kMissing;  // fraction
  double supplemental_o2 = kMissing;  // l/min
};

struct Fio2Estimate {
  double fio2 = 0.21;
  bool data_quality_flag = false;  // ventilated but no usable ventilator FiO2
};

inline constexpr double kAmbientFio2 = 0.21;

// Supplemental oxygen flow (l/min) to FiO2 lookup. Flows are rounded to the
// nearest litre (ties up); anything above the last keyed row uses the
// overflow value.
class Fio2Table {
 public:
  struct Row {
    int liters = 0;
    double fio2 = 0.0;  // fraction
  };

  static const Fio2Table& builtin();
  // CSV `liters,fio2_percent`; the final row may be keyed `>N`.
  static Fio2Table load(const std::filesystem::path& path);

  double lookup(double liters) const;
  const std::vector<Row>& rows() const { return rows_; }
  double overflow_fio2() const { return overflow_; }

 private:
  std::vector<Row> rows_;  // sorted by liters, contiguous from 1
  double overflow_ = 0.75;
};

// Ventilated with a recorded FiO2: that value. Otherwise the supplemental
// flow via the table, otherwise ambient air. Always >= 0.21.
Fio2Estimate estimate_fio2(const OxygenationState& state, const Fio2Table& table = Fio2Table::builtin());

enum class Pao2Source : std::uint8_t { kMissing, kMeasured, kEstimated };

struct Pao2TrackOptions {
  EstimatorKind estimator = EstimatorKind::kPnl;
  const Pao2Model* model = nullptr;  // required for the network estimators
  std::int64_t freshness_s = 1800;
};

struct Pao2Track {
  std::vector<double> pao2;
  std::vector<Pao2Source> source;
};

// Per grid point: a real PaO2 no older than the freshness horizon, else the
// estimator applied to the current SpO2. The Full-NN falls back to the
// pnl-baseline where the most recent ABGA fields are unavailable.
Pao2Track pao2_track(const GriddedStay& stay, const Pao2TrackOptions& options);

struct PfTrack {
  std::vector<double> pao2_est;
  std::vector<Pao2Source> pao2_source;
  std::vector<double> fio2_est;
  std::vector<double> pf;
  std::vector<std::uint8_t> fio2_quality_flag;
  std::vector<std::uint8_t> ventilated;
  std::vector<double> peep;  // forward-filled, NaN when never recorded

  std::size_t size() const { return pf.size(); }
};

std::vector<double> fio2_track(const GriddedStay& stay, const Fio2Table& table = Fio2Table::builtin(),
                               std::vector<std::uint8_t>* quality_flags = nullptr);

PfTrack pf_track(const GriddedStay& stay, const Pao2TrackOptions& options,
                 const Fio2Table& table = Fio2Table::builtin());

// Adds the derived `fio2_est` channel (fraction) to the gridded stay.
void add_fio2_channel(GriddedStay& stay, const Fio2Table& table = Fio2Table::builtin());

}  // namespace ews::oxygen
