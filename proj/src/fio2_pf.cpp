#include "ews/fio2_pf.hpp"

#include <algorithm>
#include <fstream>

#include "ews/error.hpp"
#include "ews/oxygen_curve.hpp"
#include "ews/variables.hpp"

namespace ews::oxygen {

namespace {

Fio2Table::Row row(int l, int pct) { return {l, pct / 100.0}; }

}  // namespace

const Fio2Table& Fio2Table::builtin() {
  static const Fio2Table table = [] {
    Fio2Table t;
    t.rows_ = {row(1, 26),  row(2, 34),  row(3, 39),  row(4, 45),  row(5, 49),
               row(6, 54),  row(7, 57),  row(8, 58),  row(9, 63),  row(10, 66),
               row(11, 67), row(12, 69), row(13, 70), row(14, 73), row(15, 75)};
    t.overflow_ = 75 / 100.0;
    return t;
  }();
  return table;
}

Fio2Table Fio2Table::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open FiO2 table " + path.string());
  std::string line;
  std::getline(in, line);
  if (trim(line) != "liters,fio2_percent") {
    fail(ErrorCode::kParse, path.string() + ": expected header 'liters,fio2_percent'");
  }
  Fio2Table t;
  bool have_overflow = false;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split(trim(line), ',');
    auto where = path.string() + ":" + std::to_string(lineno);
    if (cells.size() != 2) fail(ErrorCode::kParse, where + ": expected 2 fields");
    double pct = 0;
    if (!parse_double(trim(cells[1]), pct) || pct < 21 || pct > 100) {
      fail(ErrorCode::kParse, where + ": bad fio2_percent '" + cells[1] + "'");
    }
    auto key = trim(cells[0]);
    if (!key.empty() && key[0] == '>') {
      t.overflow_ = pct / 100.0;
      have_overflow = true;
      continue;
    }
    std::int64_t liters = 0;
    if (!parse_int64(key, liters) || liters != static_cast<std::int64_t>(t.rows_.size()) + 1) {
      fail(ErrorCode::kParse, where + ": litre keys must run 1, 2, 3, ... without gaps");
    }
    t.rows_.push_back({static_cast<int>(liters), pct / 100.0});
  }
  if (t.rows_.empty()) fail(ErrorCode::kParse, path.string() + ": no table rows");
  if (!have_overflow) t.overflow_ = t.rows_.back().fio2;
  return t;
}

double Fio2Table::lookup(double liters) const {
  if (is_missing(liters) || liters <= 0) return kAmbientFio2;
  const double rounded = std::floor(liters + 0.5);
  if (rounded < 1) return kAmbientFio2;  // below half a litre
  if (rounded > rows_.back().liters) return overflow_;
  return rows_[static_cast<std::size_t>(rounded) - 1].fio2;
}

Fio2Estimate estimate_fio2(const OxygenationState& state, const Fio2Table& table) {
  Fio2Estimate out;
  if (state.ventilated) {
    const double f = state.ventilator_fio2;
    if (!is_missing(f) && f >= kAmbientFio2 && f <= 1.0) {
      out.fio2 = f;
      return out;
    }
    out.data_quality_flag = true;
  }
  out.fio2 = table.lookup(state.supplemental_o2);
  return out;
}

namespace {

double grid_value(const GriddedStay& stay, std::string_view id, std::size_t i) {
  const auto* ch = stay.channel(id);
  if (!ch || i >= ch->values.size()) return kMissing;
  return ch->values[i];
}

// Index of the last raw sample at or before t, or -1.
std::ptrdiff_t last_at_or_before(const std::vector<TimedValue>& raw, std::int64_t t) {
  auto it = std::upper_bound(raw.begin(), raw.end(), t,
                             [](std::int64_t v, const TimedValue& tv) { return v < tv.time_s; });
  return static_cast<std::ptrdiff_t>(it - raw.begin()) - 1;
}

double last_value(const std::vector<TimedValue>* raw, std::int64_t t) {
  if (!raw) return kMissing;
  auto k = last_at_or_before(*raw, t);
  return k < 0 ? kMissing : (*raw)[static_cast<std::size_t>(k)].value;
}

}  // namespace

Pao2Track pao2_track(const GriddedStay& stay, const Pao2TrackOptions& options) {
  if (options.estimator != EstimatorKind::kPnl && options.model == nullptr) {
    fail(ErrorCode::kConfig, "estimator '" + std::string(estimator_name(options.estimator)) + "' needs a trained model");
  }
  const std::size_t n = stay.grid_size();
  Pao2Track track;
  track.pao2.assign(n, kMissing);
  track.source.assign(n, Pao2Source::kMissing);
  const auto* pao2_raw = stay.raw_channel(vars::kPao2);
  const auto* sao2_raw = stay.raw_channel(vars::kSao2);
  const auto* ph_raw = stay.raw_channel(vars::kPh);

  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t t = stay.grid_time(i);
    if (pao2_raw) {
      auto k = last_at_or_before(*pao2_raw, t);
      if (k >= 0 && t - (*pao2_raw)[static_cast<std::size_t>(k)].time_s <= options.freshness_s) {
        track.pao2[i] = (*pao2_raw)[static_cast<std::size_t>(k)].value;
        track.source[i] = Pao2Source::kMeasured;
        continue;
      }
    }
    const double spo2_pct = grid_value(stay, vars::kSpo2, i);
    if (is_missing(spo2_pct)) continue;
    const double sat = spo2_pct / 100.0;
    double est = kMissing;
    if (options.estimator == EstimatorKind::kPnl) {
      est = pnl_estimate(sat);
    } else {
      Pao2Example ex;
      ex.set(AbgaField::kSpo2, sat);
      ex.set(AbgaField::kSao2, sat);
      ex.set(AbgaField::kLastPao2, last_value(pao2_raw, t));
      const double last_sao2 = last_value(sao2_raw, t);
      ex.set(AbgaField::kLastSao2, is_missing(last_sao2) ? kMissing : last_sao2 / 100.0);
      ex.set(AbgaField::kLastPh, last_value(ph_raw, t));
      est = options.model->predict(ex, SaturationSource::kSpo2);
      if (is_missing(est)) est = pnl_estimate(sat);
    }
    if (is_missing(est)) continue;
    track.pao2[i] = std::max(est, 1.0);
    track.source[i] = Pao2Source::kEstimated;
  }
  return track;
}

std::vector<double> fio2_track(const GriddedStay& stay, const Fio2Table& table,
                               std::vector<std::uint8_t>* quality_flags) {
  const std::size_t n = stay.grid_size();
  std::vector<double> out(n);
  if (quality_flags) quality_flags->assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    OxygenationState st;
    const double vent = grid_value(stay, vars::kVentState, i);
    st.ventilated = !is_missing(vent) && vent > 0.5;
    const double fio2_pct = grid_value(stay, vars::kFio2, i);
    st.ventilator_fio2 = is_missing(fio2_pct) ? kMissing : fio2_pct / 100.0;
    st.supplemental_o2 = grid_value(stay, vars::kSuppO2, i);
    auto est = estimate_fio2(st, table);
    out[i] = est.fio2;
    if (quality_flags) (*quality_flags)[i] = est.data_quality_flag ? 1 : 0;
  }
  return out;
}

PfTrack pf_track(const GriddedStay& stay, const Pao2TrackOptions& options, const Fio2Table& table) {
  PfTrack pf;
  auto p = pao2_track(stay, options);
  pf.pao2_est = std::move(p.pao2);
  pf.pao2_source = std::move(p.source);
  pf.fio2_est = fio2_track(stay, table, &pf.fio2_quality_flag);
  const std::size_t n = pf.pao2_est.size();
  pf.pf.assign(n, kMissing);
  pf.ventilated.assign(n, 0);
  pf.peep.assign(n, kMissing);
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_missing(pf.pao2_est[i])) pf.pf[i] = pf.pao2_est[i] / pf.fio2_est[i];
    const double vent = grid_value(stay, vars::kVentState, i);
    pf.ventilated[i] = (!is_missing(vent) && vent > 0.5) ? 1 : 0;
    pf.peep[i] = grid_value(stay, vars::kPeep, i);
  }
  return pf;
}

void add_fio2_channel(GriddedStay& stay, const Fio2Table& table) {
  GriddedChannel ch;
  ch.values = fio2_track(stay, table);
  ch.is_real.assign(ch.values.size(), 0);
  const auto* fio2 = stay.channel(vars::kFio2);
  const auto* supp = stay.channel(vars::kSuppO2);
  for (std::size_t i = 0; i < ch.values.size(); ++i) {
    const bool real = (fio2 && fio2->is_real[i]) || (supp && supp->is_real[i]);
    ch.is_real[i] = real ? 1 : 0;
  }
  stay.gridded[std::string(vars::kFio2Estimate)] = std::move(ch);
}

}  // namespace ews::oxygen
