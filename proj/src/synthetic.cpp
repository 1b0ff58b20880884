#include "ews/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <random>

#include "ews/error.hpp"
#include "ews/fio2_pf.hpp"
#include "ews/oxygen_curve.hpp"
#include "ews/variables.hpp"

namespace ews::synth {

using nlohmann::json;

namespace {

Range range_from(const json& j, const char* key, Range def) {
  if (!j.contains(key)) return def;
  const auto& a = j.at(key);
  Range r{a.at(0).get<double>(), a.at(1).get<double>()};
  if (!(r.lo <= r.hi)) fail(ErrorCode::kConfig, std::string("scenario.") + key + ": lower bound above upper bound");
  return r;
}

json range_json(Range r) { return json::array({r.lo, r.hi}); }

}  // namespace

ScenarioConfig ScenarioConfig::from_json(const json& j) {
  ScenarioConfig c;
  try {
    c.n_stays = j.value("n_stays", c.n_stays);
    c.length_h = range_from(j, "length_h", c.length_h);
    c.failure_fraction = j.value("failure_fraction", c.failure_fraction);
    c.second_episode_prob = j.value("second_episode_prob", c.second_episode_prob);
    c.ventilated_fraction = j.value("ventilated_fraction", c.ventilated_fraction);
    c.confounder_rate_per_day = j.value("confounder_rate_per_day", c.confounder_rate_per_day);
    c.baseline_pf = range_from(j, "baseline_pf", c.baseline_pf);
    c.precursor_h = range_from(j, "precursor_h", c.precursor_h);
    c.floor_pf = range_from(j, "floor_pf", c.floor_pf);
    c.failure_h = range_from(j, "failure_h", c.failure_h);
    c.recovery_h = range_from(j, "recovery_h", c.recovery_h);
    c.confounder_floor_pf = range_from(j, "confounder_floor_pf", c.confounder_floor_pf);
    c.spo2_noise_sd = j.value("spo2_noise_sd", c.spo2_noise_sd);
    c.pao2_noise_sd = j.value("pao2_noise_sd", c.pao2_noise_sd);
    c.abga_interval_h = j.value("abga_interval_h", c.abga_interval_h);
    c.abga_interval_deteriorating_h = j.value("abga_interval_deteriorating_h", c.abga_interval_deteriorating_h);
    c.grid_step_s = j.value("grid_step_s", c.grid_step_s);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("scenario: ") + e.what());
  }
  if (c.n_stays < 0) fail(ErrorCode::kConfig, "scenario.n_stays must be >= 0");
  if (!(c.length_h.lo >= 6)) fail(ErrorCode::kConfig, "scenario.length_h must be at least 6 h");
  auto frac = [](double v, const char* k) {
    if (!(v >= 0 && v <= 1)) fail(ErrorCode::kConfig, std::string("scenario.") + k + " must be in [0, 1]");
  };
  frac(c.failure_fraction, "failure_fraction");
  frac(c.second_episode_prob, "second_episode_prob");
  frac(c.ventilated_fraction, "ventilated_fraction");
  if (!(c.abga_interval_h > 0) || !(c.abga_interval_deteriorating_h > 0) || c.grid_step_s <= 0) {
    fail(ErrorCode::kConfig, "scenario intervals must be positive");
  }
  return c;
}

json ScenarioConfig::to_json() const {
  return json{{"n_stays", n_stays},
              {"length_h", range_json(length_h)},
              {"failure_fraction", failure_fraction},
              {"second_episode_prob", second_episode_prob},
              {"ventilated_fraction", ventilated_fraction},
              {"confounder_rate_per_day", confounder_rate_per_day},
              {"baseline_pf", range_json(baseline_pf)},
              {"precursor_h", range_json(precursor_h)},
              {"floor_pf", range_json(floor_pf)},
              {"failure_h", range_json(failure_h)},
              {"recovery_h", range_json(recovery_h)},
              {"confounder_floor_pf", range_json(confounder_floor_pf)},
              {"spo2_noise_sd", spo2_noise_sd},
              {"pao2_noise_sd", pao2_noise_sd},
              {"abga_interval_h", abga_interval_h},
              {"abga_interval_deteriorating_h", abga_interval_deteriorating_h},
              {"grid_step_s", grid_step_s}};
}

namespace {

constexpr double kHour = 3600.0;

// Dip: decline over [a, b], floor over [b, c], linear recovery over [c, d].
// depth() is the P/F depth fraction; drive() the respiratory effort, which
// ramps up linearly from the start of the decline.
struct Dip {
  double a, b, c, d;  // seconds
  double floor;       // P/F at full depth
  bool failure;

  double depth(double t) const {
    if (t <= a || t >= d) return 0.0;
    if (t < b) {
      const double x = (t - a) / (b - a);
      return x * std::sqrt(x);  // slow start, accelerating decline
    }
    if (t <= c) return 1.0;
    return 1.0 - (t - c) / (d - c);
  }

  double drive(double t) const {
    if (t <= a || t >= d) return 0.0;
    if (t < b) return (t - a) / (b - a);
    if (t <= c) return 1.0;
    return 1.0 - (t - c) / (d - c);
  }
};

class Patient {
 public:
  Patient(const ScenarioConfig& cfg, std::mt19937_64& rng) : cfg_(cfg), rng_(rng) {}

  double uniform(Range r) { return std::uniform_real_distribution<double>(r.lo, r.hi)(rng_); }
  double normal(double m, double s) { return std::normal_distribution<double>(m, s)(rng_); }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(rng_); }

  const ScenarioConfig& cfg_;
  std::mt19937_64& rng_;
};

}  // namespace

GriddedStay generate_stay(const ScenarioConfig& cfg, std::uint64_t seed, int index) {
  std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
  Patient p(cfg, rng);

  const std::int64_t step = cfg.grid_step_s;
  const auto length_s = static_cast<std::int64_t>(std::floor(p.uniform(cfg.length_h) * kHour / static_cast<double>(step))) * step;
  const double L = static_cast<double>(length_s);
  const bool ventilated = p.bernoulli(cfg.ventilated_fraction);
  const double baseline = p.uniform(cfg.baseline_pf);

  std::vector<Dip> dips;
  auto overlaps = [&](double a, double d) {
    for (const auto& x : dips) {
      if (a < x.d + 2 * kHour && x.a < d + 2 * kHour) return true;
    }
    return false;
  };
  if (p.bernoulli(cfg.failure_fraction)) {
    const int episodes = p.bernoulli(cfg.second_episode_prob) ? 2 : 1;
    for (int e = 0; e < episodes; ++e) {
      const double pre = p.uniform(cfg.precursor_h) * kHour;
      const double dur = p.uniform(cfg.failure_h) * kHour;
      const double rec = p.uniform(cfg.recovery_h) * kHour;
      const double earliest = std::max(pre + 2 * kHour, 8 * kHour);
      const double latest = L - std::min(dur, 4 * kHour);
      if (latest <= earliest) break;
      for (int attempt = 0; attempt < 20; ++attempt) {
        const double onset = p.uniform({earliest, latest});
        if (overlaps(onset - pre, onset + dur + rec)) continue;
        // Decline reaches the floor shortly after P/F crosses 200.
        dips.push_back({onset - pre, onset + 0.5 * kHour, onset + dur, onset + dur + rec,
                        p.uniform(cfg.floor_pf), true});
        break;
      }
    }
  }
  {
    std::poisson_distribution<int> pois(cfg.confounder_rate_per_day * L / (24 * kHour));
    const int n_conf = pois(rng);
    for (int k = 0; k < n_conf; ++k) {
      const double a = p.uniform({0, std::max(1.0, L - 6 * kHour)});
      const double fall = p.uniform({2, 6}) * kHour;
      const double hold = p.uniform({1, 4}) * kHour;
      const double rise = p.uniform({1, 3}) * kHour;
      if (overlaps(a, a + fall + hold + rise)) continue;
      dips.push_back({a, a + fall, a + fall + hold, a + fall + hold + rise, p.uniform(cfg.confounder_floor_pf), false});
    }
  }
  std::sort(dips.begin(), dips.end(), [](const Dip& x, const Dip& y) { return x.a < y.a; });

  // Hourly AR(1) wobble, linearly interpolated.
  const auto n_hours = static_cast<std::size_t>(L / kHour) + 2;
  std::vector<double> wobble(n_hours);
  double w = 0;
  for (auto& v : wobble) {
    w = 0.8 * w + p.normal(0, 12);
    v = w;
  }
  auto true_pf = [&](double t) {
    const double h = t / kHour;
    const auto i = std::min(static_cast<std::size_t>(h), n_hours - 2);
    const double f = h - static_cast<double>(i);
    double pf = baseline + (1 - f) * wobble[i] + f * wobble[i + 1];
    for (const auto& d : dips) {
      const double depth = d.depth(t);
      if (depth > 0) pf = pf + depth * (d.floor - pf);
    }
    return std::max(pf, 60.0);
  };
  auto deterioration = [&](double t) {  // 0..1, failure precursors and episodes only
    double v = 0;
    for (const auto& d : dips) {
      if (d.failure) v = std::max(v, d.depth(t));
    }
    return v;
  };
  auto drive = [&](double t) {
    double v = 0;
    for (const auto& d : dips) {
      if (d.failure) v = std::max(v, d.drive(t));
    }
    return v;
  };
  auto mild = [&](double t) {
    double v = 0;
    for (const auto& d : dips) {
      if (!d.failure) v = std::max(v, d.depth(t));
    }
    return v;
  };

  // Clinician oxygen titration: hourly decisions from the P/F one lag earlier.
  const auto& table = oxygen::Fio2Table::builtin();
  auto choose = [&](double pf) {
    const double need = std::clamp(80.0 / pf, 0.21, 1.0);
    struct Setting {
      double fio2;
      double liters;
    } s{0.21, 0.0};
    if (ventilated) {
      s.fio2 = std::clamp(std::ceil(need * 20.0 - 1e-9) / 20.0, 0.25, 1.0);
      return s;
    }
    if (need <= 0.23) return s;
    for (const auto& row : table.rows()) {
      s = {row.fio2, static_cast<double>(row.liters)};
      if (row.fio2 >= need) break;
    }
    return s;
  };
  struct Decision {
    double t;
    double fio2;
    double liters;
  };
  std::vector<Decision> decisions;
  {
    auto s = choose(true_pf(0));
    decisions.push_back({0, s.fio2, s.liters});
    for (double t = kHour; t < L; t += kHour) {
      const double lag = p.uniform({10, 40}) * 60.0;
      auto c = choose(true_pf(t));
      decisions.push_back({std::min(t + lag, L), c.fio2, c.liters});
    }
  }
  auto setting_at = [&](double t) {
    auto it = std::upper_bound(decisions.begin(), decisions.end(), t,
                               [](double v, const Decision& d) { return v < d.t; });
    return *(it - 1);
  };

  std::vector<RawMeasurement> rows;
  auto emit = [&](std::string_view id, double t, double v) {
    const auto ts = static_cast<std::int64_t>(std::llround(t));
    if (ts < 0 || ts > length_s) return;
    rows.push_back({std::string(id), ts, v});
  };
  auto round_to = [](double v, double q) { return std::round(v / q) * q; };

  // SpO2 every 5 minutes from the true PaO2 under the current setting.
  const double spo2_phase = p.uniform({0, 299});
  for (double t = spo2_phase; t <= L; t += 300) {
    const double pao2 = true_pf(t) * setting_at(t).fio2;
    const double sat = oxygen::severinghaus_sao2(pao2) * 100.0 + p.normal(0, cfg.spo2_noise_sd);
    emit(vars::kSpo2, t, std::clamp(std::round(sat), 50.0, 100.0));
  }

  // Oxygen support records: at every decision plus hourly confirmations.
  for (const auto& d : decisions) {
    const double t = d.t + p.uniform({0, 60});
    emit(vars::kVentState, t, ventilated ? 1 : 0);
    if (ventilated) {
      emit(vars::kFio2, t, round_to(d.fio2 * 100.0, 1.0));
      emit(vars::kPeep, t, round_to(std::clamp(p.normal(8 + 4 * deterioration(t), 1.5), 5.0, 18.0), 1.0));
      emit(vars::kPeakPressure, t, round_to(p.normal(20 + 6 * deterioration(t), 3), 1.0));
      emit(vars::kVentModeGroup, t, deterioration(t) > 0.5 ? 1 : 2);
      emit(vars::kSpontBreathing, t, deterioration(t) > 0.5 ? 0 : 1);
    } else {
      emit(vars::kSuppO2, t, d.liters);
      emit(vars::kSuppFio2Pct, t, round_to(d.fio2 * 100.0, 1.0));
    }
  }

  // Arterial blood gases, more frequent while P/F is low.
  for (double t = p.uniform({0, kHour}); t <= L;) {
    const double pf = true_pf(t);
    const double fio2 = setting_at(t).fio2;
    const double pao2 = std::max(20.0, pf * fio2 + p.normal(0, cfg.pao2_noise_sd));
    emit(vars::kPao2, t, round_to(pao2, 0.1));
    emit(vars::kSao2, t, round_to(oxygen::severinghaus_sao2(pao2) * 100.0, 0.1));
    emit(vars::kPh, t, round_to(p.normal(7.40 - 0.08 * deterioration(t), 0.03), 0.01));
    const double interval = pf < 280 ? cfg.abga_interval_deteriorating_h : cfg.abga_interval_h;
    t += interval * kHour * p.uniform({0.7, 1.3});
  }

  // Respiratory rate rises ahead of failure.
  const double rr_base = p.normal(17, 2.5);
  for (double t = p.uniform({0, 600}); t <= L; t += p.uniform({480, 720})) {
    const double rr = rr_base + 7 * drive(t) + 4 * mild(t) + p.normal(0, 2.5);
    emit(vars::kRespRate, t, round_to(std::max(rr, 6.0), 1.0));
  }

  // Hourly and sparse neurological / renal / lab channels, mostly noise.
  const double st2_base = std::exp(p.normal(std::log(30.0), 0.4));
  const double pd = p.bernoulli(0.05) ? 1 : 0;
  for (double t = p.uniform({0, kHour}); t <= L; t += kHour * p.uniform({0.8, 1.2})) {
    const double det = deterioration(t);
    emit(vars::kGcsEye, t, std::clamp(std::round(p.normal(3.6 - det, 0.5)), 1.0, 4.0));
    emit(vars::kGcsVerbal, t, std::clamp(std::round(p.normal(4.3 - det, 0.7)), 1.0, 5.0));
    emit(vars::kGcsMotor, t, std::clamp(std::round(p.normal(5.6 - 0.5 * det, 0.5)), 1.0, 6.0));
    emit(vars::kRass, t, std::clamp(std::round(p.normal(ventilated ? -2.0 : 0.0, 1.0)), -5.0, 4.0));
    emit(vars::kUrineOut, t, round_to(std::max(0.0, p.normal(70 - 20 * det, 25)), 1.0));
  }
  for (double t = p.uniform({0, 12 * kHour}); t <= L; t += 24 * kHour) {
    emit(vars::kSt2, t, round_to(st2_base * p.uniform({0.8, 1.25}), 0.1));
    emit(vars::kPeritonealDialysis, t, pd);
  }
  if (p.bernoulli(0.03)) emit(vars::kTracheotomy, p.uniform({0, L}), 1);
  if (ventilated && p.bernoulli(0.15)) emit(vars::kExtubation, p.uniform({0.5 * L, L}), 1);

  std::map<std::string, double> statics;
  statics[std::string(vars::kAge)] = std::round(p.uniform({18, 90}));
  statics[std::string(vars::kWeight)] = round_to(std::clamp(p.normal(78, 15), 40.0, 180.0), 0.1);
  statics[std::string(vars::kAdmissionOrigin)] = std::floor(p.uniform({0, 5}));

  char id[32];
  std::snprintf(id, sizeof id, "stay_%05d", index);
  GriddedStay stay = make_stay(id, std::move(statics), rows, step, length_s);
  for (const auto& d : dips) {
    if (!d.failure) continue;
    // Ground truth: interval where the hidden P/F is below 200.
    std::int64_t start = -1, end = -1;
    for (double t = std::max(0.0, d.a); t <= std::min(d.d, L); t += 60) {
      if (true_pf(t) < 200) {
        if (start < 0) start = static_cast<std::int64_t>(t);
        end = static_cast<std::int64_t>(t);
      }
    }
    if (start >= 0) stay.planted.push_back({start, end});
  }
  return stay;
}

Cohort generate_cohort(const ScenarioConfig& cfg, std::uint64_t seed, int jobs) {
  Cohort c;
  c.stays.resize(static_cast<std::size_t>(cfg.n_stays));
  parallel_for(c.stays.size(), jobs, [&](std::size_t i) { c.stays[i] = generate_stay(cfg, seed, static_cast<int>(i)); });
  return c;
}

}  // namespace ews::synth
