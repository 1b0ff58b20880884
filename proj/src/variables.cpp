#include "ews/variables.hpp"

#include <algorithm>
#include <array>

namespace ews::vars {

namespace {
constexpr std::array<std::string_view, 23> kMeasured = {
    kFio2,       kSpo2,           kSuppO2,    kPao2,      kSuppFio2Pct, kSao2,
    kGcsEye,     kGcsVerbal,      kPeritonealDialysis,    kPeakPressure, kSpontBreathing,
    kGcsMotor,   kVentModeGroup,  kRass,      kExtubation, kTracheotomy, kSt2,
    kRespRate,   kPeep,           kUrineOut,  kVentState, kPh,          kFio2Estimate,
};
}  // namespace

std::span<const std::string_view> measured_channels() {
  // fio2_est is derived, not measured; it is listed last so callers can drop it.
  return std::span<const std::string_view>(kMeasured.data(), kMeasured.size() - 1);
}

bool is_known_channel(std::string_view id) {
  return std::find(kMeasured.begin(), kMeasured.end(), id) != kMeasured.end();
}

}  // namespace ews::vars
