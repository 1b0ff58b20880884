#pragma once

#include <span>
#include <string>
#include <string_view>

namespace ews::vars {

// Channel identifiers of the 25-variable set plus the auxiliary ABGA
// channels the PaO2 estimators consume.
inline constexpr std::string_view kFio2 = "fio2";                  // ventilator FiO2, %
inline constexpr std::string_view kSpo2 = "spo2";                  // %
inline constexpr std::string_view kSuppO2 = "supp_o2";             // l/min
inline constexpr std::string_view kPao2 = "pao2";                  // mmHg
inline constexpr std::string_view kSuppFio2Pct = "supp_fio2_pct";  // %
inline constexpr std::string_view kSao2 = "sao2";                  // %
inline constexpr std::string_view kGcsEye = "gcs_eye";
inline constexpr std::string_view kGcsVerbal = "gcs_verbal";
inline constexpr std::string_view kPeritonealDialysis = "peritoneal_dialysis";
inline constexpr std::string_view kPeakPressure = "peak_pressure";
inline constexpr std::string_view kSpontBreathing = "spont_breathing";
inline constexpr std::string_view kAdmissionOrigin = "admission_origin";  // static
inline constexpr std::string_view kGcsMotor = "gcs_motor";
inline constexpr std::string_view kWeight = "weight";  // static
inline constexpr std::string_view kVentModeGroup = "vent_mode_group";
inline constexpr std::string_view kRass = "rass";
inline constexpr std::string_view kAge = "age";  // static
inline constexpr std::string_view kExtubation = "extubation";
inline constexpr std::string_view kTracheotomy = "tracheotomy";
inline constexpr std::string_view kSt2 = "st2";
inline constexpr std::string_view kRespRate = "resp_rate";
inline constexpr std::string_view kPeep = "peep";
inline constexpr std::string_view kUrineOut = "urine_out";
inline constexpr std::string_view kFio2Estimate = "fio2_est";  // derived, fraction
inline constexpr std::string_view kVentState = "vent_state";

inline constexpr std::string_view kPh = "ph";  // auxiliary ABGA field

inline constexpr std::string_view kStatics[] = {kAge, kWeight, kAdmissionOrigin};

// Time-series channels written by the synthetic generator and accepted by
// the loader without a warning.
std::span<const std::string_view> measured_channels();

bool is_known_channel(std::string_view id);

}  // namespace ews::vars
