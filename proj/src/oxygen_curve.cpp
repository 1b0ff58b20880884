#include "ews/oxygen_curve.hpp"

#include <cmath>
#include <string>

#include "ews/error.hpp"

namespace ews::oxygen {

double severinghaus_sao2(double pao2) {
  if (!(pao2 > 0.0) || !std::isfinite(pao2)) {
    fail(ErrorCode::kDomain, "severinghaus_sao2: pao2 must be positive, got " + std::to_string(pao2));
  }
  const double cubic = pao2 * pao2 * pao2 + 150.0 * pao2;
  return 1.0 / (23400.0 / cubic + 1.0);
}

double ellis_pao2(double sao2) {
  if (!(sao2 > 0.0 && sao2 < 1.0)) {
    fail(ErrorCode::kDomain, "ellis_pao2: saturation must lie in (0, 1), got " + std::to_string(sao2));
  }
  const double a = 11700.0 * sao2 / (1.0 - sao2);
  const double b = std::sqrt(125000.0 + a * a);
  // B - A rewritten as 50^3 / (B + A) to avoid cancellation near s = 1.
  const double b_minus_a = 125000.0 / (b + a);
  return std::cbrt(b + a) - std::cbrt(b_minus_a);
}

}  // namespace ews::oxygen
