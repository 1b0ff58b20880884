#pragma once

namespace ews::oxygen {

// Severinghaus dissociation curve: S(p) = 1 / (23400 / (p^3 + 150 p) + 1).
// pao2 in mmHg, result a saturation fraction in (0, 1). Throws kDomain for
// pao2 <= 0.
double severinghaus_sao2(double pao2);

// Closed-form inverse of severinghaus_sao2 (Ellis). Solves
// p^3 + 150 p - K = 0 with K = 23400 s / (1 - s) by Cardano's formula:
// p = cbrt(B + A) - cbrt(B - A), A = K / 2, B = sqrt(50^3 + A^2).
// Throws kDomain unless 0 < sao2 < 1.
double ellis_pao2(double sao2);

}  // namespace ews::oxygen
