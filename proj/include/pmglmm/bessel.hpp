#pragma once

namespace pmglmm {

/// Modified Bessel function of the second kind K_nu(x) for nu > 0, x > 0.
///
/// Half-integer orders use the closed form K_{1/2}(x) = sqrt(pi/(2x)) e^-x
/// with the three-term upward recurrence; other orders use the Temme series
/// for x <= 2 and a Steed continued fraction for x > 2, then recurrence up.
/// Relative accuracy is better than 1e-12 on nu in (0, 5], x in (0, 100].
double bessel_k(double nu, double x);

}  // namespace pmglmm
