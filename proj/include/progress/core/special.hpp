#pragma once

namespace progress::special {

/// Standard normal CDF.
double normal_cdf(double x);

/// Standard normal quantile, accurate to ~1e-15 (Acklam start + Halley refinement).
double normal_quantile(double p);

/// Regularized upper incomplete gamma Q(a, x).
double gamma_q(double a, double x);

/// Upper tail of the chi-square distribution with `df` degrees of freedom.
double chi_square_sf(double x, double df);

/// Two-sided 95% normal quantile used for all nominal-95% intervals.
inline constexpr double kZ975 = 1.959963984540054;

}  // namespace progress::special
