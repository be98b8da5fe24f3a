#pragma once

namespace nodegam {

/// Standard normal CDF.
double norm_cdf(double x);

/// Inverse standard normal CDF (rational approximation polished with one
/// Halley step; accurate to ~1e-15 on (0, 1)). p outside (0, 1) clamps to
/// +/-inf at the limits.
double norm_ppf(double p);

}  // namespace nodegam
