#pragma once

// Independent oracles used by the test and acceptance suites. These stay
// deliberately separate from the library implementations they check.

#include <algorithm>
#include <cmath>
#include <vector>

namespace nodegam::testing {

// Bisection on the half-scale threshold: find tau with
// sum_i max(z_i/(2T) - tau, 0)^2 = 1 (monotone decreasing in tau), then
// p_i = max(z_i/(2T) - tau, 0)^2.
inline std::vector<double> entmax15_bisection(const std::vector<double>& z,
                                              double temperature) {
  std::vector<double> x(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) x[i] = z[i] / (2.0 * temperature);
  const double x_max = *std::max_element(x.begin(), x.end());
  double lo = x_max - 1.0, hi = x_max;
  auto mass = [&](double tau) {
    double acc = 0.0;
    for (double v : x) {
      const double s = v - tau;
      if (s > 0.0) acc += s * s;
    }
    return acc;
  };
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mass(mid) > 1.0)
      lo = mid;
    else
      hi = mid;
  }
  const double tau = 0.5 * (lo + hi);
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double s = x[i] - tau;
    p[i] = s > 0.0 ? s * s : 0.0;
  }
  return p;
}

}  // namespace nodegam::testing
