#include "nodegam/entmax.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "kernels_detail.hpp"
#include "nodegam/kernels.hpp"

namespace nodegam {
namespace {

// Exact sorted-threshold solve on the half scale. `y` holds the shifted
// candidate values (z_i - z_max)/(2T), all in [-1, 0]; entries below -1
// can never enter the support (s_i = y_i - tau <= 1 forces tau >= -1).
double solve_tau(std::vector<double>& y) {
  std::sort(y.begin(), y.end(), std::greater<double>());
  double cum = 0.0, cumsq = 0.0;
  double tau = 0.0;
  for (std::size_t k = 1; k <= y.size(); ++k) {
    const double v = y[k - 1];
    cum += v;
    cumsq += v * v;
    const double kk = static_cast<double>(k);
    double ss = cumsq - cum * cum / kk;
    if (ss < 0.0) ss = 0.0;
    const double delta = (1.0 - ss) / kk;
    if (delta < 0.0) break;  // variance too large: support cannot reach k
    const double tau_k = cum / kk - std::sqrt(delta);
    if (tau_k <= v) tau = tau_k;  // predicate is monotone in k
  }
  return tau;
}

std::vector<double> entmax15_impl(std::span<const double> z,
                                  std::span<const std::uint8_t> allowed,
                                  double temperature) {
  const std::size_t n = z.size();
  std::vector<double> p(n, 0.0);

  // Find the argmax over allowed entries; lowest index wins ties.
  std::size_t best = n;
  for (std::size_t i = 0; i < n; ++i) {
    if (!allowed.empty() && !allowed[i]) continue;
    if (std::isnan(z[i]) || z[i] == std::numeric_limits<double>::infinity())
      throw std::invalid_argument("entmax15: non-finite input");
    if (z[i] == -std::numeric_limits<double>::infinity()) continue;
    if (best == n || z[i] > z[best]) best = i;
  }
  if (best == n) throw std::invalid_argument("entmax15: no admissible entries");

  if (temperature == 0.0) {
    p[best] = 1.0;
    return p;
  }
  if (temperature < 0.0) throw std::invalid_argument("entmax15: negative temperature");

  const double zmax = z[best];
  const double scale = 2.0 * temperature;

  // Shifted half-scale values; only entries within 1 of the shifted max can
  // carry mass. The shift makes the output an exact function of the raw
  // logit differences, so adding a constant to z cannot change the result.
  std::vector<double> y;
  std::vector<std::size_t> idx;
  y.reserve(n);
  idx.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!allowed.empty() && !allowed[i]) continue;
    if (z[i] == -std::numeric_limits<double>::infinity()) continue;
    const double yi = (z[i] - zmax) / scale;
    if (yi >= -1.0) {
      y.push_back(yi);
      idx.push_back(i);
    }
  }

  std::vector<double> sorted = y;
  const double tau = solve_tau(sorted);
  for (std::size_t j = 0; j < y.size(); ++j) {
    const double s = y[j] - tau;
    if (s > 0.0) p[idx[j]] = s * s;
  }
  return p;
}

}  // namespace

std::vector<double> entmax15(std::span<const double> z, double temperature) {
  for (double v : z)
    if (!std::isfinite(v)) throw std::invalid_argument("entmax15: non-finite input");
  if (z.empty()) throw std::invalid_argument("entmax15: empty input");
  return entmax15_impl(z, {}, temperature);
}

std::vector<double> entmax15_masked(std::span<const double> z,
                                    std::span<const std::uint8_t> allowed,
                                    double temperature) {
  if (z.size() != allowed.size())
    throw std::invalid_argument("entmax15_masked: mask length mismatch");
  return entmax15_impl(z, allowed, temperature);
}

std::vector<double> entmax15_vjp(std::span<const double> probs,
                                 std::span<const double> upstream) {
  if (probs.size() != upstream.size())
    throw std::invalid_argument("entmax15_vjp: length mismatch");
  const std::size_t n = probs.size();
  std::vector<double> s(n, 0.0);
  double s_sum = 0.0, su = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (probs[i] > 0.0) {
      s[i] = std::sqrt(probs[i]);
      s_sum += s[i];
      su += s[i] * upstream[i];
    }
  }
  std::vector<double> out(n, 0.0);
  if (s_sum == 0.0) return out;
  const double ratio = su / s_sum;
  for (std::size_t i = 0; i < n; ++i)
    if (s[i] > 0.0) out[i] = s[i] * (upstream[i] - ratio);
  return out;
}

double entmoid15(double x) {
  if (std::isnan(x)) throw std::invalid_argument("entmoid15: non-finite input");
  return kernels::entmoid_scalar(x);
}

double entmoid15_grad(double x) {
  if (std::isnan(x)) throw std::invalid_argument("entmoid15_grad: non-finite input");
  return kernels::entmoid_grad_scalar(x);
}

Matrix dropout(const Matrix& m, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return m;
  Matrix out = m;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& v : out.flat()) v = rng.bernoulli(rate) ? 0.0 : v * keep_scale;
  return out;
}

std::vector<double> dropout_mask(std::size_t n, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw std::invalid_argument("dropout_mask: rate must be in [0, 1)");
  std::vector<double> mask(n, 1.0);
  if (rate == 0.0) return mask;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& v : mask) v = rng.bernoulli(rate) ? 0.0 : keep_scale;
  return mask;
}

}  // namespace nodegam
