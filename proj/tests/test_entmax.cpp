#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "nodegam/entmax.hpp"
#include "nodegam/matrix.hpp"
#include "nodegam/rng.hpp"

using namespace nodegam;

namespace {

// Independent oracle: bisection on the threshold tau of the half-scale
// problem sum_i max(z_i/2 - tau, 0)^2 = 1 (monotone decreasing in tau).
std::vector<double> entmax15_bisection(const std::vector<double>& z, double temperature) {
  std::vector<double> x(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) x[i] = z[i] / (2.0 * temperature);
  double lo = *std::max_element(x.begin(), x.end()) - 1.0;
  double hi = *std::max_element(x.begin(), x.end());
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

std::vector<double> fd_jacobian_vjp(const std::vector<double>& z,
                                    const std::vector<double>& upstream, double h = 1e-6) {
  std::vector<double> out(z.size(), 0.0);
  for (std::size_t j = 0; j < z.size(); ++j) {
    std::vector<double> zp = z, zm = z;
    zp[j] += h;
    zm[j] -= h;
    const auto pp = entmax15(zp, 1.0);
    const auto pm = entmax15(zm, 1.0);
    for (std::size_t i = 0; i < z.size(); ++i)
      out[j] += upstream[i] * (pp[i] - pm[i]) / (2.0 * h);
  }
  return out;
}

}  // namespace

TEST_CASE("entmax15 worked examples") {
  const auto sym = entmax15(std::vector<double>{0.0, 0.0}, 1.0);
  CHECK(sym[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(sym[1] == doctest::Approx(0.5).epsilon(1e-14));

  // Two-element 1.5-entmax saturates at logit gap 2.
  const auto sat = entmax15(std::vector<double>{3.0, 0.0}, 1.0);
  CHECK(sat[0] == 1.0);
  CHECK(sat[1] == 0.0);

  // Closed form: u - v = 1/2, u^2 + v^2 = 1, p = (u^2, v^2).
  const double u = (0.5 + std::sqrt(1.75)) / 2.0;
  const auto mid = entmax15(std::vector<double>{1.0, 0.0}, 1.0);
  CHECK(mid[0] == doctest::Approx(u * u).epsilon(1e-12));
  CHECK(mid[1] == doctest::Approx(1.0 - u * u).epsilon(1e-12));

  const auto hard = entmax15(std::vector<double>{5.0, 1.0, 0.0}, 0.0);
  CHECK(hard == std::vector<double>{1.0, 0.0, 0.0});
}

TEST_CASE("entmax15 matches the bisection oracle") {
  Rng rng(123);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(30);
    std::vector<double> z(n);
    for (double& v : z) v = rng.uniform(-4.0, 4.0);
    for (double temp : {0.05, 0.3, 1.0}) {
      const auto got = entmax15(z, temp);
      const auto want = entmax15_bisection(z, temp);
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(0).scale(1).epsilon(1e-9));
        CHECK(got[i] >= 0.0);
        sum += got[i];
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("entmax15 shift invariance") {
  Rng rng(31);
  // Lattice inputs make the shifted differences exact in floating point, so
  // invariance holds bitwise.
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(8);
    std::vector<double> z(n);
    for (double& v : z) v = static_cast<double>(static_cast<int>(rng.uniform_int(512)) - 256) / 64.0;
    for (double shift : {1.0, -3.0, 42.5}) {
      std::vector<double> zs = z;
      for (double& v : zs) v += shift;
      for (double temp : {0.1, 1.0}) {
        const auto a = entmax15(z, temp);
        const auto b = entmax15(zs, temp);
        for (std::size_t i = 0; i < n; ++i) CHECK(a[i] == b[i]);
      }
    }
  }
  // Arbitrary doubles: invariance within tight tolerance.
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    std::vector<double> zs = z;
    for (double& v : zs) v += 7.25;
    const auto a = entmax15(z, 1.0);
    const auto b = entmax15(zs, 1.0);
    for (std::size_t i = 0; i < z.size(); ++i)
      CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  }
}

TEST_CASE("entmax15 annealing limit and exact zero-temperature argmax") {
  const std::vector<double> z = {0.3, 1.1, -0.5, 1.0};
  const auto hard = entmax15(z, 0.0);
  CHECK(hard == std::vector<double>{0.0, 1.0, 0.0, 0.0});
  // T -> 0+ converges to the same one-hot.
  const auto soft = entmax15(z, 1e-3);
  for (std::size_t i = 0; i < z.size(); ++i)
    CHECK(soft[i] == doctest::Approx(hard[i]).epsilon(1e-12));
  // Ties break toward the lowest index.
  const auto tie = entmax15(std::vector<double>{2.0, 2.0, 1.0}, 0.0);
  CHECK(tie == std::vector<double>{1.0, 0.0, 0.0});
}

TEST_CASE("entmax15 rejects bad input") {
  CHECK_THROWS_AS(entmax15(std::vector<double>{1.0, std::nan("")}, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      entmax15(std::vector<double>{1.0, std::numeric_limits<double>::infinity()}, 1.0),
      std::invalid_argument);
  CHECK_THROWS_AS(entmax15(std::vector<double>{}, 1.0), std::invalid_argument);
}

TEST_CASE("entmax15_vjp worked examples and finite differences") {
  // Saturated point: zero Jacobian.
  const auto zero = entmax15_vjp(std::vector<double>{1.0, 0.0}, std::vector<double>{1.0, 1.0});
  CHECK(zero == std::vector<double>{0.0, 0.0});

  {
    const std::vector<double> z = {0.0, 0.0};
    const auto probs = entmax15(z, 1.0);
    const std::vector<double> up = {1.0, 0.0};
    const auto got = entmax15_vjp(probs, up);
    const auto want = fd_jacobian_vjp(z, up);
    for (std::size_t i = 0; i < z.size(); ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-6));
  }
  {
    const std::vector<double> z = {1.0, 0.0};
    const auto probs = entmax15(z, 1.0);
    const std::vector<double> up = {1.0, -1.0};
    const auto got = entmax15_vjp(probs, up);
    const auto want = fd_jacobian_vjp(z, up);
    for (std::size_t i = 0; i < z.size(); ++i)
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-6));
  }
  CHECK_THROWS_AS(entmax15_vjp(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}),
                  std::invalid_argument);
}

TEST_CASE("entmax15_vjp gradient check at random interior points") {
  Rng rng(77);
  int checked = 0;
  while (checked < 100) {
    const std::size_t n = 2 + rng.uniform_int(6);
    std::vector<double> z(n);
    for (double& v : z) v = rng.uniform(-1.5, 1.5);
    const auto probs = entmax15(z, 1.0);
    // Stay away from support-boundary kinks.
    bool near_kink = false;
    for (double p : probs)
      if (p > 0.0 && std::sqrt(p) < 1e-3) near_kink = true;
    if (near_kink) continue;
    std::vector<double> up(n);
    for (double& v : up) v = rng.uniform(-1.0, 1.0);
    const auto got = entmax15_vjp(probs, up);
    const auto want = fd_jacobian_vjp(z, up, 1e-5);
    for (std::size_t i = 0; i < n; ++i) {
      const double denom = std::max(1.0, std::abs(want[i]));
      CHECK(std::abs(got[i] - want[i]) / denom < 1e-4);
    }
    ++checked;
  }
}

TEST_CASE("entmoid15 worked examples and exact saturation") {
  CHECK(entmoid15(0.0) == 0.5);
  CHECK(entmoid15(2.0) == 1.0);
  CHECK(entmoid15(-2.0) == 0.0);
  CHECK(entmoid15(100.0) == 1.0);
  CHECK(entmoid15(-100.0) == 0.0);
  const double u = (0.5 + std::sqrt(1.75)) / 2.0;
  CHECK(entmoid15(1.0) == doctest::Approx(u * u).epsilon(1e-14));
}

TEST_CASE("entmoid15 equals the first component of the two-class entmax") {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const double x = rng.uniform(-3.0, 3.0);
    const auto p = entmax15(std::vector<double>{x, 0.0}, 1.0);
    CHECK(entmoid15(x) == doctest::Approx(p[0]).epsilon(1e-14));
  }
}

TEST_CASE("entmoid15 symmetry is exact and it is monotone") {
  Rng rng(6);
  for (int t = 0; t < 500; ++t) {
    const double x = rng.uniform(-4.0, 4.0);
    CHECK(entmoid15(x) + entmoid15(-x) == 1.0);
  }
  double prev = -1.0;
  for (double x = -3.0; x <= 3.0; x += 0.01) {
    const double v = entmoid15(x);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("entmoid15_grad: saturation and finite differences") {
  CHECK(entmoid15_grad(3.0) == 0.0);
  CHECK(entmoid15_grad(-2.0) == 0.0);
  const double h = 1e-5;
  for (double x : {0.0, 1.0, -0.7, 1.6}) {
    const double fd = (entmoid15(x + h) - entmoid15(x - h)) / (2.0 * h);
    CHECK(entmoid15_grad(x) == doctest::Approx(fd).epsilon(1e-6));
  }
  // 100 random interior points, rel err < 1e-4, away from the +/-2 kinks.
  Rng rng(8);
  int checked = 0;
  while (checked < 100) {
    const double x = rng.uniform(-2.5, 2.5);
    if (std::abs(std::abs(x) - 2.0) < 1e-3) continue;
    const double fd = (entmoid15(x + h) - entmoid15(x - h)) / (2.0 * h);
    const double denom = std::max(1e-8, std::abs(fd));
    CHECK(std::abs(entmoid15_grad(x) - fd) / denom < 1e-4);
    ++checked;
  }
}

TEST_CASE("dropout: identity cases, scaling, and the large-sample mean") {
  Rng rng(99);
  Matrix m(3, 4, 1.5);
  CHECK(dropout(m, 0.0, true, rng) == m);
  CHECK(dropout(m, 0.5, false, rng) == m);
  CHECK_THROWS_AS(dropout(m, 1.0, true, rng), std::invalid_argument);
  CHECK_THROWS_AS(dropout(m, -0.1, true, rng), std::invalid_argument);

  Matrix ones(1000, 1000, 1.0);
  const Matrix dropped = dropout(ones, 0.5, true, rng);
  double mean = 0.0;
  for (double v : dropped.flat()) mean += v;
  mean /= static_cast<double>(dropped.size());
  CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
}
