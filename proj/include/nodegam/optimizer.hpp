#pragma once

#include <cstdint>
#include <vector>

#include "nodegam/network.hpp"

namespace nodegam {

struct QhAdamConfig {
  double nu1 = 0.7;
  double nu2 = 1.0;
  double beta1 = 0.95;
  double beta2 = 0.998;
  double eps = 1e-8;
};

/// Quasi-hyperbolic Adam: interpolates between the raw gradient and the
/// bias-corrected Adam direction with nu1 (numerator) and nu2 (denominator).
/// nu1 = nu2 = 1 reduces exactly to Adam.
class QhAdam {
 public:
  QhAdam(const QhAdamConfig& cfg, const std::vector<ParamBlock>& blocks);

  /// One update. `frozen`, when given, skips blocks by index (parameters and
  /// moments untouched). Throws numeric_error on non-finite gradients.
  void step(const std::vector<ParamBlock>& blocks, const Gradients& grads, double lr,
            const std::vector<std::uint8_t>* frozen = nullptr);

  std::uint64_t steps() const { return t_; }

 private:
  QhAdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace nodegam
