#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nodegam/matrix.hpp"
#include "nodegam/rng.hpp"

namespace nodegam {

/// 1.5-entmax with temperature: the sparse softmax used for feature
/// selection. Solved exactly by the sorted-threshold algorithm
/// p_i = max(0, z_i/(2T) - tau)^2 with tau chosen so the output sums to 1.
/// temperature == 0 returns the exact one-hot of the argmax (lowest index
/// wins ties). Throws std::invalid_argument on non-finite input.
std::vector<double> entmax15(std::span<const double> z, double temperature = 1.0);

/// Variant with an exclusion mask: entries with allowed[i] == 0 behave as
/// logit -inf (output exactly 0, no gradient). Throws std::invalid_argument
/// if no entry is allowed.
std::vector<double> entmax15_masked(std::span<const double> z,
                                    std::span<const std::uint8_t> allowed,
                                    double temperature = 1.0);

/// Vector-Jacobian product of entmax15 at temperature 1. On the support the
/// Jacobian is diag(s) - s s^T / sum(s) with s_i = sqrt(p_i); off-support
/// components are exactly 0. Callers handling entmax15(z/T) divide by T.
std::vector<double> entmax15_vjp(std::span<const double> probs,
                                 std::span<const double> upstream);

/// Sparse sigmoid: first component of entmax15 over [x, 0]. Exactly 0 for
/// x <= -2 and exactly 1 for x >= 2; entmoid15(x) + entmoid15(-x) == 1.
double entmoid15(double x);

/// Derivative of entmoid15; exactly 0 outside (-2, 2).
double entmoid15_grad(double x);

/// Inverted dropout. Training: each entry is zeroed with probability `rate`
/// and survivors are scaled by 1/(1-rate). Inference: identity. rate must be
/// in [0, 1).
Matrix dropout(const Matrix& m, double rate, bool training, Rng& rng);

/// Per-entry dropout multipliers (0 or 1/(1-rate)), for callers that need
/// the mask during the backward pass.
std::vector<double> dropout_mask(std::size_t n, double rate, Rng& rng);

}  // namespace nodegam
