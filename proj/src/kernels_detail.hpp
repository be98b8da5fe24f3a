#pragma once

#include "nodegam/kernels.hpp"

namespace nodegam::kernels {

extern const Ops scalar_ops;

#if defined(NODEGAM_HAVE_AVX2)
extern const Ops avx2_ops;
#endif

// Scalar core for the entmoid pair. The split response of a tree is
// entmoid(x) = first component of the two-class 1.5-entmax over [x, 0]:
// exactly 0 for x <= -2, exactly 1 for x >= 2. In between the closed form
// ((x + sqrt(8-x^2))/4)^2 simplifies to (4 + x*sqrt(8-x^2))/8, which is
// exact at x = 0 and at the saturation points. Negative inputs mirror
// (1 - entmoid(-x)) so that entmoid(x) + entmoid(-x) == 1 exactly.
// Internal linkage: each TU keeps its own copy, so the linker can never
// substitute a variant compiled under different FP-contraction rules.
static inline double entmoid_scalar(double x) {
  if (x >= 2.0) return 1.0;
  if (x <= -2.0) return 0.0;
  const double a = x < 0.0 ? -x : x;
  const double r = __builtin_sqrt(8.0 - a * a);
  const double core = (4.0 + a * r) * 0.125;
  return x < 0.0 ? 1.0 - core : core;
}

// Derivative: s1*s2/(s1+s2) with s1,2 = (r +/- a)/4 simplifies to
// (4 - a^2)/(4r); exactly 0 outside (-2, 2), symmetric in x.
static inline double entmoid_grad_scalar(double x) {
  const double a = x < 0.0 ? -x : x;
  if (a >= 2.0) return 0.0;
  const double r = __builtin_sqrt(8.0 - a * a);
  return (4.0 - a * a) / (4.0 * r);
}

}  // namespace nodegam::kernels
