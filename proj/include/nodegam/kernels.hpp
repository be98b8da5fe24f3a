#pragma once

#include <cstddef>
#include <string>

namespace nodegam::kernels {

// Data-parallel inner loops used by the tree layers, the last linear layer
// and the optimizer. Every kernel has a scalar reference implementation and,
// on x86 with AVX2+FMA, a vectorized variant selected at runtime. Elementwise
// kernels (entmoid, dropout-free transforms) are bit-identical between
// backends; reductions (dot, sum, gemm) may differ in association order and
// are equivalence-tested to tight tolerances instead.

enum class Backend { scalar, avx2 };

/// Backend picked at startup (AVX2 when the CPU supports it). Can be
/// overridden with the NODEGAM_KERNELS environment variable ("scalar",
/// "avx2", "auto") or programmatically via set_backend.
Backend active_backend();
bool cpu_supports_avx2();
void set_backend(Backend b);
std::string backend_name(Backend b);

struct Ops {
  // y_i reductions and BLAS-1 style loops
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  double (*sum_sq)(const double* a, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);  // y += alpha*x
  void (*scale)(double* x, double alpha, std::size_t n);
  void (*vmul)(const double* a, const double* b, double* out, std::size_t n);
  void (*vmul_inplace)(double* a, const double* b, std::size_t n);
  void (*fill)(double* x, double v, std::size_t n);

  // sparse sigmoid and its derivative over a contiguous block
  void (*entmoid)(const double* x, double* out, std::size_t n);
  void (*entmoid_grad)(const double* x, double* out, std::size_t n);

  // row-major C[m x n] += A[m x k] * B[k x n]
  void (*gemm_acc)(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n);

  // Gather-style GEMMs over row-pointer arrays: the previous-output mixing
  // of the tree layers. w is row-major [tb x u].
  //   mix_fwd:  c_rows[t] += sum_k w[t,k] * b_rows[k]
  //   mix_bwd:  c_rows[k] += sum_t w[t,k] * b_rows[t]
  //   mix_grad: w_out[t,k] += dot(a_rows[t], b_rows[k])
  void (*mix_fwd)(const double* w, std::size_t tb, std::size_t u,
                  const double* const* b_rows, std::size_t len, double* const* c_rows);
  void (*mix_bwd)(const double* w, std::size_t tb, std::size_t u,
                  const double* const* b_rows, std::size_t len, double* const* c_rows);
  void (*mix_grad)(const double* const* a_rows, std::size_t tb,
                   const double* const* b_rows, std::size_t u, std::size_t len,
                   double* w_out);

  // quasi-hyperbolic Adam update over a parameter block; see optimizer.hpp
  // for the state layout. bc1/bc2 are the bias-correction factors 1-beta^t.
  void (*qhadam_update)(double* param, const double* grad, double* m, double* v,
                        std::size_t n, double lr, double beta1, double beta2,
                        double nu1, double nu2, double eps, double bc1, double bc2);
};

/// Kernel table for the active backend.
const Ops& ops();

/// Kernel table for a specific backend (used by equivalence tests).
const Ops& ops_for(Backend b);

}  // namespace nodegam::kernels
