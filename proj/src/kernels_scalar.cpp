#include <cmath>
#include <cstddef>

#include "kernels_detail.hpp"

// Reference kernels. Plain loops, sequential reduction order; the AVX2
// variants are tested against these.

namespace nodegam::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum_scalar(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

double sum_sq_scalar(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * a[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_scalar(double* x, double alpha, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

void vmul_scalar(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void vmul_inplace_scalar(double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) a[i] *= b[i];
}

void fill_scalar(double* x, double v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = v;
}

void entmoid_block_scalar(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = entmoid_scalar(x[i]);
}

void entmoid_grad_block_scalar(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = entmoid_grad_scalar(x[i]);
}

void gemm_acc_scalar(const double* a, const double* b, double* c, std::size_t m,
                     std::size_t k, std::size_t n) {
  // ikj order: streams B and C rows, gives the vectorizer a chance.
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void mix_fwd_scalar(const double* w, std::size_t tb, std::size_t u,
                    const double* const* b_rows, std::size_t len, double* const* c_rows) {
  for (std::size_t t = 0; t < tb; ++t) {
    double* c = c_rows[t];
    const double* wt = w + t * u;
    for (std::size_t k = 0; k < u; ++k) {
      if (wt[k] == 0.0) continue;
      axpy_scalar(wt[k], b_rows[k], c, len);
    }
  }
}

void mix_bwd_scalar(const double* w, std::size_t tb, std::size_t u,
                    const double* const* b_rows, std::size_t len, double* const* c_rows) {
  for (std::size_t k = 0; k < u; ++k) {
    double* c = c_rows[k];
    for (std::size_t t = 0; t < tb; ++t) {
      const double wv = w[t * u + k];
      if (wv == 0.0) continue;
      axpy_scalar(wv, b_rows[t], c, len);
    }
  }
}

void mix_grad_scalar(const double* const* a_rows, std::size_t tb,
                     const double* const* b_rows, std::size_t u, std::size_t len,
                     double* w_out) {
  for (std::size_t t = 0; t < tb; ++t)
    for (std::size_t k = 0; k < u; ++k)
      w_out[t * u + k] += dot_scalar(a_rows[t], b_rows[k], len);
}

void qhadam_update_scalar(double* param, const double* grad, double* m, double* v,
                          std::size_t n, double lr, double beta1, double beta2,
                          double nu1, double nu2, double eps, double bc1, double bc2) {
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i];
    const double gg = g * g;
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * gg;
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    const double num = (1.0 - nu1) * g + nu1 * m_hat;
    const double den = std::sqrt((1.0 - nu2) * gg + nu2 * v_hat) + eps;
    param[i] -= lr * num / den;
  }
}

}  // namespace

const Ops scalar_ops = {
    dot_scalar,        sum_scalar,  sum_sq_scalar,
    axpy_scalar,       scale_scalar, vmul_scalar,
    vmul_inplace_scalar, fill_scalar,
    entmoid_block_scalar, entmoid_grad_block_scalar,
    gemm_acc_scalar,
    mix_fwd_scalar,    mix_bwd_scalar, mix_grad_scalar,
    qhadam_update_scalar,
};

}  // namespace nodegam::kernels
