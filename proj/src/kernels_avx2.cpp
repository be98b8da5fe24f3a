#if defined(NODEGAM_HAVE_AVX2)

#include <immintrin.h>

#include <cmath>
#include <cstddef>

#include "kernels_detail.hpp"

// AVX2/FMA variants. Reductions use fixed 4-lane accumulation (run-to-run
// deterministic, equivalence-tested against scalar to 1e-13 relative).
// Elementwise kernels (entmoid, qhadam) keep the exact scalar operation
// order -- no FMA contraction -- so they are bit-identical to the reference.

namespace nodegam::kernels {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum_avx2(const double* a, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + i));
  double acc = hsum(acc0);
  for (; i < n; ++i) acc += a[i];
  return acc;
}

double sum_sq_avx2(const double* a, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d v = _mm256_loadu_pd(a + i);
    acc0 = _mm256_fmadd_pd(v, v, acc0);
  }
  double acc = hsum(acc0);
  for (; i < n; ++i) acc += a[i] * a[i];
  return acc;
}

// Separate mul+add (no FMA): bit-identical to the scalar reference.
void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_avx2(double* x, double alpha, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(x + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) x[i] *= alpha;
}

void vmul_avx2(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void vmul_inplace_avx2(double* a, const double* b, std::size_t n) {
  vmul_avx2(a, b, a, n);
}

void fill_avx2(double* x, double v, std::size_t n) {
  const __m256d vv = _mm256_set1_pd(v);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(x + i, vv);
  for (; i < n; ++i) x[i] = v;
}

// Branch-free entmoid: a = min(|x|, 2) folds the saturated region into the
// same formula ((4 + 2*2)/8 == 1); the operation order matches the scalar
// reference exactly.
void entmoid_avx2(const double* x, double* out, std::size_t n) {
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  const __m256d two = _mm256_set1_pd(2.0);
  const __m256d four = _mm256_set1_pd(4.0);
  const __m256d eight = _mm256_set1_pd(8.0);
  const __m256d eighth = _mm256_set1_pd(0.125);
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xv = _mm256_loadu_pd(x + i);
    const __m256d a = _mm256_min_pd(_mm256_andnot_pd(sign_mask, xv), two);
    const __m256d r = _mm256_sqrt_pd(_mm256_sub_pd(eight, _mm256_mul_pd(a, a)));
    const __m256d core =
        _mm256_mul_pd(_mm256_add_pd(four, _mm256_mul_pd(a, r)), eighth);
    const __m256d neg = _mm256_cmp_pd(xv, _mm256_setzero_pd(), _CMP_LT_OQ);
    _mm256_storeu_pd(out + i, _mm256_blendv_pd(core, _mm256_sub_pd(one, core), neg));
  }
  for (; i < n; ++i) out[i] = entmoid_scalar(x[i]);
}

void entmoid_grad_avx2(const double* x, double* out, std::size_t n) {
  const __m256d sign_mask = _mm256_set1_pd(-0.0);
  const __m256d two = _mm256_set1_pd(2.0);
  const __m256d four = _mm256_set1_pd(4.0);
  const __m256d eight = _mm256_set1_pd(8.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xv = _mm256_loadu_pd(x + i);
    const __m256d a = _mm256_min_pd(_mm256_andnot_pd(sign_mask, xv), two);
    const __m256d aa = _mm256_mul_pd(a, a);
    const __m256d r = _mm256_sqrt_pd(_mm256_sub_pd(eight, aa));
    const __m256d g =
        _mm256_div_pd(_mm256_sub_pd(four, aa), _mm256_mul_pd(four, r));
    _mm256_storeu_pd(out + i, g);
  }
  for (; i < n; ++i) out[i] = entmoid_grad_scalar(x[i]);
}

void gemm_acc_avx2(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      axpy_avx2(av, b + p * n, crow, n);
    }
  }
}

// 4-row x 8-column register tile; the hot loop of the layer mixing. Rows
// are gathered through pointer arrays, so the caller can mix arbitrary
// channel subsets without packing.
void mix_fwd_avx2(const double* w, std::size_t tb, std::size_t u,
                  const double* const* b_rows, std::size_t len, double* const* c_rows) {
  std::size_t t0 = 0;
  for (; t0 + 4 <= tb; t0 += 4) {
    const double* w0 = w + (t0 + 0) * u;
    const double* w1 = w + (t0 + 1) * u;
    const double* w2 = w + (t0 + 2) * u;
    const double* w3 = w + (t0 + 3) * u;
    double* c0 = c_rows[t0 + 0];
    double* c1 = c_rows[t0 + 1];
    double* c2 = c_rows[t0 + 2];
    double* c3 = c_rows[t0 + 3];
    std::size_t j = 0;
    for (; j + 8 <= len; j += 8) {
      __m256d a00 = _mm256_loadu_pd(c0 + j), a01 = _mm256_loadu_pd(c0 + j + 4);
      __m256d a10 = _mm256_loadu_pd(c1 + j), a11 = _mm256_loadu_pd(c1 + j + 4);
      __m256d a20 = _mm256_loadu_pd(c2 + j), a21 = _mm256_loadu_pd(c2 + j + 4);
      __m256d a30 = _mm256_loadu_pd(c3 + j), a31 = _mm256_loadu_pd(c3 + j + 4);
      for (std::size_t k = 0; k < u; ++k) {
        if (w0[k] == 0.0 && w1[k] == 0.0 && w2[k] == 0.0 && w3[k] == 0.0) continue;
        const double* b = b_rows[k];
        const __m256d b0 = _mm256_loadu_pd(b + j);
        const __m256d b1 = _mm256_loadu_pd(b + j + 4);
        __m256d wv = _mm256_set1_pd(w0[k]);
        a00 = _mm256_fmadd_pd(wv, b0, a00);
        a01 = _mm256_fmadd_pd(wv, b1, a01);
        wv = _mm256_set1_pd(w1[k]);
        a10 = _mm256_fmadd_pd(wv, b0, a10);
        a11 = _mm256_fmadd_pd(wv, b1, a11);
        wv = _mm256_set1_pd(w2[k]);
        a20 = _mm256_fmadd_pd(wv, b0, a20);
        a21 = _mm256_fmadd_pd(wv, b1, a21);
        wv = _mm256_set1_pd(w3[k]);
        a30 = _mm256_fmadd_pd(wv, b0, a30);
        a31 = _mm256_fmadd_pd(wv, b1, a31);
      }
      _mm256_storeu_pd(c0 + j, a00);
      _mm256_storeu_pd(c0 + j + 4, a01);
      _mm256_storeu_pd(c1 + j, a10);
      _mm256_storeu_pd(c1 + j + 4, a11);
      _mm256_storeu_pd(c2 + j, a20);
      _mm256_storeu_pd(c2 + j + 4, a21);
      _mm256_storeu_pd(c3 + j, a30);
      _mm256_storeu_pd(c3 + j + 4, a31);
    }
    for (; j < len; ++j) {
      double s0 = c0[j], s1 = c1[j], s2 = c2[j], s3 = c3[j];
      for (std::size_t k = 0; k < u; ++k) {
        const double b = b_rows[k][j];
        s0 += w0[k] * b;
        s1 += w1[k] * b;
        s2 += w2[k] * b;
        s3 += w3[k] * b;
      }
      c0[j] = s0;
      c1[j] = s1;
      c2[j] = s2;
      c3[j] = s3;
    }
  }
  for (; t0 < tb; ++t0) {
    const double* wt = w + t0 * u;
    for (std::size_t k = 0; k < u; ++k)
      if (wt[k] != 0.0) axpy_avx2(wt[k], b_rows[k], c_rows[t0], len);
  }
}

// Transposed application: same tile with the roles of w's rows and columns
// swapped (4 output channels, stream over tb source rows).
void mix_bwd_avx2(const double* w, std::size_t tb, std::size_t u,
                  const double* const* b_rows, std::size_t len, double* const* c_rows) {
  std::size_t k0 = 0;
  for (; k0 + 4 <= u; k0 += 4) {
    double* c0 = c_rows[k0 + 0];
    double* c1 = c_rows[k0 + 1];
    double* c2 = c_rows[k0 + 2];
    double* c3 = c_rows[k0 + 3];
    std::size_t j = 0;
    for (; j + 8 <= len; j += 8) {
      __m256d a00 = _mm256_loadu_pd(c0 + j), a01 = _mm256_loadu_pd(c0 + j + 4);
      __m256d a10 = _mm256_loadu_pd(c1 + j), a11 = _mm256_loadu_pd(c1 + j + 4);
      __m256d a20 = _mm256_loadu_pd(c2 + j), a21 = _mm256_loadu_pd(c2 + j + 4);
      __m256d a30 = _mm256_loadu_pd(c3 + j), a31 = _mm256_loadu_pd(c3 + j + 4);
      for (std::size_t t = 0; t < tb; ++t) {
        const double* wt = w + t * u + k0;
        if (wt[0] == 0.0 && wt[1] == 0.0 && wt[2] == 0.0 && wt[3] == 0.0) continue;
        const double* b = b_rows[t];
        const __m256d b0 = _mm256_loadu_pd(b + j);
        const __m256d b1 = _mm256_loadu_pd(b + j + 4);
        __m256d wv = _mm256_set1_pd(wt[0]);
        a00 = _mm256_fmadd_pd(wv, b0, a00);
        a01 = _mm256_fmadd_pd(wv, b1, a01);
        wv = _mm256_set1_pd(wt[1]);
        a10 = _mm256_fmadd_pd(wv, b0, a10);
        a11 = _mm256_fmadd_pd(wv, b1, a11);
        wv = _mm256_set1_pd(wt[2]);
        a20 = _mm256_fmadd_pd(wv, b0, a20);
        a21 = _mm256_fmadd_pd(wv, b1, a21);
        wv = _mm256_set1_pd(wt[3]);
        a30 = _mm256_fmadd_pd(wv, b0, a30);
        a31 = _mm256_fmadd_pd(wv, b1, a31);
      }
      _mm256_storeu_pd(c0 + j, a00);
      _mm256_storeu_pd(c0 + j + 4, a01);
      _mm256_storeu_pd(c1 + j, a10);
      _mm256_storeu_pd(c1 + j + 4, a11);
      _mm256_storeu_pd(c2 + j, a20);
      _mm256_storeu_pd(c2 + j + 4, a21);
      _mm256_storeu_pd(c3 + j, a30);
      _mm256_storeu_pd(c3 + j + 4, a31);
    }
    for (; j < len; ++j) {
      double s0 = c0[j], s1 = c1[j], s2 = c2[j], s3 = c3[j];
      for (std::size_t t = 0; t < tb; ++t) {
        const double* wt = w + t * u + k0;
        const double b = b_rows[t][j];
        s0 += wt[0] * b;
        s1 += wt[1] * b;
        s2 += wt[2] * b;
        s3 += wt[3] * b;
      }
      c0[j] = s0;
      c1[j] = s1;
      c2[j] = s2;
      c3[j] = s3;
    }
  }
  for (; k0 < u; ++k0) {
    for (std::size_t t = 0; t < tb; ++t) {
      const double wv = w[t * u + k0];
      if (wv != 0.0) axpy_avx2(wv, b_rows[t], c_rows[k0], len);
    }
  }
}

// Batched inner products: 2 x 4 accumulator tile streaming both row sets.
void mix_grad_avx2(const double* const* a_rows, std::size_t tb,
                   const double* const* b_rows, std::size_t u, std::size_t len,
                   double* w_out) {
  std::size_t t0 = 0;
  for (; t0 + 2 <= tb; t0 += 2) {
    const double* a0 = a_rows[t0];
    const double* a1 = a_rows[t0 + 1];
    std::size_t k0 = 0;
    for (; k0 + 4 <= u; k0 += 4) {
      __m256d acc[2][4];
      for (int t = 0; t < 2; ++t)
        for (int k = 0; k < 4; ++k) acc[t][k] = _mm256_setzero_pd();
      std::size_t j = 0;
      for (; j + 4 <= len; j += 4) {
        const __m256d av0 = _mm256_loadu_pd(a0 + j);
        const __m256d av1 = _mm256_loadu_pd(a1 + j);
        for (int k = 0; k < 4; ++k) {
          const __m256d bv = _mm256_loadu_pd(b_rows[k0 + k] + j);
          acc[0][k] = _mm256_fmadd_pd(av0, bv, acc[0][k]);
          acc[1][k] = _mm256_fmadd_pd(av1, bv, acc[1][k]);
        }
      }
      for (int k = 0; k < 4; ++k) {
        double s0 = hsum(acc[0][k]);
        double s1 = hsum(acc[1][k]);
        for (std::size_t jj = j; jj < len; ++jj) {
          s0 += a0[jj] * b_rows[k0 + k][jj];
          s1 += a1[jj] * b_rows[k0 + k][jj];
        }
        w_out[(t0 + 0) * u + k0 + k] += s0;
        w_out[(t0 + 1) * u + k0 + k] += s1;
      }
    }
    for (; k0 < u; ++k0) {
      w_out[(t0 + 0) * u + k0] += dot_avx2(a0, b_rows[k0], len);
      w_out[(t0 + 1) * u + k0] += dot_avx2(a1, b_rows[k0], len);
    }
  }
  for (; t0 < tb; ++t0)
    for (std::size_t k = 0; k < u; ++k)
      w_out[t0 * u + k] += dot_avx2(a_rows[t0], b_rows[k], len);
}

void qhadam_update_avx2(double* param, const double* grad, double* m, double* v,
                        std::size_t n, double lr, double beta1, double beta2,
                        double nu1, double nu2, double eps, double bc1, double bc2) {
  const __m256d vb1 = _mm256_set1_pd(beta1);
  const __m256d vb1c = _mm256_set1_pd(1.0 - beta1);
  const __m256d vb2 = _mm256_set1_pd(beta2);
  const __m256d vb2c = _mm256_set1_pd(1.0 - beta2);
  const __m256d vnu1 = _mm256_set1_pd(nu1);
  const __m256d vnu1c = _mm256_set1_pd(1.0 - nu1);
  const __m256d vnu2 = _mm256_set1_pd(nu2);
  const __m256d vnu2c = _mm256_set1_pd(1.0 - nu2);
  const __m256d veps = _mm256_set1_pd(eps);
  const __m256d vbc1 = _mm256_set1_pd(bc1);
  const __m256d vbc2 = _mm256_set1_pd(bc2);
  const __m256d vlr = _mm256_set1_pd(lr);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d gg = _mm256_mul_pd(g, g);
    const __m256d mi =
        _mm256_add_pd(_mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)), _mm256_mul_pd(vb1c, g));
    const __m256d vi =
        _mm256_add_pd(_mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)), _mm256_mul_pd(vb2c, gg));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d m_hat = _mm256_div_pd(mi, vbc1);
    const __m256d v_hat = _mm256_div_pd(vi, vbc2);
    const __m256d num = _mm256_add_pd(_mm256_mul_pd(vnu1c, g), _mm256_mul_pd(vnu1, m_hat));
    const __m256d rad = _mm256_add_pd(_mm256_mul_pd(vnu2c, gg), _mm256_mul_pd(vnu2, v_hat));
    const __m256d den = _mm256_add_pd(_mm256_sqrt_pd(rad), veps);
    const __m256d step = _mm256_div_pd(_mm256_mul_pd(vlr, num), den);
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  if (i < n)
    scalar_ops.qhadam_update(param + i, grad + i, m + i, v + i, n - i, lr, beta1, beta2,
                             nu1, nu2, eps, bc1, bc2);
}

}  // namespace

const Ops avx2_ops = {
    dot_avx2,        sum_avx2,  sum_sq_avx2,
    axpy_avx2,       scale_avx2, vmul_avx2,
    vmul_inplace_avx2, fill_avx2,
    entmoid_avx2,    entmoid_grad_avx2,
    gemm_acc_avx2,
    mix_fwd_avx2,    mix_bwd_avx2, mix_grad_avx2,
    qhadam_update_avx2,
};

}  // namespace nodegam::kernels

#endif  // NODEGAM_HAVE_AVX2
