#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "datforge/kernels.hpp"

namespace datforge::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// 4x8 register block; k is the innermost loop so every C element sees its
// products in ascending p order, like the scalar reference.
void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a,
               std::size_t a_rs, std::size_t a_cs, const double* b,
               std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + (i + 0) * a_rs;
    const double* a1 = a + (i + 1) * a_rs;
    const double* a2 = a + (i + 2) * a_rs;
    const double* a3 = a + (i + 3) * a_rs;
    double* c0 = c + (i + 0) * ldc;
    double* c1 = c + (i + 1) * ldc;
    double* c2 = c + (i + 2) * ldc;
    double* c3 = c + (i + 3) * ldc;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d c00 = _mm256_loadu_pd(c0 + j), c01 = _mm256_loadu_pd(c0 + j + 4);
      __m256d c10 = _mm256_loadu_pd(c1 + j), c11 = _mm256_loadu_pd(c1 + j + 4);
      __m256d c20 = _mm256_loadu_pd(c2 + j), c21 = _mm256_loadu_pd(c2 + j + 4);
      __m256d c30 = _mm256_loadu_pd(c3 + j), c31 = _mm256_loadu_pd(c3 + j + 4);
      for (std::size_t p = 0; p < k; ++p) {
        const double* brow = b + p * ldb + j;
        const __m256d b0 = _mm256_loadu_pd(brow);
        const __m256d b1 = _mm256_loadu_pd(brow + 4);
        const std::size_t ap = p * a_cs;
        __m256d av = _mm256_broadcast_sd(a0 + ap);
        c00 = _mm256_fmadd_pd(av, b0, c00);
        c01 = _mm256_fmadd_pd(av, b1, c01);
        av = _mm256_broadcast_sd(a1 + ap);
        c10 = _mm256_fmadd_pd(av, b0, c10);
        c11 = _mm256_fmadd_pd(av, b1, c11);
        av = _mm256_broadcast_sd(a2 + ap);
        c20 = _mm256_fmadd_pd(av, b0, c20);
        c21 = _mm256_fmadd_pd(av, b1, c21);
        av = _mm256_broadcast_sd(a3 + ap);
        c30 = _mm256_fmadd_pd(av, b0, c30);
        c31 = _mm256_fmadd_pd(av, b1, c31);
      }
      _mm256_storeu_pd(c0 + j, c00);
      _mm256_storeu_pd(c0 + j + 4, c01);
      _mm256_storeu_pd(c1 + j, c10);
      _mm256_storeu_pd(c1 + j + 4, c11);
      _mm256_storeu_pd(c2 + j, c20);
      _mm256_storeu_pd(c2 + j + 4, c21);
      _mm256_storeu_pd(c3 + j, c30);
      _mm256_storeu_pd(c3 + j + 4, c31);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d c00 = _mm256_loadu_pd(c0 + j);
      __m256d c10 = _mm256_loadu_pd(c1 + j);
      __m256d c20 = _mm256_loadu_pd(c2 + j);
      __m256d c30 = _mm256_loadu_pd(c3 + j);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * ldb + j);
        const std::size_t ap = p * a_cs;
        c00 = _mm256_fmadd_pd(_mm256_broadcast_sd(a0 + ap), b0, c00);
        c10 = _mm256_fmadd_pd(_mm256_broadcast_sd(a1 + ap), b0, c10);
        c20 = _mm256_fmadd_pd(_mm256_broadcast_sd(a2 + ap), b0, c20);
        c30 = _mm256_fmadd_pd(_mm256_broadcast_sd(a3 + ap), b0, c30);
      }
      _mm256_storeu_pd(c0 + j, c00);
      _mm256_storeu_pd(c1 + j, c10);
      _mm256_storeu_pd(c2 + j, c20);
      _mm256_storeu_pd(c3 + j, c30);
    }
    for (; j < n; ++j) {
      for (std::size_t r = 0; r < 4; ++r) {
        const double* ar = a + (i + r) * a_rs;
        double acc = c[(i + r) * ldc + j];
        for (std::size_t p = 0; p < k; ++p)
          acc = std::fma(ar[p * a_cs], b[p * ldb + j], acc);
        c[(i + r) * ldc + j] = acc;
      }
    }
  }
  for (; i < m; ++i) {
    const double* ar = a + i * a_rs;
    double* cr = c + i * ldc;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256d acc = _mm256_loadu_pd(cr + j);
      for (std::size_t p = 0; p < k; ++p)
        acc = _mm256_fmadd_pd(_mm256_broadcast_sd(ar + p * a_cs),
                              _mm256_loadu_pd(b + p * ldb + j), acc);
      _mm256_storeu_pd(cr + j, acc);
    }
    for (; j < n; ++j) {
      double acc = cr[j];
      for (std::size_t p = 0; p < k; ++p)
        acc = std::fma(ar[p * a_cs], b[p * ldb + j], acc);
      cr[j] = acc;
    }
  }
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4),
                           _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d a = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d prod = _mm256_mul_pd(a, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(prod, _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = alpha * x[i] + y[i];
}

// Works on a copy of x with nh-1 leading zeros so every output lane reads a
// contiguous window. Blocks of 16 outputs stay in four accumulators.
void convolve_avx2(const double* x, std::size_t nx, const double* h,
                   std::size_t nh, double* y) {
  const std::size_t pad = nh - 1;
  std::vector<double> xp(nx + pad, 0.0);
  std::copy(x, x + nx, xp.begin() + static_cast<std::ptrdiff_t>(pad));
  // xp[i + pad - j] == x[i - j] (or 0 when i < j)
  const double* base = xp.data() + pad;
  std::size_t i = 0;
  for (; i + 16 <= nx; i += 16) {
    __m256d y0 = _mm256_setzero_pd();
    __m256d y1 = _mm256_setzero_pd();
    __m256d y2 = _mm256_setzero_pd();
    __m256d y3 = _mm256_setzero_pd();
    const std::size_t taps = std::min(nh, i + 16);
    for (std::size_t j = 0; j < taps; ++j) {
      const __m256d hj = _mm256_broadcast_sd(h + j);
      const double* src = base + i - j;
      y0 = _mm256_fmadd_pd(hj, _mm256_loadu_pd(src), y0);
      y1 = _mm256_fmadd_pd(hj, _mm256_loadu_pd(src + 4), y1);
      y2 = _mm256_fmadd_pd(hj, _mm256_loadu_pd(src + 8), y2);
      y3 = _mm256_fmadd_pd(hj, _mm256_loadu_pd(src + 12), y3);
    }
    _mm256_storeu_pd(y + i, y0);
    _mm256_storeu_pd(y + i + 4, y1);
    _mm256_storeu_pd(y + i + 8, y2);
    _mm256_storeu_pd(y + i + 12, y3);
  }
  for (; i + 4 <= nx; i += 4) {
    __m256d y0 = _mm256_setzero_pd();
    const std::size_t taps = std::min(nh, i + 4);
    for (std::size_t j = 0; j < taps; ++j)
      y0 = _mm256_fmadd_pd(_mm256_broadcast_sd(h + j),
                           _mm256_loadu_pd(base + i - j), y0);
    _mm256_storeu_pd(y + i, y0);
  }
  for (; i < nx; ++i) {
    const std::size_t taps = std::min(nh, i + 1);
    double acc = 0.0;
    for (std::size_t j = 0; j < taps; ++j) acc = std::fma(h[j], x[i - j], acc);
    y[i] = acc;
  }
}

void adam_avx2(double* param, double* m, double* v, const double* grad,
               std::size_t n, const AdamCoeffs& c) {
  const __m256d b1 = _mm256_set1_pd(c.beta1);
  const __m256d b2 = _mm256_set1_pd(c.beta2);
  const __m256d omb1 = _mm256_set1_pd(1.0 - c.beta1);
  const __m256d omb2 = _mm256_set1_pd(1.0 - c.beta2);
  const __m256d bc1 = _mm256_set1_pd(c.bias_correction1);
  const __m256d bc2 = _mm256_set1_pd(c.bias_correction2);
  const __m256d lr = _mm256_set1_pd(c.lr);
  const __m256d eps = _mm256_set1_pd(c.eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d mi = _mm256_add_pd(_mm256_mul_pd(b1, _mm256_loadu_pd(m + i)),
                                     _mm256_mul_pd(omb1, g));
    const __m256d vi =
        _mm256_add_pd(_mm256_mul_pd(b2, _mm256_loadu_pd(v + i)),
                      _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d m_hat = _mm256_div_pd(mi, bc1);
    const __m256d v_hat = _mm256_div_pd(vi, bc2);
    const __m256d step = _mm256_div_pd(
        _mm256_mul_pd(lr, m_hat), _mm256_add_pd(_mm256_sqrt_pd(v_hat), eps));
    _mm256_storeu_pd(param + i, _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
  }
  const double one_minus_b1 = 1.0 - c.beta1;
  const double one_minus_b2 = 1.0 - c.beta2;
  for (; i < n; ++i) {
    const double g = grad[i];
    m[i] = c.beta1 * m[i] + one_minus_b1 * g;
    v[i] = c.beta2 * v[i] + one_minus_b2 * (g * g);
    const double m_hat = m[i] / c.bias_correction1;
    const double v_hat = v[i] / c.bias_correction2;
    param[i] = param[i] - (c.lr * m_hat) / (std::sqrt(v_hat) + c.eps);
  }
}

}  // namespace

namespace detail {

const KernelTable& avx2_table() {
  static const KernelTable table{Isa::avx2, gemm_avx2, dot_avx2,
                                 axpy_avx2, convolve_avx2, adam_avx2};
  return table;
}

}  // namespace detail
}  // namespace datforge::kernels
