#include <cmath>

#include "datforge/kernels.hpp"

namespace datforge::kernels {
namespace {

void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a,
                 std::size_t a_rs, std::size_t a_cs, const double* b,
                 std::size_t ldb, double* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * a_rs + p * a_cs];
      const double* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = alpha * x[i] + y[i];
}

void convolve_scalar(const double* x, std::size_t nx, const double* h,
                     std::size_t nh, double* y) {
  for (std::size_t i = 0; i < nx; ++i) {
    const std::size_t taps = (i + 1 < nh) ? i + 1 : nh;
    double acc = 0.0;
    for (std::size_t j = 0; j < taps; ++j) acc += h[j] * x[i - j];
    y[i] = acc;
  }
}

void adam_scalar(double* param, double* m, double* v, const double* grad,
                 std::size_t n, const AdamCoeffs& c) {
  const double one_minus_b1 = 1.0 - c.beta1;
  const double one_minus_b2 = 1.0 - c.beta2;
  for (std::size_t i = 0; i < n; ++i) {
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

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::scalar, gemm_scalar, dot_scalar,
                                 axpy_scalar, convolve_scalar, adam_scalar};
  return table;
}

}  // namespace detail
}  // namespace datforge::kernels
