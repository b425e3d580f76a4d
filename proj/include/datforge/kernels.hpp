#pragma once

// Dense double-precision inner loops. Every kernel has a scalar reference
// implementation; wider variants (currently AVX2+FMA) are built in separate
// translation units and picked once at runtime from the host CPU features.
// The DATFORGE_ISA environment variable ("scalar" or "avx2") pins the choice.

#include <cstddef>
#include <string_view>
#include <vector>

namespace datforge::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

struct AdamCoeffs {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double bias_correction1;  // 1 - beta1^t
  double bias_correction2;  // 1 - beta2^t
};

struct KernelTable {
  Isa isa;

  // C[m x n] += A[m x k] * B[k x n]. A is addressed as a[i * a_rs + p * a_cs]
  // so a transposed operand needs no copy; B and C are row-major.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a,
               std::size_t a_rs, std::size_t a_cs, const double* b,
               std::size_t ldb, double* c, std::size_t ldc);

  double (*dot)(const double* x, const double* y, std::size_t n);

  // y += alpha * x. Bitwise identical across variants (no FMA contraction).
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

  // y[i] = sum_{j <= i, j < nh} h[j] * x[i - j] for i in [0, nx).
  void (*convolve)(const double* x, std::size_t nx, const double* h,
                   std::size_t nh, double* y);

  // In-place Adam update. Bitwise identical across variants.
  void (*adam_update)(double* param, double* m, double* v, const double* grad,
                      std::size_t n, const AdamCoeffs& coeffs);
};

bool supported(Isa isa);

/// Table for a specific ISA; throws ArgumentError when the host lacks it.
const KernelTable& table(Isa isa);

/// Table selected for this process.
const KernelTable& active();

std::vector<Isa> available_isas();

inline void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a,
                 std::size_t a_rs, std::size_t a_cs, const double* b,
                 std::size_t ldb, double* c, std::size_t ldc) {
  active().gemm(m, n, k, a, a_rs, a_cs, b, ldb, c, ldc);
}

inline double dot(const double* x, const double* y, std::size_t n) {
  return active().dot(x, y, n);
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active().axpy(alpha, x, y, n);
}

inline void convolve(const double* x, std::size_t nx, const double* h,
                     std::size_t nh, double* y) {
  active().convolve(x, nx, h, nh, y);
}

inline void adam_update(double* param, double* m, double* v,
                        const double* grad, std::size_t n,
                        const AdamCoeffs& coeffs) {
  active().adam_update(param, m, v, grad, n, coeffs);
}

namespace detail {
const KernelTable& scalar_table();
#if defined(DATFORGE_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
}  // namespace detail

}  // namespace datforge::kernels
