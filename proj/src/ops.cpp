#include "datforge/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "datforge/errors.hpp"
#include "datforge/kernels.hpp"

namespace datforge {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

std::vector<std::size_t> matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor out = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (wv.rank() != 2 || xv.rank() > 2 || xv.cols() != wv.shape()[0] ||
      bv.size() != wv.shape()[1])
    throw DimensionError("linear: x " + shape_string(xv.shape()) + " W " +
                         shape_string(wv.shape()) + " b " +
                         shape_string(bv.shape()) + " do not conform");
  const std::size_t rows = xv.rows();
  const std::size_t din = wv.shape()[0];
  const std::size_t dout = wv.shape()[1];

  Tensor out(matrix_shape(rows, dout));
  for (std::size_t i = 0; i < rows; ++i)
    std::copy(bv.data(), bv.data() + dout, out.data() + i * dout);
  kernels::gemm(rows, dout, din, xv.data(), din, 1, wv.data(), dout, out.data(), dout);

  return x.tape().record(std::move(out), {x, weight, bias}, [rows, din, dout](BackwardContext& ctx) {
    const Tensor& gy = ctx.out_grad();
    if (ctx.needs_grad(0)) {
      const Tensor& w = ctx.input_value(1);
      Tensor wt({dout, din});
      for (std::size_t k = 0; k < din; ++k)
        for (std::size_t j = 0; j < dout; ++j) wt[j * din + k] = w[k * dout + j];
      kernels::gemm(rows, din, dout, gy.data(), dout, 1, wt.data(), din,
                    ctx.input_grad(0).data(), din);
    }
    if (ctx.needs_grad(1)) {
      const Tensor& xv = ctx.input_value(0);
      // gW += x^T gy
      kernels::gemm(din, dout, rows, xv.data(), 1, din, gy.data(), dout,
                    ctx.input_grad(1).data(), dout);
    }
    if (ctx.needs_grad(2)) {
      Tensor& gb = ctx.input_grad(2);
      for (std::size_t i = 0; i < rows; ++i)
        kernels::axpy(1.0, gy.data() + i * dout, gb.data(), dout);
    }
  });
}

Var activation(const Var& x, Activation kind) {
  switch (kind) {
    case Activation::relu:
      return relu(x);
    case Activation::sigmoid:
      return sigmoid(x);
    case Activation::softmax_rows:
      return softmax_rows(x);
    case Activation::log:
      return log(x);
  }
  throw ArgumentError("unknown activation");
}

Var relu(const Var& x) {
  Tensor out = map(x.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    const Tensor& xv = ctx.input_value(0);
    const Tensor& gy = ctx.out_grad();
    Tensor& gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < xv.size(); ++i)
      if (xv[i] > 0.0) gx[i] += gy[i];
  });
}

Var sigmoid(const Var& x) {
  Tensor out = map(x.value(), [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    const Tensor& y = ctx.out_value();
    const Tensor& gy = ctx.out_grad();
    Tensor& gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += gy[i] * y[i] * (1.0 - y[i]);
  });
}

Var softmax_rows(const Var& x) {
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows();
  const std::size_t cols = xv.cols();
  Tensor out = Tensor::zeros_like(xv);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double* o = out.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) o[c] = std::exp(in[c] - lse);
  }
  return x.tape().record(std::move(out), {x}, [rows, cols](BackwardContext& ctx) {
    // JVP of exp(x - lse(x)): gx = y * (gy - <gy, y>)
    const Tensor& y = ctx.out_value();
    const Tensor& gy = ctx.out_grad();
    Tensor& gx = ctx.input_grad(0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y.data() + r * cols;
      const double* gr = gy.data() + r * cols;
      const double inner = kernels::dot(gr, yr, cols);
      double* out = gx.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) out[c] += yr[c] * (gr[c] - inner);
    }
  });
}

Var log(const Var& x) {
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i)
    if (!(xv[i] > 0.0))
      throw DomainError("log of non-positive entry " + std::to_string(xv[i]) +
                        " at index " + std::to_string(i));
  Tensor out = map(xv, [](double v) { return std::log(v); });
  return x.tape().record(std::move(out), {x}, [](BackwardContext& ctx) {
    const Tensor& xv = ctx.input_value(0);
    const Tensor& gy = ctx.out_grad();
    Tensor& gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += gy[i] / xv[i];
  });
}

Var log_softmax_rows(const Var& x) {
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows();
  const std::size_t cols = xv.cols();
  Tensor out = Tensor::zeros_like(xv);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(in[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = in[c] - lse;
  }
  return x.tape().record(std::move(out), {x}, [rows, cols](BackwardContext& ctx) {
    const Tensor& y = ctx.out_value();
    const Tensor& gy = ctx.out_grad();
    Tensor& gx = ctx.input_grad(0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = gy.data() + r * cols;
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) total += gr[c];
      for (std::size_t c = 0; c < cols; ++c)
        gx[r * cols + c] += gr[c] - std::exp(y[r * cols + c]) * total;
    }
  });
}

Var grad_reverse(const Var& x, double lambda) {
  if (!(lambda > 0.0))
    throw ConfigError("grad_reverse: lambda must be > 0, got " + std::to_string(lambda));
  return x.tape().record(x.value(), {x}, [lambda](BackwardContext& ctx) {
    const Tensor& gy = ctx.out_grad();
    kernels::axpy(-lambda, gy.data(), ctx.input_grad(0).data(), gy.size());
  });
}

Var stop_gradient(const Var& x) { return x.tape().constant(x.value()); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const Tensor& gy = ctx.out_grad();
    if (ctx.needs_grad(0)) ctx.input_grad(0) += gy;
    if (ctx.needs_grad(1)) ctx.input_grad(1) += gy;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  kernels::axpy(-1.0, b.value().data(), out.data(), out.size());
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const Tensor& gy = ctx.out_grad();
    if (ctx.needs_grad(0)) ctx.input_grad(0) += gy;
    if (ctx.needs_grad(1))
      kernels::axpy(-1.0, gy.data(), ctx.input_grad(1).data(), gy.size());
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out = Tensor::zeros_like(av);
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape().record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    const Tensor& gy = ctx.out_grad();
    const Tensor& av = ctx.input_value(0);
    const Tensor& bv = ctx.input_value(1);
    if (ctx.needs_grad(0)) {
      Tensor& ga = ctx.input_grad(0);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (ctx.needs_grad(1)) {
      Tensor& gb = ctx.input_grad(1);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

Var affine(const Var& x, double scale, double shift) {
  Tensor out = map(x.value(), [=](double v) { return scale * v + shift; });
  return x.tape().record(std::move(out), {x}, [scale](BackwardContext& ctx) {
    const Tensor& gy = ctx.out_grad();
    kernels::axpy(scale, gy.data(), ctx.input_grad(0).data(), gy.size());
  });
}

Var mul_const(const Var& x, const Tensor& c) {
  require_same_shape(x.value(), c, "mul_const");
  const Tensor& xv = x.value();
  Tensor out = Tensor::zeros_like(xv);
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * c[i];
  return x.tape().record(std::move(out), {x}, [c](BackwardContext& ctx) {
    const Tensor& gy = ctx.out_grad();
    Tensor& gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * c[i];
  });
}

Var clamp(const Var& x, double lo, double hi) {
  if (!(lo <= hi)) throw ArgumentError("clamp: lo must not exceed hi");
  Tensor out = map(x.value(), [=](double v) { return std::clamp(v, lo, hi); });
  return x.tape().record(std::move(out), {x}, [lo, hi](BackwardContext& ctx) {
    const Tensor& xv = ctx.input_value(0);
    const Tensor& gy = ctx.out_grad();
    Tensor& gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < xv.size(); ++i)
      if (xv[i] >= lo && xv[i] <= hi) gx[i] += gy[i];
  });
}

Var sum(const Var& x) {
  const Tensor& xv = x.value();
  const double total = std::accumulate(xv.values().begin(), xv.values().end(), 0.0);
  return x.tape().record(Tensor::scalar(total), {x}, [](BackwardContext& ctx) {
    const double g = ctx.out_grad()[0];
    Tensor& gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

Var mean(const Var& x) {
  const Tensor& xv = x.value();
  const double n = static_cast<double>(xv.size());
  const double total = std::accumulate(xv.values().begin(), xv.values().end(), 0.0);
  return x.tape().record(Tensor::scalar(total / n), {x}, [n](BackwardContext& ctx) {
    const double g = ctx.out_grad()[0] / n;
    Tensor& gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

Var mean_pool_segments(const Var& x, std::span<const std::size_t> lengths) {
  const Tensor& xv = x.value();
  const std::size_t cols = xv.cols();
  std::size_t total = 0;
  for (std::size_t len : lengths) {
    if (len == 0) throw ArgumentError("mean_pool_segments: empty segment");
    total += len;
  }
  if (lengths.empty() || total != xv.rows())
    throw DimensionError("mean_pool_segments: segment lengths sum to " +
                         std::to_string(total) + " but input has shape " +
                         shape_string(xv.shape()));
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  Tensor out(matrix_shape(lens.size(), cols));
  std::size_t row = 0;
  for (std::size_t s = 0; s < lens.size(); ++s) {
    double* o = out.data() + s * cols;
    for (std::size_t t = 0; t < lens[s]; ++t, ++row)
      kernels::axpy(1.0, xv.data() + row * cols, o, cols);
    const double inv = 1.0 / static_cast<double>(lens[s]);
    for (std::size_t c = 0; c < cols; ++c) o[c] *= inv;
  }
  return x.tape().record(std::move(out), {x}, [lens, cols](BackwardContext& ctx) {
    const Tensor& gy = ctx.out_grad();
    Tensor& gx = ctx.input_grad(0);
    std::size_t row = 0;
    for (std::size_t s = 0; s < lens.size(); ++s) {
      const double inv = 1.0 / static_cast<double>(lens[s]);
      for (std::size_t t = 0; t < lens[s]; ++t, ++row)
        kernels::axpy(inv, gy.data() + s * cols, gx.data() + row * cols, cols);
    }
  });
}

Var rms_normalize_rows(const Var& x, double eps) {
  if (!(eps > 0.0)) throw DomainError("rms_normalize_rows: eps must be > 0");
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows();
  const std::size_t cols = xv.cols();
  Tensor out = xv;
  std::vector<double> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * cols;
    const double ms = kernels::dot(row, row, cols) / static_cast<double>(cols);
    inv_rms[r] = 1.0 / std::sqrt(ms + eps);
    for (std::size_t c = 0; c < cols; ++c) out.data()[r * cols + c] *= inv_rms[r];
  }
  return x.tape().record(std::move(out), {x}, [inv_rms = std::move(inv_rms), cols](BackwardContext& ctx) {
    const Tensor& y = ctx.out_value();
    const Tensor& gy = ctx.out_grad();
    Tensor& gx = ctx.input_grad(0);
    // dx = (gy - y * mean(gy . y)) / rms
    for (std::size_t r = 0; r < inv_rms.size(); ++r) {
      const double* yr = y.data() + r * cols;
      const double* gr = gy.data() + r * cols;
      const double proj = kernels::dot(gr, yr, cols) / static_cast<double>(cols);
      for (std::size_t c = 0; c < cols; ++c) gx.data()[r * cols + c] += (gr[c] - yr[c] * proj) * inv_rms[r];
    }
  });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t count) {
  const Tensor& xv = x.value();
  const std::size_t cols = xv.cols();
  if (count == 0 || begin + count > xv.rows())
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " +
                         shape_string(xv.shape()));
  Tensor out(matrix_shape(count, cols));
  std::copy(xv.data() + begin * cols, xv.data() + (begin + count) * cols, out.data());
  return x.tape().record(std::move(out), {x}, [begin, cols](BackwardContext& ctx) {
    const Tensor& gy = ctx.out_grad();
    kernels::axpy(1.0, gy.data(), ctx.input_grad(0).data() + begin * cols, gy.size());
  });
}

Var concat_rows(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols())
    throw DimensionError("concat_rows: " + shape_string(av.shape()) + " vs " +
                         shape_string(bv.shape()));
  const std::size_t cols = av.cols();
  Tensor out(matrix_shape(av.rows() + bv.rows(), cols));
  std::copy(av.data(), av.data() + av.size(), out.data());
  std::copy(bv.data(), bv.data() + bv.size(), out.data() + av.size());
  const std::size_t split = av.size();
  return a.tape().record(std::move(out), {a, b}, [split](BackwardContext& ctx) {
    const Tensor& gy = ctx.out_grad();
    if (ctx.needs_grad(0)) kernels::axpy(1.0, gy.data(), ctx.input_grad(0).data(), split);
    if (ctx.needs_grad(1))
      kernels::axpy(1.0, gy.data() + split, ctx.input_grad(1).data(), gy.size() - split);
  });
}

Var mse(const Var& x, const Tensor& target) {
  require_same_shape(x.value(), target, "mse");
  const Tensor& xv = x.value();
  const double n = static_cast<double>(xv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double d = xv[i] - target[i];
    total += d * d;
  }
  return x.tape().record(Tensor::scalar(total / n), {x}, [target, n](BackwardContext& ctx) {
    const Tensor& xv = ctx.input_value(0);
    const double g = 2.0 * ctx.out_grad()[0] / n;
    Tensor& gx = ctx.input_grad(0);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g * (xv[i] - target[i]);
  });
}

}  // namespace datforge
