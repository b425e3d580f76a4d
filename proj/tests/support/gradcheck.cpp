#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "datforge/objectives.hpp"
#include "datforge/ops.hpp"

namespace datforge::testing {
namespace {

std::vector<Var> bind_leaves(Tape& tape, const std::vector<Tensor>& inputs) {
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
  return leaves;
}

double evaluate(const GraphFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  const auto leaves = bind_leaves(tape, inputs);
  return f(tape, leaves).value().item();
}

Tensor uniform(Rng& rng, std::vector<std::size_t> shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

/// Entries in [-2, 2] kept at least `gap` away from every point in `kinks`.
Tensor away_from(Rng& rng, std::vector<std::size_t> shape, std::initializer_list<double> kinks,
                 double gap = 1e-3) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    double v;
    do {
      v = rng.uniform(-2.0, 2.0);
    } while (std::any_of(kinks.begin(), kinks.end(), [&](double k) { return std::abs(v - k) < gap; }));
    t[i] = v;
  }
  return t;
}

std::size_t dim(Rng& rng, std::size_t lo = 1, std::size_t hi = 8) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

/// Fixed pseudo-random tensor shaped like `like`; a graph constant.
Tensor fixed_like(const Tensor& like, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w(like.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-1.0, 1.0);
  return w;
}

/// Random weighting that turns any output into a scalar: sum(w * y).
Var weighted(const Var& y, std::uint64_t seed) { return sum(mul_const(y, fixed_like(y.value(), seed))); }

// Auxiliary integer inputs (labels, lengths) ride along as tensors; they are
// rounded, so finite-difference nudges leave them unchanged.
std::vector<int> as_ints(const Tensor& t) {
  std::vector<int> v;
  for (double x : t.values()) v.push_back(static_cast<int>(std::lround(x)));
  return v;
}

OpCase unary(std::string name, std::function<Tensor(Rng&)> make, std::function<Var(const Var&)> op) {
  return {std::move(name), [make](Rng& rng) { return std::vector<Tensor>{make(rng)}; },
          [op](Tape&, std::span<const Var> v) { return weighted(op(v[0]), 17); }};
}

Tensor matrix(Rng& rng) { return uniform(rng, {dim(rng), dim(rng)}, -2.0, 2.0); }

}  // namespace

std::vector<Tensor> autodiff_gradient(const GraphFn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  const auto leaves = bind_leaves(tape, inputs);
  tape.backward(f(tape, leaves));
  std::vector<Tensor> out;
  for (const Var& v : leaves) out.push_back(v.grad());
  return out;
}

std::vector<Tensor> numeric_gradient(const GraphFn& f, const std::vector<Tensor>& inputs,
                                     double step) {
  std::vector<Tensor> out;
  std::vector<Tensor> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor g = Tensor::zeros_like(inputs[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x = inputs[k][i];
      work[k][i] = x + step;
      const double up = evaluate(f, work);
      work[k][i] = x - step;
      const double down = evaluate(f, work);
      work[k][i] = x;
      g[i] = (up - down) / (2.0 * step);
    }
    out.push_back(std::move(g));
  }
  return out;
}

double max_relative_error(const std::vector<Tensor>& a, const std::vector<Tensor>& n, double floor) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t i = 0; i < a[k].size(); ++i) {
      const double denom = std::max({std::abs(a[k][i]), std::abs(n[k][i]), floor});
      worst = std::max(worst, std::abs(a[k][i] - n[k][i]) / denom);
    }
  }
  return worst;
}

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;

  cases.push_back({"linear",
                   [](Rng& rng) {
                     const std::size_t b = dim(rng), din = dim(rng), dout = dim(rng);
                     return std::vector<Tensor>{uniform(rng, {b, din}, -2, 2), uniform(rng, {din, dout}, -2, 2),
                                                uniform(rng, {dout}, -2, 2)};
                   },
                   [](Tape&, std::span<const Var> v) { return weighted(linear(v[0], v[1], v[2]), 3); }});

  cases.push_back(unary("relu", [](Rng& rng) { return away_from(rng, {dim(rng), dim(rng)}, {0.0}); },
                        [](const Var& x) { return relu(x); }));
  cases.push_back(unary("sigmoid", matrix, [](const Var& x) { return sigmoid(x); }));
  cases.push_back(unary("softmax_rows", matrix, [](const Var& x) { return softmax_rows(x); }));
  cases.push_back(unary("log", [](Rng& rng) { return uniform(rng, {dim(rng), dim(rng)}, 0.1, 2.0); },
                        [](const Var& x) { return log(x); }));
  cases.push_back(unary("log_softmax_rows", matrix, [](const Var& x) { return log_softmax_rows(x); }));
  cases.push_back(unary("activation_dispatch", matrix,
                        [](const Var& x) { return activation(x, Activation::sigmoid); }));
  cases.push_back(unary("affine", matrix, [](const Var& x) { return affine(x, -1.7, 0.3); }));
  cases.push_back(unary("clamp", [](Rng& rng) { return away_from(rng, {dim(rng), dim(rng)}, {-1.0, 1.0}); },
                        [](const Var& x) { return clamp(x, -1.0, 1.0); }));
  cases.push_back(unary("rms_normalize_rows", matrix, [](const Var& x) { return rms_normalize_rows(x); }));
  cases.push_back(unary("sum", matrix, [](const Var& x) { return affine(sum(x), 1.0); }));
  cases.push_back(unary("mean", matrix, [](const Var& x) { return affine(mean(x), 1.0); }));

  auto binary = [&](std::string name, std::function<Var(const Var&, const Var&)> op) {
    cases.push_back({std::move(name),
                     [](Rng& rng) {
                       const std::vector<std::size_t> shape{dim(rng), dim(rng)};
                       return std::vector<Tensor>{uniform(rng, shape, -2, 2), uniform(rng, shape, -2, 2)};
                     },
                     [op](Tape&, std::span<const Var> v) { return weighted(op(v[0], v[1]), 5); }});
  };
  binary("add", [](const Var& a, const Var& b) { return add(a, b); });
  binary("sub", [](const Var& a, const Var& b) { return sub(a, b); });
  binary("mul", [](const Var& a, const Var& b) { return mul(a, b); });

  cases.push_back(unary("mul_const", matrix,
                        [](const Var& x) { return mul_const(x, fixed_like(x.value(), 19)); }));

  cases.push_back({"mean_pool_segments",
                   [](Rng& rng) {
                     const std::size_t segs = dim(rng, 1, 4);
                     Tensor lengths({segs});
                     std::size_t rows = 0;
                     for (std::size_t i = 0; i < segs; ++i) {
                       lengths[i] = static_cast<double>(dim(rng, 1, 3));
                       rows += static_cast<std::size_t>(lengths[i]);
                     }
                     return std::vector<Tensor>{uniform(rng, {rows, dim(rng)}, -2, 2), lengths};
                   },
                   [](Tape&, std::span<const Var> v) {
                     std::vector<std::size_t> lengths;
                     for (double l : v[1].value().values()) lengths.push_back(static_cast<std::size_t>(std::lround(l)));
                     return weighted(mean_pool_segments(v[0], lengths), 7);
                   }});

  cases.push_back({"slice_rows",
                   [](Rng& rng) { return std::vector<Tensor>{uniform(rng, {dim(rng, 2, 8), dim(rng)}, -2, 2)}; },
                   [](Tape&, std::span<const Var> v) {
                     const std::size_t rows = v[0].value().rows();
                     return weighted(slice_rows(v[0], 1, rows - 1), 9);
                   }});

  cases.push_back({"concat_rows",
                   [](Rng& rng) {
                     const std::size_t cols = dim(rng);
                     return std::vector<Tensor>{uniform(rng, {dim(rng), cols}, -2, 2),
                                                uniform(rng, {dim(rng), cols}, -2, 2)};
                   },
                   [](Tape&, std::span<const Var> v) { return weighted(concat_rows(v[0], v[1]), 11); }});

  cases.push_back({"mse", [](Rng& rng) { return std::vector<Tensor>{matrix(rng)}; },
                   [](Tape&, std::span<const Var> v) { return mse(v[0], fixed_like(v[0].value(), 23)); }});

  // Losses, differentiated with respect to the logits that feed them.
  auto logits_and_labels = [](std::size_t classes_lo, std::size_t classes_hi) {
    return [=](Rng& rng) {
      const std::size_t b = dim(rng), c = dim(rng, classes_lo, classes_hi);
      Tensor lab({b});
      for (std::size_t i = 0; i < b; ++i) lab[i] = static_cast<double>(rng.below(c));
      return std::vector<Tensor>{uniform(rng, {b, c}, -2, 2), lab};
    };
  };
  cases.push_back({"task_loss", logits_and_labels(2, 8), [](Tape&, std::span<const Var> v) {
                     return task_loss(v[0], as_ints(v[1].value()));
                   }});
  cases.push_back({"bce_domain_loss", logits_and_labels(1, 1), [](Tape&, std::span<const Var> v) {
                     std::vector<int> d;
                     for (std::size_t i = 0; i < v[0].value().rows(); ++i) d.push_back(static_cast<int>(i % 2));
                     return bce_domain_loss(sigmoid(v[0]), d);
                   }});
  cases.push_back({"ce_domain_loss", logits_and_labels(2, 8), [](Tape&, std::span<const Var> v) {
                     return ce_domain_loss(softmax_rows(v[0]), as_ints(v[1].value()));
                   }});
  cases.push_back({"entropy_domain_loss", logits_and_labels(2, 8), [](Tape&, std::span<const Var> v) {
                     return entropy_domain_loss(softmax_rows(v[0]));
                   }});
  cases.push_back({"bce_domain_loss_logits", logits_and_labels(1, 1), [](Tape&, std::span<const Var> v) {
                     std::vector<int> d;
                     for (std::size_t i = 0; i < v[0].value().rows(); ++i) d.push_back(static_cast<int>(i % 2));
                     return bce_domain_loss_logits(v[0], d);
                   }});
  cases.push_back({"ce_domain_loss_logits", logits_and_labels(2, 8), [](Tape&, std::span<const Var> v) {
                     return ce_domain_loss_logits(v[0], as_ints(v[1].value()));
                   }});
  cases.push_back({"entropy_domain_loss_logits", logits_and_labels(2, 8), [](Tape&, std::span<const Var> v) {
                     return entropy_domain_loss_logits(v[0]);
                   }});
  return cases;
}

std::vector<CaseReport> run_gradcheck(std::size_t instances, std::uint64_t seed, double step) {
  std::vector<CaseReport> reports;
  const auto cases = op_cases();
  for (std::size_t c = 0; c < cases.size(); ++c) {
    Rng rng(derive_seed(seed, c));
    CaseReport r{cases[c].name, instances, 0.0};
    for (std::size_t i = 0; i < instances; ++i) {
      const auto inputs = cases[c].inputs(rng);
      const auto a = autodiff_gradient(cases[c].graph, inputs);
      const auto n = numeric_gradient(cases[c].graph, inputs, step);
      r.max_rel = std::max(r.max_rel, max_relative_error(a, n));
    }
    reports.push_back(r);
  }
  return reports;
}

double reversal_deviation(std::size_t instances, std::uint64_t seed, double lambda) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::vector<Tensor> inputs{uniform(rng, {dim(rng), dim(rng)}, -2, 2)};
    const GraphFn f = [lambda](Tape&, std::span<const Var> v) {
      return weighted(sigmoid(grad_reverse(v[0], lambda)), 13);
    };
    auto a = autodiff_gradient(f, inputs);
    auto n = numeric_gradient(f, inputs);
    for (std::size_t k = 0; k < n[0].size(); ++k) n[0][k] *= -lambda;
    worst = std::max(worst, max_relative_error(a, n));
  }
  return worst;
}

}  // namespace datforge::testing
