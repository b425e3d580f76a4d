#pragma once

// Finite-difference checks for tape gradients, shared by the unit tests and
// the acceptance runner.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "datforge/random.hpp"
#include "datforge/tape.hpp"

namespace datforge::testing {

/// Builds a scalar from leaves bound to the given inputs.
using GraphFn = std::function<Var(Tape&, std::span<const Var>)>;

std::vector<Tensor> autodiff_gradient(const GraphFn& f, const std::vector<Tensor>& inputs);
/// Central differences, one coordinate at a time.
std::vector<Tensor> numeric_gradient(const GraphFn& f, const std::vector<Tensor>& inputs,
                                     double step = 1e-6);

/// |a - n| / max(|a|, |n|, floor), maximized over all coordinates. The floor
/// turns the test absolute for coordinates whose gradient is essentially 0.
inline constexpr double kRelFloor = 1e-4;
double max_relative_error(const std::vector<Tensor>& a, const std::vector<Tensor>& n,
                          double floor = kRelFloor);

struct OpCase {
  std::string name;
  std::function<std::vector<Tensor>(Rng&)> inputs;
  GraphFn graph;
};

/// Every differentiable op and loss, each reduced to a scalar through a
/// random fixed weighting of its output so the full Jacobian is exercised.
std::vector<OpCase> op_cases();

struct CaseReport {
  std::string name;
  std::size_t instances = 0;
  double max_rel = 0.0;
};

std::vector<CaseReport> run_gradcheck(std::size_t instances, std::uint64_t seed,
                                      double step = 1e-6);

/// Reversal check: for random x and weights, autodiff through
/// grad_reverse(x, lambda) must equal -lambda times the finite difference of
/// the identical graph; returns the largest deviation (relative, as above).
double reversal_deviation(std::size_t instances, std::uint64_t seed, double lambda);

}  // namespace datforge::testing
