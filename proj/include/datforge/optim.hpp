#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>

#include "datforge/tape.hpp"

namespace datforge {

/// Per-group learning rates: eta for the feature extractor, alpha for the
/// label predictor, beta for the domain classifier.
struct GroupRates {
  double eta = 1e-3;
  double alpha = 1e-3;
  double beta = 1e-3;

  double rate(ParamGroup group) const;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

enum class OptimizerKind { adam, sgd };

/// Applies one update to a set of parameters, each with its group's
/// learning rate, then zeroes their gradients. Adam moment buffers are keyed
/// by parameter name and persist across steps.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, GroupRates rates, AdamHyper hyper = {});

  void step(std::span<Parameter* const> params);

  std::size_t steps_taken() const { return steps_; }
  OptimizerKind kind() const { return kind_; }
  const GroupRates& rates() const { return rates_; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
  };

  OptimizerKind kind_;
  GroupRates rates_;
  AdamHyper hyper_;
  std::size_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace datforge
