#include "datforge/optim.hpp"

#include <cmath>
#include <set>

#include "datforge/errors.hpp"
#include "datforge/kernels.hpp"

namespace datforge {

double GroupRates::rate(ParamGroup group) const {
  switch (group) {
    case ParamGroup::feature_extractor:
      return eta;
    case ParamGroup::label_predictor:
      return alpha;
    case ParamGroup::domain_classifier:
      return beta;
  }
  throw ArgumentError("unknown parameter group");
}

Optimizer::Optimizer(OptimizerKind kind, GroupRates rates, AdamHyper hyper)
    : kind_(kind), rates_(rates), hyper_(hyper) {
  for (double r : {rates.eta, rates.alpha, rates.beta})
    if (!(r >= 0.0) || !std::isfinite(r))
      throw ConfigError("learning rates must be finite and non-negative");
}

void Optimizer::step(std::span<Parameter* const> params) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  std::set<std::string> seen;
  for (Parameter* p : params) {
    if (!seen.insert(p->name()).second)
      throw ArgumentError("duplicate parameter name in optimizer step: " + p->name());
    // Parameter construction guarantees a grad buffer of matching shape.
    if (!p->grad.same_shape(p->value))
      throw Error("internal: gradient buffer missing for " + p->name());
    const double lr = rates_.rate(p->group());

    if (kind_ == OptimizerKind::sgd) {
      kernels::axpy(-lr, p->grad.data(), p->value.data(), p->value.size());
    } else {
      auto [it, inserted] = moments_.try_emplace(
          p->name(), Moments{Tensor::zeros_like(p->value), Tensor::zeros_like(p->value)});
      Moments& mom = it->second;
      if (!mom.m.same_shape(p->value))
        throw ArgumentError("parameter " + p->name() + " changed shape between steps");
      const kernels::AdamCoeffs coeffs{lr,
                                       hyper_.beta1,
                                       hyper_.beta2,
                                       hyper_.eps,
                                       1.0 - std::pow(hyper_.beta1, t),
                                       1.0 - std::pow(hyper_.beta2, t)};
      kernels::adam_update(p->value.data(), mom.m.data(), mom.v.data(),
                           p->grad.data(), p->value.size(), coeffs);
    }
    p->zero_grad();
  }
}

}  // namespace datforge
