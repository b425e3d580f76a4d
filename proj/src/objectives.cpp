#include "datforge/objectives.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "datforge/errors.hpp"

namespace datforge {

std::string_view objective_name(DomainObjective objective) {
  switch (objective) {
    case DomainObjective::bce:
      return "bce";
    case DomainObjective::ce:
      return "ce";
    case DomainObjective::entropy:
      return "entropy";
  }
  return "unknown";
}

DomainObjective parse_objective(std::string_view name) {
  if (name == "bce") return DomainObjective::bce;
  if (name == "ce") return DomainObjective::ce;
  if (name == "entropy") return DomainObjective::entropy;
  throw ConfigError("unknown domain objective '" + std::string(name) + "'");
}

std::string_view setting_name(DomainSetting setting) {
  return setting == DomainSetting::binary ? "binary" : "multi";
}

DomainSetting parse_setting(std::string_view name) {
  if (name == "binary") return DomainSetting::binary;
  if (name == "multi") return DomainSetting::multi;
  throw ConfigError("unknown domain setting '" + std::string(name) + "'");
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  if (labels.empty()) throw ArgumentError("one_hot: empty label list");
  Tensor out({labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw ArgumentError("label " + std::to_string(labels[i]) + " outside [0, " +
                          std::to_string(classes) + ")");
    out.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return out;
}

Var bce_domain_loss(const Var& probs, std::span<const int> labels) {
  const std::size_t batch = probs.value().size();
  if (batch == 0 || labels.empty()) throw ArgumentError("bce_domain_loss: empty batch");
  if (labels.size() != batch)
    throw DimensionError("bce_domain_loss: " + std::to_string(batch) + " outputs vs " +
                         std::to_string(labels.size()) + " labels");
  Tensor d(probs.value().shape());
  Tensor not_d(probs.value().shape());
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw ArgumentError("bce_domain_loss: labels must be 0 or 1");
    d[i] = labels[i];
    not_d[i] = 1.0 - labels[i];
  }
  const Var p = clamp(probs, kProbClamp, 1.0 - kProbClamp);
  const Var pos = mul_const(log(p), d);
  const Var neg = mul_const(log(affine(p, -1.0, 1.0)), not_d);
  return affine(sum(add(pos, neg)), -1.0 / static_cast<double>(batch));
}

Var ce_domain_loss(const Var& probs, const Tensor& one_hot_labels) {
  const Tensor& pv = probs.value();
  if (!pv.same_shape(one_hot_labels) || pv.rank() != 2)
    throw DimensionError("ce_domain_loss: probabilities " + shape_string(pv.shape()) +
                         " vs labels " + shape_string(one_hot_labels.shape()));
  const std::size_t rows = pv.rows();
  const std::size_t cols = pv.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    int ones = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = one_hot_labels.at(r, c);
      if (v == 1.0)
        ++ones;
      else if (v != 0.0)
        ones = -100;
    }
    if (ones != 1)
      throw ArgumentError("ce_domain_loss: row " + std::to_string(r) + " is not one-hot");
  }
  const Var logp = log(clamp(probs, kProbClamp, 1.0));
  return affine(sum(mul_const(logp, one_hot_labels)), -1.0 / static_cast<double>(rows));
}

Var ce_domain_loss(const Var& probs, std::span<const int> labels) {
  return ce_domain_loss(probs, one_hot(labels, probs.value().cols()));
}

Var entropy_domain_loss(const Var& probs) {
  const Tensor& pv = probs.value();
  if (pv.rank() != 2) throw DimensionError("entropy_domain_loss: expected a matrix of rows");
  const Var logp = log(clamp(probs, kProbClamp, 1.0));
  return affine(sum(mul(probs, logp)), -1.0 / static_cast<double>(pv.rows()));
}

Var bce_domain_loss_logits(const Var& logits, std::span<const int> labels) {
  const std::size_t batch = logits.value().size();
  if (batch == 0 || labels.empty()) throw ArgumentError("bce_domain_loss: empty batch");
  if (labels.size() != batch)
    throw DimensionError("bce_domain_loss: " + std::to_string(batch) + " outputs vs " +
                         std::to_string(labels.size()) + " labels");
  // -[d log s(z) + (1-d) log(1-s(z))] = softplus(z) - d z
  const Tensor& z = logits.value();
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw ArgumentError("bce_domain_loss: labels must be 0 or 1");
    const double softplus = z[i] > 0.0 ? z[i] + std::log1p(std::exp(-z[i])) : std::log1p(std::exp(z[i]));
    total += softplus - labels[i] * z[i];
  }
  std::vector<int> d(labels.begin(), labels.end());
  const double inv_b = 1.0 / static_cast<double>(batch);
  return logits.tape().record(Tensor::scalar(total * inv_b), {logits},
                              [d = std::move(d), inv_b](BackwardContext& ctx) {
                                const Tensor& zv = ctx.input_value(0);
                                const double g = ctx.out_grad()[0] * inv_b;
                                Tensor& gz = ctx.input_grad(0);
                                for (std::size_t i = 0; i < zv.size(); ++i) {
                                  const double s = zv[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-zv[i]))
                                                                : std::exp(zv[i]) / (1.0 + std::exp(zv[i]));
                                  gz[i] += g * (s - d[i]);
                                }
                              });
}

Var ce_domain_loss_logits(const Var& logits, std::span<const int> labels) {
  if (labels.empty()) throw ArgumentError("ce_domain_loss: empty batch");
  const Tensor targets = one_hot(labels, logits.value().cols());
  if (logits.value().rows() != labels.size())
    throw DimensionError("ce_domain_loss: " + std::to_string(logits.value().rows()) +
                         " rows vs " + std::to_string(labels.size()) + " labels");
  return affine(sum(mul_const(log_softmax_rows(logits), targets)),
                -1.0 / static_cast<double>(labels.size()));
}

Var entropy_domain_loss_logits(const Var& logits) {
  if (logits.value().rank() != 2)
    throw DimensionError("entropy_domain_loss: expected a matrix of rows");
  return affine(sum(mul(softmax_rows(logits), log_softmax_rows(logits))),
                -1.0 / static_cast<double>(logits.value().rows()));
}

Var task_loss(const Var& logits, std::span<const int> labels) {
  const Tensor& lv = logits.value();
  if (labels.empty()) throw ArgumentError("task_loss: empty batch");
  if (lv.rows() != labels.size())
    throw DimensionError("task_loss: " + std::to_string(lv.rows()) + " rows vs " +
                         std::to_string(labels.size()) + " labels");
  const Tensor targets = one_hot(labels, lv.cols());
  return affine(sum(mul_const(log_softmax_rows(logits), targets)),
                -1.0 / static_cast<double>(labels.size()));
}

}  // namespace datforge
