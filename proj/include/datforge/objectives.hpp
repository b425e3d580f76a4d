#pragma once

// Domain-classifier objectives (binary cross entropy, multi-class cross
// entropy, entropy) and the downstream classification loss. All losses
// average over the mini-batch and clamp probabilities from below at
// kProbClamp before taking logs; BCE also clamps at 1 - kProbClamp so that
// log(1 - p) stays finite.

#include <span>
#include <string_view>

#include "datforge/ops.hpp"

namespace datforge {

inline constexpr double kProbClamp = 1e-7;

enum class DomainObjective { bce, ce, entropy };
enum class DomainSetting { binary, multi };

std::string_view objective_name(DomainObjective objective);
DomainObjective parse_objective(std::string_view name);
std::string_view setting_name(DomainSetting setting);
DomainSetting parse_setting(std::string_view name);

/// Domain index: 0 = clean/source, 1..K = distortion type.
struct DomainLabel {
  int index = 0;

  /// Under the binary setting every distortion collapses to 1.
  int for_setting(DomainSetting setting) const {
    return setting == DomainSetting::binary ? (index > 0 ? 1 : 0) : index;
  }
};

/// -(1/B) sum [d log p + (1 - d) log(1 - p)] over B sigmoid outputs.
Var bce_domain_loss(const Var& probs, std::span<const int> labels);

/// -(1/B) sum_i sum_k D[i,k] log P[i,k]; every row of D must be one-hot.
Var ce_domain_loss(const Var& probs, const Tensor& one_hot);
Var ce_domain_loss(const Var& probs, std::span<const int> labels);

/// -(1/B) sum_i sum_k P[i,k] log P[i,k]; maximal for uniform rows.
Var entropy_domain_loss(const Var& probs);

// The same three objectives evaluated from logits (sigmoid / softmax folded
// in). Exact log-sum-exp arithmetic replaces the probability clamp, so the
// gradient never vanishes for confidently wrong rows. Values agree with the
// probability forms wherever no probability falls below kProbClamp.
Var bce_domain_loss_logits(const Var& logits, std::span<const int> labels);
Var ce_domain_loss_logits(const Var& logits, std::span<const int> labels);
Var entropy_domain_loss_logits(const Var& logits);

/// Mean cross entropy of class labels under log-softmax(logits).
Var task_loss(const Var& logits, std::span<const int> labels);

Tensor one_hot(std::span<const int> labels, std::size_t classes);

}  // namespace datforge
