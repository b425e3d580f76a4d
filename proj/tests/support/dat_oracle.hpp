#pragma once

// Independent recomputation of one plain-SGD adversarial step: gradients of
// L_y and L_d are taken on separate tapes (probability-form losses, no
// reversal) and combined by hand, then compared with what dat_step did.

#include <cstdint>

#include "datforge/trainer.hpp"

namespace datforge::testing {

struct SgdCheck {
  double max_abs_dev = 0.0;   // over every parameter entry
  double max_abs_delta = 0.0; // size of the update itself, to show it is not trivial
  std::size_t entries = 0;
};

/// Small model, fixed batch (3 clean, 3 distorted utterances), rates 0.1 /
/// 0.05 / 0.2 so each group is distinguishable.
SgdCheck sgd_update_check(double lambda, std::uint64_t seed);

}  // namespace datforge::testing
