#pragma once

#include <cstdint>

#include "datforge/trainer.hpp"

namespace datforge::testing {

/// A quarter-second-clip corpus small enough for unit tests: 4 classes,
/// n_per_class training clips each, 4 test clips per class, 24 continual clips.
struct TinyExperiment {
  CorpusSplit split;
  std::vector<ContinualExample> continual;
  PreparedCorpus data;
};

TinyExperiment tiny_experiment(std::uint64_t seed, int n_per_class = 8);

/// Dims matching the tiny corpus with narrow layers.
ModelDims tiny_dims();

/// Few epochs, small batches.
TrainConfig tiny_config(std::uint64_t seed);

}  // namespace datforge::testing
