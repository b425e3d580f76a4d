#include "fixtures.hpp"

#include "datforge/random.hpp"

namespace datforge::testing {

namespace {

std::vector<LabeledClip> shortened(std::vector<LabeledClip> clips) {
  for (auto& c : clips) c.wave.samples.resize(4000);
  return clips;
}

}  // namespace

TinyExperiment tiny_experiment(std::uint64_t seed, int n_per_class) {
  TinyExperiment e;
  const auto train = shortened(synth_corpus(n_per_class, 4, seed, "tr"));
  const auto test = shortened(synth_corpus(4, 4, derive_seed(seed, 77), "te"));
  const NoiseBank noise = NoiseBank::procedural();
  const ReverbBank reverb(seed);
  e.split = build_splits(train, test, seed, noise, reverb);
  std::vector<Waveform> clips;
  for (auto& c : shortened(synth_corpus(6, 4, derive_seed(seed, 99), "co"))) clips.push_back(c.wave);
  e.continual = build_continual_set(clips, seed, noise, reverb);
  e.data = prepare_corpus(e.split, e.continual);
  return e;
}

ModelDims tiny_dims() {
  ModelDims d;
  d.input = kBands;
  d.hidden = 16;
  d.feature = 8;
  d.classes = 4;
  d.distortion_kinds = 3;
  return d;
}

TrainConfig tiny_config(std::uint64_t seed) {
  TrainConfig c;
  c.seed = seed;
  c.epochs = 3;
  c.continual_epochs = 2;
  c.batch_size = 8;
  c.eta = c.alpha = c.beta = 1e-2;
  return c;
}

}  // namespace datforge::testing
