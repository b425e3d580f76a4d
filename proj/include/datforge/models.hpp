#pragma once

// The three networks of a domain-adversarial setup at desk scale:
//   feature extractor  f : per-frame MLP, F -> hidden -> hidden -> D (relu),
//                          each frame rescaled to unit RMS
//   label predictor    y : mean-pool over frames, then linear D -> C
//   domain classifier  d : mean-pool, optional gradient reversal, linear
//                          D -> K+1 (multi) or D -> 1 (binary, sigmoid)

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "datforge/objectives.hpp"
#include "datforge/ops.hpp"
#include "datforge/tape.hpp"

namespace datforge {

struct ModelDims {
  std::size_t input = 64;    // F, band energies per frame
  std::size_t hidden = 64;
  std::size_t feature = 32;  // D
  std::size_t classes = 4;   // C
  std::size_t distortion_kinds = 3;  // K

  std::size_t domain_outputs(DomainSetting setting) const {
    return setting == DomainSetting::binary ? 1 : distortion_kinds + 1;
  }
};

/// Frames of several utterances stacked row-wise.
struct FrameBatch {
  Tensor frames;                     // (sum of lengths) x F
  std::vector<std::size_t> lengths;  // frames per utterance

  std::size_t utterances() const { return lengths.size(); }
};

FrameBatch stack_frames(std::span<const Tensor* const> utterances);

/// How a forward pass binds parameters: as trainable tape leaves or as
/// constants (no gradient reaches them).
enum class Binding { trainable, frozen };

class FeatureExtractor {
 public:
  FeatureExtractor(const ModelDims& dims, std::uint64_t seed);

  /// frames: N x F  ->  N x D
  Var forward(Tape& tape, const Var& frames, Binding binding = Binding::trainable);
  /// Inference without gradient bookkeeping.
  Tensor apply(const Tensor& frames) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t input_dim() const { return w1.value.shape()[0]; }
  std::size_t output_dim() const { return w3.value.shape()[1]; }

  Parameter w1, b1, w2, b2, w3, b3;
};

class LabelPredictor {
 public:
  LabelPredictor(const ModelDims& dims, std::uint64_t seed);

  /// features: N x D stacked, lengths per utterance -> B x C logits
  Var forward(Tape& tape, const Var& features, std::span<const std::size_t> lengths,
              Binding binding = Binding::trainable);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  Parameter w, b;
};

/// Gradient path between the pooled features and the domain classifier.
struct DomainPath {
  enum class Mode { adversarial, probe, detached };
  Mode mode = Mode::adversarial;
  double lambda = 0.0;

  static DomainPath adversarial(double lambda) { return {Mode::adversarial, lambda}; }
  /// No reversal; the extractor sees the plain domain-loss gradient.
  static DomainPath probe() { return {Mode::probe, 0.0}; }
  /// No gradient reaches the extractor at all.
  static DomainPath detached() { return {Mode::detached, 0.0}; }
};

class DomainClassifier {
 public:
  DomainClassifier(const ModelDims& dims, DomainSetting setting, std::uint64_t seed);

  /// features: N x D stacked -> B x (K+1) logits, or B x 1 under binary.
  Var forward(Tape& tape, const Var& features, std::span<const std::size_t> lengths,
              DomainPath path, Binding binding = Binding::trainable);

  DomainSetting setting() const { return setting_; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  Parameter w, b;

 private:
  DomainSetting setting_;
};

/// Feature extractor, label predictor and domain classifier with disjoint
/// parameter groups. Copying yields an independent model.
class DannModel {
 public:
  DannModel(const ModelDims& dims, DomainSetting setting, std::uint64_t seed);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<Parameter*> parameters(ParamGroup group);

  const ModelDims& dims() const { return dims_; }

  FeatureExtractor extractor;
  LabelPredictor predictor;
  DomainClassifier domain;

 private:
  ModelDims dims_;
};

/// Argmax class per utterance (ties -> lowest index).
std::vector<int> predict_classes(const DannModel& model, const FrameBatch& batch);

// Checkpoints: text listing headed by "DATFORGE-CKPT-1"; one record per
// parameter (name, group, shape, row-major values in shortest round-trip
// decimal form), so save/load is bit-exact.
inline constexpr const char* kCheckpointHeader = "DATFORGE-CKPT-1";

void write_checkpoint(std::ostream& out, std::span<const Parameter* const> params);
void save_checkpoint(const std::string& path, std::span<const Parameter* const> params);

/// Loads values into `params` by name; shapes and groups must match and
/// every parameter must be present.
void read_checkpoint(std::istream& in, std::span<Parameter* const> params);
void load_checkpoint(const std::string& path, std::span<Parameter* const> params);

/// Combined checksum of parameter values, in the order given.
std::uint64_t parameters_checksum(std::span<const Parameter* const> params);

}  // namespace datforge
