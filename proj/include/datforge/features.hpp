#pragma once

// Log band-energy front end: 25 ms Hann frames every 10 ms, 512-point FFT
// magnitude, 64 mel-spaced triangular bands, natural log floored at 1e-8.

#include <cstddef>
#include <span>
#include <vector>

#include "datforge/audio.hpp"
#include "datforge/objectives.hpp"
#include "datforge/tensor.hpp"

namespace datforge {

inline constexpr std::size_t kFrameWindow = 400;
inline constexpr std::size_t kFrameHop = 160;
inline constexpr std::size_t kFftSize = 512;
inline constexpr std::size_t kBands = 64;
inline constexpr double kLogFloor = 1e-8;

/// floor((len - window) / hop) + 1
std::size_t frame_count(std::size_t samples);

/// T x 64 log band magnitudes. Throws ArgumentError for clips shorter than
/// one window and for sample rates other than 16 kHz.
Tensor featurize(const Waveform& w);

/// Band weights (257 x 64), row-major; exposed for tests.
const std::vector<double>& band_weights();

/// One affine map shared by all bands, (x - mean) / sd, fitted on a
/// reference set of frames. Bands stay comparable: a band sitting at the
/// log floor in clean audio is not blown up by a tiny per-band variance.
class FeatureNormalizer {
 public:
  FeatureNormalizer() = default;
  static FeatureNormalizer fit(std::span<const Tensor* const> utterances);

  void apply(Tensor& frames) const;
  bool fitted() const { return fitted_; }
  double mean() const { return mean_; }
  double scale() const { return scale_; }

 private:
  double mean_ = 0.0;
  double scale_ = 1.0;
  bool fitted_ = false;
};

struct LabeledFeatures {
  Tensor frames;
  int label = 0;
};

struct DomainFeatures {
  Tensor frames;
  DomainLabel domain;
};

}  // namespace datforge
