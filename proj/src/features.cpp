#include "datforge/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>

#include "datforge/errors.hpp"
#include "datforge/kernels.hpp"

namespace datforge {
namespace {

constexpr std::size_t kBins = kFftSize / 2 + 1;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> make_band_weights() {
  constexpr double lo_hz = 100.0;
  constexpr double hi_hz = kDefaultSampleRate / 2.0;
  const double lo = hz_to_mel(lo_hz);
  const double hi = hz_to_mel(hi_hz);
  std::vector<double> edges(kBands + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(kBands + 1));

  std::vector<double> w(kBins * kBands, 0.0);
  const double bin_hz = static_cast<double>(kDefaultSampleRate) / kFftSize;
  for (std::size_t b = 0; b < kBands; ++b) {
    const double left = edges[b], center = edges[b + 1], right = edges[b + 2];
    bool any = false;
    for (std::size_t k = 0; k < kBins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      double v = 0.0;
      if (f > left && f <= center)
        v = (f - left) / (center - left);
      else if (f > center && f < right)
        v = (right - f) / (right - center);
      w[k * kBands + b] = v;
      any = any || v > 0.0;
    }
    // bands narrower than a bin fall back to the nearest bin
    if (!any) w[static_cast<std::size_t>(std::lround(center / bin_hz)) * kBands + b] = 1.0;
  }
  return w;
}

const std::vector<double>& hann() {
  static const std::vector<double> window = [] {
    std::vector<double> h(kFrameWindow);
    for (std::size_t n = 0; n < kFrameWindow; ++n)
      h[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                  static_cast<double>(kFrameWindow));
    return h;
  }();
  return window;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

// FFTW planning is not thread-safe; executing a finished plan on new
// (equally aligned) buffers is.
fftw_plan shared_plan() {
  static std::mutex mu;
  static fftw_plan plan = nullptr;
  std::lock_guard lock(mu);
  if (!plan) {
    std::unique_ptr<double, FftwFree> in(fftw_alloc_real(kFftSize));
    std::unique_ptr<fftw_complex, FftwFree> out(fftw_alloc_complex(kBins));
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(kFftSize), in.get(), out.get(), FFTW_ESTIMATE);
  }
  return plan;
}

}  // namespace

std::size_t frame_count(std::size_t samples) {
  if (samples < kFrameWindow) return 0;
  return (samples - kFrameWindow) / kFrameHop + 1;
}

const std::vector<double>& band_weights() {
  static const std::vector<double> w = make_band_weights();
  return w;
}

Tensor featurize(const Waveform& w) {
  if (w.sample_rate != kDefaultSampleRate)
    throw ArgumentError("featurize: sample_rate=" + std::to_string(w.sample_rate) +
                        " (need 16000)");
  const std::size_t frames = frame_count(w.size());
  if (frames == 0)
    throw ArgumentError("featurize: clip of " + std::to_string(w.size()) +
                        " samples is shorter than one window (400)");
  const fftw_plan plan = shared_plan();
  std::unique_ptr<double, FftwFree> in(fftw_alloc_real(kFftSize));
  std::unique_ptr<fftw_complex, FftwFree> out(fftw_alloc_complex(kBins));
  const auto& window = hann();

  std::vector<double> mag(frames * kBins);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* src = w.samples.data() + t * kFrameHop;
    for (std::size_t n = 0; n < kFrameWindow; ++n) in.get()[n] = src[n] * window[n];
    std::fill(in.get() + kFrameWindow, in.get() + kFftSize, 0.0);
    fftw_execute_dft_r2c(plan, in.get(), out.get());
    for (std::size_t k = 0; k < kBins; ++k)
      mag[t * kBins + k] = std::hypot(out.get()[k][0], out.get()[k][1]);
  }

  Tensor result({frames, kBands}, 0.0);
  kernels::gemm(frames, kBands, kBins, mag.data(), kBins, 1, band_weights().data(), kBands,
                result.data(), kBands);
  for (std::size_t i = 0; i < result.size(); ++i)
    result[i] = std::log(std::max(result[i], kLogFloor));
  return result;
}

FeatureNormalizer FeatureNormalizer::fit(std::span<const Tensor* const> utterances) {
  if (utterances.empty()) throw ArgumentError("FeatureNormalizer: no utterances to fit on");
  double sum = 0.0, sq = 0.0, count = 0.0;
  for (const Tensor* u : utterances) {
    for (double v : u->values()) {
      sum += v;
      sq += v * v;
    }
    count += static_cast<double>(u->size());
  }
  const double mean = sum / count;
  const double sd = std::sqrt(std::max(sq / count - mean * mean, 0.0));
  if (!(sd > 0.0)) throw ArgumentError("FeatureNormalizer: reference frames are constant");
  FeatureNormalizer n;
  n.mean_ = mean;
  n.scale_ = 1.0 / sd;
  n.fitted_ = true;
  return n;
}

void FeatureNormalizer::apply(Tensor& frames) const {
  if (!fitted_) return;
  for (std::size_t i = 0; i < frames.size(); ++i) frames[i] = (frames[i] - mean_) * scale_;
}

}  // namespace datforge
