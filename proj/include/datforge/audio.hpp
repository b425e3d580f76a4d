#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace datforge {

inline constexpr int kDefaultSampleRate = 16000;

/// Mono audio with samples nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = kDefaultSampleRate;
  /// Product of all peak-normalization gains applied so far.
  double normalization_gain = 1.0;

  std::size_t size() const { return samples.size(); }
  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// Throws ArgumentError for an empty waveform or non-positive rate.
void require_valid(const Waveform& w, const char* who);

/// Mean squared amplitude.
double power(std::span<const double> samples);
inline double power(const Waveform& w) { return power(w.samples); }

double peak(const Waveform& w);

/// Scales the waveform into [-1, 1] when its peak exceeds 1 and records the
/// gain. Returns the gain applied (1 if untouched).
double peak_normalize(Waveform& w);

// 16-bit PCM, mono, 16 kHz, little-endian RIFF/WAVE. Anything else is
// rejected with a FormatError that names the offending header field.
Waveform decode_wav(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_wav(const Waveform& w);
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

}  // namespace datforge
