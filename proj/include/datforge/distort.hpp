#pragma once

// Synthetic corpus, distortion generators and the data-split protocol:
//   * labeled training corpus halved into a clean labeled source split and
//     a distorted target split whose class labels stay hidden;
//   * target kinds additive/gaussian/reverb in proportions 0.3/0.4/0.3 with
//     SNR ~ U[10, 20] dB for additive noise;
//   * three test sets: clean, seen distortions, unseen distortions;
//   * an unlabeled continual-training set with clean/additive/gaussian/
//     reverb in equal shares.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "datforge/audio.hpp"
#include "datforge/objectives.hpp"
#include "datforge/stage.hpp"

namespace datforge {

enum class DistortionKind { clean, additive_bank, gaussian, reverb };

std::string_view kind_name(DistortionKind kind);
DistortionKind parse_kind(std::string_view name);
/// clean -> 0, additive_bank -> 1, gaussian -> 2, reverb -> 3.
DomainLabel domain_of(DistortionKind kind);

enum class NoiseFamily {
  // seen during training
  babble,
  band_noise,
  clicks,
  // reserved for the unseen test set
  chirps,
  am_narrowband,
  // file from an external noise directory
  external,
};

std::string_view family_name(NoiseFamily family);

inline constexpr std::array<NoiseFamily, 3> kSeenFamilies{NoiseFamily::babble,
                                                          NoiseFamily::band_noise,
                                                          NoiseFamily::clicks};
inline constexpr std::array<NoiseFamily, 2> kUnseenFamilies{NoiseFamily::chirps,
                                                            NoiseFamily::am_narrowband};

inline constexpr std::array<double, 3> kSeenT60{0.2, 0.5, 0.8};
inline constexpr std::array<double, 2> kUnseenT60{0.35, 0.65};

struct DistortionSpec {
  DistortionKind kind = DistortionKind::clean;
  std::optional<double> snr_db;  // additive kinds only
  std::optional<int> ir_id;      // reverb only
  std::uint64_t seed = 0;
  NoiseFamily family = NoiseFamily::babble;  // additive_bank only
  std::string noise_source;                  // external file name, if any

  bool is_additive() const {
    return kind == DistortionKind::additive_bank || kind == DistortionKind::gaussian;
  }
};

/// Throws ArgumentError if snr/ir presence does not match the kind.
void validate(const DistortionSpec& spec);

// ---- generators -----------------------------------------------------------

/// Gain g such that 10 log10(P_clean / P(g * noise)) == snr_db.
double snr_noise_gain(double clean_power, double noise_power, double snr_db);

/// clean + g * noise (noise looped or cropped to the clean length), then
/// peak-normalized. Throws ArgumentError for silent noise.
Waveform mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db);

Waveform add_gaussian(const Waveform& clean, double snr_db, std::uint64_t seed);

/// Causal convolution truncated to the clean length, then peak-normalized.
/// ir must be non-empty with ir[0] != 0.
Waveform apply_reverb(const Waveform& clean, std::span<const double> ir);

/// Exponentially decaying noise tail (60 dB down after t60 seconds) behind a
/// unit direct path. Tail energy equals direct-path energy.
std::vector<double> make_reverb_ir(double t60, std::uint64_t seed,
                                   int sample_rate = kDefaultSampleRate);

/// Procedural noise of the given family; never silent.
Waveform generate_noise(NoiseFamily family, std::size_t length, std::uint64_t seed,
                        int sample_rate = kDefaultSampleRate);

/// Source of additive noise clips. Procedural by default; with a noise
/// directory, WAV files are split into seen/unseen pools by a hash of their
/// file names.
class NoiseBank {
 public:
  static NoiseBank procedural();
  static NoiseBank from_directory(const std::filesystem::path& dir);

  bool is_external() const { return !seen_files_.empty() || !unseen_files_.empty(); }
  const std::vector<std::filesystem::path>& seen_files() const { return seen_files_; }
  const std::vector<std::filesystem::path>& unseen_files() const { return unseen_files_; }

  /// Picks a family (or file) for an additive distortion; `unseen` selects
  /// the held-out pool.
  void choose(DistortionSpec& spec, bool unseen, std::uint64_t draw) const;

  /// Noise clip for an additive_bank spec, looped/cropped to `length`.
  Waveform render(const DistortionSpec& spec, std::size_t length, int sample_rate) const;

 private:
  std::vector<std::filesystem::path> seen_files_;
  std::vector<std::filesystem::path> unseen_files_;
};

/// Fixed set of seeded impulse responses; ids [0, 3) are the training decay
/// times, ids [3, 5) the unseen ones.
class ReverbBank {
 public:
  explicit ReverbBank(std::uint64_t seed, int sample_rate = kDefaultSampleRate);

  std::span<const double> ir(int id) const;
  int size() const { return static_cast<int>(irs_.size()); }
  static constexpr int kSeenCount = static_cast<int>(kSeenT60.size());

 private:
  std::vector<std::vector<double>> irs_;
};

Waveform apply_distortion(const Waveform& clean, const DistortionSpec& spec,
                          const NoiseBank& noise, const ReverbBank& reverb);

// ---- corpora and splits ---------------------------------------------------

struct LabeledClip {
  std::string id;
  Waveform wave;
  int label = 0;
};

/// Class c is a tone at 220 * 2^(c/4) Hz plus its third harmonic, with
/// random phase, amplitude in [0.3, 0.8] and a mild amplitude envelope.
/// One second per clip; classes interleaved (clip i has class i % classes).
std::vector<LabeledClip> synth_corpus(int n_per_class, int classes, std::uint64_t seed,
                                      std::string_view id_prefix = "syn");

/// Largest-remainder apportionment of n items over integer weights; ties go
/// to the earlier weight.
std::vector<std::size_t> apportion(std::size_t n, std::span<const int> weights);

struct SourceExample {
  std::string id;
  Waveform wave;
  int label = 0;
};

/// Distorted target-domain utterance. Deliberately has no class label.
struct TargetExample {
  std::string id;
  Waveform wave;
  DistortionSpec spec;
  DomainLabel domain;
};

struct TestExample {
  std::string id;
  Waveform wave;
  int label = 0;
  DistortionSpec spec;
};

struct SplitOptions {
  std::array<int, 3> target_weights{3, 4, 3};  // additive, gaussian, reverb
  double snr_min_db = 10.0;
  double snr_max_db = 20.0;
  /// Unseen test recipe: unseen-family additive noise vs unseen-decay reverb.
  std::array<int, 2> unseen_weights{7, 3};
};

class CorpusSplit {
 public:
  std::vector<SourceExample> source;
  std::vector<TargetExample> target;
  std::vector<TestExample> test_clean;
  std::vector<TestExample> test_seen;
  std::vector<TestExample> test_unseen;

  /// Class labels of the target split, readable only by the oracle stage.
  std::vector<int> target_labels(StageKind stage) const;

 private:
  friend CorpusSplit build_splits(const std::vector<LabeledClip>&,
                                  const std::vector<LabeledClip>&, std::uint64_t,
                                  const NoiseBank&, const ReverbBank&, const SplitOptions&);
  std::vector<int> target_labels_;
};

/// Shuffle-splits `train` 50/50 into source and target, distorts the target
/// half, and builds the three test sets from `test`.
CorpusSplit build_splits(const std::vector<LabeledClip>& train,
                         const std::vector<LabeledClip>& test, std::uint64_t seed,
                         const NoiseBank& noise, const ReverbBank& reverb,
                         const SplitOptions& options = {});

struct ContinualExample {
  std::string id;
  Waveform input;   // distorted (or clean) clip
  Waveform clean;   // its clean source
  DistortionKind kind = DistortionKind::clean;
};

/// Unlabeled clips in equal shares of additive/gaussian/reverb/clean.
std::vector<ContinualExample> build_continual_set(const std::vector<Waveform>& clips,
                                                  std::uint64_t seed, const NoiseBank& noise,
                                                  const ReverbBank& reverb,
                                                  const SplitOptions& options = {});

}  // namespace datforge
