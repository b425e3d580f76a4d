#include "datforge/distort.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "datforge/errors.hpp"
#include "datforge/kernels.hpp"
#include "datforge/random.hpp"

namespace datforge {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// RBJ band-pass biquad (0 dB peak gain), applied in place.
void bandpass(std::vector<double>& x, double center_hz, double q, int sample_rate) {
  const double w0 = kTwoPi * center_hz / sample_rate;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double a0 = 1.0 + alpha;
  const double b0 = alpha / a0;
  const double b2 = -alpha / a0;
  const double a1 = -2.0 * std::cos(w0) / a0;
  const double a2 = (1.0 - alpha) / a0;
  double x1 = 0.0, x2 = 0.0, y1 = 0.0, y2 = 0.0;
  for (double& s : x) {
    const double y = b0 * s + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = s;
    y2 = y1;
    y1 = y;
    s = y;
  }
}

double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(rng.uniform(std::log(lo), std::log(hi)));
}

std::vector<double> fit_length(const std::vector<double>& src, std::size_t length) {
  std::vector<double> out(length);
  for (std::size_t i = 0; i < length; ++i) out[i] = src[i % src.size()];
  return out;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

TestExample as_test(const LabeledClip& clip, Waveform wave, DistortionSpec spec,
                    std::string_view suffix) {
  return TestExample{clip.id + std::string(suffix), std::move(wave), clip.label, std::move(spec)};
}

}  // namespace

std::string_view stage_name(StageKind kind) {
  switch (kind) {
    case StageKind::baseline:
      return "baseline";
    case StageKind::oracle:
      return "oracle";
    case StageKind::continual_only:
      return "continual_only";
    case StageKind::dat_only:
      return "dat_only";
    case StageKind::continual_plus_dat:
      return "continual_plus_dat";
  }
  return "unknown";
}

StageKind parse_stage(std::string_view name) {
  for (StageKind k : {StageKind::baseline, StageKind::oracle, StageKind::continual_only,
                      StageKind::dat_only, StageKind::continual_plus_dat})
    if (stage_name(k) == name) return k;
  throw ConfigError("unknown stage '" + std::string(name) + "'");
}

std::string_view kind_name(DistortionKind kind) {
  switch (kind) {
    case DistortionKind::clean:
      return "clean";
    case DistortionKind::additive_bank:
      return "additive_bank";
    case DistortionKind::gaussian:
      return "gaussian";
    case DistortionKind::reverb:
      return "reverb";
  }
  return "unknown";
}

DistortionKind parse_kind(std::string_view name) {
  for (DistortionKind k : {DistortionKind::clean, DistortionKind::additive_bank,
                           DistortionKind::gaussian, DistortionKind::reverb})
    if (kind_name(k) == name) return k;
  throw ConfigError("unknown distortion kind '" + std::string(name) + "'");
}

DomainLabel domain_of(DistortionKind kind) {
  switch (kind) {
    case DistortionKind::clean:
      return {0};
    case DistortionKind::additive_bank:
      return {1};
    case DistortionKind::gaussian:
      return {2};
    case DistortionKind::reverb:
      return {3};
  }
  return {0};
}

std::string_view family_name(NoiseFamily family) {
  switch (family) {
    case NoiseFamily::babble:
      return "babble";
    case NoiseFamily::band_noise:
      return "band_noise";
    case NoiseFamily::clicks:
      return "clicks";
    case NoiseFamily::chirps:
      return "chirps";
    case NoiseFamily::am_narrowband:
      return "am_narrowband";
    case NoiseFamily::external:
      return "external";
  }
  return "unknown";
}

void validate(const DistortionSpec& spec) {
  if (spec.is_additive() != spec.snr_db.has_value())
    throw ArgumentError("distortion " + std::string(kind_name(spec.kind)) +
                        (spec.is_additive() ? " requires" : " must not carry") + " an snr_db");
  if ((spec.kind == DistortionKind::reverb) != spec.ir_id.has_value())
    throw ArgumentError("distortion " + std::string(kind_name(spec.kind)) +
                        (spec.kind == DistortionKind::reverb ? " requires" : " must not carry") +
                        " an ir_id");
  if (spec.snr_db && (std::isnan(*spec.snr_db) || *spec.snr_db == -std::numeric_limits<double>::infinity()))
    throw ArgumentError("snr_db must not be -inf or NaN");
}

double snr_noise_gain(double clean_power, double noise_power, double snr_db) {
  if (!(noise_power > 0.0)) throw ArgumentError("mix_at_snr: noise is silent (zero power)");
  if (std::isnan(snr_db)) throw ArgumentError("mix_at_snr: snr_db is NaN");
  return std::sqrt(clean_power / (noise_power * std::pow(10.0, snr_db / 10.0)));
}

Waveform mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db) {
  require_valid(clean, "mix_at_snr");
  require_valid(noise, "mix_at_snr");
  if (clean.sample_rate != noise.sample_rate)
    throw ArgumentError("mix_at_snr: sample rates differ (" + std::to_string(clean.sample_rate) +
                        " vs " + std::to_string(noise.sample_rate) + ")");
  const std::vector<double> fitted = fit_length(noise.samples, clean.size());
  const double g = snr_noise_gain(power(clean), power(fitted), snr_db);
  Waveform out = clean;
  kernels::axpy(g, fitted.data(), out.samples.data(), out.size());
  peak_normalize(out);
  return out;
}

Waveform add_gaussian(const Waveform& clean, double snr_db, std::uint64_t seed) {
  require_valid(clean, "add_gaussian");
  if (!std::isfinite(snr_db)) throw ArgumentError("add_gaussian: snr_db must be finite");
  Rng rng(seed);
  Waveform noise{std::vector<double>(clean.size()), clean.sample_rate, 1.0};
  for (double& s : noise.samples) s = rng.normal();
  return mix_at_snr(clean, noise, snr_db);
}

Waveform apply_reverb(const Waveform& clean, std::span<const double> ir) {
  require_valid(clean, "apply_reverb");
  if (ir.empty()) throw ArgumentError("apply_reverb: empty impulse response");
  if (ir[0] == 0.0) throw ArgumentError("apply_reverb: impulse response must have ir[0] != 0");
  Waveform out = clean;
  kernels::convolve(clean.samples.data(), clean.size(), ir.data(), ir.size(),
                    out.samples.data());
  peak_normalize(out);
  return out;
}

std::vector<double> make_reverb_ir(double t60, std::uint64_t seed, int sample_rate) {
  if (!(t60 > 0.0)) throw ArgumentError("make_reverb_ir: t60 must be > 0");
  const auto length = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(t60 * sample_rate)));
  std::vector<double> ir(length, 0.0);
  Rng rng(seed);
  // amplitude falls by 60 dB (factor 1000) after t60 seconds
  const double decay = std::log(1000.0) / (t60 * sample_rate);
  double tail_energy = 0.0;
  for (std::size_t n = 1; n < length; ++n) {
    ir[n] = rng.normal() * std::exp(-decay * static_cast<double>(n));
    tail_energy += ir[n] * ir[n];
  }
  const double scale = 1.0 / std::sqrt(tail_energy);
  for (std::size_t n = 1; n < length; ++n) ir[n] *= scale;
  ir[0] = 1.0;
  return ir;
}

Waveform generate_noise(NoiseFamily family, std::size_t length, std::uint64_t seed,
                        int sample_rate) {
  if (length == 0) throw ArgumentError("generate_noise: zero length");
  Rng rng(seed);
  const double fs = sample_rate;
  std::vector<double> x(length, 0.0);
  switch (family) {
    case NoiseFamily::babble: {
      for (int burst = 0; burst < 8; ++burst) {
        const double f = log_uniform(rng, 150.0, 2500.0);
        const double amp = rng.uniform(0.3, 1.0);
        const auto dur = static_cast<std::size_t>(rng.uniform(0.1, 0.4) * fs);
        const auto start = static_cast<std::size_t>(rng.below(length));
        const double phase = rng.uniform(0.0, kTwoPi);
        for (std::size_t n = 0; n < dur && start + n < length; ++n) {
          const double w = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(n) / static_cast<double>(dur));
          x[start + n] += amp * w * std::sin(kTwoPi * f * static_cast<double>(n) / fs + phase);
        }
      }
      // a faint broadband bed keeps the clip non-silent between bursts
      for (double& s : x) s += 0.01 * rng.normal();
      break;
    }
    case NoiseFamily::band_noise: {
      for (double& s : x) s = rng.normal();
      bandpass(x, log_uniform(rng, 300.0, 4000.0), rng.uniform(0.5, 2.0), sample_rate);
      break;
    }
    case NoiseFamily::clicks: {
      const double rate = rng.uniform(10.0, 40.0);
      const auto count = std::max<std::size_t>(1, static_cast<std::size_t>(rate * static_cast<double>(length) / fs));
      const auto click_len = static_cast<std::size_t>(0.004 * fs);
      for (std::size_t c = 0; c < count; ++c) {
        const auto start = static_cast<std::size_t>(rng.below(length));
        const double amp = rng.uniform(0.3, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
        for (std::size_t n = 0; n < click_len && start + n < length; ++n)
          x[start + n] += amp * std::exp(-static_cast<double>(n) / (0.0005 * fs)) * rng.normal();
      }
      break;
    }
    case NoiseFamily::chirps: {
      const int chirps = 2 + static_cast<int>(rng.below(3));
      const double total = static_cast<double>(length) / fs;
      for (int c = 0; c < chirps; ++c) {
        const double f0 = log_uniform(rng, 100.0, 6000.0);
        const double f1 = log_uniform(rng, 100.0, 6000.0);
        const double amp = rng.uniform(0.3, 1.0);
        double phase = rng.uniform(0.0, kTwoPi);
        for (std::size_t n = 0; n < length; ++n) {
          const double t = static_cast<double>(n) / fs;
          const double f = f0 + (f1 - f0) * t / total;
          x[n] += amp * std::sin(phase);
          phase += kTwoPi * f / fs;
        }
      }
      break;
    }
    case NoiseFamily::am_narrowband: {
      for (double& s : x) s = rng.normal();
      bandpass(x, log_uniform(rng, 200.0, 3000.0), rng.uniform(5.0, 15.0), sample_rate);
      const double fm = rng.uniform(2.0, 8.0);
      const double depth = rng.uniform(0.6, 0.95);
      const double phase = rng.uniform(0.0, kTwoPi);
      for (std::size_t n = 0; n < length; ++n)
        x[n] *= 1.0 + depth * std::sin(kTwoPi * fm * static_cast<double>(n) / fs + phase);
      break;
    }
    case NoiseFamily::external:
      throw ArgumentError("generate_noise: external noise comes from a NoiseBank directory");
  }
  Waveform w{std::move(x), sample_rate, 1.0};
  peak_normalize(w);
  return w;
}

NoiseBank NoiseBank::procedural() { return NoiseBank{}; }

NoiseBank NoiseBank::from_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw ConfigError("noise directory does not exist: " + dir.string());
  NoiseBank bank;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".wav") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError("noise directory holds no .wav files: " + dir.string());
  for (const auto& f : files)
    (fnv1a(f.filename().string()) % 2 == 0 ? bank.seen_files_ : bank.unseen_files_).push_back(f);
  return bank;
}

void NoiseBank::choose(DistortionSpec& spec, bool unseen, std::uint64_t draw) const {
  const auto& pool = unseen ? unseen_files_ : seen_files_;
  if (!pool.empty()) {
    spec.family = NoiseFamily::external;
    spec.noise_source = pool[draw % pool.size()].string();
    return;
  }
  if (unseen)
    spec.family = kUnseenFamilies[draw % kUnseenFamilies.size()];
  else
    spec.family = kSeenFamilies[draw % kSeenFamilies.size()];
  spec.noise_source.clear();
}

Waveform NoiseBank::render(const DistortionSpec& spec, std::size_t length, int sample_rate) const {
  if (spec.family == NoiseFamily::external) {
    Waveform w = read_wav(spec.noise_source);
    w.samples = fit_length(w.samples, length);
    return w;
  }
  return generate_noise(spec.family, length, spec.seed, sample_rate);
}

ReverbBank::ReverbBank(std::uint64_t seed, int sample_rate) {
  int id = 0;
  for (double t60 : kSeenT60) irs_.push_back(make_reverb_ir(t60, derive_seed(seed, id++), sample_rate));
  for (double t60 : kUnseenT60) irs_.push_back(make_reverb_ir(t60, derive_seed(seed, id++), sample_rate));
}

std::span<const double> ReverbBank::ir(int id) const {
  if (id < 0 || id >= size()) throw ArgumentError("unknown impulse response id " + std::to_string(id));
  return irs_[static_cast<std::size_t>(id)];
}

Waveform apply_distortion(const Waveform& clean, const DistortionSpec& spec,
                          const NoiseBank& noise, const ReverbBank& reverb) {
  validate(spec);
  switch (spec.kind) {
    case DistortionKind::clean:
      return clean;
    case DistortionKind::additive_bank:
      return mix_at_snr(clean, noise.render(spec, clean.size(), clean.sample_rate), *spec.snr_db);
    case DistortionKind::gaussian:
      return add_gaussian(clean, *spec.snr_db, spec.seed);
    case DistortionKind::reverb:
      return apply_reverb(clean, reverb.ir(*spec.ir_id));
  }
  throw ArgumentError("unknown distortion kind");
}

std::vector<LabeledClip> synth_corpus(int n_per_class, int classes, std::uint64_t seed,
                                      std::string_view id_prefix) {
  if (classes < 2) throw ArgumentError("synth_corpus: need at least 2 classes");
  if (n_per_class < 1) throw ArgumentError("synth_corpus: need at least 1 example per class");
  const int fs = kDefaultSampleRate;
  const auto total = static_cast<std::size_t>(n_per_class) * static_cast<std::size_t>(classes);
  std::vector<LabeledClip> out;
  out.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    Rng rng(derive_seed(seed, i));
    const int c = static_cast<int>(i % static_cast<std::size_t>(classes));
    const double f0 = 220.0 * std::pow(2.0, c / 4.0);
    const double phi1 = rng.uniform(0.0, kTwoPi);
    const double phi3 = rng.uniform(0.0, kTwoPi);
    const double amp = rng.uniform(0.3, 0.8);
    const double env_rate = rng.uniform(1.0, 3.0);
    const double env_phase = rng.uniform(0.0, kTwoPi);
    Waveform w{std::vector<double>(static_cast<std::size_t>(fs)), fs, 1.0};
    for (std::size_t n = 0; n < w.size(); ++n) {
      const double t = static_cast<double>(n) / fs;
      const double env = 0.85 + 0.15 * std::sin(kTwoPi * env_rate * t + env_phase);
      w.samples[n] = amp * env *
                     (0.7 * std::sin(kTwoPi * f0 * t + phi1) + 0.3 * std::sin(kTwoPi * 3.0 * f0 * t + phi3));
    }
    out.push_back({std::string(id_prefix) + "-" + std::to_string(i), std::move(w), c});
  }
  return out;
}

std::vector<std::size_t> apportion(std::size_t n, std::span<const int> weights) {
  if (weights.empty()) throw ArgumentError("apportion: no weights");
  long long total = 0;
  for (int w : weights) {
    if (w < 0) throw ArgumentError("apportion: negative weight");
    total += w;
  }
  if (total == 0) throw ArgumentError("apportion: weights sum to zero");
  const auto denom = static_cast<std::size_t>(total);
  std::vector<std::size_t> counts(weights.size());
  std::vector<std::size_t> remainders(weights.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const std::size_t scaled = n * static_cast<std::size_t>(weights[i]);
    counts[i] = scaled / denom;
    remainders[i] = scaled % denom;
    assigned += counts[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % order.size()]];
  return counts;
}

std::vector<int> CorpusSplit::target_labels(StageKind stage) const {
  if (stage != StageKind::oracle)
    throw PolicyError("target-split class labels are reserved for the oracle stage (requested by " +
                      std::string(stage_name(stage)) + ")");
  return target_labels_;
}

namespace {

std::vector<DistortionKind> kind_schedule(std::size_t n, std::span<const int> weights,
                                          std::span<const DistortionKind> kinds, Rng& rng) {
  const auto counts = apportion(n, weights);
  std::vector<DistortionKind> out;
  out.reserve(n);
  for (std::size_t k = 0; k < counts.size(); ++k) out.insert(out.end(), counts[k], kinds[k]);
  rng.shuffle(out.begin(), out.end());
  return out;
}

DistortionSpec draw_spec(DistortionKind kind, bool unseen, Rng& rng, const NoiseBank& noise,
                         const SplitOptions& options) {
  DistortionSpec spec;
  spec.kind = kind;
  spec.seed = rng.next_u64();
  if (spec.is_additive()) spec.snr_db = rng.uniform(options.snr_min_db, options.snr_max_db);
  if (kind == DistortionKind::additive_bank) noise.choose(spec, unseen, rng.next_u64());
  if (kind == DistortionKind::reverb) {
    spec.ir_id = unseen ? ReverbBank::kSeenCount + static_cast<int>(rng.below(kUnseenT60.size()))
                        : static_cast<int>(rng.below(kSeenT60.size()));
  }
  return spec;
}

constexpr std::array<DistortionKind, 3> kTargetKinds{
    DistortionKind::additive_bank, DistortionKind::gaussian, DistortionKind::reverb};

}  // namespace

CorpusSplit build_splits(const std::vector<LabeledClip>& train,
                         const std::vector<LabeledClip>& test, std::uint64_t seed,
                         const NoiseBank& noise, const ReverbBank& reverb,
                         const SplitOptions& options) {
  if (train.size() < 10)
    throw ArgumentError("build_splits: corpus has " + std::to_string(train.size()) +
                        " examples, need at least 10");
  CorpusSplit split;
  Rng rng(derive_seed(seed, 0x5011));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());
  const std::size_t half = train.size() / 2;

  for (std::size_t i = 0; i < half; ++i) {
    const LabeledClip& clip = train[order[i]];
    split.source.push_back({clip.id, clip.wave, clip.label});
  }

  const std::size_t n_target = train.size() - half;
  const auto kinds = kind_schedule(n_target, options.target_weights, kTargetKinds, rng);
  for (std::size_t j = 0; j < n_target; ++j) {
    const LabeledClip& clip = train[order[half + j]];
    DistortionSpec spec = draw_spec(kinds[j], false, rng, noise, options);
    Waveform wave = apply_distortion(clip.wave, spec, noise, reverb);
    split.target.push_back({clip.id, std::move(wave), spec, domain_of(spec.kind)});
    split.target_labels_.push_back(clip.label);
  }

  if (!test.empty()) {
    Rng seen_rng(derive_seed(seed, 0x5EE7));
    Rng unseen_rng(derive_seed(seed, 0x0A5EE7));
    const auto seen_kinds = kind_schedule(test.size(), options.target_weights, kTargetKinds, seen_rng);
    constexpr std::array<DistortionKind, 2> unseen_kind_list{DistortionKind::additive_bank,
                                                             DistortionKind::reverb};
    const auto unseen_kinds =
        kind_schedule(test.size(), options.unseen_weights, unseen_kind_list, unseen_rng);
    for (std::size_t i = 0; i < test.size(); ++i) {
      const LabeledClip& clip = test[i];
      split.test_clean.push_back(as_test(clip, clip.wave, DistortionSpec{}, ""));
      DistortionSpec seen = draw_spec(seen_kinds[i], false, seen_rng, noise, options);
      split.test_seen.push_back(
          as_test(clip, apply_distortion(clip.wave, seen, noise, reverb), seen, "/seen"));
      DistortionSpec unseen = draw_spec(unseen_kinds[i], true, unseen_rng, noise, options);
      split.test_unseen.push_back(
          as_test(clip, apply_distortion(clip.wave, unseen, noise, reverb), unseen, "/unseen"));
    }
  }
  return split;
}

std::vector<ContinualExample> build_continual_set(const std::vector<Waveform>& clips,
                                                  std::uint64_t seed, const NoiseBank& noise,
                                                  const ReverbBank& reverb,
                                                  const SplitOptions& options) {
  constexpr std::array<DistortionKind, 4> kinds_in_order{
      DistortionKind::additive_bank, DistortionKind::gaussian, DistortionKind::reverb,
      DistortionKind::clean};
  constexpr std::array<int, 4> weights{1, 1, 1, 1};
  Rng rng(derive_seed(seed, 0xC0417));
  const auto kinds = kind_schedule(clips.size(), weights, kinds_in_order, rng);
  std::vector<ContinualExample> out;
  out.reserve(clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    DistortionSpec spec = draw_spec(kinds[i], false, rng, noise, options);
    out.push_back({"cont-" + std::to_string(i), apply_distortion(clips[i], spec, noise, reverb),
                   clips[i], kinds[i]});
  }
  return out;
}

}  // namespace datforge
