#pragma once

// Manifest-driven experiments: corpus build -> stages -> optional lambda
// sweep and domain probes -> report files.
//
// Manifest (JSON, unknown keys rejected at every level):
//   {
//     "corpus": {"synthetic": {"n_per_class": 100, "classes": 4,
//                              "test_per_class": 50, "continual_clips": 200}}
//               | {"wav": {"train_dir": ..., "test_dir": ..., "continual_dir": ...}},
//               optional "noise_dir" next to either,
//     "seed": 1,
//     "rates": "desk" | "reference",
//     "train": {eta, alpha, beta, lambda, objective, domain_setting, epochs,
//               continual_epochs, batch_size, optimizer},
//     "model": {"hidden": 64, "feature": 32},
//     "stages": [{"kind": "baseline"}, {"kind": "dat_only", "lambda": 0.01}, ...],
//     "sweep": {"lambdas": [...], "stage": "dat_only", <train overrides>},
//     "probe": true | {"epochs": 100, "lr": 0.01, "holdout": 0.3},
//     "output_dir": "runs/x"
//   }
// Stage entries accept the "train" keys as per-stage overrides. WAV corpora
// keep one subdirectory per class under train_dir and test_dir.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "datforge/distort.hpp"
#include "datforge/eval.hpp"
#include "datforge/trainer.hpp"

namespace datforge {

struct SyntheticCorpus {
  int n_per_class = 100;
  int classes = 4;
  int test_per_class = 50;
  int continual_clips = 200;
};

struct WavCorpus {
  std::filesystem::path train_dir;
  std::filesystem::path test_dir;
  std::optional<std::filesystem::path> continual_dir;
};

struct CorpusConfig {
  std::optional<SyntheticCorpus> synthetic;
  std::optional<WavCorpus> wav;
  std::optional<std::filesystem::path> noise_dir;
};

struct StageSpec {
  StageKind kind = StageKind::baseline;
  TrainConfig config;
};

struct SweepSpec {
  std::vector<double> lambdas{kLambdaGrid.begin(), kLambdaGrid.end()};
  StageKind stage = StageKind::dat_only;
  TrainConfig config;
};

struct ExperimentManifest {
  CorpusConfig corpus;
  std::uint64_t seed = 0;
  TrainConfig train;
  ModelDims dims;
  std::vector<StageSpec> stages;
  std::optional<SweepSpec> sweep;
  std::optional<ProbeConfig> probe;
  std::filesystem::path output_dir;
  /// The manifest as read, re-serialized; hashed into report metadata.
  nlohmann::ordered_json source;

  std::string config_hash() const;
  /// Same experiment under a different seed (stages, sweep and probe follow).
  ExperimentManifest with_seed(std::uint64_t seed) const;
};

/// Throws ConfigError with a message naming the offending key.
ExperimentManifest parse_manifest(const nlohmann::ordered_json& doc,
                                  const std::filesystem::path& base_dir = {});
/// Missing or unparsable file -> ConfigError naming the path.
ExperimentManifest load_manifest(const std::filesystem::path& path);

/// Relative output dirs resolve against $DATFORGE_OUT when set; an absent
/// output_dir means $DATFORGE_OUT itself, or ./datforge-out.
std::filesystem::path resolve_output_dir(const std::filesystem::path& configured);

/// Human-readable plan: corpus, stages, sweep cells, files to be written.
std::string describe_plan(const ExperimentManifest& manifest);

struct ExperimentData {
  CorpusSplit split;
  std::vector<ContinualExample> continual;
  PreparedCorpus prepared;
  /// Original file per clip id for WAV corpora.
  std::map<std::string, std::string> paths;
};

ExperimentData build_experiment_data(const ExperimentManifest& manifest);

/// One JSON object per line for every split member.
std::string corpus_manifest_jsonl(const ExperimentData& data);

struct ProbeRow {
  std::string stage;
  std::string objective;
  double lambda = 0.0;
  DomainProbeResult result;
};

struct ExperimentOutcome {
  std::vector<StageResult> stages;
  MetricsReport report;
  std::optional<SweepResult> sweep;
  std::vector<ProbeRow> probes;
};

/// Runs stages (continual pretraining shared between stages with identical
/// continual settings), the sweep and the probes. No file output.
ExperimentOutcome execute(const ExperimentManifest& manifest, const ExperimentData& data,
                          std::size_t jobs = 1);

struct RunOptions {
  std::size_t jobs = 1;
  bool run_stages = true;
  bool run_sweep = true;
  bool run_probe = true;
};

/// Full run into the manifest's output directory. A RUN-INCOMPLETE marker
/// exists for the duration; stale outputs from an earlier run are removed
/// first.
ExperimentOutcome run_experiment(const ExperimentManifest& manifest,
                                 const RunOptions& options = {});

void write_sweep_csv(std::ostream& out, const SweepResult& sweep);
void write_probe_csv(std::ostream& out, std::span<const ProbeRow> rows);
void write_continual_csv(std::ostream& out, std::span<const StageResult> stages);

/// Standalone distortion of a directory of WAV files.
struct DistortOptions {
  std::filesystem::path in_dir;
  std::filesystem::path out_dir;
  /// clean, additive_bank, gaussian, reverb, or "mixed" for the 0.3/0.4/0.3
  /// additive/gaussian/reverb schedule.
  std::string kind = "gaussian";
  std::optional<double> snr_db;  // absent: drawn from U[10, 20] per file
  std::vector<double> ir;        // explicit reverb kernel
  std::optional<int> ir_id;      // kernel from the seeded reverb bank
  std::optional<std::filesystem::path> noise_dir;
  std::uint64_t seed = 0;
};

struct DistortSummary {
  std::size_t written = 0;
  std::size_t skipped = 0;
  std::map<std::string, std::size_t> kind_counts;
};

/// Writes <out_dir>/<name>.wav for every readable input plus
/// <out_dir>/manifest.jsonl. Unreadable WAVs are skipped with a warning on
/// `warn`. Bad options throw ConfigError.
DistortSummary distort_files(const DistortOptions& options, std::ostream& warn);

inline constexpr const char* kIncompleteMarker = "RUN-INCOMPLETE";

}  // namespace datforge
