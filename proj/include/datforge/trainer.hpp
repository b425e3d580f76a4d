#pragma once

// Training protocols: supervised (baseline / oracle), continual denoising
// pretraining of the feature extractor, and domain-adversarial steps where
// the label predictor descends L_y, the domain classifier descends L_d and
// the extractor descends L_y - lambda * L_d through gradient reversal.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "datforge/distort.hpp"
#include "datforge/eval.hpp"
#include "datforge/features.hpp"
#include "datforge/models.hpp"
#include "datforge/optim.hpp"
#include "datforge/stage.hpp"

namespace datforge {

inline constexpr std::array<double, 4> kLambdaGrid{1e-1, 1e-2, 1e-3, 1e-4};

struct TrainConfig {
  double eta = 1e-3;    // feature extractor
  double alpha = 1e-3;  // label predictor
  double beta = 1e-3;   // domain classifier
  double lambda = 1e-2;
  DomainObjective objective = DomainObjective::ce;
  DomainSetting setting = DomainSetting::multi;
  std::size_t epochs = 50;
  std::size_t continual_epochs = 20;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;

  GroupRates rates() const { return {eta, alpha, beta}; }
  /// Throws ConfigError: bce requires the binary setting and vice versa,
  /// lambda must be finite and >= 0, rates > 0, batch > 0.
  void validate() const;
};

/// eta 1e-5, alpha 1e-4, beta 1e-4: rates for fine-tuning a large pretrained extractor.
TrainConfig reference_rates(TrainConfig cfg);

struct ContinualPair {
  Tensor input;
  Tensor clean;
  DistortionKind kind = DistortionKind::clean;
};

/// Featurizes and normalizes one stage's view of a split.
struct PreparedCorpus {
  std::vector<LabeledFeatures> source;
  std::vector<DomainFeatures> target;
  std::vector<ContinualPair> continual;
  TestSets tests;
  FeatureNormalizer normalizer;
  /// Target features paired with their class labels; goes through the
  /// split's oracle-only accessor, so any other stage gets a PolicyError.
  std::vector<LabeledFeatures> oracle_target(const CorpusSplit& split, StageKind stage) const;
};

/// Featurizes every split member. The normalizer is fitted on the clean
/// source split only.
PreparedCorpus prepare_corpus(const CorpusSplit& split,
                              std::span<const ContinualExample> continual);

struct LogRow {
  std::string stage;
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss_y = 0.0;
  std::optional<double> loss_d;
  double lambda = 0.0;
  std::string objective;
  std::uint64_t seed = 0;
};

inline constexpr const char* kLogHeader = "stage,epoch,step,L_y,L_d,lambda,objective,seed";
void write_log_csv(std::ostream& out, std::span<const LogRow> rows);

struct Batch {
  FrameBatch frames;
  std::vector<int> labels;
};

struct NoisyBatch {
  FrameBatch frames;
  std::vector<DomainLabel> domains;
};

Batch make_batch(std::span<const LabeledFeatures* const> items);
NoisyBatch make_noisy_batch(std::span<const DomainFeatures* const> items);

struct StepLosses {
  double loss_y = 0.0;
  double loss_d = 0.0;
};

/// Builds the tape for one adversarial step and returns the scalar total
/// L_y + L_d (reversal inside the domain path). Exposed so tests can inspect
/// gradients without applying an update. lambda == 0 detaches the domain
/// path from the extractor entirely.
struct DatGraph {
  Var loss_y;
  Var loss_d;
  Var total;
};
DatGraph build_dat_graph(Tape& tape, DannModel& model, const Batch& clean,
                         const NoisyBatch& noisy, const TrainConfig& cfg);

/// One backward pass, one optimizer update over all three groups.
StepLosses dat_step(DannModel& model, Optimizer& opt, const Batch& clean,
                    const NoisyBatch& noisy, const TrainConfig& cfg);

/// Minimizes L_y over `data` for cfg.epochs; touches only the extractor and
/// label predictor. Appends one log row per epoch.
void train_supervised(DannModel& model, std::span<const LabeledFeatures> data,
                      const TrainConfig& cfg, const std::string& stage_label,
                      std::vector<LogRow>* log);

struct ContinualHistory {
  std::vector<double> train_loss;    // per epoch
  std::vector<double> heldout_loss;  // per epoch, empty without held-out pairs
};

/// Denoising pretraining of the extractor alone: distorted inputs regress
/// their clean features, clean inputs regress themselves with 15% of frames
/// masked, through a temporary linear head.
ContinualHistory continual_pretrain(FeatureExtractor& extractor,
                                    std::span<const ContinualPair> data, const TrainConfig& cfg,
                                    std::size_t epochs,
                                    std::span<const ContinualPair> heldout = {});

/// Alternating clean/noisy adversarial training for cfg.epochs.
void train_dat(DannModel& model, std::span<const LabeledFeatures> source,
               std::span<const DomainFeatures> target, const TrainConfig& cfg,
               const std::string& stage_label, std::vector<LogRow>* log);

struct StageResult {
  StageKind kind = StageKind::baseline;
  TrainConfig config;
  DannModel model;
  std::vector<LogRow> log;
  ContinualHistory continual;

  std::string objective_label() const;
  double lambda_label() const;
};

/// Runs one protocol from a fresh model seeded by cfg.seed. Continual stages
/// start from `pretrained` when given (bit-identical copy) and otherwise run
/// continual_pretrain first.
StageResult run_stage(StageKind stage, const PreparedCorpus& data, const CorpusSplit& split,
                      const TrainConfig& cfg, const ModelDims& dims = {},
                      const FeatureExtractor* pretrained = nullptr);

/// Extractor after continual pretraining from the cfg.seed initialization.
FeatureExtractor pretrain_extractor(const PreparedCorpus& data, const TrainConfig& cfg,
                                    const ModelDims& dims, ContinualHistory* history = nullptr);

struct SweepEntry {
  double lambda = 0.0;
  ReportRow row;
  bool best = false;
};

/// The two lambdas singled out by the reference protocol.
inline constexpr std::array<double, 2> kReferenceBestLambdas{1e-2, 1e-3};

struct SweepResult {
  std::vector<SweepEntry> entries;  // lambda descending
  /// The two best lambdas by mean of seen and unseen accuracy.
  std::array<double, 2> best{0.0, 0.0};
};

/// DAT at every lambda with the same seed; entries sorted by lambda
/// descending. `jobs` > 1 runs cells on worker threads.
SweepResult lambda_sweep(const PreparedCorpus& data, const CorpusSplit& split,
                         const TrainConfig& cfg, std::span<const double> lambdas,
                         StageKind stage = StageKind::dat_only, const ModelDims& dims = {},
                         std::size_t jobs = 1, const FeatureExtractor* pretrained = nullptr);

}  // namespace datforge
