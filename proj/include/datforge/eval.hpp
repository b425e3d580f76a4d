#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "datforge/features.hpp"
#include "datforge/models.hpp"

namespace datforge {

/// Fraction of utterances whose argmax class matches the label.
/// Throws ArgumentError on an empty set.
double evaluate(const DannModel& model, std::span<const LabeledFeatures> test_set);

struct TestSets {
  std::vector<LabeledFeatures> clean;
  std::vector<LabeledFeatures> seen;
  std::vector<LabeledFeatures> unseen;
};

struct ReportRow {
  std::string stage;
  std::string objective;  // "none" outside DAT stages
  double lambda = 0.0;
  double clean_acc = 0.0;
  double seen_acc = 0.0;
  double unseen_acc = 0.0;
};

struct MetricsReport {
  std::vector<ReportRow> rows;
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// A trained model plus the identifiers of its report row.
struct StageCell {
  std::string stage;
  std::string objective;
  double lambda = 0.0;
  const DannModel* model = nullptr;
};

ReportRow evaluate_row(const StageCell& cell, const TestSets& tests);

/// Evaluates every cell on clean, seen and unseen tests, in the given order.
MetricsReport build_report(std::span<const StageCell> cells, const TestSets& tests,
                           std::uint64_t seed, std::string config_hash);

inline constexpr const char* kReportHeader = "stage,objective,lambda,clean_acc,seen_acc,unseen_acc";

void write_report_csv(std::ostream& out, const MetricsReport& report);
/// JSON text with the same rows nested under "rows" plus run metadata.
std::string report_to_json(const MetricsReport& report, const std::string& generated_at);

/// Fixed, locale-independent number formatting used in report files.
std::string format_lambda(double lambda);
std::string format_accuracy(double acc);

struct ProbeConfig {
  std::size_t epochs = 100;
  double lr = 1e-2;
  std::size_t batch = 16;
  double holdout = 0.3;
  DomainSetting setting = DomainSetting::multi;
  std::uint64_t seed = 0;
};

struct DomainProbeResult {
  double probe_acc = 0.0;
  double chance_level = 0.0;
  double final_loss = 0.0;
  /// Training loss moved by less than 1e-4 over the final 10 epochs.
  bool plateaued = false;
  std::size_t train_size = 0;
  std::size_t heldout_size = 0;
};

/// Mean-pooled extractor output per utterance.
Tensor pooled_features(const FeatureExtractor& extractor, std::span<const Tensor* const> utterances);

/// Trains a fresh linear domain classifier on frozen, mean-pooled features of
/// source (domain 0) and target utterances and reports held-out accuracy.
/// Domains are subsampled to equal counts and the held-out split is
/// stratified. The extractor is never modified.
DomainProbeResult domain_probe(const FeatureExtractor& extractor,
                               std::span<const LabeledFeatures> source,
                               std::span<const DomainFeatures> target, const ProbeConfig& cfg);

/// The same probe on precomputed pooled features (rows) and domain labels.
DomainProbeResult probe_pooled(const Tensor& pooled, std::span<const int> domains,
                               std::size_t domain_count, const ProbeConfig& cfg);

}  // namespace datforge
