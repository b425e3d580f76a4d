#include "datforge/eval.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <ostream>

#include "datforge/errors.hpp"
#include "datforge/optim.hpp"
#include "datforge/random.hpp"

namespace datforge {
namespace {

constexpr std::size_t kEvalChunk = 32;

std::string to_chars_string(double v, std::chars_format fmt, int precision = -1) {
  char buf[64];
  const auto res = precision < 0 ? std::to_chars(buf, buf + sizeof buf, v, fmt)
                                 : std::to_chars(buf, buf + sizeof buf, v, fmt, precision);
  return std::string(buf, res.ptr);
}

/// Mean cross entropy of `logits` rows against labels, no gradient.
double mean_ce(const Tensor& logits, std::span<const int> labels) {
  const std::size_t k = logits.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double* row = logits.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    total += mx + std::log(z) - row[static_cast<std::size_t>(labels[i])];
  }
  return total / static_cast<double>(labels.size());
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  const std::size_t d = x.cols();
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.data() + rows[i] * d, d, out.data() + i * d);
  return out;
}

}  // namespace

double evaluate(const DannModel& model, std::span<const LabeledFeatures> test_set) {
  if (test_set.empty()) throw ArgumentError("evaluate: empty test set");
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < test_set.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(test_set.size(), begin + kEvalChunk);
    std::vector<const Tensor*> frames;
    for (std::size_t i = begin; i < end; ++i) frames.push_back(&test_set[i].frames);
    const auto predicted = predict_classes(model, stack_frames(frames));
    for (std::size_t i = begin; i < end; ++i)
      if (predicted[i - begin] == test_set[i].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test_set.size());
}

ReportRow evaluate_row(const StageCell& cell, const TestSets& tests) {
  if (!cell.model) throw ArgumentError("evaluate_row: no model for stage " + cell.stage);
  return {cell.stage,
          cell.objective,
          cell.lambda,
          evaluate(*cell.model, tests.clean),
          evaluate(*cell.model, tests.seen),
          evaluate(*cell.model, tests.unseen)};
}

MetricsReport build_report(std::span<const StageCell> cells, const TestSets& tests,
                           std::uint64_t seed, std::string config_hash) {
  if (cells.empty()) throw ArgumentError("build_report: no stage results");
  MetricsReport report;
  report.seed = seed;
  report.config_hash = std::move(config_hash);
  for (const StageCell& cell : cells) report.rows.push_back(evaluate_row(cell, tests));
  return report;
}

std::string format_lambda(double lambda) {
  if (lambda == 0.0) return "0";
  return to_chars_string(lambda, std::chars_format::general);
}

std::string format_accuracy(double acc) {
  return to_chars_string(acc, std::chars_format::fixed, 6);
}

void write_report_csv(std::ostream& out, const MetricsReport& report) {
  out << kReportHeader << '\n';
  for (const ReportRow& r : report.rows)
    out << r.stage << ',' << r.objective << ',' << format_lambda(r.lambda) << ','
        << format_accuracy(r.clean_acc) << ',' << format_accuracy(r.seen_acc) << ','
        << format_accuracy(r.unseen_acc) << '\n';
}

std::string report_to_json(const MetricsReport& report, const std::string& generated_at) {
  nlohmann::ordered_json j;
  j["metadata"] = {{"seed", report.seed},
                   {"config_hash", report.config_hash},
                   {"generated_at", generated_at}};
  j["columns"] = {"clean_acc", "seen_acc", "unseen_acc"};
  auto& rows = j["rows"] = nlohmann::ordered_json::array();
  for (const ReportRow& r : report.rows)
    rows.push_back({{"stage", r.stage},
                    {"objective", r.objective},
                    {"lambda", r.lambda},
                    {"accuracy",
                     {{"clean_acc", r.clean_acc}, {"seen_acc", r.seen_acc}, {"unseen_acc", r.unseen_acc}}}});
  return j.dump(2) + "\n";
}

Tensor pooled_features(const FeatureExtractor& extractor,
                       std::span<const Tensor* const> utterances) {
  if (utterances.empty()) throw ArgumentError("pooled_features: no utterances");
  const std::size_t d = extractor.output_dim();
  Tensor out({utterances.size(), d});
  for (std::size_t begin = 0; begin < utterances.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(utterances.size(), begin + kEvalChunk);
    const FrameBatch batch = stack_frames(utterances.subspan(begin, end - begin));
    const Tensor z = extractor.apply(batch.frames);
    std::size_t row = 0;
    for (std::size_t u = 0; u < batch.utterances(); ++u) {
      double* dst = out.data() + (begin + u) * d;
      for (std::size_t t = 0; t < batch.lengths[u]; ++t, ++row)
        for (std::size_t c = 0; c < d; ++c) dst[c] += z.at(row, c);
      for (std::size_t c = 0; c < d; ++c) dst[c] /= static_cast<double>(batch.lengths[u]);
    }
  }
  return out;
}

DomainProbeResult probe_pooled(const Tensor& pooled, std::span<const int> domains,
                               std::size_t domain_count, const ProbeConfig& cfg) {
  if (pooled.rows() != domains.size())
    throw DimensionError("domain_probe: " + std::to_string(pooled.rows()) + " feature rows vs " +
                         std::to_string(domains.size()) + " labels");
  if (domain_count < 2) throw ArgumentError("domain_probe: need at least two domains");
  if (!(cfg.holdout > 0.0 && cfg.holdout < 1.0))
    throw ConfigError("domain_probe: holdout fraction must lie in (0, 1)");

  std::vector<std::vector<std::size_t>> by_domain(domain_count);
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (domains[i] < 0 || static_cast<std::size_t>(domains[i]) >= domain_count)
      throw ArgumentError("domain_probe: domain label " + std::to_string(domains[i]) +
                          " out of range");
    by_domain[static_cast<std::size_t>(domains[i])].push_back(i);
  }
  std::size_t per_domain = domains.size();
  for (const auto& idx : by_domain) per_domain = std::min(per_domain, idx.size());
  if (per_domain < 2) throw ArgumentError("domain_probe: every domain needs at least 2 examples");
  const auto held_per_domain = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(cfg.holdout * static_cast<double>(per_domain))), 1,
      per_domain - 1);

  Rng rng(derive_seed(cfg.seed, 0x9B0BE));
  std::vector<std::size_t> train_rows, held_rows;
  std::vector<int> train_labels, held_labels;
  for (std::size_t k = 0; k < domain_count; ++k) {
    auto idx = by_domain[k];
    rng.shuffle(idx.begin(), idx.end());
    for (std::size_t i = 0; i < per_domain; ++i) {
      (i < held_per_domain ? held_rows : train_rows).push_back(idx[i]);
      (i < held_per_domain ? held_labels : train_labels).push_back(static_cast<int>(k));
    }
  }

  Tensor train_x = gather_rows(pooled, train_rows);
  Tensor held_x = gather_rows(pooled, held_rows);
  const std::size_t d = pooled.cols();
  for (std::size_t c = 0; c < d; ++c) {
    double m = 0.0, sq = 0.0;
    for (std::size_t r = 0; r < train_x.rows(); ++r) m += train_x.at(r, c);
    m /= static_cast<double>(train_x.rows());
    for (std::size_t r = 0; r < train_x.rows(); ++r) sq += (train_x.at(r, c) - m) * (train_x.at(r, c) - m);
    const double inv = 1.0 / std::max(std::sqrt(sq / static_cast<double>(train_x.rows())), 1e-8);
    for (std::size_t r = 0; r < train_x.rows(); ++r) train_x.at(r, c) = (train_x.at(r, c) - m) * inv;
    for (std::size_t r = 0; r < held_x.rows(); ++r) held_x.at(r, c) = (held_x.at(r, c) - m) * inv;
  }

  Parameter w("probe.w", Tensor({d, domain_count}), ParamGroup::domain_classifier);
  Parameter b("probe.b", Tensor({domain_count}), ParamGroup::domain_classifier);
  std::vector<Parameter*> params{&w, &b};
  Optimizer opt(OptimizerKind::adam, GroupRates{cfg.lr, cfg.lr, cfg.lr});

  auto logits_of = [&](const Tensor& x) {
    Tape tape;
    return linear(tape.constant(x), tape.constant(w.value), tape.constant(b.value)).value();
  };

  std::vector<std::size_t> order(train_rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> losses;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch);
      std::span<const std::size_t> rows(order.data() + begin, end - begin);
      std::vector<int> labels;
      for (std::size_t r : rows) labels.push_back(train_labels[r]);
      Tape tape;
      const Var logits = linear(tape.constant(gather_rows(train_x, rows)), tape.param(w), tape.param(b));
      tape.backward(task_loss(logits, labels));
      opt.step(params);
    }
    losses.push_back(mean_ce(logits_of(train_x), train_labels));
  }

  DomainProbeResult result;
  result.chance_level = 1.0 / static_cast<double>(domain_count);
  result.train_size = train_rows.size();
  result.heldout_size = held_rows.size();
  if (!losses.empty()) {
    result.final_loss = losses.back();
    result.plateaued = losses.size() > 10 && std::abs(losses.back() - losses[losses.size() - 11]) < 1e-4;
  }
  const Tensor held_logits = logits_of(held_x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < held_rows.size(); ++i) {
    const double* row = held_logits.data() + i * domain_count;
    if (std::max_element(row, row + domain_count) - row == held_labels[i]) ++correct;
  }
  result.probe_acc = static_cast<double>(correct) / static_cast<double>(held_rows.size());
  return result;
}

DomainProbeResult domain_probe(const FeatureExtractor& extractor,
                               std::span<const LabeledFeatures> source,
                               std::span<const DomainFeatures> target, const ProbeConfig& cfg) {
  std::vector<const Tensor*> frames;
  std::vector<int> domains;
  for (const auto& s : source) {
    frames.push_back(&s.frames);
    domains.push_back(0);
  }
  for (const auto& t : target) {
    frames.push_back(&t.frames);
    domains.push_back(t.domain.for_setting(cfg.setting));
  }
  const std::size_t count = static_cast<std::size_t>(*std::max_element(domains.begin(), domains.end())) + 1;
  return probe_pooled(pooled_features(extractor, frames), domains, std::max<std::size_t>(count, 2), cfg);
}

}  // namespace datforge
