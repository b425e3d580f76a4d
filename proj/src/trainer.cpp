#include "datforge/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>

#include "datforge/errors.hpp"
#include "datforge/random.hpp"

namespace datforge {
namespace {

constexpr double kMaskRate = 0.15;

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

Tensor normalized_features(const Waveform& w, const FeatureNormalizer& norm) {
  Tensor t = featurize(w);
  norm.apply(t);
  return t;
}

void copy_values(FeatureExtractor& dst, const FeatureExtractor& src) {
  const auto d = dst.parameters();
  const auto s = src.parameters();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!d[i]->value.same_shape(s[i]->value))
      throw ConfigError("pretrained extractor shape mismatch at " + d[i]->name());
    d[i]->value = s[i]->value;
  }
}

std::vector<Parameter*> supervised_params(DannModel& model) {
  auto p = model.extractor.parameters();
  for (Parameter* q : model.predictor.parameters()) p.push_back(q);
  return p;
}

}  // namespace

void TrainConfig::validate() const {
  if ((objective == DomainObjective::bce) != (setting == DomainSetting::binary))
    throw ConfigError("objective " + std::string(objective_name(objective)) +
                      " does not match domain setting " + std::string(setting_name(setting)) +
                      " (bce goes with binary, ce/entropy with multi)");
  if (!std::isfinite(lambda) || lambda < 0.0)
    throw ConfigError("lambda must be finite and >= 0, got " + shortest(lambda));
  for (double r : {eta, alpha, beta})
    if (!(r > 0.0) || !std::isfinite(r)) throw ConfigError("learning rates must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
}

TrainConfig reference_rates(TrainConfig cfg) {
  cfg.eta = 1e-5;
  cfg.alpha = 1e-4;
  cfg.beta = 1e-4;
  return cfg;
}

PreparedCorpus prepare_corpus(const CorpusSplit& split,
                              std::span<const ContinualExample> continual) {
  if (split.source.empty()) throw ArgumentError("prepare_corpus: empty source split");
  PreparedCorpus out;
  std::vector<Tensor> raw_source;
  raw_source.reserve(split.source.size());
  for (const auto& s : split.source) raw_source.push_back(featurize(s.wave));
  std::vector<const Tensor*> refs;
  for (const auto& t : raw_source) refs.push_back(&t);
  out.normalizer = FeatureNormalizer::fit(refs);

  for (std::size_t i = 0; i < split.source.size(); ++i) {
    out.normalizer.apply(raw_source[i]);
    out.source.push_back({std::move(raw_source[i]), split.source[i].label});
  }
  for (const auto& t : split.target)
    out.target.push_back({normalized_features(t.wave, out.normalizer), t.domain});
  for (const auto& c : continual)
    out.continual.push_back({normalized_features(c.input, out.normalizer),
                             normalized_features(c.clean, out.normalizer), c.kind});
  auto tests = [&](const std::vector<TestExample>& src, std::vector<LabeledFeatures>& dst) {
    for (const auto& e : src) dst.push_back({normalized_features(e.wave, out.normalizer), e.label});
  };
  tests(split.test_clean, out.tests.clean);
  tests(split.test_seen, out.tests.seen);
  tests(split.test_unseen, out.tests.unseen);
  return out;
}

std::vector<LabeledFeatures> PreparedCorpus::oracle_target(const CorpusSplit& split,
                                                           StageKind stage) const {
  const std::vector<int> labels = split.target_labels(stage);
  if (labels.size() != target.size())
    throw ArgumentError("oracle_target: split and prepared target sizes differ");
  std::vector<LabeledFeatures> out;
  out.reserve(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) out.push_back({target[i].frames, labels[i]});
  return out;
}

void write_log_csv(std::ostream& out, std::span<const LogRow> rows) {
  out << kLogHeader << '\n';
  for (const LogRow& r : rows) {
    out << r.stage << ',' << r.epoch << ',' << r.step << ',' << shortest(r.loss_y) << ',';
    if (r.loss_d) out << shortest(*r.loss_d);
    out << ',' << shortest(r.lambda) << ',' << r.objective << ',' << r.seed << '\n';
  }
}

Batch make_batch(std::span<const LabeledFeatures* const> items) {
  if (items.empty()) throw ArgumentError("make_batch: empty batch");
  std::vector<const Tensor*> frames;
  Batch b;
  for (const auto* it : items) {
    frames.push_back(&it->frames);
    b.labels.push_back(it->label);
  }
  b.frames = stack_frames(frames);
  return b;
}

NoisyBatch make_noisy_batch(std::span<const DomainFeatures* const> items) {
  if (items.empty()) throw ArgumentError("make_noisy_batch: empty batch");
  std::vector<const Tensor*> frames;
  NoisyBatch b;
  for (const auto* it : items) {
    frames.push_back(&it->frames);
    b.domains.push_back(it->domain);
  }
  b.frames = stack_frames(frames);
  return b;
}

DatGraph build_dat_graph(Tape& tape, DannModel& model, const Batch& clean,
                         const NoisyBatch& noisy, const TrainConfig& cfg) {
  cfg.validate();
  if (model.domain.setting() != cfg.setting)
    throw ConfigError("model domain head was built for the " +
                      std::string(setting_name(model.domain.setting())) + " setting");
  const std::size_t clean_rows = clean.frames.frames.rows();
  const Var x = concat_rows(tape.constant(clean.frames.frames), tape.constant(noisy.frames.frames));
  const Var z = model.extractor.forward(tape, x);

  const Var z_clean = slice_rows(z, 0, clean_rows);
  const Var loss_y = task_loss(model.predictor.forward(tape, z_clean, clean.frames.lengths), clean.labels);

  std::vector<std::size_t> lengths = clean.frames.lengths;
  lengths.insert(lengths.end(), noisy.frames.lengths.begin(), noisy.frames.lengths.end());
  std::vector<int> domains(clean.labels.size(), 0);
  for (const DomainLabel& d : noisy.domains) domains.push_back(d.for_setting(cfg.setting));

  const DomainPath path = cfg.lambda > 0.0 ? DomainPath::adversarial(cfg.lambda) : DomainPath::detached();
  DatGraph g{loss_y, loss_y, loss_y};
  switch (cfg.objective) {
    case DomainObjective::bce:
      g.loss_d = bce_domain_loss_logits(model.domain.forward(tape, z, lengths, path), domains);
      g.total = add(loss_y, g.loss_d);
      break;
    case DomainObjective::ce:
      g.loss_d = ce_domain_loss_logits(model.domain.forward(tape, z, lengths, path), domains);
      g.total = add(loss_y, g.loss_d);
      break;
    case DomainObjective::entropy: {
      // The classifier itself learns from true domain labels; only the
      // extractor sees the (reversed) entropy of its predictions.
      const Var classifier_loss = ce_domain_loss_logits(
          model.domain.forward(tape, z, lengths, DomainPath::detached()), domains);
      g.loss_d = entropy_domain_loss_logits(model.domain.forward(tape, z, lengths, path, Binding::frozen));
      g.total = add(add(loss_y, classifier_loss), g.loss_d);
      break;
    }
  }
  return g;
}

StepLosses dat_step(DannModel& model, Optimizer& opt, const Batch& clean, const NoisyBatch& noisy,
                    const TrainConfig& cfg) {
  Tape tape;
  const DatGraph g = build_dat_graph(tape, model, clean, noisy, cfg);
  tape.backward(g.total);
  opt.step(model.parameters());
  return {g.loss_y.value().item(), g.loss_d.value().item()};
}

void train_supervised(DannModel& model, std::span<const LabeledFeatures> data,
                      const TrainConfig& cfg, const std::string& stage_label,
                      std::vector<LogRow>* log) {
  cfg.validate();
  if (data.empty()) throw ArgumentError("train_supervised: no training data");
  Optimizer opt(cfg.optimizer, cfg.rates());
  const auto params = supervised_params(model);
  Rng rng(derive_seed(cfg.seed, 0x5C9E));
  auto order = iota_n(data.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<const LabeledFeatures*> items;
      for (std::size_t i = begin; i < end; ++i) items.push_back(&data[order[i]]);
      const Batch batch = make_batch(items);
      Tape tape;
      const Var z = model.extractor.forward(tape, tape.constant(batch.frames.frames));
      const Var loss = task_loss(model.predictor.forward(tape, z, batch.frames.lengths), batch.labels);
      tape.backward(loss);
      opt.step(params);
      total += loss.value().item();
      ++batches;
    }
    if (log)
      log->push_back({stage_label, epoch + 1, opt.steps_taken(), total / static_cast<double>(batches),
                      std::nullopt, 0.0, "none", cfg.seed});
  }
}

ContinualHistory continual_pretrain(FeatureExtractor& extractor,
                                    std::span<const ContinualPair> data, const TrainConfig& cfg,
                                    std::size_t epochs, std::span<const ContinualPair> heldout) {
  ContinualHistory history;
  if (epochs == 0) return history;
  if (data.empty()) throw ArgumentError("continual_pretrain: empty continual set");
  const std::size_t d = extractor.output_dim();
  const std::size_t f = extractor.input_dim();
  Rng rng(derive_seed(cfg.seed, 0xC047));
  Parameter head_w("cont.w", Tensor({d, f}), ParamGroup::feature_extractor);
  Parameter head_b("cont.b", Tensor({f}), ParamGroup::feature_extractor);
  {
    const double sd = std::sqrt(1.0 / static_cast<double>(d));
    for (std::size_t i = 0; i < head_w.value.size(); ++i) head_w.value[i] = sd * rng.normal();
  }
  auto params = extractor.parameters();
  params.push_back(&head_w);
  params.push_back(&head_b);
  Optimizer opt(cfg.optimizer, cfg.rates());

  auto stacked = [](std::span<const ContinualPair* const> items, bool input) {
    std::vector<const Tensor*> frames;
    for (const auto* p : items) frames.push_back(input ? &p->input : &p->clean);
    return stack_frames(frames);
  };

  auto heldout_loss = [&] {
    double total = 0.0;
    for (const ContinualPair& p : heldout) {
      Tape tape;
      const Var z = extractor.forward(tape, tape.constant(p.input), Binding::frozen);
      const Var rec = linear(z, tape.constant(head_w.value), tape.constant(head_b.value));
      total += mse(rec, p.clean).value().item();
    }
    return total / static_cast<double>(heldout.size());
  };

  auto order = iota_n(data.size());
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<const ContinualPair*> items;
      for (std::size_t i = begin; i < end; ++i) items.push_back(&data[order[i]]);
      FrameBatch input = stacked(items, true);
      const FrameBatch target = stacked(items, false);
      // clean clips reconstruct themselves from a copy with masked frames
      std::size_t row = 0;
      for (std::size_t u = 0; u < items.size(); ++u) {
        for (std::size_t t = 0; t < input.lengths[u]; ++t, ++row)
          if (items[u]->kind == DistortionKind::clean && rng.uniform() < kMaskRate)
            std::fill_n(input.frames.data() + row * f, f, 0.0);
      }
      Tape tape;
      const Var z = extractor.forward(tape, tape.constant(input.frames));
      const Var loss = mse(linear(z, tape.param(head_w), tape.param(head_b)), target.frames);
      tape.backward(loss);
      opt.step(params);
      total += loss.value().item();
      ++batches;
    }
    history.train_loss.push_back(total / static_cast<double>(batches));
    if (!heldout.empty()) history.heldout_loss.push_back(heldout_loss());
  }
  return history;
}

void train_dat(DannModel& model, std::span<const LabeledFeatures> source,
               std::span<const DomainFeatures> target, const TrainConfig& cfg,
               const std::string& stage_label, std::vector<LogRow>* log) {
  cfg.validate();
  if (source.empty() || target.empty())
    throw ArgumentError("train_dat: both clean and noisy data are required");
  Optimizer opt(cfg.optimizer, cfg.rates());
  Rng rng(derive_seed(cfg.seed, 0xDA7));
  auto src_order = iota_n(source.size());
  auto tgt_order = iota_n(target.size());
  std::size_t tgt_pos = target.size();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(src_order.begin(), src_order.end());
    double sum_y = 0.0, sum_d = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < src_order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(src_order.size(), begin + cfg.batch_size);
      std::vector<const LabeledFeatures*> clean_items;
      std::vector<const DomainFeatures*> noisy_items;
      for (std::size_t i = begin; i < end; ++i) {
        clean_items.push_back(&source[src_order[i]]);
        if (tgt_pos == target.size()) {
          rng.shuffle(tgt_order.begin(), tgt_order.end());
          tgt_pos = 0;
        }
        noisy_items.push_back(&target[tgt_order[tgt_pos++]]);
      }
      const StepLosses l = dat_step(model, opt, make_batch(clean_items), make_noisy_batch(noisy_items), cfg);
      sum_y += l.loss_y;
      sum_d += l.loss_d;
      ++batches;
    }
    if (log)
      log->push_back({stage_label, epoch + 1, opt.steps_taken(), sum_y / static_cast<double>(batches),
                      sum_d / static_cast<double>(batches), cfg.lambda,
                      std::string(objective_name(cfg.objective)), cfg.seed});
  }
}

std::string StageResult::objective_label() const {
  return uses_dat(kind) ? std::string(objective_name(config.objective)) : "none";
}

double StageResult::lambda_label() const { return uses_dat(kind) ? config.lambda : 0.0; }

FeatureExtractor pretrain_extractor(const PreparedCorpus& data, const TrainConfig& cfg,
                                    const ModelDims& dims, ContinualHistory* history) {
  FeatureExtractor fx(dims, cfg.seed);
  ContinualHistory h = continual_pretrain(fx, data.continual, cfg, cfg.continual_epochs);
  if (history) *history = std::move(h);
  return fx;
}

StageResult run_stage(StageKind stage, const PreparedCorpus& data, const CorpusSplit& split,
                      const TrainConfig& cfg, const ModelDims& dims,
                      const FeatureExtractor* pretrained) {
  cfg.validate();
  StageResult r{stage, cfg, DannModel(dims, cfg.setting, cfg.seed), {}, {}};
  const std::string label(stage_name(stage));
  if (uses_continual(stage)) {
    if (pretrained)
      copy_values(r.model.extractor, *pretrained);
    else
      copy_values(r.model.extractor, pretrain_extractor(data, cfg, dims, &r.continual));
  }
  switch (stage) {
    case StageKind::baseline:
    case StageKind::continual_only:
      train_supervised(r.model, data.source, cfg, label, &r.log);
      break;
    case StageKind::oracle: {
      std::vector<LabeledFeatures> all = data.source;
      for (auto& t : data.oracle_target(split, stage)) all.push_back(std::move(t));
      train_supervised(r.model, all, cfg, label, &r.log);
      break;
    }
    case StageKind::dat_only:
    case StageKind::continual_plus_dat:
      train_dat(r.model, data.source, data.target, cfg, label, &r.log);
      break;
  }
  return r;
}

SweepResult lambda_sweep(const PreparedCorpus& data, const CorpusSplit& split,
                         const TrainConfig& cfg, std::span<const double> lambdas, StageKind stage,
                         const ModelDims& dims, std::size_t jobs,
                         const FeatureExtractor* pretrained) {
  if (lambdas.empty()) throw ConfigError("lambda sweep needs at least one lambda");
  if (!uses_dat(stage))
    throw ConfigError("lambda sweep needs an adversarial stage, got " + std::string(stage_name(stage)));
  std::vector<double> grid(lambdas.begin(), lambdas.end());
  for (double l : grid)
    if (!(l > 0.0) || !std::isfinite(l)) throw ConfigError("sweep lambdas must be > 0, got " + shortest(l));
  std::sort(grid.begin(), grid.end(), std::greater<>());

  std::optional<FeatureExtractor> shared;
  if (uses_continual(stage) && !pretrained) {
    shared.emplace(pretrain_extractor(data, cfg, dims));
    pretrained = &*shared;
  }

  SweepResult result;
  result.entries.resize(grid.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < grid.size(); i = next++) {
      try {
        TrainConfig c = cfg;
        c.lambda = grid[i];
        const StageResult r = run_stage(stage, data, split, c, dims, pretrained);
        result.entries[i] = {grid[i],
                             evaluate_row({std::string(stage_name(stage)), r.objective_label(),
                                           grid[i], &r.model},
                                          data.tests),
                             false};
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, grid.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  auto score = [&](std::size_t i) {
    return 0.5 * (result.entries[i].row.seen_acc + result.entries[i].row.unseen_acc);
  };
  auto ranked = iota_n(grid.size());
  std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) { return score(a) > score(b); });
  for (std::size_t k = 0; k < std::min<std::size_t>(2, ranked.size()); ++k) {
    result.entries[ranked[k]].best = true;
    result.best[k] = grid[ranked[k]];
  }
  if (ranked.size() == 1) result.best[1] = result.best[0];
  return result;
}

}  // namespace datforge
