#include <doctest.h>

#include <json.hpp>
#include <sstream>

#include "datforge/errors.hpp"
#include "datforge/eval.hpp"
#include "datforge/random.hpp"
#include "datforge/trainer.hpp"

using namespace datforge;

namespace {

ModelDims toy_dims() {
  ModelDims d;
  d.input = 6;
  // narrower layers let whole classes land on dead ReLUs for some seeds
  d.hidden = 32;
  d.feature = 16;
  d.classes = 4;
  d.distortion_kinds = 3;
  return d;
}

std::vector<LabeledFeatures> clusters(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LabeledFeatures> out;
  for (std::size_t i = 0; i < per_class * 4; ++i) {
    const int c = static_cast<int>(i % 4);
    Tensor t({3, 6});
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t k = 0; k < 6; ++k) t.at(r, k) = 0.2 * rng.normal() + (k == static_cast<std::size_t>(c) ? 3.0 : 0.0);
    out.push_back({t, c});
  }
  return out;
}

}  // namespace

TEST_SUITE("evalharness") {

TEST_CASE("accuracy: trained separable model, constant predictor, empty set") {
  DannModel m(toy_dims(), DomainSetting::multi, 1);
  const auto data = clusters(25, 3);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 8;
  cfg.eta = cfg.alpha = 1e-2;
  train_supervised(m, data, cfg, "baseline", nullptr);
  CHECK(evaluate(m, data) == 1.0);

  m.predictor.w.value.fill(0.0);
  m.predictor.b.value = Tensor::row({0, 0, 1, 0});
  CHECK(evaluate(m, data) == 0.25);

  CHECK_THROWS_AS(evaluate(m, std::vector<LabeledFeatures>{}), ArgumentError);
}

TEST_CASE("probe: constant features sit at chance, injected domain code is found") {
  ProbeConfig cfg;
  cfg.epochs = 60;
  const std::size_t n = 120;
  std::vector<int> domains(n);
  for (std::size_t i = 0; i < n; ++i) domains[i] = static_cast<int>(i % 4);

  const Tensor flat({n, 5}, 0.7);
  const DomainProbeResult c = probe_pooled(flat, domains, 4, cfg);
  CHECK(c.chance_level == 0.25);
  CHECK(std::abs(c.probe_acc - 0.25) <= 0.05);
  CHECK(c.train_size + c.heldout_size == n);

  Rng rng(2);
  Tensor coded({n, 5});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < 5; ++k) coded.at(i, k) = 0.1 * rng.normal();
    coded.at(i, static_cast<std::size_t>(domains[i])) += 1.0;
  }
  CHECK(probe_pooled(coded, domains, 4, cfg).probe_acc >= 0.99);

  std::vector<int> unbalanced(n, 1);
  unbalanced[0] = 0;
  CHECK_THROWS_AS(probe_pooled(coded, unbalanced, 2, cfg), ArgumentError);
  ProbeConfig bad = cfg;
  bad.holdout = 1.0;
  CHECK_THROWS_AS(probe_pooled(coded, domains, 4, bad), ConfigError);
}

TEST_CASE("probe leaves the extractor untouched and is deterministic") {
  const ModelDims dims = toy_dims();
  FeatureExtractor fx(dims, 4);
  const auto ps = fx.parameters();
  const std::vector<const Parameter*> cps(ps.begin(), ps.end());
  const std::uint64_t before = parameters_checksum(cps);
  const auto src = clusters(10, 5);
  std::vector<DomainFeatures> tgt;
  for (const auto& s : clusters(10, 6)) {
    Tensor t = s.frames;
    for (double& v : t.values()) v += 1.0;
    tgt.push_back({t, DomainLabel{1 + s.label % 3}});
  }
  ProbeConfig cfg;
  cfg.epochs = 20;
  const DomainProbeResult a = domain_probe(fx, src, tgt, cfg);
  const DomainProbeResult b = domain_probe(fx, src, tgt, cfg);
  CHECK(parameters_checksum(cps) == before);
  CHECK(a.probe_acc == b.probe_acc);
  CHECK(a.final_loss == b.final_loss);
  CHECK(a.chance_level == 0.25);
}

TEST_CASE("report: every stage row with all three accuracies, csv and json") {
  const ModelDims dims = toy_dims();
  const auto data = clusters(5, 7);
  TestSets tests{data, data, data};
  std::vector<DannModel> models;
  for (int i = 0; i < 5; ++i) models.emplace_back(dims, DomainSetting::multi, static_cast<std::uint64_t>(i));
  const char* names[5] = {"baseline", "oracle", "continual_only", "dat_only", "continual_plus_dat"};
  std::vector<StageCell> cells;
  for (int i = 0; i < 5; ++i)
    cells.push_back({names[i], i >= 3 ? "ce" : "none", i >= 3 ? 1e-2 : 0.0, &models[static_cast<std::size_t>(i)]});
  const MetricsReport r = build_report(cells, tests, 3, "abc");
  REQUIRE(r.rows.size() == 5);
  std::size_t filled = 0;
  for (const auto& row : r.rows)
    for (double a : {row.clean_acc, row.seen_acc, row.unseen_acc}) filled += (a >= 0.0 && a <= 1.0);
  CHECK(filled == 15);
  CHECK(r.rows[3].stage == "dat_only");

  std::ostringstream out;
  write_report_csv(out, r);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == kReportHeader);
  std::getline(in, line);
  CHECK(line.rfind("baseline,none,0,", 0) == 0);
  for (int i = 0; i < 3; ++i) std::getline(in, line);
  CHECK(line.rfind("dat_only,ce,0.01,", 0) == 0);

  const auto j = nlohmann::json::parse(report_to_json(r, "2026-01-01T00:00:00Z"));
  CHECK(j["rows"].size() == 5);
  CHECK(j["metadata"]["seed"] == 3);
  CHECK(j["metadata"]["config_hash"] == "abc");
}

TEST_CASE("number formatting is fixed") {
  CHECK(format_lambda(0.0) == "0");
  CHECK(format_lambda(1e-2) == "0.01");
  CHECK(format_lambda(1e-4) == "0.0001");
  CHECK(format_accuracy(0.5) == "0.500000");
  CHECK(format_accuracy(1.0 / 3.0) == "0.333333");
}

}  // TEST_SUITE
