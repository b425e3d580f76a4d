#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "datforge/errors.hpp"
#include "datforge/experiment.hpp"

using namespace datforge;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("datforge-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

json minimal(const fs::path& out) {
  json j = json::parse(R"({
    "corpus": {"synthetic": {"n_per_class": 3, "classes": 4, "test_per_class": 2, "continual_clips": 8}},
    "seed": 2,
    "train": {"epochs": 1, "continual_epochs": 1, "batch_size": 4},
    "model": {"hidden": 8, "feature": 4},
    "stages": [{"kind": "baseline"}]
  })");
  j["output_dir"] = out.string();
  return j;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int cli(const std::string& args) {
  const std::string cmd = std::string(DATFORGE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("manifest: defaults, inference, hash") {
  const ExperimentManifest m = parse_manifest(minimal("/tmp/x"));
  REQUIRE(m.corpus.synthetic);
  CHECK(m.corpus.synthetic->n_per_class == 3);
  CHECK(m.seed == 2);
  CHECK(m.train.epochs == 1);
  CHECK(m.dims.hidden == 8);
  CHECK(m.dims.feature == 4);
  REQUIRE(m.stages.size() == 1);
  CHECK(m.stages[0].config.seed == 2);
  CHECK(m.config_hash().size() == 16);
  CHECK(m.config_hash() == parse_manifest(minimal("/tmp/x")).config_hash());
  CHECK(m.with_seed(3).stages[0].config.seed == 3);

  json j = minimal("/tmp/x");
  j["stages"] = json::parse(R"([{"kind": "dat_only", "objective": "bce"}])");
  const ExperimentManifest b = parse_manifest(j);
  CHECK(b.stages[0].config.setting == DomainSetting::binary);

  json sweep_only = minimal("/tmp/x");
  sweep_only.erase("stages");
  sweep_only["sweep"] = json::object();
  const ExperimentManifest sw = parse_manifest(sweep_only);
  CHECK(sw.stages.empty());
  REQUIRE(sw.sweep);
  CHECK(sw.sweep->lambdas.size() == 4);

  j["rates"] = "reference";
  CHECK(parse_manifest(j).stages[0].config.eta == 1e-5);
}

TEST_CASE("manifest: rejected configurations name the key") {
  auto rejects = [](json j, const std::string& needle) {
    try {
      parse_manifest(j);
      FAIL("accepted: " << j.dump());
    } catch (const ConfigError& e) {
      INFO(std::string(e.what()));
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  json j = minimal("/tmp/x");
  j["bogus"] = 1;
  rejects(j, "bogus");
  j = minimal("/tmp/x");
  j["stages"][0]["bogus"] = 1;
  rejects(j, "bogus");
  j = minimal("/tmp/x");
  j["stages"][0]["kind"] = "warp";
  rejects(j, "warp");
  j = minimal("/tmp/x");
  j["train"]["lambda"] = -1;
  rejects(j, "lambda");
  j = minimal("/tmp/x");
  j["train"]["objective"] = "bce";
  j["train"]["domain_setting"] = "multi";
  rejects(j, "bce");
  j = minimal("/tmp/x");
  j["sweep"] = json::parse(R"({"lambdas": [0.5]})");
  rejects(j, "0.5");
  j = minimal("/tmp/x");
  j["sweep"] = json::parse(R"({"stage": "baseline"})");
  rejects(j, "baseline");
  j = minimal("/tmp/x");
  j.erase("stages");
  rejects(j, "stages");
  j = minimal("/tmp/x");
  j.erase("corpus");
  rejects(j, "corpus");
  CHECK_THROWS_AS(load_manifest("/nonexistent/manifest.json"), ConfigError);
}

TEST_CASE("run: files, marker removal, stale outputs, determinism") {
  TempDir tmp("run");
  const fs::path out = tmp.path / "out";
  fs::create_directories(out);
  std::ofstream(out / "sweep.csv") << "stale\n";
  std::ofstream(out / kIncompleteMarker) << "";
  const ExperimentManifest m = parse_manifest(minimal(out));
  const ExperimentOutcome o = run_experiment(m);
  CHECK(o.report.rows.size() == 1);
  for (const char* f : {"manifest.json", "corpus_manifest.jsonl", "train_log.csv", "report.csv", "report.json"})
    CHECK_MESSAGE(fs::exists(out / f), f);
  CHECK(fs::exists(out / "checkpoints" / "baseline.ckpt"));
  CHECK(!fs::exists(out / "sweep.csv"));
  CHECK(!fs::exists(out / kIncompleteMarker));

  const std::string report = slurp(out / "report.csv");
  CHECK(report.rfind(kReportHeader, 0) == 0);
  run_experiment(m);
  CHECK(slurp(out / "report.csv") == report);

  std::istringstream lines(slurp(out / "corpus_manifest.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    CHECK(json::parse(line).contains("id"));
    ++n;
  }
  CHECK(n > 0);
}

TEST_CASE("plan text names stages and files") {
  json j = minimal("/tmp/x");
  j["sweep"] = json::object();
  const std::string plan = describe_plan(parse_manifest(j));
  CHECK(plan.find("baseline") != std::string::npos);
  CHECK(plan.find("sweep.csv") != std::string::npos);
}

TEST_CASE("executable: exit codes and dry run") {
  TempDir tmp("cli");
  const fs::path out = tmp.path / "out";
  const fs::path good = tmp.path / "good.json";
  write_json(good, minimal(out));
  json bad = minimal(out);
  bad["stages"][0]["bogus"] = true;
  const fs::path badp = tmp.path / "bad.json";
  write_json(badp, bad);

  CHECK(cli("") == 2);
  CHECK(cli("run") == 2);
  CHECK(cli("run --manifest " + (tmp.path / "missing.json").string()) == 2);
  CHECK(cli("run --manifest " + badp.string()) == 2);
  CHECK(cli("run --manifest " + good.string() + " --dry-run") == 0);
  CHECK(!fs::exists(out));
  CHECK(cli("run --manifest " + good.string()) == 0);
  CHECK(fs::exists(out / "report.csv"));
  fs::create_directories(tmp.path / "empty");
  CHECK(cli("distort --in " + (tmp.path / "empty").string() + " --out " + (tmp.path / "d").string()) == 3);
}

TEST_CASE("distort: deterministic outputs, mixed schedule, bad files skipped") {
  TempDir tmp("distort");
  const fs::path in = tmp.path / "in";
  fs::create_directories(in);
  const auto clips = synth_corpus(5, 2, 4);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    Waveform w = clips[i].wave;
    w.samples.resize(2000);
    write_wav((in / ("c" + std::to_string(i) + ".wav")).string(), w);
  }
  std::ofstream(in / "broken.wav") << "not a wav";

  DistortOptions o;
  o.in_dir = in;
  o.kind = "mixed";
  o.seed = 9;
  std::ostringstream warn;
  o.out_dir = tmp.path / "a";
  const DistortSummary a = distort_files(o, warn);
  o.out_dir = tmp.path / "b";
  distort_files(o, warn);
  CHECK(a.written == 10);
  CHECK(a.skipped == 1);
  CHECK(warn.str().find("broken.wav") != std::string::npos);
  CHECK(a.kind_counts.at("additive_bank") == 3);
  CHECK(a.kind_counts.at("gaussian") == 4);
  CHECK(a.kind_counts.at("reverb") == 3);
  for (std::size_t i = 0; i < 10; ++i) {
    const std::string f = "c" + std::to_string(i) + ".wav";
    CHECK(slurp(tmp.path / "a" / f) == slurp(tmp.path / "b" / f));
  }
  CHECK(slurp(tmp.path / "a" / "manifest.jsonl") == slurp(tmp.path / "b" / "manifest.jsonl"));

  o.kind = "reverb";
  o.ir = {1.0};
  o.out_dir = tmp.path / "id";
  distort_files(o, warn);
  CHECK(slurp(tmp.path / "id" / "c3.wav") == slurp(in / "c3.wav"));

  o.kind = "sparkle";
  CHECK_THROWS_AS(distort_files(o, warn), ConfigError);
}

}  // TEST_SUITE
