// datforge: manifest-driven runner.
//
//   datforge run    --manifest m.json [--dry-run] [--seed N] [--jobs N]
//   datforge sweep  --manifest m.json [--dry-run] [--seed N] [--jobs N]
//   datforge probe  --manifest m.json [--dry-run] [--seed N]
//   datforge distort --in DIR --out DIR --kind gaussian --snr 15 --seed 7
//
// Exit codes: 0 ok, 2 configuration error, 3 runtime error.

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "datforge/errors.hpp"
#include "datforge/experiment.hpp"

namespace {

using namespace datforge;

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct ManifestArgs {
  std::string manifest;
  bool dry_run = false;
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed;
};

void add_manifest_flags(CLI::App* cmd, ManifestArgs& a, bool with_jobs) {
  cmd->add_option("--manifest", a.manifest, "experiment manifest (JSON)")->required();
  cmd->add_flag("--dry-run", a.dry_run, "validate and print the plan, write nothing");
  cmd->add_option("--seed", a.seed, "override the manifest seed");
  if (with_jobs) cmd->add_option("--jobs", a.jobs, "worker threads for sweep cells")->check(CLI::PositiveNumber);
}

ExperimentManifest load(const ManifestArgs& a) {
  ExperimentManifest m = load_manifest(a.manifest);
  return a.seed ? m.with_seed(*a.seed) : m;
}

int cmd_run(const ManifestArgs& a) {
  const ExperimentManifest m = load(a);
  if (a.dry_run) {
    std::cout << describe_plan(m);
    return 0;
  }
  const auto out = run_experiment(m, {a.jobs, true, true, true});
  const std::string dir = resolve_output_dir(m.output_dir).string();
  if (!out.stages.empty()) std::cout << dir << "/report.csv: " << out.report.rows.size() << " rows\n";
  if (out.sweep) std::cout << dir << "/sweep.csv: " << out.sweep->entries.size() << " lambdas\n";
  return 0;
}

int cmd_sweep(const ManifestArgs& a) {
  ExperimentManifest m = load(a);
  if (!m.sweep) {
    SweepSpec s;
    s.config = m.train;
    m.sweep = s;
  }
  if (a.dry_run) {
    m.stages.clear();
    std::cout << describe_plan(m);
    return 0;
  }
  const auto out = run_experiment(m, {a.jobs, false, true, false});
  for (const auto& e : out.sweep->entries)
    std::cout << "lambda " << format_lambda(e.lambda) << "  seen " << format_accuracy(e.row.seen_acc)
              << "  unseen " << format_accuracy(e.row.unseen_acc) << (e.best ? "  best" : "") << '\n';
  return 0;
}

int cmd_probe(const ManifestArgs& a) {
  ExperimentManifest m = load(a);
  if (!m.probe) {
    m.probe = ProbeConfig{};
    m.probe->seed = m.seed;
  }
  if (m.stages.empty()) throw ConfigError("probe: manifest has no stages to probe");
  if (a.dry_run) {
    m.sweep.reset();
    std::cout << describe_plan(m);
    return 0;
  }
  const auto out = run_experiment(m, {a.jobs, true, false, true});
  for (const auto& p : out.probes)
    std::cout << p.stage << ' ' << p.objective << ' ' << format_lambda(p.lambda) << "  probe_acc "
              << format_accuracy(p.result.probe_acc) << "  chance " << format_accuracy(p.result.chance_level)
              << '\n';
  return 0;
}

std::vector<double> parse_taps(const std::string& text) {
  std::vector<double> taps;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      taps.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--ir: not a number: '" + item + "'");
    }
  }
  if (taps.empty()) throw ConfigError("--ir: empty kernel");
  return taps;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-adversarial training experiments on synthetic or WAV corpora"};
  app.require_subcommand(1);

  ManifestArgs run_args, sweep_args, probe_args;
  add_manifest_flags(app.add_subcommand("run", "corpus, stages, sweep, probes, reports"), run_args, true);
  add_manifest_flags(app.add_subcommand("sweep", "lambda sweep only"), sweep_args, true);
  add_manifest_flags(app.add_subcommand("probe", "train stages and probe their features"), probe_args, false);

  DistortOptions dopt;
  std::string in_dir, out_dir, ir_text, noise_dir;
  std::optional<double> snr;
  std::optional<int> ir_id;
  auto* distort = app.add_subcommand("distort", "distort every WAV in a directory");
  distort->add_option("--in", in_dir, "input directory")->required();
  distort->add_option("--out", out_dir, "output directory")->required();
  distort->add_option("--kind", dopt.kind, "clean|additive_bank|gaussian|reverb|mixed");
  distort->add_option("--snr", snr, "SNR in dB for additive kinds");
  distort->add_option("--ir", ir_text, "reverb kernel taps, comma separated");
  distort->add_option("--ir-id", ir_id, "reverb kernel from the seeded bank");
  distort->add_option("--noise-dir", noise_dir, "WAV noise clips for additive_bank");
  distort->add_option("--seed", dopt.seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (app.got_subcommand("run")) return cmd_run(run_args);
    if (app.got_subcommand("sweep")) return cmd_sweep(sweep_args);
    if (app.got_subcommand("probe")) return cmd_probe(probe_args);

    dopt.in_dir = in_dir;
    dopt.out_dir = out_dir;
    dopt.snr_db = snr;
    dopt.ir_id = ir_id;
    if (!ir_text.empty()) dopt.ir = parse_taps(ir_text);
    if (!noise_dir.empty()) dopt.noise_dir = noise_dir;
    const DistortSummary s = distort_files(dopt, std::cerr);
    std::cout << "wrote " << s.written << " files, skipped " << s.skipped << '\n';
    return s.written == 0 ? kExitRuntime : 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
