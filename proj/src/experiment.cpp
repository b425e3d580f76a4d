#include "datforge/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "datforge/errors.hpp"
#include "datforge/random.hpp"

namespace datforge {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

void reject_unknown(const json& j, const std::string& where,
                    std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw ConfigError(where + ": unknown key \"" + it.key() + "\"");
  }
}

const json* field(const json& j, const char* key) {
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

std::string at(const std::string& where, const char* key) { return where + "." + key; }

bool read_number(const json& j, const char* key, const std::string& where, double& out) {
  const json* v = field(j, key);
  if (!v) return false;
  if (!v->is_number() || !std::isfinite(v->get<double>()))
    throw ConfigError(at(where, key) + ": expected a finite number");
  out = v->get<double>();
  return true;
}

template <class Int>
bool read_count(const json& j, const char* key, const std::string& where, Int& out) {
  const json* v = field(j, key);
  if (!v) return false;
  if (!v->is_number_unsigned()) throw ConfigError(at(where, key) + ": expected a non-negative integer");
  out = static_cast<Int>(v->get<std::uint64_t>());
  return true;
}

bool read_string(const json& j, const char* key, const std::string& where, std::string& out) {
  const json* v = field(j, key);
  if (!v) return false;
  if (!v->is_string()) throw ConfigError(at(where, key) + ": expected a string");
  out = v->get<std::string>();
  return true;
}

template <class Parse>
auto parse_enum(const std::string& text, const std::string& where, Parse parse) {
  try {
    return parse(text);
  } catch (const Error&) {
    throw ConfigError(where + ": unrecognized value \"" + text + "\"");
  }
}

fs::path read_path(const json& j, const char* key, const std::string& where,
                   const fs::path& base, bool required) {
  std::string s;
  if (!read_string(j, key, where, s)) {
    if (required) throw ConfigError(at(where, key) + ": required");
    return {};
  }
  fs::path p(s);
  return p.is_relative() && !base.empty() ? base / p : p;
}

#define DATFORGE_TRAIN_KEYS                                                                   \
  "eta", "alpha", "beta", "lambda", "objective", "domain_setting", "epochs", "continual_epochs", \
      "batch_size", "optimizer"

/// Applies whichever train keys are present. The domain setting follows the
/// objective unless given explicitly.
void apply_train(const json& j, const std::string& where, TrainConfig& cfg) {
  read_number(j, "eta", where, cfg.eta);
  read_number(j, "alpha", where, cfg.alpha);
  read_number(j, "beta", where, cfg.beta);
  read_number(j, "lambda", where, cfg.lambda);
  read_count(j, "epochs", where, cfg.epochs);
  read_count(j, "continual_epochs", where, cfg.continual_epochs);
  read_count(j, "batch_size", where, cfg.batch_size);
  std::string s;
  const bool has_objective = read_string(j, "objective", where, s);
  if (has_objective) cfg.objective = parse_enum(s, at(where, "objective"), parse_objective);
  if (read_string(j, "domain_setting", where, s)) {
    cfg.setting = parse_enum(s, at(where, "domain_setting"), parse_setting);
    if (!has_objective && cfg.setting == DomainSetting::binary) cfg.objective = DomainObjective::bce;
    if (!has_objective && cfg.setting == DomainSetting::multi && cfg.objective == DomainObjective::bce)
      cfg.objective = DomainObjective::ce;
  } else if (has_objective) {
    cfg.setting = cfg.objective == DomainObjective::bce ? DomainSetting::binary : DomainSetting::multi;
  }
  if (read_string(j, "optimizer", where, s)) {
    if (s == "adam")
      cfg.optimizer = OptimizerKind::adam;
    else if (s == "sgd")
      cfg.optimizer = OptimizerKind::sgd;
    else
      throw ConfigError(at(where, "optimizer") + ": unrecognized value \"" + s + "\"");
  }
}

void validate_train(const TrainConfig& cfg, const std::string& where) {
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

std::size_t count_class_dirs(const fs::path& dir, const std::string& where) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw ConfigError(where + ": not a directory: " + dir.string());
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) ++n;
  if (n < 2) throw ConfigError(where + ": needs at least two class subdirectories in " + dir.string());
  return n;
}

CorpusConfig parse_corpus(const json& j, const fs::path& base, ModelDims& dims) {
  const std::string where = "corpus";
  reject_unknown(j, where, {"synthetic", "wav", "noise_dir"});
  CorpusConfig c;
  const json* syn = field(j, "synthetic");
  const json* wav = field(j, "wav");
  if ((syn != nullptr) == (wav != nullptr))
    throw ConfigError(where + ": exactly one of \"synthetic\" and \"wav\" is required");
  if (syn) {
    const std::string w = "corpus.synthetic";
    reject_unknown(*syn, w, {"n_per_class", "classes", "test_per_class", "continual_clips"});
    SyntheticCorpus s;
    read_count(*syn, "n_per_class", w, s.n_per_class);
    read_count(*syn, "classes", w, s.classes);
    read_count(*syn, "test_per_class", w, s.test_per_class);
    read_count(*syn, "continual_clips", w, s.continual_clips);
    if (s.classes < 2) throw ConfigError(w + ".classes: must be >= 2");
    if (s.n_per_class < 2) throw ConfigError(w + ".n_per_class: must be >= 2");
    if (s.test_per_class < 1) throw ConfigError(w + ".test_per_class: must be >= 1");
    if (s.continual_clips < 1) throw ConfigError(w + ".continual_clips: must be >= 1");
    dims.classes = static_cast<std::size_t>(s.classes);
    c.synthetic = s;
  } else {
    const std::string w = "corpus.wav";
    reject_unknown(*wav, w, {"train_dir", "test_dir", "continual_dir"});
    WavCorpus v;
    v.train_dir = read_path(*wav, "train_dir", w, base, true);
    v.test_dir = read_path(*wav, "test_dir", w, base, true);
    if (field(*wav, "continual_dir")) v.continual_dir = read_path(*wav, "continual_dir", w, base, true);
    dims.classes = count_class_dirs(v.train_dir, w + ".train_dir");
    if (count_class_dirs(v.test_dir, w + ".test_dir") != dims.classes)
      throw ConfigError(w + ": train_dir and test_dir have different class counts");
    c.wav = v;
  }
  if (field(j, "noise_dir")) {
    c.noise_dir = read_path(j, "noise_dir", where, base, true);
    std::error_code ec;
    if (!fs::is_directory(*c.noise_dir, ec))
      throw ConfigError("corpus.noise_dir: not a directory: " + c.noise_dir->string());
  }
  return c;
}

std::optional<ProbeConfig> parse_probe(const json& j) {
  if (j.is_boolean()) return j.get<bool>() ? std::optional<ProbeConfig>(ProbeConfig{}) : std::nullopt;
  reject_unknown(j, "probe", {"epochs", "lr", "batch_size", "holdout"});
  ProbeConfig p;
  read_count(j, "epochs", "probe", p.epochs);
  read_number(j, "lr", "probe", p.lr);
  read_count(j, "batch_size", "probe", p.batch);
  read_number(j, "holdout", "probe", p.holdout);
  if (p.epochs == 0) throw ConfigError("probe.epochs: must be > 0");
  if (!(p.lr > 0.0)) throw ConfigError("probe.lr: must be > 0");
  if (p.batch == 0) throw ConfigError("probe.batch_size: must be > 0");
  if (!(p.holdout > 0.0 && p.holdout < 1.0)) throw ConfigError("probe.holdout: must lie in (0, 1)");
  return p;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::string shortest(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string cell_name(const std::string& stage, const std::string& objective, double lambda) {
  if (objective == "none") return stage;
  return stage + "_" + objective + "_" + format_lambda(lambda);
}

/// Class-per-subdirectory WAV tree. Labels follow sorted directory names.
std::vector<LabeledClip> load_class_tree(const fs::path& dir, const std::string& prefix,
                                         std::map<std::string, std::string>& paths) {
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) classes.push_back(e.path());
  std::sort(classes.begin(), classes.end());
  std::vector<LabeledClip> clips;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(classes[c]))
      if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::string id = prefix + "-" + classes[c].filename().string() + "-" + f.stem().string();
      std::replace(id.begin(), id.end(), '/', '_');
      paths[id] = f.string();
      clips.push_back({id, read_wav(f.string()), static_cast<int>(c)});
    }
  }
  if (clips.empty()) throw ArgumentError("no WAV files under " + dir.string());
  return clips;
}

json nullable(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string base_id(const std::string& id) { return id.substr(0, id.find('/')); }

void remove_stale(const fs::path& out) {
  for (const char* name : {"manifest.json", "train_log.csv", "continual_log.csv", "report.csv",
                           "report.json", "corpus_manifest.jsonl", "sweep.csv", "probe.csv"})
    fs::remove(out / name);
  fs::remove_all(out / "checkpoints");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("write failed: " + path.string());
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string ExperimentManifest::config_hash() const {
  char buf[17];
  const auto res = std::to_chars(buf, buf + 16, fnv1a(source.dump()), 16);
  std::string hex(buf, res.ptr);
  return std::string(16 - hex.size(), '0') + hex;
}

ExperimentManifest ExperimentManifest::with_seed(std::uint64_t s) const {
  ExperimentManifest m = *this;
  m.seed = s;
  m.source["seed"] = s;
  m.train.seed = s;
  for (auto& st : m.stages) st.config.seed = s;
  if (m.sweep) m.sweep->config.seed = s;
  if (m.probe) m.probe->seed = s;
  return m;
}

ExperimentManifest parse_manifest(const json& doc, const fs::path& base_dir) {
  reject_unknown(doc, "manifest",
                 {"corpus", "seed", "rates", "train", "model", "stages", "sweep", "probe",
                  "output_dir"});
  ExperimentManifest m;
  m.source = doc;
  const json* corpus = field(doc, "corpus");
  if (!corpus) throw ConfigError("manifest.corpus: required");
  m.corpus = parse_corpus(*corpus, base_dir, m.dims);
  read_count(doc, "seed", "manifest", m.seed);

  std::string rates = "desk";
  read_string(doc, "rates", "manifest", rates);
  if (rates == "reference")
    m.train = reference_rates(m.train);
  else if (rates != "desk")
    throw ConfigError("manifest.rates: expected \"desk\" or \"reference\", got \"" + rates + "\"");

  if (const json* t = field(doc, "train")) {
    reject_unknown(*t, "train", {DATFORGE_TRAIN_KEYS});
    apply_train(*t, "train", m.train);
  }
  m.train.seed = m.seed;
  validate_train(m.train, "train");

  if (const json* md = field(doc, "model")) {
    reject_unknown(*md, "model", {"hidden", "feature"});
    read_count(*md, "hidden", "model", m.dims.hidden);
    read_count(*md, "feature", "model", m.dims.feature);
    if (m.dims.hidden == 0 || m.dims.feature == 0) throw ConfigError("model: sizes must be > 0");
  }
  m.dims.input = kBands;

  const json* stages = field(doc, "stages");
  if (stages && !stages->is_array()) throw ConfigError("manifest.stages: expected an array");
  for (std::size_t i = 0; stages && i < stages->size(); ++i) {
    const json& s = (*stages)[i];
    const std::string where = "stages[" + std::to_string(i) + "]";
    reject_unknown(s, where, {"kind", DATFORGE_TRAIN_KEYS});
    std::string kind;
    if (!read_string(s, "kind", where, kind)) throw ConfigError(where + ".kind: required");
    StageSpec spec{parse_enum(kind, where + ".kind", parse_stage), m.train};
    apply_train(s, where, spec.config);
    validate_train(spec.config, where);
    m.stages.push_back(spec);
  }

  if (const json* sw = field(doc, "sweep")) {
    reject_unknown(*sw, "sweep", {"lambdas", "stage", DATFORGE_TRAIN_KEYS});
    SweepSpec spec;
    spec.config = m.train;
    if (const json* l = field(*sw, "lambdas")) {
      if (!l->is_array() || l->empty()) throw ConfigError("sweep.lambdas: expected a non-empty array");
      spec.lambdas.clear();
      for (const json& v : *l) {
        if (!v.is_number()) throw ConfigError("sweep.lambdas: expected numbers");
        const double x = v.get<double>();
        if (std::find(kLambdaGrid.begin(), kLambdaGrid.end(), x) == kLambdaGrid.end())
          throw ConfigError("sweep.lambdas: " + shortest(x) + " is not in the grid {0.1, 0.01, 0.001, 0.0001}");
        spec.lambdas.push_back(x);
      }
    }
    std::string stage;
    if (read_string(*sw, "stage", "sweep", stage)) spec.stage = parse_enum(stage, "sweep.stage", parse_stage);
    if (!uses_dat(spec.stage))
      throw ConfigError("sweep.stage: must be dat_only or continual_plus_dat, got " +
                        std::string(stage_name(spec.stage)));
    apply_train(*sw, "sweep", spec.config);
    validate_train(spec.config, "sweep");
    m.sweep = spec;
  }
  if (m.stages.empty() && !m.sweep) throw ConfigError("manifest: no stages and no sweep");

  if (const json* p = field(doc, "probe")) m.probe = parse_probe(*p);
  if (m.probe) m.probe->seed = m.seed;

  std::string out;
  if (read_string(doc, "output_dir", "manifest", out)) m.output_dir = out;
  return m;
}

ExperimentManifest load_manifest(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read manifest " + path.string());
  json doc;
  try {
    doc = json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_manifest(doc, path.parent_path());
}

fs::path resolve_output_dir(const fs::path& configured) {
  const char* env = std::getenv("DATFORGE_OUT");
  const fs::path root = env && *env ? fs::path(env) : fs::path();
  if (configured.empty()) return root.empty() ? fs::path("datforge-out") : root;
  if (configured.is_relative() && !root.empty()) return root / configured;
  return configured;
}

std::string describe_plan(const ExperimentManifest& m) {
  std::ostringstream os;
  os << "seed " << m.seed << ", config " << m.config_hash() << "\n";
  if (m.corpus.synthetic) {
    const auto& s = *m.corpus.synthetic;
    os << "corpus: synthetic, " << s.classes << " classes x " << s.n_per_class
       << " train clips, " << s.test_per_class << " test clips per class, " << s.continual_clips
       << " continual clips\n";
  } else {
    os << "corpus: wav, train " << m.corpus.wav->train_dir.string() << ", test "
       << m.corpus.wav->test_dir.string() << "\n";
  }
  os << "noise: " << (m.corpus.noise_dir ? m.corpus.noise_dir->string() : "procedural") << "\n";
  for (const auto& s : m.stages) {
    os << "stage " << stage_name(s.kind);
    if (uses_dat(s.kind))
      os << " objective=" << objective_name(s.config.objective)
         << " setting=" << setting_name(s.config.setting) << " lambda=" << format_lambda(s.config.lambda);
    os << " epochs=" << s.config.epochs;
    if (uses_continual(s.kind)) os << " continual_epochs=" << s.config.continual_epochs;
    os << "\n";
  }
  if (m.sweep) {
    os << "sweep " << stage_name(m.sweep->stage) << " objective=" << objective_name(m.sweep->config.objective)
       << " lambdas=";
    for (std::size_t i = 0; i < m.sweep->lambdas.size(); ++i)
      os << (i ? "," : "") << format_lambda(m.sweep->lambdas[i]);
    os << "\n";
  }
  if (m.probe) os << "probe: " << m.probe->epochs << " epochs, lr " << shortest(m.probe->lr) << "\n";
  os << "output: " << resolve_output_dir(m.output_dir).string() << "\n";
  os << "files: manifest.json corpus_manifest.jsonl";
  if (!m.stages.empty()) {
    os << " checkpoints/ train_log.csv report.csv report.json";
    if (std::any_of(m.stages.begin(), m.stages.end(), [](const StageSpec& s) { return uses_continual(s.kind); }))
      os << " continual_log.csv";
  }
  if (m.sweep) os << " sweep.csv";
  if (m.probe && !m.stages.empty()) os << " probe.csv";
  os << "\n";
  return os.str();
}

ExperimentData build_experiment_data(const ExperimentManifest& m) {
  ExperimentData d;
  const NoiseBank noise = m.corpus.noise_dir ? NoiseBank::from_directory(*m.corpus.noise_dir)
                                             : NoiseBank::procedural();
  const ReverbBank reverb(m.seed);
  std::vector<LabeledClip> train, test;
  std::vector<Waveform> continual_clips;
  if (m.corpus.synthetic) {
    const auto& s = *m.corpus.synthetic;
    train = synth_corpus(s.n_per_class, s.classes, m.seed, "tr");
    test = synth_corpus(s.test_per_class, s.classes, derive_seed(m.seed, 77), "te");
    const int per_class = (s.continual_clips + s.classes - 1) / s.classes;
    for (auto& c : synth_corpus(per_class, s.classes, derive_seed(m.seed, 99), "co")) {
      if (continual_clips.size() == static_cast<std::size_t>(s.continual_clips)) break;
      continual_clips.push_back(std::move(c.wave));
    }
  } else {
    const auto& w = *m.corpus.wav;
    train = load_class_tree(w.train_dir, "train", d.paths);
    test = load_class_tree(w.test_dir, "test", d.paths);
    if (w.continual_dir) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(*w.continual_dir))
        if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) continual_clips.push_back(read_wav(f.string()));
    } else {
      for (const auto& c : train) continual_clips.push_back(c.wave);
    }
  }
  d.split = build_splits(train, test, m.seed, noise, reverb);
  d.continual = build_continual_set(continual_clips, m.seed, noise, reverb);
  d.prepared = prepare_corpus(d.split, d.continual);
  return d;
}

std::string corpus_manifest_jsonl(const ExperimentData& d) {
  std::ostringstream os;
  auto path_of = [&](const std::string& id) -> std::string {
    const auto it = d.paths.find(base_id(id));
    return it == d.paths.end() ? "synthetic" : it->second;
  };
  auto emit = [&](const std::string& id, json cls, const DistortionSpec& spec, const char* split) {
    json j;
    j["id"] = id;
    j["path"] = path_of(id);
    j["class"] = std::move(cls);
    j["domain"] = domain_of(spec.kind).index;
    j["distortion"] = std::string(kind_name(spec.kind));
    j["snr_db"] = nullable(spec.snr_db);
    j["split"] = split;
    os << j.dump() << '\n';
  };
  for (const auto& s : d.split.source) emit(s.id, s.label, DistortionSpec{}, "source");
  for (const auto& t : d.split.target) emit(t.id, nullptr, t.spec, "target");
  for (const auto& t : d.split.test_clean) emit(t.id, t.label, t.spec, "test_clean");
  for (const auto& t : d.split.test_seen) emit(t.id, t.label, t.spec, "test_seen");
  for (const auto& t : d.split.test_unseen) emit(t.id, t.label, t.spec, "test_unseen");
  for (const auto& c : d.continual) {
    DistortionSpec spec;
    spec.kind = c.kind;
    emit(c.id, nullptr, spec, "continual");
  }
  return os.str();
}

ExperimentOutcome execute(const ExperimentManifest& m, const ExperimentData& data, std::size_t jobs) {
  ExperimentOutcome out;

  // Continual pretraining depends only on these settings; stages that agree
  // on them start from the same extractor.
  struct Pretrained {
    TrainConfig cfg;
    FeatureExtractor extractor;
    ContinualHistory history;
  };
  std::vector<Pretrained> cache;
  auto pretrained = [&](const TrainConfig& cfg) -> const Pretrained& {
    for (const auto& p : cache) {
      if (p.cfg.eta == cfg.eta && p.cfg.continual_epochs == cfg.continual_epochs &&
          p.cfg.batch_size == cfg.batch_size && p.cfg.optimizer == cfg.optimizer &&
          p.cfg.seed == cfg.seed)
        return p;
    }
    ContinualHistory h;
    FeatureExtractor fx = pretrain_extractor(data.prepared, cfg, m.dims, &h);
    cache.push_back({cfg, std::move(fx), std::move(h)});
    return cache.back();
  };

  for (const auto& spec : m.stages) {
    const FeatureExtractor* init = nullptr;
    const ContinualHistory* history = nullptr;
    if (uses_continual(spec.kind)) {
      const Pretrained& p = pretrained(spec.config);
      init = &p.extractor;
      history = &p.history;
    }
    StageResult r = run_stage(spec.kind, data.prepared, data.split, spec.config, m.dims, init);
    if (history) r.continual = *history;
    out.stages.push_back(std::move(r));
  }

  std::vector<StageCell> cells;
  for (const auto& r : out.stages)
    cells.push_back({std::string(stage_name(r.kind)), r.objective_label(), r.lambda_label(), &r.model});
  if (!cells.empty()) out.report = build_report(cells, data.prepared.tests, m.seed, m.config_hash());

  if (m.sweep) {
    const FeatureExtractor* init =
        uses_continual(m.sweep->stage) ? &pretrained(m.sweep->config).extractor : nullptr;
    out.sweep = lambda_sweep(data.prepared, data.split, m.sweep->config, m.sweep->lambdas,
                             m.sweep->stage, m.dims, jobs, init);
  }

  if (m.probe) {
    for (const auto& r : out.stages) {
      ProbeConfig pc = *m.probe;
      pc.setting = DomainSetting::multi;
      out.probes.push_back({std::string(stage_name(r.kind)), r.objective_label(), r.lambda_label(),
                            domain_probe(r.model.extractor, data.prepared.source,
                                         data.prepared.target, pc)});
    }
  }
  return out;
}

void write_sweep_csv(std::ostream& os, const SweepResult& sweep) {
  os << "lambda,clean_acc,seen_acc,unseen_acc,best\n";
  for (const auto& e : sweep.entries)
    os << format_lambda(e.lambda) << ',' << format_accuracy(e.row.clean_acc) << ','
       << format_accuracy(e.row.seen_acc) << ',' << format_accuracy(e.row.unseen_acc) << ','
       << (e.best ? 1 : 0) << '\n';
}

void write_probe_csv(std::ostream& os, std::span<const ProbeRow> rows) {
  os << "stage,objective,lambda,probe_acc,chance_level,final_loss,plateaued,train_size,heldout_size\n";
  for (const auto& p : rows)
    os << p.stage << ',' << p.objective << ',' << format_lambda(p.lambda) << ','
       << format_accuracy(p.result.probe_acc) << ',' << format_accuracy(p.result.chance_level) << ','
       << shortest(p.result.final_loss) << ',' << (p.result.plateaued ? 1 : 0) << ','
       << p.result.train_size << ',' << p.result.heldout_size << '\n';
}

void write_continual_csv(std::ostream& os, std::span<const StageResult> stages) {
  os << "stage,epoch,train_loss,heldout_loss\n";
  for (const auto& r : stages) {
    const auto& h = r.continual;
    for (std::size_t e = 0; e < h.train_loss.size(); ++e) {
      os << stage_name(r.kind) << ',' << e + 1 << ',' << shortest(h.train_loss[e]) << ',';
      if (e < h.heldout_loss.size()) os << shortest(h.heldout_loss[e]);
      os << '\n';
    }
  }
}

ExperimentOutcome run_experiment(const ExperimentManifest& manifest, const RunOptions& options) {
  ExperimentManifest m = manifest;
  if (!options.run_stages) m.stages.clear();
  if (!options.run_sweep) m.sweep.reset();
  if (!options.run_probe) m.probe.reset();

  const fs::path out = resolve_output_dir(m.output_dir);
  fs::create_directories(out);
  const fs::path marker = out / kIncompleteMarker;
  write_text(marker, "started " + utc_timestamp() + "\n");
  remove_stale(out);

  write_text(out / "manifest.json", m.source.dump(2) + "\n");
  const ExperimentData data = build_experiment_data(m);
  write_text(out / "corpus_manifest.jsonl", corpus_manifest_jsonl(data));

  ExperimentOutcome result = execute(m, data, options.jobs);

  if (!result.stages.empty()) {
    fs::create_directories(out / "checkpoints");
    std::vector<LogRow> log;
    for (const auto& r : result.stages) {
      const auto params = r.model.parameters();
      const std::string name =
          cell_name(std::string(stage_name(r.kind)), r.objective_label(), r.lambda_label());
      save_checkpoint((out / "checkpoints" / (name + ".ckpt")).string(), params);
      log.insert(log.end(), r.log.begin(), r.log.end());
    }
    std::ostringstream train_log, continual_log, report;
    write_log_csv(train_log, log);
    write_text(out / "train_log.csv", train_log.str());
    if (std::any_of(result.stages.begin(), result.stages.end(),
                    [](const StageResult& r) { return uses_continual(r.kind); })) {
      write_continual_csv(continual_log, result.stages);
      write_text(out / "continual_log.csv", continual_log.str());
    }
    write_report_csv(report, result.report);
    write_text(out / "report.csv", report.str());
    write_text(out / "report.json", report_to_json(result.report, utc_timestamp()) + "\n");
  }
  if (result.sweep) {
    std::ostringstream os;
    write_sweep_csv(os, *result.sweep);
    write_text(out / "sweep.csv", os.str());
  }
  if (!result.probes.empty()) {
    std::ostringstream os;
    write_probe_csv(os, result.probes);
    write_text(out / "probe.csv", os.str());
  }
  fs::remove(marker);
  return result;
}

DistortSummary distort_files(const DistortOptions& o, std::ostream& warn) {
  const bool mixed = o.kind == "mixed";
  DistortionKind fixed = DistortionKind::clean;
  if (!mixed) fixed = parse_enum(o.kind, "--kind", parse_kind);
  if (o.snr_db && !std::isfinite(*o.snr_db)) throw ConfigError("--snr: must be finite");
  if (!o.ir.empty() && o.ir.front() == 0.0) throw ConfigError("--ir: first tap must be nonzero");
  if (!o.ir.empty() && o.ir_id) throw ConfigError("--ir and --ir-id are mutually exclusive");
  const ReverbBank reverb(o.seed);
  if (o.ir_id && (*o.ir_id < 0 || *o.ir_id >= reverb.size()))
    throw ConfigError("--ir-id: must lie in [0, " + std::to_string(reverb.size()) + ")");
  std::error_code ec;
  if (!fs::is_directory(o.in_dir, ec)) throw ConfigError("input directory not found: " + o.in_dir.string());
  const NoiseBank noise = o.noise_dir ? NoiseBank::from_directory(*o.noise_dir) : NoiseBank::procedural();

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(o.in_dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::vector<std::pair<fs::path, Waveform>> inputs;
  DistortSummary summary;
  for (const auto& f : files) {
    try {
      inputs.emplace_back(f, read_wav(f.string()));
    } catch (const FormatError& e) {
      warn << "warning: skipping " << f.string() << ": " << e.what() << '\n';
      ++summary.skipped;
    }
  }

  Rng rng(derive_seed(o.seed, 0xD157));
  std::vector<DistortionKind> kinds(inputs.size(), fixed);
  if (mixed) {
    const std::array<int, 3> weights{3, 4, 3};
    const std::array<DistortionKind, 3> order{DistortionKind::additive_bank, DistortionKind::gaussian,
                                              DistortionKind::reverb};
    const auto counts = apportion(inputs.size(), weights);
    kinds.clear();
    for (std::size_t k = 0; k < order.size(); ++k) kinds.insert(kinds.end(), counts[k], order[k]);
    rng.shuffle(kinds.begin(), kinds.end());
  }

  fs::create_directories(o.out_dir);
  std::ostringstream jsonl;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& [path, wave] = inputs[i];
    DistortionSpec spec;
    spec.kind = kinds[i];
    spec.seed = derive_seed(o.seed, i);
    Rng draw(spec.seed);
    if (spec.is_additive()) spec.snr_db = o.snr_db ? *o.snr_db : 10.0 + 10.0 * draw.uniform();
    if (spec.kind == DistortionKind::additive_bank) noise.choose(spec, false, draw.next_u64());
    Waveform out;
    if (spec.kind == DistortionKind::reverb && !o.ir.empty()) {
      out = apply_reverb(wave, o.ir);
    } else {
      if (spec.kind == DistortionKind::reverb)
        spec.ir_id = o.ir_id ? *o.ir_id : static_cast<int>(draw.below(ReverbBank::kSeenCount));
      out = apply_distortion(wave, spec, noise, reverb);
    }
    const fs::path target = o.out_dir / path.filename();
    write_wav(target.string(), out);

    json j;
    j["id"] = path.stem().string();
    j["path"] = path.filename().string();
    j["source"] = path.string();
    j["class"] = nullptr;
    j["domain"] = domain_of(spec.kind).index;
    j["distortion"] = std::string(kind_name(spec.kind));
    j["snr_db"] = nullable(spec.snr_db);
    j["ir"] = spec.ir_id ? json(*spec.ir_id) : (spec.kind == DistortionKind::reverb ? json("custom") : json(nullptr));
    j["seed"] = spec.seed;
    jsonl << j.dump() << '\n';
    ++summary.written;
    ++summary.kind_counts[std::string(kind_name(spec.kind))];
  }
  write_text(o.out_dir / "manifest.jsonl", jsonl.str());
  return summary;
}

}  // namespace datforge
