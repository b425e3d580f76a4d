#include "datforge/models.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "datforge/errors.hpp"
#include "datforge/random.hpp"

namespace datforge {
namespace {

Tensor normal_init(std::size_t fan_in, std::size_t fan_out, double gain, Rng& rng) {
  Tensor w({fan_in, fan_out});
  const double sd = std::sqrt(gain / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = sd * rng.normal();
  return w;
}

Var bind(Tape& tape, Parameter& p, Binding binding) {
  return binding == Binding::trainable ? tape.param(p) : tape.constant(p.value);
}

void check_input_dim(const Var& x, std::size_t expected, const char* what) {
  if (x.value().cols() != expected)
    throw ConfigError(std::string(what) + ": input has " + std::to_string(x.value().cols()) +
                      " columns, parameters expect " + std::to_string(expected));
}

}  // namespace

FrameBatch stack_frames(std::span<const Tensor* const> utterances) {
  if (utterances.empty()) throw ArgumentError("stack_frames: no utterances");
  const std::size_t cols = utterances.front()->cols();
  std::size_t rows = 0;
  for (const Tensor* t : utterances) {
    if (t->cols() != cols)
      throw DimensionError("stack_frames: utterances disagree on feature width");
    rows += t->rows();
  }
  FrameBatch batch{Tensor({rows, cols}), {}};
  batch.lengths.reserve(utterances.size());
  double* dst = batch.frames.data();
  for (const Tensor* t : utterances) {
    dst = std::copy(t->data(), t->data() + t->size(), dst);
    batch.lengths.push_back(t->rows());
  }
  return batch;
}

FeatureExtractor::FeatureExtractor(const ModelDims& dims, std::uint64_t seed)
    : w1("f.w1", Tensor({dims.input, dims.hidden}), ParamGroup::feature_extractor),
      b1("f.b1", Tensor({dims.hidden}), ParamGroup::feature_extractor),
      w2("f.w2", Tensor({dims.hidden, dims.hidden}), ParamGroup::feature_extractor),
      b2("f.b2", Tensor({dims.hidden}), ParamGroup::feature_extractor),
      w3("f.w3", Tensor({dims.hidden, dims.feature}), ParamGroup::feature_extractor),
      b3("f.b3", Tensor({dims.feature}), ParamGroup::feature_extractor) {
  Rng rng(derive_seed(seed, 1));
  w1.value = normal_init(dims.input, dims.hidden, 2.0, rng);
  w2.value = normal_init(dims.hidden, dims.hidden, 2.0, rng);
  w3.value = normal_init(dims.hidden, dims.feature, 2.0, rng);
}

Var FeatureExtractor::forward(Tape& tape, const Var& frames, Binding binding) {
  check_input_dim(frames, input_dim(), "extract_features");
  Var h = relu(linear(frames, bind(tape, w1, binding), bind(tape, b1, binding)));
  h = relu(linear(h, bind(tape, w2, binding), bind(tape, b2, binding)));
  return rms_normalize_rows(relu(linear(h, bind(tape, w3, binding), bind(tape, b3, binding))));
}

Tensor FeatureExtractor::apply(const Tensor& frames) const {
  Tape tape;
  // Frozen binding only reads parameter values.
  auto& self = const_cast<FeatureExtractor&>(*this);
  return self.forward(tape, tape.constant(frames), Binding::frozen).value();
}

std::vector<Parameter*> FeatureExtractor::parameters() {
  return {&w1, &b1, &w2, &b2, &w3, &b3};
}

std::vector<const Parameter*> FeatureExtractor::parameters() const {
  return {&w1, &b1, &w2, &b2, &w3, &b3};
}

LabelPredictor::LabelPredictor(const ModelDims& dims, std::uint64_t seed)
    : w("y.w", Tensor({dims.feature, dims.classes}), ParamGroup::label_predictor),
      b("y.b", Tensor({dims.classes}), ParamGroup::label_predictor) {
  Rng rng(derive_seed(seed, 2));
  w.value = normal_init(dims.feature, dims.classes, 1.0, rng);
}

Var LabelPredictor::forward(Tape& tape, const Var& features,
                            std::span<const std::size_t> lengths, Binding binding) {
  check_input_dim(features, w.value.shape()[0], "predict_label");
  const Var pooled = mean_pool_segments(features, lengths);
  return linear(pooled, bind(tape, w, binding), bind(tape, b, binding));
}

std::vector<Parameter*> LabelPredictor::parameters() { return {&w, &b}; }
std::vector<const Parameter*> LabelPredictor::parameters() const { return {&w, &b}; }

DomainClassifier::DomainClassifier(const ModelDims& dims, DomainSetting setting,
                                   std::uint64_t seed)
    : w("d.w", Tensor({dims.feature, dims.domain_outputs(setting)}),
        ParamGroup::domain_classifier),
      b("d.b", Tensor({dims.domain_outputs(setting)}), ParamGroup::domain_classifier),
      setting_(setting) {
  (void)seed;
  // zero start: uniform domain posteriors, so the adversarial game opens at
  // chance instead of at an arbitrary confident guess
}

Var DomainClassifier::forward(Tape& tape, const Var& features,
                              std::span<const std::size_t> lengths, DomainPath path,
                              Binding binding) {
  check_input_dim(features, w.value.shape()[0], "classify_domain");
  Var pooled = mean_pool_segments(features, lengths);
  switch (path.mode) {
    case DomainPath::Mode::adversarial:
      pooled = grad_reverse(pooled, path.lambda);
      break;
    case DomainPath::Mode::detached:
      pooled = stop_gradient(pooled);
      break;
    case DomainPath::Mode::probe:
      break;
  }
  return linear(pooled, bind(tape, w, binding), bind(tape, b, binding));
}

std::vector<Parameter*> DomainClassifier::parameters() { return {&w, &b}; }
std::vector<const Parameter*> DomainClassifier::parameters() const { return {&w, &b}; }

DannModel::DannModel(const ModelDims& dims, DomainSetting setting, std::uint64_t seed)
    : extractor(dims, seed), predictor(dims, seed), domain(dims, setting, seed), dims_(dims) {}

std::vector<Parameter*> DannModel::parameters() {
  std::vector<Parameter*> out = extractor.parameters();
  for (Parameter* p : predictor.parameters()) out.push_back(p);
  for (Parameter* p : domain.parameters()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> DannModel::parameters() const {
  std::vector<const Parameter*> out = extractor.parameters();
  for (const Parameter* p : predictor.parameters()) out.push_back(p);
  for (const Parameter* p : domain.parameters()) out.push_back(p);
  return out;
}

std::vector<Parameter*> DannModel::parameters(ParamGroup group) {
  std::vector<Parameter*> out;
  for (Parameter* p : parameters())
    if (p->group() == group) out.push_back(p);
  return out;
}

std::vector<int> predict_classes(const DannModel& model, const FrameBatch& batch) {
  auto& m = const_cast<DannModel&>(model);
  Tape tape;
  const Var z = m.extractor.forward(tape, tape.constant(batch.frames), Binding::frozen);
  const Tensor logits = m.predictor.forward(tape, z, batch.lengths, Binding::frozen).value();
  std::vector<int> out(batch.utterances());
  const std::size_t classes = logits.cols();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double* row = logits.data() + i * classes;
    out[i] = static_cast<int>(std::max_element(row, row + classes) - row);
  }
  return out;
}

void write_checkpoint(std::ostream& out, std::span<const Parameter* const> params) {
  out << kCheckpointHeader << '\n';
  char buf[64];
  for (const Parameter* p : params) {
    out << "param " << p->name() << ' ' << group_name(p->group()) << ' ' << p->value.rank();
    for (std::size_t d : p->value.shape()) out << ' ' << d;
    out << '\n';
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const auto res = std::to_chars(buf, buf + sizeof buf, p->value[i]);
      if (i) out << ' ';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
  out << "end\n";
}

void save_checkpoint(const std::string& path, std::span<const Parameter* const> params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open checkpoint for writing: " + path);
  write_checkpoint(out, params);
  if (!out) throw Error("failed writing checkpoint: " + path);
}

void read_checkpoint(std::istream& in, std::span<Parameter* const> params) {
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointHeader)
    throw FormatError("checkpoint header: expected '" + std::string(kCheckpointHeader) +
                      "', got '" + line + "'");
  std::map<std::string, Tensor> loaded;
  std::map<std::string, std::string> groups;
  while (std::getline(in, line)) {
    if (line == "end") break;
    std::istringstream head(line);
    std::string tag, name, group;
    std::size_t rank = 0;
    head >> tag >> name >> group >> rank;
    if (tag != "param" || !head || rank == 0)
      throw FormatError("checkpoint record header malformed: '" + line + "'");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) head >> d;
    if (!head) throw FormatError("checkpoint shape malformed for " + name);
    Tensor t(shape);
    std::string values;
    if (!std::getline(in, values)) throw FormatError("checkpoint truncated at " + name);
    const char* cur = values.data();
    const char* end = values.data() + values.size();
    for (std::size_t i = 0; i < t.size(); ++i) {
      while (cur < end && *cur == ' ') ++cur;
      const auto res = std::from_chars(cur, end, t[i]);
      if (res.ec != std::errc()) throw FormatError("checkpoint value malformed in " + name);
      cur = res.ptr;
    }
    loaded.emplace(name, std::move(t));
    groups.emplace(name, group);
  }
  if (line != "end") throw FormatError("checkpoint missing 'end' marker");
  for (Parameter* p : params) {
    auto it = loaded.find(p->name());
    if (it == loaded.end()) throw FormatError("checkpoint lacks parameter " + p->name());
    if (!it->second.same_shape(p->value))
      throw FormatError("checkpoint shape for " + p->name() + " is " +
                        shape_string(it->second.shape()) + ", model expects " +
                        shape_string(p->value.shape()));
    if (groups[p->name()] != group_name(p->group()))
      throw FormatError("checkpoint group mismatch for " + p->name());
    p->value = it->second;
  }
}

void load_checkpoint(const std::string& path, std::span<Parameter* const> params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path);
  read_checkpoint(in, params);
}

std::uint64_t parameters_checksum(std::span<const Parameter* const> params) {
  std::uint64_t h = 0;
  for (const Parameter* p : params) h = mix_seed(h ^ checksum(p->value));
  return h;
}

}  // namespace datforge
