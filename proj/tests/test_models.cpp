#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "datforge/errors.hpp"
#include "datforge/models.hpp"
#include "datforge/optim.hpp"
#include "datforge/random.hpp"

using namespace datforge;

namespace {

Tensor random_frames(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-2, 2);
  return t;
}

constexpr double kGoldenSum = 50.084298036454385;
constexpr double kGoldenFirst = 3.3357715950568063;

ModelDims small_dims() {
  ModelDims d;
  d.input = 6;
  d.hidden = 5;
  d.feature = 4;
  d.classes = 3;
  d.distortion_kinds = 3;
  return d;
}

struct Fixture {
  ModelDims dims = small_dims();
  DannModel model{dims, DomainSetting::multi, 5};
  Tensor frames = random_frames(7, dims.input, 99);
  std::vector<std::size_t> lengths{3, 4};
  std::vector<int> labels{0, 2};
  std::vector<int> domains{0, 3};

  Fixture() {
    // a non-zero domain head so L_d depends on the features
    Rng rng(3);
    for (std::size_t i = 0; i < model.domain.w.value.size(); ++i) model.domain.w.value[i] = rng.uniform(-1, 1);
  }

  double loss_y() {
    Tape tape;
    const Var z = model.extractor.forward(tape, tape.constant(frames));
    return task_loss(model.predictor.forward(tape, z, lengths), labels).value().item();
  }
  double loss_d(DomainPath path) {
    Tape tape;
    const Var z = model.extractor.forward(tape, tape.constant(frames));
    return ce_domain_loss_logits(model.domain.forward(tape, z, lengths, path), domains).value().item();
  }
  Tensor grad_w1(bool domain, DomainPath path) {
    Tape tape;
    const Var z = model.extractor.forward(tape, tape.constant(frames));
    const Var loss = domain ? ce_domain_loss_logits(model.domain.forward(tape, z, lengths, path), domains)
                            : task_loss(model.predictor.forward(tape, z, lengths), labels);
    for (Parameter* p : model.parameters()) p->zero_grad();
    tape.backward(loss);
    return model.extractor.w1.grad;
  }
};

}  // namespace

TEST_SUITE("models") {

TEST_CASE("extractor: zero parameters give zero features, frame count preserved") {
  FeatureExtractor fx(small_dims(), 1);
  for (Parameter* p : fx.parameters()) p->value.fill(0.0);
  const Tensor out = fx.apply(random_frames(5, 6, 1));
  CHECK(out.shape() == std::vector<std::size_t>{5, 4});
  for (double v : out.values()) CHECK(v == 0.0);

  FeatureExtractor g(small_dims(), 1);
  CHECK(g.apply(random_frames(1, 6, 2)).shape() == std::vector<std::size_t>{1, 4});
}

TEST_CASE("extractor: input width mismatch is a config error") {
  FeatureExtractor fx(small_dims(), 1);
  CHECK_THROWS_AS(fx.apply(random_frames(3, 7, 1)), ConfigError);
}

TEST_CASE("extractor: golden output at seed 42") {
  const ModelDims dims;
  FeatureExtractor fx(dims, 42);
  Tensor in({3, dims.input});
  for (std::size_t i = 0; i < in.size(); ++i) in[i] = std::sin(0.1 * static_cast<double>(i));
  const Tensor out = fx.apply(in);
  // Recorded from this implementation; guards against silent numeric drift.
  double s = 0.0;
  for (double v : out.values()) s += v;
  CHECK(s == doctest::Approx(kGoldenSum).epsilon(1e-12));
  CHECK(out.at(0, 0) == doctest::Approx(kGoldenFirst).epsilon(1e-12));
}

TEST_CASE("label head: constant sequences, zero weights, permutation") {
  const ModelDims dims = small_dims();
  DannModel m(dims, DomainSetting::multi, 8);
  const Tensor frame = random_frames(1, dims.feature, 4);
  Tensor repeated({5, dims.feature});
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < dims.feature; ++c) repeated.at(r, c) = frame[c];
  Tape tape;
  const std::vector<std::size_t> one{1}, five{5};
  const Tensor a = m.predictor.forward(tape, tape.constant(frame), one).value();
  const Tensor b = m.predictor.forward(tape, tape.constant(repeated), five).value();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));

  const Tensor seq = random_frames(5, dims.feature, 6);
  Tensor perm({5, dims.feature});
  const std::size_t order[5] = {3, 0, 4, 1, 2};
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < dims.feature; ++c) perm.at(r, c) = seq.at(order[r], c);
  const Tensor p1 = m.predictor.forward(tape, tape.constant(seq), five).value();
  const Tensor p2 = m.predictor.forward(tape, tape.constant(perm), five).value();
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-14));
  const Tensor d1 = m.domain.forward(tape, tape.constant(seq), five, DomainPath::probe()).value();
  const Tensor d2 = m.domain.forward(tape, tape.constant(perm), five, DomainPath::probe()).value();
  for (std::size_t i = 0; i < d1.size(); ++i) CHECK(d1[i] == doctest::Approx(d2[i]).epsilon(1e-14));

  m.predictor.w.value.fill(0.0);
  m.predictor.b.value = Tensor::row({0.5, -1, 2});
  const Tensor logits = m.predictor.forward(tape, tape.constant(seq), five).value();
  CHECK(logits == Tensor::matrix({{0.5, -1, 2}}));
}

TEST_CASE("domain head: zero start is uniform, reversal leaves forward untouched") {
  const ModelDims dims = small_dims();
  DannModel m(dims, DomainSetting::multi, 8);
  const Tensor seq = random_frames(4, dims.feature, 6);
  const std::vector<std::size_t> lengths{4};
  Tape tape;
  const Tensor p = softmax_rows(m.domain.forward(tape, tape.constant(seq), lengths, DomainPath::probe())).value();
  for (double v : p.values()) CHECK(v == 0.25);

  Rng rng(1);
  for (std::size_t i = 0; i < m.domain.w.value.size(); ++i) m.domain.w.value[i] = rng.uniform(-1, 1);
  const Tensor probe = m.domain.forward(tape, tape.constant(seq), lengths, DomainPath::probe()).value();
  const Tensor adv = m.domain.forward(tape, tape.constant(seq), lengths, DomainPath::adversarial(0.01)).value();
  CHECK(probe == adv);

  DannModel bin(dims, DomainSetting::binary, 8);
  CHECK(bin.domain.w.value.shape() == std::vector<std::size_t>{dims.feature, 1});
}

TEST_CASE("domain head: adversarial extractor gradient is -lambda times the probe gradient") {
  Fixture f;
  const Tensor probe = f.grad_w1(true, DomainPath::probe());
  for (double lambda : {1e-2, 1e-3, 0.5}) {
    const Tensor adv = f.grad_w1(true, DomainPath::adversarial(lambda));
    // the scale enters once at the pooled features and then flows through
    // the same backward ops, so agreement is to rounding only
    for (std::size_t i = 0; i < probe.size(); ++i)
      CHECK(adv[i] == doctest::Approx(-lambda * probe[i]).epsilon(1e-12));
  }
  const Tensor detached = f.grad_w1(true, DomainPath::detached());
  for (double v : detached.values()) CHECK(v == 0.0);
}

TEST_CASE("end-to-end gradcheck of L_y and L_d on extractor weights") {
  Fixture f;
  const Tensor gy = f.grad_w1(false, DomainPath::probe());
  const Tensor gd = f.grad_w1(true, DomainPath::probe());
  const double h = 1e-6;
  Rng rng(17);
  for (int k = 0; k < 20; ++k) {
    const std::size_t i = rng.below(f.model.extractor.w1.value.size());
    double& w = f.model.extractor.w1.value[i];
    const double w0 = w;
    w = w0 + h;
    const double yu = f.loss_y(), du = f.loss_d(DomainPath::probe());
    w = w0 - h;
    const double yd = f.loss_y(), dd = f.loss_d(DomainPath::probe());
    w = w0;
    const double ny = (yu - yd) / (2 * h), nd = (du - dd) / (2 * h);
    CHECK(std::abs(ny - gy[i]) / std::max({std::abs(ny), std::abs(gy[i]), 1e-4}) < 1e-4);
    CHECK(std::abs(nd - gd[i]) / std::max({std::abs(nd), std::abs(gd[i]), 1e-4}) < 1e-4);
  }
}

TEST_CASE("parameter groups are disjoint and updates stay inside their group") {
  Fixture f;
  std::vector<std::string> names;
  for (const Parameter* p : f.model.parameters()) names.push_back(p->name());
  std::sort(names.begin(), names.end());
  CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());
  CHECK(f.model.parameters(ParamGroup::feature_extractor).size() +
            f.model.parameters(ParamGroup::label_predictor).size() +
            f.model.parameters(ParamGroup::domain_classifier).size() ==
        f.model.parameters().size());

  const auto fx = f.model.extractor.parameters();
  const auto fy = f.model.predictor.parameters();
  const std::uint64_t before_f = parameters_checksum(std::vector<const Parameter*>(fx.begin(), fx.end()));
  const std::uint64_t before_y = parameters_checksum(std::vector<const Parameter*>(fy.begin(), fy.end()));
  f.grad_w1(true, DomainPath::probe());
  {
    Tape tape;
    const Var z = f.model.extractor.forward(tape, tape.constant(f.frames));
    tape.backward(ce_domain_loss_logits(f.model.domain.forward(tape, z, f.lengths, DomainPath::probe()), f.domains));
  }
  Optimizer opt(OptimizerKind::adam, {1e-2, 1e-2, 1e-2});
  const auto dparams = f.model.parameters(ParamGroup::domain_classifier);
  const std::uint64_t before_d = parameters_checksum(std::vector<const Parameter*>(dparams.begin(), dparams.end()));
  opt.step(dparams);
  CHECK(parameters_checksum(std::vector<const Parameter*>(fx.begin(), fx.end())) == before_f);
  CHECK(parameters_checksum(std::vector<const Parameter*>(fy.begin(), fy.end())) == before_y);
  CHECK(parameters_checksum(std::vector<const Parameter*>(dparams.begin(), dparams.end())) != before_d);
}

TEST_CASE("copies are independent") {
  Fixture f;
  DannModel copy = f.model;
  copy.extractor.w1.value[0] += 1.0;
  CHECK(copy.extractor.w1.value[0] != f.model.extractor.w1.value[0]);
}

TEST_CASE("checkpoint: bit-exact round trip, header, strict loading") {
  Fixture f;
  std::stringstream ss;
  const auto params = f.model.parameters();
  write_checkpoint(ss, std::vector<const Parameter*>(params.begin(), params.end()));
  CHECK(ss.str().rfind(kCheckpointHeader, 0) == 0);

  DannModel other(f.dims, DomainSetting::multi, 123);
  const auto dst = other.parameters();
  std::stringstream in(ss.str());
  read_checkpoint(in, dst);
  for (std::size_t i = 0; i < params.size(); ++i) CHECK(params[i]->value == dst[i]->value);

  std::stringstream bad("NOT-A-CHECKPOINT\n");
  CHECK_THROWS_AS(read_checkpoint(bad, dst), FormatError);

  DannModel wider(ModelDims{}, DomainSetting::multi, 1);
  const auto wp = wider.parameters();
  std::stringstream again(ss.str());
  CHECK_THROWS_AS(read_checkpoint(again, wp), FormatError);
}

}  // TEST_SUITE
