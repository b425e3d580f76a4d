#include "dat_oracle.hpp"

#include <algorithm>
#include <cmath>

#include "datforge/random.hpp"

namespace datforge::testing {

namespace {

Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.5, 1.5);
  return t;
}

std::vector<Tensor> grads_of(DannModel& m) {
  std::vector<Tensor> out;
  for (Parameter* p : m.parameters()) out.push_back(p->grad);
  return out;
}

void zero(DannModel& m) {
  for (Parameter* p : m.parameters()) p->zero_grad();
}

}  // namespace

SgdCheck sgd_update_check(double lambda, std::uint64_t seed) {
  ModelDims dims;
  dims.input = 6;
  dims.hidden = 5;
  dims.feature = 4;
  dims.classes = 3;
  dims.distortion_kinds = 3;
  DannModel model(dims, DomainSetting::multi, seed);
  Rng rng(derive_seed(seed, 1));
  for (std::size_t i = 0; i < model.domain.w.value.size(); ++i) model.domain.w.value[i] = rng.uniform(-1, 1);
  for (std::size_t i = 0; i < model.domain.b.value.size(); ++i) model.domain.b.value[i] = rng.uniform(-0.5, 0.5);

  std::vector<LabeledFeatures> clean;
  std::vector<DomainFeatures> noisy;
  for (int u = 0; u < 3; ++u) {
    clean.push_back({random_tensor(rng, 2 + static_cast<std::size_t>(u), dims.input), u % 3});
    noisy.push_back({random_tensor(rng, 3, dims.input), DomainLabel{1 + u}});
  }
  std::vector<const LabeledFeatures*> cp;
  std::vector<const DomainFeatures*> np;
  for (const auto& c : clean) cp.push_back(&c);
  for (const auto& n : noisy) np.push_back(&n);
  const Batch cb = make_batch(cp);
  const NoisyBatch nb = make_noisy_batch(np);

  TrainConfig cfg;
  cfg.eta = 0.1;
  cfg.alpha = 0.05;
  cfg.beta = 0.2;
  cfg.lambda = lambda;
  cfg.optimizer = OptimizerKind::sgd;
  cfg.objective = DomainObjective::ce;
  cfg.setting = DomainSetting::multi;

  // oracle: dL_y / dtheta
  zero(model);
  {
    Tape tape;
    const Var z = model.extractor.forward(tape, tape.constant(cb.frames.frames));
    tape.backward(ce_domain_loss(softmax_rows(model.predictor.forward(tape, z, cb.frames.lengths)), cb.labels));
  }
  const auto gy = grads_of(model);

  // oracle: dL_d / dtheta with the domain head read straight through
  zero(model);
  {
    Tape tape;
    std::vector<const Tensor*> all;
    for (const auto& c : clean) all.push_back(&c.frames);
    for (const auto& n : noisy) all.push_back(&n.frames);
    const FrameBatch fb = stack_frames(all);
    std::vector<int> domains{0, 0, 0};
    for (const auto& d : nb.domains) domains.push_back(d.index);
    const Var z = model.extractor.forward(tape, tape.constant(fb.frames));
    tape.backward(ce_domain_loss(softmax_rows(model.domain.forward(tape, z, fb.lengths, DomainPath::probe())), domains));
  }
  const auto gd = grads_of(model);
  zero(model);

  std::vector<Tensor> before;
  for (Parameter* p : model.parameters()) before.push_back(p->value);

  Optimizer opt(OptimizerKind::sgd, cfg.rates());
  dat_step(model, opt, cb, nb, cfg);

  SgdCheck out;
  const auto params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k]->value.size(); ++i) {
      double want = 0.0;
      switch (params[k]->group()) {
        case ParamGroup::feature_extractor: want = -cfg.eta * (gy[k][i] - lambda * gd[k][i]); break;
        case ParamGroup::label_predictor: want = -cfg.alpha * gy[k][i]; break;
        case ParamGroup::domain_classifier: want = -cfg.beta * gd[k][i]; break;
      }
      const double got = params[k]->value[i] - before[k][i];
      out.max_abs_dev = std::max(out.max_abs_dev, std::abs(got - want));
      out.max_abs_delta = std::max(out.max_abs_delta, std::abs(got));
      ++out.entries;
    }
  }
  return out;
}

}  // namespace datforge::testing
