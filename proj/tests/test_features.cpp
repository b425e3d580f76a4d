#include <doctest.h>

#include <cmath>
#include <numbers>

#include "datforge/errors.hpp"
#include "datforge/features.hpp"
#include "datforge/random.hpp"

using namespace datforge;

namespace {

Waveform tone(double hz, double amp, std::size_t n) {
  Waveform w;
  w.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    w.samples[i] = amp * std::sin(2 * std::numbers::pi * hz * static_cast<double>(i) / kDefaultSampleRate);
  return w;
}

}  // namespace

TEST_SUITE("features") {

TEST_CASE("frame count and shape") {
  CHECK(frame_count(16000) == 98);
  CHECK(frame_count(400) == 1);
  CHECK(frame_count(559) == 1);
  CHECK(frame_count(560) == 2);
  const Tensor f = featurize(tone(440, 0.5, 16000));
  CHECK(f.shape() == std::vector<std::size_t>{98, kBands});
}

TEST_CASE("silence sits at the log floor") {
  Waveform w;
  w.samples.assign(16000, 0.0);
  const Tensor f = featurize(w);
  for (double v : f.values()) CHECK(v == std::log(kLogFloor));
}

TEST_CASE("doubling the amplitude adds log 2 to unfloored bands") {
  const Tensor a = featurize(tone(700, 0.2, 8000));
  const Tensor b = featurize(tone(700, 0.4, 8000));
  std::size_t checked = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < std::log(kLogFloor) + 5) continue;
    CHECK(std::abs(b[i] - a[i] - std::numbers::ln2) < 1e-6);
    ++checked;
  }
  CHECK(checked > a.size() / 4);
}

TEST_CASE("short clips and foreign sample rates are rejected") {
  CHECK_THROWS_AS(featurize(tone(440, 0.5, 399)), ArgumentError);
  Waveform w = tone(440, 0.5, 16000);
  w.sample_rate = 8000;
  CHECK_THROWS_AS(featurize(w), ArgumentError);
}

TEST_CASE("band weights are non-negative and every band is reachable") {
  const auto& w = band_weights();
  REQUIRE(w.size() == (kFftSize / 2 + 1) * kBands);
  for (std::size_t b = 0; b < kBands; ++b) {
    double s = 0.0;
    for (std::size_t k = 0; k <= kFftSize / 2; ++k) {
      CHECK(w[k * kBands + b] >= 0.0);
      s += w[k * kBands + b];
    }
    CHECK(s > 0.0);
  }
}

TEST_CASE("normalizer: fitted set ends up zero mean, unit sd") {
  Rng rng(6);
  std::vector<Tensor> utts;
  for (int u = 0; u < 4; ++u) {
    Tensor t({3 + static_cast<std::size_t>(u), 5});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-7, 3);
    utts.push_back(t);
  }
  std::vector<const Tensor*> ptrs;
  for (const auto& t : utts) ptrs.push_back(&t);
  const FeatureNormalizer n = FeatureNormalizer::fit(ptrs);
  CHECK(n.fitted());
  double s = 0, s2 = 0, count = 0;
  for (auto t : utts) {
    n.apply(t);
    for (double v : t.values()) {
      s += v;
      s2 += v * v;
      ++count;
    }
  }
  CHECK(std::abs(s / count) < 1e-12);
  CHECK(std::abs(s2 / count - 1.0) < 1e-9);

  // a single affine map: ordering and ratios of differences survive
  Tensor probe = Tensor::row({1.0, 2.0, 4.0});
  n.apply(probe);
  CHECK(probe[2] - probe[1] == doctest::Approx(2.0 * (probe[1] - probe[0])));
}

TEST_CASE("normalizer: empty or constant input is an argument error") {
  std::vector<const Tensor*> none;
  CHECK_THROWS_AS(FeatureNormalizer::fit(none), ArgumentError);
  const Tensor flat({4, 3}, 2.0);
  std::vector<const Tensor*> one{&flat};
  CHECK_THROWS_AS(FeatureNormalizer::fit(one), ArgumentError);
}

}  // TEST_SUITE
