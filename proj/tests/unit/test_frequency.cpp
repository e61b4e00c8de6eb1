#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fsvae/frequency.hpp"

using namespace fsvae;
using namespace fsvae::freq;
using numkit::Rng;
using numkit::Vec;

namespace {

MotionSequence random_sequence(Rng& rng, std::size_t j, std::size_t c, std::size_t f, double scale = 1.0) {
  MotionSequence s(j, c, f);
  for (double& v : s.values()) v = scale * rng.uniform(-1.0, 1.0);
  return s;
}

// Direct double sum of the cosine transform, one coefficient at a time.
double naive_coefficient(std::span<const double> x, std::size_t i) {
  const double n = static_cast<double>(x.size());
  const double norm = std::sqrt((i == 0 ? 1.0 : 2.0) / n);
  double s = 0.0;
  for (std::size_t f = 0; f < x.size(); ++f) {
    s += x[f] * std::cos(std::numbers::pi * (static_cast<double>(f) + 0.5) * static_cast<double>(i) / n);
  }
  return norm * s;
}

}  // namespace

TEST_SUITE("frequency") {
  TEST_CASE("dct of a constant trajectory is pure DC") {
    MotionSequence s(1, 1, 4, Vec{1, 1, 1, 1});
    const auto c = dct_forward(s);
    CHECK(c.at(0, 0, 0) == doctest::Approx(2.0).epsilon(1e-15));
    for (std::size_t i = 1; i < 4; ++i) CHECK(std::abs(c.at(0, 0, i)) < 1e-15);
  }

  TEST_CASE("dct and idct of zeros") {
    const auto spec = dct_forward(MotionSequence(2, 3, 5));
    for (double v : spec.values()) CHECK(v == 0.0);
    const auto seq = idct(Spectrum(2, 3, 5));
    for (double v : seq.values()) CHECK(v == 0.0);
  }

  TEST_CASE("idct of the DC spectrum") {
    const auto s = idct(Spectrum(1, 1, 4, Vec{2, 0, 0, 0}));
    for (double v : s.values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
  }

  TEST_CASE("dct matches naive summation on a 25x3x64 sequence") {
    Rng rng({1, 0});
    const auto s = random_sequence(rng, 25, 3, 64);
    const auto c = dct_forward(s);
    double worst = 0.0;
    for (std::size_t k = 0; k < s.trajectories(); ++k) {
      for (std::size_t i = 0; i < 64; ++i) {
        worst = std::max(worst, std::abs(c.trajectory(k)[i] - naive_coefficient(s.trajectory(k), i)));
      }
    }
    CHECK(worst < 1e-10);
  }

  TEST_CASE("round trip, parseval and orthonormality") {
    Rng rng({2, 0});
    for (std::size_t f : {1u, 2u, 7u, 64u, 300u}) {
      const auto s = random_sequence(rng, 2, 3, f, 10.0);
      const auto back = idct(dct_forward(s));
      for (std::size_t i = 0; i < s.values().size(); ++i) CHECK(std::abs(back.values()[i] - s.values()[i]) < 1e-9);
      const double et = signal_energy(s);
      CHECK(std::abs(et - signal_energy(dct_forward(s))) / et < 1e-12);
      const auto& b = dct_basis(f);
      const auto gram = numkit::matmul(b, numkit::transpose(b));
      for (std::size_t i = 0; i < f; ++i)
        for (std::size_t j = 0; j < f; ++j) CHECK(std::abs(gram(i, j) - (i == j ? 1.0 : 0.0)) < 1e-12);
    }
  }

  TEST_CASE("empty sequence is rejected") {
    MotionSequence s(1, 1, 0);
    CHECK_THROWS_AS(dct_forward(s), EmptySequenceError);
  }

  TEST_CASE("signal energy of ones") {
    MotionSequence s(1, 1, 4, Vec{1, 1, 1, 1});
    CHECK(signal_energy(s) == 4.0);
  }

  TEST_CASE("scaling factor values") {
    auto cfg = EnhancementConfig::per_coefficient(64, 35, 30.0, 0.0);
    for (std::size_t k = 0; k < 64; ++k) CHECK(scaling_factor(cfg, k) == 1.0);

    cfg = EnhancementConfig::per_coefficient(64, 35, 30.0, 0.5);
    CHECK(scaling_factor(cfg, 0) == doctest::Approx(1.5));

    auto high = EnhancementConfig::per_coefficient(64, 0, 30.0, 0.5);
    CHECK(scaling_factor(high, 1) == doctest::Approx(1.0 / 60.0).epsilon(1e-12));

    auto learn = EnhancementConfig::per_coefficient(8, 4, 30.0, 0.3, EnhanceMode::learnable_only);
    learn.weights[5] = 0.7;
    CHECK(scaling_factor(learn, 2) == 0.3);
    CHECK(scaling_factor(learn, 5) == 0.7);
  }

  TEST_CASE("floor clamps negative gains") {
    auto cfg = EnhancementConfig::per_coefficient(64, 0, 30.0, 1.0);
    // band 0 is high: 1 - 1 * (1 + 30/30) = -1 before the clamp
    CHECK(scaling_factor(cfg, 0) == 0.0);
    CHECK(scaling_factor_weight_derivative(cfg, 0) == 0.0);
    cfg.floor = 0.1;
    CHECK(scaling_factor(cfg, 0) == 0.1);
  }

  TEST_CASE("gain is monotone inside each band group") {
    const auto cfg = EnhancementConfig::per_coefficient(64, 35, 30.0, 0.6);
    for (std::size_t k = 1; k < 64; ++k) {
      if (cfg.is_low_band(k) && cfg.is_low_band(k - 1)) CHECK(scaling_factor(cfg, k) <= scaling_factor(cfg, k - 1));
      if (!cfg.is_low_band(k) && !cfg.is_low_band(k - 1)) CHECK(scaling_factor(cfg, k) >= scaling_factor(cfg, k - 1));
    }
  }

  TEST_CASE("weight derivative matches finite differences") {
    auto cfg = EnhancementConfig::with_cuts(64, {10, 20, 40}, 20, 30.0, 0.4);
    for (std::size_t k = 0; k < cfg.num_bands(); ++k) {
      auto plus = cfg, minus = cfg;
      plus.weights[k] += 1e-6;
      minus.weights[k] -= 1e-6;
      const double fd = (scaling_factor(plus, k) - scaling_factor(minus, k)) / 2e-6;
      CHECK(scaling_factor_weight_derivative(cfg, k) == doctest::Approx(fd).epsilon(1e-6));
    }
  }

  TEST_CASE("enhance: two-coefficient example") {
    Spectrum c(1, 1, 2, Vec{0.0, std::sqrt(2.0)});
    const auto cfg = EnhancementConfig::per_coefficient(2, 0, 30.0, 0.5);
    const auto out = enhance(c, cfg);
    CHECK(std::abs(out.at(0, 0, 0)) < 1e-15);
    CHECK(out.at(0, 0, 1) == doctest::Approx(std::sqrt(2.0) / 60.0).epsilon(1e-12));
  }

  TEST_CASE("enhance: zero weights are the identity") {
    Rng rng({3, 0});
    const auto s = random_sequence(rng, 3, 3, 64);
    const auto cfg = EnhancementConfig::per_coefficient(64, 35, 30.0, 0.0);
    const auto spec = dct_forward(s);
    const auto out = enhance(spec, cfg);
    for (std::size_t i = 0; i < spec.values().size(); ++i) CHECK(std::abs(out.values()[i] - spec.values()[i]) < 1e-12);
    const auto seq = enhance_sequence(s, cfg);
    for (std::size_t i = 0; i < s.values().size(); ++i) CHECK(std::abs(seq.values()[i] - s.values()[i]) < 1e-9);
  }

  TEST_CASE("enhance_sequence equals idct(enhance(dct))") {
    Rng rng({4, 0});
    const auto s = random_sequence(rng, 2, 3, 32);
    auto cfg = EnhancementConfig::with_cuts(32, {4, 9, 20}, 9, 12.0, 0.5);
    cfg.weights = {0.1, 0.9, 0.3, 0.6};
    const auto a = enhance_sequence(s, cfg);
    const auto b = idct(enhance(dct_forward(s), cfg));
    for (std::size_t i = 0; i < a.values().size(); ++i) CHECK(a.values()[i] == doctest::Approx(b.values()[i]));
  }

  TEST_CASE("pure low cosine is scaled by its band gain") {
    const std::size_t f = 64, i = 3;
    MotionSequence s(1, 1, f);
    for (std::size_t t = 0; t < f; ++t) {
      s.at(0, 0, t) = std::cos(std::numbers::pi * (static_cast<double>(t) + 0.5) * static_cast<double>(i) / 64.0);
    }
    const auto cfg = EnhancementConfig::per_coefficient(f, 35, 30.0, 0.5);
    const double g = 1.0 + 0.5 * (1.0 - 3.0 / 30.0);
    const auto out = enhance_sequence(s, cfg);
    for (std::size_t t = 0; t < f; ++t) CHECK(out.at(0, 0, t) == doctest::Approx(g * s.at(0, 0, t)).epsilon(1e-12));
  }

  TEST_CASE("alternating high-frequency input loses energy by g squared") {
    const std::size_t f = 64;
    MotionSequence s(1, 1, f);
    for (std::size_t t = 0; t < f; ++t) {
      s.at(0, 0, t) = std::cos(std::numbers::pi * (static_cast<double>(t) + 0.5) * 63.0 / 64.0);
    }
    const auto cfg = EnhancementConfig::per_coefficient(f, 35, 30.0, 0.5);
    const double g = 1.0 - 0.5 * (1.0 - (63.0 - 30.0) / 30.0);
    CHECK(scaling_factor(cfg, 63) == doctest::Approx(g));
    const double ratio = signal_energy(enhance_sequence(s, cfg)) / signal_energy(s);
    CHECK(ratio == doctest::Approx(g * g).epsilon(1e-12));
  }

  TEST_CASE("energy redistribution across random configs") {
    Rng rng({5, 0});
    for (int n = 0; n < 20; ++n) {
      const auto s = random_sequence(rng, 2, 3, 40);
      auto cfg = EnhancementConfig::with_cuts(40, {3, 11, 25}, rng.uniform_index(40), rng.uniform(1.0, 50.0), 0.5,
                                              n % 2 ? EnhanceMode::piecewise : EnhanceMode::learnable_only);
      for (double& w : cfg.weights) w = rng.uniform();
      // Coefficient-wise oracle: sum of (g C)^2 with g from the band formula.
      const auto spec = dct_forward(s);
      double expected = 0.0;
      for (std::size_t k = 0; k < cfg.num_bands(); ++k) {
        const double g = scaling_factor(cfg, k);
        for (std::size_t t = 0; t < spec.trajectories(); ++t)
          for (std::size_t i = cfg.split_points[k]; i < cfg.split_points[k + 1]; ++i)
            expected += g * g * spec.trajectory(t)[i] * spec.trajectory(t)[i];
      }
      const double got = signal_energy(enhance_sequence(s, cfg));
      CHECK(std::abs(got - expected) / expected < 1e-9);
      CHECK(redistributed_energy(spec, cfg) == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  TEST_CASE("config validation") {
    auto cfg = EnhancementConfig::per_coefficient(16, 8, 30.0, 0.5);
    CHECK_NOTHROW(cfg.validate(16));
    CHECK_THROWS_AS(cfg.validate(15), EnhancementConfigError);
    auto bad = cfg;
    bad.low_threshold = 16;
    CHECK_THROWS_AS(bad.validate(16), EnhancementConfigError);
    bad = cfg;
    bad.adjust = 0.0;
    CHECK_THROWS_AS(bad.validate(16), EnhancementConfigError);
    bad = cfg;
    bad.weights[2] = 1.5;
    CHECK_THROWS_AS(bad.validate(16), EnhancementConfigError);
    bad = cfg;
    bad.split_points[3] = bad.split_points[2];
    CHECK_THROWS_AS(bad.validate(16), EnhancementConfigError);
    CHECK_THROWS_AS(EnhancementConfig::with_cuts(16, {4, 4}, 8, 30.0, 0.5).validate(16), EnhancementConfigError);
  }

  TEST_CASE("enhance_vector follows the same band logic") {
    Rng rng({6, 0});
    Vec x(24);
    for (double& v : x) v = rng.normal();
    auto cfg = EnhancementConfig::per_coefficient(24, 10, 8.0, 0.4);
    const Vec y = enhance_vector(x, cfg);
    MotionSequence s(1, 1, 24, x);
    const auto ref = enhance_sequence(s, cfg);
    for (std::size_t i = 0; i < 24; ++i) CHECK(y[i] == doctest::Approx(ref.values()[i]));
  }

  TEST_CASE("enhancement backward matches finite differences") {
    Rng rng({7, 0});
    const auto s = random_sequence(rng, 2, 2, 16);
    const auto spec = dct_forward(s);
    auto cfg = EnhancementConfig::with_cuts(16, {3, 7, 12}, 7, 10.0, 0.5);
    cfg.weights = {0.2, 0.4, 0.6, 0.8};
    const auto u = random_sequence(rng, 2, 2, 16);
    Vec wg(cfg.num_bands(), 0.0);
    const auto xg = enhance_sequence_backward(spec, cfg, u, wg);
    auto loss = [&](const EnhancementConfig& c, const MotionSequence& in) {
      const auto out = enhance_sequence(in, c);
      return numkit::dot(out.values(), u.values());
    };
    for (std::size_t k = 0; k < cfg.num_bands(); ++k) {
      auto p = cfg, m = cfg;
      p.weights[k] += 1e-6;
      m.weights[k] -= 1e-6;
      CHECK(wg[k] == doctest::Approx((loss(p, s) - loss(m, s)) / 2e-6).epsilon(1e-6));
    }
    for (std::size_t i = 0; i < s.values().size(); i += 5) {
      auto p = s, m = s;
      p.values()[i] += 1e-6;
      m.values()[i] -= 1e-6;
      CHECK(xg.values()[i] == doctest::Approx((loss(cfg, p) - loss(cfg, m)) / 2e-6).epsilon(1e-6));
    }
  }

  TEST_CASE("weight squashing round trip") {
    for (double w : {0.01, 0.25, 0.5, 0.9}) CHECK(squash_weight(unsquash_weight(w)) == doctest::Approx(w));
    CHECK(squash_derivative(0.0) == doctest::Approx(0.25));
    CHECK(parse_enhance_mode("learnable_only") == EnhanceMode::learnable_only);
    CHECK_THROWS(parse_enhance_mode("bogus"));
  }
}
