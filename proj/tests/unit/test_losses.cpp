#include <doctest.h>

#include <cmath>
#include <set>

#include "../support/batch_oracles.hpp"
#include "fsvae/losses.hpp"

using namespace fsvae;
using namespace fsvae::losses;
using numkit::Rng;
using numkit::Vec;

namespace {

// Two items whose text and skeleton directions share one geometry:
// d_pos = 1 for both items, d_neg = `neg` for both items.
AlignmentBatch two_item_batch(bool equal) {
  AlignmentBatch b;
  const Vec f0{0, 0}, g0{1, 0};
  const Vec g1 = equal ? Vec{0, 1} : Vec{1, 1};
  const Vec f1 = equal ? Vec{1, 1} : Vec{0, 1};
  b.text = {f0, f1};
  b.text_from_skeleton = {g0, g1};
  b.skeleton = {f0, f1};
  b.skeleton_from_text = {g0, g1};
  b.labels = {0, 1};
  b.negatives = {1, 0};
  return b;
}

double pair_sum(double (*pair)(double, double, double), double a, double p) {
  // l(a) + l(-a) with a = d_neg - d_pos, d_pos fixed at 1
  return pair(1.0, 1.0 + a, p) + pair(1.0 + a, 1.0, p);
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("calibrated: equal distances give lambda") {
    for (double lambda : {0.5, 1.0, 100.0}) {
      CHECK(calibrated_alignment(two_item_batch(true), lambda).value == doctest::Approx(lambda).epsilon(1e-14));
    }
  }

  TEST_CASE("calibrated: d_pos 1, d_neg 2, lambda 1") {
    const double want = 2.0 / (1.0 + std::exp(1.0));
    const double got = calibrated_alignment(two_item_batch(false), 1.0).value;
    CHECK(got == doctest::Approx(want).epsilon(1e-14));
    CHECK(got == doctest::Approx(0.53788).epsilon(1e-5));
  }

  TEST_CASE("calibrated pair symmetry") {
    Rng rng({1, 0});
    for (double lambda : {1.0, 10.0, 100.0}) {
      for (int i = 0; i < 2000; ++i) {
        const double a = rng.uniform(-500.0, 500.0);
        CHECK(std::abs(calibrated_ell(a, lambda) + calibrated_ell(-a, lambda) - 1.0) < 1e-12);
      }
    }
  }

  TEST_CASE("calibrated loss grows with lambda when the negative is farther") {
    double prev = 0.0;
    for (double lambda : {0.5, 1.0, 5.0, 50.0, 500.0}) {
      const double v = lambda * calibrated_pair(1.0, 2.0, lambda);
      CHECK(v > prev);
      CHECK(v < lambda / 2.0);
      prev = v;
    }
  }

  TEST_CASE("triplet baselines break the pair-sum identity") {
    CHECK(pair_sum(&hinge_pair, 0.5, 1.0) != doctest::Approx(pair_sum(&hinge_pair, 3.0, 1.0)));
    CHECK(pair_sum(&log_sigmoid_pair, 1.0, 1.0) != doctest::Approx(pair_sum(&log_sigmoid_pair, 2.0, 1.0)));
    CHECK(pair_sum(&ratio_hinge_pair, 0.5, 1.0) != doctest::Approx(pair_sum(&ratio_hinge_pair, 2.0, 1.0)));
    const double t3a = softmax_ratio_pair(1.0, 1.0) + softmax_ratio_pair(1.0, 1.0);
    const double t3b = softmax_ratio_pair(1.0, 3.0) + softmax_ratio_pair(3.0, 1.0);
    CHECK(t3a != doctest::Approx(t3b));
    const double t2 = log_sigmoid_pair(1.0, 2.0, 1.0) + log_sigmoid_pair(2.0, 1.0, 1.0);
    CHECK(t2 == doctest::Approx(-std::log1p(std::exp(1.0)) - std::log1p(std::exp(-1.0))));
    CHECK(t2 == doctest::Approx(-1.62652).epsilon(1e-5));
  }

  TEST_CASE("t1 at equal distances contributes the margin") {
    CHECK(hinge_pair(2.0, 2.0, 0.7) == doctest::Approx(0.7));
    // two items, two directions, averaged over items
    CHECK(triplet_t1(two_item_batch(true), 0.7).value == doctest::Approx(2 * 0.7));
  }

  TEST_CASE("gradients of every alignment loss match finite differences") {
    Rng rng({2, 0});
    const auto batch = testsupport::random_batch(rng, 6, 4, 5, 3);
    const Vec x = testsupport::flatten_batch(batch);
    LossConfig cfg;
    cfg.margin = 1.0;
    for (double lambda : {1.0, 100.0}) {
      cfg.temperature = lambda;
      for (auto kind : {AlignmentLoss::calibrated, AlignmentLoss::triplet_hinge, AlignmentLoss::triplet_log_sigmoid,
                        AlignmentLoss::triplet_softmax_ratio, AlignmentLoss::triplet_ratio_hinge}) {
        CAPTURE(to_string(kind));
        CAPTURE(lambda);
        const auto f = testsupport::batch_objective(batch, [&](const AlignmentBatch& b) {
          return alignment_loss(kind, b, cfg);
        });
        CHECK(numkit::grad_check(f, x).max_relative_error < 1e-4);
      }
    }
    const auto all = testsupport::batch_objective(batch, [](const AlignmentBatch& b) {
      return calibrated_alignment_all_pairs(b, 3.0);
    });
    CHECK(numkit::grad_check(all, x).max_relative_error < 1e-4);
  }

  TEST_CASE("batch validation") {
    auto b = two_item_batch(true);
    b.negatives = {0, 0};
    CHECK_THROWS_AS(calibrated_alignment(b, 1.0), NoNegativeError);
    b = two_item_batch(true);
    b.labels = {0, 0};
    CHECK_THROWS_AS(calibrated_alignment(b, 1.0), NoNegativeError);
    b = two_item_batch(true);
    b.text[1] = Vec{1, 2, 3};
    CHECK_THROWS_AS(calibrated_alignment(b, 1.0), numkit::DimensionError);
    CHECK_THROWS(calibrated_alignment(two_item_batch(true), 0.0));
  }

  TEST_CASE("kl closed form") {
    CHECK(kl_diag_gaussian(Vec{0, 0}, Vec{0, 0}) == 0.0);
    CHECK(kl_diag_gaussian(Vec{1}, Vec{0}) == doctest::Approx(0.5));
    CHECK(kl_diag_gaussian(Vec{0}, Vec{1}) == doctest::Approx(0.5 * (std::exp(1.0) - 2.0)));
    CHECK(kl_diag_gaussian(Vec{0}, Vec{1}) == doctest::Approx(0.35914).epsilon(1e-5));
    Rng rng({3, 0});
    for (int i = 0; i < 500; ++i) {
      CHECK(kl_diag_gaussian(rng.normal_vector(3, 2.0), rng.normal_vector(3, 2.0)) >= 0.0);
    }
    const Vec mu = rng.normal_vector(4), lv = rng.normal_vector(4);
    const auto g = kl_diag_gaussian_with_grad(mu, lv);
    CHECK(g.value == doctest::Approx(kl_diag_gaussian(mu, lv)));
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(g.mean[k] == doctest::Approx(mu[k]));
      CHECK(g.log_variance[k] == doctest::Approx(0.5 * (std::exp(lv[k]) - 1.0)));
    }
  }

  TEST_CASE("elbo examples") {
    const std::vector<Vec> x{{1.0, 2.0}};
    CHECK(elbo(x, x, {{Vec{0.0}, Vec{0.0}}}, 1.0).value == 0.0);
    CHECK(elbo(x, x, {{Vec{1.0}, Vec{0.0}}}, 1.0).value == doctest::Approx(0.5));
    const auto e = elbo(x, {{0.0, 0.0}}, {{Vec{1.0}, Vec{0.0}}}, 2.0);
    CHECK(e.reconstruction == doctest::Approx(5.0));
    CHECK(e.kl == doctest::Approx(0.5));
    CHECK(e.value == doctest::Approx(6.0));
    CHECK_THROWS_AS(elbo(x, {{1.0}}, {{Vec{0.0}, Vec{0.0}}}, 1.0), numkit::DimensionError);
  }

  TEST_CASE("elbo gradient check") {
    Rng rng({4, 0});
    const std::size_t b = 4, d = 5, l = 3;
    Vec x;
    for (std::size_t i = 0; i < b * (2 * d + 2 * l); ++i) x.push_back(rng.normal());
    const numkit::Objective f = [&](std::span<const double> p, Vec* grad) {
      std::vector<Vec> feats, recs;
      std::vector<LatentGaussian> lat;
      std::size_t k = 0;
      auto take = [&](std::size_t n) {
        Vec v(p.begin() + static_cast<long>(k), p.begin() + static_cast<long>(k + n));
        k += n;
        return v;
      };
      for (std::size_t i = 0; i < b; ++i) {
        feats.push_back(take(d));
        recs.push_back(take(d));
        Vec m = take(l);
        lat.push_back({m, take(l)});
      }
      const auto e = elbo(feats, recs, lat, 0.7);
      if (grad) {
        grad->clear();
        for (std::size_t i = 0; i < b; ++i) {
          for (const Vec* g : {&e.grad_features[i], &e.grad_reconstructions[i], &e.grad_mean[i],
                               &e.grad_log_variance[i]})
            grad->insert(grad->end(), g->begin(), g->end());
        }
      }
      return e.value;
    };
    CHECK(numkit::grad_check(f, x).max_relative_error < 1e-4);
  }

  TEST_CASE("total objective") {
    CHECK(total_objective(2.0, 3.0, 0.0) == 2.0);
    CHECK(total_objective(2.0, 3.0, 0.1) == doctest::Approx(2.3));
    LossConfig defaults;
    CHECK(defaults.alpha == 0.1);
    CHECK(defaults.temperature == 100.0);
    CHECK_NOTHROW(defaults.validate());
    defaults.temperature = 0.0;
    CHECK_THROWS(defaults.validate());
  }

  TEST_CASE("sample_negatives") {
    Rng rng({5, 0});
    const std::vector<int> two{0, 1};
    CHECK(sample_negatives(two, rng) == std::vector<std::size_t>{1, 0});
    const std::vector<int> one{0, 0, 0};
    CHECK_THROWS_AS(sample_negatives(one, rng), NoNegativeError);

    const std::vector<int> labels{0, 0, 1, 1};
    std::set<std::size_t> used;
    for (int rep = 0; rep < 200; ++rep) {
      const auto n = sample_negatives(labels, rng);
      for (std::size_t i = 0; i < 4; ++i) {
        CHECK(labels[n[i]] != labels[i]);
        used.insert(i * 4 + n[i]);
      }
    }
    CHECK(used.size() == 8);  // every cross-label pair is reachable
    Rng a({9, 9}), b({9, 9});
    CHECK(sample_negatives(labels, a) == sample_negatives(labels, b));
  }

  TEST_CASE("loss names") {
    for (auto k : {AlignmentLoss::calibrated, AlignmentLoss::triplet_hinge, AlignmentLoss::triplet_log_sigmoid,
                   AlignmentLoss::triplet_softmax_ratio, AlignmentLoss::triplet_ratio_hinge}) {
      CHECK(parse_alignment_loss(to_string(k)) == k);
    }
    CHECK_THROWS(parse_alignment_loss("t9"));
  }
}
