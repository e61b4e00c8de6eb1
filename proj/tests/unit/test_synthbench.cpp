#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fsvae/synthbench.hpp"

using namespace fsvae;
using namespace fsvae::synth;
using pipeline::Partition;

namespace {

SynthConfig small() {
  SynthConfig c;
  c.classes = 6;
  c.unseen_classes = 2;
  c.joints = 3;
  c.frames = 32;
  c.jitter_band_first = 16;
  c.train_per_class = 10;
  c.test_per_class = 5;
  c.seed = 4;
  return c;
}

// Energy share of coefficients [lo, hi) over all trajectories.
double band_share(const freq::MotionSequence& seq, std::size_t lo, std::size_t hi) {
  const auto spec = freq::dct_forward(seq);
  double in = 0.0, all = 0.0;
  for (std::size_t t = 0; t < spec.trajectories(); ++t) {
    const auto tr = spec.trajectory(t);
    for (std::size_t i = 0; i < tr.size(); ++i) {
      all += tr[i] * tr[i];
      if (i >= lo && i < hi) in += tr[i] * tr[i];
    }
  }
  return in / all;
}

}  // namespace

TEST_SUITE("synthbench") {
  TEST_CASE("counts, split and shapes") {
    const auto g = generate(small());
    CHECK(g.split.seen.size() == 4);
    CHECK(g.split.unseen.size() == 2);
    CHECK(g.data.count(Partition::train) == 40);
    CHECK(g.data.count(Partition::test_seen) == 20);
    CHECK(g.data.count(Partition::test_unseen) == 10);
    CHECK_NOTHROW(g.data.validate(g.split));
    CHECK(g.table.size() == 6);
    CHECK(g.embeddings.size() == 18);
    CHECK(g.prototypes.size() == 6);
    const auto& seq = *g.data.records.front().sequence;
    CHECK(seq.joints() == 3);
    CHECK(seq.coords() == 3);
    CHECK(seq.frames() == 32);
  }

  TEST_CASE("prototypes are pairwise distinct") {
    const auto g = generate(small());
    for (const auto& [a, pa] : g.prototypes)
      for (const auto& [b, pb] : g.prototypes)
        if (a < b) CHECK(numkit::squared_distance(pa, pb) > 1e-6);
  }

  TEST_CASE("same seed gives byte-identical files, another seed does not") {
    auto dump = [](const GeneratedDataset& g) {
      std::ostringstream out;
      pipeline::write_features(out, g.data);
      semantics::write_embeddings(out, g.embeddings, "");
      pipeline::write_split(out, g.split);
      return out.str();
    };
    const auto a = dump(generate(small()));
    CHECK(a == dump(generate(small())));
    auto other = small();
    other.seed = 5;
    CHECK(a != dump(generate(other)));
  }

  TEST_CASE("jitter-free samples keep their energy in the low band") {
    const auto c = small();
    const auto g = generate(c);
    for (const auto& r : g.data.records) {
      CHECK(band_share(*r.sequence, c.low_band_first, c.low_band_last + 1) >= 0.99);
    }
  }

  TEST_CASE("jitter sits above the jitter band start") {
    auto c = small();
    c.jitter = 1000.0;  // signal is negligible next to the noise
    const auto g = generate(c);
    double share = 0.0;
    for (const auto& r : g.data.records) share += band_share(*r.sequence, 0, c.jitter_band_first);
    share /= static_cast<double>(g.data.records.size());
    CHECK(share < 0.05);
  }

  TEST_CASE("nearest-prototype oracle") {
    auto c = small();
    c.classes = 2;
    c.unseen_classes = 1;
    c.orthogonal_prototypes = true;
    const auto two = generate(c);
    CHECK(numkit::dot(two.prototypes.begin()->second, two.prototypes.rbegin()->second) ==
          doctest::Approx(0.0).epsilon(1e-12));
    CHECK(oracle_nearest_prototype(two).accuracy == 1.0);

    CHECK(oracle_nearest_prototype(generate(small())).accuracy == 1.0);

    auto loud = small();
    loud.classes = 12;
    loud.unseen_classes = 2;
    loud.test_per_class = 40;
    loud.jitter = 1e4;
    const auto rep = oracle_nearest_prototype(generate(loud));
    const double p = 1.0 / 12.0;
    const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(rep.total));
    CHECK(std::abs(rep.accuracy - p) < 3.0 * sigma);
  }

  TEST_CASE("label noise") {
    const auto g = generate(small());
    numkit::Rng rng({1, 0});
    CHECK(inject_label_noise(g.data, 0.0, rng).records == g.data.records);

    const auto noisy = inject_label_noise(g.data, 0.2, rng);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < g.data.records.size(); ++i) {
      const auto& a = g.data.records[i];
      const auto& b = noisy.records[i];
      if (a.partition != Partition::train) {
        CHECK(a == b);
        continue;
      }
      if (a.class_id != b.class_id) {
        ++changed;
        CHECK(g.split.is_seen(b.class_id));
      }
    }
    CHECK(changed == 8);  // floor(0.2 * 40)

    auto hundred = small();
    hundred.classes = 3;
    hundred.unseen_classes = 1;
    hundred.train_per_class = 50;
    const auto h = generate(hundred);
    REQUIRE(h.data.count(Partition::train) == 100);
    const auto h2 = inject_label_noise(h.data, 0.2, rng);
    std::size_t diff = 0;
    for (std::size_t i = 0; i < h.data.records.size(); ++i) diff += h.data.records[i].class_id != h2.records[i].class_id;
    CHECK(diff == 20);

    // two training classes, rate 1: every label flips to the other one
    const auto all = inject_label_noise(h.data, 1.0, rng);
    for (std::size_t i = 0; i < h.data.records.size(); ++i) {
      if (h.data.records[i].partition == Partition::train) CHECK(all.records[i].class_id != h.data.records[i].class_id);
    }
    CHECK_THROWS(inject_label_noise(h.data, 1.5, rng));
  }

  TEST_CASE("generation-time label noise") {
    auto c = small();
    c.label_noise = 0.25;
    const auto noisy = generate(c);
    const auto clean = generate(small());
    std::size_t diff = 0;
    for (std::size_t i = 0; i < clean.data.records.size(); ++i)
      diff += clean.data.records[i].class_id != noisy.data.records[i].class_id;
    CHECK(diff == 10);
  }

  TEST_CASE("config validation") {
    auto c = small();
    c.low_band_last = 32;
    CHECK_THROWS(generate(c));
    c = small();
    c.classes = 1;
    CHECK_THROWS(generate(c));
    c = small();
    c.jitter = -1.0;
    CHECK_THROWS(generate(c));
    c = small();
    c.label_noise = 2.0;
    CHECK_THROWS(generate(c));
  }
}
