#include "fsvae/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace fsvae::synth {

using pipeline::FeatureDataset;
using pipeline::FeatureRecord;
using pipeline::Partition;

void SynthConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("synth config: " + m); };
  if (classes < 2) fail("need at least two classes");
  if (joints == 0 || coords == 0 || frames == 0) fail("joints, coords and frames must be positive");
  if (unseen_classes == 0 || unseen_classes >= classes) fail("unseen class count must be in [1, classes)");
  if (train_per_class == 0 || test_per_class == 0) fail("per-class sample counts must be positive");
  if (low_band_first > low_band_last) fail("low band is empty");
  if (low_band_last >= frames) fail("low band index " + std::to_string(low_band_last) + " >= frames");
  if (jitter_band_first >= frames) fail("jitter band start " + std::to_string(jitter_band_first) + " >= frames");
  if (jitter_band_first <= low_band_last) fail("jitter band must start above the low band");
  if (prototype_rank == 0) fail("prototype rank must be positive");
  if (orthogonal_prototypes && classes > joints * coords * low_band_size()) {
    fail("too many classes for orthogonal prototypes");
  }
  if (!(jitter >= 0.0)) fail("jitter must be >= 0");
  if (!(jitter_leak >= 0.0 && jitter_leak <= 1.0)) fail("jitter leak must be in [0, 1]");
  if (!(label_noise >= 0.0 && label_noise <= 1.0)) fail("label-noise rate must be in [0, 1]");
  if (!(amplitude_jitter >= 0.0) || !(phase_jitter >= 0.0) || !(semantic_noise >= 0.0)) {
    fail("noise levels must be >= 0");
  }
  if (embed_dim == 0) fail("embedding dimension must be positive");
}

namespace {

void gram_schmidt(std::vector<Vec>& vs) {
  for (std::size_t i = 0; i < vs.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) numkit::axpy(-numkit::dot(vs[i], vs[j]), vs[j], vs[i]);
    const double n = numkit::norm(vs[i]);
    if (!(n > 1e-12)) throw std::runtime_error("synth: degenerate prototype during orthogonalisation");
    for (double& v : vs[i]) v /= n;
  }
}

}  // namespace

Vec low_band_signature(const freq::MotionSequence& seq, const SynthConfig& config) {
  const freq::Spectrum spec = freq::dct_forward(seq);
  const std::size_t l = config.low_band_size();
  Vec out(spec.trajectories() * l);
  for (std::size_t t = 0; t < spec.trajectories(); ++t) {
    const auto traj = spec.trajectory(t);
    for (std::size_t i = 0; i < l; ++i) out[t * l + i] = traj[config.low_band_first + i];
  }
  return out;
}

GeneratedDataset generate(const SynthConfig& config) {
  config.validate();
  numkit::Rng rng({config.seed, 0});
  const std::size_t trajs = config.joints * config.coords;
  const std::size_t l = config.low_band_size();
  const std::size_t pdim = trajs * l;
  const std::size_t r = config.prototype_rank;

  // Unit prototypes from a rank-r subspace.
  numkit::Matrix mixing(pdim, r);
  for (double& v : mixing.data()) v = rng.normal();
  std::vector<Vec> units(config.classes);
  for (auto& u : units) {
    u = numkit::matvec(mixing, rng.normal_vector(r));
    const double n = numkit::norm(u);
    for (double& v : u) v /= n;
  }
  if (config.orthogonal_prototypes) gram_schmidt(units);

  GeneratedDataset out;
  out.config = config;
  const double scale = std::sqrt(static_cast<double>(trajs * config.frames));
  for (std::size_t k = 0; k < config.classes; ++k) {
    Vec p = units[k];
    for (double& v : p) v *= scale;
    out.prototypes[static_cast<int>(k)] = std::move(p);
  }

  // Embeddings: one random linear view per kind plus noise.
  for (semantics::EmbeddingKind kind : semantics::kAllKinds) {
    numkit::Matrix view(config.embed_dim, pdim);
    for (double& v : view.data()) v = rng.normal();
    for (std::size_t k = 0; k < config.classes; ++k) {
      Vec e = numkit::matvec(view, units[k]);
      for (double& v : e) v += config.semantic_noise * rng.normal();
      out.embeddings.push_back({static_cast<int>(k), kind, std::move(e)});
    }
  }
  out.table = semantics::SemanticTable::from_records(out.embeddings);

  std::vector<int> ids(config.classes);
  for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = static_cast<int>(k);
  rng.shuffle(ids.begin(), ids.end());
  out.split.unseen.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(config.unseen_classes));
  out.split.seen.assign(ids.begin() + static_cast<std::ptrdiff_t>(config.unseen_classes), ids.end());
  std::sort(out.split.unseen.begin(), out.split.unseen.end());
  std::sort(out.split.seen.begin(), out.split.seen.end());

  // Jitter variances per coefficient so that the time-domain noise RMS is
  // `jitter` (signal RMS is 1 by construction).
  const std::size_t n_high = config.frames - config.jitter_band_first;
  const std::size_t n_low = config.jitter_band_first;
  const double total = config.jitter * config.jitter * static_cast<double>(config.frames);
  const double sd_high = std::sqrt((1.0 - config.jitter_leak) * total / static_cast<double>(n_high));
  const double sd_low = std::sqrt(config.jitter_leak * total / static_cast<double>(n_low));

  auto make_sample = [&](int cls) {
    freq::Spectrum spec(config.joints, config.coords, config.frames);
    const Vec& proto = out.prototypes.at(cls);
    const double gain = 1.0 + config.amplitude_jitter * rng.normal();
    for (std::size_t t = 0; t < trajs; ++t) {
      auto traj = spec.trajectory(t);
      for (std::size_t i = 0; i < l; ++i) traj[config.low_band_first + i] = gain * proto[t * l + i];
      for (std::size_t i = 0; i + 1 < l; ++i) {
        const double th = rng.uniform(-config.phase_jitter, config.phase_jitter);
        double& a = traj[config.low_band_first + i];
        double& b = traj[config.low_band_first + i + 1];
        const double na = std::cos(th) * a - std::sin(th) * b;
        const double nb = std::sin(th) * a + std::cos(th) * b;
        a = na;
        b = nb;
      }
      if (config.jitter > 0.0) {
        for (std::size_t i = 0; i < config.frames; ++i) {
          traj[i] += (i < config.jitter_band_first ? sd_low : sd_high) * rng.normal();
        }
      }
    }
    return freq::idct(spec);
  };

  std::size_t serial = 0;
  auto add = [&](int cls, Partition part) {
    FeatureRecord rec;
    rec.sample_id = "s" + std::to_string(serial++);
    rec.class_id = cls;
    rec.partition = part;
    rec.sequence = make_sample(cls);
    out.data.records.push_back(std::move(rec));
  };
  for (int cls = 0; cls < static_cast<int>(config.classes); ++cls) {
    if (out.split.is_seen(cls)) {
      for (std::size_t n = 0; n < config.train_per_class; ++n) add(cls, Partition::train);
      for (std::size_t n = 0; n < config.test_per_class; ++n) add(cls, Partition::test_seen);
    } else {
      for (std::size_t n = 0; n < config.test_per_class; ++n) add(cls, Partition::test_unseen);
    }
  }

  if (config.label_noise > 0.0) {
    numkit::Rng noise_rng({config.seed, 1});
    out.data = inject_label_noise(out.data, config.label_noise, noise_rng);
  }
  return out;
}

FeatureDataset inject_label_noise(const FeatureDataset& data, double rate, numkit::Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("label noise rate must be in [0, 1]");
  FeatureDataset out = data;
  const auto train = out.indices(Partition::train);
  const auto count = static_cast<std::size_t>(std::floor(rate * static_cast<double>(train.size())));
  if (count == 0) return out;
  std::set<int> class_set;
  for (std::size_t idx : train) class_set.insert(out.records[idx].class_id);
  const std::vector<int> classes(class_set.begin(), class_set.end());
  if (classes.size() < 2) throw std::invalid_argument("label noise needs at least two training classes");

  std::vector<std::size_t> pick = train;
  rng.shuffle(pick.begin(), pick.end());
  pick.resize(count);
  std::sort(pick.begin(), pick.end());
  for (std::size_t idx : pick) {
    const int original = out.records[idx].class_id;
    const auto pos =
        static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), original) - classes.begin());
    // Draw among the other classes by skipping over the original slot.
    std::size_t draw = rng.uniform_index(classes.size() - 1);
    if (draw >= pos) ++draw;
    const int replacement = classes[draw];
    out.records[idx].class_id = replacement;
  }
  return out;
}

OracleReport oracle_nearest_prototype(const GeneratedDataset& dataset) {
  OracleReport rep;
  std::size_t correct = 0;
  std::size_t unseen_correct = 0;
  for (const auto& rec : dataset.data.records) {
    if (rec.partition == Partition::train) continue;
    if (!rec.has_sequence()) throw std::invalid_argument("oracle: records must carry sequences");
    const Vec sig = low_band_signature(*rec.sequence, dataset.config);
    int best = -1;
    int best_unseen = -1;
    double best_d = 0.0;
    double best_unseen_d = 0.0;
    for (const auto& [cls, proto] : dataset.prototypes) {
      const double d = numkit::squared_distance(sig, proto);
      if (best < 0 || d < best_d) {
        best = cls;
        best_d = d;
      }
      if (dataset.split.is_unseen(cls) && (best_unseen < 0 || d < best_unseen_d)) {
        best_unseen = cls;
        best_unseen_d = d;
      }
    }
    ++rep.total;
    correct += best == rec.class_id;
    if (rec.partition == Partition::test_unseen) {
      ++rep.unseen_total;
      unseen_correct += best_unseen == rec.class_id;
    }
  }
  rep.accuracy = rep.total ? static_cast<double>(correct) / static_cast<double>(rep.total) : 0.0;
  rep.unseen_accuracy =
      rep.unseen_total ? static_cast<double>(unseen_correct) / static_cast<double>(rep.unseen_total) : 0.0;
  return rep;
}

}  // namespace fsvae::synth
