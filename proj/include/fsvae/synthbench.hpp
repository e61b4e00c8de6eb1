#pragma once

// Seeded generator of skeleton-like motion sequences and matching class
// embeddings. Class identity lives in a few low DCT coefficients; jitter is
// white noise placed on high coefficients.

#include <cstddef>
#include <cstdint>
#include <map>

#include "fsvae/frequency.hpp"
#include "fsvae/numkit.hpp"
#include "fsvae/pipeline.hpp"
#include "fsvae/semantics.hpp"

namespace fsvae::synth {

using numkit::Vec;

struct SynthConfig {
  std::size_t classes = 12;
  std::size_t joints = 5;
  std::size_t coords = 3;
  std::size_t frames = 64;
  std::size_t train_per_class = 40;
  std::size_t test_per_class = 20;
  std::size_t unseen_classes = 2;

  // Class signal occupies coefficients [low_band_first, low_band_last].
  std::size_t low_band_first = 1;
  std::size_t low_band_last = 4;
  /// Prototypes are drawn from a subspace of this rank so that the text to
  /// skeleton map generalises to held-out classes.
  std::size_t prototype_rank = 4;
  bool orthogonal_prototypes = false;

  double amplitude_jitter = 0.1;  // std of the per-sample gain around 1
  double phase_jitter = 0.2;      // max rotation (radians) between neighbouring low coefficients

  double jitter = 0.0;                 // noise RMS relative to signal RMS
  std::size_t jitter_band_first = 35;  // first coefficient carrying most jitter energy
  double jitter_leak = 0.02;           // share of jitter energy below jitter_band_first

  double label_noise = 0.0;  // fraction of training labels corrupted at generation
  std::size_t embed_dim = 16;
  double semantic_noise = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t low_band_size() const { return low_band_last - low_band_first + 1; }
};

struct GeneratedDataset {
  SynthConfig config;
  pipeline::FeatureDataset data;
  std::vector<semantics::EmbeddingRecord> embeddings;
  semantics::SemanticTable table;
  pipeline::SplitSpec split;
  /// Low-band coefficients of each class at unit gain, ordered
  /// [trajectory][coefficient], scaled so the signal RMS is 1.
  std::map<int, Vec> prototypes;
};

GeneratedDataset generate(const SynthConfig& config);

/// Relabels exactly floor(rate * N_train) training records, each to a
/// uniformly drawn different training class. Test partitions are untouched.
pipeline::FeatureDataset inject_label_noise(const pipeline::FeatureDataset& data, double rate, numkit::Rng& rng);

/// Low-band coefficients of a sequence in prototype layout.
Vec low_band_signature(const freq::MotionSequence& seq, const SynthConfig& config);

struct OracleReport {
  double accuracy = 0.0;          // all test records against every class prototype
  double unseen_accuracy = 0.0;   // test_unseen records against unseen prototypes only
  std::size_t total = 0;
  std::size_t unseen_total = 0;
};

/// Nearest prototype by Euclidean distance of the low-band signature.
OracleReport oracle_nearest_prototype(const GeneratedDataset& dataset);

}  // namespace fsvae::synth
