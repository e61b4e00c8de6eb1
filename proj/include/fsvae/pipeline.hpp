#pragma once

// Training stages after feature extraction: cross-modal VAE alignment, the
// unseen-class classifier trained on synthesized text latents, the seen-class
// classifier, the seen/unseen gate, and ZSL / GZSL evaluation.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsvae/crossvae.hpp"
#include "fsvae/frequency.hpp"
#include "fsvae/losses.hpp"
#include "fsvae/numkit.hpp"
#include "fsvae/semantics.hpp"

namespace fsvae::pipeline {

using numkit::Vec;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an unseen class leaks into a training stage.
class SplitViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Wraps a failure with the name of the stage that produced it.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct Diagnostics {
  std::vector<std::string> warnings;
  void warn(std::string message) { warnings.push_back(std::move(message)); }
};

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

enum class Partition { train, test_seen, test_unseen };

const char* to_string(Partition p);
Partition parse_partition(const std::string& text);

struct SplitSpec {
  std::vector<int> seen;
  std::vector<int> unseen;
  std::string config_hash;

  /// Disjoint, non-empty, no duplicates.
  void validate() const;
  bool is_seen(int class_id) const;
  bool is_unseen(int class_id) const;

  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

SplitSpec parse_split(std::istream& in);
SplitSpec load_split(const std::filesystem::path& path);
void write_split(std::ostream& out, const SplitSpec& split);
void write_split(const std::filesystem::path& path, const SplitSpec& split);

/// A record carries either a pre-extracted feature vector or a raw sequence.
struct FeatureRecord {
  std::string sample_id;
  int class_id = 0;
  Partition partition = Partition::train;
  Vec vector;
  std::optional<freq::MotionSequence> sequence;

  bool has_sequence() const { return sequence.has_value(); }
  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

struct FeatureDataset {
  std::vector<FeatureRecord> records;
  std::string config_hash;

  std::vector<std::size_t> indices(Partition p) const;
  std::size_t count(Partition p) const;
  /// Train and test-seen records must use seen classes, test-unseen records
  /// unseen classes; every record has the same input shape.
  void validate(const SplitSpec& split) const;
};

/// Line-delimited JSON. An optional first line {"meta":{...}} carries the
/// config hash; every other line is one record.
FeatureDataset parse_features(std::istream& in);
FeatureDataset load_features(const std::filesystem::path& path);
void write_features(std::ostream& out, const FeatureDataset& data);
void write_features(const std::filesystem::path& path, const FeatureDataset& data);

// ---------------------------------------------------------------------------
// Feature front end
// ---------------------------------------------------------------------------

/// Turns a record into the skeleton feature f_s. Raw sequences are enhanced
/// in the frequency domain and projected by a fixed seeded random linear map;
/// feature vectors are enhanced along their own axis.
///
/// Enhancement is linear in the spectrum, so f_s = sum_k g_k B_k where B_k is
/// the projected contribution of band k. Training caches the B_k per record.
class FrontEnd {
 public:
  enum class Input { sequence, vector };

  FrontEnd() = default;

  /// `layout` provides mode, threshold, adjust, bands and initial weights.
  static FrontEnd for_sequences(std::size_t joints, std::size_t coords, std::size_t frames,
                                freq::EnhancementConfig layout, bool enabled, std::size_t output_dim,
                                std::uint64_t seed);
  static FrontEnd for_vectors(std::size_t dim, freq::EnhancementConfig layout, bool enabled);

  Input input() const { return input_; }
  bool enabled() const { return enabled_; }
  std::size_t feature_dim() const;
  std::size_t num_bands() const { return enabled_ ? layout_.num_bands() : 1; }

  /// Current enhancement (weights = squash(raw weights)).
  freq::EnhancementConfig enhancement() const;
  std::span<const double> raw_weights() const { return raw_; }
  std::span<double> mutable_raw_weights() { return raw_; }

  /// Reference path: enhance_sequence / enhance_vector then projection.
  Vec features(const FeatureRecord& record) const;

  std::vector<Vec> band_components(const FeatureRecord& record) const;
  Vec combine(const std::vector<Vec>& components) const;
  /// Adds dL/d(raw weight) for one record given dL/df_s.
  void accumulate_raw_grad(const std::vector<Vec>& components, std::span<const double> feature_grad,
                           std::span<double> raw_grad) const;

  const numkit::Matrix& projection() const { return projection_; }
  std::size_t joints() const { return joints_; }
  std::size_t coords() const { return coords_; }
  std::size_t frames() const { return frames_; }
  std::size_t input_dim() const { return input_dim_; }
  std::uint64_t seed() const { return seed_; }
  const freq::EnhancementConfig& layout() const { return layout_; }

  /// Rebuilds a front end from stored parts (checkpoint loading).
  static FrontEnd restore(Input input, std::size_t joints, std::size_t coords, std::size_t frames,
                          std::size_t input_dim, freq::EnhancementConfig layout, bool enabled, Vec raw,
                          std::size_t output_dim, std::uint64_t seed);

  friend bool operator==(const FrontEnd& a, const FrontEnd& b);

 private:
  void check_record(const FeatureRecord& record) const;
  void build_projection(std::size_t output_dim);

  Input input_ = Input::vector;
  std::size_t joints_ = 0;
  std::size_t coords_ = 0;
  std::size_t frames_ = 0;
  std::size_t input_dim_ = 0;
  freq::EnhancementConfig layout_;
  bool enabled_ = true;
  Vec raw_;
  std::uint64_t seed_ = 0;
  numkit::Matrix projection_;           // output_dim x (J*C*F), time domain
  numkit::Matrix spectral_projection_;  // projection composed with the inverse DCT
};

// ---------------------------------------------------------------------------
// Stage 2
// ---------------------------------------------------------------------------

struct Stage2Config {
  std::size_t epochs = 1900;
  std::size_t batch_size = 64;
  double learning_rate = 1e-4;
  losses::LossConfig loss;
  losses::AlignmentLoss alignment = losses::AlignmentLoss::calibrated;
  bool learn_enhancement = true;
};

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  crossvae::LossBreakdown mean;
};

struct Stage2Result {
  crossvae::VaeParams vae;
  FrontEnd front_end;
  std::vector<EpochLog> log;
  std::size_t skipped_batches = 0;  // single-class batches
};

/// Fused text feature for every class in `ids`; throws DataError on a gap.
std::map<int, Vec> fused_semantics(const semantics::SemanticTable& table, const std::vector<int>& ids);

/// Minimises L_VAE^s + L_VAE^t + alpha L_align over shuffled train batches,
/// updating the VAE and (optionally) the enhancement weights with Adam.
Stage2Result run_stage2(const FeatureDataset& data, const SplitSpec& split, const semantics::SemanticTable& table,
                        FrontEnd front_end, crossvae::VaeParams init, const Stage2Config& config,
                        numkit::Rng& rng);

// ---------------------------------------------------------------------------
// Classifiers and gate
// ---------------------------------------------------------------------------

struct ClassifierConfig {
  std::size_t epochs = 300;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
};

/// Linear softmax head over latent vectors.
class SoftmaxClassifier {
 public:
  SoftmaxClassifier() = default;
  SoftmaxClassifier(std::vector<int> classes, numkit::Matrix weights, Vec bias);

  /// Cross-entropy with Adam on shuffled minibatches. One class yields a
  /// constant predictor and a warning.
  static SoftmaxClassifier train(const std::vector<Vec>& inputs, const std::vector<int>& labels,
                                 const ClassifierConfig& config, numkit::Rng& rng, Diagnostics* diag = nullptr);

  const std::vector<int>& classes() const { return classes_; }
  const numkit::Matrix& weights() const { return weights_; }
  const Vec& bias() const { return bias_; }
  std::size_t input_dim() const { return weights_.cols(); }

  Vec probabilities(std::span<const double> x) const;
  int predict(std::span<const double> x) const;
  double accuracy(const std::vector<Vec>& inputs, const std::vector<int>& labels) const;

  friend bool operator==(const SoftmaxClassifier&, const SoftmaxClassifier&) = default;

 private:
  std::vector<int> classes_;
  numkit::Matrix weights_;  // classes x input_dim
  Vec bias_;
};

struct UnseenClassifier {
  SoftmaxClassifier classifier;
  std::vector<Vec> latents;  // synthesized training latents
  std::vector<int> labels;
};

UnseenClassifier synthesize_unseen_classifier(const crossvae::VaeParams& vae, const semantics::SemanticTable& table,
                                              const std::vector<int>& unseen, std::size_t samples_per_class,
                                              const ClassifierConfig& config, numkit::Rng& rng,
                                              Diagnostics* diag = nullptr);

/// Posterior means of the skeleton encoder.
std::vector<Vec> skeleton_latents(const crossvae::VaeParams& vae, const FrontEnd& front,
                                  const FeatureDataset& data, const std::vector<std::size_t>& indices);

SoftmaxClassifier train_seen_classifier(const crossvae::VaeParams& vae, const FrontEnd& front,
                                        const FeatureDataset& data, const std::vector<std::size_t>& indices,
                                        const SplitSpec& split, const ClassifierConfig& config, numkit::Rng& rng,
                                        Diagnostics* diag = nullptr);

/// Binary logistic regression on (top-1 probability, entropy) of the seen
/// classifier. Positive class = seen.
class GateModel {
 public:
  GateModel() = default;
  GateModel(Vec weights, double bias, double regularization)
      : weights_(std::move(weights)), bias_(bias), regularization_(regularization) {}

  static Vec features(const SoftmaxClassifier& seen, std::span<const double> latent);

  double probability_seen(std::span<const double> gate_features) const;
  bool routes_to_seen(std::span<const double> gate_features) const { return probability_seen(gate_features) >= 0.5; }

  const Vec& weights() const { return weights_; }
  double bias() const { return bias_; }
  double regularization() const { return regularization_; }

  friend bool operator==(const GateModel&, const GateModel&) = default;

 private:
  Vec weights_;
  double bias_ = 0.0;
  double regularization_ = 1.0;
};

/// Fits the gate on pre-computed gate features. Objective:
/// C * sum_i s_i logloss_i + 1/2 |w|^2 with class-balanced s_i; the
/// intercept is not penalised. Minimised with L-BFGS.
GateModel fit_gate(const std::vector<Vec>& seen_features, const std::vector<Vec>& unseen_features,
                   double regularization = 1.0);

GateModel train_gate(const SoftmaxClassifier& seen, const std::vector<Vec>& unseen_latents,
                     const std::vector<Vec>& heldout_seen_latents, double regularization = 1.0);

// ---------------------------------------------------------------------------
// Full model and evaluation
// ---------------------------------------------------------------------------

struct TrainedModel {
  std::string config_hash;
  SplitSpec split;
  FrontEnd front_end;
  crossvae::VaeParams vae;
  SoftmaxClassifier seen_classifier;
  SoftmaxClassifier unseen_classifier;
  GateModel gate;

  friend bool operator==(const TrainedModel&, const TrainedModel&) = default;
};

struct PipelineConfig {
  Stage2Config stage2;
  std::size_t latent_dim = 100;
  std::size_t hidden_dim = 128;
  std::size_t unseen_samples = 500;
  ClassifierConfig unseen_classifier;
  ClassifierConfig seen_classifier;
  double gate_regularization = 1.0;
  double gate_holdout = 0.2;  // fraction of train records held out for the gate
};

struct TrainOutcome {
  TrainedModel model;
  std::vector<EpochLog> log;
  Diagnostics diagnostics;
};

/// Stages 2 to 4. Every sub-stage draws from its own stream of `seed`.
TrainOutcome train_pipeline(const FeatureDataset& data, const SplitSpec& split,
                            const semantics::SemanticTable& table, FrontEnd front_end,
                            const PipelineConfig& config, std::uint64_t seed, std::string config_hash = {});

struct ClassCount {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

struct AccuracyBreakdown {
  double accuracy = 0.0;  // sample average
  std::size_t correct = 0;
  std::size_t total = 0;
  std::map<int, ClassCount> per_class;
};

AccuracyBreakdown score_predictions(const std::vector<int>& truth, const std::vector<int>& predicted);

/// H = 2su / (s + u), 0 when s + u = 0.
double harmonic_mean(double seen, double unseen);

AccuracyBreakdown evaluate_zsl(const TrainedModel& model, const FeatureDataset& data);

/// Gate, then the chosen classifier.
int gzsl_predict(const TrainedModel& model, std::span<const double> latent);

struct GzslResult {
  AccuracyBreakdown seen;
  AccuracyBreakdown unseen;
  double harmonic = 0.0;
  std::size_t routed_to_seen = 0;
};

GzslResult evaluate_gzsl(const TrainedModel& model, const FeatureDataset& data);

struct EvalReport {
  std::string mode;  // "zsl" or "gzsl"
  std::string config_hash;
  std::optional<AccuracyBreakdown> zsl;
  std::optional<GzslResult> gzsl;
};

/// Structured JSON text with every report field.
std::string report_to_json(const EvalReport& report);

// ---------------------------------------------------------------------------
// Latent export
// ---------------------------------------------------------------------------

struct LatentRow {
  std::string sample_id;
  int class_id = 0;
  Vec mean;
};

/// Header "# latents config_hash=<h> latent_dim=<d>" then tab-separated
/// sample_id, class_id and the mean vector at full precision.
void export_latents(const crossvae::VaeParams& vae, const FrontEnd& front, const FeatureDataset& data,
                    std::ostream& out, const std::string& config_hash);
void export_latents(const crossvae::VaeParams& vae, const FrontEnd& front, const FeatureDataset& data,
                    const std::filesystem::path& path, const std::string& config_hash);
std::vector<LatentRow> parse_latents(std::istream& in);

}  // namespace fsvae::pipeline
