#pragma once

// Cross-modal alignment objectives, the Gaussian ELBO and closed-form KL.
// Every loss returns its value together with gradients for all inputs.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsvae/numkit.hpp"

namespace fsvae::losses {

using numkit::Vec;

/// Diagonal Gaussian posterior N(mean, diag(exp(log_variance))).
struct LatentGaussian {
  Vec mean;
  Vec log_variance;
};

struct LossConfig {
  double temperature = 100.0;  // lambda
  double alpha = 0.1;          // alignment weight in the total objective
  double beta = 1.0;           // KL weight
  double margin = 1.0;         // triplet margin

  void validate() const;
};

enum class AlignmentLoss { calibrated, triplet_hinge, triplet_log_sigmoid, triplet_softmax_ratio, triplet_ratio_hinge };

/// "calibrated", "t1", "t2", "t3", "t4"
const char* to_string(AlignmentLoss kind);
AlignmentLoss parse_alignment_loss(const std::string& text);

class NoNegativeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One row per batch item. The text direction compares f_t(i) with the
/// cross-reconstructions g^s_t(i) and g^s_t(i-); the skeleton direction
/// compares f_s(i) with g^t_s(i) and g^t_s(i-).
struct AlignmentBatch {
  std::vector<Vec> text;                // f_t
  std::vector<Vec> skeleton;            // f_s
  std::vector<Vec> text_from_skeleton;  // g^s_t: skeleton latent decoded to text space
  std::vector<Vec> skeleton_from_text;  // g^t_s: text latent decoded to skeleton space
  std::vector<int> labels;
  std::vector<std::size_t> negatives;

  std::size_t size() const { return labels.size(); }
  void validate() const;
};

struct AlignmentGradients {
  std::vector<Vec> text;
  std::vector<Vec> skeleton;
  std::vector<Vec> text_from_skeleton;
  std::vector<Vec> skeleton_from_text;
};

struct LossValue {
  double value = 0.0;
  AlignmentGradients grads;
};

// Scalar per-pair forms. d_pos / d_neg are squared distances except for the
// softmax-ratio variant, which uses plain Euclidean distances.

/// 1 / (1 + exp(a / lambda)); l(a) + l(-a) = 1.
double calibrated_ell(double a, double lambda);
double calibrated_pair(double d_pos, double d_neg, double lambda);
double hinge_pair(double d_pos, double d_neg, double margin);
double log_sigmoid_pair(double d_pos, double d_neg, double lambda);
double softmax_ratio_pair(double dist_pos, double dist_neg);
double ratio_hinge_pair(double d_pos, double d_neg, double margin);

/// (lambda / B) sum_i l(d_neg - d_pos) over both directions.
LossValue calibrated_alignment(const AlignmentBatch& batch, double lambda);

/// Averages l over every cross-label pair instead of one sampled negative.
/// `negatives` is ignored.
LossValue calibrated_alignment_all_pairs(const AlignmentBatch& batch, double lambda);

LossValue triplet_t1(const AlignmentBatch& batch, double margin);
LossValue triplet_t2(const AlignmentBatch& batch, double lambda);
LossValue triplet_t3(const AlignmentBatch& batch, double lambda);
LossValue triplet_t4(const AlignmentBatch& batch, double margin);

LossValue alignment_loss(AlignmentLoss kind, const AlignmentBatch& batch, const LossConfig& config);

/// KL(N(mu, diag exp(logvar)) || N(0, I)).
double kl_diag_gaussian(std::span<const double> mean, std::span<const double> log_variance);

struct KlGradient {
  double value = 0.0;
  Vec mean;
  Vec log_variance;
};
KlGradient kl_diag_gaussian_with_grad(std::span<const double> mean, std::span<const double> log_variance);

struct ElboValue {
  double value = 0.0;           // reconstruction + beta * kl
  double reconstruction = 0.0;  // batch mean of squared error summed over features
  double kl = 0.0;              // batch mean KL
  std::vector<Vec> grad_features;
  std::vector<Vec> grad_reconstructions;
  std::vector<Vec> grad_mean;
  std::vector<Vec> grad_log_variance;
};

/// Loss-to-minimise form of the ELBO for one modality with a unit-variance
/// Gaussian likelihood.
ElboValue elbo(const std::vector<Vec>& features, const std::vector<Vec>& reconstructions,
               const std::vector<LatentGaussian>& latents, double beta);

double total_objective(double vae_loss, double align_loss, double alpha);

/// For each item, a uniformly drawn index of an item with a different label.
std::vector<std::size_t> sample_negatives(std::span<const int> labels, numkit::Rng& rng);

}  // namespace fsvae::losses
