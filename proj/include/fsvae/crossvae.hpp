#pragma once

// Twin skeleton/text VAEs sharing one latent space. Cross-reconstructions
// (one modality's latent decoded by the other modality's decoder) feed the
// alignment loss; own-modality reconstructions feed the ELBO.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "fsvae/losses.hpp"
#include "fsvae/numkit.hpp"

namespace fsvae::crossvae {

using losses::LatentGaussian;
using numkit::Vec;

enum class Modality { skeleton, text };

struct VaeArchitecture {
  std::size_t skeleton_dim = 0;
  std::size_t text_dim = 0;
  std::size_t latent_dim = 16;
  std::size_t hidden_dim = 128;  // two tanh hidden layers of this width
};

/// Network order everywhere: skeleton encoder, text encoder, skeleton
/// decoder, text decoder. Encoders emit [mean, log-variance].
struct VaeParams {
  numkit::Mlp skeleton_encoder;
  numkit::Mlp text_encoder;
  numkit::Mlp skeleton_decoder;
  numkit::Mlp text_decoder;
  std::size_t latent_dim = 0;

  static VaeParams zeros(const VaeArchitecture& arch);
  static VaeParams random(const VaeArchitecture& arch, numkit::Rng& rng);

  std::array<const numkit::Mlp*, 4> networks() const {
    return {&skeleton_encoder, &text_encoder, &skeleton_decoder, &text_decoder};
  }
  std::array<numkit::Mlp*, 4> networks() {
    return {&skeleton_encoder, &text_encoder, &skeleton_decoder, &text_decoder};
  }

  std::size_t skeleton_dim() const { return skeleton_encoder.input_dim(); }
  std::size_t text_dim() const { return text_encoder.input_dim(); }
  std::size_t num_params() const;
  Vec flatten() const;
  void assign(std::span<const double> flat);

  friend bool operator==(const VaeParams&, const VaeParams&) = default;
};

struct VaeGradients {
  std::array<Vec, 4> networks;

  static VaeGradients zeros_like(const VaeParams& params);
  Vec flatten() const;
};

LatentGaussian encode(const VaeParams& params, Modality modality, std::span<const double> features);
Vec decode(const VaeParams& params, Modality target, std::span<const double> z);

/// z = mean + exp(log_variance / 2) * eps, eps ~ N(0, I).
Vec reparameterize(const LatentGaussian& latent, numkit::Rng& rng);
Vec reparameterize_with_noise(const LatentGaussian& latent, std::span<const double> eps);

struct CrossFeatures {
  Vec text_from_skeleton;  // g^s_t
  Vec skeleton_from_text;  // g^t_s
};

CrossFeatures cross_reconstruct(const VaeParams& params, std::span<const double> z_skeleton,
                                std::span<const double> z_text);

struct TrainItem {
  Vec skeleton;
  Vec text;
  int label = 0;
};

struct LossBreakdown {
  double total = 0.0;
  double vae_skeleton = 0.0;
  double vae_text = 0.0;
  double reconstruction_skeleton = 0.0;
  double reconstruction_text = 0.0;
  double kl_skeleton = 0.0;
  double kl_text = 0.0;
  double alignment = 0.0;
};

/// Reparameterisation noise for one batch, one vector per item.
struct StepNoise {
  std::vector<Vec> skeleton;
  std::vector<Vec> text;

  static StepNoise draw(std::size_t batch, std::size_t latent_dim, numkit::Rng& rng);
  static StepNoise zeros(std::size_t batch, std::size_t latent_dim);
};

struct ObjectiveResult {
  LossBreakdown losses;
  VaeGradients grads;
  std::vector<Vec> skeleton_feature_grads;  // dL/df_s per item, for upstream feature layers
  std::vector<Vec> alignment_skeleton_feature_grads;  // alignment share of the above (already times alpha)
};

/// L_VAE^s + L_VAE^t + alpha * L_align with the noise held fixed. The
/// alignment term uses posterior means for the cross-reconstructions.
ObjectiveResult stage2_objective(const VaeParams& params, const std::vector<TrainItem>& batch,
                                 const std::vector<std::size_t>& negatives, const StepNoise& noise,
                                 const losses::LossConfig& config, losses::AlignmentLoss kind);

class VaeOptimizer {
 public:
  VaeOptimizer() = default;
  VaeOptimizer(const VaeParams& params, numkit::AdamConfig config);

  void step(VaeParams& params, const VaeGradients& grads);
  std::uint64_t steps() const { return states_[0].steps(); }

 private:
  std::array<numkit::AdamState, 4> states_;
};

/// Samples negatives and noise from `rng`, evaluates the objective and takes
/// one Adam step. Throws NoNegativeError for a single-class batch.
LossBreakdown train_step(VaeParams& params, const std::vector<TrainItem>& batch, const losses::LossConfig& config,
                         losses::AlignmentLoss kind, numkit::Rng& rng, VaeOptimizer& optimizer);

/// n draws from the text-encoder posterior of one fused class description.
std::vector<Vec> sample_class_latents(const VaeParams& params, std::span<const double> text_feature, std::size_t n,
                                      numkit::Rng& rng);

}  // namespace fsvae::crossvae
