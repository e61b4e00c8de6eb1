#include "fsvae/crossvae.hpp"

#include <cmath>

namespace fsvae::crossvae {

using numkit::Mlp;
using numkit::MlpCache;

namespace {

std::vector<std::size_t> encoder_dims(std::size_t in, const VaeArchitecture& a) {
  return {in, a.hidden_dim, a.hidden_dim, 2 * a.latent_dim};
}

std::vector<std::size_t> decoder_dims(std::size_t out, const VaeArchitecture& a) {
  return {a.latent_dim, a.hidden_dim, a.hidden_dim, out};
}

void check_arch(const VaeArchitecture& a) {
  if (a.skeleton_dim == 0 || a.text_dim == 0 || a.latent_dim == 0 || a.hidden_dim == 0) {
    throw numkit::DimensionError("VAE architecture dimensions must be positive");
  }
}

LatentGaussian split_latent(const Vec& out, std::size_t latent) {
  LatentGaussian g;
  g.mean.assign(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(latent));
  g.log_variance.assign(out.begin() + static_cast<std::ptrdiff_t>(latent), out.end());
  return g;
}

}  // namespace

VaeParams VaeParams::zeros(const VaeArchitecture& arch) {
  check_arch(arch);
  VaeParams p;
  p.skeleton_encoder = Mlp(encoder_dims(arch.skeleton_dim, arch));
  p.text_encoder = Mlp(encoder_dims(arch.text_dim, arch));
  p.skeleton_decoder = Mlp(decoder_dims(arch.skeleton_dim, arch));
  p.text_decoder = Mlp(decoder_dims(arch.text_dim, arch));
  p.latent_dim = arch.latent_dim;
  return p;
}

VaeParams VaeParams::random(const VaeArchitecture& arch, numkit::Rng& rng) {
  check_arch(arch);
  VaeParams p;
  p.skeleton_encoder = Mlp::random(encoder_dims(arch.skeleton_dim, arch), rng);
  p.text_encoder = Mlp::random(encoder_dims(arch.text_dim, arch), rng);
  p.skeleton_decoder = Mlp::random(decoder_dims(arch.skeleton_dim, arch), rng);
  p.text_decoder = Mlp::random(decoder_dims(arch.text_dim, arch), rng);
  p.latent_dim = arch.latent_dim;
  return p;
}

std::size_t VaeParams::num_params() const {
  std::size_t n = 0;
  for (const Mlp* m : networks()) n += m->params().size();
  return n;
}

Vec VaeParams::flatten() const {
  Vec flat;
  flat.reserve(num_params());
  for (const Mlp* m : networks()) flat.insert(flat.end(), m->params().begin(), m->params().end());
  return flat;
}

void VaeParams::assign(std::span<const double> flat) {
  if (flat.size() != num_params()) throw numkit::DimensionError("VaeParams::assign: size mismatch");
  std::size_t off = 0;
  for (Mlp* m : networks()) {
    auto dst = m->mutable_params();
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + dst.size()), dst.begin());
    off += dst.size();
  }
}

VaeGradients VaeGradients::zeros_like(const VaeParams& params) {
  VaeGradients g;
  const auto nets = params.networks();
  for (std::size_t k = 0; k < 4; ++k) g.networks[k].assign(nets[k]->params().size(), 0.0);
  return g;
}

Vec VaeGradients::flatten() const {
  Vec flat;
  for (const Vec& v : networks) flat.insert(flat.end(), v.begin(), v.end());
  return flat;
}

LatentGaussian encode(const VaeParams& params, Modality modality, std::span<const double> features) {
  const Mlp& enc = modality == Modality::skeleton ? params.skeleton_encoder : params.text_encoder;
  return split_latent(numkit::mlp_forward(enc, features).output, params.latent_dim);
}

Vec decode(const VaeParams& params, Modality target, std::span<const double> z) {
  const Mlp& dec = target == Modality::skeleton ? params.skeleton_decoder : params.text_decoder;
  return numkit::mlp_forward(dec, z).output;
}

Vec reparameterize_with_noise(const LatentGaussian& latent, std::span<const double> eps) {
  if (latent.mean.size() != latent.log_variance.size() || eps.size() != latent.mean.size()) {
    throw numkit::DimensionError("reparameterize: dimension mismatch");
  }
  Vec z(latent.mean.size());
  for (std::size_t k = 0; k < z.size(); ++k) z[k] = latent.mean[k] + std::exp(0.5 * latent.log_variance[k]) * eps[k];
  return z;
}

Vec reparameterize(const LatentGaussian& latent, numkit::Rng& rng) {
  return reparameterize_with_noise(latent, rng.normal_vector(latent.mean.size()));
}

CrossFeatures cross_reconstruct(const VaeParams& params, std::span<const double> z_skeleton,
                                std::span<const double> z_text) {
  if (z_skeleton.size() != params.latent_dim || z_text.size() != params.latent_dim) {
    throw numkit::DimensionError("cross_reconstruct: latent dimension mismatch");
  }
  return {decode(params, Modality::text, z_skeleton), decode(params, Modality::skeleton, z_text)};
}

StepNoise StepNoise::draw(std::size_t batch, std::size_t latent_dim, numkit::Rng& rng) {
  StepNoise n;
  n.skeleton.reserve(batch);
  n.text.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    n.skeleton.push_back(rng.normal_vector(latent_dim));
    n.text.push_back(rng.normal_vector(latent_dim));
  }
  return n;
}

StepNoise StepNoise::zeros(std::size_t batch, std::size_t latent_dim) {
  StepNoise n;
  n.skeleton.assign(batch, Vec(latent_dim, 0.0));
  n.text.assign(batch, Vec(latent_dim, 0.0));
  return n;
}

namespace {

// Forward state of one modality for one item.
struct ModalityPass {
  MlpCache encoder;
  LatentGaussian latent;
  Vec z;
  MlpCache own_decoder;     // reconstruction from z
  MlpCache cross_decoder;   // other modality's decoder applied to the mean
  Vec reconstruction;
  Vec cross;
};

ModalityPass forward_modality(const Mlp& encoder, const Mlp& own_decoder, const Mlp& cross_decoder,
                              std::span<const double> features, std::span<const double> eps, std::size_t latent) {
  ModalityPass p;
  auto enc = numkit::mlp_forward(encoder, features);
  p.latent = split_latent(enc.output, latent);
  p.encoder = std::move(enc.cache);
  p.z = reparameterize_with_noise(p.latent, eps);
  auto rec = numkit::mlp_forward(own_decoder, p.z);
  p.reconstruction = std::move(rec.output);
  p.own_decoder = std::move(rec.cache);
  auto cross = numkit::mlp_forward(cross_decoder, p.latent.mean);
  p.cross = std::move(cross.output);
  p.cross_decoder = std::move(cross.cache);
  return p;
}

// Backprop one modality. Returns dL/d(features) through the encoder.
Vec backward_modality(const Mlp& encoder, const Mlp& own_decoder, const Mlp& cross_decoder, const ModalityPass& p,
                      std::span<const double> eps, std::span<const double> grad_reconstruction,
                      std::span<const double> grad_kl_mean, std::span<const double> grad_kl_logvar,
                      const Vec* grad_cross, Vec& g_encoder, Vec& g_own_decoder, Vec& g_cross_decoder) {
  const std::size_t latent = p.latent.mean.size();
  const Vec grad_z = numkit::mlp_backward_accumulate(own_decoder, p.own_decoder, grad_reconstruction, g_own_decoder);
  Vec grad_enc_out(2 * latent);
  for (std::size_t k = 0; k < latent; ++k) {
    const double sd = std::exp(0.5 * p.latent.log_variance[k]);
    grad_enc_out[k] = grad_z[k] + grad_kl_mean[k];
    grad_enc_out[latent + k] = grad_z[k] * eps[k] * 0.5 * sd + grad_kl_logvar[k];
  }
  if (grad_cross != nullptr) {
    const Vec grad_mean = numkit::mlp_backward_accumulate(cross_decoder, p.cross_decoder, *grad_cross, g_cross_decoder);
    for (std::size_t k = 0; k < latent; ++k) grad_enc_out[k] += grad_mean[k];
  }
  return numkit::mlp_backward_accumulate(encoder, p.encoder, grad_enc_out, g_encoder);
}

}  // namespace

ObjectiveResult stage2_objective(const VaeParams& params, const std::vector<TrainItem>& batch,
                                 const std::vector<std::size_t>& negatives, const StepNoise& noise,
                                 const losses::LossConfig& config, losses::AlignmentLoss kind) {
  config.validate();
  const std::size_t b = batch.size();
  if (b == 0) throw std::invalid_argument("stage2 objective: empty batch");
  if (noise.skeleton.size() != b || noise.text.size() != b) {
    throw numkit::DimensionError("stage2 objective: noise does not match batch size");
  }

  std::vector<ModalityPass> skel(b);
  std::vector<ModalityPass> text(b);
  for (std::size_t i = 0; i < b; ++i) {
    skel[i] = forward_modality(params.skeleton_encoder, params.skeleton_decoder, params.text_decoder,
                               batch[i].skeleton, noise.skeleton[i], params.latent_dim);
    text[i] = forward_modality(params.text_encoder, params.text_decoder, params.skeleton_decoder, batch[i].text,
                               noise.text[i], params.latent_dim);
  }

  auto collect = [&](const std::vector<ModalityPass>& passes, auto member) {
    std::vector<std::decay_t<decltype(passes[0].*member)>> out;
    out.reserve(passes.size());
    for (const auto& p : passes) out.push_back(p.*member);
    return out;
  };

  std::vector<Vec> f_s(b);
  std::vector<Vec> f_t(b);
  std::vector<int> labels(b);
  for (std::size_t i = 0; i < b; ++i) {
    f_s[i] = batch[i].skeleton;
    f_t[i] = batch[i].text;
    labels[i] = batch[i].label;
  }

  const auto elbo_s = losses::elbo(f_s, collect(skel, &ModalityPass::reconstruction),
                                   collect(skel, &ModalityPass::latent), config.beta);
  const auto elbo_t = losses::elbo(f_t, collect(text, &ModalityPass::reconstruction),
                                   collect(text, &ModalityPass::latent), config.beta);

  losses::AlignmentBatch align_batch;
  align_batch.text = f_t;
  align_batch.skeleton = f_s;
  align_batch.text_from_skeleton = collect(skel, &ModalityPass::cross);
  align_batch.skeleton_from_text = collect(text, &ModalityPass::cross);
  align_batch.labels = labels;
  align_batch.negatives = negatives;
  losses::LossValue align = losses::alignment_loss(kind, align_batch, config);

  ObjectiveResult result;
  auto& L = result.losses;
  L.reconstruction_skeleton = elbo_s.reconstruction;
  L.reconstruction_text = elbo_t.reconstruction;
  L.kl_skeleton = elbo_s.kl;
  L.kl_text = elbo_t.kl;
  L.vae_skeleton = elbo_s.value;
  L.vae_text = elbo_t.value;
  L.alignment = align.value;
  L.total = losses::total_objective(elbo_s.value + elbo_t.value, align.value, config.alpha);

  const bool use_align = config.alpha != 0.0;
  if (use_align) {
    auto scale = [&](std::vector<Vec>& vs) {
      for (Vec& v : vs) {
        for (double& x : v) x *= config.alpha;
      }
    };
    scale(align.grads.skeleton);
    scale(align.grads.text_from_skeleton);
    scale(align.grads.skeleton_from_text);
  }

  result.grads = VaeGradients::zeros_like(params);
  auto& g = result.grads.networks;
  result.skeleton_feature_grads.resize(b);
  result.alignment_skeleton_feature_grads.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    const Vec* cross_s = use_align ? &align.grads.text_from_skeleton[i] : nullptr;
    const Vec* cross_t = use_align ? &align.grads.skeleton_from_text[i] : nullptr;
    Vec df_s = backward_modality(params.skeleton_encoder, params.skeleton_decoder, params.text_decoder, skel[i],
                                 noise.skeleton[i], elbo_s.grad_reconstructions[i], elbo_s.grad_mean[i],
                                 elbo_s.grad_log_variance[i], cross_s, g[0], g[2], g[3]);
    backward_modality(params.text_encoder, params.text_decoder, params.skeleton_decoder, text[i], noise.text[i],
                      elbo_t.grad_reconstructions[i], elbo_t.grad_mean[i], elbo_t.grad_log_variance[i], cross_t, g[1],
                      g[3], g[2]);
    numkit::axpy(1.0, elbo_s.grad_features[i], df_s);
    if (use_align) {
      numkit::axpy(1.0, align.grads.skeleton[i], df_s);
      result.alignment_skeleton_feature_grads[i] = align.grads.skeleton[i];
    } else {
      result.alignment_skeleton_feature_grads[i].assign(f_s[i].size(), 0.0);
    }
    result.skeleton_feature_grads[i] = std::move(df_s);
  }
  return result;
}

VaeOptimizer::VaeOptimizer(const VaeParams& params, numkit::AdamConfig config) {
  const auto nets = params.networks();
  for (std::size_t k = 0; k < 4; ++k) states_[k] = numkit::AdamState(nets[k]->params().size(), config);
}

void VaeOptimizer::step(VaeParams& params, const VaeGradients& grads) {
  auto nets = params.networks();
  for (std::size_t k = 0; k < 4; ++k) {
    if (!numkit::all_finite(grads.networks[k])) throw std::domain_error("VaeOptimizer: non-finite gradient");
  }
  for (std::size_t k = 0; k < 4; ++k) states_[k].step(nets[k]->mutable_params(), grads.networks[k]);
}

LossBreakdown train_step(VaeParams& params, const std::vector<TrainItem>& batch, const losses::LossConfig& config,
                         losses::AlignmentLoss kind, numkit::Rng& rng, VaeOptimizer& optimizer) {
  std::vector<int> labels(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) labels[i] = batch[i].label;
  const auto negatives = losses::sample_negatives(labels, rng);
  const auto noise = StepNoise::draw(batch.size(), params.latent_dim, rng);
  const auto result = stage2_objective(params, batch, negatives, noise, config, kind);
  optimizer.step(params, result.grads);
  return result.losses;
}

std::vector<Vec> sample_class_latents(const VaeParams& params, std::span<const double> text_feature, std::size_t n,
                                      numkit::Rng& rng) {
  if (n == 0) throw std::invalid_argument("sample_class_latents: n must be positive");
  const LatentGaussian latent = encode(params, Modality::text, text_feature);
  std::vector<Vec> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(reparameterize(latent, rng));
  return out;
}

}  // namespace fsvae::crossvae
