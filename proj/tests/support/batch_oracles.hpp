#pragma once

// Test-side helpers: random alignment batches and flat-vector views of loss
// functions for finite-difference checks.

#include <array>
#include <functional>

#include "fsvae/crossvae.hpp"
#include "fsvae/losses.hpp"
#include "fsvae/numkit.hpp"

namespace testsupport {

using fsvae::numkit::Rng;
using fsvae::numkit::Vec;

inline fsvae::losses::AlignmentBatch random_batch(Rng& rng, std::size_t b, std::size_t text_dim,
                                                  std::size_t skel_dim, int classes, double scale = 1.0) {
  fsvae::losses::AlignmentBatch batch;
  for (std::size_t i = 0; i < b; ++i) {
    batch.labels.push_back(static_cast<int>(i % static_cast<std::size_t>(classes)));
    batch.text.push_back(rng.normal_vector(text_dim, scale));
    batch.text_from_skeleton.push_back(rng.normal_vector(text_dim, scale));
    batch.skeleton.push_back(rng.normal_vector(skel_dim, scale));
    batch.skeleton_from_text.push_back(rng.normal_vector(skel_dim, scale));
  }
  batch.negatives = fsvae::losses::sample_negatives(batch.labels, rng);
  return batch;
}

inline std::array<std::vector<Vec>*, 4> roles(fsvae::losses::AlignmentBatch& b) {
  return {&b.text, &b.skeleton, &b.text_from_skeleton, &b.skeleton_from_text};
}

inline std::array<const std::vector<Vec>*, 4> roles(const fsvae::losses::AlignmentGradients& g) {
  return {&g.text, &g.skeleton, &g.text_from_skeleton, &g.skeleton_from_text};
}

inline Vec flatten_batch(fsvae::losses::AlignmentBatch batch) {
  Vec out;
  for (auto* r : roles(batch))
    for (const auto& v : *r) out.insert(out.end(), v.begin(), v.end());
  return out;
}

using BatchLoss = std::function<fsvae::losses::LossValue(const fsvae::losses::AlignmentBatch&)>;

/// Objective over every feature entry of every role of `shape`.
inline fsvae::numkit::Objective batch_objective(const fsvae::losses::AlignmentBatch& shape, BatchLoss loss) {
  return [shape, loss](std::span<const double> x, Vec* grad) {
    auto b = shape;
    std::size_t k = 0;
    for (auto* r : roles(b))
      for (auto& v : *r)
        for (double& e : v) e = x[k++];
    const auto lv = loss(b);
    if (grad) {
      grad->clear();
      for (const auto* r : roles(lv.grads))
        for (const auto& v : *r) grad->insert(grad->end(), v.begin(), v.end());
    }
    return lv.value;
  };
}

/// Stage-2 objective as a function of the flattened VAE parameters, with
/// negatives and noise frozen.
inline fsvae::numkit::Objective stage2_param_objective(const fsvae::crossvae::VaeParams& base,
                                                       const std::vector<fsvae::crossvae::TrainItem>& batch,
                                                       const std::vector<std::size_t>& negatives,
                                                       const fsvae::crossvae::StepNoise& noise,
                                                       const fsvae::losses::LossConfig& cfg,
                                                       fsvae::losses::AlignmentLoss kind) {
  return [=](std::span<const double> x, Vec* grad) {
    auto p = base;
    p.assign(x);
    const auto r = fsvae::crossvae::stage2_objective(p, batch, negatives, noise, cfg, kind);
    if (grad) *grad = r.grads.flatten();
    return r.losses.total;
  };
}

/// Same objective as a function of the skeleton input features.
inline fsvae::numkit::Objective stage2_feature_objective(const fsvae::crossvae::VaeParams& params,
                                                         const std::vector<fsvae::crossvae::TrainItem>& batch,
                                                         const std::vector<std::size_t>& negatives,
                                                         const fsvae::crossvae::StepNoise& noise,
                                                         const fsvae::losses::LossConfig& cfg,
                                                         fsvae::losses::AlignmentLoss kind) {
  return [=](std::span<const double> x, Vec* grad) {
    auto items = batch;
    std::size_t k = 0;
    for (auto& it : items)
      for (double& e : it.skeleton) e = x[k++];
    const auto r = fsvae::crossvae::stage2_objective(params, items, negatives, noise, cfg, kind);
    if (grad) {
      grad->clear();
      for (const auto& g : r.skeleton_feature_grads) grad->insert(grad->end(), g.begin(), g.end());
    }
    return r.losses.total;
  };
}

}  // namespace testsupport
