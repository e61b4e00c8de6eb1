#include "fsvae/losses.hpp"

#include <cmath>
#include <functional>

namespace fsvae::losses {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

// Logistic sigmoid 1 / (1 + exp(-x)), evaluated without overflow.
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct PairEval {
  double value = 0.0;
  double d_pos = 0.0;  // d value / d distance_pos
  double d_neg = 0.0;  // d value / d distance_neg
};

enum class Metric { squared, euclidean };

using PairFn = std::function<PairEval(double, double)>;

void init_grads(const AlignmentBatch& batch, AlignmentGradients& g) {
  auto zeros_like = [](const std::vector<Vec>& src) {
    std::vector<Vec> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) out[i].assign(src[i].size(), 0.0);
    return out;
  };
  g.text = zeros_like(batch.text);
  g.skeleton = zeros_like(batch.skeleton);
  g.text_from_skeleton = zeros_like(batch.text_from_skeleton);
  g.skeleton_from_text = zeros_like(batch.skeleton_from_text);
}

struct Distance {
  double value;
  double scale;  // d value / d (anchor - x) = scale * (anchor - x)
};

Distance distance(std::span<const double> anchor, std::span<const double> x, Metric metric) {
  const double sq = numkit::squared_distance(anchor, x);
  if (metric == Metric::squared) return {sq, 2.0};
  const double d = std::sqrt(sq);
  return {d, d > 0.0 ? 1.0 / d : 0.0};
}

// d(loss)/d(distance) * d(distance)/d(anchor, x), accumulated.
void push_distance_grad(double coeff, const Distance& dist, std::span<const double> anchor, std::span<const double> x,
                        std::span<double> g_anchor, std::span<double> g_x) {
  const double c = coeff * dist.scale;
  if (c == 0.0) return;
  for (std::size_t k = 0; k < anchor.size(); ++k) {
    const double diff = anchor[k] - x[k];
    g_anchor[k] += c * diff;
    g_x[k] -= c * diff;
  }
}

// Adds one direction of an alignment loss (anchor set vs candidate set).
double accumulate_direction(const std::vector<Vec>& anchors, const std::vector<Vec>& candidates,
                            const std::vector<std::size_t>& negatives, Metric metric, const PairFn& pair, double scale,
                            std::vector<Vec>& g_anchors, std::vector<Vec>& g_candidates) {
  double total = 0.0;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    const std::size_t n = negatives[i];
    const Distance pos = distance(anchors[i], candidates[i], metric);
    const Distance neg = distance(anchors[i], candidates[n], metric);
    const PairEval e = pair(pos.value, neg.value);
    total += scale * e.value;
    push_distance_grad(scale * e.d_pos, pos, anchors[i], candidates[i], g_anchors[i], g_candidates[i]);
    push_distance_grad(scale * e.d_neg, neg, anchors[i], candidates[n], g_anchors[i], g_candidates[n]);
  }
  return total;
}

LossValue evaluate(const AlignmentBatch& batch, Metric metric, const PairFn& pair, double scale_numerator) {
  batch.validate();
  LossValue out;
  init_grads(batch, out.grads);
  const double scale = scale_numerator / static_cast<double>(batch.size());
  out.value += accumulate_direction(batch.text, batch.text_from_skeleton, batch.negatives, metric, pair, scale,
                                    out.grads.text, out.grads.text_from_skeleton);
  out.value += accumulate_direction(batch.skeleton, batch.skeleton_from_text, batch.negatives, metric, pair, scale,
                                    out.grads.skeleton, out.grads.skeleton_from_text);
  return out;
}

PairEval calibrated_eval(double d_pos, double d_neg, double lambda) {
  const double l = calibrated_ell(d_neg - d_pos, lambda);
  const double dl_da = -l * (1.0 - l) / lambda;  // a = d_neg - d_pos
  return {l, -dl_da, dl_da};
}

}  // namespace

void LossConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw std::invalid_argument("loss: lambda must be > 0");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("loss: alpha must be >= 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw std::invalid_argument("loss: beta must be >= 0");
  if (!(margin >= 0.0) || !std::isfinite(margin)) throw std::invalid_argument("loss: margin must be >= 0");
}

const char* to_string(AlignmentLoss kind) {
  switch (kind) {
    case AlignmentLoss::calibrated:
      return "calibrated";
    case AlignmentLoss::triplet_hinge:
      return "t1";
    case AlignmentLoss::triplet_log_sigmoid:
      return "t2";
    case AlignmentLoss::triplet_softmax_ratio:
      return "t3";
    case AlignmentLoss::triplet_ratio_hinge:
      return "t4";
  }
  return "?";
}

AlignmentLoss parse_alignment_loss(const std::string& text) {
  if (text == "calibrated") return AlignmentLoss::calibrated;
  if (text == "t1") return AlignmentLoss::triplet_hinge;
  if (text == "t2") return AlignmentLoss::triplet_log_sigmoid;
  if (text == "t3") return AlignmentLoss::triplet_softmax_ratio;
  if (text == "t4") return AlignmentLoss::triplet_ratio_hinge;
  throw std::invalid_argument("unknown alignment loss '" + text + "' (expected calibrated, t1, t2, t3 or t4)");
}

void AlignmentBatch::validate() const {
  const std::size_t b = labels.size();
  if (b == 0) throw std::invalid_argument("alignment batch is empty");
  if (text.size() != b || skeleton.size() != b || text_from_skeleton.size() != b || skeleton_from_text.size() != b) {
    throw numkit::DimensionError("alignment batch: role arrays differ in length");
  }
  if (negatives.size() != b) throw NoNegativeError("alignment batch: every item needs a negative");
  for (std::size_t i = 0; i < b; ++i) {
    if (text[i].size() != text_from_skeleton[i].size() || text[i].size() != text[0].size()) {
      throw numkit::DimensionError("alignment batch: text-space vectors differ in dimension");
    }
    if (skeleton[i].size() != skeleton_from_text[i].size() || skeleton[i].size() != skeleton[0].size()) {
      throw numkit::DimensionError("alignment batch: skeleton-space vectors differ in dimension");
    }
    if (negatives[i] >= b) throw NoNegativeError("alignment batch: negative index out of range");
    if (labels[negatives[i]] == labels[i]) {
      throw NoNegativeError("alignment batch: item " + std::to_string(i) + " has a same-label negative");
    }
    if (!numkit::all_finite(text[i]) || !numkit::all_finite(skeleton[i]) ||
        !numkit::all_finite(text_from_skeleton[i]) || !numkit::all_finite(skeleton_from_text[i])) {
      throw std::domain_error("alignment batch: non-finite feature");
    }
  }
}

double calibrated_ell(double a, double lambda) { return sigmoid(-a / lambda); }

double calibrated_pair(double d_pos, double d_neg, double lambda) { return calibrated_ell(d_neg - d_pos, lambda); }

double hinge_pair(double d_pos, double d_neg, double margin) { return std::max(d_pos - d_neg + margin, 0.0); }

double log_sigmoid_pair(double d_pos, double d_neg, double lambda) { return -softplus((d_neg - d_pos) / lambda); }

double softmax_ratio_pair(double dist_pos, double dist_neg) {
  const double r = sigmoid(dist_pos - dist_neg);
  return r * r;
}

double ratio_hinge_pair(double d_pos, double d_neg, double margin) {
  const double denom = d_pos + margin;
  if (!(denom > 0.0)) throw std::domain_error("ratio hinge: d_pos + margin must be positive");
  return std::max(1.0 - d_neg / denom, 0.0);
}

LossValue calibrated_alignment(const AlignmentBatch& batch, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("calibrated alignment: lambda must be > 0");
  return evaluate(
      batch, Metric::squared, [lambda](double dp, double dn) { return calibrated_eval(dp, dn, lambda); }, lambda);
}

LossValue calibrated_alignment_all_pairs(const AlignmentBatch& batch, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("calibrated alignment: lambda must be > 0");
  const std::size_t b = batch.size();
  if (b == 0) throw std::invalid_argument("alignment batch is empty");
  LossValue out;
  init_grads(batch, out.grads);
  const double scale = lambda / static_cast<double>(b);

  auto direction = [&](const std::vector<Vec>& anchors, const std::vector<Vec>& cands, std::vector<Vec>& ga,
                       std::vector<Vec>& gc) {
    for (std::size_t i = 0; i < b; ++i) {
      std::size_t count = 0;
      for (std::size_t j = 0; j < b; ++j) count += batch.labels[j] != batch.labels[i];
      if (count == 0) throw NoNegativeError("no valid negative for item " + std::to_string(i));
      const double w = scale / static_cast<double>(count);
      const Distance pos = distance(anchors[i], cands[i], Metric::squared);
      for (std::size_t j = 0; j < b; ++j) {
        if (batch.labels[j] == batch.labels[i]) continue;
        const Distance neg = distance(anchors[i], cands[j], Metric::squared);
        const PairEval e = calibrated_eval(pos.value, neg.value, lambda);
        out.value += w * e.value;
        push_distance_grad(w * e.d_pos, pos, anchors[i], cands[i], ga[i], gc[i]);
        push_distance_grad(w * e.d_neg, neg, anchors[i], cands[j], ga[i], gc[j]);
      }
    }
  };
  direction(batch.text, batch.text_from_skeleton, out.grads.text, out.grads.text_from_skeleton);
  direction(batch.skeleton, batch.skeleton_from_text, out.grads.skeleton, out.grads.skeleton_from_text);
  return out;
}

LossValue triplet_t1(const AlignmentBatch& batch, double margin) {
  return evaluate(
      batch, Metric::squared,
      [margin](double dp, double dn) {
        const double v = dp - dn + margin;
        if (v <= 0.0) return PairEval{0.0, 0.0, 0.0};
        return PairEval{v, 1.0, -1.0};
      },
      1.0);
}

LossValue triplet_t2(const AlignmentBatch& batch, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("t2: lambda must be > 0");
  return evaluate(
      batch, Metric::squared,
      [lambda](double dp, double dn) {
        const double a = (dn - dp) / lambda;
        // d/da [-softplus(a)] = -sigmoid(a)
        const double s = sigmoid(a);
        return PairEval{-softplus(a), s / lambda, -s / lambda};
      },
      1.0);
}

LossValue triplet_t3(const AlignmentBatch& batch, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("t3: lambda must be > 0");
  return evaluate(
      batch, Metric::euclidean,
      [](double dp, double dn) {
        const double r = sigmoid(dp - dn);
        const double dr = r * (1.0 - r);
        return PairEval{r * r, 2.0 * r * dr, -2.0 * r * dr};
      },
      lambda);
}

LossValue triplet_t4(const AlignmentBatch& batch, double margin) {
  return evaluate(
      batch, Metric::squared,
      [margin](double dp, double dn) {
        const double denom = dp + margin;
        if (!(denom > 0.0)) throw std::domain_error("t4: d_pos + margin must be positive");
        const double v = 1.0 - dn / denom;
        if (v <= 0.0) return PairEval{0.0, 0.0, 0.0};
        return PairEval{v, dn / (denom * denom), -1.0 / denom};
      },
      1.0);
}

LossValue alignment_loss(AlignmentLoss kind, const AlignmentBatch& batch, const LossConfig& config) {
  switch (kind) {
    case AlignmentLoss::calibrated:
      return calibrated_alignment(batch, config.temperature);
    case AlignmentLoss::triplet_hinge:
      return triplet_t1(batch, config.margin);
    case AlignmentLoss::triplet_log_sigmoid:
      return triplet_t2(batch, config.temperature);
    case AlignmentLoss::triplet_softmax_ratio:
      return triplet_t3(batch, config.temperature);
    case AlignmentLoss::triplet_ratio_hinge:
      return triplet_t4(batch, config.margin);
  }
  throw std::logic_error("unhandled alignment loss");
}

double kl_diag_gaussian(std::span<const double> mean, std::span<const double> log_variance) {
  if (mean.size() != log_variance.size()) throw numkit::DimensionError("kl: mean/log-variance size mismatch");
  double kl = 0.0;
  for (std::size_t k = 0; k < mean.size(); ++k) {
    kl += mean[k] * mean[k] + std::exp(log_variance[k]) - 1.0 - log_variance[k];
  }
  return 0.5 * kl;
}

KlGradient kl_diag_gaussian_with_grad(std::span<const double> mean, std::span<const double> log_variance) {
  KlGradient g;
  g.value = kl_diag_gaussian(mean, log_variance);
  g.mean.assign(mean.begin(), mean.end());
  g.log_variance.resize(log_variance.size());
  for (std::size_t k = 0; k < log_variance.size(); ++k) g.log_variance[k] = 0.5 * (std::exp(log_variance[k]) - 1.0);
  return g;
}

ElboValue elbo(const std::vector<Vec>& features, const std::vector<Vec>& reconstructions,
               const std::vector<LatentGaussian>& latents, double beta) {
  const std::size_t b = features.size();
  if (b == 0) throw std::invalid_argument("elbo: empty batch");
  if (reconstructions.size() != b || latents.size() != b) throw numkit::DimensionError("elbo: batch size mismatch");
  ElboValue out;
  out.grad_features.resize(b);
  out.grad_reconstructions.resize(b);
  out.grad_mean.resize(b);
  out.grad_log_variance.resize(b);
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    const Vec& x = features[i];
    const Vec& r = reconstructions[i];
    if (x.size() != r.size()) throw numkit::DimensionError("elbo: reconstruction shape does not match input");
    out.grad_features[i].resize(x.size());
    out.grad_reconstructions[i].resize(x.size());
    double sq = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double d = x[k] - r[k];
      sq += d * d;
      out.grad_features[i][k] = 2.0 * d * inv_b;
      out.grad_reconstructions[i][k] = -2.0 * d * inv_b;
    }
    out.reconstruction += sq * inv_b;
    const KlGradient kl = kl_diag_gaussian_with_grad(latents[i].mean, latents[i].log_variance);
    out.kl += kl.value * inv_b;
    out.grad_mean[i] = kl.mean;
    out.grad_log_variance[i] = kl.log_variance;
    for (double& v : out.grad_mean[i]) v *= beta * inv_b;
    for (double& v : out.grad_log_variance[i]) v *= beta * inv_b;
  }
  out.value = out.reconstruction + beta * out.kl;
  return out;
}

double total_objective(double vae_loss, double align_loss, double alpha) { return vae_loss + alpha * align_loss; }

std::vector<std::size_t> sample_negatives(std::span<const int> labels, numkit::Rng& rng) {
  std::vector<std::size_t> out(labels.size());
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    candidates.clear();
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] != labels[i]) candidates.push_back(j);
    }
    if (candidates.empty()) {
      throw NoNegativeError("no valid negative: batch item " + std::to_string(i) + " has no differently-labelled partner");
    }
    out[i] = candidates[rng.uniform_index(candidates.size())];
  }
  return out;
}

}  // namespace fsvae::losses
