#include "fsvae/frequency.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

namespace fsvae::freq {

const numkit::Matrix& dct_basis(std::size_t frames) {
  if (frames == 0) throw EmptySequenceError("dct_basis: zero-length transform");
  static std::mutex mutex;
  static std::map<std::size_t, std::unique_ptr<numkit::Matrix>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[frames];
  if (!slot) {
    auto basis = std::make_unique<numkit::Matrix>(frames, frames);
    const double n = static_cast<double>(frames);
    for (std::size_t i = 0; i < frames; ++i) {
      const double scale = std::sqrt((i == 0 ? 1.0 : 2.0) / n);
      for (std::size_t f = 0; f < frames; ++f) {
        (*basis)(i, f) = scale * std::cos(std::numbers::pi / n * (static_cast<double>(f) + 0.5) * static_cast<double>(i));
      }
    }
    slot = std::move(basis);
  }
  return *slot;
}

void dct_1d(std::span<const double> signal, std::span<double> coefficients) {
  if (signal.empty()) throw EmptySequenceError("dct: empty signal");
  if (coefficients.size() != signal.size()) throw numkit::DimensionError("dct: output length mismatch");
  const auto& basis = dct_basis(signal.size());
  for (std::size_t i = 0; i < signal.size(); ++i) {
    const auto row = basis.row(i);
    double s = 0.0;
    for (std::size_t f = 0; f < signal.size(); ++f) s += row[f] * signal[f];
    coefficients[i] = s;
  }
}

void idct_1d(std::span<const double> coefficients, std::span<double> signal) {
  if (coefficients.empty()) throw EmptySequenceError("idct: empty spectrum");
  if (coefficients.size() != signal.size()) throw numkit::DimensionError("idct: output length mismatch");
  const auto& basis = dct_basis(coefficients.size());
  std::fill(signal.begin(), signal.end(), 0.0);
  for (std::size_t i = 0; i < coefficients.size(); ++i) {
    const double c = coefficients[i];
    if (c == 0.0) continue;
    const auto row = basis.row(i);
    for (std::size_t f = 0; f < signal.size(); ++f) signal[f] += c * row[f];
  }
}

Spectrum dct_forward(const MotionSequence& seq) {
  if (seq.frames() == 0) throw EmptySequenceError("dct_forward: sequence has no frames");
  Spectrum spec(seq.joints(), seq.coords(), seq.frames());
  for (std::size_t k = 0; k < seq.trajectories(); ++k) dct_1d(seq.trajectory(k), spec.trajectory(k));
  return spec;
}

MotionSequence idct(const Spectrum& spec) {
  if (spec.frames() == 0) throw EmptySequenceError("idct: spectrum has no coefficients");
  MotionSequence seq(spec.joints(), spec.coords(), spec.frames());
  for (std::size_t k = 0; k < spec.trajectories(); ++k) idct_1d(spec.trajectory(k), seq.trajectory(k));
  return seq;
}

// ---------------------------------------------------------------------------

const char* to_string(EnhanceMode mode) {
  return mode == EnhanceMode::piecewise ? "piecewise" : "learnable_only";
}

EnhanceMode parse_enhance_mode(const std::string& text) {
  if (text == "piecewise") return EnhanceMode::piecewise;
  if (text == "learnable_only") return EnhanceMode::learnable_only;
  throw EnhancementConfigError("unknown enhancement mode '" + text + "'");
}

EnhancementConfig EnhancementConfig::per_coefficient(std::size_t length, std::size_t low_threshold, double adjust,
                                                     double weight, EnhanceMode mode) {
  EnhancementConfig cfg;
  cfg.mode = mode;
  cfg.low_threshold = low_threshold;
  cfg.adjust = adjust;
  cfg.split_points.resize(length + 1);
  for (std::size_t i = 0; i <= length; ++i) cfg.split_points[i] = i;
  cfg.weights.assign(length, weight);
  return cfg;
}

EnhancementConfig EnhancementConfig::with_cuts(std::size_t length, std::vector<std::size_t> cuts,
                                               std::size_t low_threshold, double adjust, double weight,
                                               EnhanceMode mode) {
  EnhancementConfig cfg;
  cfg.mode = mode;
  cfg.low_threshold = low_threshold;
  cfg.adjust = adjust;
  cfg.split_points.push_back(0);
  for (std::size_t c : cuts) cfg.split_points.push_back(c);
  cfg.split_points.push_back(length);
  cfg.weights.assign(cfg.split_points.size() - 1, weight);
  return cfg;
}

void EnhancementConfig::validate(std::size_t expected_length) const {
  if (expected_length == 0) throw EnhancementConfigError("enhancement: zero-length signal");
  if (low_threshold >= expected_length) {
    throw EnhancementConfigError("enhancement: low threshold " + std::to_string(low_threshold) +
                                 " must be below the signal length " + std::to_string(expected_length));
  }
  if (!(adjust > 0.0) || !std::isfinite(adjust)) throw EnhancementConfigError("enhancement: adjust must be > 0");
  if (!(floor >= 0.0) || !std::isfinite(floor)) throw EnhancementConfigError("enhancement: floor must be >= 0");
  if (split_points.size() < 2 || split_points.front() != 0) {
    throw EnhancementConfigError("enhancement: split points must start at 0 and define at least one band");
  }
  for (std::size_t k = 0; k + 1 < split_points.size(); ++k) {
    if (split_points[k + 1] < split_points[k]) {
      throw EnhancementConfigError("enhancement: split points overlap at band " + std::to_string(k));
    }
    if (split_points[k + 1] == split_points[k]) {
      throw EnhancementConfigError("enhancement: empty band " + std::to_string(k));
    }
  }
  if (split_points.back() != expected_length) {
    throw EnhancementConfigError("enhancement: bands cover [0, " + std::to_string(split_points.back()) +
                                 ") but the signal has " + std::to_string(expected_length) + " coefficients");
  }
  if (weights.size() + 1 != split_points.size()) {
    throw EnhancementConfigError("enhancement: need exactly one weight per band");
  }
  for (double w : weights) {
    if (!(w >= 0.0 && w <= 1.0)) throw EnhancementConfigError("enhancement: weights must lie in [0, 1]");
  }
}

namespace {

double unclamped_gain(const EnhancementConfig& config, std::size_t band) {
  const double w = config.weights[band];
  if (config.mode == EnhanceMode::learnable_only) return w;
  const double k = static_cast<double>(band);
  const double b = config.adjust;
  if (config.is_low_band(band)) return 1.0 + w * (1.0 - k / b);
  return 1.0 - w * (1.0 - (k - b) / b);
}

}  // namespace

double scaling_factor(const EnhancementConfig& config, std::size_t band) {
  const double g = unclamped_gain(config, band);
  if (config.mode == EnhanceMode::learnable_only) return g;
  return std::max(g, config.floor);
}

double scaling_factor_weight_derivative(const EnhancementConfig& config, std::size_t band) {
  if (config.mode == EnhanceMode::learnable_only) return 1.0;
  if (unclamped_gain(config, band) < config.floor) return 0.0;
  const double k = static_cast<double>(band);
  const double b = config.adjust;
  if (config.is_low_band(band)) return 1.0 - k / b;
  return -(1.0 - (k - b) / b);
}

Vec coefficient_gains(const EnhancementConfig& config) {
  Vec gains(config.length());
  for (std::size_t band = 0; band < config.num_bands(); ++band) {
    const double g = scaling_factor(config, band);
    for (std::size_t i = config.split_points[band]; i < config.split_points[band + 1]; ++i) gains[i] = g;
  }
  return gains;
}

Spectrum enhance(const Spectrum& spec, const EnhancementConfig& config) {
  config.validate(spec.frames());
  const Vec gains = coefficient_gains(config);
  Spectrum out = spec;
  for (std::size_t k = 0; k < out.trajectories(); ++k) {
    auto traj = out.trajectory(k);
    for (std::size_t i = 0; i < traj.size(); ++i) traj[i] *= gains[i];
  }
  return out;
}

MotionSequence enhance_sequence(const MotionSequence& seq, const EnhancementConfig& config) {
  return idct(enhance(dct_forward(seq), config));
}

Vec enhance_vector(std::span<const double> features, const EnhancementConfig& config) {
  config.validate(features.size());
  Vec coeffs(features.size());
  dct_1d(features, coeffs);
  const Vec gains = coefficient_gains(config);
  for (std::size_t i = 0; i < coeffs.size(); ++i) coeffs[i] *= gains[i];
  Vec out(features.size());
  idct_1d(coeffs, out);
  return out;
}

namespace {

// Shared backward for one trajectory. `coeffs` is the spectrum of the input,
// `grad_out` the time-domain gradient of the output. Adds dL/dg_i into
// `gain_grad` and writes the time-domain input gradient into `grad_in`.
void backward_trajectory(std::span<const double> coeffs, std::span<const double> gains,
                         std::span<const double> grad_out, std::span<double> gain_grad, std::span<double> grad_in,
                         Vec& scratch) {
  scratch.resize(coeffs.size());
  dct_1d(grad_out, scratch);  // dL/dC'
  for (std::size_t i = 0; i < coeffs.size(); ++i) {
    gain_grad[i] += coeffs[i] * scratch[i];
    scratch[i] *= gains[i];  // dL/dC
  }
  idct_1d(scratch, grad_in);
}

void gains_to_weights(const EnhancementConfig& config, std::span<const double> gain_grad,
                      std::span<double> weight_grad) {
  if (weight_grad.size() != config.num_bands()) throw numkit::DimensionError("enhance backward: weight gradient size");
  for (std::size_t band = 0; band < config.num_bands(); ++band) {
    double s = 0.0;
    for (std::size_t i = config.split_points[band]; i < config.split_points[band + 1]; ++i) s += gain_grad[i];
    weight_grad[band] += s * scaling_factor_weight_derivative(config, band);
  }
}

}  // namespace

MotionSequence enhance_sequence_backward(const Spectrum& input_spectrum, const EnhancementConfig& config,
                                         const MotionSequence& output_grad, std::span<double> weight_grad) {
  if (output_grad.joints() != input_spectrum.joints() || output_grad.coords() != input_spectrum.coords() ||
      output_grad.frames() != input_spectrum.frames()) {
    throw numkit::DimensionError("enhance_sequence_backward: gradient shape mismatch");
  }
  config.validate(input_spectrum.frames());
  const Vec gains = coefficient_gains(config);
  Vec gain_grad(gains.size(), 0.0);
  Vec scratch;
  MotionSequence grad_in(output_grad.joints(), output_grad.coords(), output_grad.frames());
  for (std::size_t k = 0; k < input_spectrum.trajectories(); ++k) {
    backward_trajectory(input_spectrum.trajectory(k), gains, output_grad.trajectory(k), gain_grad,
                        grad_in.trajectory(k), scratch);
  }
  gains_to_weights(config, gain_grad, weight_grad);
  return grad_in;
}

Vec enhance_vector_backward(std::span<const double> features, const EnhancementConfig& config,
                            std::span<const double> output_grad, std::span<double> weight_grad) {
  if (output_grad.size() != features.size()) throw numkit::DimensionError("enhance_vector_backward: size mismatch");
  config.validate(features.size());
  const Vec gains = coefficient_gains(config);
  Vec coeffs(features.size());
  dct_1d(features, coeffs);
  Vec gain_grad(gains.size(), 0.0);
  Vec scratch;
  Vec grad_in(features.size());
  backward_trajectory(coeffs, gains, output_grad, gain_grad, grad_in, scratch);
  gains_to_weights(config, gain_grad, weight_grad);
  return grad_in;
}

double signal_energy(const MotionSequence& seq) { return numkit::squared_norm(seq.values()); }

double signal_energy(const Spectrum& spec) { return numkit::squared_norm(spec.values()); }

double redistributed_energy(const Spectrum& spec, const EnhancementConfig& config) {
  config.validate(spec.frames());
  const Vec gains = coefficient_gains(config);
  double e = 0.0;
  for (std::size_t k = 0; k < spec.trajectories(); ++k) {
    const auto traj = spec.trajectory(k);
    for (std::size_t i = 0; i < traj.size(); ++i) e += gains[i] * gains[i] * traj[i] * traj[i];
  }
  return e;
}

double squash_weight(double raw) { return 1.0 / (1.0 + std::exp(-raw)); }

double squash_derivative(double raw) {
  const double s = squash_weight(raw);
  return s * (1.0 - s);
}

double unsquash_weight(double w) {
  if (!(w > 0.0 && w < 1.0)) throw std::domain_error("unsquash_weight: weight must lie strictly inside (0, 1)");
  return std::log(w / (1.0 - w));
}

}  // namespace fsvae::freq
