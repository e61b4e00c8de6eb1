#pragma once

// Orthonormal DCT-II / DCT-III over the temporal axis of joint trajectories,
// and the band-wise spectral enhancement applied before feature extraction.
//
// Coefficients are 0-based with the DC term at index 0. Formulas written with
// a 1-based coefficient index map through i_1based = i + 1.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsvae/numkit.hpp"

namespace fsvae::freq {

using numkit::Vec;

/// J x C x F block of doubles stored as [joint][coord][frame]. The tag keeps
/// time-domain sequences and their spectra from being mixed up.
template <typename Tag>
class TrajectoryBlock {
 public:
  TrajectoryBlock() = default;
  TrajectoryBlock(std::size_t joints, std::size_t coords, std::size_t frames)
      : joints_(joints), coords_(coords), frames_(frames), values_(joints * coords * frames, 0.0) {}
  TrajectoryBlock(std::size_t joints, std::size_t coords, std::size_t frames, Vec values)
      : joints_(joints), coords_(coords), frames_(frames), values_(std::move(values)) {
    if (values_.size() != joints * coords * frames) {
      throw numkit::DimensionError("trajectory block: value count does not match J x C x F");
    }
  }

  std::size_t joints() const { return joints_; }
  std::size_t coords() const { return coords_; }
  std::size_t frames() const { return frames_; }
  std::size_t trajectories() const { return joints_ * coords_; }

  double& at(std::size_t j, std::size_t c, std::size_t f) { return values_[(j * coords_ + c) * frames_ + f]; }
  double at(std::size_t j, std::size_t c, std::size_t f) const {
    return values_[(j * coords_ + c) * frames_ + f];
  }

  /// k-th trajectory in (joint, coord) row-major order.
  std::span<double> trajectory(std::size_t k) { return {values_.data() + k * frames_, frames_}; }
  std::span<const double> trajectory(std::size_t k) const { return {values_.data() + k * frames_, frames_}; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool same_shape(const TrajectoryBlock& o) const {
    return joints_ == o.joints_ && coords_ == o.coords_ && frames_ == o.frames_;
  }

  friend bool operator==(const TrajectoryBlock&, const TrajectoryBlock&) = default;

 private:
  std::size_t joints_ = 0;
  std::size_t coords_ = 0;
  std::size_t frames_ = 0;
  Vec values_;
};

struct TimeDomainTag {};
struct FrequencyDomainTag {};

using MotionSequence = TrajectoryBlock<TimeDomainTag>;
using Spectrum = TrajectoryBlock<FrequencyDomainTag>;

class EmptySequenceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row i holds basis function phi_i(f) = sqrt((2 - [i == 0]) / F) cos(pi (f + 1/2) i / F).
/// Cached per length.
const numkit::Matrix& dct_basis(std::size_t frames);

void dct_1d(std::span<const double> signal, std::span<double> coefficients);
void idct_1d(std::span<const double> coefficients, std::span<double> signal);

Spectrum dct_forward(const MotionSequence& seq);
MotionSequence idct(const Spectrum& spec);

// ---------------------------------------------------------------------------
// Enhancement
// ---------------------------------------------------------------------------

enum class EnhanceMode { piecewise, learnable_only };

const char* to_string(EnhanceMode mode);
EnhanceMode parse_enhance_mode(const std::string& text);

class EnhancementConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EnhancementConfig {
  EnhanceMode mode = EnhanceMode::piecewise;
  std::size_t low_threshold = 35;  // bands ending at or below this coefficient index are "low"
  double adjust = 30.0;            // decay parameter of the scaling function
  /// Band k covers coefficients [split_points[k], split_points[k+1]).
  std::vector<std::size_t> split_points;
  std::vector<double> weights;  // one per band, each in [0, 1]
  double floor = 0.0;

  std::size_t num_bands() const { return weights.size(); }
  std::size_t length() const { return split_points.empty() ? 0 : split_points.back(); }

  /// One band per coefficient.
  static EnhancementConfig per_coefficient(std::size_t length, std::size_t low_threshold, double adjust,
                                           double weight, EnhanceMode mode = EnhanceMode::piecewise);
  /// Bands from explicit interior cut points; 0 and `length` are added.
  static EnhancementConfig with_cuts(std::size_t length, std::vector<std::size_t> cuts, std::size_t low_threshold,
                                     double adjust, double weight, EnhanceMode mode = EnhanceMode::piecewise);

  void validate(std::size_t length) const;
  bool is_low_band(std::size_t band) const { return split_points[band + 1] <= low_threshold; }
};

/// g for one band. Low bands: 1 + w (1 - k/b). High bands: 1 - w (1 - (k - b)/b).
/// Clamped below at `floor`. In learnable-only mode g = w.
double scaling_factor(const EnhancementConfig& config, std::size_t band);

/// dg/dw for one band; zero where the floor clamp is active.
double scaling_factor_weight_derivative(const EnhancementConfig& config, std::size_t band);

/// Per-coefficient gain (length = config.length()).
Vec coefficient_gains(const EnhancementConfig& config);

Spectrum enhance(const Spectrum& spec, const EnhancementConfig& config);
MotionSequence enhance_sequence(const MotionSequence& seq, const EnhancementConfig& config);

/// Same band logic applied to a single 1-D feature vector (treated as one
/// trajectory of length = vector size).
Vec enhance_vector(std::span<const double> features, const EnhancementConfig& config);

/// Backward pass of enhance_sequence given the spectrum of its input.
/// Accumulates dL/dw per band into `weight_grad` and returns dL/d(input) in
/// the time domain.
MotionSequence enhance_sequence_backward(const Spectrum& input_spectrum, const EnhancementConfig& config,
                                         const MotionSequence& output_grad, std::span<double> weight_grad);

Vec enhance_vector_backward(std::span<const double> features, const EnhancementConfig& config,
                            std::span<const double> output_grad, std::span<double> weight_grad);

double signal_energy(const MotionSequence& seq);
double signal_energy(const Spectrum& spec);

/// Energy the enhanced signal must carry: sum_i g(i)^2 C_i^2.
double redistributed_energy(const Spectrum& spec, const EnhancementConfig& config);

// Trainable weights are kept unconstrained and squashed into [0, 1].
double squash_weight(double raw);
double squash_derivative(double raw);
double unsquash_weight(double w);

}  // namespace fsvae::freq
