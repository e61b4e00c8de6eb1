#pragma once

// Dense numeric kernels shared by every model in the library: row-major
// matrices, tanh perceptrons with hand-written backprop, Adam, L-BFGS,
// seeded random streams and a central-difference gradient checker.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace fsvae::numkit {

using Vec = std::vector<double>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Vector helpers
// ---------------------------------------------------------------------------

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double norm(std::span<const double> a);
double squared_distance(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> a);

/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

Vec softmax(std::span<const double> logits);

// ---------------------------------------------------------------------------
// DenseMatrix
// ---------------------------------------------------------------------------

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, Vec data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vec data_;
};

Vec matvec(const Matrix& m, std::span<const double> x);
Vec matvec_transposed(const Matrix& m, std::span<const double> x);
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

// ---------------------------------------------------------------------------
// Seeded random streams
// ---------------------------------------------------------------------------

struct RngSeed {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

/// Identical seed and stream id always reproduce the same draw sequence.
class Rng {
 public:
  explicit Rng(RngSeed seed);

  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);
  double normal();                         // N(0, 1)
  std::size_t uniform_index(std::size_t n);  // [0, n)
  Vec normal_vector(std::size_t n, double stddev = 1.0);

  template <typename It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// ---------------------------------------------------------------------------
// Multi-layer perceptron
// ---------------------------------------------------------------------------

enum class Activation { tanh, identity };

/// Stack of affine layers. Every layer except the last is followed by the
/// hidden activation. All weights and biases live in one contiguous buffer
/// so optimizers and gradient checks can treat them as a flat vector.
///
/// Layer l has weights of shape (dims[l+1] x dims[l]) stored row-major,
/// followed by dims[l+1] biases.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<std::size_t> dims, Activation hidden = Activation::tanh);

  /// Weights ~ N(0, gain^2 / fan_in), zero biases.
  static Mlp random(std::vector<std::size_t> dims, Rng& rng, Activation hidden = Activation::tanh,
                    double gain = 1.0);

  std::size_t num_layers() const { return dims_.empty() ? 0 : dims_.size() - 1; }
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t output_dim() const { return dims_.back(); }
  const std::vector<std::size_t>& dims() const { return dims_; }
  Activation activation() const { return activation_; }

  std::span<const double> params() const { return params_; }
  /// Mutable access invalidates forward caches taken before the call.
  std::span<double> mutable_params();

  double weight(std::size_t layer, std::size_t r, std::size_t c) const;
  double bias(std::size_t layer, std::size_t r) const;
  void set_weight(std::size_t layer, std::size_t r, std::size_t c, double v);
  void set_bias(std::size_t layer, std::size_t r, double v);

  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + dims_[layer + 1] * dims_[layer];
  }

  std::uint64_t version() const { return version_; }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    return a.dims_ == b.dims_ && a.activation_ == b.activation_ && a.params_ == b.params_;
  }

 private:
  std::vector<std::size_t> dims_;
  Activation activation_ = Activation::tanh;
  std::vector<std::size_t> offsets_;
  Vec params_;
  std::uint64_t version_ = 0;
};

struct MlpCache {
  std::vector<Vec> layer_inputs;  // input seen by each layer
  Vec output;
  std::vector<std::size_t> dims;
  std::uint64_t version = 0;
};

struct MlpForward {
  Vec output;
  MlpCache cache;
};

struct MlpGradients {
  Vec params;  // same layout as Mlp::params()
  Vec input;
};

MlpForward mlp_forward(const Mlp& mlp, std::span<const double> input);

/// Accumulates parameter gradients into `param_grad` and returns the input
/// gradient. Throws if the cache was produced for a different shape or the
/// parameters were mutated after the forward pass.
Vec mlp_backward_accumulate(const Mlp& mlp, const MlpCache& cache,
                            std::span<const double> output_grad, std::span<double> param_grad);

MlpGradients mlp_backward(const Mlp& mlp, const MlpCache& cache, std::span<const double> output_grad);

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(std::size_t num_params, AdamConfig config);

  /// One bias-corrected update. Throws on shape mismatch or a non-finite
  /// gradient entry; parameters are untouched in that case.
  void step(std::span<double> params, std::span<const double> grads);

  std::uint64_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }

 private:
  AdamConfig config_;
  Vec m_;
  Vec v_;
  std::uint64_t steps_ = 0;
};

// ---------------------------------------------------------------------------
// Objectives, gradient checking and L-BFGS
// ---------------------------------------------------------------------------

/// Returns f(x); when `grad` is non-null it is resized to x.size() and filled
/// with the analytic gradient.
using Objective = std::function<double(std::span<const double> x, Vec* grad)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Lower bound for the relative-error denominator max(|analytic|, |numeric|).
  double denominator_floor = 1e-6;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  Vec relative_errors;
  Vec analytic;
  Vec numeric;
  bool passed = false;
};

class NonDeterministicObjective : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

GradCheckReport grad_check(const Objective& f, std::span<const double> x,
                           const GradCheckOptions& options = {});

struct LbfgsOptions {
  std::size_t history = 10;
  std::size_t max_iterations = 500;
  double gradient_tolerance = 1e-9;
};

struct LbfgsResult {
  Vec x;
  double value = 0.0;
  double gradient_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

LbfgsResult lbfgs_minimize(const Objective& f, Vec x0, const LbfgsOptions& options = {});

}  // namespace fsvae::numkit
