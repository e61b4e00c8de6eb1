#include "fsvae/numkit.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <string>

namespace fsvae::numkit {

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": size mismatch (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
  }
}

}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

double squared_distance(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "squared_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

bool all_finite(std::span<const double> a) {
  for (double v : a) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  require_same_size(x.size(), y.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Vec softmax(std::span<const double> logits) {
  Vec out(logits.begin(), logits.end());
  if (out.empty()) return out;
  double mx = out[0];
  for (double v : out) mx = std::max(mx, v);
  double total = 0.0;
  for (double& v : out) {
    v = std::exp(v - mx);
    total += v;
  }
  for (double& v : out) v /= total;
  return out;
}

// ---------------------------------------------------------------------------

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, Vec data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require_same_size(data_.size(), rows * cols, "Matrix");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Vec matvec(const Matrix& m, std::span<const double> x) {
  require_same_size(m.cols(), x.size(), "matvec");
  Vec y(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) s += row[c] * x[c];
    y[r] = s;
  }
  return y;
}

Vec matvec_transposed(const Matrix& m, std::span<const double> x) {
  require_same_size(m.rows(), x.size(), "matvec_transposed");
  Vec y(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    const double xr = x[r];
    for (std::size_t c = 0; c < row.size(); ++c) y[c] += row[c] * xr;
  }
  return y;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_same_size(a.cols(), b.rows(), "matmul");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto src = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  }
  return t;
}

// ---------------------------------------------------------------------------

Rng::Rng(RngSeed seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed.seed), static_cast<std::uint32_t>(seed.seed >> 32),
                    static_cast<std::uint32_t>(seed.stream),
                    static_cast<std::uint32_t>(seed.stream >> 32)};
  engine_.seed(seq);
}

double Rng::uniform() { return std::generate_canonical<double, 53>(engine_); }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() { return normal_(engine_); }

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

Vec Rng::normal_vector(std::size_t n, double stddev) {
  Vec v(n);
  for (double& x : v) x = stddev * normal();
  return v;
}

// ---------------------------------------------------------------------------

Mlp::Mlp(std::vector<std::size_t> dims, Activation hidden) : dims_(std::move(dims)), activation_(hidden) {
  if (dims_.size() < 2) throw DimensionError("Mlp needs at least an input and an output dimension");
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    if (dims_[l] == 0 || dims_[l + 1] == 0) throw DimensionError("Mlp layer dimension must be positive");
    offsets_.push_back(total);
    total += dims_[l + 1] * dims_[l] + dims_[l + 1];
  }
  params_.assign(total, 0.0);
}

Mlp Mlp::random(std::vector<std::size_t> dims, Rng& rng, Activation hidden, double gain) {
  Mlp mlp(std::move(dims), hidden);
  for (std::size_t l = 0; l < mlp.num_layers(); ++l) {
    const double stddev = gain / std::sqrt(static_cast<double>(mlp.dims_[l]));
    const std::size_t n = mlp.dims_[l + 1] * mlp.dims_[l];
    for (std::size_t k = 0; k < n; ++k) mlp.params_[mlp.offsets_[l] + k] = stddev * rng.normal();
  }
  return mlp;
}

std::span<double> Mlp::mutable_params() {
  ++version_;
  return params_;
}

double Mlp::weight(std::size_t layer, std::size_t r, std::size_t c) const {
  return params_[offsets_[layer] + r * dims_[layer] + c];
}

double Mlp::bias(std::size_t layer, std::size_t r) const { return params_[bias_offset(layer) + r]; }

void Mlp::set_weight(std::size_t layer, std::size_t r, std::size_t c, double v) {
  ++version_;
  params_[offsets_[layer] + r * dims_[layer] + c] = v;
}

void Mlp::set_bias(std::size_t layer, std::size_t r, double v) {
  ++version_;
  params_[bias_offset(layer) + r] = v;
}

MlpForward mlp_forward(const Mlp& mlp, std::span<const double> input) {
  if (mlp.num_layers() == 0) throw DimensionError("mlp_forward: empty network");
  if (input.size() != mlp.input_dim()) {
    throw DimensionError("mlp_forward: input has " + std::to_string(input.size()) + " entries, network expects " +
                         std::to_string(mlp.input_dim()));
  }
  const auto& dims = mlp.dims();
  const auto params = mlp.params();

  MlpForward fwd;
  fwd.cache.dims = dims;
  fwd.cache.version = mlp.version();
  fwd.cache.layer_inputs.reserve(mlp.num_layers());

  Vec current(input.begin(), input.end());
  for (std::size_t l = 0; l < mlp.num_layers(); ++l) {
    const std::size_t in = dims[l];
    const std::size_t out = dims[l + 1];
    const double* w = params.data() + mlp.weight_offset(l);
    const double* b = params.data() + mlp.bias_offset(l);
    Vec next(out);
    for (std::size_t r = 0; r < out; ++r) {
      double s = b[r];
      const double* wr = w + r * in;
      for (std::size_t c = 0; c < in; ++c) s += wr[c] * current[c];
      next[r] = s;
    }
    const bool last = (l + 1 == mlp.num_layers());
    if (!last && mlp.activation() == Activation::tanh) {
      for (double& v : next) v = std::tanh(v);
    }
    fwd.cache.layer_inputs.push_back(std::move(current));
    current = std::move(next);
  }
  fwd.cache.output = current;
  fwd.output = std::move(current);
  return fwd;
}

Vec mlp_backward_accumulate(const Mlp& mlp, const MlpCache& cache, std::span<const double> output_grad,
                            std::span<double> param_grad) {
  if (cache.dims != mlp.dims() || cache.layer_inputs.size() != mlp.num_layers()) {
    throw DimensionError("mlp_backward: cache does not belong to this network");
  }
  if (cache.version != mlp.version()) {
    throw std::logic_error("mlp_backward: stale cache (parameters changed after forward)");
  }
  if (output_grad.size() != mlp.output_dim()) throw DimensionError("mlp_backward: output gradient size mismatch");
  if (param_grad.size() != mlp.params().size()) throw DimensionError("mlp_backward: parameter gradient size mismatch");

  const auto& dims = mlp.dims();
  const auto params = mlp.params();

  // delta = dL/d(pre-activation) of the current layer
  Vec delta(output_grad.begin(), output_grad.end());
  for (std::size_t l = mlp.num_layers(); l-- > 0;) {
    const std::size_t in = dims[l];
    const std::size_t out = dims[l + 1];
    const Vec& x = cache.layer_inputs[l];
    const double* w = params.data() + mlp.weight_offset(l);
    double* gw = param_grad.data() + mlp.weight_offset(l);
    double* gb = param_grad.data() + mlp.bias_offset(l);

    Vec input_grad(in, 0.0);
    for (std::size_t r = 0; r < out; ++r) {
      const double d = delta[r];
      gb[r] += d;
      if (d == 0.0) continue;
      double* gwr = gw + r * in;
      const double* wr = w + r * in;
      for (std::size_t c = 0; c < in; ++c) {
        gwr[c] += d * x[c];
        input_grad[c] += d * wr[c];
      }
    }
    if (l > 0 && mlp.activation() == Activation::tanh) {
      // x is tanh(pre-activation) of layer l-1
      for (std::size_t c = 0; c < in; ++c) input_grad[c] *= 1.0 - x[c] * x[c];
    }
    delta = std::move(input_grad);
  }
  return delta;
}

MlpGradients mlp_backward(const Mlp& mlp, const MlpCache& cache, std::span<const double> output_grad) {
  MlpGradients g;
  g.params.assign(mlp.params().size(), 0.0);
  g.input = mlp_backward_accumulate(mlp, cache, output_grad, g.params);
  return g;
}

// ---------------------------------------------------------------------------

AdamState::AdamState(std::size_t num_params, AdamConfig config)
    : config_(config), m_(num_params, 0.0), v_(num_params, 0.0) {}

void AdamState::step(std::span<double> params, std::span<const double> grads) {
  require_same_size(params.size(), m_.size(), "AdamState::step params");
  require_same_size(grads.size(), m_.size(), "AdamState::step grads");
  if (!all_finite(grads)) throw std::domain_error("AdamState::step: non-finite gradient");

  ++steps_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i] * grads[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
  }
}

// ---------------------------------------------------------------------------

GradCheckReport grad_check(const Objective& f, std::span<const double> x, const GradCheckOptions& options) {
  GradCheckReport report;
  Vec point(x.begin(), x.end());

  const double first = f(point, &report.analytic);
  const double second = f(point, nullptr);
  if (first != second) {
    throw NonDeterministicObjective("grad_check: objective returned different values for the same input");
  }
  if (report.analytic.size() != point.size()) throw DimensionError("grad_check: analytic gradient size mismatch");

  report.numeric.resize(point.size());
  report.relative_errors.resize(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + options.step;
    const double plus = f(point, nullptr);
    point[i] = saved - options.step;
    const double minus = f(point, nullptr);
    point[i] = saved;
    const double numeric = (plus - minus) / (2.0 * options.step);
    report.numeric[i] = numeric;
    const double a = report.analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
    const double rel = std::abs(a - numeric) / denom;
    report.relative_errors[i] = rel;
    if (rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_index = i;
    }
  }
  report.passed = report.max_relative_error < options.tolerance;
  return report;
}

// ---------------------------------------------------------------------------

LbfgsResult lbfgs_minimize(const Objective& f, Vec x0, const LbfgsOptions& options) {
  LbfgsResult result;
  Vec x = std::move(x0);
  Vec g;
  double fx = f(x, &g);
  std::deque<Vec> s_hist;
  std::deque<Vec> y_hist;
  std::deque<double> rho_hist;

  std::size_t iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    const double gnorm = norm(g);
    if (gnorm < options.gradient_tolerance) {
      result.converged = true;
      break;
    }

    // two-loop recursion
    Vec q = g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alpha[k] = rho_hist[k] * dot(s_hist[k], q);
      axpy(-alpha[k], y_hist[k], q);
    }
    if (!s_hist.empty()) {
      const double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
      for (double& v : q) v *= gamma;
    }
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * dot(y_hist[k], q);
      axpy(alpha[k] - beta, s_hist[k], q);
    }
    Vec dir(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) dir[i] = -q[i];
    double slope = dot(dir, g);
    if (slope >= 0.0) {
      // not a descent direction; restart from steepest descent
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      for (std::size_t i = 0; i < g.size(); ++i) dir[i] = -g[i];
      slope = -gnorm * gnorm;
    }

    // backtracking Armijo line search
    double step = 1.0;
    Vec x_new(x.size());
    Vec g_new;
    double f_new = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t i = 0; i < x.size(); ++i) x_new[i] = x[i] + step * dir[i];
      f_new = f(x_new, &g_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    Vec s(x.size());
    Vec y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      s[i] = x_new[i] - x[i];
      y[i] = g_new[i] - g[i];
    }
    const double sy = dot(s, y);
    if (sy > 1e-12) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (s_hist.size() > options.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    const double decrease = fx - f_new;
    x = std::move(x_new);
    g = std::move(g_new);
    fx = f_new;
    if (decrease >= 0.0 && decrease <= 1e-15 * std::max(1.0, std::abs(fx))) {
      result.converged = norm(g) < std::sqrt(options.gradient_tolerance);
      ++iter;
      break;
    }
  }
  result.gradient_norm = norm(g);
  if (result.gradient_norm < options.gradient_tolerance) result.converged = true;
  result.x = std::move(x);
  result.value = fx;
  result.iterations = iter;
  return result;
}

}  // namespace fsvae::numkit
