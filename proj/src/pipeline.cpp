#include "fsvae/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fsvae::pipeline {

using nlohmann::json;
using numkit::Matrix;

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

const char* to_string(Partition p) {
  switch (p) {
    case Partition::train:
      return "train";
    case Partition::test_seen:
      return "test_seen";
    case Partition::test_unseen:
      return "test_unseen";
  }
  return "?";
}

Partition parse_partition(const std::string& text) {
  if (text == "train") return Partition::train;
  if (text == "test_seen") return Partition::test_seen;
  if (text == "test_unseen") return Partition::test_unseen;
  throw DataError("unknown partition '" + text + "' (expected train, test_seen or test_unseen)");
}

void SplitSpec::validate() const {
  if (seen.empty()) throw DataError("split: no seen classes");
  if (unseen.empty()) throw DataError("split: no unseen classes");
  std::set<int> s(seen.begin(), seen.end());
  std::set<int> u(unseen.begin(), unseen.end());
  if (s.size() != seen.size()) throw DataError("split: duplicate seen class id");
  if (u.size() != unseen.size()) throw DataError("split: duplicate unseen class id");
  for (int id : unseen) {
    if (s.count(id) != 0) throw DataError("split: class " + std::to_string(id) + " is both seen and unseen");
  }
}

bool SplitSpec::is_seen(int class_id) const {
  return std::find(seen.begin(), seen.end(), class_id) != seen.end();
}

bool SplitSpec::is_unseen(int class_id) const {
  return std::find(unseen.begin(), unseen.end(), class_id) != unseen.end();
}

SplitSpec parse_split(std::istream& in) {
  try {
    const json j = json::parse(in);
    SplitSpec s;
    s.seen = j.at("seen").get<std::vector<int>>();
    s.unseen = j.at("unseen").get<std::vector<int>>();
    if (j.contains("config_hash")) s.config_hash = j.at("config_hash").get<std::string>();
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("split file: ") + e.what());
  }
}

SplitSpec load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split file " + path.string());
  return parse_split(in);
}

void write_split(std::ostream& out, const SplitSpec& split) {
  json j;
  j["seen"] = split.seen;
  j["unseen"] = split.unseen;
  j["config_hash"] = split.config_hash;
  out << j.dump(2) << '\n';
}

void write_split(const std::filesystem::path& path, const SplitSpec& split) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write split file " + path.string());
  write_split(out, split);
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<std::size_t> FeatureDataset::indices(Partition p) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].partition == p) out.push_back(i);
  }
  return out;
}

std::size_t FeatureDataset::count(Partition p) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [p](const FeatureRecord& r) { return r.partition == p; }));
}

void FeatureDataset::validate(const SplitSpec& split) const {
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.sample_id).second) throw DataError("duplicate sample_id '" + r.sample_id + "'");
    const bool seen = split.is_seen(r.class_id);
    const bool unseen = split.is_unseen(r.class_id);
    if (!seen && !unseen) {
      throw DataError("sample '" + r.sample_id + "' has class " + std::to_string(r.class_id) + " outside the split");
    }
    if (r.partition == Partition::test_unseen ? !unseen : !seen) {
      throw SplitViolation("sample '" + r.sample_id + "' (class " + std::to_string(r.class_id) +
                           ") is in partition " + to_string(r.partition) + " but its class is " +
                           (seen ? "seen" : "unseen"));
    }
    const auto& first = records.front();
    if (r.has_sequence() != first.has_sequence()) throw DataError("dataset mixes sequences and feature vectors");
    if (r.has_sequence()) {
      if (!r.sequence->same_shape(*first.sequence)) throw DataError("sample '" + r.sample_id + "': sequence shape differs");
    } else if (r.vector.size() != first.vector.size() || r.vector.empty()) {
      throw DataError("sample '" + r.sample_id + "': feature vector dimension differs");
    }
  }
}

namespace {

FeatureRecord record_from_json(const json& j) {
  FeatureRecord r;
  r.sample_id = j.at("sample_id").get<std::string>();
  r.class_id = j.at("class_id").get<int>();
  r.partition = parse_partition(j.at("partition").get<std::string>());
  if (j.contains("sequence")) {
    const auto& seq = j.at("sequence");
    const std::size_t jn = seq.size();
    const std::size_t cn = jn ? seq[0].size() : 0;
    const std::size_t fn = cn ? seq[0][0].size() : 0;
    if (jn == 0 || cn == 0 || fn == 0) throw DataError("sample '" + r.sample_id + "': empty sequence");
    freq::MotionSequence m(jn, cn, fn);
    for (std::size_t a = 0; a < jn; ++a) {
      if (seq[a].size() != cn) throw DataError("sample '" + r.sample_id + "': ragged sequence");
      for (std::size_t c = 0; c < cn; ++c) {
        if (seq[a][c].size() != fn) throw DataError("sample '" + r.sample_id + "': ragged sequence");
        for (std::size_t f = 0; f < fn; ++f) m.at(a, c, f) = seq[a][c][f].get<double>();
      }
    }
    r.sequence = std::move(m);
  } else {
    r.vector = j.at("vector").get<Vec>();
    if (r.vector.empty()) throw DataError("sample '" + r.sample_id + "': empty vector");
  }
  return r;
}

json record_to_json(const FeatureRecord& r) {
  json j;
  j["sample_id"] = r.sample_id;
  j["class_id"] = r.class_id;
  j["partition"] = to_string(r.partition);
  if (r.has_sequence()) {
    const auto& m = *r.sequence;
    json seq = json::array();
    for (std::size_t a = 0; a < m.joints(); ++a) {
      json joint = json::array();
      for (std::size_t c = 0; c < m.coords(); ++c) {
        const auto traj = m.trajectory(a * m.coords() + c);
        joint.push_back(Vec(traj.begin(), traj.end()));
      }
      seq.push_back(std::move(joint));
    }
    j["sequence"] = std::move(seq);
  } else {
    j["vector"] = r.vector;
  }
  return j;
}

}  // namespace

FeatureDataset parse_features(std::istream& in) {
  FeatureDataset data;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (j.contains("meta")) {
        const auto& meta = j.at("meta");
        if (meta.contains("config_hash")) data.config_hash = meta.at("config_hash").get<std::string>();
        continue;
      }
      data.records.push_back(record_from_json(j));
    } catch (const json::exception& e) {
      throw DataError("feature file line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("feature file line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return data;
}

FeatureDataset load_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open feature file " + path.string());
  return parse_features(in);
}

void write_features(std::ostream& out, const FeatureDataset& data) {
  json meta;
  meta["meta"]["config_hash"] = data.config_hash;
  out << meta.dump() << '\n';
  for (const auto& r : data.records) out << record_to_json(r).dump() << '\n';
}

void write_features(const std::filesystem::path& path, const FeatureDataset& data) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write feature file " + path.string());
  write_features(out, data);
  if (!out) throw DataError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// FrontEnd
// ---------------------------------------------------------------------------

namespace {

Vec raw_from_layout(const freq::EnhancementConfig& layout) {
  Vec raw(layout.num_bands());
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const double w = layout.weights[k];
    if (!(w > 0.0 && w < 1.0)) {
      throw freq::EnhancementConfigError("trainable enhancement weights must start strictly inside (0, 1)");
    }
    raw[k] = freq::unsquash_weight(w);
  }
  return raw;
}

}  // namespace

FrontEnd FrontEnd::for_sequences(std::size_t joints, std::size_t coords, std::size_t frames,
                                 freq::EnhancementConfig layout, bool enabled, std::size_t output_dim,
                                 std::uint64_t seed) {
  if (joints == 0 || coords == 0 || frames == 0) throw freq::EmptySequenceError("front end: empty sequence shape");
  if (output_dim == 0) throw numkit::DimensionError("front end: output dimension must be positive");
  FrontEnd fe;
  fe.input_ = Input::sequence;
  fe.joints_ = joints;
  fe.coords_ = coords;
  fe.frames_ = frames;
  fe.input_dim_ = joints * coords * frames;
  fe.enabled_ = enabled;
  fe.seed_ = seed;
  if (enabled) {
    layout.validate(frames);
    fe.raw_ = raw_from_layout(layout);
  }
  fe.layout_ = std::move(layout);
  fe.build_projection(output_dim);
  return fe;
}

FrontEnd FrontEnd::for_vectors(std::size_t dim, freq::EnhancementConfig layout, bool enabled) {
  if (dim == 0) throw numkit::DimensionError("front end: feature dimension must be positive");
  FrontEnd fe;
  fe.input_ = Input::vector;
  fe.input_dim_ = dim;
  fe.enabled_ = enabled;
  if (enabled) {
    layout.validate(dim);
    fe.raw_ = raw_from_layout(layout);
  }
  fe.layout_ = std::move(layout);
  return fe;
}

FrontEnd FrontEnd::restore(Input input, std::size_t joints, std::size_t coords, std::size_t frames,
                           std::size_t input_dim, freq::EnhancementConfig layout, bool enabled, Vec raw,
                           std::size_t output_dim, std::uint64_t seed) {
  FrontEnd fe;
  fe.input_ = input;
  fe.joints_ = joints;
  fe.coords_ = coords;
  fe.frames_ = frames;
  fe.input_dim_ = input_dim;
  fe.enabled_ = enabled;
  fe.seed_ = seed;
  if (enabled) {
    layout.validate(input == Input::sequence ? frames : input_dim);
    if (raw.size() != layout.num_bands()) throw numkit::DimensionError("front end: raw weight count mismatch");
  }
  fe.layout_ = std::move(layout);
  fe.raw_ = std::move(raw);
  if (input == Input::sequence) fe.build_projection(output_dim);
  return fe;
}

void FrontEnd::build_projection(std::size_t output_dim) {
  numkit::Rng rng({seed_, 0x70726f6aULL});
  const double sd = 1.0 / std::sqrt(static_cast<double>(input_dim_));
  projection_ = Matrix(output_dim, input_dim_);
  for (double& v : projection_.data()) v = sd * rng.normal();
  // Column (t, i) of the spectral map is the projection of basis function i
  // placed on trajectory t. Stored transposed: one row per (t, i).
  const Matrix& basis = freq::dct_basis(frames_);
  spectral_projection_ = Matrix(input_dim_, output_dim);
  const std::size_t trajs = joints_ * coords_;
  for (std::size_t t = 0; t < trajs; ++t) {
    for (std::size_t i = 0; i < frames_; ++i) {
      auto dst = spectral_projection_.row(t * frames_ + i);
      for (std::size_t d = 0; d < output_dim; ++d) {
        double acc = 0.0;
        for (std::size_t f = 0; f < frames_; ++f) acc += projection_(d, t * frames_ + f) * basis(i, f);
        dst[d] = acc;
      }
    }
  }
}

std::size_t FrontEnd::feature_dim() const {
  return input_ == Input::sequence ? projection_.rows() : input_dim_;
}

freq::EnhancementConfig FrontEnd::enhancement() const {
  freq::EnhancementConfig cfg = layout_;
  if (enabled_) {
    for (std::size_t k = 0; k < raw_.size(); ++k) cfg.weights[k] = freq::squash_weight(raw_[k]);
  }
  return cfg;
}

void FrontEnd::check_record(const FeatureRecord& record) const {
  if (input_ == Input::sequence) {
    if (!record.has_sequence()) throw DataError("sample '" + record.sample_id + "': front end expects a sequence");
    const auto& s = *record.sequence;
    if (s.joints() != joints_ || s.coords() != coords_ || s.frames() != frames_) {
      throw numkit::DimensionError("sample '" + record.sample_id + "': sequence shape does not match the front end");
    }
  } else {
    if (record.has_sequence()) throw DataError("sample '" + record.sample_id + "': front end expects a vector");
    if (record.vector.size() != input_dim_) {
      throw numkit::DimensionError("sample '" + record.sample_id + "': feature dimension does not match the front end");
    }
  }
}

Vec FrontEnd::features(const FeatureRecord& record) const {
  check_record(record);
  if (input_ == Input::vector) return enabled_ ? freq::enhance_vector(record.vector, enhancement()) : record.vector;
  if (!enabled_) return numkit::matvec(projection_, record.sequence->values());
  const freq::MotionSequence enhanced = freq::enhance_sequence(*record.sequence, enhancement());
  return numkit::matvec(projection_, enhanced.values());
}

std::vector<Vec> FrontEnd::band_components(const FeatureRecord& record) const {
  check_record(record);
  if (!enabled_) return {features(record)};
  const std::size_t bands = layout_.num_bands();
  std::vector<Vec> comps(bands, Vec(feature_dim(), 0.0));
  if (input_ == Input::vector) {
    const std::size_t n = input_dim_;
    Vec coeffs(n);
    freq::dct_1d(record.vector, coeffs);
    const Matrix& basis = freq::dct_basis(n);
    for (std::size_t k = 0; k < bands; ++k) {
      for (std::size_t i = layout_.split_points[k]; i < layout_.split_points[k + 1]; ++i) {
        numkit::axpy(coeffs[i], basis.row(i), comps[k]);
      }
    }
    return comps;
  }
  const freq::Spectrum spec = freq::dct_forward(*record.sequence);
  std::vector<std::size_t> band_of(frames_);
  for (std::size_t k = 0; k < bands; ++k) {
    for (std::size_t i = layout_.split_points[k]; i < layout_.split_points[k + 1]; ++i) band_of[i] = k;
  }
  for (std::size_t t = 0; t < spec.trajectories(); ++t) {
    const auto traj = spec.trajectory(t);
    for (std::size_t i = 0; i < frames_; ++i) {
      numkit::axpy(traj[i], spectral_projection_.row(t * frames_ + i), comps[band_of[i]]);
    }
  }
  return comps;
}

Vec FrontEnd::combine(const std::vector<Vec>& components) const {
  if (components.size() != num_bands()) throw numkit::DimensionError("front end: band component count mismatch");
  if (!enabled_) return components[0];
  const freq::EnhancementConfig cfg = enhancement();
  Vec out(feature_dim(), 0.0);
  for (std::size_t k = 0; k < components.size(); ++k) numkit::axpy(freq::scaling_factor(cfg, k), components[k], out);
  return out;
}

void FrontEnd::accumulate_raw_grad(const std::vector<Vec>& components, std::span<const double> feature_grad,
                                   std::span<double> raw_grad) const {
  if (!enabled_) return;
  if (raw_grad.size() != raw_.size()) throw numkit::DimensionError("front end: raw gradient size mismatch");
  const freq::EnhancementConfig cfg = enhancement();
  for (std::size_t k = 0; k < components.size(); ++k) {
    const double dg = numkit::dot(components[k], feature_grad);
    raw_grad[k] += dg * freq::scaling_factor_weight_derivative(cfg, k) * freq::squash_derivative(raw_[k]);
  }
}

bool operator==(const FrontEnd& a, const FrontEnd& b) {
  return a.input_ == b.input_ && a.joints_ == b.joints_ && a.coords_ == b.coords_ && a.frames_ == b.frames_ &&
         a.input_dim_ == b.input_dim_ && a.enabled_ == b.enabled_ && a.raw_ == b.raw_ && a.seed_ == b.seed_ &&
         a.layout_.mode == b.layout_.mode && a.layout_.low_threshold == b.layout_.low_threshold &&
         a.layout_.adjust == b.layout_.adjust && a.layout_.split_points == b.layout_.split_points &&
         a.layout_.floor == b.layout_.floor && a.projection_ == b.projection_;
}

// ---------------------------------------------------------------------------
// Stage 2
// ---------------------------------------------------------------------------

std::map<int, Vec> fused_semantics(const semantics::SemanticTable& table, const std::vector<int>& ids) {
  std::map<int, Vec> out;
  for (int id : ids) {
    if (!table.contains(id)) throw DataError("missing semantic embeddings for class " + std::to_string(id));
    out[id] = semantics::fuse(table, id).vector;
  }
  return out;
}

namespace {

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  // A short tail is folded into the previous batch.
  if (batches.size() > 1 && batches.back().size() < std::max<std::size_t>(2, batch_size / 2)) {
    auto tail = std::move(batches.back());
    batches.pop_back();
    batches.back().insert(batches.back().end(), tail.begin(), tail.end());
  }
  return batches;
}

void add_scaled(crossvae::LossBreakdown& acc, const crossvae::LossBreakdown& x, double s) {
  acc.total += s * x.total;
  acc.vae_skeleton += s * x.vae_skeleton;
  acc.vae_text += s * x.vae_text;
  acc.reconstruction_skeleton += s * x.reconstruction_skeleton;
  acc.reconstruction_text += s * x.reconstruction_text;
  acc.kl_skeleton += s * x.kl_skeleton;
  acc.kl_text += s * x.kl_text;
  acc.alignment += s * x.alignment;
}

std::vector<int> sorted_unique(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

Stage2Result run_stage2(const FeatureDataset& data, const SplitSpec& split, const semantics::SemanticTable& table,
                        FrontEnd front_end, crossvae::VaeParams init, const Stage2Config& config,
                        numkit::Rng& rng) {
  config.loss.validate();
  if (config.batch_size < 2) throw std::invalid_argument("stage 2: batch size must be at least 2");
  const auto train = data.indices(Partition::train);
  if (train.empty()) throw DataError("stage 2: training partition is empty");

  std::vector<int> labels;
  labels.reserve(train.size());
  for (std::size_t idx : train) {
    const int cls = data.records[idx].class_id;
    if (!split.is_seen(cls)) {
      throw SplitViolation("stage 2: training record '" + data.records[idx].sample_id + "' has non-seen class " +
                           std::to_string(cls));
    }
    labels.push_back(cls);
  }
  const std::map<int, Vec> text = fused_semantics(table, sorted_unique(labels));
  if (init.skeleton_dim() != front_end.feature_dim() || init.text_dim() != text.begin()->second.size()) {
    throw numkit::DimensionError("stage 2: VAE input sizes do not match the skeleton/text features");
  }

  Stage2Result result{std::move(init), std::move(front_end), {}, 0};
  if (config.epochs == 0) return result;

  auto& vae = result.vae;
  auto& front = result.front_end;
  std::vector<std::vector<Vec>> components;
  components.reserve(train.size());
  for (std::size_t idx : train) components.push_back(front.band_components(data.records[idx]));

  const numkit::AdamConfig adam{config.learning_rate, 0.9, 0.999, 1e-8};
  crossvae::VaeOptimizer optimizer(vae, adam);
  const bool learn_front = config.learn_enhancement && front.enabled();
  numkit::AdamState front_opt(front.raw_weights().size(), adam);
  Vec raw_grad(front.raw_weights().size());

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    EpochLog log;
    log.epoch = epoch + 1;
    for (const auto& batch_pos : make_batches(order, config.batch_size)) {
      std::vector<crossvae::TrainItem> batch;
      batch.reserve(batch_pos.size());
      std::vector<int> batch_labels;
      for (std::size_t p : batch_pos) {
        batch.push_back({front.combine(components[p]), text.at(labels[p]), labels[p]});
        batch_labels.push_back(labels[p]);
      }
      if (sorted_unique(batch_labels).size() < 2) {
        ++result.skipped_batches;
        continue;
      }
      const auto negatives = losses::sample_negatives(batch_labels, rng);
      const auto noise = crossvae::StepNoise::draw(batch.size(), vae.latent_dim, rng);
      const auto obj = crossvae::stage2_objective(vae, batch, negatives, noise, config.loss, config.alignment);
      optimizer.step(vae, obj.grads);
      if (learn_front) {
        std::fill(raw_grad.begin(), raw_grad.end(), 0.0);
        for (std::size_t b = 0; b < batch_pos.size(); ++b) {
          front.accumulate_raw_grad(components[batch_pos[b]], obj.skeleton_feature_grads[b], raw_grad);
        }
        front_opt.step(front.mutable_raw_weights(), raw_grad);
      }
      add_scaled(log.mean, obj.losses, 1.0);
      ++log.steps;
    }
    if (log.steps > 0) {
      crossvae::LossBreakdown mean;
      add_scaled(mean, log.mean, 1.0 / static_cast<double>(log.steps));
      log.mean = mean;
    }
    result.log.push_back(log);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Classifiers
// ---------------------------------------------------------------------------

SoftmaxClassifier::SoftmaxClassifier(std::vector<int> classes, numkit::Matrix weights, Vec bias)
    : classes_(std::move(classes)), weights_(std::move(weights)), bias_(std::move(bias)) {
  if (classes_.empty()) throw std::invalid_argument("softmax classifier: no classes");
  if (weights_.rows() != classes_.size() || bias_.size() != classes_.size()) {
    throw numkit::DimensionError("softmax classifier: parameter shapes do not match class count");
  }
}

SoftmaxClassifier SoftmaxClassifier::train(const std::vector<Vec>& inputs, const std::vector<int>& labels,
                                           const ClassifierConfig& config, numkit::Rng& rng, Diagnostics* diag) {
  if (inputs.empty()) throw DataError("classifier: no training inputs");
  if (inputs.size() != labels.size()) throw numkit::DimensionError("classifier: inputs and labels differ in length");
  const std::size_t dim = inputs.front().size();
  for (const Vec& x : inputs) {
    if (x.size() != dim) throw numkit::DimensionError("classifier: inputs differ in dimension");
  }
  const std::vector<int> classes = sorted_unique(labels);
  const std::size_t k = classes.size();
  if (k == 1) {
    if (diag != nullptr) {
      diag->warn("classifier trained on a single class (" + std::to_string(classes[0]) +
                 "); it predicts that class for every input");
    }
    return SoftmaxClassifier(classes, Matrix(1, dim), Vec(1, 0.0));
  }
  std::vector<std::size_t> target(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    target[i] = static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), labels[i]) - classes.begin());
  }

  // Parameters: k x dim weights followed by k biases.
  Vec params(k * dim + k, 0.0);
  Vec grad(params.size());
  numkit::AdamState adam(params.size(), {config.learning_rate, 0.9, 0.999, 1e-8});
  std::vector<std::size_t> order(inputs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t bs = std::max<std::size_t>(1, config.batch_size);
  Vec logits(k);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      std::fill(grad.begin(), grad.end(), 0.0);
      const double inv = 1.0 / static_cast<double>(end - start);
      for (std::size_t p = start; p < end; ++p) {
        const Vec& x = inputs[order[p]];
        for (std::size_t c = 0; c < k; ++c) {
          logits[c] = params[k * dim + c] + numkit::dot({params.data() + c * dim, dim}, x);
        }
        Vec prob = numkit::softmax(logits);
        prob[target[order[p]]] -= 1.0;
        for (std::size_t c = 0; c < k; ++c) {
          const double g = prob[c] * inv;
          numkit::axpy(g, x, {grad.data() + c * dim, dim});
          grad[k * dim + c] += g;
        }
      }
      adam.step(params, grad);
    }
  }
  Matrix w(k, dim, Vec(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(k * dim)));
  Vec b(params.begin() + static_cast<std::ptrdiff_t>(k * dim), params.end());
  return SoftmaxClassifier(classes, std::move(w), std::move(b));
}

Vec SoftmaxClassifier::probabilities(std::span<const double> x) const {
  if (x.size() != input_dim()) throw numkit::DimensionError("classifier: input dimension mismatch");
  Vec logits(classes_.size());
  for (std::size_t c = 0; c < classes_.size(); ++c) logits[c] = bias_[c] + numkit::dot(weights_.row(c), x);
  return numkit::softmax(logits);
}

int SoftmaxClassifier::predict(std::span<const double> x) const {
  const Vec p = probabilities(x);
  return classes_[static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin())];
}

double SoftmaxClassifier::accuracy(const std::vector<Vec>& inputs, const std::vector<int>& labels) const {
  if (inputs.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) correct += predict(inputs[i]) == labels[i];
  return static_cast<double>(correct) / static_cast<double>(inputs.size());
}

UnseenClassifier synthesize_unseen_classifier(const crossvae::VaeParams& vae, const semantics::SemanticTable& table,
                                              const std::vector<int>& unseen, std::size_t samples_per_class,
                                              const ClassifierConfig& config, numkit::Rng& rng, Diagnostics* diag) {
  if (unseen.empty()) throw DataError("unseen classifier: no unseen classes");
  const auto text = fused_semantics(table, unseen);
  UnseenClassifier out;
  for (int cls : unseen) {
    auto draws = crossvae::sample_class_latents(vae, text.at(cls), samples_per_class, rng);
    for (auto& z : draws) {
      out.latents.push_back(std::move(z));
      out.labels.push_back(cls);
    }
  }
  out.classifier = SoftmaxClassifier::train(out.latents, out.labels, config, rng, diag);
  return out;
}

std::vector<Vec> skeleton_latents(const crossvae::VaeParams& vae, const FrontEnd& front, const FeatureDataset& data,
                                  const std::vector<std::size_t>& indices) {
  std::vector<Vec> out;
  out.reserve(indices.size());
  for (std::size_t idx : indices) {
    out.push_back(crossvae::encode(vae, crossvae::Modality::skeleton, front.features(data.records[idx])).mean);
  }
  return out;
}

SoftmaxClassifier train_seen_classifier(const crossvae::VaeParams& vae, const FrontEnd& front,
                                        const FeatureDataset& data, const std::vector<std::size_t>& indices,
                                        const SplitSpec& split, const ClassifierConfig& config, numkit::Rng& rng,
                                        Diagnostics* diag) {
  if (indices.empty()) throw DataError("seen classifier: empty training partition");
  std::vector<int> labels;
  for (std::size_t idx : indices) {
    const auto& r = data.records[idx];
    if (!split.is_seen(r.class_id)) {
      throw SplitViolation("seen classifier: record '" + r.sample_id + "' has non-seen class " +
                           std::to_string(r.class_id));
    }
    labels.push_back(r.class_id);
  }
  return SoftmaxClassifier::train(skeleton_latents(vae, front, data, indices), labels, config, rng, diag);
}

// ---------------------------------------------------------------------------
// Gate
// ---------------------------------------------------------------------------

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

Vec GateModel::features(const SoftmaxClassifier& seen, std::span<const double> latent) {
  const Vec p = seen.probabilities(latent);
  double entropy = 0.0;
  for (double v : p) {
    if (v > 0.0) entropy -= v * std::log(v);
  }
  return {*std::max_element(p.begin(), p.end()), entropy};
}

double GateModel::probability_seen(std::span<const double> gate_features) const {
  if (gate_features.size() != weights_.size()) throw numkit::DimensionError("gate: feature dimension mismatch");
  return stable_sigmoid(bias_ + numkit::dot(weights_, gate_features));
}

GateModel fit_gate(const std::vector<Vec>& seen_features, const std::vector<Vec>& unseen_features,
                   double regularization) {
  if (seen_features.empty() || unseen_features.empty()) {
    throw std::invalid_argument("gate: both seen and unseen examples are required");
  }
  if (!(regularization > 0.0)) throw std::invalid_argument("gate: C must be positive");
  const std::size_t dim = seen_features.front().size();
  std::vector<const Vec*> xs;
  std::vector<double> ys;
  std::vector<double> sw;
  const double n = static_cast<double>(seen_features.size() + unseen_features.size());
  for (const Vec& x : seen_features) {
    xs.push_back(&x);
    ys.push_back(1.0);
    sw.push_back(n / (2.0 * static_cast<double>(seen_features.size())));
  }
  for (const Vec& x : unseen_features) {
    xs.push_back(&x);
    ys.push_back(0.0);
    sw.push_back(n / (2.0 * static_cast<double>(unseen_features.size())));
  }
  for (const Vec* x : xs) {
    if (x->size() != dim) throw numkit::DimensionError("gate: feature dimension mismatch");
  }

  // theta = [w..., b]
  const numkit::Objective objective = [&](std::span<const double> theta, Vec* grad) {
    if (grad != nullptr) grad->assign(theta.size(), 0.0);
    double f = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double z = theta[dim] + numkit::dot(theta.first(dim), *xs[i]);
      f += regularization * sw[i] * (softplus(z) - ys[i] * z);
      if (grad != nullptr) {
        const double r = regularization * sw[i] * (stable_sigmoid(z) - ys[i]);
        for (std::size_t d = 0; d < dim; ++d) (*grad)[d] += r * (*xs[i])[d];
        (*grad)[dim] += r;
      }
    }
    for (std::size_t d = 0; d < dim; ++d) {
      f += 0.5 * theta[d] * theta[d];
      if (grad != nullptr) (*grad)[d] += theta[d];
    }
    return f;
  };
  numkit::LbfgsOptions opts;
  opts.max_iterations = 1000;
  opts.gradient_tolerance = 1e-8;
  const auto res = numkit::lbfgs_minimize(objective, Vec(dim + 1, 0.0), opts);
  return GateModel(Vec(res.x.begin(), res.x.begin() + static_cast<std::ptrdiff_t>(dim)), res.x[dim], regularization);
}

GateModel train_gate(const SoftmaxClassifier& seen, const std::vector<Vec>& unseen_latents,
                     const std::vector<Vec>& heldout_seen_latents, double regularization) {
  std::vector<Vec> fs;
  std::vector<Vec> fu;
  fs.reserve(heldout_seen_latents.size());
  fu.reserve(unseen_latents.size());
  for (const Vec& z : heldout_seen_latents) fs.push_back(GateModel::features(seen, z));
  for (const Vec& z : unseen_latents) fu.push_back(GateModel::features(seen, z));
  return fit_gate(fs, fu, regularization);
}

// ---------------------------------------------------------------------------
// Training driver
// ---------------------------------------------------------------------------

TrainOutcome train_pipeline(const FeatureDataset& data, const SplitSpec& split,
                            const semantics::SemanticTable& table, FrontEnd front_end,
                            const PipelineConfig& config, std::uint64_t seed, std::string config_hash) {
  split.validate();
  data.validate(split);
  TrainOutcome out;
  out.model.config_hash = std::move(config_hash);
  out.model.split = split;
  out.model.split.config_hash = out.model.config_hash;

  numkit::Rng init_rng({seed, 1});
  numkit::Rng stage2_rng({seed, 2});
  numkit::Rng unseen_rng({seed, 3});
  numkit::Rng holdout_rng({seed, 4});
  numkit::Rng seen_rng({seed, 5});

  Stage2Result s2;
  try {
    const auto text = fused_semantics(table, {split.seen.front()});
    crossvae::VaeArchitecture arch{front_end.feature_dim(), text.begin()->second.size(), config.latent_dim,
                                   config.hidden_dim};
    auto init = crossvae::VaeParams::random(arch, init_rng);
    s2 = run_stage2(data, split, table, std::move(front_end), std::move(init), config.stage2, stage2_rng);
  } catch (const std::exception& e) {
    throw StageError("stage 2 (cross-modal alignment)", e.what());
  }
  out.log = s2.log;
  if (s2.skipped_batches > 0) {
    out.diagnostics.warn("stage 2 skipped " + std::to_string(s2.skipped_batches) + " single-class batches");
  }
  out.model.front_end = std::move(s2.front_end);
  out.model.vae = std::move(s2.vae);

  UnseenClassifier unseen;
  try {
    unseen = synthesize_unseen_classifier(out.model.vae, table, split.unseen, config.unseen_samples,
                                          config.unseen_classifier, unseen_rng, &out.diagnostics);
  } catch (const std::exception& e) {
    throw StageError("stage 3 (unseen classifier)", e.what());
  }
  out.model.unseen_classifier = unseen.classifier;

  try {
    auto train = data.indices(Partition::train);
    holdout_rng.shuffle(train.begin(), train.end());
    std::size_t n_hold =
        static_cast<std::size_t>(std::floor(config.gate_holdout * static_cast<double>(train.size())));
    n_hold = std::clamp<std::size_t>(n_hold, 1, train.size() > 1 ? train.size() - 1 : 1);
    if (train.size() < 2) throw DataError("need at least two training records to hold out gate data");
    std::vector<std::size_t> held(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(n_hold));
    std::vector<std::size_t> fit(train.begin() + static_cast<std::ptrdiff_t>(n_hold), train.end());
    std::sort(held.begin(), held.end());
    std::sort(fit.begin(), fit.end());
    out.model.seen_classifier = train_seen_classifier(out.model.vae, out.model.front_end, data, fit, split,
                                                      config.seen_classifier, seen_rng, &out.diagnostics);
    const auto held_latents = skeleton_latents(out.model.vae, out.model.front_end, data, held);
    out.model.gate = train_gate(out.model.seen_classifier, unseen.latents, held_latents, config.gate_regularization);
  } catch (const std::exception& e) {
    throw StageError("stage 4 (seen classifier and gate)", e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

AccuracyBreakdown score_predictions(const std::vector<int>& truth, const std::vector<int>& predicted) {
  if (truth.size() != predicted.size()) throw numkit::DimensionError("score: truth and predictions differ in length");
  AccuracyBreakdown out;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    auto& pc = out.per_class[truth[i]];
    ++pc.total;
    if (truth[i] == predicted[i]) {
      ++pc.correct;
      ++out.correct;
    }
  }
  out.total = truth.size();
  out.accuracy = out.total == 0 ? 0.0 : static_cast<double>(out.correct) / static_cast<double>(out.total);
  return out;
}

double harmonic_mean(double seen, double unseen) {
  const double s = seen + unseen;
  if (s == 0.0) return 0.0;
  // min * (2 max / sum): symmetric, and exact when seen == unseen
  const double lo = std::min(seen, unseen);
  const double hi = std::max(seen, unseen);
  return lo * (2.0 * hi / s);
}

AccuracyBreakdown evaluate_zsl(const TrainedModel& model, const FeatureDataset& data) {
  const auto idx = data.indices(Partition::test_unseen);
  if (idx.empty()) throw DataError("zsl evaluation: test_unseen partition is empty");
  const auto latents = skeleton_latents(model.vae, model.front_end, data, idx);
  std::vector<int> truth;
  std::vector<int> pred;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    truth.push_back(data.records[idx[i]].class_id);
    pred.push_back(model.unseen_classifier.predict(latents[i]));
  }
  return score_predictions(truth, pred);
}

int gzsl_predict(const TrainedModel& model, std::span<const double> latent) {
  const Vec g = GateModel::features(model.seen_classifier, latent);
  if (model.gate.routes_to_seen(g)) return model.seen_classifier.predict(latent);
  return model.unseen_classifier.predict(latent);
}

GzslResult evaluate_gzsl(const TrainedModel& model, const FeatureDataset& data) {
  const auto seen_idx = data.indices(Partition::test_seen);
  const auto unseen_idx = data.indices(Partition::test_unseen);
  if (seen_idx.empty()) throw DataError("gzsl evaluation: test_seen partition is empty");
  if (unseen_idx.empty()) throw DataError("gzsl evaluation: test_unseen partition is empty");
  GzslResult out;
  auto run = [&](const std::vector<std::size_t>& idx) {
    const auto latents = skeleton_latents(model.vae, model.front_end, data, idx);
    std::vector<int> truth;
    std::vector<int> pred;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      truth.push_back(data.records[idx[i]].class_id);
      const Vec g = GateModel::features(model.seen_classifier, latents[i]);
      const bool to_seen = model.gate.routes_to_seen(g);
      out.routed_to_seen += to_seen;
      pred.push_back(to_seen ? model.seen_classifier.predict(latents[i]) : model.unseen_classifier.predict(latents[i]));
    }
    return score_predictions(truth, pred);
  };
  out.seen = run(seen_idx);
  out.unseen = run(unseen_idx);
  out.harmonic = harmonic_mean(out.seen.accuracy, out.unseen.accuracy);
  return out;
}

namespace {

json breakdown_json(const AccuracyBreakdown& b) {
  json j;
  j["accuracy"] = b.accuracy;
  j["correct"] = b.correct;
  j["total"] = b.total;
  json pc = json::object();
  for (const auto& [cls, c] : b.per_class) {
    pc[std::to_string(cls)] = {{"correct", c.correct}, {"total", c.total}, {"accuracy", c.accuracy()}};
  }
  j["per_class"] = std::move(pc);
  return j;
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  json j;
  j["mode"] = report.mode;
  j["config_hash"] = report.config_hash;
  if (report.zsl) j["zsl"] = breakdown_json(*report.zsl);
  if (report.gzsl) {
    j["gzsl"]["seen"] = breakdown_json(report.gzsl->seen);
    j["gzsl"]["unseen"] = breakdown_json(report.gzsl->unseen);
    j["gzsl"]["harmonic_mean"] = report.gzsl->harmonic;
    j["gzsl"]["routed_to_seen"] = report.gzsl->routed_to_seen;
  }
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Latent export
// ---------------------------------------------------------------------------

void export_latents(const crossvae::VaeParams& vae, const FrontEnd& front, const FeatureDataset& data,
                    std::ostream& out, const std::string& config_hash) {
  out << "# latents config_hash=" << config_hash << " latent_dim=" << vae.latent_dim
      << " columns=sample_id,class_id,mean\n";
  char buf[32];
  for (const auto& r : data.records) {
    const Vec mean = crossvae::encode(vae, crossvae::Modality::skeleton, front.features(r)).mean;
    out << r.sample_id << '\t' << r.class_id;
    for (double v : mean) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << '\t' << buf;
    }
    out << '\n';
  }
}

void export_latents(const crossvae::VaeParams& vae, const FrontEnd& front, const FeatureDataset& data,
                    const std::filesystem::path& path, const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write latent file " + path.string());
  export_latents(vae, front, data, out, config_hash);
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<LatentRow> parse_latents(std::istream& in) {
  std::vector<LatentRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string cell;
    LatentRow row;
    if (!std::getline(fields, row.sample_id, '\t') || !std::getline(fields, cell, '\t')) {
      throw DataError("latent file: malformed line");
    }
    row.class_id = std::stoi(cell);
    while (std::getline(fields, cell, '\t')) row.mean.push_back(std::strtod(cell.c_str(), nullptr));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace fsvae::pipeline
