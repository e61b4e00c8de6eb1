#include "fsvae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fsvae/run_config.hpp"

namespace fsvae::checkpoint {

using numkit::Vec;

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void f64s(std::span<const double> v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  void sizes(const std::vector<std::size_t>& v) {
    u64(v.size());
    for (std::size_t x : v) u64(x);
  }
  void ints(const std::vector<int>& v) {
    u64(v.size());
    for (int x : v) i32(x);
  }
  void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }

  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t count(std::size_t elem_size) {
    const std::uint64_t n = u64();
    if (n > (size_ - pos_) / elem_size) throw CheckpointError("checkpoint: length field exceeds file size");
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    const std::size_t n = count(1);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  Vec f64s() {
    Vec v(count(8));
    for (double& x : v) x = f64();
    return v;
  }
  std::vector<std::size_t> sizes() {
    std::vector<std::size_t> v(count(8));
    for (std::size_t& x : v) x = static_cast<std::size_t>(u64());
    return v;
  }
  std::vector<int> ints() {
    std::vector<int> v(count(4));
    for (int& x : v) x = i32();
    return v;
  }
  void expect_bytes(const char* p, std::size_t n) {
    need(n);
    if (std::memcmp(data_ + pos_, p, n) != 0) throw CheckpointError("checkpoint: bad magic (not a checkpoint file)");
    pos_ += n;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (size_ - pos_ < n) throw CheckpointError("checkpoint: truncated file");
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

void write_mlp(Writer& w, const numkit::Mlp& m) {
  w.u8(m.activation() == numkit::Activation::tanh ? 0 : 1);
  w.sizes(m.dims());
  w.f64s(m.params());
}

numkit::Mlp read_mlp(Reader& r) {
  const std::uint8_t act = r.u8();
  if (act > 1) throw CheckpointError("checkpoint: unknown activation");
  const auto dims = r.sizes();
  if (dims.size() < 2) throw CheckpointError("checkpoint: network needs at least two layer sizes");
  numkit::Mlp m(dims, act == 0 ? numkit::Activation::tanh : numkit::Activation::identity);
  const Vec params = r.f64s();
  auto dst = m.mutable_params();
  if (params.size() != dst.size()) throw CheckpointError("checkpoint: network parameter count mismatch");
  std::copy(params.begin(), params.end(), dst.begin());
  return m;
}

void write_classifier(Writer& w, const pipeline::SoftmaxClassifier& c) {
  w.ints(c.classes());
  w.u64(c.weights().rows());
  w.u64(c.weights().cols());
  w.f64s(c.weights().data());
  w.f64s(c.bias());
}

pipeline::SoftmaxClassifier read_classifier(Reader& r) {
  auto classes = r.ints();
  const std::size_t rows = r.u64();
  const std::size_t cols = r.u64();
  Vec weights = r.f64s();
  Vec bias = r.f64s();
  if (weights.size() != rows * cols) throw CheckpointError("checkpoint: classifier weight count mismatch");
  try {
    return pipeline::SoftmaxClassifier(std::move(classes), numkit::Matrix(rows, cols, std::move(weights)),
                                       std::move(bias));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
}

}  // namespace

std::vector<std::uint8_t> serialize(const pipeline::TrainedModel& model) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kVersion);
  w.str(model.config_hash);

  w.ints(model.split.seen);
  w.ints(model.split.unseen);

  const auto& fe = model.front_end;
  const auto& layout = fe.layout();
  w.u8(fe.input() == pipeline::FrontEnd::Input::sequence ? 0 : 1);
  w.u64(fe.joints());
  w.u64(fe.coords());
  w.u64(fe.frames());
  w.u64(fe.input_dim());
  w.u8(fe.enabled() ? 1 : 0);
  w.u8(layout.mode == freq::EnhanceMode::piecewise ? 0 : 1);
  w.u64(layout.low_threshold);
  w.f64(layout.adjust);
  w.f64(layout.floor);
  w.sizes(layout.split_points);
  w.f64s(layout.weights);
  w.f64s(fe.raw_weights());
  w.u64(fe.input() == pipeline::FrontEnd::Input::sequence ? fe.feature_dim() : 0);
  w.u64(fe.seed());

  w.u64(model.vae.latent_dim);
  for (const numkit::Mlp* m : model.vae.networks()) write_mlp(w, *m);

  write_classifier(w, model.seen_classifier);
  write_classifier(w, model.unseen_classifier);

  w.f64s(model.gate.weights());
  w.f64(model.gate.bias());
  w.f64(model.gate.regularization());

  const std::uint64_t sum = config::fnv1a64(
      std::string_view(reinterpret_cast<const char*>(w.bytes().data()), w.bytes().size()));
  w.u64(sum);
  return std::move(w.bytes());
}

pipeline::TrainedModel deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) + 4 + 8) throw CheckpointError("checkpoint: file too short");
  Reader r(bytes.data(), bytes.size());
  r.expect_bytes(kMagic, sizeof(kMagic));
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kVersion) + ")");
  }
  const std::size_t body = bytes.size() - 8;
  const std::uint64_t expected =
      config::fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), body));
  Reader tail(bytes.data() + body, 8);
  if (tail.u64() != expected) throw CheckpointError("checkpoint: checksum mismatch (file corrupted)");

  pipeline::TrainedModel m;
  m.config_hash = r.str();
  m.split.seen = r.ints();
  m.split.unseen = r.ints();
  m.split.config_hash = m.config_hash;

  const auto input = r.u8() == 0 ? pipeline::FrontEnd::Input::sequence : pipeline::FrontEnd::Input::vector;
  const std::size_t joints = r.u64();
  const std::size_t coords = r.u64();
  const std::size_t frames = r.u64();
  const std::size_t input_dim = r.u64();
  const bool enabled = r.u8() != 0;
  freq::EnhancementConfig layout;
  layout.mode = r.u8() == 0 ? freq::EnhanceMode::piecewise : freq::EnhanceMode::learnable_only;
  layout.low_threshold = r.u64();
  layout.adjust = r.f64();
  layout.floor = r.f64();
  layout.split_points = r.sizes();
  layout.weights = r.f64s();
  Vec raw = r.f64s();
  const std::size_t output_dim = r.u64();
  const std::uint64_t seed = r.u64();
  try {
    m.front_end = pipeline::FrontEnd::restore(input, joints, coords, frames, input_dim, std::move(layout), enabled,
                                              std::move(raw), output_dim, seed);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: front end: ") + e.what());
  }

  m.vae.latent_dim = r.u64();
  for (numkit::Mlp* net : m.vae.networks()) *net = read_mlp(r);

  m.seen_classifier = read_classifier(r);
  m.unseen_classifier = read_classifier(r);

  Vec gw = r.f64s();
  const double gb = r.f64();
  const double gc = r.f64();
  m.gate = pipeline::GateModel(std::move(gw), gb, gc);
  if (r.position() != body) throw CheckpointError("checkpoint: trailing bytes before checksum");
  return m;
}

void save(const std::filesystem::path& path, const pipeline::TrainedModel& model) {
  const auto bytes = serialize(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

pipeline::TrainedModel load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace fsvae::checkpoint
