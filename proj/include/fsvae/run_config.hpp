#pragma once

// Flat "key = value" run configuration with typed validation and a stable
// hash over the canonical form. Lines starting with '#' are comments.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsvae/frequency.hpp"
#include "fsvae/losses.hpp"
#include "fsvae/pipeline.hpp"
#include "fsvae/synthbench.hpp"

namespace fsvae::config {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class RunConfig {
 public:
  /// Every key at its default.
  RunConfig();

  static RunConfig parse(std::istream& in, const std::string& source = "<config>");
  static RunConfig load(const std::filesystem::path& path);

  /// Sets one key from text; throws ConfigError on an unknown key or a value
  /// of the wrong type.
  void set(const std::string& key, const std::string& value);

  const std::string& raw(const std::string& key) const;
  bool has_key(const std::string& key) const;

  std::int64_t get_int(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::size_t> get_sizes(const std::string& key) const;
  std::vector<std::string> get_strings(const std::string& key) const;

  /// Sorted "key = value" lines.
  std::string canonical() const;
  /// 16 hex digits of FNV-1a 64 over canonical().
  std::string hash() const;

  /// Cross-checks every section. `frames` (or feature length for vector
  /// data) is checked against the band layout when non-zero.
  void validate(std::size_t frames = 0) const;

  synth::SynthConfig synth() const;
  losses::LossConfig loss() const;
  losses::AlignmentLoss alignment() const;
  /// Band layout for a signal of the given length.
  freq::EnhancementConfig enhancement_layout(std::size_t length) const;
  bool enhancement_enabled() const;
  pipeline::PipelineConfig pipeline() const;
  std::uint64_t seed() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

}  // namespace fsvae::config
