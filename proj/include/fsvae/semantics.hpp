#pragma once

// Class-level text embeddings (action label, local description, global
// description) and their fusion into one unit-norm text feature.

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsvae/numkit.hpp"

namespace fsvae::semantics {

using numkit::Vec;

enum class EmbeddingKind { AL = 0, LD = 1, GD = 2 };

inline constexpr std::array<EmbeddingKind, 3> kAllKinds = {EmbeddingKind::AL, EmbeddingKind::LD, EmbeddingKind::GD};

const char* to_string(EmbeddingKind kind);
EmbeddingKind parse_kind(const std::string& text);

class SemanticError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EmbeddingRecord {
  int class_id = 0;
  EmbeddingKind kind = EmbeddingKind::AL;
  Vec vector;
};

class SemanticTable {
 public:
  /// Validates: no duplicates, every class has all three kinds, one
  /// dimension per kind, finite non-empty vectors.
  static SemanticTable from_records(const std::vector<EmbeddingRecord>& records);

  bool contains(int class_id) const { return entries_.count(class_id) != 0; }
  const Vec& vector(int class_id, EmbeddingKind kind) const;
  std::size_t dimension(EmbeddingKind kind) const { return dims_[static_cast<int>(kind)]; }
  std::size_t fused_dimension() const { return dims_[0] + dims_[1] + dims_[2]; }
  std::vector<int> class_ids() const;
  std::size_t size() const { return entries_.size(); }

  std::vector<EmbeddingRecord> records() const;

 private:
  std::map<int, std::array<Vec, 3>> entries_;
  std::array<std::size_t, 3> dims_{};
};

SemanticTable parse_embeddings(std::istream& in);
SemanticTable load_embeddings(const std::filesystem::path& path);

/// One JSON object per line: {"class_id":..,"kind":"AL","vector":[...]},
/// preceded by a {"meta":{"config_hash":..}} line. Readers skip meta lines.
void write_embeddings(std::ostream& out, const std::vector<EmbeddingRecord>& records,
                      const std::string& config_hash = {});
void write_embeddings(const std::filesystem::path& path, const std::vector<EmbeddingRecord>& records,
                      const std::string& config_hash = {});

struct FusedSemantic {
  int class_id = 0;
  Vec vector;
};

/// concat(AL, LD, GD) / ||concat(AL, LD, GD)||
Vec fuse_vectors(std::span<const double> al, std::span<const double> ld, std::span<const double> gd);
FusedSemantic fuse(const SemanticTable& table, int class_id);

/// Source of embeddings for a class description. No network-backed client
/// ships with the library; embedding files are the integration point.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual EmbeddingRecord embed(int class_id, EmbeddingKind kind, const std::string& text) = 0;
};

}  // namespace fsvae::semantics
