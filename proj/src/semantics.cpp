#include "fsvae/semantics.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fsvae::semantics {

using nlohmann::json;

const char* to_string(EmbeddingKind kind) {
  switch (kind) {
    case EmbeddingKind::AL:
      return "AL";
    case EmbeddingKind::LD:
      return "LD";
    case EmbeddingKind::GD:
      return "GD";
  }
  return "?";
}

EmbeddingKind parse_kind(const std::string& text) {
  if (text == "AL") return EmbeddingKind::AL;
  if (text == "LD") return EmbeddingKind::LD;
  if (text == "GD") return EmbeddingKind::GD;
  throw SemanticError("unknown embedding kind '" + text + "'");
}

SemanticTable SemanticTable::from_records(const std::vector<EmbeddingRecord>& records) {
  SemanticTable table;
  std::map<int, std::array<bool, 3>> seen;
  std::array<bool, 3> dim_set{};
  for (const auto& rec : records) {
    const int k = static_cast<int>(rec.kind);
    if (rec.vector.empty()) {
      throw SemanticError("empty vector for (" + std::to_string(rec.class_id) + ", " + to_string(rec.kind) + ")");
    }
    if (!numkit::all_finite(rec.vector)) {
      throw SemanticError("non-finite vector for (" + std::to_string(rec.class_id) + ", " + to_string(rec.kind) + ")");
    }
    auto& flags = seen[rec.class_id];
    if (flags[k]) {
      throw SemanticError("duplicate record for (" + std::to_string(rec.class_id) + ", " + to_string(rec.kind) + ")");
    }
    flags[k] = true;
    if (!dim_set[k]) {
      table.dims_[k] = rec.vector.size();
      dim_set[k] = true;
    } else if (table.dims_[k] != rec.vector.size()) {
      throw SemanticError(std::string("inconsistent dimension for kind ") + to_string(rec.kind) + ": class " +
                          std::to_string(rec.class_id) + " has " + std::to_string(rec.vector.size()) +
                          ", expected " + std::to_string(table.dims_[k]));
    }
    table.entries_[rec.class_id][k] = rec.vector;
  }
  std::vector<std::string> missing;
  for (const auto& [cls, flags] : seen) {
    for (EmbeddingKind kind : kAllKinds) {
      if (!flags[static_cast<int>(kind)]) missing.push_back("(" + std::to_string(cls) + ", " + to_string(kind) + ")");
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing embedding records:";
    for (const auto& m : missing) msg += " " + m;
    throw SemanticError(msg);
  }
  return table;
}

const Vec& SemanticTable::vector(int class_id, EmbeddingKind kind) const {
  auto it = entries_.find(class_id);
  if (it == entries_.end()) throw SemanticError("no embeddings for class " + std::to_string(class_id));
  return it->second[static_cast<int>(kind)];
}

std::vector<int> SemanticTable::class_ids() const {
  std::vector<int> ids;
  ids.reserve(entries_.size());
  for (const auto& [cls, _] : entries_) ids.push_back(cls);
  return ids;
}

std::vector<EmbeddingRecord> SemanticTable::records() const {
  std::vector<EmbeddingRecord> out;
  for (const auto& [cls, vecs] : entries_) {
    for (EmbeddingKind kind : kAllKinds) out.push_back({cls, kind, vecs[static_cast<int>(kind)]});
  }
  return out;
}

SemanticTable parse_embeddings(std::istream& in) {
  std::vector<EmbeddingRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (j.contains("meta")) continue;
      EmbeddingRecord rec;
      rec.class_id = j.at("class_id").get<int>();
      rec.kind = parse_kind(j.at("kind").get<std::string>());
      rec.vector = j.at("vector").get<Vec>();
      records.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw SemanticError("embedding file line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return SemanticTable::from_records(records);
}

SemanticTable load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SemanticError("cannot open embedding file " + path.string());
  return parse_embeddings(in);
}

void write_embeddings(std::ostream& out, const std::vector<EmbeddingRecord>& records,
                      const std::string& config_hash) {
  json meta;
  meta["meta"]["config_hash"] = config_hash;
  out << meta.dump() << '\n';
  for (const auto& rec : records) {
    json j;
    j["class_id"] = rec.class_id;
    j["kind"] = to_string(rec.kind);
    j["vector"] = rec.vector;
    out << j.dump() << '\n';
  }
}

void write_embeddings(const std::filesystem::path& path, const std::vector<EmbeddingRecord>& records,
                      const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw SemanticError("cannot write embedding file " + path.string());
  write_embeddings(out, records, config_hash);
  if (!out) throw SemanticError("write failed for " + path.string());
}

Vec fuse_vectors(std::span<const double> al, std::span<const double> ld, std::span<const double> gd) {
  Vec out;
  out.reserve(al.size() + ld.size() + gd.size());
  out.insert(out.end(), al.begin(), al.end());
  out.insert(out.end(), ld.begin(), ld.end());
  out.insert(out.end(), gd.begin(), gd.end());
  const double n = numkit::norm(out);
  if (!(n > 0.0)) throw SemanticError("cannot normalise an all-zero semantic concatenation");
  for (double& v : out) v /= n;
  return out;
}

FusedSemantic fuse(const SemanticTable& table, int class_id) {
  return {class_id, fuse_vectors(table.vector(class_id, EmbeddingKind::AL), table.vector(class_id, EmbeddingKind::LD),
                                 table.vector(class_id, EmbeddingKind::GD))};
}

}  // namespace fsvae::semantics
