#pragma once

// The operations behind each fsvae subcommand. Every function writes its
// artifacts under the given paths and returns a process exit code; usage and
// config errors surface as config::ConfigError.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fsvae/frequency.hpp"
#include "fsvae/losses.hpp"
#include "fsvae/pipeline.hpp"
#include "fsvae/run_config.hpp"
#include "fsvae/semantics.hpp"

namespace fsvae::commands {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// File names inside a data directory.
inline constexpr const char* kFeaturesFile = "features.jsonl";
inline constexpr const char* kEmbeddingsFile = "embeddings.jsonl";
inline constexpr const char* kSplitFile = "split.json";

struct DataBundle {
  pipeline::FeatureDataset data;
  semantics::SemanticTable table;
  pipeline::SplitSpec split;
};

DataBundle load_data_dir(const fs::path& dir);

/// Signal length the enhancement layout runs over: frames for sequences,
/// feature length for vectors.
std::size_t signal_length(const pipeline::FeatureDataset& data);

/// Front end matching the data shape and the freq / encoder keys.
pipeline::FrontEnd build_front_end(const config::RunConfig& cfg, const pipeline::FeatureDataset& data);

/// Validates the config against the data and runs stages 2 to 4.
pipeline::TrainOutcome train_from_config(const config::RunConfig& cfg, const DataBundle& bundle);

// ---------------------------------------------------------------------------
// Transform checks
// ---------------------------------------------------------------------------

struct DctCheck {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t cases = 0;
  bool passed() const { return max_error < tolerance; }
};

struct DctCheckReport {
  std::vector<DctCheck> checks;
  double seconds = 0.0;
  bool passed() const;
};

struct DctCheckOptions {
  std::size_t random_sequences = 100;
  std::size_t joints = 25;
  std::size_t coords = 3;
  std::size_t frames = 64;
  std::size_t redistribution_configs = 50;
  std::uint64_t seed = 0;
  /// Perturbs one basis entry so the suite must fail.
  bool corrupt_basis = false;
};

/// Round-trip, Parseval, orthonormality, identity enhancement and energy
/// redistribution over `inputs`, or over random sequences when empty.
DctCheckReport run_dct_checks(const std::vector<freq::MotionSequence>& inputs, const DctCheckOptions& options);

// ---------------------------------------------------------------------------
// Loss benchmark
// ---------------------------------------------------------------------------

struct LossBenchResult {
  std::string config_hash;
  std::vector<double> noise_rates;
  std::vector<losses::AlignmentLoss> losses;
  std::vector<std::uint64_t> seeds;
  /// accuracy[rate][loss][seed], unseen ZSL accuracy.
  std::vector<std::vector<std::vector<double>>> accuracy;

  double mean(std::size_t rate, std::size_t loss) const;
};

/// For every noise rate and seed, generates one synthetic dataset and trains
/// one pipeline per alignment loss on it. Seeds run from cfg.seed() upward.
LossBenchResult run_loss_bench(const config::RunConfig& cfg, std::ostream* progress = nullptr);

void write_loss_bench_csv(std::ostream& out, const LossBenchResult& result);
std::string loss_bench_to_json(const LossBenchResult& result);

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_synth(const config::RunConfig& cfg, const fs::path& out_dir, std::ostream& log);

int cmd_dct_check(const std::optional<fs::path>& input, const DctCheckOptions& options,
                  const std::optional<fs::path>& report_path, std::ostream& log);

/// Writes checkpoint.bin, loss_log.csv and train_summary.json into out_dir.
/// A positive train.label_noise corrupts that share of training labels first.
int cmd_train(const config::RunConfig& cfg, const fs::path& data_dir, const fs::path& out_dir, std::ostream& log,
              std::ostream& warn);

/// `expected_hash` (from --config) is compared against the checkpoint.
int cmd_eval(const fs::path& checkpoint_path, const fs::path& data_dir, const std::string& mode,
             const fs::path& report_path, const std::optional<std::string>& expected_hash, std::ostream& log,
             std::ostream& warn);

int cmd_loss_bench(const config::RunConfig& cfg, const fs::path& out_dir, std::ostream& log);

int cmd_export_latents(const fs::path& checkpoint_path, const fs::path& data_dir, const fs::path& out_path,
                       std::ostream& log);

/// loss_log.csv body: a hash comment line, a header, one row per epoch.
void write_loss_log(std::ostream& out, const std::vector<pipeline::EpochLog>& log, const std::string& config_hash);

}  // namespace fsvae::commands
