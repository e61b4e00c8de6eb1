#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fsvae/checkpoint.hpp"
#include "fsvae/commands.hpp"
#include "fsvae/run_config.hpp"

namespace {

using fsvae::config::ConfigError;
using fsvae::config::RunConfig;
namespace cmd = fsvae::commands;

struct ConfigFlags {
  std::string path;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", path, "key = value run configuration file");
    app->add_option("--seed", seed, "Override the seed key");
    app->add_option("--set", overrides, "Override one key, as key=value (repeatable)");
  }

  RunConfig build() const {
    RunConfig cfg = path.empty() ? RunConfig() : RunConfig::load(path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) cfg.set("seed", std::to_string(*seed));
    return cfg;
  }
};

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency-enhanced cross-modal VAE for zero-shot skeleton action recognition"};
  app.require_subcommand(1);

  ConfigFlags synth_cfg;
  std::string synth_out = "data";
  std::optional<double> synth_noise;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic skeleton dataset with class embeddings");
  synth_cfg.attach(synth);
  synth->add_option("--out", synth_out, "Output data directory")->capture_default_str();
  synth->add_option("--noise-rate", synth_noise, "Share of training labels to corrupt");

  std::string dct_input;
  std::string dct_out;
  cmd::DctCheckOptions dct_opts;
  auto* dct = app.add_subcommand("dct-check", "Verify transform and enhancement invariants");
  dct->add_option("--input", dct_input, "features.jsonl to check instead of random sequences");
  dct->add_option("--seed", dct_opts.seed, "Seed for random inputs and layouts")->capture_default_str();
  dct->add_option("--out", dct_out, "Write the report as JSON");
  dct->add_flag("--corrupt-basis", dct_opts.corrupt_basis, "Perturb the basis; the checks must fail");

  ConfigFlags train_cfg;
  std::string train_data = "data";
  std::string train_out = "run";
  std::string train_loss;
  std::optional<double> train_noise;
  auto* train = app.add_subcommand("train", "Run stages 2 to 4 and write a checkpoint");
  train_cfg.attach(train);
  train->add_option("--data", train_data, "Data directory")->capture_default_str();
  train->add_option("--out", train_out, "Output directory")->capture_default_str();
  train->add_option("--loss", train_loss, "Alignment loss: calibrated, t1, t2, t3 or t4");
  train->add_option("--noise-rate", train_noise, "Share of training labels to corrupt before training");

  std::string eval_ckpt = "run/checkpoint.bin";
  std::string eval_data = "data";
  std::string eval_mode = "zsl";
  std::string eval_out = "run/report.json";
  std::string eval_config;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint under the ZSL or GZSL protocol");
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->capture_default_str();
  eval->add_option("--data", eval_data, "Data directory")->capture_default_str();
  eval->add_option("--mode", eval_mode, "zsl or gzsl")->capture_default_str();
  eval->add_option("--out", eval_out, "Report file")->capture_default_str();
  eval->add_option("--config", eval_config, "Config expected to match the checkpoint");

  ConfigFlags bench_cfg;
  std::string bench_out = "bench";
  std::string bench_loss;
  std::string bench_noise;
  auto* bench = app.add_subcommand("loss-bench", "Compare alignment losses across label-noise rates and seeds");
  bench_cfg.attach(bench);
  bench->add_option("--out", bench_out, "Output directory")->capture_default_str();
  bench->add_option("--loss", bench_loss, "Comma-separated losses to compare");
  bench->add_option("--noise-rate", bench_noise, "Comma-separated noise rates");

  std::string lat_ckpt = "run/checkpoint.bin";
  std::string lat_data = "data";
  std::string lat_out = "run/latents.tsv";
  auto* lat = app.add_subcommand("export-latents", "Write skeleton posterior means for every record");
  lat->add_option("--checkpoint", lat_ckpt, "Checkpoint file")->capture_default_str();
  lat->add_option("--data", lat_data, "Data directory")->capture_default_str();
  lat->add_option("--out", lat_out, "Latent file")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? cmd::kExitOk : cmd::kExitUsage;
  }

  try {
    if (synth->parsed()) {
      RunConfig cfg = synth_cfg.build();
      if (synth_noise) cfg.set("synth.label_noise", exact(*synth_noise));
      return cmd::cmd_synth(cfg, synth_out, std::cout);
    }
    if (dct->parsed()) {
      std::optional<cmd::fs::path> input;
      if (!dct_input.empty()) input = dct_input;
      std::optional<cmd::fs::path> report;
      if (!dct_out.empty()) report = dct_out;
      return cmd::cmd_dct_check(input, dct_opts, report, std::cout);
    }
    if (train->parsed()) {
      RunConfig cfg = train_cfg.build();
      if (!train_loss.empty()) cfg.set("loss.kind", train_loss);
      if (train_noise) cfg.set("train.label_noise", exact(*train_noise));
      return cmd::cmd_train(cfg, train_data, train_out, std::cout, std::cerr);
    }
    if (eval->parsed()) {
      std::optional<std::string> expected;
      if (!eval_config.empty()) expected = RunConfig::load(eval_config).hash();
      return cmd::cmd_eval(eval_ckpt, eval_data, eval_mode, eval_out, expected, std::cout, std::cerr);
    }
    if (bench->parsed()) {
      RunConfig cfg = bench_cfg.build();
      if (!bench_loss.empty()) cfg.set("bench.losses", bench_loss);
      if (!bench_noise.empty()) cfg.set("bench.noise_rates", bench_noise);
      return cmd::cmd_loss_bench(cfg, bench_out, std::cout);
    }
    if (lat->parsed()) return cmd::cmd_export_latents(lat_ckpt, lat_data, lat_out, std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return cmd::kExitUsage;
  } catch (const fsvae::pipeline::StageError& e) {
    std::cerr << "error in " << e.what() << '\n';
    return cmd::kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cmd::kExitFailure;
  }
  return cmd::kExitUsage;
}
