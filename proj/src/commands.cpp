#include "fsvae/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include <json.hpp>

#include "fsvae/checkpoint.hpp"
#include "fsvae/synthbench.hpp"

namespace fsvae::commands {

using config::ConfigError;
using config::RunConfig;
using nlohmann::json;
using numkit::Vec;

namespace {

std::string fmt(double v, const char* spec = "%.17g") {
  char buf[48];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw pipeline::DataError("cannot create output directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw pipeline::DataError("cannot write " + path.string());
  out << text;
  if (!out) throw pipeline::DataError("write failed for " + path.string());
}

}  // namespace

DataBundle load_data_dir(const fs::path& dir) {
  DataBundle b;
  b.data = pipeline::load_features(dir / kFeaturesFile);
  b.table = semantics::load_embeddings(dir / kEmbeddingsFile);
  b.split = pipeline::load_split(dir / kSplitFile);
  if (b.data.records.empty()) throw pipeline::DataError("feature file holds no records");
  b.data.validate(b.split);
  return b;
}

std::size_t signal_length(const pipeline::FeatureDataset& data) {
  if (data.records.empty()) throw pipeline::DataError("empty dataset");
  const auto& r = data.records.front();
  return r.has_sequence() ? r.sequence->frames() : r.vector.size();
}

pipeline::FrontEnd build_front_end(const RunConfig& cfg, const pipeline::FeatureDataset& data) {
  const std::size_t length = signal_length(data);
  const auto& first = data.records.front();
  auto layout = cfg.enhancement_layout(length);
  if (first.has_sequence()) {
    const auto& s = *first.sequence;
    return pipeline::FrontEnd::for_sequences(s.joints(), s.coords(), s.frames(), std::move(layout),
                                             cfg.enhancement_enabled(), cfg.get_size("encoder.dim"),
                                             cfg.get_u64("encoder.seed"));
  }
  return pipeline::FrontEnd::for_vectors(length, std::move(layout), cfg.enhancement_enabled());
}

pipeline::TrainOutcome train_from_config(const RunConfig& cfg, const DataBundle& bundle) {
  cfg.validate(signal_length(bundle.data));
  auto front = build_front_end(cfg, bundle.data);
  return pipeline::train_pipeline(bundle.data, bundle.split, bundle.table, std::move(front), cfg.pipeline(),
                                  cfg.seed(), cfg.hash());
}

// ---------------------------------------------------------------------------
// Transform checks
// ---------------------------------------------------------------------------

bool DctCheckReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const DctCheck& c) { return c.passed(); });
}

namespace {

// Forward / inverse transforms over an explicit basis so a corrupted basis
// can be pushed through the same checks.
struct Transform {
  bool corrupt = false;

  numkit::Matrix basis(std::size_t frames) const {
    numkit::Matrix m = freq::dct_basis(frames);
    if (corrupt && frames > 1) m(1, 0) += 1e-3;
    return m;
  }

  freq::Spectrum forward(const freq::MotionSequence& x) const {
    if (!corrupt) return freq::dct_forward(x);
    const auto b = basis(x.frames());
    freq::Spectrum out(x.joints(), x.coords(), x.frames());
    for (std::size_t k = 0; k < x.trajectories(); ++k) {
      const Vec c = numkit::matvec(b, x.trajectory(k));
      std::copy(c.begin(), c.end(), out.trajectory(k).begin());
    }
    return out;
  }

  freq::MotionSequence inverse(const freq::Spectrum& c) const {
    if (!corrupt) return freq::idct(c);
    const auto b = basis(c.frames());
    freq::MotionSequence out(c.joints(), c.coords(), c.frames());
    for (std::size_t k = 0; k < c.trajectories(); ++k) {
      const Vec x = numkit::matvec_transposed(b, c.trajectory(k));
      std::copy(x.begin(), x.end(), out.trajectory(k).begin());
    }
    return out;
  }

  freq::MotionSequence enhance(const freq::MotionSequence& x, const freq::EnhancementConfig& cfg) const {
    if (!corrupt) return freq::enhance_sequence(x, cfg);
    return inverse(freq::enhance(forward(x), cfg));
  }
};

freq::EnhancementConfig random_layout(std::size_t frames, numkit::Rng& rng) {
  const auto mode = rng.uniform() < 0.5 ? freq::EnhanceMode::piecewise : freq::EnhanceMode::learnable_only;
  const std::size_t phi = rng.uniform_index(frames);
  const double b = rng.uniform(1.0, 2.0 * static_cast<double>(frames));
  freq::EnhancementConfig cfg;
  if (rng.uniform() < 0.5 || frames < 3) {
    cfg = freq::EnhancementConfig::per_coefficient(frames, phi, b, 0.5, mode);
  } else {
    std::vector<std::size_t> cuts;
    const std::size_t n = 1 + rng.uniform_index(std::min<std::size_t>(6, frames - 1));
    for (std::size_t i = 0; i < n; ++i) cuts.push_back(1 + rng.uniform_index(frames - 1));
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    cfg = freq::EnhancementConfig::with_cuts(frames, cuts, phi, b, 0.5, mode);
  }
  for (double& w : cfg.weights) w = rng.uniform();
  return cfg;
}

}  // namespace

DctCheckReport run_dct_checks(const std::vector<freq::MotionSequence>& inputs, const DctCheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  numkit::Rng rng({options.seed, 0x646374});
  std::vector<freq::MotionSequence> generated;
  if (inputs.empty()) {
    for (std::size_t n = 0; n < options.random_sequences; ++n) {
      freq::MotionSequence s(options.joints, options.coords, options.frames);
      for (double& v : s.values()) v = rng.normal();
      generated.push_back(std::move(s));
    }
  }
  const auto& seqs = inputs.empty() ? generated : inputs;
  if (seqs.empty()) throw pipeline::DataError("dct check: no input sequences");
  const Transform t{options.corrupt_basis};

  DctCheck roundtrip{"round-trip", 0.0, 1e-9, 0};
  DctCheck parseval{"parseval", 0.0, 1e-12, 0};
  DctCheck ortho{"orthonormality", 0.0, 1e-12, 0};
  DctCheck identity{"identity-enhancement", 0.0, 1e-12, 0};
  DctCheck redistribution{"redistribution", 0.0, 1e-9, 0};

  std::vector<std::size_t> lengths;
  for (const auto& s : seqs) {
    const auto spec = t.forward(s);
    const auto back = t.inverse(spec);
    for (std::size_t i = 0; i < s.values().size(); ++i) {
      roundtrip.max_error = std::max(roundtrip.max_error, std::abs(back.values()[i] - s.values()[i]));
    }
    ++roundtrip.cases;
    const double e_time = freq::signal_energy(s);
    const double e_freq = freq::signal_energy(spec);
    if (e_time > 0.0) parseval.max_error = std::max(parseval.max_error, std::abs(e_time - e_freq) / e_time);
    ++parseval.cases;

    auto zero = freq::EnhancementConfig::per_coefficient(s.frames(), s.frames() / 2, 30.0, 0.5);
    std::fill(zero.weights.begin(), zero.weights.end(), 0.0);
    const auto same = t.enhance(s, zero);
    for (std::size_t i = 0; i < s.values().size(); ++i) {
      identity.max_error = std::max(identity.max_error, std::abs(same.values()[i] - s.values()[i]));
    }
    ++identity.cases;
    if (std::find(lengths.begin(), lengths.end(), s.frames()) == lengths.end()) lengths.push_back(s.frames());
  }

  for (std::size_t f : lengths) {
    const auto b = t.basis(f);
    const auto gram = numkit::matmul(b, numkit::transpose(b));
    for (std::size_t i = 0; i < f; ++i) {
      for (std::size_t j = 0; j < f; ++j) {
        ortho.max_error = std::max(ortho.max_error, std::abs(gram(i, j) - (i == j ? 1.0 : 0.0)));
      }
    }
    ++ortho.cases;
  }

  for (std::size_t n = 0; n < options.redistribution_configs; ++n) {
    const auto& s = seqs[n % seqs.size()];
    const auto layout = random_layout(s.frames(), rng);
    const double expected = freq::redistributed_energy(t.forward(s), layout);
    const double actual = freq::signal_energy(t.enhance(s, layout));
    const double scale = std::max(expected, 1e-300);
    redistribution.max_error = std::max(redistribution.max_error, std::abs(actual - expected) / scale);
    ++redistribution.cases;
  }

  DctCheckReport report;
  report.checks = {roundtrip, parseval, ortho, identity, redistribution};
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---------------------------------------------------------------------------
// Loss benchmark
// ---------------------------------------------------------------------------

double LossBenchResult::mean(std::size_t rate, std::size_t loss) const {
  const auto& v = accuracy.at(rate).at(loss);
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double a : v) s += a;
  return s / static_cast<double>(v.size());
}

LossBenchResult run_loss_bench(const RunConfig& cfg, std::ostream* progress) {
  cfg.validate();
  LossBenchResult res;
  res.config_hash = cfg.hash();
  res.noise_rates = cfg.get_doubles("bench.noise_rates");
  for (const auto& name : cfg.get_strings("bench.losses")) res.losses.push_back(losses::parse_alignment_loss(name));
  const std::size_t n_seeds = cfg.get_size("bench.seeds");
  for (std::size_t i = 0; i < n_seeds; ++i) res.seeds.push_back(cfg.seed() + i);

  res.accuracy.assign(res.noise_rates.size(),
                      std::vector<std::vector<double>>(res.losses.size(), std::vector<double>(n_seeds, 0.0)));
  for (std::size_t r = 0; r < res.noise_rates.size(); ++r) {
    for (std::size_t s = 0; s < n_seeds; ++s) {
      RunConfig run = cfg;
      run.set("seed", std::to_string(res.seeds[s]));
      run.set("synth.label_noise", fmt(res.noise_rates[r]));
      const auto gen = synth::generate(run.synth());
      const DataBundle bundle{gen.data, gen.table, gen.split};
      for (std::size_t l = 0; l < res.losses.size(); ++l) {
        run.set("loss.kind", losses::to_string(res.losses[l]));
        const auto outcome = train_from_config(run, bundle);
        res.accuracy[r][l][s] = pipeline::evaluate_zsl(outcome.model, bundle.data).accuracy;
        if (progress != nullptr) {
          *progress << "noise " << fmt(res.noise_rates[r], "%g") << " seed " << res.seeds[s] << " "
                    << losses::to_string(res.losses[l]) << ": " << fmt(res.accuracy[r][l][s], "%.4f") << '\n';
        }
      }
    }
  }
  return res;
}

void write_loss_bench_csv(std::ostream& out, const LossBenchResult& result) {
  out << "# config_hash=" << result.config_hash << " seeds=" << result.seeds.size() << " metric=mean_unseen_zsl\n";
  out << "noise_rate";
  for (auto l : result.losses) out << ',' << losses::to_string(l);
  out << '\n';
  for (std::size_t r = 0; r < result.noise_rates.size(); ++r) {
    out << fmt(result.noise_rates[r]);
    for (std::size_t l = 0; l < result.losses.size(); ++l) out << ',' << fmt(result.mean(r, l));
    out << '\n';
  }
}

std::string loss_bench_to_json(const LossBenchResult& result) {
  json j;
  j["config_hash"] = result.config_hash;
  j["seeds"] = result.seeds;
  j["noise_rates"] = result.noise_rates;
  json rows = json::array();
  for (std::size_t r = 0; r < result.noise_rates.size(); ++r) {
    json row;
    row["noise_rate"] = result.noise_rates[r];
    for (std::size_t l = 0; l < result.losses.size(); ++l) {
      const char* name = losses::to_string(result.losses[l]);
      row["per_seed"][name] = result.accuracy[r][l];
      row["mean"][name] = result.mean(r, l);
    }
    rows.push_back(std::move(row));
  }
  j["rows"] = std::move(rows);
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  cfg.validate();
  const auto gen = synth::generate(cfg.synth());
  ensure_dir(out_dir);
  const std::string hash = cfg.hash();
  auto data = gen.data;
  data.config_hash = hash;
  auto split = gen.split;
  split.config_hash = hash;
  pipeline::write_features(out_dir / kFeaturesFile, data);
  semantics::write_embeddings(out_dir / kEmbeddingsFile, gen.embeddings, hash);
  pipeline::write_split(out_dir / kSplitFile, split);
  log << "wrote " << data.records.size() << " records (" << data.count(pipeline::Partition::train) << " train, "
      << data.count(pipeline::Partition::test_seen) << " test_seen, " << data.count(pipeline::Partition::test_unseen)
      << " test_unseen), " << gen.embeddings.size() << " embeddings, " << split.seen.size() << "/"
      << split.unseen.size() << " split to " << out_dir.string() << " [config " << hash << "]\n";
  return kExitOk;
}

int cmd_dct_check(const std::optional<fs::path>& input, const DctCheckOptions& options,
                  const std::optional<fs::path>& report_path, std::ostream& log) {
  std::vector<freq::MotionSequence> seqs;
  if (input) {
    const auto data = pipeline::load_features(*input);
    for (const auto& r : data.records) {
      if (r.has_sequence()) {
        seqs.push_back(*r.sequence);
      } else {
        seqs.emplace_back(1, 1, r.vector.size(), r.vector);
      }
    }
    if (seqs.empty()) throw pipeline::DataError("dct check: " + input->string() + " holds no records");
  }
  const auto report = run_dct_checks(seqs, options);
  json j;
  j["passed"] = report.passed();
  j["seconds"] = report.seconds;
  j["corrupt_basis"] = options.corrupt_basis;
  for (const auto& c : report.checks) {
    log << (c.passed() ? "PASS " : "FAIL ") << c.name << "  max_error=" << fmt(c.max_error, "%.3e")
        << "  tolerance=" << fmt(c.tolerance, "%.0e") << "  cases=" << c.cases << '\n';
    j["checks"].push_back({{"name", c.name},
                           {"max_error", c.max_error},
                           {"tolerance", c.tolerance},
                           {"cases", c.cases},
                           {"passed", c.passed()}});
  }
  log << (report.passed() ? "all checks passed" : "transform checks FAILED") << " in " << fmt(report.seconds, "%.3f")
      << " s\n";
  if (report_path) write_text(*report_path, j.dump(2) + "\n");
  return report.passed() ? kExitOk : kExitFailure;
}

void write_loss_log(std::ostream& out, const std::vector<pipeline::EpochLog>& log, const std::string& config_hash) {
  out << "# config_hash=" << config_hash << '\n';
  out << "epoch,steps,total,vae_skeleton,vae_text,reconstruction_skeleton,reconstruction_text,kl_skeleton,kl_text,"
         "alignment\n";
  for (const auto& e : log) {
    const auto& m = e.mean;
    out << e.epoch << ',' << e.steps << ',' << fmt(m.total) << ',' << fmt(m.vae_skeleton) << ',' << fmt(m.vae_text)
        << ',' << fmt(m.reconstruction_skeleton) << ',' << fmt(m.reconstruction_text) << ',' << fmt(m.kl_skeleton)
        << ',' << fmt(m.kl_text) << ',' << fmt(m.alignment) << '\n';
  }
}

int cmd_train(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out_dir, std::ostream& log,
              std::ostream& warn) {
  cfg.validate();
  const double noise_rate = cfg.get_double("train.label_noise");
  DataBundle bundle = load_data_dir(data_dir);
  const std::string hash = cfg.hash();
  if (!bundle.data.config_hash.empty() && bundle.data.config_hash != hash) {
    warn << "warning: data was generated under config " << bundle.data.config_hash << ", training under " << hash
         << '\n';
  }
  if (noise_rate > 0.0) {
    numkit::Rng rng({cfg.seed(), 6});
    bundle.data = synth::inject_label_noise(bundle.data, noise_rate, rng);
  }
  ensure_dir(out_dir);
  const auto outcome = train_from_config(cfg, bundle);
  for (const auto& w : outcome.diagnostics.warnings) warn << "warning: " << w << '\n';

  checkpoint::save(out_dir / "checkpoint.bin", outcome.model);
  {
    std::ofstream out(out_dir / "loss_log.csv");
    if (!out) throw pipeline::DataError("cannot write " + (out_dir / "loss_log.csv").string());
    write_loss_log(out, outcome.log, hash);
  }
  json summary;
  summary["config_hash"] = hash;
  summary["data_config_hash"] = bundle.data.config_hash;
  summary["epochs"] = outcome.log.size();
  summary["noise_rate"] = noise_rate;
  summary["warnings"] = outcome.diagnostics.warnings;
  if (!outcome.log.empty()) {
    const auto& m = outcome.log.back().mean;
    summary["final_loss"] = {{"total", m.total}, {"vae_skeleton", m.vae_skeleton}, {"vae_text", m.vae_text},
                             {"alignment", m.alignment}};
  }
  write_text(out_dir / "train_summary.json", summary.dump(2) + "\n");
  log << "trained " << outcome.log.size() << " epochs";
  if (!outcome.log.empty()) log << ", final loss " << fmt(outcome.log.back().mean.total, "%.6g");
  log << "; checkpoint in " << (out_dir / "checkpoint.bin").string() << " [config " << hash << "]\n";
  return kExitOk;
}

int cmd_eval(const fs::path& checkpoint_path, const fs::path& data_dir, const std::string& mode,
             const fs::path& report_path, const std::optional<std::string>& expected_hash, std::ostream& log,
             std::ostream& warn) {
  if (mode != "zsl" && mode != "gzsl") throw ConfigError("--mode must be zsl or gzsl, got '" + mode + "'");
  const auto model = checkpoint::load(checkpoint_path);
  const auto bundle = load_data_dir(data_dir);
  if (expected_hash && *expected_hash != model.config_hash) {
    warn << "warning: config hash mismatch: checkpoint " << model.config_hash << ", config " << *expected_hash << '\n';
  }
  if (!bundle.data.config_hash.empty() && bundle.data.config_hash != model.config_hash) {
    warn << "warning: config hash mismatch: checkpoint " << model.config_hash << ", data " << bundle.data.config_hash
         << '\n';
  }
  auto sorted = [](std::vector<int> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  if (sorted(bundle.split.seen) != sorted(model.split.seen) ||
      sorted(bundle.split.unseen) != sorted(model.split.unseen)) {
    throw pipeline::DataError("data split does not match the split the checkpoint was trained on");
  }

  pipeline::EvalReport report;
  report.mode = mode;
  report.config_hash = model.config_hash;
  report.zsl = pipeline::evaluate_zsl(model, bundle.data);
  log << "zsl unseen accuracy " << fmt(report.zsl->accuracy, "%.4f") << " (" << report.zsl->correct << "/"
      << report.zsl->total << ")\n";
  if (mode == "gzsl") {
    report.gzsl = pipeline::evaluate_gzsl(model, bundle.data);
    log << "gzsl seen " << fmt(report.gzsl->seen.accuracy, "%.4f") << " unseen "
        << fmt(report.gzsl->unseen.accuracy, "%.4f") << " H " << fmt(report.gzsl->harmonic, "%.4f") << '\n';
  }
  if (report_path.has_parent_path()) ensure_dir(report_path.parent_path());
  write_text(report_path, pipeline::report_to_json(report) + "\n");
  log << "report written to " << report_path.string() << '\n';
  return kExitOk;
}

int cmd_loss_bench(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  const auto result = run_loss_bench(cfg, &log);
  ensure_dir(out_dir);
  {
    std::ofstream out(out_dir / "loss_bench.csv");
    if (!out) throw pipeline::DataError("cannot write " + (out_dir / "loss_bench.csv").string());
    write_loss_bench_csv(out, result);
  }
  write_text(out_dir / "loss_bench.json", loss_bench_to_json(result) + "\n");
  log << "\nmean unseen accuracy over " << result.seeds.size() << " seeds\n";
  log << "noise";
  for (auto l : result.losses) log << '\t' << losses::to_string(l);
  log << '\n';
  for (std::size_t r = 0; r < result.noise_rates.size(); ++r) {
    log << fmt(result.noise_rates[r], "%g");
    for (std::size_t l = 0; l < result.losses.size(); ++l) log << '\t' << fmt(result.mean(r, l), "%.4f");
    log << '\n';
  }
  return kExitOk;
}

int cmd_export_latents(const fs::path& checkpoint_path, const fs::path& data_dir, const fs::path& out_path,
                       std::ostream& log) {
  const auto model = checkpoint::load(checkpoint_path);
  const auto bundle = load_data_dir(data_dir);
  if (out_path.has_parent_path()) ensure_dir(out_path.parent_path());
  pipeline::export_latents(model.vae, model.front_end, bundle.data, out_path, model.config_hash);
  log << "exported " << bundle.data.records.size() << " latents of dimension " << model.vae.latent_dim << " to "
      << out_path.string() << '\n';
  return kExitOk;
}

}  // namespace fsvae::commands
