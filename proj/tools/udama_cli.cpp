#include "CLI11.hpp"

#include "udama/bench.hpp"
#include "udama/checkpoint.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

using namespace udama;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

ExperimentConfig resolve(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
  if (g.seed) cfg.seeds = {*g.seed};
  if (!g.out.empty()) cfg.output_dir = g.out;
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  return cfg;
}

/// `<out>/<name>.records.jsonl` plus its timing sidecar.
void save(const ExperimentConfig& cfg, const std::string& name, const std::vector<RunRecord>& recs) {
  const fs::path records = cfg.output_dir / (name + ".records.jsonl");
  const fs::path timing = cfg.output_dir / (name + ".timing.jsonl");
  std::ofstream rs(records, std::ios::binary), ts(timing, std::ios::binary);
  if (!rs || !ts) throw std::runtime_error("cannot write into " + cfg.output_dir.string());
  write_records(rs, recs);
  write_timings(ts, recs);
  std::size_t failed = 0;
  for (const auto& r : recs) failed += r.ok() ? 0 : 1;
  std::printf("%zu records (%zu failed) -> %s\n", recs.size(), failed, records.string().c_str());
}

void write_cohort_csv(const SampleSet& s, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "row";
  for (const auto& f : s.meta_fields) os << ',' << f;
  os << ",vo2max\n";
  char buf[32];
  for (Eigen::Index i = 0; i < s.M.rows(); ++i) {
    os << i;
    for (Eigen::Index j = 0; j < s.M.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.6f", s.M(i, j));
      os << ',' << buf;
    }
    std::snprintf(buf, sizeof buf, "%.6f", s.y(i));
    os << ',' << buf << '\n';
  }
}

std::vector<RunRecord> timed(const char* what, const std::function<std::vector<RunRecord>()>& f) {
  const auto t0 = std::chrono::steady_clock::now();
  auto recs = f();
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s: %.1f s\n", what, s);
  return recs;
}

std::vector<fs::path> default_record_files(const fs::path& dir) {
  std::vector<fs::path> files;
  if (fs::is_directory(dir))
    for (const auto& e : fs::directory_iterator(dir)) {
      const std::string n = e.path().filename().string();
      if (n.size() > 14 && n.ends_with(".records.jsonl")) files.push_back(e.path());
    }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UDAMA experiment harness: synthetic cohorts, adaptation, baselines and reports"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config, "key = value configuration file")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed_value, "run with this single seed instead of the configured list");
  app.add_option("--out", g.out, "output directory (overrides output_dir)");
  app.add_flag_callback(
      "--list-keys",
      [] {
        for (const auto& k : config_keys()) std::printf("%-24s %-28s %s\n", k.key.c_str(), k.default_value.c_str(), k.doc.c_str());
        std::exit(0);
      },
      "print every configuration key with its default and exit");

  auto* synth = app.add_subcommand("synth", "generate and process the source and target cohorts");
  auto* pre = app.add_subcommand("pretrain", "source-only pretraining on silver labels");
  std::string pre_kind = "pretrain";
  pre->add_option("--kind", pre_kind, "pretrain or autoencoder")->check(CLI::IsMember({"pretrain", "autoencoder"}));
  auto* adapt = app.add_subcommand("adapt", "cross-validated UDAMA");
  auto* base = app.add_subcommand("baseline", "cross-validated baseline");
  std::string method;
  base->add_option("--method", method, "baseline name, e.g. transfer, deep_coral, dann")->required();
  auto* sweep = app.add_subcommand("sweep", "UDAMA injection-ratio sweep");
  auto* ablate = app.add_subcommand("ablate", "UDAMA with one discriminator removed");
  auto* stress = app.add_subcommand("stress", "source label-shift stress test, UDAMA vs DANN");
  auto* report = app.add_subcommand("report", "summary tables and histogram data from records files");
  std::vector<std::string> inputs;
  report->add_option("records", inputs, "records files (default: every *.records.jsonl in the output directory)");

  CLI11_PARSE(app, argc, argv);
  if (*seed_opt) g.seed = seed_value;

  try {
    const ExperimentConfig cfg = resolve(g);
    PretrainCache cache(cfg.output_dir / "checkpoints");

    if (*synth) {
      const Fixture f = build_fixture(cfg);
      write_cohort_csv(f.source, cfg.output_dir / "source.csv");
      write_cohort_csv(f.target, cfg.output_dir / "target.csv");
      std::printf("source n=%zu mean %.2f sd %.2f | target n=%zu mean %.2f sd %.2f | T=%zu\n", f.source.size(),
                  f.source.y.mean(), std::sqrt((f.source.y.array() - f.source.y.mean()).square().mean()), f.target.size(),
                  f.target.y.mean(), std::sqrt((f.target.y.array() - f.target.y.mean()).square().mean()),
                  f.target.X.steps());
    } else if (*pre) {
      const Fixture f = build_fixture(cfg);
      for (std::uint64_t s : cfg.seeds) {
        cache.get(cfg, f, {0.0, 0.0}, s, pre_kind);
        std::printf("%s\n", cache.checkpoint_path(cfg, {0.0, 0.0}, s, pre_kind).string().c_str());
      }
    } else if (*adapt) {
      save(cfg, "udama", timed("adapt", [&] { return run_cv(cfg, Method::udama(), &cache); }));
    } else if (*base) {
      const Method m = Method::parse(method);
      save(cfg, m.name(), timed(method.c_str(), [&] { return run_cv(cfg, m, &cache); }));
    } else if (*sweep) {
      save(cfg, "sweep", timed("sweep", [&] { return injection_sweep(cfg, &cache); }));
    } else if (*ablate) {
      save(cfg, "ablation", timed("ablate", [&] { return ablation(cfg, &cache); }));
    } else if (*stress) {
      save(cfg, "stress", timed("stress", [&] { return stress_test(cfg, &cache); }));
    } else if (*report) {
      std::vector<fs::path> files(inputs.begin(), inputs.end());
      if (files.empty()) files = default_record_files(cfg.output_dir);
      std::vector<RunRecord> all;
      for (const auto& p : files) {
        std::ifstream is(p, std::ios::binary);
        if (!is) throw std::runtime_error("cannot read " + p.string());
        auto recs = read_records(is);
        all.insert(all.end(), recs.begin(), recs.end());
      }
      const fs::path dir = cfg.output_dir / "report";
      fs::create_directories(dir);
      make_report(all, dir);
      std::printf("%zu records from %zu files -> %s\n", all.size(), files.size(), dir.string().c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
