#pragma once

#include "udama/baselines.hpp"
#include "udama/features.hpp"
#include "udama/synthcohort.hpp"
#include "udama/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace udama {

inline constexpr int kRecordSchemaVersion = 1;

/// UDAMA or one of the baselines. The ablation arms are UDAMA with one
/// discriminator removed.
struct Method {
  enum class Arm { full, coarse_only, fine_only };
  std::optional<BaselineKind> baseline;  // empty: UDAMA
  Arm arm = Arm::full;

  static Method udama(Arm arm = Arm::full) { return {std::nullopt, arm}; }
  static Method of(BaselineKind k) { return {k, Arm::full}; }
  /// "udama", "udama_coarse_only", "udama_fine_only" or a BaselineKind name.
  static Method parse(const std::string& name);
  std::string name() const;
  bool operator==(const Method&) const = default;
};

struct ExperimentConfig {
  CohortSpec source = CohortSpec::fenland();
  CohortSpec target = CohortSpec::bbvs();
  std::size_t source_n = 2000;
  std::size_t target_n = 200;
  std::uint64_t data_seed = 0;
  double silver_slope = 0.85;
  double silver_bias = -2.3;
  double silver_r = 0.68;
  FeatureLayout layout;
  TrainConfig train;
  std::vector<Method> methods = {Method::udama(), Method::of(BaselineKind::transfer), Method::of(BaselineKind::dann)};
  std::size_t folds = 3;
  double split_train_frac = 0.7;
  std::vector<std::uint64_t> seeds = {1};
  double injection_frac = 0.10;  // used by run_cv and ablation
  std::vector<double> injection_ratios = {0.01, 0.05, 0.10, 0.30, 0.50, 1.00};
  std::vector<ShiftSpec> shifts = {{0.0, 0.0}, {-6.0, 1.0}, {8.0, 1.0}};
  double coral_weight = 1.0;
  WdgrlOptions wdgrl;
  std::filesystem::path output_dir = "runs";

  /// Throws std::invalid_argument naming the offending key.
  void validate() const;
};

/// One documented configuration key.
struct ConfigKey {
  std::string key;
  std::string default_value;
  std::string doc;
};
const std::vector<ConfigKey>& config_keys();

/// Flat `key = value` text; '#' starts a comment. Keys not listed in
/// config_keys() are rejected with std::invalid_argument naming the key, as
/// are unparsable values. Absent keys keep their defaults.
ExperimentConfig parse_config(std::istream& is);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Every key in config_keys() order, output_dir included.
std::string serialize_config(const ExperimentConfig& cfg);
/// FNV-1a 64 of the canonical serialization without output_dir, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

struct RunRecord {
  std::string experiment;  // "cv", "sweep", "ablation", "stress"
  std::string method;
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  double injection_frac = 0.0;         // of target train
  double injection_source_frac = 0.0;  // same count as a fraction of the source pool
  std::size_t injection_count = 0;
  double shift_offset = 0.0;
  double shift_noise = 0.0;
  double source_target_kl = kNotMeasured;  // stress runs only
  MetricRecord metrics;
  double coarse_acc = kNotMeasured;  // adversarial methods, at the returned epoch
  std::size_t best_epoch = 0;
  std::size_t stop_epoch = 0;
  std::string config_hash;
  std::string error;  // non-empty: the cell failed and carries no metrics
  std::vector<double> y_true, y_pred;
  double wall_time_s = 0.0;  // kept out of the records file, see write_records

  bool ok() const { return error.empty(); }
};

/// One JSON object per record with a schema_version field. Wall time is
/// excluded so identical runs give byte-identical files.
void write_records(std::ostream& os, const std::vector<RunRecord>& records);
/// (experiment, method, seed, fold, wall_time_s) lines.
void write_timings(std::ostream& os, const std::vector<RunRecord>& records);
std::vector<RunRecord> read_records(std::istream& is);

// ---- fixture --------------------------------------------------------------------

/// Processed source (silver, domain source) and target (gold, domain target)
/// sets; the feature scaler is fitted on the source only.
struct Fixture {
  SampleSet source;
  SampleSet target;
};
Fixture build_fixture(const ExperimentConfig& cfg);
/// Source labels shifted by `s`; inputs and target untouched.
Fixture shift_source(const Fixture& f, const ShiftSpec& s, std::uint64_t seed);
/// shift_source with the configuration's own shift seed; the form every
/// experiment and the pretrain cache use.
Fixture shifted_fixture(const ExperimentConfig& cfg, const Fixture& base, const ShiftSpec& s);

/// Seeded train/test partition of the target set for one (seed, fold).
struct FoldSplit {
  std::vector<std::size_t> train, test;  // sorted, disjoint, covering 0..n-1
};
FoldSplit fold_split(std::size_t n, double train_frac, std::uint64_t seed, std::size_t fold);

/// Source-only models keyed by (source label shift, seed, kind), computed on
/// first use. With a store directory, checkpoints are read from and written to it.
class PretrainCache {
 public:
  explicit PretrainCache(std::optional<std::filesystem::path> store = std::nullopt) : store_(std::move(store)) {}

  /// kind is "pretrain" (silver regression) or "autoencoder".
  const ModelParams& get(const ExperimentConfig& cfg, const Fixture& fixture, const ShiftSpec& shift,
                         std::uint64_t seed, const std::string& kind);
  std::filesystem::path checkpoint_path(const ExperimentConfig& cfg, const ShiftSpec& shift, std::uint64_t seed,
                                        const std::string& kind) const;

 private:
  std::optional<std::filesystem::path> store_;
  std::map<std::tuple<double, double, std::uint64_t, std::string>, ModelParams> cache_;
};

/// Everything a method may train on. The test partition is present only as
/// a label-stripped view; predictions come back for its rows in order.
struct MethodInputs {
  const Fixture* fixture = nullptr;  // source possibly shifted
  ShiftSpec shift;
  std::uint64_t pretrain_seed = 0;  // pretrained models are shared per (shift, pretrain_seed)
  SampleSet target_train;
  SampleSet test_inputs;  // labeled == false
  double injection_frac = 0.0;
};

struct MethodOutput {
  Vec predictions;
  TrainTrace trace;
  double coarse_acc = kNotMeasured;
  std::size_t injection_count = 0;
};

MethodOutput run_method(const Method& m, const ExperimentConfig& cfg, const MethodInputs& in, std::uint64_t seed,
                        PretrainCache& cache);

// ---- experiments ----------------------------------------------------------------

/// cfg.folds seeded train/test partitions per seed; one record per (fold, seed).
std::vector<RunRecord> run_cv(const ExperimentConfig& cfg, const Method& m, PretrainCache* cache = nullptr);
/// UDAMA at every injection ratio x seed (fold 0). Failing cells become error records.
std::vector<RunRecord> injection_sweep(const ExperimentConfig& cfg, PretrainCache* cache = nullptr);
/// Full, coarse-only and fine-only UDAMA at cfg.injection_frac on shared splits.
std::vector<RunRecord> ablation(const ExperimentConfig& cfg, PretrainCache* cache = nullptr);
/// UDAMA and DANN per source label shift, each record carrying the shifted
/// source vs target label KL.
std::vector<RunRecord> stress_test(const ExperimentConfig& cfg, PretrainCache* cache = nullptr);

// ---- reporting --------------------------------------------------------------------

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;  // population std; 0 for one value
};
Summary summarize(const std::vector<double>& v);
/// Linear interpolation between order statistics; q in [0, 1].
double quantile(std::vector<double> v, double q);

/// Writes methods.csv, sweep.csv, ablation.csv, stress.csv and histograms.json
/// into `dir`, derived only from `records`. Throws on empty input.
void make_report(const std::vector<RunRecord>& records, const std::filesystem::path& dir);

}  // namespace udama
