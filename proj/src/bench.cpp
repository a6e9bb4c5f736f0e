#include "udama/bench.hpp"

#include "udama/checkpoint.hpp"
#include "udama/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace udama {
namespace {

using json = nlohmann::ordered_json;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent child seed for stream `tag` of `seed`.
std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) { return splitmix(splitmix(seed) ^ splitmix(~tag)); }

// Stream tags.
constexpr std::uint64_t kTagSourceGold = 1, kTagSilver = 2, kTagTarget = 3, kTagShift = 4, kTagFold = 5,
                        kTagPretrain = 6, kTagTrain = 7, kTagMix = 8;

// ---- value formatting and parsing -------------------------------------------

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& items, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& why) {
  throw std::invalid_argument("config key '" + key + "': " + why + " (got '" + value + "')");
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) bad_value(key, v, "expected a number");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) bad_value(key, v, "expected a nonnegative integer");
  return out;
}

CohortSpec parse_cohort(const std::string& key, const std::string& v) {
  if (v == "fenland") return CohortSpec::fenland();
  if (v == "bbvs") return CohortSpec::bbvs();
  bad_value(key, v, "expected fenland or bbvs");
}

struct KeyHandler {
  ConfigKey doc;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class T>
KeyHandler number_key(std::string key, std::string doc, T ExperimentConfig::*field) {
  ExperimentConfig d;
  const std::string def = std::is_floating_point_v<T> ? fmt(static_cast<double>(d.*field)) : std::to_string(d.*field);
  return {{key, def, std::move(doc)},
          [key, field](ExperimentConfig& c, const std::string& v) {
            if constexpr (std::is_floating_point_v<T>)
              c.*field = parse_double(key, v);
            else
              c.*field = static_cast<T>(parse_uint(key, v));
          },
          [field](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
              return fmt(c.*field);
            else
              return std::to_string(c.*field);
          }};
}

template <class T, class Getter>
KeyHandler nested_key(std::string key, std::string doc, Getter get_ref) {
  ExperimentConfig d;
  auto show = [](T v) {
    if constexpr (std::is_floating_point_v<T>)
      return fmt(v);
    else
      return std::to_string(v);
  };
  return {{key, show(get_ref(d)), std::move(doc)},
          [key, get_ref](ExperimentConfig& c, const std::string& v) {
            if constexpr (std::is_floating_point_v<T>)
              get_ref(c) = parse_double(key, v);
            else
              get_ref(c) = static_cast<T>(parse_uint(key, v));
          },
          [get_ref, show](const ExperimentConfig& c) { return show(get_ref(const_cast<ExperimentConfig&>(c))); }};
}

const std::vector<KeyHandler>& handlers() {
  static const std::vector<KeyHandler> h = [] {
    std::vector<KeyHandler> k;
    k.push_back({{"source_cohort", "fenland", "source cohort parameters: fenland or bbvs"},
                 [](ExperimentConfig& c, const std::string& v) {
                   const auto len = c.source.series_length_raw;
                   c.source = parse_cohort("source_cohort", v);
                   c.source.series_length_raw = len;
                 },
                 [](const ExperimentConfig& c) { return c.source.name; }});
    k.push_back({{"target_cohort", "bbvs", "target cohort parameters: fenland or bbvs"},
                 [](ExperimentConfig& c, const std::string& v) {
                   const auto len = c.target.series_length_raw;
                   c.target = parse_cohort("target_cohort", v);
                   c.target.series_length_raw = len;
                 },
                 [](const ExperimentConfig& c) { return c.target.name; }});
    k.push_back({{"series_length_raw", "9000", "raw series length in minutes, both cohorts"},
                 [](ExperimentConfig& c, const std::string& v) {
                   c.source.series_length_raw = c.target.series_length_raw =
                       static_cast<std::size_t>(parse_uint("series_length_raw", v));
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.source.series_length_raw); }});
    k.push_back(number_key("source_n", "number of source participants", &ExperimentConfig::source_n));
    k.push_back(number_key("target_n", "number of target participants", &ExperimentConfig::target_n));
    k.push_back(number_key("data_seed", "seed of cohort generation and silver corruption", &ExperimentConfig::data_seed));
    k.push_back(number_key("silver_slope", "silver label slope against gold", &ExperimentConfig::silver_slope));
    k.push_back(number_key("silver_bias", "mean silver minus gold bias (ml O2/min/kg)", &ExperimentConfig::silver_bias));
    k.push_back(number_key("silver_r", "Pearson r between silver and gold labels", &ExperimentConfig::silver_r));
    k.push_back({{"ts_channels", join(FeatureLayout{}.ts_channels), "time-series channels, comma separated"},
                 [](ExperimentConfig& c, const std::string& v) { c.layout.ts_channels = split_list(v); },
                 [](const ExperimentConfig& c) { return join(c.layout.ts_channels); }});
    k.push_back({{"meta_fields", join(FeatureLayout{}.meta_fields), "metadata fields, comma separated"},
                 [](ExperimentConfig& c, const std::string& v) { c.layout.meta_fields = split_list(v); },
                 [](const ExperimentConfig& c) { return join(c.layout.meta_fields); }});
    k.push_back(nested_key<std::size_t>("downsample_ratio", "time-series downsampling ratio",
                                        [](ExperimentConfig& c) -> std::size_t& { return c.layout.downsample_ratio; }));
    k.push_back(nested_key<std::size_t>("recurrent_units", "units per GRU direction",
                                        [](ExperimentConfig& c) -> std::size_t& { return c.train.net.recurrent_units; }));
    k.push_back(nested_key<std::size_t>("recurrent_layers", "bidirectional GRU layers",
                                        [](ExperimentConfig& c) -> std::size_t& { return c.train.net.recurrent_layers; }));
    k.push_back(nested_key<std::size_t>("meta_hidden", "metadata dense width",
                                        [](ExperimentConfig& c) -> std::size_t& { return c.train.net.meta_hidden; }));
    k.push_back(nested_key<double>("dropout", "dropout rate on the embedding",
                                   [](ExperimentConfig& c) -> double& { return c.train.net.dropout; }));
    k.push_back(nested_key<std::size_t>("disc_hidden", "hidden width of the discriminators",
                                        [](ExperimentConfig& c) -> std::size_t& { return c.train.net.disc_hidden; }));
    k.push_back(nested_key<double>("learning_rate", "Adam learning rate",
                                   [](ExperimentConfig& c) -> double& { return c.train.learning_rate; }));
    k.push_back(nested_key<std::size_t>("batch_size", "mini-batch size (>= 2)",
                                        [](ExperimentConfig& c) -> std::size_t& { return c.train.batch_size; }));
    k.push_back(nested_key<std::size_t>("max_epochs", "epoch limit",
                                        [](ExperimentConfig& c) -> std::size_t& { return c.train.max_epochs; }));
    k.push_back(nested_key<std::size_t>("patience", "early-stopping patience in epochs",
                                        [](ExperimentConfig& c) -> std::size_t& { return c.train.patience; }));
    k.push_back(nested_key<double>("validation_fraction", "validation share of each training set",
                                   [](ExperimentConfig& c) -> double& { return c.train.validation_fraction; }));
    k.push_back(nested_key<double>("alpha", "weight of the predictor MSE in the adaptation loss",
                                   [](ExperimentConfig& c) -> double& { return c.train.weights.alpha; }));
    k.push_back(nested_key<double>("lambda1", "weight of the coarse discriminator loss",
                                   [](ExperimentConfig& c) -> double& { return c.train.weights.lambda1; }));
    k.push_back(nested_key<double>("lambda2", "weight of the fine discriminator loss",
                                   [](ExperimentConfig& c) -> double& { return c.train.weights.lambda2; }));
    k.push_back({{"gnll_target", "domain_mean", "fine discriminator target: domain_mean or own_label"},
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v == "domain_mean")
                     c.train.gnll_target = GnllTarget::domain_mean;
                   else if (v == "own_label")
                     c.train.gnll_target = GnllTarget::own_label;
                   else
                     bad_value("gnll_target", v, "expected domain_mean or own_label");
                 },
                 [](const ExperimentConfig& c) {
                   return std::string(c.train.gnll_target == GnllTarget::domain_mean ? "domain_mean" : "own_label");
                 }});
    k.push_back({{"methods", "udama,transfer,dann", "methods for run_cv, comma separated"},
                 [](ExperimentConfig& c, const std::string& v) {
                   c.methods.clear();
                   for (const auto& name : split_list(v)) {
                     try {
                       c.methods.push_back(Method::parse(name));
                     } catch (const std::invalid_argument&) {
                       bad_value("methods", name, "unknown method");
                     }
                   }
                 },
                 [](const ExperimentConfig& c) {
                   std::vector<std::string> names;
                   for (const auto& m : c.methods) names.push_back(m.name());
                   return join(names);
                 }});
    k.push_back(number_key("folds", "seeded train/test partitions per seed", &ExperimentConfig::folds));
    k.push_back(number_key("split_train_frac", "target share used for training", &ExperimentConfig::split_train_frac));
    k.push_back({{"seeds", "1", "run seeds, comma separated"},
                 [](ExperimentConfig& c, const std::string& v) {
                   c.seeds.clear();
                   for (const auto& s : split_list(v)) c.seeds.push_back(parse_uint("seeds", s));
                 },
                 [](const ExperimentConfig& c) {
                   std::vector<std::string> s;
                   for (auto x : c.seeds) s.push_back(std::to_string(x));
                   return join(s);
                 }});
    k.push_back(number_key("injection_frac", "injected source samples as a fraction of target train (cv, ablation)",
                           &ExperimentConfig::injection_frac));
    k.push_back({{"injection_ratios", "0.01,0.05,0.1,0.3,0.5,1", "sweep ratios as fractions of target train"},
                 [](ExperimentConfig& c, const std::string& v) {
                   c.injection_ratios.clear();
                   for (const auto& s : split_list(v)) c.injection_ratios.push_back(parse_double("injection_ratios", s));
                 },
                 [](const ExperimentConfig& c) {
                   std::vector<std::string> s;
                   for (double x : c.injection_ratios) s.push_back(fmt(x));
                   return join(s);
                 }});
    k.push_back({{"shifts", "0:0,-6:1,8:1", "source label shifts as offset:noise_std, comma separated"},
                 [](ExperimentConfig& c, const std::string& v) {
                   c.shifts.clear();
                   for (const auto& item : split_list(v)) {
                     const auto parts = split_list(item, ':');
                     if (parts.size() != 2) bad_value("shifts", item, "expected offset:noise_std");
                     c.shifts.push_back({parse_double("shifts", parts[0]), parse_double("shifts", parts[1])});
                   }
                 },
                 [](const ExperimentConfig& c) {
                   std::vector<std::string> s;
                   for (const auto& x : c.shifts) s.push_back(fmt(x.offset) + ":" + fmt(x.noise_std));
                   return join(s);
                 }});
    k.push_back(number_key("coral_weight", "weight of the CORAL distance", &ExperimentConfig::coral_weight));
    k.push_back(nested_key<std::size_t>("wdgrl_critic_steps", "critic updates per WDGRL step",
                                        [](ExperimentConfig& c) -> std::size_t& { return c.wdgrl.critic_steps; }));
    k.push_back(nested_key<double>("wdgrl_penalty", "WDGRL gradient-penalty weight",
                                   [](ExperimentConfig& c) -> double& { return c.wdgrl.penalty_weight; }));
    k.push_back(nested_key<double>("wdgrl_distance_weight", "weight of the Wasserstein estimate",
                                   [](ExperimentConfig& c) -> double& { return c.wdgrl.distance_weight; }));
    k.push_back(nested_key<std::size_t>("wdgrl_critic_hidden", "critic hidden width",
                                        [](ExperimentConfig& c) -> std::size_t& { return c.wdgrl.critic_hidden; }));
    k.push_back({{"output_dir", "runs", "directory for records, checkpoints and reports"},
                 [](ExperimentConfig& c, const std::string& v) { c.output_dir = v; },
                 [](const ExperimentConfig& c) { return c.output_dir.string(); }});
    return k;
  }();
  return h;
}

// ---- record (de)serialization ------------------------------------------------

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double num_or_nan(const json& j) { return j.is_null() ? kNotMeasured : j.get<double>(); }

json to_json(const RunRecord& r) {
  json j;
  j["schema_version"] = kRecordSchemaVersion;
  j["experiment"] = r.experiment;
  j["method"] = r.method;
  j["fold"] = r.fold;
  j["seed"] = r.seed;
  j["injection_frac"] = r.injection_frac;
  j["injection_source_frac"] = r.injection_source_frac;
  j["injection_count"] = r.injection_count;
  j["shift_offset"] = r.shift_offset;
  j["shift_noise"] = r.shift_noise;
  j["source_target_kl"] = num(r.source_target_kl);
  j["mse"] = num(r.metrics.mse);
  j["mae"] = num(r.metrics.mae);
  j["r2"] = num(r.metrics.r2);
  j["corr"] = num(r.metrics.corr);
  j["corr_degenerate"] = r.metrics.corr_degenerate;
  j["hellinger"] = num(r.metrics.hellinger);
  j["kl"] = num(r.metrics.kl);
  j["coarse_acc"] = num(r.coarse_acc);
  j["best_epoch"] = r.best_epoch;
  j["stop_epoch"] = r.stop_epoch;
  j["config_hash"] = r.config_hash;
  j["error"] = r.error;
  j["y_true"] = r.y_true;
  j["y_pred"] = r.y_pred;
  return j;
}

RunRecord from_json(const json& j) {
  if (!j.contains("schema_version") || j.at("schema_version").get<int>() != kRecordSchemaVersion)
    throw std::invalid_argument("read_records: unsupported or missing schema_version");
  RunRecord r;
  r.experiment = j.at("experiment").get<std::string>();
  r.method = j.at("method").get<std::string>();
  r.fold = j.at("fold").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.injection_frac = j.at("injection_frac").get<double>();
  r.injection_source_frac = j.at("injection_source_frac").get<double>();
  r.injection_count = j.at("injection_count").get<std::size_t>();
  r.shift_offset = j.at("shift_offset").get<double>();
  r.shift_noise = j.at("shift_noise").get<double>();
  r.source_target_kl = num_or_nan(j.at("source_target_kl"));
  r.metrics.mse = num_or_nan(j.at("mse"));
  r.metrics.mae = num_or_nan(j.at("mae"));
  r.metrics.r2 = num_or_nan(j.at("r2"));
  r.metrics.corr = num_or_nan(j.at("corr"));
  r.metrics.corr_degenerate = j.at("corr_degenerate").get<bool>();
  r.metrics.hellinger = num_or_nan(j.at("hellinger"));
  r.metrics.kl = num_or_nan(j.at("kl"));
  r.coarse_acc = num_or_nan(j.at("coarse_acc"));
  r.best_epoch = j.at("best_epoch").get<std::size_t>();
  r.stop_epoch = j.at("stop_epoch").get<std::size_t>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.error = j.at("error").get<std::string>();
  r.y_true = j.at("y_true").get<std::vector<double>>();
  r.y_pred = j.at("y_pred").get<std::vector<double>>();
  return r;
}

// ---- experiment plumbing -------------------------------------------------------

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TrainConfig with_weights(TrainConfig tc, Method::Arm arm) {
  if (arm == Method::Arm::coarse_only) tc.weights = {tc.weights.alpha, 1.0, 0.0};
  if (arm == Method::Arm::fine_only) tc.weights = {tc.weights.alpha, 0.0, 1.0};
  return tc;
}

bool uses_injection(const Method& m) { return !m.baseline || *m.baseline == BaselineKind::dann; }

/// Runs one method on one (seed, fold) partition and scores it against the
/// held-back test labels.
RunRecord run_cell(const ExperimentConfig& cfg, const std::string& hash, const Fixture& fixture, const ShiftSpec& shift,
                   const Method& m, std::uint64_t seed, std::size_t fold, double injection_frac, const std::string& experiment,
                   PretrainCache& cache) {
  const FoldSplit split = fold_split(fixture.target.size(), cfg.split_train_frac, seed, fold);
  const SampleSet test = fixture.target.subset(split.test);

  RunRecord r;
  r.experiment = experiment;
  r.method = m.name();
  r.fold = fold;
  r.seed = seed;
  r.shift_offset = shift.offset;
  r.shift_noise = shift.noise_std;
  r.config_hash = hash;
  if (uses_injection(m)) {
    r.injection_frac = injection_frac;
    r.injection_count = injection_count(injection_frac, split.train.size());
    r.injection_source_frac = static_cast<double>(r.injection_count) / static_cast<double>(fixture.source.size());
  }

  MethodInputs in;
  in.fixture = &fixture;
  in.shift = shift;
  in.pretrain_seed = seed;
  in.target_train = fixture.target.subset(split.train);
  in.test_inputs = strip_labels(test);
  in.injection_frac = injection_frac;

  const auto t0 = std::chrono::steady_clock::now();
  const MethodOutput out = run_method(m, cfg, in, derive(derive(seed, fold), kTagTrain), cache);
  r.wall_time_s = seconds_since(t0);
  r.metrics = score_predictions(test.y, out.predictions);
  r.coarse_acc = out.coarse_acc;
  r.best_epoch = out.trace.best_epoch;
  r.stop_epoch = out.trace.stop_epoch;
  r.y_true.assign(test.y.data(), test.y.data() + test.y.size());
  r.y_pred.assign(out.predictions.data(), out.predictions.data() + out.predictions.size());
  return r;
}

PretrainCache& cache_or(PretrainCache* given, std::optional<PretrainCache>& local) {
  if (given) return *given;
  local.emplace();
  return *local;
}

// ---- report helpers ----------------------------------------------------------------

std::string cell(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<double> finite_values(const std::vector<const RunRecord*>& rs, double MetricRecord::*field,
                                  bool skip_degenerate_corr = false) {
  std::vector<double> out;
  for (const RunRecord* r : rs) {
    if (skip_degenerate_corr && r->metrics.corr_degenerate) continue;
    const double v = r->metrics.*field;
    if (std::isfinite(v)) out.push_back(v);
  }
  return out;
}

void write_metric_table(std::ostream& os, const std::vector<RunRecord>& records, const std::string& experiment,
                        const char* first_column) {
  os << first_column << ",n,r2_mean,r2_std,corr_mean,corr_std,mse_mean,mse_std,mae_mean,mae_std\n";
  std::map<std::string, std::vector<const RunRecord*>> by_method;
  for (const auto& r : records)
    if (r.experiment == experiment && r.ok()) by_method[r.method].push_back(&r);
  for (const auto& [method, rs] : by_method) {
    const Summary r2 = summarize(finite_values(rs, &MetricRecord::r2));
    const Summary corr = summarize(finite_values(rs, &MetricRecord::corr, true));
    const Summary mse = summarize(finite_values(rs, &MetricRecord::mse));
    const Summary mae = summarize(finite_values(rs, &MetricRecord::mae));
    os << method << ',' << rs.size() << ',' << cell(r2.mean) << ',' << cell(r2.std) << ',' << cell(corr.mean) << ','
       << cell(corr.std) << ',' << cell(mse.mean) << ',' << cell(mse.std) << ',' << cell(mae.mean) << ','
       << cell(mae.std) << '\n';
  }
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("make_report: cannot write " + p.string());
  return os;
}

}  // namespace

// ---- Method ----------------------------------------------------------------------

Method Method::parse(const std::string& name) {
  if (name == "udama") return udama();
  if (name == "udama_coarse_only") return udama(Arm::coarse_only);
  if (name == "udama_fine_only") return udama(Arm::fine_only);
  return of(parse_baseline(name));
}

std::string Method::name() const {
  if (baseline) return to_string(*baseline);
  switch (arm) {
    case Arm::coarse_only:
      return "udama_coarse_only";
    case Arm::fine_only:
      return "udama_fine_only";
    case Arm::full:
      break;
  }
  return "udama";
}

// ---- configuration -------------------------------------------------------------

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw std::invalid_argument("config key '" + key + "': " + why);
  };
  auto guard = [&](const std::string& key, const std::function<void()>& f) {
    try {
      f();
    } catch (const std::invalid_argument& e) {
      fail(key, e.what());
    }
  };
  guard("source_cohort", [&] { source.validate(layout.downsample_ratio); });
  guard("target_cohort", [&] { target.validate(layout.downsample_ratio); });
  guard("ts_channels", [&] { layout.validate(); });
  if (source_n < 2) fail("source_n", "must be at least 2");
  if (target_n < 2) fail("target_n", "must be at least 2");
  if (!(silver_slope > 0.0)) fail("silver_slope", "must be positive");
  if (!(silver_r > 0.0 && silver_r < 1.0)) fail("silver_r", "must lie in (0, 1)");
  guard("learning_rate", [&] { train.validate(); });
  if (methods.empty()) fail("methods", "must not be empty");
  if (folds < 1) fail("folds", "must be at least 1");
  if (!(split_train_frac > 0.0 && split_train_frac < 1.0)) fail("split_train_frac", "must lie in (0, 1)");
  if (seeds.empty()) fail("seeds", "must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) fail("seeds", "must be distinct");
  if (!(injection_frac > 0.0)) fail("injection_frac", "must be positive");
  if (injection_ratios.empty()) fail("injection_ratios", "must not be empty");
  for (double r : injection_ratios)
    if (!(r > 0.0)) fail("injection_ratios", "ratios must be positive");
  if (shifts.empty()) fail("shifts", "must not be empty");
  for (const auto& s : shifts)
    if (!(s.noise_std >= 0.0)) fail("shifts", "noise_std must be >= 0");
  if (!(coral_weight >= 0.0)) fail("coral_weight", "must be >= 0");
  if (wdgrl.critic_steps < 1) fail("wdgrl_critic_steps", "must be at least 1");
  if (!(wdgrl.penalty_weight >= 0.0)) fail("wdgrl_penalty", "must be >= 0");
  if (wdgrl.critic_hidden < 1) fail("wdgrl_critic_hidden", "must be at least 1");
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& h : handlers()) out.push_back(h.doc);
    return out;
  }();
  return keys;
}

ExperimentConfig parse_config(std::istream& is) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + " ('" + line + "'): expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& hs = handlers();
    const auto it = std::find_if(hs.begin(), hs.end(), [&](const KeyHandler& h) { return h.doc.key == key; });
    if (it == hs.end()) throw std::invalid_argument("config key '" + key + "': unknown key");
    if (!seen.insert(key).second) throw std::invalid_argument("config key '" + key + "': given twice");
    it->set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("load_config: cannot open " + path.string());
  return parse_config(is);
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& h : handlers()) out += h.doc.key + " = " + h.get(cfg) + "\n";
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& k : handlers()) {
    if (k.doc.key == "output_dir") continue;
    for (unsigned char c : k.doc.key + "=" + k.get(cfg) + "\n") {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- records -------------------------------------------------------------------------

void write_records(std::ostream& os, const std::vector<RunRecord>& records) {
  for (const auto& r : records) os << to_json(r).dump() << '\n';
}

void write_timings(std::ostream& os, const std::vector<RunRecord>& records) {
  for (const auto& r : records) {
    json j;
    j["experiment"] = r.experiment;
    j["method"] = r.method;
    j["seed"] = r.seed;
    j["fold"] = r.fold;
    j["wall_time_s"] = r.wall_time_s;
    os << j.dump() << '\n';
  }
}

std::vector<RunRecord> read_records(std::istream& is) {
  std::vector<RunRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw std::invalid_argument("read_records: line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---- fixture ----------------------------------------------------------------------------

Fixture build_fixture(const ExperimentConfig& cfg) {
  cfg.validate();
  const SampleSet gold = generate_cohort(cfg.source, cfg.source_n, derive(cfg.data_seed, kTagSourceGold));
  const Moments m = population_label_moments(cfg.source);
  const auto corruption = LabelCorruption::calibrated(m.mean, m.std, cfg.silver_slope, cfg.silver_bias, cfg.silver_r);
  SampleSet silver = corrupt_to_silver(gold, corruption, derive(cfg.data_seed, kTagSilver));
  std::fill(silver.domain.begin(), silver.domain.end(), Domain::source);
  SampleSet target = generate_cohort(cfg.target, cfg.target_n, derive(cfg.data_seed, kTagTarget));
  std::fill(target.domain.begin(), target.domain.end(), Domain::target);

  FeaturePipeline pipeline(cfg.layout);
  Fixture f;
  f.source = pipeline.fit_transform(silver);
  f.target = pipeline.transform(target);
  return f;
}

Fixture shift_source(const Fixture& f, const ShiftSpec& s, std::uint64_t seed) {
  Fixture out = f;
  out.source = apply_label_shift(f.source, s, seed);
  return out;
}

Fixture shifted_fixture(const ExperimentConfig& cfg, const Fixture& base, const ShiftSpec& s) {
  return shift_source(base, s, derive(cfg.data_seed, kTagShift));
}

FoldSplit fold_split(std::size_t n, double train_frac, std::uint64_t seed, std::size_t fold) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw std::invalid_argument("fold_split: train_frac must lie in (0, 1)");
  auto [train, test] = split_rows(n, 1.0 - train_frac, derive(derive(seed, fold), kTagFold));
  return {std::move(train), std::move(test)};
}

// ---- pretraining cache -------------------------------------------------------------------

std::filesystem::path PretrainCache::checkpoint_path(const ExperimentConfig& cfg, const ShiftSpec& shift,
                                                     std::uint64_t seed, const std::string& kind) const {
  if (!store_) throw InvalidState("PretrainCache: no store directory");
  return *store_ / (kind + "_" + config_hash(cfg) + "_seed" + std::to_string(seed) + "_shift" + fmt(shift.offset) + "_" +
                    fmt(shift.noise_std) + ".ckp");
}

const ModelParams& PretrainCache::get(const ExperimentConfig& cfg, const Fixture& fixture, const ShiftSpec& shift,
                                      std::uint64_t seed, const std::string& kind) {
  if (kind != "pretrain" && kind != "autoencoder") throw std::invalid_argument("PretrainCache: unknown kind " + kind);
  const auto key = std::make_tuple(shift.offset, shift.noise_std, seed, kind);
  if (const auto it = cache_.find(key); it != cache_.end()) return it->second;

  std::optional<std::filesystem::path> path;
  if (store_) path = checkpoint_path(cfg, shift, seed, kind);
  ModelParams p;
  if (path && std::filesystem::exists(*path)) {
    p = load_checkpoint(*path);
  } else {
    const std::uint64_t s = derive(seed, kTagPretrain);
    p = kind == "pretrain" ? pretrain(fixture.source, cfg.train, s).params
                           : train_autoencoder_pretrain(fixture.source, cfg.train, s).params;
    if (path) {
      std::filesystem::create_directories(path->parent_path());
      save_checkpoint(*path, p);
    }
  }
  return cache_.emplace(key, std::move(p)).first->second;
}

// ---- one method --------------------------------------------------------------------------

MethodOutput run_method(const Method& m, const ExperimentConfig& cfg, const MethodInputs& in, std::uint64_t seed,
                        PretrainCache& cache) {
  if (!in.fixture) throw std::invalid_argument("run_method: no fixture");
  if (in.test_inputs.labeled) throw std::invalid_argument("run_method: test partition must be label-stripped");
  const Fixture& fx = *in.fixture;
  const TrainConfig& tc = cfg.train;
  MethodOutput out;

  auto pretrained = [&](const char* kind) { return freeze_plan(cache.get(cfg, fx, in.shift, in.pretrain_seed, kind)); };
  auto mixed = [&]() {
    auto [set, a] = mix_domains(in.target_train, fx.source, in.injection_frac, derive(seed, kTagMix));
    out.injection_count = a.size() - in.target_train.size();
    return std::make_pair(std::move(set), assign_distribution_labels(set, a));
  };

  TrainResult r;
  if (!m.baseline) {
    const auto [set, a] = mixed();
    r = adapt_udama(pretrained("pretrain"), set, a, with_weights(tc, m.arm), seed);
    out.coarse_acc = r.trace.best().coarse_acc;
  } else {
    switch (*m.baseline) {
      case BaselineKind::in_domain_supervised:
        r = train_supervised(in.target_train, tc, seed);
        break;
      case BaselineKind::out_of_domain_supervised:
        r = train_out_of_domain(fx.source, in.target_train, tc, seed);
        break;
      case BaselineKind::transfer:
        r = finetune(pretrained("pretrain"), in.target_train, tc, seed);
        break;
      case BaselineKind::autoencoder:
        r = finetune(pretrained("autoencoder"), in.target_train, tc, seed);
        break;
      case BaselineKind::deep_coral:
        r = train_deep_coral(fx.source, in.target_train, tc, cfg.coral_weight, seed);
        break;
      case BaselineKind::wdgrl:
        r = train_wdgrl(fx.source, in.target_train, tc, cfg.wdgrl, seed);
        break;
      case BaselineKind::dann: {
        const auto [set, a] = mixed();
        r = train_dann(pretrained("pretrain"), set, a, tc, seed);
        out.coarse_acc = r.trace.best().coarse_acc;
        break;
      }
    }
  }
  out.predictions = predict_set(r.params, in.test_inputs);
  out.trace = std::move(r.trace);
  return out;
}

// ---- experiments ----------------------------------------------------------------------------

std::vector<RunRecord> run_cv(const ExperimentConfig& cfg, const Method& m, PretrainCache* cache) {
  cfg.validate();
  std::optional<PretrainCache> local;
  PretrainCache& pc = cache_or(cache, local);
  const std::string hash = config_hash(cfg);
  const Fixture fixture = build_fixture(cfg);
  std::vector<RunRecord> out;
  for (const auto seed : cfg.seeds)
    for (std::size_t fold = 0; fold < cfg.folds; ++fold)
      out.push_back(run_cell(cfg, hash, fixture, {}, m, seed, fold, cfg.injection_frac, "cv", pc));
  return out;
}

std::vector<RunRecord> injection_sweep(const ExperimentConfig& cfg, PretrainCache* cache) {
  cfg.validate();
  if (cfg.seeds.size() < 2) throw std::invalid_argument("config key 'seeds': injection_sweep needs at least 2 seeds");
  std::optional<PretrainCache> local;
  PretrainCache& pc = cache_or(cache, local);
  const std::string hash = config_hash(cfg);
  const Fixture fixture = build_fixture(cfg);
  std::vector<RunRecord> out;
  for (const double ratio : cfg.injection_ratios) {
    for (const auto seed : cfg.seeds) {
      try {
        out.push_back(run_cell(cfg, hash, fixture, {}, Method::udama(), seed, 0, ratio, "sweep", pc));
      } catch (const std::exception& e) {
        RunRecord r;
        r.experiment = "sweep";
        r.method = Method::udama().name();
        r.seed = seed;
        r.injection_frac = ratio;
        const std::size_t n_train = fold_split(fixture.target.size(), cfg.split_train_frac, seed, 0).train.size();
        r.injection_count = injection_count(ratio, n_train);
        r.injection_source_frac = static_cast<double>(r.injection_count) / static_cast<double>(fixture.source.size());
        r.metrics = {kNotMeasured, kNotMeasured, kNotMeasured, kNotMeasured, false, kNotMeasured, kNotMeasured};
        r.config_hash = hash;
        r.error = e.what();
        out.push_back(std::move(r));
      }
    }
  }
  return out;
}

std::vector<RunRecord> ablation(const ExperimentConfig& cfg, PretrainCache* cache) {
  cfg.validate();
  std::optional<PretrainCache> local;
  PretrainCache& pc = cache_or(cache, local);
  const std::string hash = config_hash(cfg);
  const Fixture fixture = build_fixture(cfg);
  std::vector<RunRecord> out;
  for (const auto seed : cfg.seeds)
    for (std::size_t fold = 0; fold < cfg.folds; ++fold)
      for (const auto arm : {Method::Arm::full, Method::Arm::coarse_only, Method::Arm::fine_only})
        out.push_back(run_cell(cfg, hash, fixture, {}, Method::udama(arm), seed, fold, cfg.injection_frac, "ablation", pc));
  return out;
}

std::vector<RunRecord> stress_test(const ExperimentConfig& cfg, PretrainCache* cache) {
  cfg.validate();
  std::optional<PretrainCache> local;
  PretrainCache& pc = cache_or(cache, local);
  const std::string hash = config_hash(cfg);
  const Fixture base = build_fixture(cfg);
  std::vector<RunRecord> out;
  for (const ShiftSpec& s : cfg.shifts) {
    const Fixture fixture = shifted_fixture(cfg, base, s);
    const double kl = distribution_gap(fixture.target.y, fixture.source.y).kl;
    for (const auto seed : cfg.seeds)
      for (std::size_t fold = 0; fold < cfg.folds; ++fold)
        for (const Method& m : {Method::udama(), Method::of(BaselineKind::dann)}) {
          RunRecord r = run_cell(cfg, hash, fixture, s, m, seed, fold, cfg.injection_frac, "stress", pc);
          r.source_target_kl = kl;
          out.push_back(std::move(r));
        }
  }
  return out;
}

// ---- reporting ------------------------------------------------------------------------------

Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return {0, kNotMeasured, kNotMeasured};
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.std += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(v.size()));
  return s;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile: empty input");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile: q must lie in [0, 1]");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

void make_report(const std::vector<RunRecord>& records, const std::filesystem::path& dir) {
  if (records.empty()) throw std::invalid_argument("make_report: no records");
  std::filesystem::create_directories(dir);

  {
    auto os = open_out(dir / "methods.csv");
    write_metric_table(os, records, "cv", "method");
  }
  {
    auto os = open_out(dir / "ablation.csv");
    write_metric_table(os, records, "ablation", "variant");
  }
  {
    auto os = open_out(dir / "sweep.csv");
    os << "injection_frac,injection_source_frac,n_ok,n_error,mse_mean,mse_std,mse_min,mse_q25,mse_q50,mse_q75,mse_max\n";
    std::map<double, std::vector<const RunRecord*>> by_ratio;
    for (const auto& r : records)
      if (r.experiment == "sweep") by_ratio[r.injection_frac].push_back(&r);
    for (const auto& [ratio, rs] : by_ratio) {
      std::vector<double> mse;
      double source_frac = kNotMeasured;
      for (const RunRecord* r : rs) {
        if (std::isfinite(r->injection_source_frac)) source_frac = r->injection_source_frac;
        if (r->ok() && std::isfinite(r->metrics.mse)) mse.push_back(r->metrics.mse);
      }
      os << cell(ratio) << ',' << cell(source_frac) << ',' << mse.size() << ',' << rs.size() - mse.size();
      if (mse.empty()) {
        os << ",,,,,,,\n";
        continue;
      }
      const Summary s = summarize(mse);
      os << ',' << cell(s.mean) << ',' << cell(s.std) << ',' << cell(quantile(mse, 0.0)) << ','
         << cell(quantile(mse, 0.25)) << ',' << cell(quantile(mse, 0.5)) << ',' << cell(quantile(mse, 0.75)) << ','
         << cell(quantile(mse, 1.0)) << '\n';
    }
  }
  {
    auto os = open_out(dir / "stress.csv");
    os << "shift_offset,shift_noise,source_target_kl,n,udama_corr_mean,udama_corr_std,dann_corr_mean,dann_corr_std\n";
    std::vector<std::pair<double, double>> order;
    std::map<std::pair<double, double>, std::map<std::string, std::vector<const RunRecord*>>> groups;
    std::map<std::pair<double, double>, double> kl;
    for (const auto& r : records) {
      if (r.experiment != "stress" || !r.ok()) continue;
      const auto key = std::make_pair(r.shift_offset, r.shift_noise);
      if (!groups.count(key)) order.push_back(key);
      groups[key][r.method].push_back(&r);
      kl[key] = r.source_target_kl;
    }
    for (const auto& key : order) {
      auto& g = groups[key];
      const Summary u = summarize(finite_values(g["udama"], &MetricRecord::corr, true));
      const Summary d = summarize(finite_values(g["dann"], &MetricRecord::corr, true));
      os << cell(key.first) << ',' << cell(key.second) << ',' << cell(kl[key]) << ',' << g["udama"].size() << ','
         << cell(u.mean) << ',' << cell(u.std) << ',' << cell(d.mean) << ',' << cell(d.std) << '\n';
    }
  }
  {
    json hist = json::array();
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> pooled;
    for (const auto& r : records) {
      if (r.experiment != "cv" || !r.ok()) continue;
      auto& [t, p] = pooled[r.method];
      t.insert(t.end(), r.y_true.begin(), r.y_true.end());
      p.insert(p.end(), r.y_pred.begin(), r.y_pred.end());
    }
    for (const auto& [method, tp] : pooled) {
      const Vec t = Eigen::Map<const Vec>(tp.first.data(), static_cast<Eigen::Index>(tp.first.size()));
      const Vec p = Eigen::Map<const Vec>(tp.second.data(), static_cast<Eigen::Index>(tp.second.size()));
      const auto [lo, hi] = union_range(t, p);
      const Histogram ht = build_histogram(t, kDefaultHistogramBins, lo, hi);
      const Histogram hp = build_histogram(p, kDefaultHistogramBins, lo, hi);
      json j;
      j["method"] = method;
      j["edges"] = ht.edges;
      j["truth_mass"] = ht.mass;
      j["prediction_mass"] = hp.mass;
      j["hellinger"] = num(hellinger(ht, hp));
      j["kl"] = num(kl_divergence(ht, hp));
      hist.push_back(std::move(j));
    }
    auto os = open_out(dir / "histograms.json");
    os << hist.dump(2) << '\n';
  }
}

}  // namespace udama
