#include "doctest.h"

#include "udama/bench.hpp"
#include "udama/errors.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace udama;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config() {
  std::istringstream text(R"(
# small enough for unit tests
series_length_raw = 60
source_n = 80
target_n = 40
recurrent_units = 3
meta_hidden = 5
disc_hidden = 4
max_epochs = 4
patience = 2
folds = 2
seeds = 1, 2
injection_ratios = 0.05, 0.25, 0.5
injection_frac = 0.25
shifts = 0:0, 8:1
wdgrl_critic_steps = 1
wdgrl_critic_hidden = 4
)");
  return parse_config(text);
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("udama_test_bench_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string error_message(const std::string& text) {
  std::istringstream is(text);
  try {
    parse_config(is);
  } catch (const std::invalid_argument& e) {
    return e.what();
  }
  return "";
}

RunRecord record(const std::string& method, double mse, double corr) {
  RunRecord r;
  r.experiment = "cv";
  r.method = method;
  r.metrics.mse = mse;
  r.metrics.mae = std::sqrt(mse);
  r.metrics.r2 = 1.0 - mse / 100.0;
  r.metrics.corr = corr;
  r.y_true = {30.0, 40.0, 50.0};
  r.y_pred = {31.0, 39.0, 52.0};
  return r;
}

}  // namespace

TEST_CASE("method names round trip") {
  for (const char* n : {"udama", "udama_coarse_only", "udama_fine_only", "transfer", "deep_coral", "dann"})
    CHECK(Method::parse(n).name() == n);
  CHECK(Method::parse("udama") == Method::udama());
  CHECK_THROWS_AS(Method::parse("udama_both"), std::invalid_argument);
}

TEST_CASE("config parsing: defaults, comments, errors name the key") {
  std::istringstream empty("# nothing\n\n");
  const ExperimentConfig d = parse_config(empty);
  CHECK(d.source_n == 2000);
  CHECK(d.train.weights.lambda1 == doctest::Approx(0.9));
  CHECK(config_hash(d) == config_hash(ExperimentConfig{}));

  CHECK(error_message("learning_rat = 0.1").find("learning_rat") != std::string::npos);
  CHECK(error_message("batch_size = many").find("batch_size") != std::string::npos);
  CHECK(error_message("folds = 2\nfolds = 3").find("folds") != std::string::npos);
  CHECK(error_message("source_cohort = ukb").find("source_cohort") != std::string::npos);
  CHECK(error_message("shifts = 3").find("shifts") != std::string::npos);
  CHECK(error_message("alpha").find("alpha") != std::string::npos);
  CHECK(error_message("lambda1 = 0.5").find("lambda") != std::string::npos);

  for (const auto& k : config_keys()) {
    CHECK_FALSE(k.key.empty());
    CHECK_FALSE(k.doc.empty());
  }
}

TEST_CASE("config serialization round trips and the hash ignores output_dir") {
  ExperimentConfig c = tiny_config();
  std::istringstream back(serialize_config(c));
  const ExperimentConfig r = parse_config(back);
  CHECK(serialize_config(r) == serialize_config(c));
  CHECK(config_hash(r) == config_hash(c));
  CHECK(config_hash(c).size() == 16);

  ExperimentConfig moved = c;
  moved.output_dir = "elsewhere";
  CHECK(config_hash(moved) == config_hash(c));
  ExperimentConfig changed = c;
  changed.train.learning_rate = 2e-3;
  CHECK(config_hash(changed) != config_hash(c));
}

TEST_CASE("fold_split partitions the target rows") {
  const FoldSplit s = fold_split(200, 0.7, 1, 0);
  CHECK(s.train.size() == 140);
  CHECK(s.test.size() == 60);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  for (auto i : s.test) CHECK(all.insert(i).second);
  CHECK(all.size() == 200);
  CHECK(fold_split(200, 0.7, 1, 0).test == s.test);
  CHECK(fold_split(200, 0.7, 1, 1).test != s.test);
  CHECK(fold_split(200, 0.7, 2, 0).test != s.test);
}

TEST_CASE("fixture: silver source, gold target, shift only moves source labels") {
  const ExperimentConfig cfg = tiny_config();
  const Fixture f = build_fixture(cfg);
  CHECK(f.source.size() == 80);
  CHECK(f.target.size() == 40);
  CHECK(f.source.grade == LabelGrade::silver);
  CHECK(f.target.grade == LabelGrade::gold);
  CHECK(f.source.processed);
  CHECK(f.target.processed);
  CHECK(f.target.X.steps() == 4);

  const Fixture same = shift_source(f, {0.0, 0.0}, 1);
  CHECK(same.source == f.source);
  const Fixture s = shift_source(f, {8.0, 0.0}, 1);
  CHECK((s.source.y.array() - f.source.y.array() - 8.0).abs().maxCoeff() < 1e-12);
  CHECK(s.target == f.target);
  CHECK(s.source.M == f.source.M);
}

TEST_CASE("run_method never sees test labels") {
  const ExperimentConfig cfg = tiny_config();
  const Fixture f = build_fixture(cfg);
  const FoldSplit split = fold_split(f.target.size(), cfg.split_train_frac, 1, 0);
  PretrainCache cache;
  MethodInputs in;
  in.fixture = &f;
  in.pretrain_seed = 1;
  in.target_train = f.target.subset(split.train);
  in.injection_frac = 0.25;
  SampleSet test = f.target.subset(split.test);
  in.test_inputs = test;
  CHECK_THROWS_AS(run_method(Method::udama(), cfg, in, 3, cache), std::invalid_argument);

  in.test_inputs = strip_labels(test);
  const MethodOutput a = run_method(Method::udama(), cfg, in, 3, cache);
  CHECK(a.predictions.size() == static_cast<Eigen::Index>(split.test.size()));
  CHECK(a.injection_count == injection_count(0.25, split.train.size()));

  test.y = test.y.reverse().eval();
  in.test_inputs = strip_labels(test);
  const MethodOutput b = run_method(Method::udama(), cfg, in, 3, cache);
  CHECK(a.predictions == b.predictions);
}

TEST_CASE("run_cv: one record per fold and seed, reproducible") {
  const ExperimentConfig cfg = tiny_config();
  PretrainCache cache;
  const auto recs = run_cv(cfg, Method::of(BaselineKind::transfer), &cache);
  CHECK(recs.size() == 4);
  for (const auto& r : recs) {
    CHECK(r.ok());
    CHECK(r.experiment == "cv");
    CHECK(r.method == "transfer");
    CHECK(r.config_hash == config_hash(cfg));
    CHECK(r.y_true.size() == 12);
    CHECK(r.y_pred.size() == 12);
    CHECK(std::isfinite(r.metrics.mse));
  }
  std::ostringstream a, b;
  write_records(a, recs);
  PretrainCache fresh;
  write_records(b, run_cv(cfg, Method::of(BaselineKind::transfer), &fresh));
  CHECK(a.str() == b.str());

  std::istringstream in(a.str());
  const auto back = read_records(in);
  REQUIRE(back.size() == recs.size());
  CHECK(back[1].seed == recs[1].seed);
  CHECK(back[1].fold == recs[1].fold);
  CHECK(back[1].metrics.mse == recs[1].metrics.mse);
  CHECK(back[1].y_pred == recs[1].y_pred);
  CHECK(std::isnan(back[1].coarse_acc));
  std::ostringstream again;
  write_records(again, back);
  CHECK(again.str() == a.str());
}

TEST_CASE("pretrain cache store reuses checkpoints") {
  const ExperimentConfig cfg = tiny_config();
  const Fixture f = build_fixture(cfg);
  const fs::path dir = scratch("cache");
  PretrainCache first(dir);
  const ModelParams a = first.get(cfg, f, {0.0, 0.0}, 1, "pretrain");
  CHECK(fs::exists(first.checkpoint_path(cfg, {0.0, 0.0}, 1, "pretrain")));
  PretrainCache second(dir);
  CHECK(second.get(cfg, f, {0.0, 0.0}, 1, "pretrain") == a);
  CHECK(first.checkpoint_path(cfg, {8.0, 1.0}, 1, "pretrain") != first.checkpoint_path(cfg, {0.0, 0.0}, 1, "pretrain"));
  CHECK_THROWS_AS(first.get(cfg, f, {0.0, 0.0}, 1, "other"), std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("injection sweep: every ratio and seed, too few injected samples is an error cell") {
  const ExperimentConfig cfg = tiny_config();
  PretrainCache cache;
  const auto recs = injection_sweep(cfg, &cache);
  CHECK(recs.size() == 6);
  for (const auto& r : recs) {
    CHECK(r.experiment == "sweep");
    CHECK(r.injection_count == injection_count(r.injection_frac, 28));
    if (r.injection_frac < 0.1) {
      CHECK_FALSE(r.ok());
      CHECK(std::isnan(r.metrics.mse));
    } else {
      CHECK(r.ok());
      CHECK(r.injection_source_frac == doctest::Approx(static_cast<double>(r.injection_count) / 80.0));
    }
  }
}

TEST_CASE("ablation and stress records") {
  ExperimentConfig cfg = tiny_config();
  cfg.seeds = {1};
  cfg.folds = 1;
  PretrainCache cache;
  const auto abl = ablation(cfg, &cache);
  REQUIRE(abl.size() == 3);
  CHECK(abl[0].method == "udama");
  CHECK(abl[1].method == "udama_coarse_only");
  CHECK(abl[2].method == "udama_fine_only");
  CHECK(abl[0].y_true == abl[1].y_true);

  const auto st = stress_test(cfg, &cache);
  REQUIRE(st.size() == 4);
  for (const auto& r : st) CHECK(r.source_target_kl >= 0.0);
  CHECK(st[2].source_target_kl != st[0].source_target_kl);
  CHECK(st[0].method == "udama");
  CHECK(st[1].method == "dann");
}

TEST_CASE("summaries and quantiles") {
  const Summary one = summarize({3.0});
  CHECK(one.mean == 3.0);
  CHECK(one.std == 0.0);
  const Summary three = summarize({1.0, 2.0, 6.0});
  CHECK(three.mean == doctest::Approx(3.0));
  CHECK(three.std == doctest::Approx(std::sqrt(14.0 / 3.0)));
  CHECK(quantile({4.0, 1.0, 3.0, 2.0}, 0.5) == doctest::Approx(2.5));
  CHECK(quantile({4.0, 1.0, 3.0, 2.0}, 0.0) == 1.0);
  CHECK(quantile({4.0, 1.0, 3.0, 2.0}, 1.0) == 4.0);
  double prev = -1.0;
  for (double q = 0.0; q <= 1.0; q += 0.125) {
    const double v = quantile({5.0, 1.0, 9.0, 2.0, 2.0}, q);
    CHECK(v >= prev);
    prev = v;
  }
  CHECK_THROWS_AS(quantile({}, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(quantile({1.0}, 1.5), std::invalid_argument);
}

TEST_CASE("make_report: hand-computed summary, deterministic output") {
  CHECK_THROWS_AS(make_report({}, scratch("empty")), std::invalid_argument);

  const std::vector<RunRecord> recs = {record("udama", 10.0, 0.5), record("udama", 20.0, 0.6),
                                       record("udama", 60.0, 0.7), record("transfer", 12.0, 0.4)};
  const fs::path a = scratch("report_a"), b = scratch("report_b");
  make_report(recs, a);
  make_report(recs, b);
  for (const char* f : {"methods.csv", "sweep.csv", "ablation.csv", "stress.csv", "histograms.json"}) {
    CHECK(fs::exists(a / f));
    CHECK(read_file(a / f) == read_file(b / f));
  }
  const std::string methods = read_file(a / "methods.csv");
  CHECK(methods.find("udama,3,") != std::string::npos);
  CHECK(methods.find("30.000000,21.602469") != std::string::npos);  // mse mean, population std
  CHECK(methods.find("transfer,1,") != std::string::npos);
  CHECK(methods.find("12.000000,0.000000") != std::string::npos);
  fs::remove_all(a);
  fs::remove_all(b);
}
