#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "selab/harness.hpp"

using namespace selab;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("selab_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json ring_exact_doc(const fs::path& out) {
  json j = json::parse(R"({
    "env": {"name": "ring", "params": {"n": 6, "slip": 0.1}},
    "method": {"type": "exact_pg", "lambda": 0.1, "lr": 0.5, "iters": 10, "init": "random"},
    "seeds": [0]
  })");
  j["output_dir"] = out.string();
  return j;
}

json small_ac_doc() {
  return json::parse(R"({
    "env": {"name": "frozen_lake"},
    "method": {"type": "actor_critic", "lambda": 0.1, "mode": "reward_bonus", "episodes": 5,
               "schedules": {"c": {"base": 5.0, "exponent": 0.9}},
               "latent": {"z_dim": 4, "hidden_dim": 4}},
    "seeds": [0, 1]
  })");
}

bool has_error_for(const ConfigError& e, const std::string& prefix) {
  for (const auto& m : e.errors())
    if (m.rfind(prefix, 0) == 0) return true;
  return false;
}

}  // namespace

TEST(Config, ParsesDemoConfigs) {
  for (const auto& entry : fs::directory_iterator(fs::path(SELAB_SOURCE_DIR) / "configs")) {
    if (entry.path().extension() != ".json") continue;
    EXPECT_NO_THROW((void)load_config(entry.path())) << entry.path();
  }
}

TEST(Config, ReportsEveryOffendingField) {
  const json j = json::parse(R"({
    "env": {"name": "moon"},
    "method": {"type": "exact_pg", "lr": -1, "iters": 0, "bogus": true},
    "seeds": [0, 0],
    "emit": ["pictures"]
  })");
  try {
    (void)parse_config(j);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_TRUE(has_error_for(e, "env.name"));
    EXPECT_TRUE(has_error_for(e, "method.lr"));
    EXPECT_TRUE(has_error_for(e, "method.iters"));
    EXPECT_TRUE(has_error_for(e, "method.bogus"));
    EXPECT_TRUE(has_error_for(e, "seeds"));
    EXPECT_TRUE(has_error_for(e, "emit[0]"));
    EXPECT_GE(e.errors().size(), 6u);
  }
}

TEST(Config, MissingMethodAndBadEnvParams) {
  const json j = json::parse(R"({"env": {"name": "ring", "params": {"slip": 2.0}}})");
  try {
    (void)parse_config(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_TRUE(has_error_for(e, "method.type"));
    EXPECT_TRUE(has_error_for(e, "env.params"));
  }
}

TEST(Config, ScheduleViolationIsAFieldError) {
  json j = small_ac_doc();
  j["method"]["schedules"]["c"] = {{"base", 1.0}, {"exponent", 0.4}};
  try {
    (void)parse_config(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_TRUE(has_error_for(e, "method.schedules"));
  }
  j["method"]["enforce_schedules"] = false;
  EXPECT_NO_THROW((void)parse_config(j));
}

TEST(Config, NoneModeRequiresZeroLambda) {
  json j = small_ac_doc();
  j["method"]["mode"] = "none";
  EXPECT_THROW((void)parse_config(j), ConfigError);
  j["method"]["lambda"] = 0.0;
  EXPECT_NO_THROW((void)parse_config(j));
}

TEST(Config, NormalizedDocumentRoundTrips) {
  const auto cfg = parse_config(small_ac_doc());
  const auto again = parse_config(to_json_doc(cfg));
  EXPECT_EQ(to_json_doc(again), to_json_doc(cfg));
  EXPECT_EQ(config_hash(again), config_hash(cfg));
}

TEST(Config, HashTracksSemanticFieldsOnly) {
  const json base = small_ac_doc();
  const auto h0 = config_hash(parse_config(base));

  json cosmetic = base;
  cosmetic["output_dir"] = "elsewhere";
  cosmetic["emit"] = {"metrics", "heatmap"};
  EXPECT_EQ(config_hash(parse_config(cosmetic)), h0);

  // Spelling out a default changes nothing either.
  json explicit_default = base;
  explicit_default["method"]["update_period"] = 1;
  EXPECT_EQ(config_hash(parse_config(explicit_default)), h0);

  for (const auto& patch : {json{{"method", {{"lambda", 0.2}}}}, json{{"method", {{"episodes", 6}}}},
                            json{{"seeds", {0, 2}}}, json{{"env", {{"params", {{"slippery", 0.0}}}}}},
                            json{{"method", {{"latent", {{"z_dim", 5}}}}}}}) {
    json changed = base;
    changed.merge_patch(patch);
    EXPECT_NE(config_hash(parse_config(changed)), h0) << patch.dump();
  }
}

TEST(Files, WriteAtomicLeavesOnlyTheTarget) {
  const auto dir = scratch_dir("atomic");
  write_atomic(dir / "sub" / "a.txt", "hello");
  write_atomic(dir / "sub" / "a.txt", "world");
  EXPECT_EQ(slurp(dir / "sub" / "a.txt"), "world");
  int n = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "sub")) ++n;
  EXPECT_EQ(n, 1);
}

TEST(Files, CsvRoundTrip) {
  const auto dir = scratch_dir("csv");
  std::vector<ExactPgRecord> recs{{0, 1.5, 0.25, 1.525, 0.1, "abc"}, {1, 1.0 / 3.0, 0.5, 0.3833, 0.2, "def"}};
  write_atomic(dir / "t.csv", trace_csv(recs));
  const auto t = read_csv(dir / "t.csv");
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.numbers("J")[1], 1.0 / 3.0);  // max_digits10 keeps doubles exact
  EXPECT_EQ(t.rows[0][t.column("theta_hash")], "abc");
  EXPECT_THROW((void)t.column("nope"), std::invalid_argument);
}

TEST(Aggregate, MeanAndSampleStandardError) {
  const auto [m, se] = mean_stderr({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m, 2.5);
  EXPECT_DOUBLE_EQ(se, std::sqrt(5.0 / 3.0) / 2.0);
  EXPECT_EQ(mean_stderr({7.0}).second, 0.0);
  EXPECT_TRUE(std::isnan(mean_stderr({}).first));
  EXPECT_DOUBLE_EQ(tail_mean({1, 2, 3, 4}, 2), 3.5);
  EXPECT_DOUBLE_EQ(tail_mean({1, 2}, 10), 1.5);
}

TEST(Aggregate, SkipsSeedsWithoutTheMetric) {
  std::vector<SeedOutcome> seeds(3);
  seeds[0].finals = {{"x", 1.0}};
  seeds[1].finals = {{"x", 3.0}, {"y", 5.0}};
  const auto agg = aggregate(seeds);
  EXPECT_DOUBLE_EQ(agg.at("x").first, 2.0);
  EXPECT_DOUBLE_EQ(agg.at("y").first, 5.0);
  EXPECT_EQ(agg.at("y").second, 0.0);
}

TEST(Heatmap, AllZeroCountsRenderBlack) {
  const auto env = build({EnvName::gridworld_open, {{"rows", 3}, {"cols", 4}}});
  const auto f = render_heatmap(std::vector<long>(12, 0), env.layout);
  ASSERT_TRUE(f.pgm.has_value());
  const std::string header = "P5\n4 3\n255\n";
  ASSERT_EQ(f.pgm->size(), header.size() + 12);
  EXPECT_EQ(f.pgm->substr(0, header.size()), header);
  for (std::size_t i = header.size(); i < f.pgm->size(); ++i) EXPECT_EQ((*f.pgm)[i], '\0');
}

TEST(Heatmap, SingleVisitedCellIsTheOnlyNonzero) {
  const auto env = build({EnvName::gridworld_open, {{"rows", 3}, {"cols", 4}}});
  std::vector<long> counts(12, 0);
  counts[5] = 17;
  const auto f = render_heatmap(counts, env.layout);
  const auto [r, c] = env.layout->coord(5);
  std::stringstream ss(f.csv);
  std::string line;
  int nonzero = 0;
  for (int row = 0; std::getline(ss, line); ++row) {
    std::stringstream ls(line);
    std::string cell;
    for (int col = 0; std::getline(ls, cell, ','); ++col)
      if (cell != "0") {
        ++nonzero;
        EXPECT_EQ(row, r);
        EXPECT_EQ(col, c);
        EXPECT_EQ(cell, "17");
      }
  }
  EXPECT_EQ(nonzero, 1);
  const std::size_t off = std::string("P5\n4 3\n255\n").size();
  EXPECT_EQ(static_cast<unsigned char>((*f.pgm)[off + std::size_t(r * 4 + c)]), 255);
}

TEST(Heatmap, NonGridEnvironmentWritesStateCounts) {
  const auto dir = scratch_dir("heat_ring");
  emit_heatmap({3, 0, 1}, std::nullopt, dir);
  EXPECT_EQ(slurp(dir / "visits.csv"), "state,count\n0,3\n1,0\n2,1\n");
  EXPECT_FALSE(fs::exists(dir / "heatmap.pgm"));
}

TEST(Heatmap, WallsAreZeroAndLayoutIsWritten) {
  const auto env = build({EnvName::gridworld_slits, {}});
  std::vector<long> counts(121, 4);
  const auto dir = scratch_dir("heat_slits");
  emit_heatmap(counts, env.layout, dir);
  const auto grid = read_csv(dir / "heatmap.csv");  // first row lands in the header
  EXPECT_EQ(grid.header[3], "0");                   // wall column
  EXPECT_EQ(grid.header[0], "4");
  EXPECT_TRUE(fs::exists(dir / "layout.csv"));
  EXPECT_THROW((void)render_heatmap(std::vector<long>(5, 0), env.layout), std::invalid_argument);
}

TEST(Cli, SeedListsAndWorkers) {
  EXPECT_EQ(parse_seed_list("0..3"), (std::vector<std::uint64_t>{0, 1, 2, 3}));
  EXPECT_EQ(parse_seed_list("5"), (std::vector<std::uint64_t>{5}));
  EXPECT_EQ(parse_seed_list("0,2,5"), (std::vector<std::uint64_t>{0, 2, 5}));
  for (const char* bad : {"", "3..1", "a", "-1", "1,,2x"}) EXPECT_THROW((void)parse_seed_list(bad), std::invalid_argument) << bad;

  EXPECT_EQ(resolve_workers(3), 3);
  ::setenv("SELAB_WORKERS", "2", 1);
  EXPECT_EQ(resolve_workers(0), 2);
  ::setenv("SELAB_WORKERS", "junk", 1);
  EXPECT_GE(resolve_workers(0), 1);
  ::unsetenv("SELAB_WORKERS");
}

TEST(Cli, ParallelForRunsEveryJobOnce) {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, 4, [&](std::size_t i) { ++hits[i]; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  parallel_for(0, 4, [&](std::size_t) { FAIL(); });
}

TEST(Run, ExactPgWritesTraceAndSummary) {
  const auto dir = scratch_dir("ring_run");
  json j = ring_exact_doc(dir);
  j["emit"] = {"metrics", "distributions", "heatmap"};
  const auto cfg = parse_config(j);
  const auto s = run_experiment(cfg, 1);
  ASSERT_TRUE(s.all_ok());

  const auto trace = read_csv(dir / "seed_0" / "metrics.csv");
  EXPECT_EQ(trace.rows.size(), 10u);
  EXPECT_EQ(trace.header.front(), "iteration");
  EXPECT_TRUE(fs::exists(dir / "seed_0" / "distributions.csv"));
  EXPECT_TRUE(fs::exists(dir / "seed_0" / "visits.csv"));

  const json summary = json::parse(slurp(dir / "summary.json"));
  EXPECT_EQ(summary["seeds"].size(), 1u);
  EXPECT_EQ(summary["seeds"][0]["status"], "ok");
  EXPECT_EQ(summary["method"], "exact_pg");
  EXPECT_EQ(summary["config_hash"], config_hash(cfg));
  EXPECT_DOUBLE_EQ(summary["aggregate"]["J"]["mean"].get<double>(), trace.numbers("J").back());
  EXPECT_EQ(summary["aggregate"]["J"]["n"], 1);

  // The distributions file carries exact occupancies that sum to one.
  const auto d = read_csv(dir / "seed_0" / "distributions.csv");
  double total = 0.0;
  for (double x : d.numbers("exact_discounted")) total += x;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Run, FailingSeedIsReportedNotFatal) {
  const auto dir = scratch_dir("bad_seed");
  json j = ring_exact_doc(dir);
  j["method"]["init"] = "biased";
  j["method"]["init_action"] = 7;  // ring has two actions
  const auto s = run_experiment(parse_config(j), 1);
  EXPECT_FALSE(s.all_ok());
  const json summary = json::parse(slurp(dir / "summary.json"));
  EXPECT_EQ(summary["seeds"][0]["status"], "error");
  EXPECT_NE(summary["seeds"][0]["error"].get<std::string>().find("init_action"), std::string::npos);
}

TEST(Run, ActorCriticRerunIsBitwiseIdentical) {
  const auto dir = scratch_dir("ac_rerun");
  json j = small_ac_doc();
  j["emit"] = {"metrics", "heatmap", "distributions", "checkpoints"};
  j["output_dir"] = (dir / "a").string();
  const auto a = run_experiment(parse_config(j), 2);
  j["output_dir"] = (dir / "b").string();
  const auto b = run_experiment(parse_config(j), 1);
  ASSERT_TRUE(a.all_ok()) << a.seeds[0].error;
  for (const char* seed : {"seed_0", "seed_1"})
    for (const char* f : {"metrics.csv", "heatmap.csv", "heatmap.pgm", "distributions.csv", "checkpoint.json"})
      EXPECT_EQ(slurp(dir / "a" / seed / f), slurp(dir / "b" / seed / f)) << seed << "/" << f;

  json sa = json::parse(slurp(dir / "a" / "summary.json"));
  json sb = json::parse(slurp(dir / "b" / "summary.json"));
  for (json* s : {&sa, &sb}) {
    s->erase("wall_clock_seconds");
    (*s)["config"].erase("output_dir");
  }
  EXPECT_EQ(sa, sb);
}

TEST(Run, AggregatesRecomputeFromPerSeedFiles) {
  const auto dir = scratch_dir("ac_agg");
  json j = small_ac_doc();
  j["seeds"] = {0, 1, 2};
  j["final_window"] = 3;
  j["output_dir"] = dir.string();
  (void)run_experiment(parse_config(j), 0);
  const json summary = json::parse(slurp(dir / "summary.json"));
  std::vector<double> finals;
  for (const auto& e : summary["seeds"]) {
    const auto t = read_csv(dir / e["metrics_path"].get<std::string>());
    finals.push_back(tail_mean(t.numbers("return"), 3));
  }
  const auto [m, se] = mean_stderr(finals);
  EXPECT_NEAR(summary["aggregate"]["final_return"]["mean"].get<double>(), m, 1e-9);
  EXPECT_NEAR(summary["aggregate"]["final_return"]["stderr"].get<double>(), se, 1e-9);
}

TEST(Sweep, AlwaysIncludesZeroAndWritesLongFormat) {
  const auto dir = scratch_dir("sweep");
  json j = small_ac_doc();
  j["output_dir"] = dir.string();
  const auto res = run_sweep(parse_config(j), {0.1}, 2);
  EXPECT_EQ(res.lambdas, (std::vector<double>{0.0, 0.1}));
  EXPECT_TRUE(res.all_ok);
  EXPECT_EQ(res.rows, 20u);  // 2 lambdas x 2 seeds x 5 episodes
  const auto t = read_csv(dir / "sweep.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"lambda", "seed", "episode", "return"}));
  EXPECT_EQ(t.rows.size(), 20u);
  EXPECT_TRUE(fs::exists(dir / "lambda_0" / "summary.json"));
  EXPECT_TRUE(fs::exists(dir / "lambda_0.1" / "seed_1" / "metrics.csv"));
  const json s0 = json::parse(slurp(dir / "lambda_0" / "summary.json"));
  EXPECT_EQ(s0["config"]["method"]["mode"], "none");
  EXPECT_THROW((void)run_sweep(parse_config(j), {-1.0}, 1), ConfigError);
}

TEST(Sweep, ExactPgSweepSetsLambda) {
  const auto dir = scratch_dir("sweep_pg");
  const auto res = run_sweep(parse_config(ring_exact_doc(dir)), {0.0, 0.5}, 2);
  ASSERT_EQ(res.runs.size(), 2u);
  EXPECT_EQ(res.rows, 20u);
  EXPECT_NE(res.runs.at(0.0).aggregate.at("J_tilde").first, res.runs.at(0.5).aggregate.at("J_tilde").first);
}
