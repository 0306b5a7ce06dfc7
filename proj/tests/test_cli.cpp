#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "support.hpp"

using namespace fluid;
using testing_support::temp_dir;
namespace fs = std::filesystem;

namespace {

nlohmann::json tiny_config(const fs::path& out) {
  auto j = nlohmann::json::parse(R"({
    "data": {"kind": "gaussian", "num_classes": 6, "dim": 4, "cluster_separation": 5.0,
             "samples_per_class": 60, "pretrain_fraction": 0.5, "seed": 2},
    "sequence": {"num_classes": 6, "total_samples": 150, "head_threshold": 20},
    "schedule": {"interval_samples": 50, "epochs": 1},
    "learners": [{"kind": "ncm", "strategy": {"kind": "none"}},
                 {"kind": "exemplar_tuning", "name": "et"}],
    "seeds": [1, 2, 3],
    "rolling_window": 40
  })");
  j["out"] = out.string();
  return j;
}

ExperimentConfig parse(const nlohmann::json& j) { return experiment_config_from_json(j); }

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream f(p);
  std::string line;
  while (std::getline(f, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    rows.push_back(cells);
  }
  return rows;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(FLUID_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, RoundTripAndDefaults) {
  const auto cfg = parse(tiny_config("o"));
  EXPECT_EQ(parse(to_json(cfg)), cfg);
  EXPECT_EQ(cfg.learners[0].strategy.kind, UpdateStrategy::Kind::None);
  EXPECT_EQ(cfg.learners[1].strategy.kind, UpdateStrategy::Kind::Hybrid);
  EXPECT_EQ(cfg.learners[1].strategy.interval_samples, 50u);
  EXPECT_EQ(cfg.learners[0].learner.name, "ncm");
  const auto minimal = parse(nlohmann::json::parse(R"({"learners": [{"kind": "fine_tune"}]})"));
  EXPECT_EQ(minimal.learners[0].strategy, UpdateStrategy::offline_every(5000, 4));
  EXPECT_DOUBLE_EQ(minimal.learners[0].learner.momentum, 0.9);
  EXPECT_EQ(minimal.ood.kind, OodScorer::Kind::Mdt);
}

TEST(Config, ErrorsAreConfigErrors) {
  auto expect_config_error = [](const nlohmann::json& j) {
    try {
      parse(j);
      FAIL() << j.dump();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::Config) << e.what();
    }
  };
  auto j = tiny_config("o");
  j["typo"] = 1;
  expect_config_error(j);
  j = tiny_config("o");
  j["learners"][1]["name"] = "ncm";
  expect_config_error(j);
  j = tiny_config("o");
  j["learners"][0]["kind"] = "svm";
  expect_config_error(j);
  j = tiny_config("o");
  j["sequence"]["total_samples"] = 2;
  expect_config_error(j);
  j = tiny_config("o");
  j["seeds"] = "three";
  expect_config_error(j);
  expect_config_error(nlohmann::json::parse(R"({"learners": []})"));
  try {
    load_config("/nonexistent/config.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::Config);
  }
}

TEST(Gen, ManifestsPerSeedAreDistinctAndIdempotent) {
  const auto dir = temp_dir("gen");
  const auto cfg = parse(tiny_config(dir));
  const auto paths = cmd_gen(cfg);
  ASSERT_EQ(paths.size(), 3u);
  std::vector<std::string> bytes;
  std::set<std::vector<std::size_t>> orders;
  const Dataset ds = load_dataset(cfg);
  for (const auto& p : paths) {
    bytes.push_back(slurp(p));
    const auto m = seed_manifest_from_json(read_json_file(p));
    EXPECT_NO_THROW(check_task(m.task, ds));
    orders.insert(m.task.order);
  }
  EXPECT_EQ(orders.size(), 3u);
  cmd_gen(cfg);
  for (std::size_t i = 0; i < paths.size(); ++i) EXPECT_EQ(slurp(paths[i]), bytes[i]);
}

TEST(Run, SmokeArtifactsAndSharedUnseenFlags) {
  const auto dir = temp_dir("run");
  auto j = tiny_config(dir);
  j["seeds"] = {1};
  const auto summaries = cmd_run(parse(j), 2);
  ASSERT_EQ(summaries.size(), 2u);
  for (const auto* id : {"ncm_s1", "et_s1"}) {
    EXPECT_TRUE(fs::exists(dir / "logs" / (std::string(id) + ".ndjson")));
    EXPECT_TRUE(fs::exists(dir / "reports" / (std::string(id) + ".summary.json")));
    EXPECT_TRUE(fs::exists(dir / "reports" / (std::string(id) + ".metrics.json")));
    EXPECT_TRUE(fs::exists(dir / "reports" / (std::string(id) + ".rolling.csv")));
  }
  EXPECT_EQ(summaries[0].meter.training(), 0u);
  std::ifstream a(dir / "logs" / "ncm_s1.ndjson"), b(dir / "logs" / "et_s1.ndjson");
  const EvalLog la = read_log(a), lb = read_log(b);
  ASSERT_EQ(la.size(), lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) {
    EXPECT_EQ(la[i].unseen, lb[i].unseen);
    EXPECT_EQ(la[i].true_class, lb[i].true_class);
  }
  const auto again_dir = temp_dir("run_again");
  j["out"] = again_dir.string();
  cmd_run(parse(j), 1);
  EXPECT_EQ(slurp(dir / "logs" / "et_s1.ndjson"), slurp(again_dir / "logs" / "et_s1.ndjson"));
}

TEST(Report, AggregateTableAndCompute) {
  const auto dir = temp_dir("report");
  const auto cfg = parse(tiny_config(dir));
  const auto summaries = cmd_run(cfg, 3);
  const auto files = cmd_report({dir}, dir, cfg.rolling_window);
  EXPECT_EQ(files.runs, 6u);

  const auto table = read_csv(files.table);
  ASSERT_EQ(table.size(), 3u);
  EXPECT_EQ(table[0], table_header());
  EXPECT_EQ(table[0], (std::vector<std::string>{"learner", "novel_head", "pretrain_head", "novel_tail", "pretrain_tail",
                                                "mean_per_class", "overall", "gmacs"}));

  // hand aggregation of the ET rows from the per-run metric files
  std::vector<double> overall, gmacs;
  for (int seed = 1; seed <= 3; ++seed) {
    const auto m = metric_report_from_json(read_json_file(dir / "reports" / ("et_s" + std::to_string(seed) + ".metrics.json")));
    overall.push_back(m.overall_accuracy);
    const auto s = run_summary_from_json(read_json_file(dir / "reports" / ("et_s" + std::to_string(seed) + ".summary.json")));
    gmacs.push_back(static_cast<double>(s.meter.total()) / 1e9);
  }
  const double mean = (overall[0] + overall[1] + overall[2]) / 3.0;
  double ss = 0.0;
  for (double v : overall) ss += (v - mean) * (v - mean);
  const auto agg = read_json_file(files.aggregate);
  EXPECT_NEAR(agg["et"]["overall"]["mean"].get<double>(), mean, 1e-15);
  EXPECT_NEAR(agg["et"]["overall"]["std"].get<double>(), std::sqrt(ss / 2.0), 1e-15);
  EXPECT_NEAR(agg["et"]["gmacs"]["mean"].get<double>(), (gmacs[0] + gmacs[1] + gmacs[2]) / 3.0, 1e-18);
  for (const auto& row : table) {
    if (row[0] == "et") {
      EXPECT_NEAR(std::stod(row[7]), (gmacs[0] + gmacs[1] + gmacs[2]) / 3.0, 1e-15);
    }
  }

  const auto compute = read_csv(files.compute);
  EXPECT_EQ(compute[0], compute_header());
  EXPECT_EQ(compute.size(), 7u);
}

TEST(Report, SingleRunSingleRow) {
  const auto dir = temp_dir("single");
  auto j = tiny_config(dir);
  j["seeds"] = {4};
  j["learners"] = nlohmann::json::parse(R"([{"kind": "fine_tune"}])");
  const auto s = cmd_run(parse(j), 1);
  const auto files = cmd_report({dir}, dir, 40);
  const auto table = read_csv(files.table);
  ASSERT_EQ(table.size(), 2u);
  EXPECT_EQ(table[1][0], "fine_tune");
  EXPECT_DOUBLE_EQ(std::stod(table[1][7]), static_cast<double>(s[0].meter.total()) / 1e9);
}

TEST(Report, RejectsMixedDatasetsAndTamperedLogs) {
  const auto a = temp_dir("mix_a"), b = temp_dir("mix_b");
  auto ja = tiny_config(a);
  ja["seeds"] = {1};
  ja["learners"] = nlohmann::json::parse(R"([{"kind": "ncm"}])");
  auto jb = ja;
  jb["out"] = b.string();
  jb["data"]["seed"] = 9;
  cmd_run(parse(ja), 1);
  cmd_run(parse(jb), 1);
  try {
    cmd_report({a, b}, a, 40);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IncompatibleRuns);
  }
  EvalRecord extra;
  extra.macs_inference = 1;
  std::ofstream(b / "logs" / "ncm_s1.ndjson", std::ios::app) << to_json(extra).dump() << "\n";
  EXPECT_THROW(cmd_report({b}, b, 40), Error);
  const auto empty = temp_dir("mix_empty");
  EXPECT_THROW(cmd_report({empty}, empty, 40), Error);
}

TEST(Cli, ExitCodesAndOutputs) {
  const auto dir = temp_dir("cli");
  auto j = tiny_config(dir / "out");
  j["seeds"] = {1, 2};
  std::ofstream(dir / "cfg.json") << j.dump();
  const std::string cfg = (dir / "cfg.json").string();
  EXPECT_EQ(cli("gen --config " + cfg), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "manifests" / "seed_2.json"));
  EXPECT_EQ(cli("run --config " + cfg + " --jobs 2 --seed-override 7 --out " + (dir / "o7").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "o7" / "logs" / "et_s7.ndjson"));
  EXPECT_FALSE(fs::exists(dir / "o7" / "logs" / "et_s1.ndjson"));
  EXPECT_EQ(cli("report " + (dir / "o7").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "o7" / "reports" / "table.csv"));

  EXPECT_EQ(cli("run --config /nonexistent.json"), 1);
  EXPECT_EQ(cli("run"), 1);
  EXPECT_EQ(cli("frobnicate"), 1);
  EXPECT_EQ(cli("run --config " + cfg + " --jobs 0"), 1);
  std::ofstream(dir / "bad.json") << R"({"learners": [{"kind": "ncm", "lr": 1}]})";
  EXPECT_EQ(cli("gen --config " + (dir / "bad.json").string()), 1);
  EXPECT_EQ(cli("report " + (dir / "nothing").string()), 2);
  auto big = j;
  big["sequence"]["total_samples"] = 100000;
  std::ofstream(dir / "big.json") << big.dump();
  EXPECT_EQ(cli("gen --config " + (dir / "big.json").string()), 2);
}
