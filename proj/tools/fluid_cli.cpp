// fluid: generate sequences, run learners over them, and summarize the runs.
#include <CLI11.hpp>
#include <iostream>

#include "fluid/fluid.hpp"

namespace {

enum Exit { kOk = 0, kConfigError = 1, kRuntimeError = 2 };

struct Options {
  std::string config;
  std::string out;
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed_override;
  std::vector<std::string> run_dirs;
  std::size_t window = 1000;
};

fluid::ExperimentConfig resolve(const Options& o) {
  if (o.config.empty()) throw fluid::Error(fluid::Errc::Config, "--config is required");
  auto cfg = fluid::load_config(o.config);
  if (!o.out.empty()) cfg.out = o.out;
  if (o.seed_override) cfg.seeds = {*o.seed_override};
  return cfg;
}

int run_command(const std::string& cmd, const Options& o) {
  if (cmd == "gen") {
    const auto cfg = resolve(o);
    for (const auto& p : fluid::cmd_gen(cfg)) std::cout << p.string() << "\n";
  } else if (cmd == "run") {
    const auto cfg = resolve(o);
    const auto runs = fluid::cmd_run(cfg, o.jobs);
    for (const auto& s : runs)
      std::cout << s.run_id << "  gmacs=" << s.meter.gmacs() << "  phases=" << s.offline_phases << "\n";
  } else {
    std::vector<std::filesystem::path> dirs(o.run_dirs.begin(), o.run_dirs.end());
    std::size_t window = o.window;
    std::filesystem::path out = o.out;
    if (!o.config.empty()) {
      const auto cfg = resolve(o);
      window = cfg.rolling_window;
      if (out.empty()) out = cfg.out;
    }
    if (dirs.empty() && !out.empty()) dirs.push_back(out);
    if (dirs.empty()) throw fluid::Error(fluid::Errc::Config, "report needs run directories, --out or --config");
    if (out.empty()) out = dirs.front();
    const auto files = fluid::cmd_report(dirs, out, window);
    std::cout << files.table.string() << "\n" << files.compute.string() << "\n" << files.aggregate.string() << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming open-world evaluation of feature-space learners"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "experiment config (JSON)");
    sub->add_option("--out", o.out, "output directory (overrides the config)");
    sub->add_option("--seed-override", seed, "run this single seed instead of the config's list");
  };
  auto* gen = app.add_subcommand("gen", "write sequence manifests");
  add_common(gen);
  gen->add_option("--jobs", o.jobs, "accepted for symmetry; generation is sequential");
  auto* run = app.add_subcommand("run", "pretrain and stream every learner and seed");
  add_common(run);
  run->add_option("--jobs", o.jobs, "concurrent runs")->check(CLI::PositiveNumber);
  auto* report = app.add_subcommand("report", "tables and plot data from completed runs");
  add_common(report);
  report->add_option("--jobs", o.jobs, "unused");
  report->add_option("--window", o.window, "rolling accuracy window")->check(CLI::PositiveNumber);
  report->add_option("run_dirs", o.run_dirs, "output directories of completed runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  for (auto* sub : {gen, run, report})
    if (sub->parsed() && sub->count("--seed-override")) o.seed_override = seed;

  const std::string cmd = gen->parsed() ? "gen" : run->parsed() ? "run" : "report";
  try {
    return run_command(cmd, o);
  } catch (const fluid::Error& e) {
    std::cerr << "fluid " << cmd << ": " << e.what() << "\n";
    return e.code() == fluid::Errc::Config ? kConfigError : kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "fluid " << cmd << ": " << e.what() << "\n";
    return kRuntimeError;
  }
}
