#pragma once

#include <atomic>
#include <iomanip>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "fluid/config.hpp"

namespace fluid {

namespace fs = std::filesystem;

/// FNV-1a over the canonical embedding encoding.
inline std::string dataset_fingerprint(const Dataset& ds) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : encode_embeddings(ds)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  for (ClassRole r : ds.roles()) {
    h ^= static_cast<std::uint64_t>(r) + 1;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline Dataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.data.kind == DataSource::Kind::Gaussian) return synth_gaussian(cfg.data.gaussian);
  const auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : cfg.base_dir / p; };
  return load_embeddings(resolve(cfg.data.embeddings).string(), resolve(cfg.data.manifest).string());
}

struct RunPlan {
  std::string id;
  LearnerEntry entry;
  std::uint64_t seed = 0;
};

inline std::vector<RunPlan> plan_runs(const ExperimentConfig& cfg) {
  std::vector<RunPlan> plans;
  for (const auto& e : cfg.learners)
    for (std::uint64_t seed : cfg.seeds) {
      if (cfg.sweep.empty()) {
        plans.push_back({e.learner.name + "_s" + std::to_string(seed), e, seed});
        continue;
      }
      for (const auto& p : cfg.sweep) {
        RunPlan r{e.learner.name + "_i" + std::to_string(p.interval_samples) + "_e" + std::to_string(p.epochs) + "_s" +
                      std::to_string(seed),
                  e, seed};
        r.entry.strategy.interval_samples = p.interval_samples;
        r.entry.strategy.epochs = p.epochs;
        plans.push_back(std::move(r));
      }
    }
  return plans;
}

inline fs::path manifest_path(const fs::path& out, std::uint64_t seed) {
  return out / "manifests" / ("seed_" + std::to_string(seed) + ".json");
}

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::Io, "cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw Error(Errc::Io, "write failed for '" + path.string() + "'");
}

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(Errc::Io, "cannot open '" + path.string() + "'");
  nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
  if (j.is_discarded()) throw Error(Errc::Format, "'" + path.string() + "' is not valid JSON");
  return j;
}

struct SeedManifest {
  std::uint64_t seed = 0;
  std::string dataset_fingerprint;
  StreamTask task;
};

inline nlohmann::json to_json(const SeedManifest& m) {
  return {{"seed", m.seed}, {"dataset_fingerprint", m.dataset_fingerprint}, {"task", to_json(m.task)}};
}

inline SeedManifest seed_manifest_from_json(const nlohmann::json& j) {
  try {
    return {j.at("seed").get<std::uint64_t>(), j.at("dataset_fingerprint").get<std::string>(),
            stream_task_from_json(j.at("task"))};
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::Format, std::string("sequence manifest: ") + e.what());
  }
}

inline SeedManifest make_manifest(const ExperimentConfig& cfg, const Dataset& ds, const std::string& fp, std::uint64_t seed) {
  SequenceSpec spec = cfg.sequence;
  spec.seed = seed;
  SeedManifest m{seed, fp, build_sequence(ds, spec)};
  check_task(m.task, ds);
  return m;
}

/// Writes one sequence manifest per seed; returns their paths.
inline std::vector<fs::path> cmd_gen(const ExperimentConfig& cfg) {
  validate(cfg);
  const Dataset ds = load_dataset(cfg);
  const std::string fp = dataset_fingerprint(ds);
  std::vector<fs::path> paths;
  for (std::uint64_t seed : cfg.seeds) {
    const auto path = manifest_path(cfg.out, seed);
    write_text(path, to_json(make_manifest(cfg, ds, fp, seed)).dump(1) + "\n");
    paths.push_back(path);
  }
  return paths;
}

struct RunSummary {
  std::string run_id;
  std::string learner;
  LearnerKind kind = LearnerKind::Ncm;
  std::uint64_t seed = 0;
  UpdateStrategy strategy;
  std::string dataset_fingerprint;
  MacMeter meter;
  std::size_t offline_phases = 0;
  std::size_t optimizer_steps = 0;
};

inline nlohmann::json to_json(const RunSummary& s) {
  return {{"run_id", s.run_id},
          {"learner", s.learner},
          {"kind", to_string(s.kind)},
          {"seed", s.seed},
          {"strategy", detail::strategy_json(s.strategy)},
          {"dataset_fingerprint", s.dataset_fingerprint},
          {"macs", {{"inference", s.meter.inference()}, {"training", s.meter.training()}, {"total", s.meter.total()}}},
          {"gmacs", s.meter.gmacs()},
          {"offline_phases", s.offline_phases},
          {"optimizer_steps", s.optimizer_steps}};
}

inline RunSummary run_summary_from_json(const nlohmann::json& j) {
  try {
    RunSummary s;
    s.run_id = j.at("run_id").get<std::string>();
    s.learner = j.at("learner").get<std::string>();
    s.kind = learner_kind_from_string(j.at("kind").get<std::string>());
    s.seed = j.at("seed").get<std::uint64_t>();
    detail::read_schedule(j.at("strategy"), s.strategy, "summary strategy");
    s.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
    s.meter.add_inference(j.at("macs").at("inference").get<std::uint64_t>());
    s.meter.add_training(j.at("macs").at("training").get<std::uint64_t>());
    s.offline_phases = j.at("offline_phases").get<std::size_t>();
    s.optimizer_steps = j.at("optimizer_steps").get<std::size_t>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::Format, std::string("run summary: ") + e.what());
  }
}

struct RunArtifacts {
  RunSummary summary;
  MetricReport report;
  EvalLog log;
};

/// Pretrains and streams one learner; pure in (plan, dataset, task).
inline RunArtifacts execute_run(const RunPlan& plan, const Dataset& ds, const SeedManifest& manifest,
                                const OodScorer& ood, std::size_t window) {
  LearnerConfig lc = plan.entry.learner;
  lc.seed = plan.seed;
  Learner learner(lc, ds.dim());
  learner.pretrain(ds);
  RunResult res = run_stream(manifest.task, ds, learner, plan.entry.strategy, ood);
  RunArtifacts a;
  a.summary = {plan.id, lc.name, lc.kind, plan.seed, plan.entry.strategy, manifest.dataset_fingerprint,
               res.meter, res.offline_phases, res.optimizer_steps};
  a.report = make_report(res.log, manifest.task.buckets, window);
  a.log = std::move(res.log);
  return a;
}

inline void write_artifacts(const fs::path& out, const RunArtifacts& a) {
  std::ostringstream log;
  write_log(log, a.log);
  write_text(out / "logs" / (a.summary.run_id + ".ndjson"), log.str());
  write_text(out / "reports" / (a.summary.run_id + ".summary.json"), to_json(a.summary).dump(1) + "\n");
  write_text(out / "reports" / (a.summary.run_id + ".metrics.json"), to_json(a.report).dump(1) + "\n");
  std::ostringstream rolling;
  write_rolling_csv(rolling, a.report.rolling);
  write_text(out / "reports" / (a.summary.run_id + ".rolling.csv"), rolling.str());
  if (a.report.unseen_auroc) {
    std::vector<double> scores;
    std::vector<bool> unseen;
    for (const auto& r : a.log) {
      scores.push_back(r.ood_score);
      unseen.push_back(r.unseen);
    }
    std::ostringstream roc;
    write_roc_csv(roc, roc_curve(scores, unseen));
    write_text(out / "reports" / (a.summary.run_id + ".roc.csv"), roc.str());
  }
}

/// Runs every (learner, seed, sweep point) with up to `jobs` threads.
/// Missing or stale manifests are regenerated.
inline std::vector<RunSummary> cmd_run(const ExperimentConfig& cfg, std::size_t jobs = 1) {
  validate(cfg);
  const Dataset ds = load_dataset(cfg);
  const std::string fp = dataset_fingerprint(ds);
  const fs::path out = cfg.out;

  std::map<std::uint64_t, SeedManifest> manifests;
  for (std::uint64_t seed : cfg.seeds) {
    const auto path = manifest_path(out, seed);
    std::optional<SeedManifest> m;
    if (fs::exists(path)) {
      m = seed_manifest_from_json(read_json_file(path));
      if (m->dataset_fingerprint != fp || m->seed != seed) m.reset();
      else check_task(m->task, ds);
    }
    if (!m) {
      m = make_manifest(cfg, ds, fp, seed);
      write_text(path, to_json(*m).dump(1) + "\n");
    }
    manifests.emplace(seed, std::move(*m));
  }

  const auto plans = plan_runs(cfg);
  std::vector<std::optional<RunSummary>> results(plans.size());
  std::vector<std::exception_ptr> errors(plans.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < plans.size(); i = next++) {
      try {
        const auto art = execute_run(plans[i], ds, manifests.at(plans[i].seed), cfg.ood, cfg.rolling_window);
        write_artifacts(out, art);
        results[i] = art.summary;
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::max<std::size_t>(1, std::min(jobs, plans.size())); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::vector<RunSummary> summaries;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    if (errors[i]) {
      try {
        std::rethrow_exception(errors[i]);
      } catch (const Error& e) {
        throw Error(e.code(), "run " + plans[i].id + ": " + e.what());
      } catch (const std::exception& e) {
        throw Error(Errc::Io, "run " + plans[i].id + ": " + e.what());
      }
    }
    summaries.push_back(*results[i]);
  }
  return summaries;
}

// ---------------------------------------------------------------------------
// Reports

struct LoadedRun {
  RunSummary summary;
  MetricReport report;  ///< recomputed from the log
  MacMeter log_meter;
};

/// Reads every run under out/reports and recomputes its metrics from the log.
inline std::vector<LoadedRun> load_runs(const fs::path& out, std::size_t window = 1000) {
  std::vector<LoadedRun> runs;
  const fs::path reports = out / "reports";
  if (!fs::is_directory(reports)) return runs;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(reports)) {
    const std::string name = e.path().filename().string();
    if (name.size() > 13 && name.ends_with(".summary.json")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::map<std::uint64_t, SeedManifest> manifests;
  for (const auto& f : files) {
    LoadedRun r;
    r.summary = run_summary_from_json(read_json_file(f));
    auto it = manifests.find(r.summary.seed);
    if (it == manifests.end())
      it = manifests.emplace(r.summary.seed, seed_manifest_from_json(read_json_file(manifest_path(out, r.summary.seed)))).first;
    if (it->second.dataset_fingerprint != r.summary.dataset_fingerprint)
      throw Error(Errc::IncompatibleRuns, "run " + r.summary.run_id + " does not match its sequence manifest");
    std::ifstream lf(out / "logs" / (r.summary.run_id + ".ndjson"));
    if (!lf) throw Error(Errc::Io, "missing log for run " + r.summary.run_id);
    const EvalLog log = read_log(lf);
    r.report = make_report(log, it->second.task.buckets, window);
    r.log_meter = meter_from_log(log);
    if (!(r.log_meter == r.summary.meter))
      throw Error(Errc::Format, "run " + r.summary.run_id + ": logged MACs disagree with the summary meter");
    runs.push_back(std::move(r));
  }
  return runs;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  ///< sample standard deviation; 0 for a single value
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  m.n = v.size();
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return m;
}

inline const std::vector<std::string>& table_header() {
  static const std::vector<std::string> h{"learner",        "novel_head", "pretrain_head", "novel_tail", "pretrain_tail",
                                          "mean_per_class", "overall",    "gmacs"};
  return h;
}

inline const std::vector<std::string>& compute_header() {
  static const std::vector<std::string> h{"learner",         "seed",       "strategy",   "interval_samples", "epochs",
                                          "overall",         "mean_per_class", "training_macs", "total_macs", "gmacs"};
  return h;
}

struct ReportFiles {
  fs::path table;
  fs::path compute;
  fs::path aggregate;
  std::size_t runs = 0;
};

inline std::string csv_line(const std::vector<std::string>& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
  return s + "\n";
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

/// Table of seed-averaged metrics per learner label, a per-run accuracy vs
/// MACs table and a mean/std aggregate, all recomputed from logs.
inline ReportFiles cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out, std::size_t window = 1000) {
  std::vector<LoadedRun> runs;
  for (const auto& d : run_dirs) {
    auto r = load_runs(d, window);
    runs.insert(runs.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
  }
  if (runs.empty()) throw Error(Errc::EmptyInput, "no completed runs found");
  for (const auto& r : runs)
    if (r.summary.dataset_fingerprint != runs.front().summary.dataset_fingerprint)
      throw Error(Errc::IncompatibleRuns, "runs " + runs.front().summary.run_id + " and " + r.summary.run_id +
                                              " were produced on different datasets");

  // a learner label is unique per (name, schedule)
  std::map<std::string, std::vector<const LoadedRun*>> groups;
  std::vector<std::string> order;
  std::set<std::pair<std::string, std::pair<std::size_t, std::size_t>>> schedules;
  for (const auto& r : runs) schedules.insert({r.summary.learner, {r.summary.strategy.interval_samples, r.summary.strategy.epochs}});
  auto label_of = [&](const LoadedRun& r) {
    std::size_t n = 0;
    for (const auto& s : schedules) n += s.first == r.summary.learner;
    if (n <= 1) return r.summary.learner;
    return r.summary.learner + "@i" + std::to_string(r.summary.strategy.interval_samples) + "e" +
           std::to_string(r.summary.strategy.epochs);
  };
  for (const auto& r : runs) {
    const std::string label = label_of(r);
    if (!groups.contains(label)) order.push_back(label);
    groups[label].push_back(&r);
  }

  std::string table = csv_line(table_header());
  nlohmann::json agg = nlohmann::json::object();
  for (const auto& label : order) {
    const auto& g = groups[label];
    std::vector<std::string> row{label};
    nlohmann::json ja;
    for (Bucket b : kAllBuckets) {
      std::vector<double> v;
      for (const auto* r : g)
        if (auto it = r->report.bucket_accuracies.find(b); it != r->report.bucket_accuracies.end()) v.push_back(it->second);
      const MeanStd ms = mean_std(v);
      row.push_back(v.empty() ? "" : fmt(ms.mean));
      if (!v.empty()) ja[to_string(b)] = {{"mean", ms.mean}, {"std", ms.std}, {"n", ms.n}};
    }
    auto add = [&](const char* key, auto get) {
      std::vector<double> v;
      for (const auto* r : g) v.push_back(get(*r));
      const MeanStd ms = mean_std(v);
      row.push_back(fmt(ms.mean));
      ja[key] = {{"mean", ms.mean}, {"std", ms.std}, {"n", ms.n}};
    };
    add("mean_per_class", [](const LoadedRun& r) { return r.report.mean_per_class; });
    add("overall", [](const LoadedRun& r) { return r.report.overall_accuracy; });
    add("gmacs", [](const LoadedRun& r) { return r.log_meter.gmacs(); });
    std::vector<double> au;
    for (const auto* r : g)
      if (r->report.unseen_auroc) au.push_back(*r->report.unseen_auroc);
    if (!au.empty()) {
      const MeanStd ms = mean_std(au);
      ja["unseen_auroc"] = {{"mean", ms.mean}, {"std", ms.std}, {"n", ms.n}};
    }
    agg[label] = ja;
    table += csv_line(row);
  }

  std::string compute = csv_line(compute_header());
  for (const auto& r : runs) {
    const auto& s = r.summary;
    compute += csv_line({s.learner, std::to_string(s.seed), to_string(s.strategy.kind),
                         std::to_string(s.strategy.interval_samples), std::to_string(s.strategy.epochs),
                         fmt(r.report.overall_accuracy), fmt(r.report.mean_per_class),
                         std::to_string(r.log_meter.training()), std::to_string(r.log_meter.total()),
                         fmt(r.log_meter.gmacs())});
  }

  ReportFiles files{out / "reports" / "table.csv", out / "reports" / "compute.csv", out / "reports" / "aggregate.json",
                    runs.size()};
  write_text(files.table, table);
  write_text(files.compute, compute);
  write_text(files.aggregate, agg.dump(1) + "\n");
  return files;
}

}  // namespace fluid
