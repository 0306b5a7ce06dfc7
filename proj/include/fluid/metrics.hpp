#pragma once

#include "fluid/harness.hpp"

namespace fluid {

struct ClassTally {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return static_cast<double>(correct) / static_cast<double>(total); }
};

inline void require_nonempty(const EvalLog& log) {
  if (log.empty()) throw Error(Errc::EmptyInput, "empty evaluation log");
}

inline std::map<ClassId, ClassTally> per_class(const EvalLog& log) {
  std::map<ClassId, ClassTally> t;
  for (const auto& r : log) {
    auto& c = t[r.true_class];
    ++c.total;
    c.correct += r.correct();
  }
  return t;
}

inline double overall_accuracy(const EvalLog& log) {
  require_nonempty(log);
  std::size_t hits = 0;
  for (const auto& r : log) hits += r.correct();
  return static_cast<double>(hits) / static_cast<double>(log.size());
}

inline double mean_per_class(const EvalLog& log) {
  require_nonempty(log);
  const auto t = per_class(log);
  double sum = 0.0;
  for (const auto& [c, tally] : t) sum += tally.accuracy();
  return sum / static_cast<double>(t.size());
}

/// Unweighted per-class mean inside each bucket; buckets with no logged class are absent.
inline std::map<Bucket, double> cross_sectional(const EvalLog& log, const std::map<ClassId, Bucket>& buckets) {
  std::map<Bucket, std::pair<double, std::size_t>> acc;
  for (const auto& [c, tally] : per_class(log)) {
    const auto it = buckets.find(c);
    if (it == buckets.end()) throw Error(Errc::UnknownClass, "class " + std::to_string(c) + " has no bucket");
    auto& [sum, n] = acc[it->second];
    sum += tally.accuracy();
    ++n;
  }
  std::map<Bucket, double> out;
  for (const auto& [b, sn] : acc) out[b] = sn.first / static_cast<double>(sn.second);
  return out;
}

inline double unseen_auroc(const EvalLog& log) {
  std::vector<double> scores;
  std::vector<bool> unseen;
  scores.reserve(log.size());
  for (const auto& r : log) {
    scores.push_back(r.ood_score);
    unseen.push_back(r.unseen);
  }
  return auroc(scores, unseen);
}

struct RollingPoint {
  std::size_t step = 0;
  double accuracy = 0.0;
  bool operator==(const RollingPoint&) const = default;
};

/// Trailing-window accuracy at every step whose window is full.
inline std::vector<RollingPoint> rolling_accuracy(const EvalLog& log, std::size_t window = 1000) {
  if (window < 1) throw Error(Errc::InvalidSpec, "rolling window must be >= 1");
  if (window > log.size()) throw Error(Errc::WindowTooLarge, "rolling window exceeds log length");
  std::vector<RollingPoint> pts;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    hits += log[i].correct();
    if (i >= window) hits -= log[i - window].correct();
    if (i + 1 >= window) pts.push_back({log[i].step, static_cast<double>(hits) / static_cast<double>(window)});
  }
  return pts;
}

struct MetricReport {
  double overall_accuracy = 0.0;
  double mean_per_class = 0.0;
  std::map<Bucket, double> bucket_accuracies;
  std::optional<double> unseen_auroc;  ///< absent when every step had the same flag
  double total_gmacs = 0.0;
  std::vector<RollingPoint> rolling;

  bool operator==(const MetricReport&) const = default;
};

/// Rolling accuracy uses min(window, log length).
inline MetricReport make_report(const EvalLog& log, const std::map<ClassId, Bucket>& buckets,
                                std::size_t window = 1000) {
  MetricReport r;
  r.overall_accuracy = overall_accuracy(log);
  r.mean_per_class = mean_per_class(log);
  r.bucket_accuracies = cross_sectional(log, buckets);
  const auto seen = std::count_if(log.begin(), log.end(), [](const EvalRecord& e) { return e.unseen; });
  if (seen > 0 && static_cast<std::size_t>(seen) < log.size()) r.unseen_auroc = unseen_auroc(log);
  r.total_gmacs = meter_from_log(log).gmacs();
  r.rolling = rolling_accuracy(log, std::min(window, log.size()));
  return r;
}

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json buckets = nlohmann::json::object();
  for (const auto& [b, v] : r.bucket_accuracies) buckets[to_string(b)] = v;
  nlohmann::json rolling = nlohmann::json::array();
  for (const auto& p : r.rolling) rolling.push_back({p.step, p.accuracy});
  return {{"overall_accuracy", r.overall_accuracy},
          {"mean_per_class", r.mean_per_class},
          {"bucket_accuracies", buckets},
          {"unseen_auroc", r.unseen_auroc ? nlohmann::json(*r.unseen_auroc) : nlohmann::json(nullptr)},
          {"total_gmacs", r.total_gmacs},
          {"rolling", rolling}};
}

inline MetricReport metric_report_from_json(const nlohmann::json& j) {
  try {
    MetricReport r;
    r.overall_accuracy = j.at("overall_accuracy").get<double>();
    r.mean_per_class = j.at("mean_per_class").get<double>();
    for (const auto& [k, v] : j.at("bucket_accuracies").items()) r.bucket_accuracies[bucket_from_string(k)] = v.get<double>();
    if (!j.at("unseen_auroc").is_null()) r.unseen_auroc = j["unseen_auroc"].get<double>();
    r.total_gmacs = j.at("total_gmacs").get<double>();
    for (const auto& p : j.at("rolling")) r.rolling.push_back({p.at(0).get<std::size_t>(), p.at(1).get<double>()});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::Format, std::string("metric report: ") + e.what());
  }
}

inline void write_rolling_csv(std::ostream& out, const std::vector<RollingPoint>& pts) {
  out << "step,accuracy\n";
  out.precision(17);
  for (const auto& p : pts) out << p.step << ',' << p.accuracy << '\n';
}

}  // namespace fluid
