#pragma once

#include <concepts>
#include <istream>
#include <set>

#include "fluid/learner.hpp"
#include "fluid/ood.hpp"
#include "fluid/sequence.hpp"

namespace fluid {

template <class L>
concept StreamLearner = requires(L& l, const L& cl, const Sample& s, std::span<const Sample* const> buf) {
  { cl.input_dim() } -> std::convertible_to<std::size_t>;
  { cl.knows(ClassId{}) } -> std::convertible_to<bool>;
  { cl.predict(std::span<const double>{}) } -> std::same_as<Prediction>;
  { cl.representations() } -> std::same_as<Matrix>;
  l.admit(s);
  { l.instance_update(s) } -> std::convertible_to<std::uint64_t>;
  { l.offline_update(buf, std::size_t{}) } -> std::same_as<OfflineStats>;
};

/// One stream step, logged before any update that step triggers.
struct EvalRecord {
  std::size_t step = 0;
  ClassId true_class = 0;
  std::optional<ClassId> predicted;
  bool unseen = false;
  double ood_score = 0.0;
  std::size_t known_count = 0;
  std::uint64_t macs_inference = 0;
  std::uint64_t macs_update = 0;

  bool correct() const { return predicted && *predicted == true_class; }
  bool operator==(const EvalRecord&) const = default;
};

using EvalLog = std::vector<EvalRecord>;

struct RunResult {
  EvalLog log;
  MacMeter meter;
  std::size_t offline_phases = 0;
  std::size_t optimizer_steps = 0;
};

inline constexpr double kNoClassScore = std::numeric_limits<double>::max();

/// Feeds the task through the learner: predict, flag, log, buffer, admit, update.
template <StreamLearner L>
RunResult run_stream(const StreamTask& task, const Dataset& ds, L& learner, const UpdateStrategy& strategy,
                     const OodScorer& scorer) {
  strategy.validate();
  if (learner.input_dim() != ds.dim()) throw Error(Errc::DimensionMismatch, "learner and dataset dimensions differ");
  std::set<ClassId> known;
  for (ClassId c : ds.classes_with_role(ClassRole::Pretrain))
    if (learner.knows(c)) known.insert(c);

  RunResult out;
  out.log.reserve(task.order.size());
  std::vector<const Sample*> buffer;
  buffer.reserve(task.order.size());
  for (std::size_t t = 0; t < task.order.size(); ++t) {
    if (task.order[t] >= ds.size()) throw Error(Errc::InvalidSpec, "stream references sample " + std::to_string(task.order[t]));
    const Sample& s = ds[task.order[t]];
    EvalRecord rec;
    rec.step = t;
    rec.true_class = s.label;
    rec.known_count = known.size();

    const Prediction pred = learner.predict(s.features);
    rec.predicted = pred.predicted;
    rec.macs_inference = pred.macs;
    rec.ood_score = kNoClassScore;
    if (!known.empty() && pred.predicted) {
      if (scorer.kind == OodScorer::Kind::Mdt) {
        const Matrix reps = learner.representations();
        if (reps.rows > 0) rec.ood_score = mdt_score(reps, pred.features, scorer.metric);
        rec.macs_inference += meter_ood(scorer, pred.features.size(), reps.rows);
      } else {
        rec.ood_score = max_softmax_score(pred.probs);
      }
    }
    rec.unseen = !known.contains(s.label);

    buffer.push_back(&s);
    if (rec.unseen) {
      known.insert(s.label);
      if (!learner.knows(s.label)) learner.admit(s);
    }
    const std::size_t position = t + 1;
    if (strategy.instance_at(position)) rec.macs_update += learner.instance_update(s);
    if (strategy.offline_at(position)) {
      const OfflineStats st = learner.offline_update(buffer, strategy.epochs);
      rec.macs_update += st.macs;
      out.optimizer_steps += st.optimizer_steps;
      ++out.offline_phases;
    }
    out.meter.add_inference(rec.macs_inference);
    out.meter.add_training(rec.macs_update);
    out.log.push_back(rec);
  }
  return out;
}

inline nlohmann::json to_json(const EvalRecord& r) {
  nlohmann::json j{{"step", r.step},
                   {"true_class", r.true_class},
                   {"predicted", nullptr},
                   {"unseen", r.unseen},
                   {"ood_score", r.ood_score},
                   {"known_count", r.known_count},
                   {"macs_inference", r.macs_inference},
                   {"macs_update", r.macs_update}};
  if (r.predicted) j["predicted"] = *r.predicted;
  return j;
}

inline EvalRecord eval_record_from_json(const nlohmann::json& j) {
  try {
    EvalRecord r;
    r.step = j.at("step").get<std::size_t>();
    r.true_class = j.at("true_class").get<ClassId>();
    if (!j.at("predicted").is_null()) r.predicted = j["predicted"].get<ClassId>();
    r.unseen = j.at("unseen").get<bool>();
    r.ood_score = j.at("ood_score").get<double>();
    r.known_count = j.at("known_count").get<std::size_t>();
    r.macs_inference = j.at("macs_inference").get<std::uint64_t>();
    r.macs_update = j.at("macs_update").get<std::uint64_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::Format, std::string("log record: ") + e.what());
  }
}

/// One JSON object per line.
inline void write_log(std::ostream& out, const EvalLog& log) {
  for (const auto& r : log) out << to_json(r).dump() << '\n';
}

inline EvalLog read_log(std::istream& in) {
  EvalLog log;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(Errc::Format, "log line " + std::to_string(lineno) + " is not JSON");
    log.push_back(eval_record_from_json(j));
  }
  return log;
}

/// Sum of per-step MACs as recorded in a log.
inline MacMeter meter_from_log(const EvalLog& log) {
  MacMeter m;
  for (const auto& r : log) {
    m.add_inference(r.macs_inference);
    m.add_training(r.macs_update);
  }
  return m;
}

}  // namespace fluid
