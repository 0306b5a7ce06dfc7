#pragma once

#include <filesystem>

#include "fluid/metrics.hpp"

namespace fluid {

struct DataSource {
  enum class Kind { Gaussian, Embeddings };
  Kind kind = Kind::Gaussian;
  GaussianMixtureSpec gaussian;
  std::string embeddings;  ///< paths relative to the config file
  std::string manifest;

  bool operator==(const DataSource&) const = default;
};

struct LearnerEntry {
  LearnerConfig learner;
  UpdateStrategy strategy;

  bool operator==(const LearnerEntry&) const = default;
};

struct SweepPoint {
  std::size_t interval_samples = 5000;
  std::size_t epochs = 4;
  bool operator==(const SweepPoint&) const = default;
};

struct ExperimentConfig {
  DataSource data;
  SequenceSpec sequence;
  std::vector<LearnerEntry> learners;
  OodScorer ood;
  std::vector<std::uint64_t> seeds{0};
  std::string out = "out";
  std::size_t rolling_window = 1000;
  std::vector<SweepPoint> sweep;  ///< empty: every learner runs its own schedule once
  std::filesystem::path base_dir;  ///< directory of the config file, not serialized

  bool operator==(const ExperimentConfig& o) const {
    return data == o.data && sequence == o.sequence && learners == o.learners && ood == o.ood &&
           seeds == o.seeds && out == o.out && rolling_window == o.rolling_window && sweep == o.sweep;
  }
};

inline UpdateStrategy default_strategy(LearnerKind kind, const UpdateStrategy& schedule) {
  UpdateStrategy s = schedule;
  switch (kind) {
    case LearnerKind::Ncm: s.kind = UpdateStrategy::Kind::InstancePerSample; break;
    case LearnerKind::ExemplarTuning: s.kind = UpdateStrategy::Kind::Hybrid; break;
    case LearnerKind::WeightImprinting: s.kind = UpdateStrategy::Kind::ImprintThenFinetune; break;
    default: s.kind = UpdateStrategy::Kind::OfflineEvery; break;
  }
  return s;
}

namespace detail {

using nlohmann::json;

/// Rejects keys outside `allowed` so typos surface as config errors.
inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(Errc::Config, where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw Error(Errc::Config, "unknown key '" + k + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline json strategy_json(const UpdateStrategy& s) {
  return {{"kind", to_string(s.kind)}, {"interval_samples", s.interval_samples}, {"epochs", s.epochs}, {"switch_at", s.switch_at}};
}

inline void read_schedule(const json& j, UpdateStrategy& s, const std::string& where) {
  check_keys(j, {"kind", "interval_samples", "epochs", "switch_at"}, where);
  if (j.contains("kind")) s.kind = strategy_kind_from_string(j["kind"].get<std::string>());
  read(j, "interval_samples", s.interval_samples);
  read(j, "epochs", s.epochs);
  read(j, "switch_at", s.switch_at);
}

inline json pretrain_json(const PretrainConfig& p) {
  return {{"method", p.method == PretrainConfig::Method::Supervised ? "supervised" : "prototypical"},
          {"epochs", p.epochs},
          {"learning_rate", p.learning_rate},
          {"meta_epochs", p.meta_epochs},
          {"episodes_per_epoch", p.episodes_per_epoch},
          {"meta_learning_rate", p.meta_learning_rate},
          {"lr_halving_epochs", p.lr_halving_epochs},
          {"ways", p.ways},
          {"shots", p.shots},
          {"queries", p.queries}};
}

inline PretrainConfig read_pretrain(const json& j) {
  check_keys(j, {"method", "epochs", "learning_rate", "meta_epochs", "episodes_per_epoch", "meta_learning_rate",
                 "lr_halving_epochs", "ways", "shots", "queries"},
             "pretrain");
  PretrainConfig p;
  if (j.contains("method")) {
    const auto m = j["method"].get<std::string>();
    if (m == "supervised") p.method = PretrainConfig::Method::Supervised;
    else if (m == "prototypical") p.method = PretrainConfig::Method::Prototypical;
    else throw Error(Errc::Config, "unknown pretrain method '" + m + "'");
  }
  read(j, "epochs", p.epochs);
  read(j, "learning_rate", p.learning_rate);
  read(j, "meta_epochs", p.meta_epochs);
  read(j, "episodes_per_epoch", p.episodes_per_epoch);
  read(j, "meta_learning_rate", p.meta_learning_rate);
  read(j, "lr_halving_epochs", p.lr_halving_epochs);
  read(j, "ways", p.ways);
  read(j, "shots", p.shots);
  read(j, "queries", p.queries);
  return p;
}

}  // namespace detail

inline nlohmann::json to_json(const LearnerEntry& e) {
  const auto& c = e.learner;
  return {{"name", c.name},
          {"kind", to_string(c.kind)},
          {"hidden", c.hidden},
          {"learning_rate", c.learning_rate ? nlohmann::json(*c.learning_rate) : nlohmann::json(nullptr)},
          {"momentum", c.momentum},
          {"batch_size", c.batch_size},
          {"cosine_temperature", c.cosine_temperature},
          {"et_similarity", to_string(c.et_similarity)},
          {"ncm_metric", to_string(c.ncm_metric)},
          {"ncm_normalize", c.ncm_normalize},
          {"ewc_lambda", c.ewc_lambda},
          {"fisher_samples", c.fisher_samples},
          {"lwf_temperature", c.lwf_temperature},
          {"pretrain", detail::pretrain_json(c.pretrain)},
          {"strategy", detail::strategy_json(e.strategy)}};
}

inline LearnerEntry learner_entry_from_json(const nlohmann::json& j, const UpdateStrategy& schedule) {
  detail::check_keys(j, {"name", "kind", "hidden", "learning_rate", "momentum", "batch_size", "cosine_temperature",
                         "et_similarity", "ncm_metric", "ncm_normalize", "ewc_lambda", "fisher_samples",
                         "lwf_temperature", "pretrain", "strategy"},
                     "learner");
  LearnerEntry e;
  auto& c = e.learner;
  if (!j.contains("kind")) throw Error(Errc::Config, "learner needs a kind");
  c.kind = learner_kind_from_string(j["kind"].get<std::string>());
  c.name = to_string(c.kind);
  detail::read(j, "name", c.name);
  detail::read(j, "hidden", c.hidden);
  if (j.contains("learning_rate") && !j["learning_rate"].is_null()) c.learning_rate = j["learning_rate"].get<double>();
  detail::read(j, "momentum", c.momentum);
  detail::read(j, "batch_size", c.batch_size);
  detail::read(j, "cosine_temperature", c.cosine_temperature);
  if (j.contains("et_similarity")) c.et_similarity = similarity_from_string(j["et_similarity"].get<std::string>());
  if (j.contains("ncm_metric")) c.ncm_metric = similarity_from_string(j["ncm_metric"].get<std::string>());
  detail::read(j, "ncm_normalize", c.ncm_normalize);
  detail::read(j, "ewc_lambda", c.ewc_lambda);
  detail::read(j, "fisher_samples", c.fisher_samples);
  detail::read(j, "lwf_temperature", c.lwf_temperature);
  if (j.contains("pretrain")) c.pretrain = detail::read_pretrain(j["pretrain"]);
  e.strategy = default_strategy(c.kind, schedule);
  if (j.contains("strategy")) detail::read_schedule(j["strategy"], e.strategy, "learner strategy");
  return e;
}

inline void validate(const ExperimentConfig& cfg) {
  try {
    if (cfg.data.kind == DataSource::Kind::Gaussian) validate(cfg.data.gaussian);
    else if (cfg.data.embeddings.empty() || cfg.data.manifest.empty())
      throw Error(Errc::Config, "embedding data needs both 'embeddings' and 'manifest' paths");
    validate(cfg.sequence);
    if (cfg.learners.empty()) throw Error(Errc::Config, "config lists no learners");
    if (cfg.seeds.empty()) throw Error(Errc::Config, "config lists no seeds");
    if (cfg.rolling_window < 1) throw Error(Errc::Config, "rolling_window must be >= 1");
    std::set<std::string> names;
    for (const auto& e : cfg.learners) {
      if (!names.insert(e.learner.name).second) throw Error(Errc::Config, "duplicate learner name '" + e.learner.name + "'");
      if (e.learner.name.empty() || e.learner.name.find_first_of("/\\ ") != std::string::npos)
        throw Error(Errc::Config, "learner name '" + e.learner.name + "' is not a valid file stem");
      if (e.learner.batch_size < 1) throw Error(Errc::Config, "batch_size must be >= 1");
      if (e.learner.cosine_temperature <= 0.0) throw Error(Errc::Config, "cosine_temperature must be positive");
      if (e.learner.lwf_temperature <= 0.0) throw Error(Errc::Config, "lwf_temperature must be positive");
      if (e.learner.ewc_lambda < 0.0) throw Error(Errc::Config, "ewc_lambda must be non-negative");
      e.strategy.validate();
    }
    for (const auto& p : cfg.sweep)
      if (p.interval_samples < 1 || p.epochs < 1) throw Error(Errc::Config, "sweep points need interval and epochs >= 1");
  } catch (const Error& e) {
    if (e.code() == Errc::Config) throw;
    throw Error(Errc::Config, e.what());
  }
}

inline nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json data;
  if (cfg.data.kind == DataSource::Kind::Gaussian) {
    const auto& g = cfg.data.gaussian;
    data = {{"kind", "gaussian"},
            {"num_classes", g.num_classes},
            {"dim", g.dim},
            {"cluster_separation", g.cluster_separation},
            {"samples_per_class", g.samples_per_class},
            {"pretrain_fraction", g.pretrain_fraction},
            {"seed", g.seed}};
  } else {
    data = {{"kind", "embeddings"}, {"embeddings", cfg.data.embeddings}, {"manifest", cfg.data.manifest}};
  }
  nlohmann::json learners = nlohmann::json::array();
  for (const auto& e : cfg.learners) learners.push_back(to_json(e));
  nlohmann::json sweep = nlohmann::json::array();
  for (const auto& p : cfg.sweep) sweep.push_back({{"interval_samples", p.interval_samples}, {"epochs", p.epochs}});
  return {{"data", data},
          {"sequence",
           {{"num_classes", cfg.sequence.num_classes},
            {"zipf_s", cfg.sequence.zipf_s},
            {"total_samples", cfg.sequence.total_samples},
            {"head_threshold", cfg.sequence.head_threshold}}},
          {"learners", learners},
          {"ood", {{"kind", to_string(cfg.ood.kind)}, {"metric", to_string(cfg.ood.metric)}}},
          {"seeds", cfg.seeds},
          {"out", cfg.out},
          {"rolling_window", cfg.rolling_window},
          {"sweep", sweep}};
}

/// Fills every unspecified field with its default, then validates.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig cfg;
  try {
    detail::check_keys(j, {"data", "sequence", "schedule", "learners", "ood", "seeds", "out", "rolling_window", "sweep"},
                       "config");
    if (j.contains("data")) {
      const auto& d = j["data"];
      const std::string kind = d.value("kind", "gaussian");
      if (kind == "gaussian") {
        detail::check_keys(d, {"kind", "num_classes", "dim", "cluster_separation", "samples_per_class", "pretrain_fraction", "seed"},
                           "data");
        auto& g = cfg.data.gaussian;
        detail::read(d, "num_classes", g.num_classes);
        detail::read(d, "dim", g.dim);
        detail::read(d, "cluster_separation", g.cluster_separation);
        detail::read(d, "samples_per_class", g.samples_per_class);
        detail::read(d, "pretrain_fraction", g.pretrain_fraction);
        detail::read(d, "seed", g.seed);
      } else if (kind == "embeddings") {
        detail::check_keys(d, {"kind", "embeddings", "manifest"}, "data");
        cfg.data.kind = DataSource::Kind::Embeddings;
        detail::read(d, "embeddings", cfg.data.embeddings);
        detail::read(d, "manifest", cfg.data.manifest);
      } else {
        throw Error(Errc::Config, "unknown data kind '" + kind + "'");
      }
    }
    if (j.contains("sequence")) {
      const auto& s = j["sequence"];
      detail::check_keys(s, {"num_classes", "zipf_s", "total_samples", "head_threshold"}, "sequence");
      detail::read(s, "num_classes", cfg.sequence.num_classes);
      detail::read(s, "zipf_s", cfg.sequence.zipf_s);
      detail::read(s, "total_samples", cfg.sequence.total_samples);
      detail::read(s, "head_threshold", cfg.sequence.head_threshold);
    }
    UpdateStrategy schedule;
    if (j.contains("schedule")) detail::read_schedule(j["schedule"], schedule, "schedule");
    if (j.contains("learners")) {
      if (!j["learners"].is_array()) throw Error(Errc::Config, "learners must be an array");
      for (const auto& lj : j["learners"]) cfg.learners.push_back(learner_entry_from_json(lj, schedule));
    }
    if (j.contains("ood")) {
      detail::check_keys(j["ood"], {"kind", "metric"}, "ood");
      if (j["ood"].contains("kind")) cfg.ood.kind = ood_kind_from_string(j["ood"]["kind"].get<std::string>());
      if (j["ood"].contains("metric")) cfg.ood.metric = ood_metric_from_string(j["ood"]["metric"].get<std::string>());
    }
    detail::read(j, "seeds", cfg.seeds);
    detail::read(j, "out", cfg.out);
    detail::read(j, "rolling_window", cfg.rolling_window);
    if (j.contains("sweep")) {
      for (const auto& p : j["sweep"]) {
        detail::check_keys(p, {"interval_samples", "epochs"}, "sweep point");
        SweepPoint sp;
        detail::read(p, "interval_samples", sp.interval_samples);
        detail::read(p, "epochs", sp.epochs);
        cfg.sweep.push_back(sp);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::Config, std::string("config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::Config) throw;
    throw Error(Errc::Config, e.what());
  }
  validate(cfg);
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Config, "cannot open config '" + path + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(Errc::Config, "config '" + path + "' is not valid JSON");
  ExperimentConfig cfg = experiment_config_from_json(j);
  cfg.base_dir = std::filesystem::path(path).parent_path();
  return cfg;
}

}  // namespace fluid
