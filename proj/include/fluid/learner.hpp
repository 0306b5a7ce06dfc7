#pragma once

#include <optional>
#include <random>

#include "fluid/training.hpp"

namespace fluid {

enum class LearnerKind { Ncm, FineTune, Standard, WeightImprinting, ExemplarTuning, Lwf, Ewc };

inline const char* to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::Ncm: return "ncm";
    case LearnerKind::FineTune: return "fine_tune";
    case LearnerKind::Standard: return "standard";
    case LearnerKind::WeightImprinting: return "weight_imprinting";
    case LearnerKind::ExemplarTuning: return "exemplar_tuning";
    case LearnerKind::Lwf: return "lwf";
    case LearnerKind::Ewc: return "ewc";
  }
  return "?";
}

inline LearnerKind learner_kind_from_string(const std::string& s) {
  using K = LearnerKind;
  for (K k : {K::Ncm, K::FineTune, K::Standard, K::WeightImprinting, K::ExemplarTuning, K::Lwf, K::Ewc})
    if (s == to_string(k)) return k;
  throw Error(Errc::Config, "unknown learner kind '" + s + "'");
}

struct PretrainConfig {
  enum class Method { Supervised, Prototypical };

  Method method = Method::Supervised;
  std::size_t epochs = 20;  ///< supervised passes over the pretrain pool
  double learning_rate = 0.05;
  std::size_t meta_epochs = 100;
  std::size_t episodes_per_epoch = 4;
  double meta_learning_rate = 0.01;
  std::size_t lr_halving_epochs = 40;
  std::size_t ways = 30;
  std::size_t shots = 5;
  std::size_t queries = 5;

  bool operator==(const PretrainConfig&) const = default;
};

struct LearnerConfig {
  std::string name = "learner";
  LearnerKind kind = LearnerKind::ExemplarTuning;
  std::vector<std::size_t> hidden;            ///< MLP widths after the input; empty keeps embeddings frozen
  std::optional<double> learning_rate;        ///< unset: 0.1 head-only, 0.01 with backbone
  double momentum = 0.9;
  std::size_t batch_size = 64;
  double cosine_temperature = 4.0;
  Similarity et_similarity = Similarity::Dot;
  Similarity ncm_metric = Similarity::Euclidean;
  bool ncm_normalize = false;
  double ewc_lambda = 100.0;
  std::size_t fisher_samples = 256;
  double lwf_temperature = 2.0;
  PretrainConfig pretrain;
  std::uint64_t seed = 0;

  TrainScope scope() const {
    switch (kind) {
      case LearnerKind::Standard:
      case LearnerKind::Lwf:
      case LearnerKind::Ewc: return TrainScope::All;
      default: return TrainScope::Head;
    }
  }

  double resolved_learning_rate() const {
    if (learning_rate) return *learning_rate;
    return scope() == TrainScope::All ? 0.01 : 0.1;
  }

  bool operator==(const LearnerConfig&) const = default;
};

struct Prediction {
  std::optional<ClassId> predicted;  ///< empty when no known class can be scored
  Vector features;
  Vector probs;  ///< over known classes, in admission order
  std::uint64_t macs = 0;
};

/// One of the evaluated learners: a model plus the update rules of its kind.
class Learner {
 public:
  Learner(LearnerConfig cfg, std::size_t input_dim) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
    if (cfg_.batch_size < 1) throw Error(Errc::InvalidSpec, "batch_size must be >= 1");
    FeatureMap map = FeatureMap::frozen(input_dim);
    if (!cfg_.hidden.empty()) {
      std::vector<std::size_t> widths{input_dim};
      widths.insert(widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
      map = FeatureMap::mlp(widths, cfg_.seed ^ 0x5bd1e995ULL);
    }
    const std::size_t fd = map.output_dim();
    switch (cfg_.kind) {
      case LearnerKind::Ncm: model_ = Model(std::move(map), NcmHead(fd, cfg_.ncm_metric, cfg_.ncm_normalize)); break;
      case LearnerKind::WeightImprinting:
        model_ = Model(std::move(map), CosineHead(fd, cfg_.cosine_temperature));
        imprint_store_ = CentroidStore(fd, true);
        break;
      case LearnerKind::ExemplarTuning: model_ = Model(std::move(map), ExemplarTuningHead(fd, cfg_.et_similarity)); break;
      default: model_ = Model(std::move(map), LinearHead(fd)); break;
    }
    sgd_ = SgdState{cfg_.resolved_learning_rate(), cfg_.momentum, {}};
  }

  const LearnerConfig& config() const { return cfg_; }
  const Model& model() const { return model_; }
  Model& model() { return model_; }
  std::size_t input_dim() const { return model_.map().input_dim(); }
  bool knows(ClassId c) const { return model_.index().contains(c); }
  const std::optional<Model>& teacher() const { return teacher_; }
  const std::optional<EwcState>& ewc() const { return ewc_; }

  /// Fits the model on the dataset's pretrain pool and admits every pretrain class.
  void pretrain(const Dataset& ds) {
    if (ds.dim() != input_dim()) throw Error(Errc::DimensionMismatch, "dataset and learner dimensions differ");
    std::vector<Sample> pool;
    for (std::size_t idx : ds.pretrain_pool()) pool.push_back(ds[idx]);
    const SampleRefs pool_refs = refs(pool);
    const auto classes = ds.classes_with_role(ClassRole::Pretrain);

    bool head_trained = false;
    if (!model_.map().is_frozen() && !pool.empty()) {
      if (cfg_.pretrain.method == PretrainConfig::Method::Supervised) {
        Model tmp(model_.map(), LinearHead(model_.feature_dim()));
        for (ClassId c : classes) tmp.admit(c);
        supervised_fit(tmp, pool_refs, TrainScope::All);
        model_.map() = tmp.map();
        if (std::holds_alternative<LinearHead>(model_.head())) {
          model_.head() = tmp.head();
          head_trained = true;
        }
      } else {
        meta_train(ds);
      }
    }

    for (ClassId c : classes)
      if (!knows(c)) model_.admit(c);

    if (!pool.empty()) {
      std::visit(
          [&](auto& h) {
            using H = std::decay_t<decltype(h)>;
            if constexpr (std::is_same_v<H, LinearHead>) {
              if (!head_trained) supervised_fit(model_, pool_refs, TrainScope::Head);
            } else if constexpr (std::is_same_v<H, CosineHead>) {
              for (const auto& s : pool) imprint_store_.update(s.label, model_.features(s.features));
              for (std::size_t row = 0; row < h.index().size(); ++row) {
                const auto srow = imprint_store_.index().find(h.index().id(row));
                if (srow && imprint_store_.count(*srow) > 0) h.set_row(row, imprint_store_.centroid(*srow));
              }
            } else {
              for (const auto& s : pool) h.store().update(s.label, model_.features(s.features));
            }
          },
          model_.head());
    }

    if (cfg_.kind == LearnerKind::Lwf) teacher_ = model_;
    if (cfg_.kind == LearnerKind::Ewc) {
      EwcState st;
      st.lambda = cfg_.ewc_lambda;
      for (auto p : model_.params(TrainScope::All)) st.anchor.emplace_back(p.begin(), p.end());
      st.fisher = zeros_like(model_.params(TrainScope::All));
      for (const auto& a : st.anchor) anchor_sizes_.push_back(a.size());
      ewc_ = std::move(st);
      fisher_data_ = pool;
      std::shuffle(fisher_data_.begin(), fisher_data_.end(), rng_);
      if (fisher_data_.size() > cfg_.fisher_samples) fisher_data_.resize(cfg_.fisher_samples);
    }
    sgd_ = SgdState{cfg_.resolved_learning_rate(), cfg_.momentum, {}};
  }

  Prediction predict(std::span<const double> x) const {
    Prediction p;
    p.features = model_.features(x);
    const std::size_t k = model_.num_classes();
    p.macs = model_.map().macs() + (k > 0 ? meter_inference(model_.head_kind(), model_.head_similarity(),
                                                            model_.feature_dim(), k)
                                          : 0);
    if (k == 0) return p;
    const Vector z = model_.logits_from_features(p.features);
    const std::size_t best = la::argmax(z);
    if (!std::isfinite(z[best])) return p;
    p.probs = la::softmax(z);
    p.predicted = model_.index().id(best);
    return p;
  }

  Matrix representations() const { return model_.representations(); }

  /// Adds a newly labeled class. Cosine rows are imprinted with the sample.
  void admit(const Sample& s) {
    model_.admit(s.label);
    if (auto* cos = std::get_if<CosineHead>(&model_.head()))
      cos->set_row(cos->index().size() - 1, model_.features(s.features));
  }

  /// Per-sample centroid maintenance; returns the MACs spent.
  std::uint64_t instance_update(const Sample& s) {
    const std::uint64_t cost = meter_training(TrainingStep::CentroidUpdate, 1, model_.feature_dim());
    return std::visit(
        [&](auto& h) -> std::uint64_t {
          using H = std::decay_t<decltype(h)>;
          if constexpr (std::is_same_v<H, NcmHead> || std::is_same_v<H, ExemplarTuningHead>) {
            h.store().update(s.label, model_.features(s.features));
            return cost;
          } else if constexpr (std::is_same_v<H, CosineHead>) {
            imprint_store_.update(s.label, model_.features(s.features));
            const auto srow = *imprint_store_.index().find(s.label);
            h.set_row(*h.index().find(s.label), imprint_store_.centroid(srow));
            return cost;
          } else {
            return 0;
          }
        },
        model_.head());
  }

  /// `epochs` shuffled passes over the buffer in mini-batches.
  OfflineStats offline_update(std::span<const Sample* const> buffer, std::size_t epochs) {
    OfflineStats stats;
    if (buffer.empty() || cfg_.kind == LearnerKind::Ncm) return stats;
    const TrainScope scope = cfg_.scope();
    const std::size_t batch = cfg_.batch_size;
    const std::uint64_t fwd = model_.forward_macs(scope);
    sgd_.velocity.clear();

    if (ewc_) {
      extend_ewc(*ewc_, model_.params(TrainScope::All));
      if (!fisher_data_.empty()) {
        ewc_->fisher = fisher_estimate(model_, refs(fisher_data_), TrainScope::All);
        for (std::size_t t = 0; t < anchor_sizes_.size(); ++t)
          std::fill(ewc_->fisher[t].begin() + static_cast<std::ptrdiff_t>(anchor_sizes_[t]), ewc_->fisher[t].end(), 0.0);
        stats.macs += meter_training(TrainingStep::Optimizer, fisher_data_.size(), fwd);
      }
    }

    // distillation covers teacher classes that appear in the stream
    std::vector<std::pair<std::size_t, std::size_t>> shared;  // (student row, teacher row)
    if (teacher_) {
      std::vector<bool> in_stream(model_.num_classes(), false);
      for (const Sample* s : buffer) in_stream[label_row(model_, s->label)] = true;
      for (std::size_t trow = 0; trow < teacher_->num_classes(); ++trow) {
        const auto srow = model_.index().find(teacher_->index().id(trow));
        if (srow && in_stream[*srow]) shared.emplace_back(*srow, trow);
      }
      if (shared.empty()) ++distillation_skips_;
    }

    std::vector<std::size_t> perm(buffer.size());
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t e = 0; e < epochs; ++e) {
      std::shuffle(perm.begin(), perm.end(), rng_);
      for (std::size_t start = 0; start < perm.size(); start += batch) {
        const std::size_t b = std::min(batch, perm.size() - start);
        ParamBuffers grads = zeros_like(model_.params(scope));
        for (std::size_t i = start; i < start + b; ++i) {
          const Sample& s = *buffer[perm[i]];
          const std::size_t y = label_row(model_, s.label);
          Vector teacher_logits;
          if (!shared.empty()) teacher_logits = teacher_->logits(s.features);
          model_.accumulate(
              s.features, scope,
              [&](std::span<const double> z, std::span<double> dz) {
                double loss = softmax_xent(z, y, dz);
                if (shared.empty()) return loss;
                Vector zs(shared.size()), zt(shared.size()), ds(shared.size(), 0.0);
                for (std::size_t j = 0; j < shared.size(); ++j) {
                  zs[j] = z[shared[j].first];
                  zt[j] = teacher_logits[shared[j].second];
                }
                loss += distillation_loss(zs, zt, cfg_.lwf_temperature, ds);
                for (std::size_t j = 0; j < shared.size(); ++j) dz[shared[j].first] += ds[j];
                return loss;
              },
              grads, 1.0 / static_cast<double>(b));
        }
        stats.macs += meter_training(TrainingStep::Optimizer, b, fwd);
        if (!shared.empty()) stats.macs += teacher_->forward_macs(TrainScope::All) * b;
        if (ewc_) {
          const auto pen = ewc_penalty(model_.params(TrainScope::All), *ewc_);
          for (std::size_t t = 0; t < grads.size(); ++t) la::axpy(1.0, pen.grad[t], grads[t]);
          stats.macs += total_size(model_.params(TrainScope::All));
        }
        sgd_step(model_.params(scope), grads, sgd_);
        ++stats.optimizer_steps;
      }
    }
    return stats;
  }

  std::size_t distillation_skips() const { return distillation_skips_; }

  nlohmann::json checkpoint() const {
    nlohmann::json j{{"model", model_.to_json()}};
    if (cfg_.kind == LearnerKind::WeightImprinting) j["imprint_store"] = imprint_store_.to_json();
    return j;
  }

  void restore(const nlohmann::json& j) {
    Model m = Model::from_json(j.at("model"));
    if (m.head_kind() != model_.head_kind()) throw Error(Errc::Format, "checkpoint head kind does not match learner");
    model_ = std::move(m);
    if (j.contains("imprint_store")) imprint_store_ = CentroidStore::from_json(j["imprint_store"]);
  }

 private:
  void supervised_fit(Model& m, const SampleRefs& data, TrainScope scope) {
    SgdState sgd{cfg_.pretrain.learning_rate, cfg_.momentum, {}};
    std::vector<std::size_t> perm(data.size());
    std::iota(perm.begin(), perm.end(), 0);
    SampleRefs batch;
    for (std::size_t e = 0; e < cfg_.pretrain.epochs; ++e) {
      std::shuffle(perm.begin(), perm.end(), rng_);
      for (std::size_t start = 0; start < perm.size(); start += cfg_.batch_size) {
        batch.clear();
        for (std::size_t i = start; i < std::min(perm.size(), start + cfg_.batch_size); ++i) batch.push_back(data[perm[i]]);
        const auto lg = xent_loss_and_grad(m, batch, scope);
        sgd_step(m.params(scope), lg.grads, sgd);
      }
    }
  }

  void meta_train(const Dataset& ds) {
    const auto& pc = cfg_.pretrain;
    SgdState sgd{pc.meta_learning_rate, cfg_.momentum, {}};
    for (std::size_t e = 0; e < pc.meta_epochs; ++e) {
      sgd.learning_rate = pc.meta_learning_rate * std::pow(0.5, static_cast<double>(e / pc.lr_halving_epochs));
      for (std::size_t i = 0; i < pc.episodes_per_epoch; ++i) {
        const Episode ep = sample_episode(ds, pc.ways, pc.shots, pc.queries, rng_);
        auto loss = proto_episode_loss(model_.map(), ep, cfg_.ncm_metric);
        sgd_step(model_.map().params(), loss.grads, sgd);
      }
    }
  }

  LearnerConfig cfg_;
  Model model_;
  std::mt19937_64 rng_;
  SgdState sgd_;
  CentroidStore imprint_store_;
  std::optional<Model> teacher_;
  std::optional<EwcState> ewc_;
  std::vector<std::size_t> anchor_sizes_;
  std::vector<Sample> fisher_data_;
  std::size_t distillation_skips_ = 0;
};

}  // namespace fluid
