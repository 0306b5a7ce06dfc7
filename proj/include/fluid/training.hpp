#pragma once

#include <random>

#include "fluid/dataset.hpp"
#include "fluid/model.hpp"

namespace fluid {

using SampleRefs = std::vector<const Sample*>;

inline SampleRefs refs(const std::vector<Sample>& samples) {
  SampleRefs out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(&s);
  return out;
}

// ---------------------------------------------------------------------------
// Logit-level losses

/// -log softmax(z)[label]; dz (if non-empty) receives softmax(z) - onehot.
inline double softmax_xent(std::span<const double> z, std::size_t label, std::span<double> dz = {}) {
  const double lse = la::log_sum_exp(z);
  if (!dz.empty()) {
    const Vector p = la::softmax(z);
    for (std::size_t i = 0; i < z.size(); ++i) dz[i] = p[i] - (i == label ? 1.0 : 0.0);
  }
  return lse - z[label];
}

/// Cross-entropy between softmax(teacher / T) and softmax(student / T).
/// Adds (p_student - p_teacher) / T to dstudent.
inline double distillation_loss(std::span<const double> student, std::span<const double> teacher, double temperature,
                                std::span<double> dstudent = {}) {
  if (student.size() != teacher.size()) throw Error(Errc::ShapeMismatch, "student/teacher logit count mismatch");
  if (student.empty()) return 0.0;
  const Vector pt = la::softmax(teacher, temperature);
  const Vector ps = la::softmax(student, temperature);
  const double lse = la::log_sum_exp(student, temperature);
  double loss = 0.0;
  for (std::size_t i = 0; i < student.size(); ++i) {
    if (pt[i] > 0.0) loss -= pt[i] * (student[i] / temperature - lse);
    if (!dstudent.empty()) dstudent[i] += (ps[i] - pt[i]) / temperature;
  }
  return loss;
}

struct LwfLoss {
  double total = 0.0;
  double distillation = 0.0;
  bool distilled = false;  ///< false when the shared class set was empty
};

/// Hard-label cross-entropy plus temperature-smoothed distillation. Both
/// logit vectors cover the same classes (teacher-known and stream-seen).
inline LwfLoss lwf_loss(std::span<const double> student, std::span<const double> teacher, double temperature,
                        std::size_t label, std::span<double> dstudent = {}) {
  if (student.size() != teacher.size()) throw Error(Errc::ShapeMismatch, "student/teacher logit count mismatch");
  LwfLoss out;
  if (student.empty()) return out;
  if (label >= student.size()) throw Error(Errc::UnknownLabel, "hard label outside the shared class set");
  out.total = softmax_xent(student, label, dstudent);
  out.distillation = distillation_loss(student, teacher, temperature, dstudent);
  out.total += out.distillation;
  out.distilled = true;
  return out;
}

// ---------------------------------------------------------------------------
// Model-level cross-entropy

struct LossAndGrad {
  double loss = 0.0;
  ParamBuffers grads;
};

inline std::size_t label_row(const Model& m, ClassId label) {
  const auto row = m.index().find(label);
  if (!row) throw Error(Errc::UnknownLabel, "class " + std::to_string(label) + " is not known to the model");
  return *row;
}

/// Mean softmax cross-entropy over the batch with gradients laid out as
/// m.params(scope).
inline LossAndGrad xent_loss_and_grad(Model& m, std::span<const Sample* const> batch, TrainScope scope) {
  if (batch.empty()) throw Error(Errc::EmptyInput, "empty batch");
  LossAndGrad out{0.0, zeros_like(m.params(scope))};
  const double w = 1.0 / static_cast<double>(batch.size());
  for (const Sample* s : batch) {
    const std::size_t y = label_row(m, s->label);
    out.loss += m.accumulate(
        s->features, scope, [y](std::span<const double> z, std::span<double> dz) { return softmax_xent(z, y, dz); },
        out.grads, w);
  }
  return out;
}

// ---------------------------------------------------------------------------
// SGD with momentum

struct SgdState {
  double learning_rate = 0.1;
  double momentum = 0.9;
  ParamBuffers velocity;
};

/// v <- momentum * v + g; p <- p - lr * v. Velocity buffers grow with their
/// tensors (new entries start at zero).
inline void sgd_step(const ParamViews& params, const ParamBuffers& grads, SgdState& state) {
  if (!(state.momentum >= 0.0 && state.momentum < 1.0)) throw Error(Errc::InvalidSpec, "momentum must lie in [0, 1)");
  if (params.size() != grads.size()) throw Error(Errc::ShapeMismatch, "parameter and gradient counts differ");
  if (state.velocity.empty()) state.velocity = zeros_like(params);
  if (state.velocity.size() != params.size()) throw Error(Errc::ShapeMismatch, "velocity buffer count differs");
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (grads[t].size() != params[t].size()) throw Error(Errc::ShapeMismatch, "gradient shape mismatch");
    auto& v = state.velocity[t];
    if (v.size() > params[t].size()) throw Error(Errc::ShapeMismatch, "parameter tensor shrank");
    v.resize(params[t].size(), 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = state.momentum * v[i] + grads[t][i];
      params[t][i] -= state.learning_rate * v[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Elastic weight consolidation

struct EwcState {
  ParamBuffers anchor;
  ParamBuffers fisher;
  double lambda = 100.0;
};

struct EwcPenalty {
  double value = 0.0;
  ParamBuffers grad;
};

/// (lambda / 2) sum F (theta - theta*)^2 and its gradient lambda F (theta - theta*).
inline EwcPenalty ewc_penalty(const ParamViews& params, const EwcState& state) {
  if (params.size() != state.anchor.size() || params.size() != state.fisher.size())
    throw Error(Errc::ShapeMismatch, "EWC state tensor count differs from parameters");
  EwcPenalty out{0.0, zeros_like(params)};
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != state.anchor[t].size() || params[t].size() != state.fisher[t].size())
      throw Error(Errc::ShapeMismatch, "EWC state tensor " + std::to_string(t) + " shape mismatch");
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double delta = params[t][i] - state.anchor[t][i];
      out.value += 0.5 * state.lambda * state.fisher[t][i] * delta * delta;
      out.grad[t][i] = state.lambda * state.fisher[t][i] * delta;
    }
  }
  return out;
}

/// Pads anchor and Fisher with zeros so that parameters added after the
/// anchor was taken (new class rows) carry no penalty.
inline void extend_ewc(EwcState& state, const ParamViews& params) {
  if (state.anchor.size() != params.size()) throw Error(Errc::ShapeMismatch, "EWC tensor count differs");
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (state.anchor[t].size() > params[t].size()) throw Error(Errc::ShapeMismatch, "parameter tensor shrank");
    state.anchor[t].resize(params[t].size(), 0.0);
    state.fisher.resize(params.size());
    state.fisher[t].resize(params[t].size(), 0.0);
  }
}

/// Empirical Fisher diagonal: mean over samples of (d log p(y|x) / d theta)^2.
inline ParamBuffers fisher_estimate(Model& m, std::span<const Sample* const> data, TrainScope scope) {
  if (data.empty()) throw Error(Errc::EmptyInput, "Fisher estimate needs data");
  ParamBuffers fisher = zeros_like(m.params(scope));
  for (const Sample* s : data) {
    ParamBuffers g = zeros_like(m.params(scope));
    const std::size_t y = label_row(m, s->label);
    m.accumulate(
        s->features, scope, [y](std::span<const double> z, std::span<double> dz) { return softmax_xent(z, y, dz); },
        g, 1.0);
    for (std::size_t t = 0; t < g.size(); ++t)
      for (std::size_t i = 0; i < g[t].size(); ++i) fisher[t][i] += g[t][i] * g[t][i];
  }
  const double inv = 1.0 / static_cast<double>(data.size());
  for (auto& t : fisher)
    for (double& v : t) v *= inv;
  return fisher;
}

// ---------------------------------------------------------------------------
// Episodic prototypical loss

struct Episode {
  std::vector<std::vector<Vector>> support;           ///< per episode class, n shots each
  std::vector<std::pair<Vector, std::size_t>> query;  ///< input and episode class index
};

struct EpisodeLoss {
  double loss = 0.0;
  ParamBuffers grads;  ///< laid out as FeatureMap::params()
};

/// Prototypes are support means in feature space; each query is scored by
/// softmax over similarity to every prototype. Gradients flow through both
/// the prototypes and the query embeddings.
inline EpisodeLoss proto_episode_loss(FeatureMap& map, const Episode& ep, Similarity metric = Similarity::Euclidean) {
  if (ep.support.empty()) throw Error(Errc::EmptyInput, "episode has no classes");
  if (ep.query.empty()) throw Error(Errc::EmptyInput, "episode has no queries");
  const std::size_t k = ep.support.size(), dim = map.output_dim();
  std::vector<std::vector<FeatureMap::Trace>> s_trace(k);
  std::vector<Vector> protos(k, Vector(dim, 0.0));
  for (std::size_t c = 0; c < k; ++c) {
    if (ep.support[c].empty()) throw Error(Errc::EmptyInput, "episode class " + std::to_string(c) + " has no support");
    s_trace[c].resize(ep.support[c].size());
    for (std::size_t n = 0; n < ep.support[c].size(); ++n)
      la::axpy(1.0 / static_cast<double>(ep.support[c].size()), map.forward(ep.support[c][n], s_trace[c][n]), protos[c]);
  }

  EpisodeLoss out{0.0, zeros_like(map.params())};
  std::vector<Vector> dproto(k, Vector(dim, 0.0));
  const double w = 1.0 / static_cast<double>(ep.query.size());
  for (const auto& [x, label] : ep.query) {
    if (label >= k) throw Error(Errc::UnknownLabel, "query label outside the episode");
    FeatureMap::Trace qt;
    const Vector g = map.forward(x, qt);
    Vector z(k);
    for (std::size_t c = 0; c < k; ++c) z[c] = similarity(metric, protos[c], g);
    Vector dz(k);
    out.loss += w * softmax_xent(z, label, dz);
    Vector dg(dim, 0.0);
    for (std::size_t c = 0; c < k; ++c) similarity_backward(metric, protos[c], g, w * dz[c], dproto[c], dg);
    map.backward(qt, dg, out.grads);
  }
  for (std::size_t c = 0; c < k; ++c) {
    Vector df = dproto[c];
    for (double& v : df) v /= static_cast<double>(ep.support[c].size());
    for (const auto& t : s_trace[c]) map.backward(t, df, out.grads);
  }
  return out;
}

/// Samples a ways x (shots + queries) episode from the pretrain pool.
/// Only classes with enough pool samples participate; ways shrinks to fit.
inline Episode sample_episode(const Dataset& ds, std::size_t ways, std::size_t shots, std::size_t queries,
                              std::mt19937_64& rng) {
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes());
  for (std::size_t idx : ds.pretrain_pool()) by_class[ds[idx].label].push_back(idx);
  std::vector<ClassId> eligible;
  for (ClassId c = 0; c < by_class.size(); ++c)
    if (by_class[c].size() >= shots + queries) eligible.push_back(c);
  if (eligible.size() < 2) throw Error(Errc::InsufficientSamples, "fewer than two classes can fill an episode");
  std::shuffle(eligible.begin(), eligible.end(), rng);
  eligible.resize(std::min(ways, eligible.size()));
  Episode ep;
  for (std::size_t c = 0; c < eligible.size(); ++c) {
    auto pool = by_class[eligible[c]];
    std::shuffle(pool.begin(), pool.end(), rng);
    ep.support.emplace_back();
    for (std::size_t n = 0; n < shots; ++n) ep.support.back().push_back(ds[pool[n]].features);
    for (std::size_t q = 0; q < queries; ++q) ep.query.emplace_back(ds[pool[shots + q]].features, c);
  }
  return ep;
}

// ---------------------------------------------------------------------------
// Update strategies

/// When a learner updates during the stream. Positions count samples seen,
/// the current one included (1-based).
struct UpdateStrategy {
  enum class Kind { None, InstancePerSample, OfflineEvery, Hybrid, ImprintThenFinetune };

  Kind kind = Kind::Hybrid;
  std::size_t interval_samples = 5000;
  std::size_t epochs = 4;
  std::size_t switch_at = 10000;

  static UpdateStrategy none() { return {Kind::None, 5000, 4, 10000}; }
  static UpdateStrategy instance() { return {Kind::InstancePerSample, 5000, 4, 10000}; }
  static UpdateStrategy offline_every(std::size_t interval = 5000, std::size_t epochs = 4) {
    return {Kind::OfflineEvery, interval, epochs, 10000};
  }
  static UpdateStrategy hybrid(std::size_t interval = 5000, std::size_t epochs = 4) {
    return {Kind::Hybrid, interval, epochs, 10000};
  }
  static UpdateStrategy imprint_then_finetune(std::size_t switch_at = 10000, std::size_t interval = 5000,
                                              std::size_t epochs = 4) {
    return {Kind::ImprintThenFinetune, interval, epochs, switch_at};
  }

  void validate() const {
    if (interval_samples < 1) throw Error(Errc::InvalidSpec, "interval_samples must be >= 1");
    if (epochs < 1) throw Error(Errc::InvalidSpec, "epochs must be >= 1");
  }

  bool instance_at(std::size_t position) const {
    switch (kind) {
      case Kind::InstancePerSample:
      case Kind::Hybrid: return true;
      case Kind::ImprintThenFinetune: return position <= switch_at;
      default: return false;
    }
  }

  bool offline_at(std::size_t position) const {
    if (position == 0 || position % interval_samples != 0) return false;
    switch (kind) {
      case Kind::OfflineEvery:
      case Kind::Hybrid: return true;
      case Kind::ImprintThenFinetune: return position >= switch_at;
      default: return false;
    }
  }

  bool operator==(const UpdateStrategy&) const = default;
};

inline const char* to_string(UpdateStrategy::Kind k) {
  switch (k) {
    case UpdateStrategy::Kind::None: return "none";
    case UpdateStrategy::Kind::InstancePerSample: return "instance";
    case UpdateStrategy::Kind::OfflineEvery: return "offline";
    case UpdateStrategy::Kind::Hybrid: return "hybrid";
    case UpdateStrategy::Kind::ImprintThenFinetune: return "imprint_then_finetune";
  }
  return "?";
}

inline UpdateStrategy::Kind strategy_kind_from_string(const std::string& s) {
  using K = UpdateStrategy::Kind;
  for (K k : {K::None, K::InstancePerSample, K::OfflineEvery, K::Hybrid, K::ImprintThenFinetune})
    if (s == to_string(k)) return k;
  throw Error(Errc::Config, "unknown update strategy '" + s + "'");
}

/// The imprint-to-finetune switch measured on ~90k-sample streams, scaled to
/// the stream length.
inline std::size_t scaled_switch_at(std::size_t total_samples, std::size_t paper_switch = 10000) {
  if (total_samples >= 90000) return paper_switch;
  return static_cast<std::size_t>(
      std::llround(static_cast<double>(total_samples) * static_cast<double>(paper_switch) / 90000.0));
}

struct OfflineStats {
  std::size_t optimizer_steps = 0;
  std::uint64_t macs = 0;

  bool operator==(const OfflineStats&) const = default;
};

/// Number of optimizer steps of one offline phase.
inline std::size_t offline_step_count(std::size_t buffered, std::size_t epochs, std::size_t batch) {
  return epochs * ((buffered + batch - 1) / batch);
}

}  // namespace fluid
