#pragma once

#include <variant>

#include "fluid/meter.hpp"

namespace fluid {

using Head = std::variant<LinearHead, CosineHead, ExemplarTuningHead, NcmHead>;

/// Which tensors an optimizer step touches: the head alone (fine-tuning) or
/// the head plus the feature map (standard training).
enum class TrainScope { Head, All };

/// A feature map followed by a classifier head.
class Model {
 public:
  Model() = default;
  Model(FeatureMap map, Head head) : map_(std::move(map)), head_(std::move(head)) {}

  FeatureMap& map() { return map_; }
  const FeatureMap& map() const { return map_; }
  Head& head() { return head_; }
  const Head& head() const { return head_; }

  template <class H>
  H& head_as() { return std::get<H>(head_); }
  template <class H>
  const H& head_as() const { return std::get<H>(head_); }

  HeadKind head_kind() const { return static_cast<HeadKind>(head_.index()); }

  Similarity head_similarity() const {
    if (auto* et = std::get_if<ExemplarTuningHead>(&head_)) return et->similarity_kind();
    if (auto* ncm = std::get_if<NcmHead>(&head_)) return ncm->metric();
    return Similarity::Dot;
  }

  const ClassIndex& index() const {
    return std::visit([](const auto& h) -> const ClassIndex& { return h.index(); }, head_);
  }
  std::size_t num_classes() const { return index().size(); }
  std::size_t feature_dim() const { return map_.output_dim(); }

  void admit(ClassId c) {
    std::visit([c](auto& h) { h.admit(c); }, head_);
  }

  Vector features(std::span<const double> x) const { return map_.forward(x); }

  Vector logits_from_features(std::span<const double> f) const {
    return std::visit([f](const auto& h) { return h.logits(f); }, head_);
  }

  Vector logits(std::span<const double> x) const { return logits_from_features(features(x)); }

  Matrix representations() const {
    return std::visit([](const auto& h) { return h.representations(); }, head_);
  }

  std::size_t head_param_count() const {
    return std::visit([](const auto& h) { return h.param_count(); }, head_);
  }

  /// Head tensors first, then (for TrainScope::All) the feature map's.
  ParamViews params(TrainScope scope) {
    ParamViews v = std::visit([](auto& h) { return h.params(); }, head_);
    if (scope == TrainScope::All)
      for (auto p : map_.params()) v.push_back(p);
    return v;
  }

  /// Forward/backward of one sample. loss_fn(logits, dlogits) returns the
  /// loss and fills dlogits; gradients are scaled by weight and added to
  /// grads (laid out as params(scope)). Returns weight * loss.
  template <class LossFn>
  double accumulate(std::span<const double> x, TrainScope scope, LossFn&& loss_fn, std::span<Vector> grads,
                    double weight) const {
    FeatureMap::Trace trace;
    const Vector f = map_.forward(x, trace);
    const Vector z = logits_from_features(f);
    Vector dz(z.size(), 0.0);
    const double loss = loss_fn(std::span<const double>(z), std::span<double>(dz));
    for (double& g : dz) g *= weight;
    const std::size_t nh = head_param_count();
    const bool through_map = scope == TrainScope::All && !map_.is_frozen();
    Vector df(through_map ? f.size() : 0, 0.0);
    std::visit([&](const auto& h) { h.backward(f, dz, grads.subspan(0, nh), df); }, head_);
    if (through_map) map_.backward(trace, df, grads.subspan(nh));
    return weight * loss;
  }

  /// One sample's forward MACs at the current class count.
  std::uint64_t forward_macs(TrainScope scope = TrainScope::All) const {
    const std::uint64_t head = meter_inference(head_kind(), head_similarity(), feature_dim(), num_classes());
    return scope == TrainScope::All ? head + map_.macs() : head;
  }

  nlohmann::json to_json() const {
    return {{"map", map_.to_json()},
            {"head", std::visit([](const auto& h) { return h.to_json(); }, head_)}};
  }

  static Model from_json(const nlohmann::json& j) {
    try {
      FeatureMap map = FeatureMap::from_json(j.at("map"));
      const auto& hj = j.at("head");
      const auto kind = hj.at("kind").get<std::string>();
      if (kind == "linear") return {std::move(map), LinearHead::from_json(hj)};
      if (kind == "cosine") return {std::move(map), CosineHead::from_json(hj)};
      if (kind == "exemplar_tuning") return {std::move(map), ExemplarTuningHead::from_json(hj)};
      if (kind == "ncm") return {std::move(map), NcmHead::from_json(hj)};
      throw Error(Errc::Format, "unknown head kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::Format, std::string("model checkpoint: ") + e.what());
    }
  }

  bool operator==(const Model&) const = default;

 private:
  FeatureMap map_;
  Head head_;
};

}  // namespace fluid
