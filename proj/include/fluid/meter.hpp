#pragma once

#include "fluid/heads.hpp"

namespace fluid {

enum class HeadKind { Linear, Cosine, ExemplarTuning, Ncm };

inline const char* to_string(HeadKind k) {
  switch (k) {
    case HeadKind::Linear: return "linear";
    case HeadKind::Cosine: return "cosine";
    case HeadKind::ExemplarTuning: return "exemplar_tuning";
    case HeadKind::Ncm: return "ncm";
  }
  return "?";
}

/// Monotone multiply-accumulate counter, split by where the work happened.
class MacMeter {
 public:
  void add_inference(std::uint64_t n) { inference_ += n; }
  void add_training(std::uint64_t n) { training_ += n; }

  std::uint64_t inference() const { return inference_; }
  std::uint64_t training() const { return training_; }
  std::uint64_t total() const { return inference_ + training_; }
  double gmacs() const { return static_cast<double>(total()) / 1e9; }

  bool operator==(const MacMeter&) const = default;

 private:
  std::uint64_t inference_ = 0;
  std::uint64_t training_ = 0;
};

// Counting convention:
//   head scoring       d * k, plus d when the input is normalized (cosine)
//   MLP forward        sum of in * out over layers (see FeatureMap::macs)
//   optimizer step     3 * forward * batch (backward counted as twice forward)
//   centroid update    d per sample

/// Scoring cost of a head over k known classes with d-dim features.
inline std::uint64_t meter_inference(HeadKind kind, Similarity sim, std::size_t d, std::size_t k) {
  const std::uint64_t base = static_cast<std::uint64_t>(d) * k;
  const bool normalizes = kind == HeadKind::Cosine ||
                          (kind != HeadKind::Linear && sim == Similarity::Cosine);
  return base + (normalizes ? d : 0);
}

inline std::uint64_t meter_inference(const FeatureMap& map) { return map.macs(); }

enum class TrainingStep { Optimizer, CentroidUpdate };

/// For Optimizer, forward_macs is one sample's forward cost; for
/// CentroidUpdate it is the feature dimension.
inline std::uint64_t meter_training(TrainingStep kind, std::size_t batch, std::uint64_t forward_macs) {
  if (kind == TrainingStep::Optimizer) return 3 * forward_macs * batch;
  return forward_macs * batch;
}

}  // namespace fluid
