#pragma once

#include <numeric>
#include <ostream>

#include "fluid/meter.hpp"

namespace fluid {

// All scores are oriented so that larger means more likely out-of-distribution.

/// Distance-based scoring picks Euclidean (min distance) or Cosine (negated max similarity).
enum class OodMetric { Euclidean, Cosine };

inline const char* to_string(OodMetric m) { return m == OodMetric::Euclidean ? "euclidean" : "cosine"; }

inline OodMetric ood_metric_from_string(const std::string& s) {
  if (s == "euclidean") return OodMetric::Euclidean;
  if (s == "cosine") return OodMetric::Cosine;
  throw Error(Errc::Config, "unknown OOD metric '" + s + "'");
}

/// Minimum distance from x to any class representation (one row per class).
inline double mdt_score(const Matrix& reps, std::span<const double> x, OodMetric metric = OodMetric::Euclidean) {
  if (reps.rows == 0) throw Error(Errc::NoClasses, "no class representations");
  if (reps.cols != x.size()) throw Error(Errc::DimensionMismatch, "representation dimension mismatch");
  if (metric == OodMetric::Euclidean) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < reps.rows; ++i) best = std::min(best, la::distance(reps.row(i), x));
    return best;
  }
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < reps.rows; ++i) best = std::max(best, la::cosine(reps.row(i), x));
  return -best;
}

/// 1 - max_i p_i.
inline double max_softmax_score(std::span<const double> probs) {
  if (probs.empty()) throw Error(Errc::NoClasses, "empty probability vector");
  const double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-6) throw Error(Errc::NotNormalized, "probabilities sum to " + std::to_string(sum));
  return 1.0 - *std::max_element(probs.begin(), probs.end());
}

struct OodScorer {
  enum class Kind { Mdt, MaxSoftmax };
  Kind kind = Kind::Mdt;
  OodMetric metric = OodMetric::Cosine;

  bool operator==(const OodScorer&) const = default;
};

inline const char* to_string(OodScorer::Kind k) { return k == OodScorer::Kind::Mdt ? "mdt" : "max_softmax"; }

inline OodScorer::Kind ood_kind_from_string(const std::string& s) {
  if (s == "mdt") return OodScorer::Kind::Mdt;
  if (s == "max_softmax") return OodScorer::Kind::MaxSoftmax;
  throw Error(Errc::Config, "unknown OOD scorer '" + s + "'");
}

/// Extra MACs of scoring one sample: distance-based scoring revisits every
/// representation; max-softmax reads the probabilities already computed.
inline std::uint64_t meter_ood(const OodScorer& scorer, std::size_t d, std::size_t k) {
  if (scorer.kind == OodScorer::Kind::MaxSoftmax) return 0;
  return static_cast<std::uint64_t>(d) * k + (scorer.metric == OodMetric::Cosine ? d : 0);
}

// ---------------------------------------------------------------------------
// Detection metrics; `unseen` marks the positive class.

namespace detail {
inline void check_labels(std::span<const double> scores, const std::vector<bool>& unseen) {
  if (scores.size() != unseen.size()) throw Error(Errc::ShapeMismatch, "scores and labels differ in length");
}
}  // namespace detail

/// P(score_unseen > score_seen) + 0.5 P(tie), via midranks.
inline double auroc(std::span<const double> scores, const std::vector<bool>& unseen) {
  detail::check_labels(scores, unseen);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // twice the midrank keeps everything integral
  std::vector<std::uint64_t> rank2(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    for (std::size_t t = i; t < j; ++t) rank2[order[t]] = i + j + 1;  // (i+1 + j) = 2 * midrank
    i = j;
  }
  std::uint64_t pos = 0, sum2 = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (unseen[i]) {
      ++pos;
      sum2 += rank2[i];
    }
  const std::uint64_t neg = n - pos;
  if (pos == 0 || neg == 0) throw Error(Errc::SingleLabel, "AUROC needs both seen and unseen samples");
  // U = sum of ranks - pos (pos + 1) / 2, all doubled
  const std::uint64_t u2 = sum2 - pos * (pos + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

struct F1Result {
  double threshold = 0.0;  ///< predict unseen when score > threshold
  double f1 = 0.0;
};

/// Sweeps threshold = -inf and every distinct score; the first maximizer wins.
inline F1Result best_f1(std::span<const double> scores, const std::vector<bool>& unseen) {
  detail::check_labels(scores, unseen);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::size_t positives = 0;
  for (bool u : unseen) positives += u;
  if (positives == 0) throw Error(Errc::SingleLabel, "F1 needs at least one unseen sample");

  auto f1_of = [&](std::size_t tp, std::size_t predicted) {
    return predicted == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(predicted + positives);
  };
  // everything above threshold is predicted unseen; start with all predicted
  std::size_t tp = positives, predicted = scores.size();
  F1Result best{-std::numeric_limits<double>::infinity(), f1_of(tp, predicted)};
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    while (i < order.size() && scores[order[i]] == t) {
      tp -= unseen[order[i]];
      --predicted;
      ++i;
    }
    const double f = f1_of(tp, predicted);
    if (f > best.f1) best = {t, f};
  }
  return best;
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  ///< predict unseen when score >= threshold
};

/// Curve from (0, 0) at threshold +inf down to (1, 1), one point per distinct score.
inline std::vector<RocPoint> roc_curve(std::span<const double> scores, const std::vector<bool>& unseen) {
  detail::check_labels(scores, unseen);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t pos = 0;
  for (bool u : unseen) pos += u;
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw Error(Errc::SingleLabel, "ROC needs both seen and unseen samples");
  std::vector<RocPoint> pts{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    while (i < order.size() && scores[order[i]] == t) {
      (unseen[order[i]] ? tp : fp) += 1;
      ++i;
    }
    pts.push_back({static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(tp) / static_cast<double>(pos), t});
  }
  return pts;
}

inline void write_roc_csv(std::ostream& out, const std::vector<RocPoint>& pts) {
  out << "fpr,tpr,threshold\n";
  out.precision(17);
  for (const auto& p : pts) out << p.fpr << ',' << p.tpr << ',' << p.threshold << '\n';
}

}  // namespace fluid
