#pragma once

#include <map>
#include <numeric>
#include <random>

#include <json.hpp>

#include "fluid/dataset.hpp"

namespace fluid {

enum class Bucket { NovelHead, NovelTail, PretrainHead, PretrainTail };

inline constexpr std::array<Bucket, 4> kAllBuckets{Bucket::NovelHead, Bucket::PretrainHead, Bucket::NovelTail,
                                                   Bucket::PretrainTail};

inline const char* to_string(Bucket b) {
  switch (b) {
    case Bucket::NovelHead: return "novel_head";
    case Bucket::NovelTail: return "novel_tail";
    case Bucket::PretrainHead: return "pretrain_head";
    case Bucket::PretrainTail: return "pretrain_tail";
  }
  return "?";
}

inline Bucket bucket_from_string(const std::string& s) {
  for (Bucket b : kAllBuckets)
    if (s == to_string(b)) return b;
  throw Error(Errc::Format, "unknown bucket '" + s + "'");
}

/// Head iff the class has strictly more than head_threshold samples in the stream.
inline Bucket bucket_of(std::size_t count, ClassRole role, std::size_t head_threshold = 50) {
  const bool head = count > head_threshold;
  if (role == ClassRole::Pretrain) return head ? Bucket::PretrainHead : Bucket::PretrainTail;
  return head ? Bucket::NovelHead : Bucket::NovelTail;
}

struct SequenceSpec {
  std::size_t num_classes = 20;
  double zipf_s = 1.0;
  std::size_t total_samples = 2000;
  std::size_t head_threshold = 50;
  std::uint64_t seed = 0;

  bool operator==(const SequenceSpec&) const = default;
};

inline void validate(const SequenceSpec& spec) {
  if (spec.num_classes < 1) throw Error(Errc::InvalidSpec, "sequence needs at least one class");
  if (spec.total_samples < spec.num_classes)
    throw Error(Errc::InvalidSpec, "total_samples must be >= num_classes");
  if (!(spec.zipf_s > 0.0) || !std::isfinite(spec.zipf_s)) throw Error(Errc::InvalidSpec, "zipf_s must be positive");
}

/// An ordered stream over dataset sample indices with its class statistics.
struct StreamTask {
  std::vector<std::size_t> order;
  std::map<ClassId, std::size_t> class_counts;
  std::map<ClassId, Bucket> buckets;
  std::size_t head_threshold = 50;

  bool operator==(const StreamTask&) const = default;
};

/// Zipf probability of each rank 1..n: r^-s / sum_k k^-s.
inline Vector zipf_pmf(std::size_t num_classes, double s) {
  Vector p(num_classes);
  double h = 0.0;
  for (std::size_t r = 1; r <= num_classes; ++r) h += std::pow(static_cast<double>(r), -s);
  for (std::size_t r = 1; r <= num_classes; ++r) p[r - 1] = std::pow(static_cast<double>(r), -s) / h;
  return p;
}

/// Integer per-rank targets summing exactly to total (largest-remainder rounding).
inline std::vector<std::size_t> zipf_targets(std::size_t num_classes, double s, std::size_t total) {
  const Vector p = zipf_pmf(num_classes, s);
  std::vector<std::size_t> counts(num_classes);
  std::vector<std::pair<double, std::size_t>> remainders(num_classes);
  std::size_t assigned = 0;
  for (std::size_t r = 0; r < num_classes; ++r) {
    const double exact = p[r] * static_cast<double>(total);
    counts[r] = static_cast<std::size_t>(std::floor(exact));
    remainders[r] = {exact - std::floor(exact), r};
    assigned += counts[r];
  }
  // larger remainder first, lower rank breaks ties
  std::sort(remainders.begin(), remainders.end(),
            [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[remainders[i % num_classes].second];
  return counts;
}

/// Caps targets at per-rank availability, pushing each deficit to the next
/// ranks; anything left after the last rank is placed from rank 1 onward.
inline std::vector<std::size_t> cap_targets(std::vector<std::size_t> targets, const std::vector<std::size_t>& available) {
  std::size_t carry = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const std::size_t want = targets[r] + carry;
    targets[r] = std::min(want, available[r]);
    carry = want - targets[r];
  }
  for (std::size_t r = 0; r < targets.size() && carry > 0; ++r) {
    const std::size_t add = std::min(carry, available[r] - targets[r]);
    targets[r] += add;
    carry -= add;
  }
  if (carry > 0)
    throw Error(Errc::InsufficientSamples, "stream classes hold " + std::to_string(carry) +
                                               " fewer samples than requested");
  return targets;
}

inline StreamTask build_sequence(const Dataset& ds, const SequenceSpec& spec) {
  validate(spec);
  std::vector<ClassId> eligible;
  for (ClassId c = 0; c < ds.num_classes(); ++c)
    if (!ds.stream_pool(c).empty()) eligible.push_back(c);
  if (eligible.size() < spec.num_classes)
    throw Error(Errc::InsufficientSamples, "dataset has " + std::to_string(eligible.size()) +
                                               " streamable classes, sequence needs " +
                                               std::to_string(spec.num_classes));

  std::mt19937_64 rng(spec.seed);
  std::shuffle(eligible.begin(), eligible.end(), rng);
  eligible.resize(spec.num_classes);  // eligible[r] is the class holding rank r + 1

  std::vector<std::size_t> available(spec.num_classes);
  for (std::size_t r = 0; r < spec.num_classes; ++r) available[r] = ds.stream_pool(eligible[r]).size();
  const auto counts = cap_targets(zipf_targets(spec.num_classes, spec.zipf_s, spec.total_samples), available);

  StreamTask task;
  task.head_threshold = spec.head_threshold;
  task.order.reserve(spec.total_samples);
  for (std::size_t r = 0; r < spec.num_classes; ++r) {
    if (counts[r] == 0) continue;
    const ClassId c = eligible[r];
    auto pool = ds.stream_pool(c);
    std::shuffle(pool.begin(), pool.end(), rng);
    task.order.insert(task.order.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(counts[r]));
    task.class_counts[c] = counts[r];
    task.buckets[c] = bucket_of(counts[r], ds.role(c), spec.head_threshold);
  }
  std::shuffle(task.order.begin(), task.order.end(), rng);
  return task;
}

/// Checks a task against a dataset; throws on the first violated invariant.
inline void check_task(const StreamTask& task, const Dataset& ds) {
  std::map<ClassId, std::size_t> tally;
  for (std::size_t idx : task.order) {
    if (idx >= ds.size()) throw Error(Errc::InvalidSpec, "sample index " + std::to_string(idx) + " out of range");
    ++tally[ds[idx].label];
  }
  if (tally != task.class_counts) throw Error(Errc::InvalidSpec, "class_counts disagree with order");
  for (const auto& [c, n] : task.class_counts) {
    auto it = task.buckets.find(c);
    if (it == task.buckets.end()) throw Error(Errc::InvalidSpec, "class " + std::to_string(c) + " has no bucket");
    if (it->second != bucket_of(n, ds.role(c), task.head_threshold))
      throw Error(Errc::InvalidSpec, "bucket of class " + std::to_string(c) + " inconsistent with its count");
  }
  if (task.buckets.size() != task.class_counts.size())
    throw Error(Errc::InvalidSpec, "buckets name classes absent from the stream");
}

struct SequenceStats {
  std::size_t samples = 0;
  std::size_t classes = 0;
  std::size_t min_count = 0;
  std::size_t max_count = 0;
};

inline SequenceStats stats(const StreamTask& task) {
  SequenceStats s;
  s.samples = task.order.size();
  s.classes = task.class_counts.size();
  if (task.class_counts.empty()) return s;
  s.min_count = std::numeric_limits<std::size_t>::max();
  for (const auto& [c, n] : task.class_counts) {
    s.min_count = std::min(s.min_count, n);
    s.max_count = std::max(s.max_count, n);
  }
  return s;
}

inline nlohmann::json to_json(const StreamTask& task) {
  nlohmann::json counts = nlohmann::json::object(), buckets = nlohmann::json::object();
  for (const auto& [c, n] : task.class_counts) counts[std::to_string(c)] = n;
  for (const auto& [c, b] : task.buckets) buckets[std::to_string(c)] = to_string(b);
  return {{"head_threshold", task.head_threshold}, {"order", task.order}, {"class_counts", counts}, {"buckets", buckets}};
}

inline StreamTask stream_task_from_json(const nlohmann::json& j) {
  try {
    StreamTask t;
    t.head_threshold = j.at("head_threshold").get<std::size_t>();
    t.order = j.at("order").get<std::vector<std::size_t>>();
    for (const auto& [k, v] : j.at("class_counts").items())
      t.class_counts[static_cast<ClassId>(std::stoul(k))] = v.get<std::size_t>();
    for (const auto& [k, v] : j.at("buckets").items())
      t.buckets[static_cast<ClassId>(std::stoul(k))] = bucket_from_string(v.get<std::string>());
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::Format, std::string("stream task: ") + e.what());
  } catch (const std::logic_error& e) {
    throw Error(Errc::Format, std::string("stream task: bad class id: ") + e.what());
  }
}

}  // namespace fluid
