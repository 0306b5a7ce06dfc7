#pragma once

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include <json.hpp>

#include "fluid/core.hpp"

namespace fluid {

enum class ClassRole { Pretrain, Novel };

inline const char* to_string(ClassRole r) { return r == ClassRole::Pretrain ? "pretrain" : "novel"; }

struct Sample {
  Vector features;
  ClassId label = 0;

  bool operator==(const Sample&) const = default;
};

/// Immutable labeled feature vectors plus the pretrain/stream split.
///
/// Samples of Pretrain classes are split in file order: the first half of each
/// class goes to the pretraining pool, the remainder is available to the
/// stream. Novel-class samples are all stream samples.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::vector<Sample> samples, std::size_t dim, std::vector<ClassRole> roles)
      : samples_(std::move(samples)), dim_(dim), roles_(std::move(roles)) {
    if (dim_ == 0) throw Error(Errc::InvalidSpec, "dataset dimension must be positive");
    std::vector<std::vector<std::size_t>> by_class(roles_.size());
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const auto& s = samples_[i];
      if (s.features.size() != dim_)
        throw Error(Errc::DimensionMismatch, "sample " + std::to_string(i) + " has length " +
                                                 std::to_string(s.features.size()) + ", expected " +
                                                 std::to_string(dim_));
      if (s.label >= roles_.size())
        throw Error(Errc::UnknownClass, "sample " + std::to_string(i) + " references class " +
                                            std::to_string(s.label));
      if (!la::all_finite(s.features))
        throw Error(Errc::Format, "sample " + std::to_string(i) + " has non-finite features");
      by_class[s.label].push_back(i);
    }
    for (ClassId c = 0; c < roles_.size(); ++c) {
      const auto& idx = by_class[c];
      std::size_t cut = roles_[c] == ClassRole::Pretrain ? idx.size() / 2 : 0;
      pretrain_pool_.insert(pretrain_pool_.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut));
      stream_by_class_.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end());
    }
    std::sort(pretrain_pool_.begin(), pretrain_pool_.end());
  }

  const std::vector<Sample>& samples() const { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }
  std::size_t size() const { return samples_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t num_classes() const { return roles_.size(); }
  ClassRole role(ClassId c) const { return roles_.at(c); }
  const std::vector<ClassRole>& roles() const { return roles_; }

  /// Sample indices reserved for the pretraining phase, ascending.
  const std::vector<std::size_t>& pretrain_pool() const { return pretrain_pool_; }
  /// Stream-eligible sample indices of one class, in file order.
  const std::vector<std::size_t>& stream_pool(ClassId c) const { return stream_by_class_.at(c); }

  std::vector<ClassId> classes_with_role(ClassRole r) const {
    std::vector<ClassId> out;
    for (ClassId c = 0; c < roles_.size(); ++c)
      if (roles_[c] == r) out.push_back(c);
    return out;
  }

  bool operator==(const Dataset& o) const {
    return samples_ == o.samples_ && dim_ == o.dim_ && roles_ == o.roles_;
  }

 private:
  std::vector<Sample> samples_;
  std::size_t dim_ = 0;
  std::vector<ClassRole> roles_;
  std::vector<std::size_t> pretrain_pool_;
  std::vector<std::vector<std::size_t>> stream_by_class_;
};

// ---------------------------------------------------------------------------
// Embedding files: "FLDE", u32 version, u64 n, u32 d, then n x (u32 class, d x f32).
// All integers and floats little-endian.

namespace detail {

inline constexpr std::array<char, 4> kEmbeddingMagic{'F', 'L', 'D', 'E'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

template <class T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.append(bytes.data(), bytes.size());
}

template <class T>
T get_le(const char* p) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::Io, "short write to " + path);
}

}  // namespace detail

/// Parses the role manifest: {"classes": [{"id": int, "role": "pretrain"|"novel"}]}.
inline std::vector<ClassRole> parse_manifest(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("classes") || !j["classes"].is_array())
    throw Error(Errc::Format, "manifest must be an object with a \"classes\" array");
  const auto& arr = j["classes"];
  std::vector<int> seen(arr.size(), 0);
  std::vector<ClassRole> roles(arr.size(), ClassRole::Novel);
  for (const auto& entry : arr) {
    if (!entry.contains("id") || !entry["id"].is_number_integer())
      throw Error(Errc::Format, "manifest class entry without integer id");
    const auto id = entry["id"].get<std::int64_t>();
    if (id < 0 || static_cast<std::size_t>(id) >= arr.size())
      throw Error(Errc::Format, "manifest class ids must be contiguous from 0; got " + std::to_string(id));
    if (seen[static_cast<std::size_t>(id)]++)
      throw Error(Errc::Format, "manifest declares class " + std::to_string(id) + " twice");
    if (!entry.contains("role") || !entry["role"].is_string())
      throw Error(Errc::MissingRole, "manifest class " + std::to_string(id) + " has no role");
    const auto role = entry["role"].get<std::string>();
    if (role == "pretrain") roles[static_cast<std::size_t>(id)] = ClassRole::Pretrain;
    else if (role == "novel") roles[static_cast<std::size_t>(id)] = ClassRole::Novel;
    else throw Error(Errc::MissingRole, "class " + std::to_string(id) + " has unknown role '" + role + "'");
  }
  return roles;
}

inline nlohmann::json manifest_json(const std::vector<ClassRole>& roles) {
  nlohmann::json arr = nlohmann::json::array();
  for (ClassId c = 0; c < roles.size(); ++c) arr.push_back({{"id", c}, {"role", to_string(roles[c])}});
  return {{"classes", arr}};
}

/// Decodes an embedding file already in memory.
inline Dataset decode_embeddings(const std::string& bytes, const std::vector<ClassRole>& roles) {
  constexpr std::size_t header = 4 + 4 + 8 + 4;
  if (bytes.size() < header || !std::equal(detail::kEmbeddingMagic.begin(), detail::kEmbeddingMagic.end(), bytes.begin()))
    throw Error(Errc::Format, "not an embedding file (bad magic or truncated header)");
  const char* p = bytes.data() + 4;
  const auto version = detail::get_le<std::uint32_t>(p);
  if (version != detail::kEmbeddingVersion)
    throw Error(Errc::Format, "unsupported embedding version " + std::to_string(version));
  const auto n = detail::get_le<std::uint64_t>(p + 4);
  const auto d = detail::get_le<std::uint32_t>(p + 12);
  if (d == 0) throw Error(Errc::Format, "embedding dimension is zero");
  const std::size_t record = 4 + 4 * static_cast<std::size_t>(d);
  if (bytes.size() - header != n * record)
    throw Error(Errc::DimensionMismatch, "payload of " + std::to_string(bytes.size() - header) +
                                             " bytes does not hold " + std::to_string(n) +
                                             " records of dimension " + std::to_string(d));
  std::vector<Sample> samples(n);
  p = bytes.data() + header;
  for (std::uint64_t i = 0; i < n; ++i, p += record) {
    samples[i].label = detail::get_le<std::uint32_t>(p);
    if (samples[i].label >= roles.size())
      throw Error(Errc::UnknownClass, "record " + std::to_string(i) + " has class " +
                                          std::to_string(samples[i].label) + " absent from the manifest");
    samples[i].features.resize(d);
    for (std::uint32_t k = 0; k < d; ++k)
      samples[i].features[k] = static_cast<double>(detail::get_le<float>(p + 4 + 4 * k));
  }
  return Dataset(std::move(samples), d, roles);
}

inline std::string encode_embeddings(const Dataset& ds) {
  std::string out;
  out.reserve(20 + ds.size() * (4 + 4 * ds.dim()));
  out.append(detail::kEmbeddingMagic.data(), 4);
  detail::put_le<std::uint32_t>(out, detail::kEmbeddingVersion);
  detail::put_le<std::uint64_t>(out, ds.size());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.dim()));
  for (const auto& s : ds.samples()) {
    detail::put_le<std::uint32_t>(out, s.label);
    for (double v : s.features) detail::put_le<float>(out, static_cast<float>(v));
  }
  return out;
}

inline Dataset load_embeddings(const std::string& path, const std::string& manifest_path) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::read_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::Format, "manifest " + manifest_path + ": " + e.what());
  }
  return decode_embeddings(detail::read_file(path), parse_manifest(manifest));
}

inline void write_embeddings(const Dataset& ds, const std::string& path) {
  detail::write_file(path, encode_embeddings(ds));
}

inline void write_manifest(const Dataset& ds, const std::string& path) {
  detail::write_file(path, manifest_json(ds.roles()).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Gaussian mixtures

struct GaussianMixtureSpec {
  std::size_t num_classes = 2;
  std::size_t dim = 8;
  double cluster_separation = 6.0;  ///< pairwise mean distance in units of the noise sigma
  std::size_t samples_per_class = 100;
  double pretrain_fraction = 0.25;
  std::uint64_t seed = 0;

  bool operator==(const GaussianMixtureSpec&) const = default;
};

inline void validate(const GaussianMixtureSpec& spec) {
  if (spec.num_classes < 2) throw Error(Errc::InvalidSpec, "num_classes must be >= 2");
  if (spec.dim < 1) throw Error(Errc::InvalidSpec, "dim must be >= 1");
  if (spec.samples_per_class < 1) throw Error(Errc::InvalidSpec, "samples_per_class must be >= 1");
  if (!(spec.cluster_separation >= 0.0) || !std::isfinite(spec.cluster_separation))
    throw Error(Errc::InvalidSpec, "cluster_separation must be finite and non-negative");
  if (!(spec.pretrain_fraction > 0.0 && spec.pretrain_fraction <= 1.0))
    throw Error(Errc::InvalidSpec, "pretrain_fraction must lie in (0, 1]");
}

/// Class means of the mixture, one row per class.
///
/// With num_classes <= dim + 1 the means are vertices of a regular simplex, so
/// every pair sits exactly cluster_separation apart. Otherwise random unit
/// directions are spread by pairwise repulsion on the sphere and scaled so the
/// closest pair sits at cluster_separation.
inline Matrix gaussian_means(const GaussianMixtureSpec& spec) {
  validate(spec);
  const std::size_t k = spec.num_classes, d = spec.dim;
  const double scale = spec.cluster_separation / std::sqrt(2.0);
  Matrix means(k, d);

  if (k <= d + 1) {
    // e_i - centroid lives in a (k-1)-dim subspace; Gram-Schmidt gives coordinates there.
    std::vector<Vector> verts(k, Vector(k, -1.0 / static_cast<double>(k)));
    for (std::size_t i = 0; i < k; ++i) verts[i][i] += 1.0;
    std::vector<Vector> basis;
    for (std::size_t i = 0; i + 1 < k; ++i) {
      Vector b = verts[i];
      for (const auto& q : basis) la::axpy(-la::dot(b, q), q, b);
      const double n = la::norm(b);
      for (double& v : b) v /= n;
      basis.push_back(std::move(b));
    }
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < basis.size(); ++j) means(i, j) = scale * la::dot(verts[i], basis[j]);
    return means;
  }

  if (d < 2) throw Error(Errc::InvalidSpec, "dimension 1 cannot hold more than 2 separated means");
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto unitize = [](std::span<double> r) {
    const double n = la::norm(r);
    for (double& v : r) v /= n;
  };
  for (std::size_t i = 0; i < k; ++i) {
    auto r = means.row(i);
    while (la::norm(r) == 0.0)
      for (double& v : r) v = normal(rng);
    unitize(r);
  }
  // repulsion with a steep power law, projected onto the sphere
  Matrix force(k, d);
  double step = 0.1;
  for (int it = 0; it < 2000; ++it) {
    std::fill(force.data.begin(), force.data.end(), 0.0);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = i + 1; j < k; ++j) {
        const double dist = std::max(la::distance(means.row(i), means.row(j)), 1e-3);
        const double w = std::pow(dist, -8.0);
        for (std::size_t t = 0; t < d; ++t) {
          const double f = w * (means(i, t) - means(j, t));
          force(i, t) += f;
          force(j, t) -= f;
        }
      }
    for (std::size_t i = 0; i < k; ++i) {
      auto r = means.row(i);
      auto f = force.row(i);
      la::axpy(-la::dot(f, r), r, f);
      la::axpy(step / static_cast<double>(k), f, r);
      unitize(r);
    }
    if (it % 500 == 499) step *= 0.5;
  }
  double closest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) closest = std::min(closest, la::distance(means.row(i), means.row(j)));
  if (closest < 1e-6) throw Error(Errc::InvalidSpec, "could not separate " + std::to_string(k) + " means in dimension " + std::to_string(d));
  for (double& v : means.data) v *= spec.cluster_separation / closest;
  return means;
}

/// Draws samples_per_class standard-normal perturbations around each mean.
/// Samples are stored class-major; a pure function of the spec.
inline Dataset synth_gaussian(const GaussianMixtureSpec& spec) {
  const Matrix means = gaussian_means(spec);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Sample> samples;
  samples.reserve(spec.num_classes * spec.samples_per_class);
  for (ClassId c = 0; c < spec.num_classes; ++c) {
    for (std::size_t n = 0; n < spec.samples_per_class; ++n) {
      Sample s{Vector(spec.dim), c};
      for (std::size_t j = 0; j < spec.dim; ++j) s.features[j] = means(c, j) + normal(rng);
      samples.push_back(std::move(s));
    }
  }
  const auto n_pretrain = static_cast<std::size_t>(
      std::ceil(spec.pretrain_fraction * static_cast<double>(spec.num_classes) - 1e-9));
  std::vector<ClassRole> roles(spec.num_classes, ClassRole::Novel);
  for (std::size_t c = 0; c < n_pretrain; ++c) roles[c] = ClassRole::Pretrain;
  return Dataset(std::move(samples), spec.dim, std::move(roles));
}

}  // namespace fluid
