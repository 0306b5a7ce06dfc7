#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fluid {

using ClassId = std::uint32_t;
using Vector = std::vector<double>;

enum class Errc {
  Io,
  Format,
  DimensionMismatch,
  UnknownClass,
  MissingRole,
  InvalidSpec,
  InsufficientSamples,
  NoClasses,
  ZeroNorm,
  DuplicateClass,
  ShapeMismatch,
  UnknownLabel,
  EmptyInput,
  SingleLabel,
  NotNormalized,
  WindowTooLarge,
  IncompatibleRuns,
  Config,
};

inline const char* to_string(Errc c) {
  switch (c) {
    case Errc::Io: return "io";
    case Errc::Format: return "format";
    case Errc::DimensionMismatch: return "dimension_mismatch";
    case Errc::UnknownClass: return "unknown_class";
    case Errc::MissingRole: return "missing_role";
    case Errc::InvalidSpec: return "invalid_spec";
    case Errc::InsufficientSamples: return "insufficient_samples";
    case Errc::NoClasses: return "no_classes";
    case Errc::ZeroNorm: return "zero_norm";
    case Errc::DuplicateClass: return "duplicate_class";
    case Errc::ShapeMismatch: return "shape_mismatch";
    case Errc::UnknownLabel: return "unknown_label";
    case Errc::EmptyInput: return "empty_input";
    case Errc::SingleLabel: return "single_label";
    case Errc::NotNormalized: return "not_normalized";
    case Errc::WindowTooLarge: return "window_too_large";
    case Errc::IncompatibleRuns: return "incompatible_runs";
    case Errc::Config: return "config";
  }
  return "unknown";
}

/// Every failure in the library surfaces as an Error carrying a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vector data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  /// Appends a row; rows are contiguous so existing flat offsets stay valid.
  void append_row(std::span<const double> values) {
    if (values.size() != cols) throw Error(Errc::ShapeMismatch, "row width mismatch");
    data.insert(data.end(), values.begin(), values.end());
    ++rows;
  }
  void append_zero_row() { data.resize(data.size() + cols, 0.0); ++rows; }

  bool operator==(const Matrix&) const = default;
};

namespace la {

inline double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double distance(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Numerically stable softmax; -inf entries get probability exactly 0.
inline Vector softmax(std::span<const double> logits, double temperature = 1.0) {
  Vector p(logits.size(), 0.0);
  if (logits.empty()) return p;
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) mx = std::max(mx, z);
  if (!std::isfinite(mx)) {
    // nothing scoreable: uniform over all entries
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(p.size()));
    return p;
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::isfinite(logits[i]) ? std::exp((logits[i] - mx) / temperature) : 0.0;
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

/// log(sum(exp(z / T))) over finite entries.
inline double log_sum_exp(std::span<const double> logits, double temperature = 1.0) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) mx = std::max(mx, z);
  double sum = 0.0;
  for (double z : logits)
    if (std::isfinite(z)) sum += std::exp((z - mx) / temperature);
  return mx / temperature + std::log(sum);
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace la

/// Views over a model's trainable tensors, in a fixed order.
using ParamViews = std::vector<std::span<double>>;
/// Gradient (or optimizer) buffers shaped like a ParamViews list.
using ParamBuffers = std::vector<Vector>;

inline ParamBuffers zeros_like(const ParamViews& params) {
  ParamBuffers out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.size(), 0.0);
  return out;
}

inline std::size_t total_size(const ParamViews& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.size();
  return n;
}

inline Vector flatten(const ParamViews& params) {
  Vector out;
  out.reserve(total_size(params));
  for (const auto& p : params) out.insert(out.end(), p.begin(), p.end());
  return out;
}

inline Vector flatten(const ParamBuffers& buffers) {
  Vector out;
  for (const auto& b : buffers) out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace fluid
