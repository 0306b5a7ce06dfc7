#pragma once

#include <map>
#include <optional>
#include <random>

#include <json.hpp>

#include "fluid/core.hpp"

namespace fluid {

// ---------------------------------------------------------------------------
// Similarities shared by NCM, Exemplar Tuning and episodic pretraining.

/// Score between a class vector and a feature; Euclidean is the negated distance.
enum class Similarity { Dot, Cosine, Euclidean };

inline const char* to_string(Similarity s) {
  switch (s) {
    case Similarity::Dot: return "dot";
    case Similarity::Cosine: return "cosine";
    case Similarity::Euclidean: return "euclidean";
  }
  return "?";
}

inline Similarity similarity_from_string(const std::string& s) {
  if (s == "dot") return Similarity::Dot;
  if (s == "cosine") return Similarity::Cosine;
  if (s == "euclidean") return Similarity::Euclidean;
  throw Error(Errc::Config, "unknown similarity '" + s + "'");
}

inline double similarity(Similarity kind, std::span<const double> a, std::span<const double> b) {
  switch (kind) {
    case Similarity::Dot: return la::dot(a, b);
    case Similarity::Cosine: return la::cosine(a, b);
    case Similarity::Euclidean: return -la::distance(a, b);
  }
  return 0.0;
}

/// Adds upstream * d sim(a, b) / da to da and the b-derivative to db.
/// Either output may be empty. Non-differentiable points (zero norms, a == b)
/// contribute zero.
inline void similarity_backward(Similarity kind, std::span<const double> a, std::span<const double> b,
                                double upstream, std::span<double> da, std::span<double> db) {
  if (upstream == 0.0) return;
  switch (kind) {
    case Similarity::Dot:
      if (!da.empty()) la::axpy(upstream, b, da);
      if (!db.empty()) la::axpy(upstream, a, db);
      return;
    case Similarity::Cosine: {
      const double na = la::norm(a), nb = la::norm(b);
      if (na == 0.0 || nb == 0.0) return;
      const double c = la::dot(a, b) / (na * nb);
      for (std::size_t j = 0; j < a.size(); ++j) {
        const double ah = a[j] / na, bh = b[j] / nb;
        if (!da.empty()) da[j] += upstream * (bh - c * ah) / na;
        if (!db.empty()) db[j] += upstream * (ah - c * bh) / nb;
      }
      return;
    }
    case Similarity::Euclidean: {
      const double dist = la::distance(a, b);
      if (dist == 0.0) return;
      for (std::size_t j = 0; j < a.size(); ++j) {
        const double g = (a[j] - b[j]) / dist;
        if (!da.empty()) da[j] -= upstream * g;
        if (!db.empty()) db[j] += upstream * g;
      }
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Feature maps

struct DenseLayer {
  Matrix weight;  ///< out x in
  Vector bias;

  bool operator==(const DenseLayer&) const = default;
};

/// Either the identity over input embeddings or a ReLU MLP. Every affine
/// layer, the last included, is followed by max(0, .).
class FeatureMap {
 public:
  /// Post-activation outputs of every layer, input first.
  struct Trace {
    std::vector<Vector> activations;
  };

  static FeatureMap frozen(std::size_t dim) {
    FeatureMap m;
    m.input_dim_ = m.output_dim_ = dim;
    return m;
  }

  /// He-initialized MLP with layer widths sizes[0] -> ... -> sizes.back().
  static FeatureMap mlp(const std::vector<std::size_t>& sizes, std::uint64_t seed) {
    if (sizes.size() < 2) throw Error(Errc::InvalidSpec, "an MLP needs at least input and output widths");
    FeatureMap m;
    m.input_dim_ = sizes.front();
    m.output_dim_ = sizes.back();
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      if (sizes[l] == 0 || sizes[l + 1] == 0) throw Error(Errc::InvalidSpec, "MLP widths must be positive");
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(sizes[l])));
      DenseLayer layer{Matrix(sizes[l + 1], sizes[l]), Vector(sizes[l + 1], 0.0)};
      for (double& w : layer.weight.data) w = normal(rng);
      m.layers_.push_back(std::move(layer));
    }
    return m;
  }

  static FeatureMap from_layers(std::vector<DenseLayer> layers) {
    if (layers.empty()) throw Error(Errc::InvalidSpec, "no layers");
    FeatureMap m;
    m.input_dim_ = layers.front().weight.cols;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& L = layers[l];
      if (L.bias.size() != L.weight.rows || (l > 0 && L.weight.cols != layers[l - 1].weight.rows))
        throw Error(Errc::ShapeMismatch, "layer " + std::to_string(l) + " shape does not chain");
    }
    m.output_dim_ = layers.back().weight.rows;
    m.layers_ = std::move(layers);
    return m;
  }

  bool is_frozen() const { return layers_.empty(); }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w{input_dim_};
    for (const auto& l : layers_) w.push_back(l.weight.rows);
    return w;
  }

  /// Sum over layers of in x out.
  std::uint64_t macs() const {
    std::uint64_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::uint64_t>(l.weight.rows) * l.weight.cols;
    return n;
  }

  Vector forward(std::span<const double> x) const {
    Trace t;
    return forward(x, t);
  }

  Vector forward(std::span<const double> x, Trace& trace) const {
    if (x.size() != input_dim_)
      throw Error(Errc::DimensionMismatch, "feature map expects " + std::to_string(input_dim_) + " inputs, got " +
                                               std::to_string(x.size()));
    trace.activations.assign(1, Vector(x.begin(), x.end()));
    for (const auto& layer : layers_) {
      const Vector& in = trace.activations.back();
      Vector out(layer.weight.rows);
      for (std::size_t o = 0; o < out.size(); ++o)
        out[o] = std::max(0.0, la::dot(layer.weight.row(o), in) + layer.bias[o]);
      trace.activations.push_back(std::move(out));
    }
    return trace.activations.back();
  }

  /// Backpropagates d loss / d output. Layer gradients are accumulated into
  /// grads (weight, bias per layer, matching params()) when non-empty.
  /// Returns d loss / d input.
  Vector backward(const Trace& trace, std::span<const double> dout, std::span<Vector> grads) const {
    Vector delta(dout.begin(), dout.end());
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const auto& layer = layers_[l];
      const Vector& in = trace.activations[l];
      const Vector& out = trace.activations[l + 1];
      for (std::size_t o = 0; o < delta.size(); ++o)
        if (out[o] <= 0.0) delta[o] = 0.0;
      Vector din(layer.weight.cols, 0.0);
      for (std::size_t o = 0; o < layer.weight.rows; ++o) {
        if (delta[o] == 0.0) continue;
        la::axpy(delta[o], layer.weight.row(o), din);
        if (!grads.empty()) {
          auto& gw = grads[2 * l];
          la::axpy(delta[o], in, std::span<double>(gw.data() + o * layer.weight.cols, layer.weight.cols));
          grads[2 * l + 1][o] += delta[o];
        }
      }
      delta = std::move(din);
    }
    return delta;
  }

  ParamViews params() {
    ParamViews v;
    for (auto& l : layers_) {
      v.emplace_back(l.weight.data);
      v.emplace_back(l.bias);
    }
    return v;
  }

  nlohmann::json to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : layers_)
      layers.push_back({{"in", l.weight.cols}, {"out", l.weight.rows}, {"weight", l.weight.data}, {"bias", l.bias}});
    return {{"input_dim", input_dim_}, {"layers", layers}};
  }

  static FeatureMap from_json(const nlohmann::json& j) {
    const auto& arr = j.at("layers");
    if (arr.empty()) return frozen(j.at("input_dim").get<std::size_t>());
    std::vector<DenseLayer> layers;
    for (const auto& l : arr) {
      DenseLayer d{Matrix(l.at("out").get<std::size_t>(), l.at("in").get<std::size_t>()), l.at("bias").get<Vector>()};
      d.weight.data = l.at("weight").get<Vector>();
      if (d.weight.data.size() != d.weight.rows * d.weight.cols)
        throw Error(Errc::Format, "feature map checkpoint has inconsistent shapes");
      layers.push_back(std::move(d));
    }
    return from_layers(std::move(layers));
  }

  bool operator==(const FeatureMap&) const = default;

 private:
  std::size_t input_dim_ = 0;
  std::size_t output_dim_ = 0;
  std::vector<DenseLayer> layers_;
};

/// Convenience wrapper matching the module operation.
inline Vector mlp_forward(const FeatureMap& map, std::span<const double> x) { return map.forward(x); }

// ---------------------------------------------------------------------------
// Known-class bookkeeping

/// Row index of each admitted class, in admission order.
class ClassIndex {
 public:
  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  const std::vector<ClassId>& ids() const { return ids_; }
  ClassId id(std::size_t row) const { return ids_[row]; }
  bool contains(ClassId c) const { return rows_.count(c) != 0; }

  std::optional<std::size_t> find(ClassId c) const {
    auto it = rows_.find(c);
    if (it == rows_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t add(ClassId c) {
    if (contains(c)) throw Error(Errc::DuplicateClass, "class " + std::to_string(c) + " already admitted");
    rows_[c] = ids_.size();
    ids_.push_back(c);
    return ids_.size() - 1;
  }

  bool operator==(const ClassIndex&) const = default;

 private:
  std::vector<ClassId> ids_;
  std::map<ClassId, std::size_t> rows_;
};

// ---------------------------------------------------------------------------
// Centroids

/// Running per-class sums and counts; optionally accumulates x / |x|.
class CentroidStore {
 public:
  CentroidStore() = default;
  CentroidStore(std::size_t dim, bool normalize_inputs) : dim_(dim), normalize_(normalize_inputs), sums_(0, dim) {}

  std::size_t dim() const { return dim_; }
  bool normalize_inputs() const { return normalize_; }
  const ClassIndex& index() const { return index_; }
  std::size_t size() const { return index_.size(); }
  std::uint64_t count(std::size_t row) const { return counts_[row]; }

  void admit(ClassId c) {
    index_.add(c);
    sums_.append_zero_row();
    counts_.push_back(0);
  }

  /// Adds one sample to class c, admitting the class if it is new.
  void update(ClassId c, std::span<const double> x) {
    if (x.size() != dim_) throw Error(Errc::DimensionMismatch, "centroid update dimension mismatch");
    if (!la::all_finite(x)) throw Error(Errc::InvalidSpec, "non-finite centroid input");
    double scale = 1.0;
    if (normalize_) {
      const double n = la::norm(x);
      if (n == 0.0) throw Error(Errc::ZeroNorm, "cannot normalize a zero vector");
      scale = 1.0 / n;
    }
    auto row = index_.find(c);
    if (!row) {
      admit(c);
      row = index_.size() - 1;
    }
    la::axpy(scale, x, sums_.row(*row));
    ++counts_[*row];
  }

  /// Mean of the row's samples; zero vector for an empty slot.
  Vector centroid(std::size_t row) const {
    Vector m(sums_.row(row).begin(), sums_.row(row).end());
    if (counts_[row] > 0)
      for (double& v : m) v /= static_cast<double>(counts_[row]);
    return m;
  }

  Matrix centroids() const {
    Matrix m(size(), dim_);
    for (std::size_t i = 0; i < size(); ++i) {
      const Vector c = centroid(i);
      std::copy(c.begin(), c.end(), m.row(i).begin());
    }
    return m;
  }

  nlohmann::json to_json() const {
    return {{"dim", dim_}, {"normalize_inputs", normalize_}, {"classes", index_.ids()},
            {"sums", sums_.data}, {"counts", counts_}};
  }

  static CentroidStore from_json(const nlohmann::json& j) {
    CentroidStore s(j.at("dim").get<std::size_t>(), j.at("normalize_inputs").get<bool>());
    const auto ids = j.at("classes").get<std::vector<ClassId>>();
    for (ClassId c : ids) s.admit(c);
    s.sums_.data = j.at("sums").get<Vector>();
    s.counts_ = j.at("counts").get<std::vector<std::uint64_t>>();
    if (s.sums_.data.size() != ids.size() * s.dim_ || s.counts_.size() != ids.size())
      throw Error(Errc::Format, "centroid checkpoint has inconsistent shapes");
    return s;
  }

  bool operator==(const CentroidStore&) const = default;

 private:
  std::size_t dim_ = 0;
  bool normalize_ = false;
  ClassIndex index_;
  Matrix sums_;
  std::vector<std::uint64_t> counts_;
};

inline void update_centroid(CentroidStore& store, ClassId c, std::span<const double> x) { store.update(c, x); }

// ---------------------------------------------------------------------------
// Heads. Every head exposes the same surface: admit, logits, backward over
// its own parameters plus the input feature, params, and representations
// (one vector per known class, used by distance-based OOD scoring).

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Nearest class mean: logits are similarities to the class means, so the
/// softmax is over negative distances for the Euclidean metric.
class NcmHead {
 public:
  NcmHead() = default;
  NcmHead(std::size_t dim, Similarity metric, bool normalize_inputs)
      : store_(dim, normalize_inputs), metric_(metric) {}

  const ClassIndex& index() const { return store_.index(); }
  CentroidStore& store() { return store_; }
  const CentroidStore& store() const { return store_; }
  Similarity metric() const { return metric_; }

  void admit(ClassId c) { store_.admit(c); }

  /// Empty slots score -inf.
  Vector logits(std::span<const double> f) const {
    Vector z(store_.size(), kNegInf);
    for (std::size_t i = 0; i < z.size(); ++i)
      if (store_.count(i) > 0) z[i] = similarity(metric_, store_.centroid(i), f);
    return z;
  }

  void backward(std::span<const double>, std::span<const double>, std::span<Vector>, std::span<double>) const {}
  ParamViews params() { return {}; }
  std::size_t param_count() const { return 0; }

  Matrix representations() const {
    Matrix m(0, store_.dim());
    for (std::size_t i = 0; i < store_.size(); ++i)
      if (store_.count(i) > 0) m.append_row(store_.centroid(i));
    return m;
  }

  nlohmann::json to_json() const {
    return {{"kind", "ncm"}, {"metric", to_string(metric_)}, {"store", store_.to_json()}};
  }
  static NcmHead from_json(const nlohmann::json& j) {
    NcmHead h;
    h.metric_ = similarity_from_string(j.at("metric").get<std::string>());
    h.store_ = CentroidStore::from_json(j.at("store"));
    return h;
  }

  bool operator==(const NcmHead&) const = default;

 private:
  CentroidStore store_;
  Similarity metric_ = Similarity::Euclidean;
};

/// P(y = i | x) = exp(sim(m_i, x)) / sum_j exp(sim(m_j, x)).
inline Vector ncm_predict(const CentroidStore& store, std::span<const double> x,
                          Similarity metric = Similarity::Euclidean) {
  bool any = false;
  Vector z(store.size(), kNegInf);
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store.count(i) == 0) continue;
    z[i] = similarity(metric, store.centroid(i), x);
    any = true;
  }
  if (!any) throw Error(Errc::NoClasses, "no class has a centroid");
  return la::softmax(z);
}

class LinearHead {
 public:
  LinearHead() = default;
  explicit LinearHead(std::size_t dim) : weight_(0, dim) {}

  const ClassIndex& index() const { return index_; }
  const Matrix& weight() const { return weight_; }
  Matrix& weight() { return weight_; }
  Vector& bias() { return bias_; }
  const Vector& bias() const { return bias_; }

  /// New rows start at zero so existing logits are untouched.
  void admit(ClassId c) {
    index_.add(c);
    weight_.append_zero_row();
    bias_.push_back(0.0);
  }

  Vector logits(std::span<const double> f) const {
    if (f.size() != weight_.cols) throw Error(Errc::DimensionMismatch, "linear head input dimension mismatch");
    Vector z(weight_.rows);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = la::dot(weight_.row(i), f) + bias_[i];
    return z;
  }

  /// grads = {dW, db}.
  void backward(std::span<const double> f, std::span<const double> dz, std::span<Vector> grads,
                std::span<double> df) const {
    for (std::size_t i = 0; i < weight_.rows; ++i) {
      if (dz[i] == 0.0) continue;
      la::axpy(dz[i], f, std::span<double>(grads[0].data() + i * weight_.cols, weight_.cols));
      grads[1][i] += dz[i];
      if (!df.empty()) la::axpy(dz[i], weight_.row(i), df);
    }
  }

  ParamViews params() { return {std::span<double>(weight_.data), std::span<double>(bias_)}; }
  std::size_t param_count() const { return 2; }

  Matrix representations() const { return weight_; }

  nlohmann::json to_json() const {
    return {{"kind", "linear"}, {"dim", weight_.cols}, {"classes", index_.ids()},
            {"weight", weight_.data}, {"bias", bias_}};
  }
  static LinearHead from_json(const nlohmann::json& j) {
    LinearHead h(j.at("dim").get<std::size_t>());
    for (ClassId c : j.at("classes").get<std::vector<ClassId>>()) h.admit(c);
    h.weight_.data = j.at("weight").get<Vector>();
    h.bias_ = j.at("bias").get<Vector>();
    if (h.weight_.data.size() != h.weight_.rows * h.weight_.cols || h.bias_.size() != h.weight_.rows)
      throw Error(Errc::Format, "linear head checkpoint has inconsistent shapes");
    return h;
  }

  bool operator==(const LinearHead&) const = default;

 private:
  ClassIndex index_;
  Matrix weight_;
  Vector bias_;
};

/// Cosine classifier with a learnable temperature:
/// logit_i = s * (W_i / |W_i|) . (x / |x|). Zero rows score 0.
class CosineHead {
 public:
  CosineHead() = default;
  CosineHead(std::size_t dim, double temperature) : weight_(0, dim), scale_{temperature} {
    if (!(temperature > 0.0)) throw Error(Errc::InvalidSpec, "cosine temperature must be positive");
  }

  const ClassIndex& index() const { return index_; }
  const Matrix& weight() const { return weight_; }
  Matrix& weight() { return weight_; }
  double temperature() const { return scale_[0]; }
  void set_temperature(double s) { scale_[0] = s; }

  void admit(ClassId c) {
    index_.add(c);
    weight_.append_zero_row();
  }

  void set_row(std::size_t row, std::span<const double> w) {
    if (w.size() != weight_.cols) throw Error(Errc::DimensionMismatch, "imprint dimension mismatch");
    std::copy(w.begin(), w.end(), weight_.row(row).begin());
  }

  Vector logits(std::span<const double> f) const {
    if (f.size() != weight_.cols) throw Error(Errc::DimensionMismatch, "cosine head input dimension mismatch");
    const double nf = la::norm(f);
    if (nf == 0.0) throw Error(Errc::ZeroNorm, "cosine scoring of a zero vector");
    Vector z(weight_.rows, 0.0);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double nw = la::norm(weight_.row(i));
      if (nw > 0.0) z[i] = scale_[0] * la::dot(weight_.row(i), f) / (nw * nf);
    }
    return z;
  }

  /// grads = {dW, ds}.
  void backward(std::span<const double> f, std::span<const double> dz, std::span<Vector> grads,
                std::span<double> df) const {
    const double s = scale_[0];
    for (std::size_t i = 0; i < weight_.rows; ++i) {
      if (dz[i] == 0.0) continue;
      auto w = weight_.row(i);
      if (la::norm(w) == 0.0) continue;
      grads[1][0] += dz[i] * la::cosine(w, f);
      similarity_backward(Similarity::Cosine, w, f, dz[i] * s,
                          std::span<double>(grads[0].data() + i * weight_.cols, weight_.cols), df);
    }
  }

  ParamViews params() { return {std::span<double>(weight_.data), std::span<double>(scale_)}; }
  std::size_t param_count() const { return 2; }

  Matrix representations() const { return weight_; }

  nlohmann::json to_json() const {
    return {{"kind", "cosine"}, {"dim", weight_.cols}, {"classes", index_.ids()},
            {"weight", weight_.data}, {"temperature", scale_[0]}};
  }
  static CosineHead from_json(const nlohmann::json& j) {
    CosineHead h(j.at("dim").get<std::size_t>(), j.at("temperature").get<double>());
    for (ClassId c : j.at("classes").get<std::vector<ClassId>>()) h.admit(c);
    h.weight_.data = j.at("weight").get<Vector>();
    if (h.weight_.data.size() != h.weight_.rows * h.weight_.cols)
      throw Error(Errc::Format, "cosine head checkpoint has inconsistent shapes");
    return h;
  }

  bool operator==(const CosineHead&) const = default;

 private:
  ClassIndex index_;
  Matrix weight_;
  Vector scale_{4.0};
};

inline Vector cosine_score(const CosineHead& head, std::span<const double> x) { return head.logits(x); }

/// Sets each head row to its class centroid. Every head class must have samples.
inline void imprint_weights(CosineHead& head, const CentroidStore& store) {
  for (std::size_t row = 0; row < head.index().size(); ++row) {
    const ClassId c = head.index().id(row);
    const auto srow = store.index().find(c);
    if (!srow || store.count(*srow) == 0)
      throw Error(Errc::EmptyInput, "class " + std::to_string(c) + " has no samples to imprint");
    head.set_row(row, store.centroid(*srow));
  }
}

/// Class representation C_i = mean_i(f / |f|) + r_i, scored against f with a
/// configurable similarity. The centroid term is fixed during backprop; only
/// the residuals (and the input feature) receive gradients.
class ExemplarTuningHead {
 public:
  ExemplarTuningHead() = default;
  ExemplarTuningHead(std::size_t dim, Similarity sim) : store_(dim, true), residuals_(0, dim), sim_(sim) {}

  const ClassIndex& index() const { return store_.index(); }
  CentroidStore& store() { return store_; }
  const CentroidStore& store() const { return store_; }
  const Matrix& residuals() const { return residuals_; }
  Matrix& residuals() { return residuals_; }
  Similarity similarity_kind() const { return sim_; }

  void admit(ClassId c) {
    store_.admit(c);
    residuals_.append_zero_row();
  }

  /// Centroid slot plus residual; empty slots have no representation.
  Vector representation(std::size_t row) const {
    Vector c = store_.centroid(row);
    la::axpy(1.0, residuals_.row(row), c);
    return c;
  }

  Vector logits(std::span<const double> f) const {
    if (f.size() != store_.dim()) throw Error(Errc::DimensionMismatch, "ET head input dimension mismatch");
    Vector z(store_.size(), kNegInf);
    for (std::size_t i = 0; i < z.size(); ++i)
      if (store_.count(i) > 0) z[i] = similarity(sim_, representation(i), f);
    return z;
  }

  /// grads = {dR}.
  void backward(std::span<const double> f, std::span<const double> dz, std::span<Vector> grads,
                std::span<double> df) const {
    for (std::size_t i = 0; i < store_.size(); ++i) {
      if (store_.count(i) == 0 || dz[i] == 0.0) continue;
      similarity_backward(sim_, representation(i), f, dz[i],
                          std::span<double>(grads[0].data() + i * store_.dim(), store_.dim()), df);
    }
  }

  ParamViews params() { return {std::span<double>(residuals_.data)}; }
  std::size_t param_count() const { return 1; }

  Matrix representations() const {
    Matrix m(0, store_.dim());
    for (std::size_t i = 0; i < store_.size(); ++i)
      if (store_.count(i) > 0) m.append_row(representation(i));
    return m;
  }

  nlohmann::json to_json() const {
    return {{"kind", "exemplar_tuning"}, {"similarity", to_string(sim_)}, {"store", store_.to_json()},
            {"residuals", residuals_.data}};
  }
  static ExemplarTuningHead from_json(const nlohmann::json& j) {
    ExemplarTuningHead h;
    h.sim_ = similarity_from_string(j.at("similarity").get<std::string>());
    h.store_ = CentroidStore::from_json(j.at("store"));
    h.residuals_ = Matrix(h.store_.size(), h.store_.dim());
    h.residuals_.data = j.at("residuals").get<Vector>();
    if (h.residuals_.data.size() != h.store_.size() * h.store_.dim())
      throw Error(Errc::Format, "ET checkpoint has inconsistent shapes");
    return h;
  }

  bool operator==(const ExemplarTuningHead&) const = default;

 private:
  CentroidStore store_;
  Matrix residuals_;
  Similarity sim_ = Similarity::Dot;
};

inline Vector et_score(const ExemplarTuningHead& head, std::span<const double> x) {
  if (head.index().empty()) throw Error(Errc::NoClasses, "ET head has no known classes");
  return head.logits(x);
}

}  // namespace fluid
