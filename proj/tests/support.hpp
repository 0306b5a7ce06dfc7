#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <unistd.h>

#include "fluid/fluid.hpp"

namespace testing_support {

using fluid::Vector;

inline Vector random_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Vector v(n);
  for (double& x : v) x = nd(rng);
  return v;
}

/// ||a - b|| / max(||a||, ||b||, tiny).
inline double relative_error(const Vector& a, const Vector& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

/// Central differences of f over every coordinate of the given tensors.
inline Vector numeric_gradient(const fluid::ParamViews& params, const std::function<double()>& f, double h = 1e-6) {
  Vector g;
  for (auto p : params)
    for (double& x : p) {
      const double orig = x;
      x = orig + h;
      const double up = f();
      x = orig - h;
      const double down = f();
      x = orig;
      g.push_back((up - down) / (2.0 * h));
    }
  return g;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("fluid_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Dataset with the given per-class samples; roles default to novel.
inline fluid::Dataset make_dataset(std::vector<fluid::Sample> samples, std::size_t dim, std::size_t classes,
                                   std::size_t pretrain_classes = 0) {
  std::vector<fluid::ClassRole> roles(classes, fluid::ClassRole::Novel);
  for (std::size_t c = 0; c < pretrain_classes; ++c) roles[c] = fluid::ClassRole::Pretrain;
  return fluid::Dataset(std::move(samples), dim, std::move(roles));
}

}  // namespace testing_support
