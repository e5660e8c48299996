#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "posefuse/aggregation.hpp"
#include "posefuse/features.hpp"
#include "posefuse/tensor.hpp"

namespace posefuse::testing {

/// Fresh directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("posefuse_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline Tensor random_tensor(const Shape3& shape, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

inline std::vector<Tensor> random_inputs(const std::vector<Shape3>& spec, std::mt19937_64& rng) {
  std::vector<Tensor> out;
  for (const auto& s : spec) out.push_back(random_tensor(s, rng));
  return out;
}

inline FeatureStack random_stack(const std::vector<Shape3>& spec, std::mt19937_64& rng) {
  FeatureStack stack;
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (std::size_t i = 0; i < spec.size(); ++i) {
    FeatureMap m(spec[i]);
    for (auto& v : m.storage()) v = u(rng);
    stack.layers.push_back({"layer" + std::to_string(i), std::move(m)});
  }
  return stack;
}

/// Randomizes every parameter, including those zero-initialized.
inline void randomize_parameters(AggregatorModel& model, std::mt19937_64& rng, double scale = 0.5) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& p : model.parameters()) {
    for (auto& v : p.value) v = u(rng);
  }
}

/// |a − b| / max(|a|, |b|, floor); the floor keeps near-zero gradients from dominating.
inline double relative_error(double a, double b, double floor = 1e-6) {
  const double scale = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / scale;
}

/// max_k |a_k − b_k| / max_k max(|a_k|, |b_k|): error relative to the gradient's scale,
/// so components far below it are not judged by finite-difference roundoff alone.
inline double vector_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff = std::max(diff, std::abs(a[k] - b[k]));
    scale = std::max({scale, std::abs(a[k]), std::abs(b[k])});
  }
  return scale == 0.0 ? diff : diff / scale;
}

struct GradCheck {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // parameter name or "input<i>" at the worst entry
};

/// Central finite differences of L = <upstream, forward(inputs)> against backward(), over
/// every parameter entry and every input entry.
inline GradCheck check_model_gradients(AggregatorModel& model, std::vector<Tensor> inputs,
                                       const Tensor& upstream, double step = 1e-5) {
  const auto loss = [&](const std::vector<Tensor>& x) {
    const Tensor out = model.forward(x);
    double l = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) l += upstream[k] * out[k];
    return l;
  };
  ForwardTrace trace;
  model.forward(inputs, &trace);
  Gradients grads = model.zero_gradients();
  std::vector<Tensor> input_grads;
  model.backward(trace, upstream, grads, &input_grads);

  GradCheck result;
  const auto record = [&](double analytic, double numeric, const std::string& what) {
    const double e = relative_error(analytic, numeric);
    ++result.checked;
    if (e > result.max_relative_error) {
      result.max_relative_error = e;
      result.worst = what;
    }
  };
  auto& params = model.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t k = 0; k < params[p].value.size(); ++k) {
      const double saved = params[p].value[k];
      params[p].value[k] = saved + step;
      const double up = loss(inputs);
      params[p].value[k] = saved - step;
      const double down = loss(inputs);
      params[p].value[k] = saved;
      record(grads[p][k], (up - down) / (2.0 * step), params[p].name);
    }
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double saved = inputs[i][k];
      inputs[i][k] = saved + step;
      const double up = loss(inputs);
      inputs[i][k] = saved - step;
      const double down = loss(inputs);
      inputs[i][k] = saved;
      record(input_grads[i][k], (up - down) / (2.0 * step), "input" + std::to_string(i));
    }
  }
  return result;
}

inline std::string read_bytes(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Relative path → file bytes for every regular file under `root`.
inline std::map<std::string, std::string> tree_bytes(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) {
      out[std::filesystem::relative(e.path(), root).generic_string()] = read_bytes(e.path());
    }
  }
  return out;
}

/// Restores the working directory on destruction.
class ScopedCwd {
 public:
  explicit ScopedCwd(const std::filesystem::path& dir) : saved_(std::filesystem::current_path()) {
    std::filesystem::current_path(dir);
  }
  ~ScopedCwd() { std::filesystem::current_path(saved_); }

 private:
  std::filesystem::path saved_;
};

}  // namespace posefuse::testing
