#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "mtdon/graph.hpp"
#include "mtdon/nn.hpp"

namespace mtdon::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("mtdon_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// Builds a scalar loss from a registry on a fresh graph.
using LossBuilder = std::function<Var(Graph&, const ParamBinding&)>;

struct GradCheck {
  double worst = 0.0;  // max relative error over every parameter entry
  std::string where;
  std::size_t entries = 0;
};

/// Autodiff vs central differences, entry by entry. Relative error uses
/// max(|fd|, |ad|, floor) as the denominator so exact zeros compare sanely.
inline GradCheck check_gradients(const ParamRegistry& reg, const LossBuilder& build, double h = 1e-5,
                                 double floor = 1e-6) {
  Graph g;
  const ParamBinding bound = bind_params(g, reg);
  g.backward(build(g, bound));
  const NamedTensors grads = g.gradients();

  GradCheck out;
  ParamRegistry probe = reg;
  auto eval = [&] {
    Graph g2;
    const ParamBinding b2 = bind_params(g2, probe);
    return g2.value(build(g2, b2)).item();
  };
  for (const auto& name : reg.names()) {
    Tensor& p = probe.get(name);
    const Tensor& ad = grads.at(name);
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double keep = p[k];
      p[k] = keep + h;
      const double up = eval();
      p[k] = keep - h;
      const double down = eval();
      p[k] = keep;
      const double fd = (up - down) / (2 * h);
      const double rel = std::abs(fd - ad[k]) / std::max({std::abs(fd), std::abs(ad[k]), floor});
      if (rel > out.worst) {
        out.worst = rel;
        out.where = name + "[" + std::to_string(k) + "]";
      }
      ++out.entries;
    }
  }
  return out;
}

}  // namespace mtdon::testing
