#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mtdon/graph.hpp"
#include "mtdon/tensor.hpp"

namespace mtdon {

/// Named parameter tensors with per-tensor trainable flags. Iteration is
/// lexicographic by name.
class ParamRegistry {
 public:
  void add(const std::string& name, Tensor value, bool trainable = true);
  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool is_trainable(const std::string& name) const;

  std::vector<std::string> names() const;
  std::set<std::string> trainable_names() const;
  std::size_t parameter_count() const;

  /// Sets the flag on exactly the listed names; throws listing any unknown
  /// name before changing anything.
  void set_trainable(const std::set<std::string>& names, bool flag);
  void set_all_trainable(bool flag);

  NamedTensors& values() { return values_; }
  const NamedTensors& values() const { return values_; }

  friend bool operator==(const ParamRegistry&, const ParamRegistry&) = default;

 private:
  NamedTensors values_;
  std::set<std::string> frozen_;
};

/// Dense stack. widths = [in, hidden..., out]; layers are named
/// <prefix>.h0 ... <prefix>.h{k-1} and <prefix>.out.
struct MlpConfig {
  std::vector<std::size_t> widths;
  Activation activation = Activation::leaky_relu();
  bool linear_output = true;
  double dropout = 0.0;  // after each hidden activation

  friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
};

/// Conv blocks (conv k x k, same padding, activation, 2x2 average pool)
/// followed by a dense head. Blocks are named <prefix>.conv{i}, dense layers
/// <prefix>.dense{j}.
struct CnnConfig {
  std::size_t in_channels = 2;
  std::size_t height = 33;
  std::size_t width = 33;
  std::size_t kernel = 3;
  std::vector<std::size_t> filters{16, 32, 64, 64};
  std::vector<Activation> conv_activations{Activation::tanh(), Activation::relu(), Activation::relu(),
                                           Activation::relu()};
  std::vector<std::size_t> dense{128, 128, 150};
  Activation dense_activation = Activation::leaky_relu();
  double dropout = 0.0;  // after each hidden dense activation

  /// Spatial extent after all blocks (floor pooling).
  std::pair<std::size_t, std::size_t> conv_output_extent() const;
  std::size_t flatten_width() const;

  friend bool operator==(const CnnConfig&, const CnnConfig&) = default;
};

void validate(const MlpConfig& cfg);
void validate(const CnnConfig& cfg);

/// Glorot-uniform weights, zero biases. Each tensor draws from its own
/// stream derived from (seed, name), so adding layers elsewhere never
/// perturbs existing ones.
void init_mlp(ParamRegistry& reg, const std::string& prefix, const MlpConfig& cfg, std::uint64_t seed);
void init_cnn(ParamRegistry& reg, const std::string& prefix, const CnnConfig& cfg, std::uint64_t seed);

/// Parameters bound into one graph.
using ParamBinding = std::map<std::string, Var>;

ParamBinding bind_params(Graph& g, const ParamRegistry& reg);

/// Forward context: graph, bound parameters, and the dropout stream.
struct NetContext {
  Graph& graph;
  const ParamBinding& params;
  bool training = false;
  std::mt19937_64* rng = nullptr;
};

Var dense_forward(NetContext& ctx, const std::string& layer, Var x, const Activation& act);
Var mlp_forward(NetContext& ctx, const std::string& prefix, const MlpConfig& cfg, Var x);
/// image: [N, C, H, W] -> [N, dense.back()]
Var cnn_branch_forward(NetContext& ctx, const std::string& prefix, const CnnConfig& cfg, Var image);

}  // namespace mtdon
