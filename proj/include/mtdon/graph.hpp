#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mtdon/tensor.hpp"

namespace mtdon {

enum class ActivationKind { Identity, Tanh, ReLU, LeakyReLU, Swish };

struct Activation {
  ActivationKind kind = ActivationKind::Identity;
  double slope = 0.01;  // LeakyReLU only

  static Activation identity() { return {}; }
  static Activation tanh() { return {ActivationKind::Tanh}; }
  static Activation relu() { return {ActivationKind::ReLU}; }
  static Activation leaky_relu(double slope = 0.01) { return {ActivationKind::LeakyReLU, slope}; }
  static Activation swish() { return {ActivationKind::Swish}; }

  friend bool operator==(const Activation&, const Activation&) = default;
};

double apply_activation(const Activation& act, double x);
std::string to_string(const Activation& act);
Activation activation_from_string(const std::string& name, double slope = 0.01);

/// Handle to a node of a Graph.
class Var {
 public:
  std::size_t id() const { return id_; }
  friend bool operator==(Var, Var) = default;

 private:
  friend class Graph;
  explicit Var(std::size_t id) : id_(id) {}
  std::size_t id_ = 0;
};

/// Define-by-run tape. Every primitive evaluates eagerly and records what
/// backward() needs; nodes are stored in creation order, so the tape is
/// topologically sorted by construction.
class Graph {
 public:
  /// Named leaf that never receives a gradient.
  Var input(std::string name, Tensor value);
  Var constant(Tensor value);
  /// Named leaf; when requires_grad is set, backward() produces its gradient.
  Var parameter(std::string name, Tensor value, bool requires_grad = true);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// a[m x k] * b[k x n], or a[m x k] * b[n x k]^T when transpose_b is set.
  Var matmul(Var a, Var b, bool transpose_b = false);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double factor);
  /// Adds bias[shape[axis]] broadcast over every other axis.
  Var add_bias(Var x, Var bias, std::size_t axis);
  Var activate(Var x, const Activation& act);
  /// Inverted dropout; identity when rate == 0.
  Var dropout(Var x, double rate, std::mt19937_64& rng);
  /// out = mask != 0 ? x : +0.0 (exact zeros, no sign or NaN leakage).
  Var mask_select(Var x, Var mask);
  /// x[N,C,H,W] (*) kernel[O,C,k,k] + bias[O]; stride 1, zero padding k/2, k odd.
  Var conv2d(Var x, Var kernel, Var bias);
  /// 2x2 average pooling with floor semantics on odd extents.
  Var avg_pool2(Var x);
  Var reshape(Var x, Shape shape);
  Var square(Var x);
  Var sum(Var x);
  Var mean(Var x);

  /// Reverse sweep from a scalar node. Previous gradients are discarded.
  void backward(Var loss);

  /// Gradients of every named parameter with requires_grad, shape-matched;
  /// parameters the loss does not depend on get zeros.
  NamedTensors gradients() const;

 private:
  enum class Op {
    Leaf, MatMul, Add, Sub, Mul, Scale, AddBias, Activate, Dropout,
    MaskSelect, Conv2d, AvgPool2, Reshape, Square, Sum, Mean
  };

  struct Node {
    Op op = Op::Leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool is_parameter = false;
    std::string name;
    double scalar = 0.0;
    std::size_t axis = 0;
    bool flag = false;
    Activation act;
    std::vector<double> aux;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  Tensor& grad_buffer(std::size_t id);
  void backward_node(std::size_t id);

  std::vector<Node> nodes_;
};

}  // namespace mtdon
