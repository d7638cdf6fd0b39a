#include "mtdon/graph.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

namespace mtdon {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

CMapMat cmap(const Tensor& t, std::size_t rows, std::size_t cols) {
  return CMapMat(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MapMat map(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMat(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double activation_derivative(const Activation& act, double x, double y) {
  switch (act.kind) {
    case ActivationKind::Identity: return 1.0;
    case ActivationKind::Tanh: return 1.0 - y * y;
    case ActivationKind::ReLU: return x > 0.0 ? 1.0 : 0.0;
    case ActivationKind::LeakyReLU: return x >= 0.0 ? 1.0 : act.slope;
    case ActivationKind::Swish: {
      const double s = sigmoid(x);
      return s + x * s * (1.0 - s);
    }
  }
  return 1.0;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                     " differ");
}

struct ConvGeom {
  std::size_t n, c, h, w, o, k;
  std::size_t hw() const { return h * w; }
  std::size_t ckk() const { return c * k * k; }
};

void im2col(const double* img, const ConvGeom& g, double* cols) {
  const long pad = static_cast<long>(g.k / 2);
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* row = cols + ((c * g.k + ki) * g.k + kj) * g.hw();
        const double* plane = img + c * g.hw();
        for (std::size_t y = 0; y < g.h; ++y) {
          const long iy = static_cast<long>(y + ki) - pad;
          for (std::size_t x = 0; x < g.w; ++x) {
            const long ix = static_cast<long>(x + kj) - pad;
            const bool inside = iy >= 0 && iy < static_cast<long>(g.h) && ix >= 0 && ix < static_cast<long>(g.w);
            row[y * g.w + x] = inside ? plane[iy * static_cast<long>(g.w) + ix] : 0.0;
          }
        }
      }
}

void col2im_add(const double* cols, const ConvGeom& g, double* img) {
  const long pad = static_cast<long>(g.k / 2);
  for (std::size_t c = 0; c < g.c; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* row = cols + ((c * g.k + ki) * g.k + kj) * g.hw();
        double* plane = img + c * g.hw();
        for (std::size_t y = 0; y < g.h; ++y) {
          const long iy = static_cast<long>(y + ki) - pad;
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t x = 0; x < g.w; ++x) {
            const long ix = static_cast<long>(x + kj) - pad;
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            plane[iy * static_cast<long>(g.w) + ix] += row[y * g.w + x];
          }
        }
      }
}

}  // namespace

double apply_activation(const Activation& act, double x) {
  switch (act.kind) {
    case ActivationKind::Identity: return x;
    case ActivationKind::Tanh: return std::tanh(x);
    case ActivationKind::ReLU: return x > 0.0 ? x : 0.0;
    case ActivationKind::LeakyReLU: return x >= 0.0 ? x : act.slope * x;
    case ActivationKind::Swish: return x * sigmoid(x);
  }
  return x;
}

std::string to_string(const Activation& act) {
  switch (act.kind) {
    case ActivationKind::Identity: return "identity";
    case ActivationKind::Tanh: return "tanh";
    case ActivationKind::ReLU: return "relu";
    case ActivationKind::LeakyReLU: return "leaky_relu";
    case ActivationKind::Swish: return "swish";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name, double slope) {
  if (name == "identity" || name == "linear") return Activation::identity();
  if (name == "tanh") return Activation::tanh();
  if (name == "relu") return Activation::relu();
  if (name == "leaky_relu") {
    if (!(slope > 0.0)) throw std::invalid_argument("leaky_relu slope must be > 0");
    return Activation::leaky_relu(slope);
  }
  if (name == "swish") return Activation::swish();
  throw std::invalid_argument("unknown activation '" + name + "'");
}

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(nodes_.size() - 1);
}

const Graph::Node& Graph::node(Var v) const {
  if (v.id() >= nodes_.size()) throw std::out_of_range("graph: unknown node id " + std::to_string(v.id()));
  return nodes_[v.id()];
}

const Tensor& Graph::value(Var v) const { return node(v).value; }
const Tensor& Graph::grad(Var v) const { return node(v).grad; }
bool Graph::requires_grad(Var v) const { return node(v).requires_grad; }

Var Graph::input(std::string name, Tensor value) {
  Node n;
  n.name = std::move(name);
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::constant(Tensor value) { return input({}, std::move(value)); }

Var Graph::parameter(std::string name, Tensor value, bool requires_grad) {
  Node n;
  n.name = std::move(name);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.is_parameter = true;
  return push(std::move(n));
}

Var Graph::matmul(Var a, Var b, bool transpose_b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rank() != 2 || bv.rank() != 2)
    throw ShapeError("matmul: operands must be matrices, got " + to_string(av.shape()) + " and " +
                     to_string(bv.shape()));
  const std::size_t m = av.dim(0), k = av.dim(1);
  const std::size_t kb = transpose_b ? bv.dim(1) : bv.dim(0);
  const std::size_t n = transpose_b ? bv.dim(0) : bv.dim(1);
  if (k != kb)
    throw ShapeError(std::string("matmul") + (transpose_b ? " (b transposed)" : "") + ": incompatible shapes " +
                     to_string(av.shape()) + " and " + to_string(bv.shape()));
  Node out;
  out.op = Op::MatMul;
  out.inputs = {a.id(), b.id()};
  out.flag = transpose_b;
  out.value = Tensor({m, n});
  auto c = map(out.value, m, n);
  if (transpose_b)
    c.noalias() = cmap(av, m, k) * cmap(bv, n, k).transpose();
  else
    c.noalias() = cmap(av, m, k) * cmap(bv, k, n);
  out.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(out));
}

Var Graph::add(Var a, Var b) {
  require_same("add", value(a), value(b));
  Node out;
  out.op = Op::Add;
  out.inputs = {a.id(), b.id()};
  out.value = value(a);
  const auto bd = value(b).data();
  auto od = out.value.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
  out.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(out));
}

Var Graph::sub(Var a, Var b) {
  require_same("sub", value(a), value(b));
  Node out;
  out.op = Op::Sub;
  out.inputs = {a.id(), b.id()};
  out.value = value(a);
  const auto bd = value(b).data();
  auto od = out.value.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] -= bd[i];
  out.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(out));
}

Var Graph::mul(Var a, Var b) {
  require_same("mul", value(a), value(b));
  Node out;
  out.op = Op::Mul;
  out.inputs = {a.id(), b.id()};
  out.value = value(a);
  const auto bd = value(b).data();
  auto od = out.value.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i];
  out.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(out));
}

Var Graph::scale(Var a, double factor) {
  Node out;
  out.op = Op::Scale;
  out.inputs = {a.id()};
  out.scalar = factor;
  out.value = value(a);
  for (auto& x : out.value.data()) x *= factor;
  out.requires_grad = node(a).requires_grad;
  return push(std::move(out));
}

Var Graph::add_bias(Var x, Var bias, std::size_t axis) {
  const Tensor& xv = value(x);
  const Tensor& bv = value(bias);
  if (axis >= xv.rank() || bv.rank() != 1 || bv.dim(0) != xv.dim(axis))
    throw ShapeError("add_bias: bias " + to_string(bv.shape()) + " does not match axis " + std::to_string(axis) +
                     " of " + to_string(xv.shape()));
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < xv.rank(); ++d) inner *= xv.dim(d);
  const std::size_t len = xv.dim(axis);
  Node out;
  out.op = Op::AddBias;
  out.inputs = {x.id(), bias.id()};
  out.axis = axis;
  out.value = xv;
  auto od = out.value.data();
  const auto bd = bv.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[(i / inner) % len];
  out.requires_grad = node(x).requires_grad || node(bias).requires_grad;
  return push(std::move(out));
}

Var Graph::activate(Var x, const Activation& act) {
  Node out;
  out.op = Op::Activate;
  out.inputs = {x.id()};
  out.act = act;
  out.value = value(x);
  for (auto& v : out.value.data()) v = apply_activation(act, v);
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

Var Graph::dropout(Var x, double rate, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  Node out;
  out.op = Op::Dropout;
  out.inputs = {x.id()};
  out.value = value(x);
  out.aux.assign(out.value.size(), 1.0);
  if (rate > 0.0) {
    const double keep_scale = 1.0 / (1.0 - rate);
    auto od = out.value.data();
    for (std::size_t i = 0; i < od.size(); ++i) {
      out.aux[i] = uniform01(rng) < rate ? 0.0 : keep_scale;
      od[i] *= out.aux[i];
    }
  }
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

Var Graph::mask_select(Var x, Var mask) {
  require_same("mask_select", value(x), value(mask));
  Node out;
  out.op = Op::MaskSelect;
  out.inputs = {x.id(), mask.id()};
  out.value = value(x);
  const auto md = value(mask).data();
  auto od = out.value.data();
  for (std::size_t i = 0; i < od.size(); ++i)
    if (md[i] == 0.0) od[i] = 0.0;
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

Var Graph::conv2d(Var x, Var kernel, Var bias) {
  const Tensor& xv = value(x);
  const Tensor& kv = value(kernel);
  const Tensor& bv = value(bias);
  if (xv.rank() != 4 || kv.rank() != 4 || kv.dim(1) != xv.dim(1) || kv.dim(2) != kv.dim(3) || kv.dim(2) % 2 == 0 ||
      bv.rank() != 1 || bv.dim(0) != kv.dim(0))
    throw ShapeError("conv2d: incompatible input " + to_string(xv.shape()) + ", kernel " + to_string(kv.shape()) +
                     ", bias " + to_string(bv.shape()));
  const ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), kv.dim(0), kv.dim(2)};
  Node out;
  out.op = Op::Conv2d;
  out.inputs = {x.id(), kernel.id(), bias.id()};
  out.value = Tensor({g.n, g.o, g.h, g.w});
  std::vector<double> cols(g.ckk() * g.hw());
  const auto kmat = cmap(kv, g.o, g.ckk());
  for (std::size_t s = 0; s < g.n; ++s) {
    im2col(xv.data().data() + s * g.c * g.hw(), g, cols.data());
    MapMat y(out.value.data().data() + s * g.o * g.hw(), static_cast<Eigen::Index>(g.o),
             static_cast<Eigen::Index>(g.hw()));
    y.noalias() = kmat * CMapMat(cols.data(), static_cast<Eigen::Index>(g.ckk()), static_cast<Eigen::Index>(g.hw()));
    for (std::size_t o = 0; o < g.o; ++o) y.row(static_cast<Eigen::Index>(o)).array() += bv[o];
  }
  out.requires_grad = node(x).requires_grad || node(kernel).requires_grad || node(bias).requires_grad;
  return push(std::move(out));
}

Var Graph::avg_pool2(Var x) {
  const Tensor& xv = value(x);
  if (xv.rank() != 4 || xv.dim(2) < 2 || xv.dim(3) < 2)
    throw ShapeError("avg_pool2: input " + to_string(xv.shape()) + " must be [N,C,H,W] with H,W >= 2");
  const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t ho = h / 2, wo = w / 2;
  Node out;
  out.op = Op::AvgPool2;
  out.inputs = {x.id()};
  out.value = Tensor({n, c, ho, wo});
  const auto xd = xv.data();
  auto od = out.value.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* in = xd.data() + p * h * w;
    double* o = od.data() + p * ho * wo;
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        const double* r0 = in + (2 * i) * w + 2 * j;
        const double* r1 = r0 + w;
        o[i * wo + j] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  }
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

Var Graph::reshape(Var x, Shape shape) {
  Node out;
  out.op = Op::Reshape;
  out.inputs = {x.id()};
  out.value = value(x).reshaped(std::move(shape));
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

Var Graph::square(Var x) {
  Node out;
  out.op = Op::Square;
  out.inputs = {x.id()};
  out.value = value(x);
  for (auto& v : out.value.data()) v *= v;
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

Var Graph::sum(Var x) {
  double s = 0.0;
  for (double v : value(x).data()) s += v;
  Node out;
  out.op = Op::Sum;
  out.inputs = {x.id()};
  out.value = Tensor::scalar(s);
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

Var Graph::mean(Var x) {
  double s = 0.0;
  const auto xd = value(x).data();
  for (double v : xd) s += v;
  Node out;
  out.op = Op::Mean;
  out.inputs = {x.id()};
  out.value = Tensor::scalar(s / static_cast<double>(xd.size()));
  out.requires_grad = node(x).requires_grad;
  return push(std::move(out));
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Graph::backward(Var loss) {
  const Node& ln = node(loss);
  if (ln.value.size() != 1)
    throw std::invalid_argument("backward: loss node has shape " + to_string(ln.value.shape()) +
                                ", expected a scalar");
  for (auto& n : nodes_) n.grad = Tensor();
  if (!ln.requires_grad) return;
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || n.op == Op::Leaf) continue;
    backward_node(id);
  }
}

void Graph::backward_node(std::size_t id) {
  // References into nodes_ stay valid: backward never appends nodes.
  Node& n = nodes_[id];
  const Tensor& g = n.grad;
  auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].requires_grad; };
  auto gd = g.data();

  switch (n.op) {
    case Op::Leaf: break;
    case Op::MatMul: {
      const Tensor& a = nodes_[n.inputs[0]].value;
      const Tensor& b = nodes_[n.inputs[1]].value;
      const std::size_t m = a.dim(0), k = a.dim(1), cols = g.dim(1);
      const auto gm = cmap(g, m, cols);
      if (wants(0)) {
        auto da = map(grad_buffer(n.inputs[0]), m, k);
        if (n.flag)
          da.noalias() += gm * cmap(b, cols, k);
        else
          da.noalias() += gm * cmap(b, k, cols).transpose();
      }
      if (wants(1)) {
        if (n.flag) {
          auto db = map(grad_buffer(n.inputs[1]), cols, k);
          db.noalias() += gm.transpose() * cmap(a, m, k);
        } else {
          auto db = map(grad_buffer(n.inputs[1]), k, cols);
          db.noalias() += cmap(a, m, k).transpose() * gm;
        }
      }
      break;
    }
    case Op::Add:
    case Op::Sub: {
      if (wants(0)) {
        auto da = grad_buffer(n.inputs[0]).data();
        for (std::size_t i = 0; i < gd.size(); ++i) da[i] += gd[i];
      }
      if (wants(1)) {
        auto db = grad_buffer(n.inputs[1]).data();
        const double sign = n.op == Op::Add ? 1.0 : -1.0;
        for (std::size_t i = 0; i < gd.size(); ++i) db[i] += sign * gd[i];
      }
      break;
    }
    case Op::Mul: {
      const auto av = nodes_[n.inputs[0]].value.data();
      const auto bv = nodes_[n.inputs[1]].value.data();
      if (wants(0)) {
        auto da = grad_buffer(n.inputs[0]).data();
        for (std::size_t i = 0; i < gd.size(); ++i) da[i] += gd[i] * bv[i];
      }
      if (wants(1)) {
        auto db = grad_buffer(n.inputs[1]).data();
        for (std::size_t i = 0; i < gd.size(); ++i) db[i] += gd[i] * av[i];
      }
      break;
    }
    case Op::Scale: {
      auto da = grad_buffer(n.inputs[0]).data();
      for (std::size_t i = 0; i < gd.size(); ++i) da[i] += n.scalar * gd[i];
      break;
    }
    case Op::AddBias: {
      if (wants(0)) {
        auto dx = grad_buffer(n.inputs[0]).data();
        for (std::size_t i = 0; i < gd.size(); ++i) dx[i] += gd[i];
      }
      if (wants(1)) {
        const Shape& xs = n.value.shape();
        std::size_t inner = 1;
        for (std::size_t d = n.axis + 1; d < xs.size(); ++d) inner *= xs[d];
        const std::size_t len = xs[n.axis];
        auto db = grad_buffer(n.inputs[1]).data();
        for (std::size_t i = 0; i < gd.size(); ++i) db[(i / inner) % len] += gd[i];
      }
      break;
    }
    case Op::Activate: {
      const auto xv = nodes_[n.inputs[0]].value.data();
      const auto yv = n.value.data();
      auto dx = grad_buffer(n.inputs[0]).data();
      for (std::size_t i = 0; i < gd.size(); ++i) dx[i] += gd[i] * activation_derivative(n.act, xv[i], yv[i]);
      break;
    }
    case Op::Dropout: {
      auto dx = grad_buffer(n.inputs[0]).data();
      for (std::size_t i = 0; i < gd.size(); ++i) dx[i] += gd[i] * n.aux[i];
      break;
    }
    case Op::MaskSelect: {
      const auto md = nodes_[n.inputs[1]].value.data();
      auto dx = grad_buffer(n.inputs[0]).data();
      for (std::size_t i = 0; i < gd.size(); ++i)
        if (md[i] != 0.0) dx[i] += gd[i];
      break;
    }
    case Op::Conv2d: {
      const Tensor& xv = nodes_[n.inputs[0]].value;
      const Tensor& kv = nodes_[n.inputs[1]].value;
      const ConvGeom cg{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), kv.dim(0), kv.dim(2)};
      const Eigen::Index o = static_cast<Eigen::Index>(cg.o), hw = static_cast<Eigen::Index>(cg.hw()),
                         ckk = static_cast<Eigen::Index>(cg.ckk());
      std::vector<double> cols(cg.ckk() * cg.hw());
      std::vector<double> dcols;
      if (wants(0)) dcols.resize(cols.size());
      for (std::size_t s = 0; s < cg.n; ++s) {
        CMapMat gy(gd.data() + s * cg.o * cg.hw(), o, hw);
        if (wants(2)) {
          auto db = grad_buffer(n.inputs[2]).data();
          for (Eigen::Index r = 0; r < o; ++r) db[static_cast<std::size_t>(r)] += gy.row(r).sum();
        }
        if (wants(1)) {
          im2col(xv.data().data() + s * cg.c * cg.hw(), cg, cols.data());
          auto dk = map(grad_buffer(n.inputs[1]), cg.o, cg.ckk());
          dk.noalias() += gy * CMapMat(cols.data(), ckk, hw).transpose();
        }
        if (wants(0)) {
          MapMat dc(dcols.data(), ckk, hw);
          dc.noalias() = cmap(kv, cg.o, cg.ckk()).transpose() * gy;
          col2im_add(dcols.data(), cg, grad_buffer(n.inputs[0]).data().data() + s * cg.c * cg.hw());
        }
      }
      break;
    }
    case Op::AvgPool2: {
      const Shape& xs = nodes_[n.inputs[0]].value.shape();
      const std::size_t h = xs[2], w = xs[3], ho = h / 2, wo = w / 2;
      auto dx = grad_buffer(n.inputs[0]).data();
      for (std::size_t p = 0; p < xs[0] * xs[1]; ++p) {
        double* d = dx.data() + p * h * w;
        const double* go = gd.data() + p * ho * wo;
        for (std::size_t i = 0; i < ho; ++i)
          for (std::size_t j = 0; j < wo; ++j) {
            const double q = 0.25 * go[i * wo + j];
            double* r0 = d + (2 * i) * w + 2 * j;
            r0[0] += q;
            r0[1] += q;
            r0[w] += q;
            r0[w + 1] += q;
          }
      }
      break;
    }
    case Op::Reshape: {
      auto dx = grad_buffer(n.inputs[0]).data();
      for (std::size_t i = 0; i < gd.size(); ++i) dx[i] += gd[i];
      break;
    }
    case Op::Square: {
      const auto xv = nodes_[n.inputs[0]].value.data();
      auto dx = grad_buffer(n.inputs[0]).data();
      for (std::size_t i = 0; i < gd.size(); ++i) dx[i] += 2.0 * xv[i] * gd[i];
      break;
    }
    case Op::Sum:
    case Op::Mean: {
      auto dx = grad_buffer(n.inputs[0]).data();
      const double s = n.op == Op::Sum ? gd[0] : gd[0] / static_cast<double>(dx.size());
      for (auto& v : dx) v += s;
      break;
    }
  }
}

NamedTensors Graph::gradients() const {
  NamedTensors out;
  for (const auto& n : nodes_) {
    if (!n.is_parameter || !n.requires_grad) continue;
    out[n.name] = n.grad.empty() ? Tensor(n.value.shape(), 0.0) : n.grad;
  }
  return out;
}

}  // namespace mtdon
