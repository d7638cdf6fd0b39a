#include "mtdon/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "mtdon/rng.hpp"

namespace mtdon {

void ParamRegistry::add(const std::string& name, Tensor value, bool trainable) {
  if (!values_.emplace(name, std::move(value)).second)
    throw std::invalid_argument("parameter '" + name + "' registered twice");
  if (!trainable) frozen_.insert(name);
}

const Tensor& ParamRegistry::get(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamRegistry::get(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

bool ParamRegistry::is_trainable(const std::string& name) const {
  get(name);
  return frozen_.count(name) == 0;
}

std::vector<std::string> ParamRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& kv : values_) out.push_back(kv.first);
  return out;
}

std::set<std::string> ParamRegistry::trainable_names() const {
  std::set<std::string> out;
  for (const auto& kv : values_)
    if (!frozen_.count(kv.first)) out.insert(kv.first);
  return out;
}

std::size_t ParamRegistry::parameter_count() const {
  std::size_t n = 0;
  for (const auto& kv : values_) n += kv.second.size();
  return n;
}

void ParamRegistry::set_trainable(const std::set<std::string>& names, bool flag) {
  std::string unknown;
  for (const auto& n : names)
    if (!values_.count(n)) unknown += (unknown.empty() ? "" : ", ") + n;
  if (!unknown.empty()) throw std::invalid_argument("set_trainable: unknown parameter(s): " + unknown);
  for (const auto& n : names) {
    if (flag)
      frozen_.erase(n);
    else
      frozen_.insert(n);
  }
}

void ParamRegistry::set_all_trainable(bool flag) {
  frozen_.clear();
  if (!flag)
    for (const auto& kv : values_) frozen_.insert(kv.first);
}

std::pair<std::size_t, std::size_t> CnnConfig::conv_output_extent() const {
  std::size_t h = height, w = width;
  for (std::size_t i = 0; i < filters.size(); ++i) {
    h /= 2;
    w /= 2;
  }
  return {h, w};
}

std::size_t CnnConfig::flatten_width() const {
  const auto [h, w] = conv_output_extent();
  return filters.back() * h * w;
}

void validate(const MlpConfig& cfg) {
  if (cfg.widths.size() < 2) throw std::invalid_argument("mlp: need at least input and output widths");
  for (auto w : cfg.widths)
    if (w == 0) throw std::invalid_argument("mlp: layer widths must be positive");
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) throw std::invalid_argument("mlp: dropout must lie in [0, 1)");
  if (cfg.activation.kind == ActivationKind::LeakyReLU && !(cfg.activation.slope > 0.0))
    throw std::invalid_argument("mlp: leaky_relu slope must be > 0");
}

void validate(const CnnConfig& cfg) {
  if (cfg.in_channels == 0 || cfg.height == 0 || cfg.width == 0)
    throw std::invalid_argument("cnn: input channels and extents must be positive");
  if (cfg.kernel % 2 == 0) throw std::invalid_argument("cnn: kernel size must be odd");
  if (cfg.filters.empty() || cfg.dense.empty()) throw std::invalid_argument("cnn: need conv filters and dense widths");
  if (cfg.conv_activations.size() != cfg.filters.size())
    throw std::invalid_argument("cnn: one activation per conv block required");
  for (auto f : cfg.filters)
    if (f == 0) throw std::invalid_argument("cnn: filter counts must be positive");
  for (auto d : cfg.dense)
    if (d == 0) throw std::invalid_argument("cnn: dense widths must be positive");
  std::size_t h = cfg.height, w = cfg.width;
  for (std::size_t i = 0; i < cfg.filters.size(); ++i) {
    if (h < 2 || w < 2)
      throw std::invalid_argument("cnn: input " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width) +
                                  " is too small for " + std::to_string(cfg.filters.size()) + " pooling blocks");
    h /= 2;
    w /= 2;
  }
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) throw std::invalid_argument("cnn: dropout must lie in [0, 1)");
}

namespace {

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed, const std::string& name) {
  auto rng = stream_engine(seed, fnv1a(name));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = (2.0 * uniform01(rng) - 1.0) * limit;
  return t;
}

void add_dense(ParamRegistry& reg, const std::string& layer, std::size_t in, std::size_t out, std::uint64_t seed) {
  reg.add(layer + ".W", glorot({out, in}, in, out, seed, layer + ".W"));
  reg.add(layer + ".b", Tensor({out}, 0.0));
}

Var param(const NetContext& ctx, const std::string& name) {
  auto it = ctx.params.find(name);
  if (it == ctx.params.end()) throw std::out_of_range("forward: parameter '" + name + "' not bound");
  return it->second;
}

Var maybe_dropout(NetContext& ctx, Var x, double rate) {
  if (!ctx.training || rate == 0.0) return x;
  if (!ctx.rng) throw std::logic_error("dropout in training mode needs a random stream");
  return ctx.graph.dropout(x, rate, *ctx.rng);
}

}  // namespace

void init_mlp(ParamRegistry& reg, const std::string& prefix, const MlpConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  const std::size_t layers = cfg.widths.size() - 1;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::string name = prefix + (i + 1 == layers ? ".out" : ".h" + std::to_string(i));
    add_dense(reg, name, cfg.widths[i], cfg.widths[i + 1], seed);
  }
}

void init_cnn(ParamRegistry& reg, const std::string& prefix, const CnnConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  std::size_t in = cfg.in_channels;
  const std::size_t kk = cfg.kernel * cfg.kernel;
  for (std::size_t i = 0; i < cfg.filters.size(); ++i) {
    const std::string name = prefix + ".conv" + std::to_string(i);
    const std::size_t out = cfg.filters[i];
    reg.add(name + ".W", glorot({out, in, cfg.kernel, cfg.kernel}, in * kk, out * kk, seed, name + ".W"));
    reg.add(name + ".b", Tensor({out}, 0.0));
    in = out;
  }
  std::size_t width = cfg.flatten_width();
  for (std::size_t j = 0; j < cfg.dense.size(); ++j) {
    add_dense(reg, prefix + ".dense" + std::to_string(j), width, cfg.dense[j], seed);
    width = cfg.dense[j];
  }
}

ParamBinding bind_params(Graph& g, const ParamRegistry& reg) {
  ParamBinding out;
  for (const auto& [name, value] : reg.values()) out.emplace(name, g.parameter(name, value, reg.is_trainable(name)));
  return out;
}

Var dense_forward(NetContext& ctx, const std::string& layer, Var x, const Activation& act) {
  Graph& g = ctx.graph;
  Var y = g.add_bias(g.matmul(x, param(ctx, layer + ".W"), true), param(ctx, layer + ".b"), 1);
  return act.kind == ActivationKind::Identity ? y : g.activate(y, act);
}

Var mlp_forward(NetContext& ctx, const std::string& prefix, const MlpConfig& cfg, Var x) {
  const Tensor& xv = ctx.graph.value(x);
  if (xv.rank() != 2 || xv.dim(1) != cfg.widths.front())
    throw ShapeError("mlp_forward(" + prefix + "): input " + to_string(xv.shape()) + " but first layer expects width " +
                     std::to_string(cfg.widths.front()));
  const std::size_t layers = cfg.widths.size() - 1;
  for (std::size_t i = 0; i + 1 < layers; ++i) {
    x = dense_forward(ctx, prefix + ".h" + std::to_string(i), x, cfg.activation);
    x = maybe_dropout(ctx, x, cfg.dropout);
  }
  return dense_forward(ctx, prefix + ".out", x, cfg.linear_output ? Activation::identity() : cfg.activation);
}

Var cnn_branch_forward(NetContext& ctx, const std::string& prefix, const CnnConfig& cfg, Var image) {
  Graph& g = ctx.graph;
  const Tensor& iv = g.value(image);
  if (iv.rank() != 4 || iv.dim(1) != cfg.in_channels || iv.dim(2) != cfg.height || iv.dim(3) != cfg.width)
    throw ShapeError("cnn_branch_forward(" + prefix + "): input " + to_string(iv.shape()) + " but expected [N x " +
                     std::to_string(cfg.in_channels) + " x " + std::to_string(cfg.height) + " x " +
                     std::to_string(cfg.width) + "]");
  const std::size_t n = iv.dim(0);  // iv dangles once nodes are pushed
  Var x = image;
  for (std::size_t i = 0; i < cfg.filters.size(); ++i) {
    const std::string name = prefix + ".conv" + std::to_string(i);
    x = g.conv2d(x, param(ctx, name + ".W"), param(ctx, name + ".b"));
    if (cfg.conv_activations[i].kind != ActivationKind::Identity) x = g.activate(x, cfg.conv_activations[i]);
    x = g.avg_pool2(x);
  }
  x = g.reshape(x, {n, cfg.flatten_width()});
  for (std::size_t j = 0; j < cfg.dense.size(); ++j) {
    const bool last = j + 1 == cfg.dense.size();
    x = dense_forward(ctx, prefix + ".dense" + std::to_string(j), x,
                      last ? Activation::identity() : cfg.dense_activation);
    if (!last) x = maybe_dropout(ctx, x, cfg.dropout);
  }
  return x;
}

}  // namespace mtdon
