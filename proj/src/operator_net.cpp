#include "mtdon/operator_net.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mtdon/rng.hpp"

namespace mtdon {

std::size_t OperatorArch::latent() const { return trunk.widths.empty() ? 0 : trunk.widths.back(); }

void validate(const OperatorArch& arch) {
  validate(arch.trunk);
  std::size_t branch_out = 0;
  if (arch.branch_kind == BranchKind::Mlp) {
    validate(arch.branch_mlp);
    branch_out = arch.branch_mlp.widths.back();
  } else {
    validate(arch.branch_cnn);
    branch_out = arch.branch_cnn.dense.back();
    const std::size_t want = arch.encoding == GridEncoding::Concat ? 2 : 1;
    if (arch.branch_cnn.in_channels != want)
      throw std::invalid_argument("operator arch: encoding needs " + std::to_string(want) + " input channel(s), CNN has " +
                                  std::to_string(arch.branch_cnn.in_channels));
  }
  if (branch_out != arch.latent())
    throw std::invalid_argument("operator arch: branch output width " + std::to_string(branch_out) +
                                " != trunk output width " + std::to_string(arch.latent()));
}

OperatorArch fisher_arch(std::size_t branch_width, std::size_t latent) {
  OperatorArch a;
  a.branch_kind = BranchKind::Mlp;
  a.branch_mlp = {{branch_width, 128, 128, latent}, Activation::leaky_relu(), true, 0.0};
  a.trunk = {{2, 128, 128, 128, latent}, Activation::leaky_relu(), true, 0.0};
  a.masked = false;
  return a;
}

OperatorArch darcy_arch(std::size_t height, std::size_t width, std::size_t latent) {
  OperatorArch a;
  a.branch_kind = BranchKind::Cnn;
  a.branch_cnn.height = height;
  a.branch_cnn.width = width;
  a.branch_cnn.dense = {128, 128, latent};
  a.branch_cnn.dropout = 0.1;
  a.trunk = {{2, 128, 128, latent}, Activation::leaky_relu(), true, 0.0};
  a.masked = true;
  return a;
}

OperatorArch heat_arch(std::size_t latent) {
  OperatorArch a;
  a.branch_kind = BranchKind::Mlp;
  a.branch_mlp = {{2, 32, 64, 128, 128, latent}, Activation::swish(), true, 0.1};
  a.trunk = {{3, 32, 64, 64, 64, 128, 128, 128, 128, 128, latent}, Activation::swish(), true, 0.0};
  a.masked = true;
  return a;
}

OperatorModel OperatorModel::create(const OperatorArch& arch, std::uint64_t seed) {
  validate(arch);
  OperatorModel m;
  m.arch = arch;
  if (arch.branch_kind == BranchKind::Mlp)
    init_mlp(m.params, "branch", arch.branch_mlp, seed);
  else
    init_cnn(m.params, "branch", arch.branch_cnn, seed);
  init_mlp(m.params, "trunk", arch.trunk, seed);
  return m;
}

Var forward(NetContext& ctx, const OperatorModel& model, Var branch_in, Var trunk) {
  const auto& a = model.arch;
  Var b = a.branch_kind == BranchKind::Mlp ? mlp_forward(ctx, "branch", a.branch_mlp, branch_in)
                                           : cnn_branch_forward(ctx, "branch", a.branch_cnn, branch_in);
  Var t = mlp_forward(ctx, "trunk", a.trunk, trunk);
  return ctx.graph.matmul(b, t, true);
}

Tensor predict(const OperatorModel& model, const Tensor& branch_in, const Tensor& trunk) {
  Graph g;
  const ParamBinding p = bind_params(g, model.params);
  NetContext ctx{g, p, false, nullptr};
  return g.value(forward(ctx, model, g.input("branch", branch_in), g.input("trunk", trunk)));
}

Tensor predict_masked(const OperatorModel& model, const Tensor& branch_in, const Tensor& trunk, const Tensor& mask) {
  Tensor field = predict(model, branch_in, trunk);
  const std::size_t n = field.dim(0), q = field.dim(1);
  if (!(mask.size() == q || (mask.rank() == 2 && mask.dim(0) == n && mask.dim(1) == q)))
    throw ShapeError("predict_masked: mask " + to_string(mask.shape()) + " does not match field " +
                     to_string(field.shape()));
  for (double v : mask.data())
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("predict_masked: mask values must be 0 or 1");
  Graph g;
  Tensor full = mask.size() == q && n > 1 ? Tensor({n, q}) : mask.reshaped({n, q});
  if (mask.size() == q && n > 1)
    for (std::size_t r = 0; r < n; ++r) std::copy(mask.data().begin(), mask.data().end(), full.data().begin() + r * q);
  return g.value(g.mask_select(g.constant(std::move(field)), g.constant(std::move(full))));
}

Var loss(Graph& g, Var pred, Var target, const ParamBinding& params, const ParamRegistry& reg, double l2) {
  if (g.value(pred).shape() != g.value(target).shape())
    throw ShapeError("loss: prediction " + to_string(g.value(pred).shape()) + " vs target " +
                     to_string(g.value(target).shape()));
  Var total = g.mean(g.square(g.sub(pred, target)));
  if (l2 > 0.0)
    for (const auto& [name, var] : params) {
      if (name.size() < 2 || name.compare(name.size() - 2, 2, ".W") != 0 || !reg.is_trainable(name)) continue;
      total = g.add(total, g.scale(g.sum(g.square(var)), l2));
    }
  return total;
}

double loss_value(const Tensor& pred, const Tensor& target, const ParamRegistry& reg, double l2) {
  Graph g;
  const ParamBinding p = bind_params(g, reg);
  return g.value(loss(g, g.constant(pred), g.constant(target), p, reg, l2)).item();
}

double rel_l2(std::span<const double> pred, std::span<const double> ref) {
  if (pred.size() != ref.size())
    throw ShapeError("rel_l2: sizes " + std::to_string(pred.size()) + " and " + std::to_string(ref.size()));
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    num += (pred[i] - ref[i]) * (pred[i] - ref[i]);
    den += ref[i] * ref[i];
  }
  if (den == 0.0) throw std::invalid_argument("rel_l2: reference has zero norm");
  return std::sqrt(num) / std::sqrt(den);
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  Shape s = t.shape();
  const std::size_t row = t.size() / s[0];
  s[0] = rows.size();
  Tensor out(s);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= t.dim(0)) throw std::out_of_range("gather_rows: row " + std::to_string(rows[r]));
    std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(rows[r] * row), row,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * row));
  }
  return out;
}

Tensor PreparedData::mask_rows(std::span<const std::size_t> rows) const {
  const std::size_t q = num_points();
  Tensor out({rows.size(), q});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto g = static_cast<std::size_t>(mask_index.at(rows[r]));
    for (std::size_t p = 0; p < q; ++p) out[r * q + p] = masks[g * q + p];
  }
  return out;
}

PreparedData prepare(const Dataset& d, const OperatorArch& arch, const NormStats& branch_norm,
                     const NormStats& target_norm) {
  d.validate();
  validate(arch);
  PreparedData p;
  p.trunk = d.trunk;
  p.physical = d.target;
  p.target_norm = target_norm;
  p.masked = arch.masked;
  p.train_rows = d.rows(Split::Train);
  p.test_rows = d.rows(Split::Test);
  if (arch.masked && !d.has_masks()) throw std::invalid_argument("prepare: masked model needs a dataset with masks");
  p.masks = d.masks;
  p.mask_index = d.mask_index;

  p.branch = normalize(d.branch, branch_norm, NormDirection::Forward);
  if (arch.branch_kind == BranchKind::Cnn) {
    if (d.branch.rank() != 4) throw ShapeError("prepare: CNN branch needs [N x C x H x W], got " + to_string(d.branch.shape()));
    if (arch.encoding == GridEncoding::Product) {
      const std::size_t n = d.branch.dim(0), h = d.branch.dim(2), w = d.branch.dim(3);
      Tensor prod({n, 1, h, w});
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t k = 0; k < h * w; ++k)
          prod[s * h * w + k] = p.branch[s * 2 * h * w + k] * d.branch[s * 2 * h * w + h * w + k];
      p.branch = std::move(prod);
    }
  }
  p.target = normalize(d.target, target_norm, NormDirection::Forward);
  if (arch.masked) {
    const std::size_t q = d.num_points();
    for (std::size_t s = 0; s < d.num_samples(); ++s) {
      const auto m = d.mask_of(s);
      for (std::size_t k = 0; k < q; ++k)
        if (!m[k]) p.target[s * q + k] = 0.0;
    }
  }
  return p;
}

PreparedData prepare(const Dataset& d, const OperatorArch& arch) {
  return prepare(d, arch, d.branch_norm, d.target_norm);
}

namespace {

constexpr std::size_t kEvalChunk = 128;

}  // namespace

Tensor predict_physical(const OperatorModel& model, const PreparedData& data, std::span<const std::size_t> rows) {
  const std::size_t q = data.num_points();
  Tensor out({std::max<std::size_t>(rows.size(), 1), q});
  if (rows.empty()) return out;
  for (std::size_t start = 0; start < rows.size(); start += kEvalChunk) {
    const auto chunk = rows.subspan(start, std::min(kEvalChunk, rows.size() - start));
    Tensor field = predict(model, gather_rows(data.branch, chunk), data.trunk);
    normalize_inplace(field, data.target_norm, NormDirection::Inverse);
    if (data.masked) {
      const Tensor m = data.mask_rows(chunk);
      for (std::size_t k = 0; k < field.size(); ++k)
        if (m[k] == 0.0) field[k] = 0.0;
    }
    std::copy(field.data().begin(), field.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * q));
  }
  return out;
}

std::vector<double> per_sample_rel_l2(const OperatorModel& model, const PreparedData& data,
                                      std::span<const std::size_t> rows) {
  const std::size_t q = data.num_points();
  const Tensor pred = predict_physical(model, data, rows);
  std::vector<double> out;
  for (std::size_t r = 0; r < rows.size(); ++r)
    out.push_back(rel_l2(pred.data().subspan(r * q, q), data.physical.data().subspan(rows[r] * q, q)));
  return out;
}

double evaluate(const OperatorModel& model, const PreparedData& data, std::span<const std::size_t> rows) {
  if (rows.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto errs = per_sample_rel_l2(model, data, rows);
  double s = 0.0;
  for (double e : errs) s += e;
  return s / static_cast<double>(errs.size());
}

void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (cfg.eval_every < 1) throw std::invalid_argument("train: eval_every must be >= 1");
  if (!(cfg.l2 >= 0.0)) throw std::invalid_argument("train: l2 must be >= 0");
}

History train(OperatorModel& model, const PreparedData& data, const TrainConfig& cfg,
              std::span<const std::size_t> train_rows, std::span<const std::size_t> eval_rows, AdamState* state) {
  validate(cfg);
  if (train_rows.empty()) throw std::invalid_argument("train: no training samples");
  const std::size_t n = train_rows.size();
  const std::size_t batch = cfg.batch_size == 0 ? n : cfg.batch_size;
  if (batch > n)
    throw std::invalid_argument("train: batch size " + std::to_string(batch) + " exceeds " + std::to_string(n) +
                                " training samples");
  AdamState local;
  AdamState& adam = state ? *state : local;
  auto shuffle_rng = stream_engine(cfg.seed, fnv1a("shuffle"));
  auto dropout_rng = stream_engine(cfg.seed, fnv1a("dropout"));
  const bool any_trainable = !model.params.trainable_names().empty();

  std::vector<std::size_t> order(train_rows.begin(), train_rows.end());
  History history;
  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg.schedule, epoch);
    portable_shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(batch, n - start));
      Graph g;
      const ParamBinding p = bind_params(g, model.params);
      NetContext ctx{g, p, true, &dropout_rng};
      Var pred = forward(ctx, model, g.input("branch", gather_rows(data.branch, rows)), g.input("trunk", data.trunk));
      if (data.masked) pred = g.mask_select(pred, g.constant(data.mask_rows(rows)));
      Var l = loss(g, pred, g.constant(gather_rows(data.target, rows)), p, model.params, cfg.l2);
      const double lv = g.value(l).item();
      if (!std::isfinite(lv)) throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch));
      loss_sum += lv * static_cast<double>(rows.size());
      if (!any_trainable) continue;
      g.backward(l);
      adam_step(model.params.values(), g.gradients(), adam, lr);
    }
    if (epoch % cfg.eval_every == 0 || epoch + 1 == cfg.epochs)
      history.push_back({epoch, lr, loss_sum / static_cast<double>(n), evaluate(model, data, eval_rows)});
  }
  return history;
}

History train(OperatorModel& model, const PreparedData& data, const TrainConfig& cfg, AdamState* state) {
  return train(model, data, cfg, data.train_rows, data.test_rows, state);
}

}  // namespace mtdon
