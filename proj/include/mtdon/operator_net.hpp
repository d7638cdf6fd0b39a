#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mtdon/dataset.hpp"
#include "mtdon/graph.hpp"
#include "mtdon/nn.hpp"
#include "mtdon/optim.hpp"

namespace mtdon {

enum class BranchKind { Mlp, Cnn };

/// How a [K; M] grid reaches a CNN branch: both channels, or K * M alone.
enum class GridEncoding { Concat, Product };

struct OperatorArch {
  BranchKind branch_kind = BranchKind::Mlp;
  MlpConfig branch_mlp;
  CnnConfig branch_cnn;
  MlpConfig trunk;
  bool masked = false;  // output multiplied by the geometry mask
  GridEncoding encoding = GridEncoding::Concat;

  std::size_t latent() const;
  friend bool operator==(const OperatorArch&, const OperatorArch&) = default;
};

void validate(const OperatorArch& arch);

OperatorArch fisher_arch(std::size_t branch_width = 68, std::size_t latent = 300);
OperatorArch darcy_arch(std::size_t height = 33, std::size_t width = 33, std::size_t latent = 150);
OperatorArch heat_arch(std::size_t latent = 200);

/// Branch parameters live under "branch.", trunk under "trunk.".
struct OperatorModel {
  OperatorArch arch;
  ParamRegistry params;

  static OperatorModel create(const OperatorArch& arch, std::uint64_t seed);
};

/// field[n, q] = sum_i b_i(n) tr_i(q), recorded on ctx.graph.
Var forward(NetContext& ctx, const OperatorModel& model, Var branch_in, Var trunk);

/// Inference-mode forward (no dropout). branch_in [N x ...], trunk [Q x D].
Tensor predict(const OperatorModel& model, const Tensor& branch_in, const Tensor& trunk);
/// predict followed by the mask: mask [N x Q], or [Q] shared by all rows.
Tensor predict_masked(const OperatorModel& model, const Tensor& branch_in, const Tensor& trunk, const Tensor& mask);

/// Mean squared error plus l2 * sum of squared trainable weights (".W").
Var loss(Graph& g, Var pred, Var target, const ParamBinding& params, const ParamRegistry& reg, double l2);
double loss_value(const Tensor& pred, const Tensor& target, const ParamRegistry& reg, double l2);

double rel_l2(std::span<const double> pred, std::span<const double> ref);

/// Dataset converted to model inputs: normalized and encoded branch, trunk,
/// normalized targets (zeroed outside the mask for masked models), plus the
/// physical targets used for evaluation.
struct PreparedData {
  Tensor branch;
  Tensor trunk;
  Tensor target;    // normalized
  Tensor physical;  // original units
  std::vector<std::uint8_t> masks;
  std::vector<std::int32_t> mask_index;
  NormStats target_norm;
  bool masked = false;
  std::vector<std::size_t> train_rows, test_rows;

  std::size_t num_points() const { return trunk.dim(0); }
  /// Mask rows for the given samples as [n x Q] of 0/1.
  Tensor mask_rows(std::span<const std::size_t> rows) const;
};

/// Uses the given stats (e.g. a source checkpoint's) instead of the dataset's.
PreparedData prepare(const Dataset& d, const OperatorArch& arch, const NormStats& branch_norm,
                     const NormStats& target_norm);
PreparedData prepare(const Dataset& d, const OperatorArch& arch);

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows);

/// Physical-unit predictions [rows x Q]; masked models give exactly 0 outside.
Tensor predict_physical(const OperatorModel& model, const PreparedData& data, std::span<const std::size_t> rows);
/// Per-sample relative L2 errors in physical units.
std::vector<double> per_sample_rel_l2(const OperatorModel& model, const PreparedData& data,
                                      std::span<const std::size_t> rows);
double evaluate(const OperatorModel& model, const PreparedData& data, std::span<const std::size_t> rows);

struct TrainConfig {
  std::int64_t epochs = 1000;
  std::size_t batch_size = 0;  // 0: full batch
  LrSchedule schedule = LrSchedule::constant(1e-3);
  double l2 = 0.0;
  std::uint64_t seed = 0;
  std::int64_t eval_every = 100;
};

void validate(const TrainConfig& cfg);

struct HistoryRow {
  std::int64_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double test_rel_l2 = 0.0;
};

using History = std::vector<HistoryRow>;

/// Adam over shuffled minibatches; rows are recorded at epoch 0, every
/// eval_every epochs and the last epoch. Throws on a non-finite loss.
History train(OperatorModel& model, const PreparedData& data, const TrainConfig& cfg,
              std::span<const std::size_t> train_rows, std::span<const std::size_t> eval_rows,
              AdamState* state = nullptr);
History train(OperatorModel& model, const PreparedData& data, const TrainConfig& cfg, AdamState* state = nullptr);

}  // namespace mtdon
