#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "mtdon/tensor.hpp"

namespace mtdon {

/// C(x, x') = variance * exp(-|x - x'|^2 / length^2)
struct SqExpKernel {
  double length = 0.4;
  double variance = 2.0;
};

void validate(const SqExpKernel& k);

/// Points stored row-major, `dim` coordinates each.
struct PointSet {
  std::size_t dim = 1;
  std::vector<double> coords;

  std::size_t size() const { return dim == 0 ? 0 : coords.size() / dim; }
  std::span<const double> point(std::size_t i) const { return {coords.data() + i * dim, dim}; }

  static PointSet linspace(double lo, double hi, std::size_t n);
};

double kernel_value(const SqExpKernel& k, std::span<const double> a, std::span<const double> b);
Eigen::MatrixXd kernel_matrix(const SqExpKernel& k, const PointSet& points);

/// Leading eigenpairs, eigenvalues non-increasing, eigenvectors as columns.
struct KleBasis {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
};

/// Top-r eigenpairs of a symmetric matrix by cyclic Jacobi rotation.
/// Converged when the off-diagonal Frobenius norm drops below 1e-12 ||C||_F;
/// throws after 100 sweeps. Round-off negatives down to -1e-10 (relative to
/// the largest eigenvalue magnitude) are clamped to zero.
KleBasis kle_decompose(const Eigen::MatrixXd& c, std::size_t r);

/// Smallest r whose leading eigenvalues cover `fraction` of the total.
std::size_t truncation_order(const Eigen::VectorXd& values, double fraction);

struct MeanFunction {
  enum class Kind { Constant, OffsetSine };
  Kind kind = Kind::Constant;
  double offset = 0.0;
  double amplitude = 0.0;  // OffsetSine: offset + amplitude * sin(pi * x0)

  static MeanFunction constant(double c) { return {Kind::Constant, c, 0.0}; }
  static MeanFunction offset_sine(double offset, double amplitude) { return {Kind::OffsetSine, offset, amplitude}; }
  double operator()(std::span<const double> x) const;
};

struct GrfSpec {
  MeanFunction mean;
  SqExpKernel kernel;
  PointSet points;
  std::size_t order = 0;          // 0: pick by trace_fraction
  double trace_fraction = 0.999;
};

/// Truncated Karhunen-Loeve sampler: mean + sum_i sqrt(lambda_i) phi_i xi_i.
class GrfSampler {
 public:
  explicit GrfSampler(const GrfSpec& spec);

  std::size_t order() const { return static_cast<std::size_t>(scaled_.cols()); }
  const KleBasis& basis() const { return basis_; }
  const std::vector<double>& mean_values() const { return mean_; }

  /// Field for stream `index` of `base_seed`; xi drawn by Box-Muller.
  std::vector<double> sample(std::uint64_t base_seed, std::uint64_t index) const;
  std::vector<double> sample_with(std::span<const double> xi) const;

 private:
  KleBasis basis_;
  Eigen::MatrixXd scaled_;  // phi_i * sqrt(lambda_i)
  std::vector<double> mean_;
};

std::vector<double> sample_grf(const GrfSpec& spec, std::uint64_t seed);

/// Draws `count` standard normals from stream `index` of `base_seed`.
std::vector<double> standard_normals(std::uint64_t base_seed, std::uint64_t index, std::size_t count);

/// Squared-exponential field on a tensor grid xs x ys. The kernel factorizes
/// over axes, so eigenpairs are products of the two 1D decompositions; this
/// keeps 100x100 grids tractable. Output is row-major over (x index, y index).
class SeparableGridGrf {
 public:
  SeparableGridGrf(const SqExpKernel& kernel, std::vector<double> xs, std::vector<double> ys, MeanFunction mean,
                   double trace_fraction = 0.999);

  std::size_t order() const { return pairs_.size(); }
  /// Retained eigenvalues of the full 2D covariance, non-increasing.
  std::vector<double> eigenvalues() const;
  /// Full-grid eigenvector k (row-major over the grid).
  std::vector<double> eigenvector(std::size_t k) const;

  std::vector<double> sample(std::uint64_t base_seed, std::uint64_t index) const;

 private:
  struct Pair {
    double value;
    Eigen::Index ix, iy;
  };
  std::vector<double> xs_, ys_;
  MeanFunction mean_;
  double variance_;
  KleBasis bx_, by_;
  std::vector<Pair> pairs_;
};

enum class NormKind { Standardize, MinMax };
enum class NormDirection { Forward, Inverse };

/// Per-feature affine scaling. Standardize: a = mean, b = std.
/// MinMax: a = min, b = max. A single feature broadcasts to everything.
struct NormStats {
  NormKind kind = NormKind::Standardize;
  std::vector<double> a{0.0};
  std::vector<double> b{1.0};

  std::size_t features() const { return a.size(); }
  static NormStats identity(std::size_t features = 1);

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

void validate(const NormStats& s);

/// Applies the scaling along axis 1 of [N x F x ...] data, or uniformly when
/// the stats have one feature.
Tensor normalize(const Tensor& data, const NormStats& stats, NormDirection direction);
void normalize_inplace(Tensor& data, const NormStats& stats, NormDirection direction);

/// Fits stats over the given sample rows (axis 0). Features listed in
/// `identity_features` get a = 0, b = 1 (or min 0 / max 1). A degenerate
/// feature (zero spread) keeps its location with unit spread.
NormStats fit_norm(NormKind kind, const Tensor& data, std::span<const std::size_t> rows, std::size_t features,
                   const std::vector<std::size_t>& identity_features = {});

}  // namespace mtdon
