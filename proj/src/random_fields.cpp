#include "mtdon/random_fields.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include "mtdon/rng.hpp"

namespace mtdon {

void validate(const SqExpKernel& k) {
  if (!(k.length > 0.0)) throw std::invalid_argument("kernel length must be > 0");
  if (!(k.variance > 0.0)) throw std::invalid_argument("kernel variance must be > 0");
}

PointSet PointSet::linspace(double lo, double hi, std::size_t n) {
  PointSet p;
  p.dim = 1;
  p.coords.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    p.coords[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return p;
}

double kernel_value(const SqExpKernel& k, std::span<const double> a, std::span<const double> b) {
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  return k.variance * std::exp(-d2 / (k.length * k.length));
}

Eigen::MatrixXd kernel_matrix(const SqExpKernel& k, const PointSet& points) {
  validate(k);
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd c(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    c(i, i) = k.variance;
    for (Eigen::Index j = 0; j < i; ++j)
      c(i, j) = c(j, i) = kernel_value(k, points.point(static_cast<std::size_t>(i)),
                                       points.point(static_cast<std::size_t>(j)));
  }
  return c;
}

KleBasis kle_decompose(const Eigen::MatrixXd& c, std::size_t r) {
  const Eigen::Index n = c.rows();
  if (c.cols() != n) throw std::invalid_argument("kle_decompose: matrix must be square");
  if (r == 0 || static_cast<Eigen::Index>(r) > n)
    throw std::invalid_argument("kle_decompose: order must lie in [1, " + std::to_string(n) + "]");

  Eigen::MatrixXd a = c;
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double target = 1e-12 * c.norm();
  auto off_norm = [&] {
    double s = 0.0;
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index i = 0; i < n; ++i)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  bool converged = false;
  for (int sweep = 0; sweep < 100 && !converged; ++sweep) {
    if (off_norm() <= target) {
      converged = true;
      break;
    }
    for (Eigen::Index p = 0; p < n - 1; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double cs = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * cs;
        // A <- J^T A J with the rotation acting on rows/columns p, q.
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = cs * akp - sn * akq;
          a(k, q) = sn * akp + cs * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = cs * apk - sn * aqk;
          a(q, k) = sn * apk + cs * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = cs * vkp - sn * vkq;
          v(k, q) = sn * vkp + cs * vkq;
        }
      }
  }
  if (!converged && off_norm() > target)
    throw std::runtime_error("kle_decompose: Jacobi iteration did not converge in 100 sweeps");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return a(i, i) > a(j, j); });

  double scale = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) scale = std::max(scale, std::abs(a(i, i)));
  const double clamp = -1e-10 * std::max(1.0, scale);

  KleBasis out;
  out.values.resize(static_cast<Eigen::Index>(r));
  out.vectors.resize(n, static_cast<Eigen::Index>(r));
  for (std::size_t k = 0; k < r; ++k) {
    double lam = a(order[k], order[k]);
    if (lam < 0.0 && lam >= clamp) lam = 0.0;
    out.values(static_cast<Eigen::Index>(k)) = lam;
    out.vectors.col(static_cast<Eigen::Index>(k)) = v.col(order[k]);
  }
  return out;
}

std::size_t truncation_order(const Eigen::VectorXd& values, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("trace fraction must lie in (0, 1]");
  double total = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i) total += std::max(0.0, values(i));
  if (total <= 0.0) return 1;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    acc += std::max(0.0, values(i));
    if (acc >= fraction * total) return static_cast<std::size_t>(i + 1);
  }
  return static_cast<std::size_t>(values.size());
}

double MeanFunction::operator()(std::span<const double> x) const {
  if (kind == Kind::Constant) return offset;
  return offset + amplitude * std::sin(std::numbers::pi * x[0]);
}

std::vector<double> standard_normals(std::uint64_t base_seed, std::uint64_t index, std::size_t count) {
  auto rng = stream_engine(base_seed, index);
  std::vector<double> xi(count);
  for (std::size_t i = 0; i < count; i += 2) {
    const auto [z0, z1] = normal_pair(rng);
    xi[i] = z0;
    if (i + 1 < count) xi[i + 1] = z1;
  }
  return xi;
}

GrfSampler::GrfSampler(const GrfSpec& spec) {
  validate(spec.kernel);
  const std::size_t n = spec.points.size();
  if (n == 0) throw std::invalid_argument("grf: no sample points");
  const Eigen::MatrixXd c = kernel_matrix(spec.kernel, spec.points);
  KleBasis full = kle_decompose(c, n);
  std::size_t r = spec.order == 0 ? truncation_order(full.values, spec.trace_fraction) : spec.order;
  if (r > n) throw std::invalid_argument("grf: truncation order exceeds number of points");
  basis_.values = full.values.head(static_cast<Eigen::Index>(r));
  basis_.vectors = full.vectors.leftCols(static_cast<Eigen::Index>(r));
  scaled_ = basis_.vectors;
  for (Eigen::Index k = 0; k < scaled_.cols(); ++k) scaled_.col(k) *= std::sqrt(std::max(0.0, basis_.values(k)));
  mean_.resize(n);
  for (std::size_t i = 0; i < n; ++i) mean_[i] = spec.mean(spec.points.point(i));
}

std::vector<double> GrfSampler::sample_with(std::span<const double> xi) const {
  if (xi.size() != order()) throw std::invalid_argument("grf: expected " + std::to_string(order()) + " variates");
  std::vector<double> out = mean_;
  for (Eigen::Index i = 0; i < scaled_.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index k = 0; k < scaled_.cols(); ++k) s += scaled_(i, k) * xi[static_cast<std::size_t>(k)];
    out[static_cast<std::size_t>(i)] += s;
  }
  return out;
}

std::vector<double> GrfSampler::sample(std::uint64_t base_seed, std::uint64_t index) const {
  return sample_with(standard_normals(base_seed, index, order()));
}

std::vector<double> sample_grf(const GrfSpec& spec, std::uint64_t seed) { return GrfSampler(spec).sample(seed, 0); }

SeparableGridGrf::SeparableGridGrf(const SqExpKernel& kernel, std::vector<double> xs, std::vector<double> ys,
                                   MeanFunction mean, double trace_fraction)
    : xs_(std::move(xs)), ys_(std::move(ys)), mean_(mean), variance_(kernel.variance) {
  validate(kernel);
  if (xs_.empty() || ys_.empty()) throw std::invalid_argument("grid grf: empty axis");
  const SqExpKernel unit{kernel.length, 1.0};
  auto axis_basis = [&](const std::vector<double>& pts) {
    PointSet p;
    p.dim = 1;
    p.coords = pts;
    return kle_decompose(kernel_matrix(unit, p), pts.size());
  };
  bx_ = axis_basis(xs_);
  by_ = axis_basis(ys_);

  std::vector<Pair> all;
  all.reserve(xs_.size() * ys_.size());
  for (Eigen::Index i = 0; i < bx_.values.size(); ++i)
    for (Eigen::Index j = 0; j < by_.values.size(); ++j)
      all.push_back({variance_ * std::max(0.0, bx_.values(i)) * std::max(0.0, by_.values(j)), i, j});
  std::stable_sort(all.begin(), all.end(), [](const Pair& a, const Pair& b) { return a.value > b.value; });
  Eigen::VectorXd vals(static_cast<Eigen::Index>(all.size()));
  for (std::size_t k = 0; k < all.size(); ++k) vals(static_cast<Eigen::Index>(k)) = all[k].value;
  const std::size_t r = truncation_order(vals, trace_fraction);
  pairs_.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(r));
}

std::vector<double> SeparableGridGrf::eigenvalues() const {
  std::vector<double> out;
  for (const auto& p : pairs_) out.push_back(p.value);
  return out;
}

std::vector<double> SeparableGridGrf::eigenvector(std::size_t k) const {
  const Pair& p = pairs_.at(k);
  std::vector<double> out(xs_.size() * ys_.size());
  for (std::size_t i = 0; i < xs_.size(); ++i)
    for (std::size_t j = 0; j < ys_.size(); ++j)
      out[i * ys_.size() + j] =
          bx_.vectors(static_cast<Eigen::Index>(i), p.ix) * by_.vectors(static_cast<Eigen::Index>(j), p.iy);
  return out;
}

std::vector<double> SeparableGridGrf::sample(std::uint64_t base_seed, std::uint64_t index) const {
  const std::vector<double> xi = standard_normals(base_seed, index, pairs_.size());
  // field = Phi_x * Z * Phi_y^T with Z holding sqrt(lambda) xi on retained pairs.
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(bx_.vectors.cols(), by_.vectors.cols());
  for (std::size_t k = 0; k < pairs_.size(); ++k) z(pairs_[k].ix, pairs_[k].iy) = std::sqrt(pairs_[k].value) * xi[k];
  const Eigen::MatrixXd f = bx_.vectors * z * by_.vectors.transpose();
  std::vector<double> out(xs_.size() * ys_.size());
  for (std::size_t i = 0; i < xs_.size(); ++i)
    for (std::size_t j = 0; j < ys_.size(); ++j) {
      const double pt[2] = {xs_[i], ys_[j]};
      out[i * ys_.size() + j] = mean_(pt) + f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  return out;
}

NormStats NormStats::identity(std::size_t features) {
  NormStats s;
  s.kind = NormKind::Standardize;
  s.a.assign(features, 0.0);
  s.b.assign(features, 1.0);
  return s;
}

void validate(const NormStats& s) {
  if (s.a.empty() || s.a.size() != s.b.size()) throw std::invalid_argument("norm stats: mismatched feature vectors");
  for (std::size_t i = 0; i < s.a.size(); ++i) {
    if (s.kind == NormKind::Standardize && !(s.b[i] > 0.0))
      throw std::invalid_argument("norm stats: sigma must be > 0 (feature " + std::to_string(i) + ")");
    if (s.kind == NormKind::MinMax && !(s.b[i] > s.a[i]))
      throw std::invalid_argument("norm stats: max must exceed min (feature " + std::to_string(i) + ")");
  }
}

void normalize_inplace(Tensor& data, const NormStats& stats, NormDirection direction) {
  validate(stats);
  const std::size_t f = stats.features();
  std::size_t inner = data.size();
  if (f > 1) {
    if (data.rank() < 2 || data.dim(1) != f)
      throw ShapeError("normalize: " + std::to_string(f) + " features do not match axis 1 of " +
                       to_string(data.shape()));
    inner = 1;
    for (std::size_t d = 2; d < data.rank(); ++d) inner *= data.dim(d);
  }
  std::vector<double> shift(f), spread(f);
  for (std::size_t i = 0; i < f; ++i) {
    shift[i] = stats.a[i];
    spread[i] = stats.kind == NormKind::Standardize ? stats.b[i] : stats.b[i] - stats.a[i];
  }
  auto d = data.data();
  for (std::size_t p = 0; p < d.size(); ++p) {
    const std::size_t k = f == 1 ? 0 : (p / inner) % f;
    d[p] = direction == NormDirection::Forward ? (d[p] - shift[k]) / spread[k] : d[p] * spread[k] + shift[k];
  }
}

Tensor normalize(const Tensor& data, const NormStats& stats, NormDirection direction) {
  Tensor out = data;
  normalize_inplace(out, stats, direction);
  return out;
}

NormStats fit_norm(NormKind kind, const Tensor& data, std::span<const std::size_t> rows, std::size_t features,
                   const std::vector<std::size_t>& identity_features) {
  if (rows.empty()) throw std::invalid_argument("fit_norm: no rows");
  if (features == 0) throw std::invalid_argument("fit_norm: zero features");
  const std::size_t row = data.size() / data.dim(0);
  if (features > 1 && (data.rank() < 2 || data.dim(1) != features))
    throw ShapeError("fit_norm: " + std::to_string(features) + " features do not match " + to_string(data.shape()));
  const std::size_t inner = row / features;

  NormStats s;
  s.kind = kind;
  s.a.assign(features, 0.0);
  s.b.assign(features, 0.0);
  for (std::size_t k = 0; k < features; ++k) {
    const bool ident = std::find(identity_features.begin(), identity_features.end(), k) != identity_features.end();
    if (ident) {
      s.a[k] = 0.0;
      s.b[k] = 1.0;
      continue;
    }
    double lo = INFINITY, hi = -INFINITY, sum = 0.0;
    std::size_t count = 0;
    for (auto r : rows) {
      const double* base = data.data().data() + r * row + k * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        lo = std::min(lo, base[i]);
        hi = std::max(hi, base[i]);
        sum += base[i];
        ++count;
      }
    }
    if (kind == NormKind::MinMax) {
      s.a[k] = lo;
      s.b[k] = hi > lo ? hi : lo + 1.0;
      continue;
    }
    const double mu = sum / static_cast<double>(count);
    double ss = 0.0;
    for (auto r : rows) {
      const double* base = data.data().data() + r * row + k * inner;
      for (std::size_t i = 0; i < inner; ++i) ss += (base[i] - mu) * (base[i] - mu);
    }
    const double sigma = std::sqrt(ss / static_cast<double>(count));
    s.a[k] = mu;
    s.b[k] = sigma > 0.0 ? sigma : 1.0;
  }
  return s;
}

}  // namespace mtdon
