#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>
#include <random>

#include "mtdon/random_fields.hpp"
#include "mtdon/rng.hpp"

using namespace mtdon;

namespace {

const std::vector<std::size_t> kAll{0, 1, 2};

}  // namespace

TEST_CASE("kernel matrix") {
  const SqExpKernel k{0.4, 2.0};
  const auto pts = PointSet::linspace(0, 1, 64);
  const Eigen::MatrixXd c = kernel_matrix(k, pts);
  CHECK(c.rows() == 64);
  for (int i = 0; i < 64; ++i) CHECK(c(i, i) == 2.0);
  CHECK((c - c.transpose()).cwiseAbs().maxCoeff() == 0.0);

  const PointSet near{1, {0.3, 0.3 + 1e-9}};
  CHECK(kernel_matrix(k, near)(0, 1) == doctest::Approx(2.0).epsilon(1e-12));
  const std::vector<double> a{0.1}, b{0.5};
  CHECK(kernel_value(k, a, b) == doctest::Approx(0.7357588823428847).epsilon(1e-12));

  // PSD up to round-off, checked with a library eigensolver
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10);

  CHECK_THROWS(validate(SqExpKernel{0.0, 1.0}));
  CHECK_THROWS(validate(SqExpKernel{1.0, -1.0}));
}

TEST_CASE("jacobi eigendecomposition") {
  SUBCASE("rank one") {
    Eigen::MatrixXd c(2, 2);
    c << 2, 2, 2, 2;
    const auto kb = kle_decompose(c, 2);
    CHECK(kb.values(0) == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(kb.values(1) == 0.0);  // clamped from round-off
  }
  SUBCASE("diagonal") {
    Eigen::MatrixXd c = Eigen::Vector2d(1, 3).asDiagonal();
    const auto kb = kle_decompose(c, 2);
    CHECK(kb.values(0) == 3.0);
    CHECK(kb.values(1) == 1.0);
    CHECK(std::abs(kb.vectors(1, 0)) == doctest::Approx(1.0));
    CHECK(kb.vectors(0, 0) == doctest::Approx(0.0));
  }
  SUBCASE("random SPD reconstruction") {
    std::mt19937_64 rng(21);
    Eigen::MatrixXd a(8, 8);
    for (int i = 0; i < 64; ++i) a(i / 8, i % 8) = 2 * uniform01(rng) - 1;
    const Eigen::MatrixXd c = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(8, 8);
    const auto kb = kle_decompose(c, 8);
    const Eigen::MatrixXd rec = kb.vectors * kb.values.asDiagonal() * kb.vectors.transpose();
    CHECK((rec - c).norm() < 1e-9);
    for (int i = 1; i < 8; ++i) CHECK(kb.values(i) <= kb.values(i - 1));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
    for (int i = 0; i < 8; ++i) CHECK(kb.values(i) == doctest::Approx(es.eigenvalues()(7 - i)).epsilon(1e-10));
    CHECK((kb.vectors.transpose() * kb.vectors - Eigen::MatrixXd::Identity(8, 8)).norm() < 1e-10);
  }
  SUBCASE("truncation keeps the leading pairs") {
    const auto c = kernel_matrix({0.4, 2.0}, PointSet::linspace(0, 1, 64));
    const auto kb = kle_decompose(c, 5);
    CHECK(kb.values.size() == 5);
    CHECK(kb.vectors.cols() == 5);
    for (int i = 1; i < 5; ++i) CHECK(kb.values(i) <= kb.values(i - 1));
  }
  CHECK_THROWS(kle_decompose(Eigen::MatrixXd::Identity(3, 3), 4));
  Eigen::MatrixXd asym(2, 2);
  asym << 1, 2, 0, 1;
  CHECK_THROWS(kle_decompose(asym, 2));
}

TEST_CASE("truncation order") {
  Eigen::VectorXd v(4);
  v << 5, 3, 1.5, 0.5;
  CHECK(truncation_order(v, 0.5) == 1);
  CHECK(truncation_order(v, 0.8) == 2);
  CHECK(truncation_order(v, 0.95) == 3);
  CHECK(truncation_order(v, 1.0) == 4);
}

TEST_CASE("grf sampling") {
  GrfSpec spec;
  spec.mean = MeanFunction::offset_sine(5.0, 0.1);
  spec.kernel = {0.4, 2.0};
  spec.points = PointSet::linspace(0, 1, 64);
  const GrfSampler s(spec);
  CHECK(s.order() >= 1);
  CHECK(s.order() < 64);

  const std::vector<double> half{0.5};
  CHECK(spec.mean(half) == doctest::Approx(5.1).epsilon(1e-15));
  const auto mean_only = s.sample_with(std::vector<double>(s.order(), 0.0));
  CHECK(mean_only == s.mean_values());
  CHECK(mean_only[0] == 5.0);

  CHECK(s.sample(7, 3) == s.sample(7, 3));
  CHECK_FALSE(s.sample(7, 3) == s.sample(7, 4));
  CHECK(sample_grf(spec, 9) == s.sample(9, 0));

  // Monte Carlo moments against the kernel
  const std::size_t n = 10000;
  const std::size_t i = 20, j = 26;  // |x_i - x_j| ~ 0.095
  double si = 0, sj = 0, sii = 0, sjj = 0, sij = 0;
  std::vector<double> var(64, 0.0), mu(64, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const auto f = s.sample(1234, k);
    si += f[i] - mean_only[i];
    sj += f[j] - mean_only[j];
    sii += (f[i] - mean_only[i]) * (f[i] - mean_only[i]);
    sjj += (f[j] - mean_only[j]) * (f[j] - mean_only[j]);
    sij += (f[i] - mean_only[i]) * (f[j] - mean_only[j]);
    if (k < 5000)
      for (std::size_t p = 0; p < 64; ++p) var[p] += (f[p] - mean_only[p]) * (f[p] - mean_only[p]) / 5000.0;
  }
  const auto c = kernel_matrix(spec.kernel, spec.points);
  const double cov = sij / n - (si / n) * (sj / n);
  CHECK(cov == doctest::Approx(c(i, j)).epsilon(0.10));
  CHECK(sii / n == doctest::Approx(2.0).epsilon(0.10));
  CHECK(sjj / n == doctest::Approx(2.0).epsilon(0.10));
  for (double v : var) CHECK(v == doctest::Approx(2.0).epsilon(0.10));
}

TEST_CASE("standard normals") {
  const auto z = standard_normals(5, 0, 20001);
  double m = 0, m2 = 0;
  for (double v : z) {
    m += v;
    m2 += v * v;
  }
  m /= double(z.size());
  m2 /= double(z.size());
  CHECK(std::abs(m) < 0.03);
  CHECK(m2 == doctest::Approx(1.0).epsilon(0.03));
  CHECK(standard_normals(5, 0, 3) == std::vector<double>(z.begin(), z.begin() + 3));
}

TEST_CASE("separable grid field matches the dense decomposition") {
  const std::vector<double> xs{0.0, 0.25, 0.5, 0.75, 1.0}, ys{0.0, 0.5, 1.0};
  const SqExpKernel k{0.5, 1.5};
  const SeparableGridGrf sep(k, xs, ys, MeanFunction::constant(0.0), 1.0);
  PointSet pts{2, {}};
  for (double x : xs)
    for (double y : ys) pts.coords.insert(pts.coords.end(), {x, y});
  const auto c = kernel_matrix(k, pts);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
  const auto ev = sep.eigenvalues();
  REQUIRE(ev.size() == 15);
  for (std::size_t i = 0; i < 15; ++i)
    CHECK(ev[i] == doctest::Approx(es.eigenvalues()(Eigen::Index(14 - i))).epsilon(1e-9).scale(1e-9));
  // each eigenvector satisfies C v = lambda v
  for (std::size_t i = 0; i < 4; ++i) {
    const auto v = sep.eigenvector(i);
    const Eigen::VectorXd vv = Eigen::Map<const Eigen::VectorXd>(v.data(), 15);
    CHECK((c * vv - ev[i] * vv).norm() < 1e-9);
  }
}

TEST_CASE("separable field pointwise variance") {
  std::vector<double> g(17);
  for (std::size_t i = 0; i < 17; ++i) g[i] = double(i) / 16;
  const SeparableGridGrf f({0.2, 1.0}, g, g, MeanFunction::constant(0.0), 0.999);
  std::vector<double> var(17 * 17, 0.0);
  for (std::size_t s = 0; s < 4000; ++s) {
    const auto v = f.sample(3, s);
    for (std::size_t p = 0; p < v.size(); ++p) var[p] += v[p] * v[p] / 4000.0;
  }
  for (double v : var) CHECK(v == doctest::Approx(1.0).epsilon(0.12));
}

TEST_CASE("normalization") {
  const NormStats st{NormKind::Standardize, {2.0}, {1.0}};
  CHECK(normalize(Tensor({2}, {1, 3}), st, NormDirection::Forward) == Tensor({2}, {-1, 1}));

  const Tensor x({3, 1}, {2, 4, 6});
  const auto mm = fit_norm(NormKind::MinMax, x, kAll, 1);
  CHECK(normalize(x, mm, NormDirection::Forward) == Tensor({3, 1}, {0, 0.5, 1}));

  std::mt19937_64 rng(4);
  Tensor r({50, 3});
  for (auto& v : r.vec()) v = 10 * uniform01(rng) - 3;
  std::vector<std::size_t> rows(40);
  for (std::size_t i = 0; i < 40; ++i) rows[i] = i;
  for (auto kind : {NormKind::Standardize, NormKind::MinMax}) {
    const auto s = fit_norm(kind, r, rows, 3);
    CHECK(s.features() == 3);
    const Tensor back = normalize(normalize(r, s, NormDirection::Forward), s, NormDirection::Inverse);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(back[i] == doctest::Approx(r[i]).epsilon(1e-12));
  }

  // per-feature standardization is fitted on the listed rows only
  const auto s = fit_norm(NormKind::Standardize, r, rows, 3);
  const Tensor z = normalize(r, s, NormDirection::Forward);
  for (std::size_t f = 0; f < 3; ++f) {
    double m = 0, m2 = 0;
    for (auto i : rows) {
      m += z[i * 3 + f];
      m2 += z[i * 3 + f] * z[i * 3 + f];
    }
    CHECK(std::abs(m / 40) < 1e-12);
    CHECK(m2 / 40 == doctest::Approx(1.0).epsilon(1e-12));
  }

  const auto ident = fit_norm(NormKind::Standardize, r, rows, 3, {1});
  CHECK(ident.a[1] == 0.0);
  CHECK(ident.b[1] == 1.0);

  CHECK_THROWS(validate(NormStats{NormKind::Standardize, {0.0}, {0.0}}));
  CHECK_THROWS(validate(NormStats{NormKind::MinMax, {1.0}, {1.0}}));
  CHECK_THROWS(normalize(x, NormStats{NormKind::MinMax, {1.0}, {1.0}}, NormDirection::Forward));

  const auto flat = fit_norm(NormKind::MinMax, Tensor({3, 1}, 4.0), kAll, 1);
  CHECK(flat.b[0] > flat.a[0]);
}
