#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "mtdon/dataset.hpp"

using namespace mtdon;

namespace {

FisherGenConfig small_fisher(std::size_t train, std::size_t test) {
  FisherGenConfig c;
  c.num_train = train;
  c.num_test = test;
  return c;
}

DarcyGenConfig small_darcy() {
  DarcyGenConfig c;
  c.num_train = 12;
  c.num_test = 6;
  c.height = c.width = 17;
  return c;
}

}  // namespace

TEST_CASE("parameter grid") {
  const auto a = parameter_grid(0.1, 1.0, 0.1);
  REQUIRE(a.size() == 10);
  CHECK(a.front() == 0.1);
  CHECK(a.back() == doctest::Approx(1.0));
  const auto b = parameter_grid(0.5, 2.0, 0.15);
  REQUIRE(b.size() == 11);
  CHECK(b.back() == doctest::Approx(2.0));
  CHECK_THROWS(parameter_grid(1.0, 0.5, 0.1));
  CHECK_THROWS(parameter_grid(0.0, 1.0, 0.0));
}

TEST_CASE("seed derivation") {
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
}

TEST_CASE("fisher dataset") {
  const Dataset d = generate_fisher(small_fisher(8, 2), 5);
  CHECK(d.branch.shape() == Shape{10, 68});
  CHECK(d.trunk.shape() == Shape{1280, 2});
  CHECK(d.target.shape() == Shape{10, 1280});
  CHECK(d.grid == std::vector<std::size_t>{20, 64});
  CHECK(d.rows(Split::Train).size() == 8);
  CHECK(d.rows(Split::Test) == std::vector<std::size_t>{8, 9});
  CHECK_FALSE(d.has_masks());
  CHECK(d.task_names == std::vector<std::string>{"fisher", "nws", "zfk"});

  // trunk q = i * nx + j is (x_j, t_i)
  CHECK(d.trunk[(3 * 64 + 5) * 2] == doctest::Approx(5.0 / 63).epsilon(1e-7));
  CHECK(d.trunk[(3 * 64 + 5) * 2 + 1] == doctest::Approx(3.0 / 19).epsilon(1e-7));

  for (std::size_t s = 0; s < 10; ++s) {
    CAPTURE(s);
    const auto fam = static_cast<ReactionFamily>(d.task[s]);
    const ReactionSpec r{fam, d.params[s * 2], d.params[s * 2 + 1]};
    CHECK(r.a >= 0.1 - 1e-7);
    CHECK(r.a <= 1.0 + 1e-7);
    if (fam == ReactionFamily::ZFK) {
      CHECK(r.b >= 0.5 - 1e-7);
      CHECK(r.b <= 2.0 + 1e-7);
    } else {
      CHECK(r.b == 0.0);
    }
    const auto pc = poly_coeffs(r);
    CHECK(d.branch[s * 68 + 64] == doctest::Approx(pc.alpha).epsilon(1e-6));
    CHECK(d.branch[s * 68 + 65] == doctest::Approx(pc.beta).epsilon(1e-6));
    CHECK(d.branch[s * 68 + 66] == doctest::Approx(pc.gamma).epsilon(1e-6));
    // first target row equals the sensor values
    for (std::size_t j = 0; j < 64; ++j) CHECK(d.target[s * 1280 + j] == d.branch[s * 68 + j]);
    // f32-representable storage
    for (std::size_t j = 0; j < 1280; ++j) CHECK(d.target[s * 1280 + j] == round_f32(d.target[s * 1280 + j]));
  }
  std::set<int> fams(d.task.begin(), d.task.end());
  CHECK(fams.size() == 3);

  const Dataset again = generate_fisher(small_fisher(8, 2), 5);
  CHECK(again.branch == d.branch);
  CHECK(again.target == d.target);
  CHECK_FALSE(generate_fisher(small_fisher(8, 2), 6).target == d.target);
}

TEST_CASE("fisher sample and initial-condition counts") {
  auto c = small_fisher(40, 10);
  const Dataset d = generate_fisher(c, 1);
  // default: one initial condition per five samples
  std::set<std::vector<double>> ics;
  for (std::size_t s = 0; s < 50; ++s)
    ics.insert(std::vector<double>(d.branch.vec().begin() + long(s * 68), d.branch.vec().begin() + long(s * 68 + 64)));
  CHECK(ics.size() == 10);
  for (double v : d.branch.vec()) CHECK(std::isfinite(v));

  c.num_ics = 51;
  CHECK_THROWS(generate_fisher(c, 1));
  c.num_ics = 0;
  c.families = {};
  CHECK_THROWS(generate_fisher(c, 1));
}

TEST_CASE("fisher norms come from the train split") {
  const Dataset d = generate_fisher(small_fisher(10, 5), 3);
  CHECK(d.branch_norm.kind == NormKind::Standardize);
  CHECK(d.branch_norm.features() == 68);
  double sum = 0;
  for (std::size_t s = 0; s < 10; ++s) sum += d.branch[s * 68 + 7];
  CHECK(d.branch_norm.a[7] == doctest::Approx(sum / 10).epsilon(1e-12));
  CHECK(d.target_norm.features() == 1);
  double tsum = 0;
  for (std::size_t k = 0; k < 10 * 1280; ++k) tsum += d.target[k];
  CHECK(d.target_norm.a[0] == doctest::Approx(tsum / (10 * 1280)).epsilon(1e-12));
}

TEST_CASE("darcy dataset") {
  const Dataset d = generate_darcy(small_darcy(), 4);
  CHECK(d.branch.shape() == Shape{18, 2, 17, 17});
  CHECK(d.num_masks() == 3);
  std::map<int, int> train_per, test_per;
  for (std::size_t s = 0; s < 18; ++s) (d.split[s] == 0 ? train_per : test_per)[d.task[s]]++;
  for (int g = 0; g < 3; ++g) {
    CHECK(train_per[g] == 4);
    CHECK(test_per[g] == 2);
  }
  const std::size_t q = 17 * 17;
  for (std::size_t s = 0; s < 18; ++s) {
    const auto m = d.mask_of(s);
    for (std::size_t p = 0; p < q; ++p) {
      CHECK(d.branch[s * 2 * q + q + p] == m[p]);
      if (!m[p]) CHECK(d.target[s * q + p] == 0.0);
      CHECK(d.branch[s * 2 * q + p] > 0.0);  // K = exp(g)
    }
  }
  // mask channel is left unscaled
  CHECK(d.branch_norm.a[1] == 0.0);
  CHECK(d.branch_norm.b[1] == 1.0);

  auto bad = small_darcy();
  bad.num_train = 13;
  CHECK_THROWS(generate_darcy(bad, 4));
  bad = small_darcy();
  bad.geometries = {"S1", "Q9"};
  CHECK_THROWS(generate_darcy(bad, 4));

  const Dataset again = generate_darcy(small_darcy(), 4);
  CHECK(again.target == d.target);
  CHECK(again.branch == d.branch);
}

TEST_CASE("darcy per-geometry split at default scale") {
  DarcyGenConfig c;  // defaults: S1+S2+S3, 5400 / 600
  CHECK_NOTHROW(validate(c));
  CHECK(c.num_train / c.geometries.size() == 1800);
}

TEST_CASE("heat dataset") {
  HeatGenConfig c;
  c.grid = {8, 8, 6};
  const Dataset d = generate_heat(c);
  REQUIRE(d.num_samples() == 64);
  CHECK(d.rows(Split::Train).size() == 24);
  CHECK(d.rows(Split::Test).size() == 40);
  CHECK(d.branch.shape() == Shape{64, 2});
  CHECK(d.trunk.shape() == Shape{8 * 8 * 6, 3});
  std::set<std::pair<int, int>> seen;
  for (std::size_t s = 0; s < 64; ++s) {
    const double dist = d.branch[s * 2 + 1];
    const bool train_d = std::abs(dist - 0.9) < 1e-6 || std::abs(dist - 1.2) < 1e-6 || std::abs(dist - 1.6) < 1e-6;
    CHECK((d.split[s] == 0) == train_d);
    seen.insert({int(d.branch[s * 2]), int(std::lround(dist * 10))});
    const auto m = d.mask_of(s);
    for (std::size_t p = 0; p < m.size(); ++p) {
      if (!m[p])
        CHECK(d.target[s * m.size() + p] == 0.0);
      else
        CHECK(d.target[s * m.size() + p] >= 6.0 - 1e-5);
    }
  }
  CHECK(seen.size() == 64);
  CHECK(d.target_norm.kind == NormKind::MinMax);
  CHECK(d.branch_norm.kind == NormKind::MinMax);
}

TEST_CASE("dataset validation") {
  Dataset d = generate_fisher(small_fisher(4, 1), 2);
  CHECK_NOTHROW(d.validate());
  d.split.pop_back();
  CHECK_THROWS(d.validate());
  CHECK(problem_kind_from_string("heat") == ProblemKind::Heat);
  CHECK_THROWS(problem_kind_from_string("wave"));
}
