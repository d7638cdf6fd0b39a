#include "mtdon/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mtdon/rng.hpp"

namespace mtdon {

std::string to_string(ProblemKind k) {
  switch (k) {
    case ProblemKind::Fisher:
      return "fisher";
    case ProblemKind::Darcy:
      return "darcy";
    case ProblemKind::Heat:
      return "heat";
  }
  return "?";
}

ProblemKind problem_kind_from_string(const std::string& name) {
  if (name == "fisher") return ProblemKind::Fisher;
  if (name == "darcy") return ProblemKind::Darcy;
  if (name == "heat") return ProblemKind::Heat;
  throw std::invalid_argument("unknown problem kind '" + name + "' (expected fisher, darcy or heat)");
}

std::span<const std::uint8_t> Dataset::mask_of(std::size_t sample) const {
  if (!has_masks()) throw std::logic_error("dataset has no masks");
  const auto g = static_cast<std::size_t>(mask_index.at(sample));
  return {masks.data() + g * num_points(), num_points()};
}

std::vector<std::size_t> Dataset::rows(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == static_cast<std::uint8_t>(s)) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::all_rows() const {
  std::vector<std::size_t> out(num_samples());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

void Dataset::validate() const {
  const std::size_t n = split.size();
  if (n == 0) throw std::invalid_argument("dataset: no samples");
  if (branch.empty() || branch.dim(0) != n) throw std::invalid_argument("dataset: branch rows != sample count");
  if (trunk.rank() != 2) throw std::invalid_argument("dataset: trunk must be [Q x D]");
  if (target.rank() != 2 || target.dim(0) != n || target.dim(1) != trunk.dim(0))
    throw std::invalid_argument("dataset: target must be [N x Q] with Q = " + std::to_string(trunk.dim(0)) + ", got " +
                                to_string(target.shape()));
  if (task.size() != n) throw std::invalid_argument("dataset: task labels != sample count");
  for (auto s : split)
    if (s > 1) throw std::invalid_argument("dataset: split values must be 0 (train) or 1 (test)");
  if (has_masks()) {
    if (masks.size() % trunk.dim(0) != 0) throw std::invalid_argument("dataset: mask array not a multiple of Q");
    if (mask_index.size() != n) throw std::invalid_argument("dataset: mask index != sample count");
    for (auto g : mask_index)
      if (g < 0 || static_cast<std::size_t>(g) >= num_masks())
        throw std::invalid_argument("dataset: mask index out of range");
    for (auto b : masks)
      if (b > 1) throw std::invalid_argument("dataset: mask values must be 0 or 1");
  }
  if (kind == ProblemKind::Darcy && (branch.rank() != 4 || branch.dim(1) != 2))
    throw std::invalid_argument("dataset: darcy branch must be [N x 2 x H x W]");
  if (kind != ProblemKind::Darcy && branch.rank() != 2) throw std::invalid_argument("dataset: branch must be [N x F]");
  if (kind != ProblemKind::Fisher && !has_masks()) throw std::invalid_argument("dataset: masks required");
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) { return splitmix64(seed ^ fnv1a(tag)); }

std::vector<double> parameter_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw std::invalid_argument("parameter grid needs step > 0 and hi >= lo");
  std::vector<double> out;
  for (std::size_t k = 0;; ++k) {
    const double v = lo + static_cast<double>(k) * step;
    if (v > hi + 1e-9) break;
    out.push_back(v);
  }
  return out;
}

void validate(const FisherGenConfig& c) {
  if (c.num_train == 0) throw std::invalid_argument("fisher: num_train must be >= 1");
  if (c.num_ics > c.num_train + c.num_test)
    throw std::invalid_argument("fisher: num_ics must not exceed num_train + num_test");
  if (c.families.empty()) throw std::invalid_argument("fisher: need at least one family");
  if (c.nx < 3 || c.nt < 2) throw std::invalid_argument("fisher: need nx >= 3 and nt >= 2");
  validate(c.kernel);
  if (!(c.a_min >= 0.0)) throw std::invalid_argument("fisher: a_min must be >= 0");
  if (!(c.b_min > 0.0)) throw std::invalid_argument("fisher: b_min must be > 0");
  parameter_grid(c.a_min, c.a_max, c.a_step);
  parameter_grid(c.b_min, c.b_max, c.b_step);
}

void validate(const DarcyGenConfig& c) {
  if (c.geometries.empty()) throw std::invalid_argument("darcy: need at least one geometry");
  for (const auto& g : c.geometries) catalog(g);
  const std::size_t g = c.geometries.size();
  if (c.num_train == 0 || c.num_train % g != 0 || c.num_test % g != 0)
    throw std::invalid_argument("darcy: num_train and num_test must be positive multiples of the geometry count " +
                                std::to_string(g));
  if (c.height < 3 || c.width < 3) throw std::invalid_argument("darcy: grid must be at least 3x3");
  validate(c.kernel);
}

void validate(const HeatGenConfig& c) {
  if (c.grid.nx < 2 || c.grid.ny < 2 || c.grid.nz < 2) throw std::invalid_argument("heat: need at least 2 nodes/axis");
  if (c.train_distances.empty()) throw std::invalid_argument("heat: need at least one training distance");
  for (const auto& p : plate_enumeration(c.hole_radius, c.protrusion_radius)) validate(p);
}

void fit_dataset_norms(Dataset& d) {
  const auto train = d.rows(Split::Train);
  const std::size_t q = d.num_points();
  switch (d.kind) {
    case ProblemKind::Fisher:
      d.branch_norm = fit_norm(NormKind::Standardize, d.branch, train, d.branch.dim(1));
      d.target_norm = fit_norm(NormKind::Standardize, d.target.reshaped({d.num_samples(), 1, q}), train, 1);
      break;
    case ProblemKind::Darcy:
      d.branch_norm = fit_norm(NormKind::Standardize, d.branch, train, 2, {1});
      d.target_norm = fit_norm(NormKind::Standardize, d.target.reshaped({d.num_samples(), 1, q}), train, 1);
      break;
    case ProblemKind::Heat:
      d.branch_norm = fit_norm(NormKind::MinMax, d.branch, train, d.branch.dim(1));
      d.target_norm = fit_norm(NormKind::MinMax, d.target.reshaped({d.num_samples(), 1, q}), train, 1);
      break;
  }
}

namespace {

void round_all(Tensor& t) {
  for (auto& v : t.data()) v = round_f32(v);
}

}  // namespace

Dataset generate_fisher(const FisherGenConfig& c, std::uint64_t seed) {
  validate(c);
  const std::size_t n = c.num_train + c.num_test;
  const std::size_t q = c.nt * c.nx;
  const std::size_t f = c.nx + 4;
  const std::size_t num_ics = c.num_ics == 0 ? std::max<std::size_t>(1, n / 5) : c.num_ics;

  GrfSpec spec;
  spec.mean = MeanFunction::offset_sine(c.mean_offset, c.mean_amplitude);
  spec.kernel = c.kernel;
  spec.points = PointSet::linspace(0.0, 1.0, c.nx);
  spec.trace_fraction = c.trace_fraction;
  const GrfSampler sampler(spec);

  // Negative densities make F(u) blow up; such draws are replaced by the
  // next stream of the same initial condition.
  const std::uint64_t ic_seed = derive_seed(seed, "fisher/ic");
  std::vector<std::vector<double>> ics(num_ics);
  for (std::size_t i = 0; i < num_ics; ++i) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      if (attempt == 64) throw std::runtime_error("fisher: IC " + std::to_string(i) + " stays negative after 64 draws");
      auto v = sampler.sample(ic_seed, i + (attempt << 32));
      for (auto& x : v) x = round_f32(x);
      if (*std::min_element(v.begin(), v.end()) >= 0.0) {
        ics[i] = std::move(v);
        break;
      }
    }
  }

  const auto a_grid = parameter_grid(c.a_min, c.a_max, c.a_step);
  const auto b_grid = parameter_grid(c.b_min, c.b_max, c.b_step);
  const std::uint64_t param_seed = derive_seed(seed, "fisher/params");

  Dataset d;
  d.kind = ProblemKind::Fisher;
  d.grid = {c.nt, c.nx};
  d.branch = Tensor({n, f});
  d.target = Tensor({n, q});
  d.params = Tensor({n, 2});
  d.trunk = Tensor({q, 2});
  for (auto fam : c.families) d.task_names.push_back(to_string(fam));
  for (std::size_t i = 0; i < c.nt; ++i)
    for (std::size_t j = 0; j < c.nx; ++j) {
      d.trunk[(i * c.nx + j) * 2] = grid_coord(0.0, 1.0, c.nx, j);
      d.trunk[(i * c.nx + j) * 2 + 1] = grid_coord(0.0, 1.0, c.nt, i);
    }
  round_all(d.trunk);

  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t fam = s % c.families.size();
    auto rng = stream_engine(param_seed, s);
    ReactionSpec r{c.families[fam], a_grid[uniform_index(rng, a_grid.size())], 0.0};
    if (r.family == ReactionFamily::ZFK) r.b = b_grid[uniform_index(rng, b_grid.size())];
    const std::size_t ic = s * num_ics / n;
    const PolyCoeffs pc = poly_coeffs(r);

    Tensor field;
    try {
      field = solve_fisher_1d(ics[ic], r, c.nt);
    } catch (const std::exception& e) {
      throw std::runtime_error("fisher: sample " + std::to_string(s) + ": " + e.what());
    }
    double* row = d.branch.data().data() + s * f;
    std::copy(ics[ic].begin(), ics[ic].end(), row);
    row[c.nx] = pc.alpha;
    row[c.nx + 1] = pc.beta;
    row[c.nx + 2] = pc.gamma;
    row[c.nx + 3] = pc.delta;
    std::copy(field.data().begin(), field.data().end(), d.target.data().begin() + static_cast<std::ptrdiff_t>(s * q));
    d.params[s * 2] = r.a;
    d.params[s * 2 + 1] = r.b;
    d.task.push_back(static_cast<std::int32_t>(fam));
    d.split.push_back(s < c.num_train ? 0 : 1);
  }
  round_all(d.branch);
  round_all(d.target);
  round_all(d.params);
  fit_dataset_norms(d);
  d.validate();
  return d;
}

Dataset generate_darcy(const DarcyGenConfig& c, std::uint64_t seed) {
  validate(c);
  const std::size_t g = c.geometries.size();
  const std::size_t n = c.num_train + c.num_test;
  const std::size_t h = c.height, w = c.width, q = h * w;

  std::vector<double> xs(h), ys(w);
  for (std::size_t i = 0; i < h; ++i) xs[i] = grid_coord(0.0, 1.0, h, i);
  for (std::size_t j = 0; j < w; ++j) ys[j] = grid_coord(0.0, 1.0, w, j);
  const SeparableGridGrf field(c.kernel, xs, ys, MeanFunction::constant(0.0), c.trace_fraction);
  const std::uint64_t k_seed = derive_seed(seed, "darcy/logk");

  Dataset d;
  d.kind = ProblemKind::Darcy;
  d.grid = {h, w};
  d.task_names = c.geometries;
  d.branch = Tensor({n, 2, h, w});
  d.target = Tensor({n, q});
  d.params = Tensor({n, 1});
  d.trunk = Tensor({q, 2});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      d.trunk[(i * w + j) * 2] = xs[i];
      d.trunk[(i * w + j) * 2 + 1] = ys[j];
    }
  round_all(d.trunk);
  for (const auto& name : c.geometries) {
    const auto m = rasterize_mask_2d(catalog(name), h, w);
    d.masks.insert(d.masks.end(), m.bits.begin(), m.bits.end());
  }

  const std::size_t train_per = c.num_train / g, test_per = c.num_test / g;
  for (std::size_t s = 0; s < n; ++s) {
    const bool train = s < c.num_train;
    const std::size_t geo = train ? s / train_per : (s - c.num_train) / test_per;
    DarcyProblem pb;
    pb.height = h;
    pb.width = w;
    pb.sign = c.sign;
    pb.mask.assign(d.masks.begin() + static_cast<std::ptrdiff_t>(geo * q),
                   d.masks.begin() + static_cast<std::ptrdiff_t>((geo + 1) * q));
    const auto logk = field.sample(k_seed, s);
    pb.conductivity.resize(q);
    for (std::size_t p = 0; p < q; ++p) pb.conductivity[p] = round_f32(std::exp(logk[p]));
    DarcySolution sol;
    try {
      sol = solve_darcy_2d(pb);
    } catch (const std::exception& e) {
      throw std::runtime_error("darcy: sample " + std::to_string(s) + " (" + c.geometries[geo] + "): " + e.what());
    }
    double* kb = d.branch.data().data() + s * 2 * q;
    std::copy(pb.conductivity.begin(), pb.conductivity.end(), kb);
    for (std::size_t p = 0; p < q; ++p) {
      kb[q + p] = pb.mask[p];
      d.target[s * q + p] = pb.mask[p] ? round_f32(sol.head[p]) : 0.0;
    }
    d.params[s] = static_cast<double>(geo);
    d.task.push_back(static_cast<std::int32_t>(geo));
    d.mask_index.push_back(static_cast<std::int32_t>(geo));
    d.split.push_back(train ? 0 : 1);
  }
  fit_dataset_norms(d);
  d.validate();
  return d;
}

Dataset generate_heat(const HeatGenConfig& c) {
  validate(c);
  const auto& gr = c.grid;
  const std::size_t q = gr.nx * gr.ny * gr.nz;
  auto is_train = [&](double dist) {
    return std::any_of(c.train_distances.begin(), c.train_distances.end(),
                       [&](double t) { return std::abs(t - dist) < 1e-9; });
  };
  std::vector<PlateGeometry> order;
  const auto all = plate_enumeration(c.hole_radius, c.protrusion_radius);
  for (const auto& p : all)
    if (is_train(p.distance)) order.push_back(p);
  const std::size_t num_train = order.size();
  for (const auto& p : all)
    if (!is_train(p.distance)) order.push_back(p);
  const std::size_t n = order.size();

  Dataset d;
  d.kind = ProblemKind::Heat;
  d.grid = {gr.nx, gr.ny, gr.nz};
  d.task_names = {"plate"};
  d.branch = Tensor({n, 2});
  d.target = Tensor({n, q});
  d.params = Tensor({n, 2});
  d.trunk = Tensor({q, 3});
  for (std::size_t i = 0; i < gr.nx; ++i)
    for (std::size_t j = 0; j < gr.ny; ++j)
      for (std::size_t k = 0; k < gr.nz; ++k) {
        const std::size_t p = (i * gr.ny + j) * gr.nz + k;
        d.trunk[p * 3] = grid_coord(gr.box.x0, gr.box.x1, gr.nx, i);
        d.trunk[p * 3 + 1] = grid_coord(gr.box.y0, gr.box.y1, gr.ny, j);
        d.trunk[p * 3 + 2] = grid_coord(gr.box.z0, gr.box.z1, gr.nz, k);
      }
  round_all(d.trunk);

  for (std::size_t s = 0; s < n; ++s) {
    HeatProblem pb{order[s], c.conductivity, c.flux, c.h_c, c.u_inf};
    HeatSolution sol;
    try {
      sol = solve_heat_3d(pb, gr);
    } catch (const std::exception& e) {
      throw std::runtime_error("heat: sample " + std::to_string(s) + " (n=" + std::to_string(order[s].holes) +
                               ", d=" + std::to_string(order[s].distance) + "): " + e.what());
    }
    d.branch[s * 2] = order[s].holes;
    d.branch[s * 2 + 1] = round_f32(order[s].distance);
    d.params[s * 2] = order[s].holes;
    d.params[s * 2 + 1] = round_f32(order[s].distance);
    for (std::size_t p = 0; p < q; ++p) d.target[s * q + p] = round_f32(sol.temperature[p]);
    d.masks.insert(d.masks.end(), sol.mask.bits.begin(), sol.mask.bits.end());
    d.mask_index.push_back(static_cast<std::int32_t>(s));
    d.task.push_back(0);
    d.split.push_back(s < num_train ? 0 : 1);
  }
  fit_dataset_norms(d);
  d.validate();
  return d;
}

}  // namespace mtdon
