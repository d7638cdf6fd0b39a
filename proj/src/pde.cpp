#include "mtdon/pde.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mtdon {

std::string to_string(ReactionFamily f) {
  switch (f) {
    case ReactionFamily::Fisher:
      return "fisher";
    case ReactionFamily::NWS:
      return "nws";
    case ReactionFamily::ZFK:
      return "zfk";
  }
  return "?";
}

ReactionFamily reaction_family_from_string(const std::string& name) {
  if (name == "fisher") return ReactionFamily::Fisher;
  if (name == "nws") return ReactionFamily::NWS;
  if (name == "zfk") return ReactionFamily::ZFK;
  throw std::invalid_argument("unknown reaction family '" + name + "' (expected fisher, nws or zfk)");
}

void validate(const ReactionSpec& spec) {
  if (!std::isfinite(spec.a) || spec.a < 0.0) throw std::invalid_argument("reaction: a must be finite and >= 0");
  if (spec.family == ReactionFamily::ZFK && !(std::isfinite(spec.b) && spec.b > 0.0))
    throw std::invalid_argument("reaction: ZFK b must be finite and > 0");
}

PolyCoeffs poly_coeffs(const ReactionSpec& spec) {
  validate(spec);
  const double a = spec.a;
  switch (spec.family) {
    case ReactionFamily::Fisher:
      return {a, -a, 0.0, 0.0};
    case ReactionFamily::NWS:
      return {a, 0.0, -a, 0.0};
    case ReactionFamily::ZFK: {
      // 1 - b(1-u) + b^2 (1-u)^2 / 2 = c0 + c1 u + c2 u^2, times (a u - a u^2).
      const double b = spec.b;
      const double c0 = 1.0 - b + 0.5 * b * b;
      const double c1 = b - b * b;
      const double c2 = 0.5 * b * b;
      return {a * c0, a * (c1 - c0), a * (c2 - c1), 0.0};
    }
  }
  return {};
}

double eval_poly(const PolyCoeffs& c, double u) { return c.delta + u * (c.alpha + u * (c.beta + u * c.gamma)); }

double eval_reaction(const ReactionSpec& spec, double u) {
  switch (spec.family) {
    case ReactionFamily::Fisher:
      return spec.a * u * (1.0 - u);
    case ReactionFamily::NWS:
      return spec.a * u * (1.0 - u * u);
    case ReactionFamily::ZFK:
      return spec.a * u * (1.0 - u) * std::exp(-spec.b * (1.0 - u));
  }
  return 0.0;
}

double reaction_derivative(const ReactionSpec& spec, double u) {
  switch (spec.family) {
    case ReactionFamily::Fisher:
      return spec.a * (1.0 - 2.0 * u);
    case ReactionFamily::NWS:
      return spec.a * (1.0 - 3.0 * u * u);
    case ReactionFamily::ZFK: {
      const double s = 1.0 - u;
      return spec.a * std::exp(-spec.b * s) * ((1.0 - 2.0 * u) + spec.b * u * s);
    }
  }
  return 0.0;
}

double truncation_bound(const ReactionSpec& spec, double u) {
  if (spec.family != ReactionFamily::ZFK) return 0.0;
  // |e^-x - (1 - x + x^2/2)| <= x^3/6 for x >= 0, plus the dropped u^4 term.
  const double s = 1.0 - u, bs = spec.b * s;
  return spec.a * std::abs(u * s) * bs * bs * bs / 6.0 + spec.a * 0.5 * spec.b * spec.b * u * u * u * u;
}

Tensor solve_fisher_1d(std::span<const double> ic, const ReactionSpec& spec, std::size_t nt) {
  validate(spec);
  const std::size_t nx = ic.size();
  if (nx < 3) throw std::invalid_argument("solve_fisher_1d: need at least 3 grid points");
  if (nt < 2) throw std::invalid_argument("solve_fisher_1d: need at least 2 output times");
  const double dx = 1.0 / static_cast<double>(nx - 1);
  const double inv_dx2 = 1.0 / (dx * dx);
  const double dt_diffusion = 0.4 * dx * dx;

  Tensor out({nt, nx});
  std::vector<double> u(ic.begin(), ic.end());
  std::copy(u.begin(), u.end(), out.data().begin());

  std::vector<double> k1(nx), k2(nx), k3(nx), k4(nx), tmp(nx);
  auto rhs = [&](const std::vector<double>& v, std::vector<double>& du) {
    du[0] = 2.0 * (v[1] - v[0]) * inv_dx2 + eval_reaction(spec, v[0]);
    for (std::size_t j = 1; j + 1 < nx; ++j)
      du[j] = (v[j - 1] - 2.0 * v[j] + v[j + 1]) * inv_dx2 + eval_reaction(spec, v[j]);
    du[nx - 1] = 2.0 * (v[nx - 2] - v[nx - 1]) * inv_dx2 + eval_reaction(spec, v[nx - 1]);
  };

  double t = 0.0;
  for (std::size_t i = 1; i < nt; ++i) {
    const double t_next = static_cast<double>(i) / static_cast<double>(nt - 1);
    while (t < t_next) {
      double stiff = 0.0;
      for (double v : u) stiff = std::max(stiff, std::abs(reaction_derivative(spec, v)));
      double dt = dt_diffusion;
      if (stiff > 0.0) dt = std::min(dt, 0.5 / stiff);
      if (t + dt >= t_next || t_next - (t + dt) < 1e-14) dt = t_next - t;
      rhs(u, k1);
      for (std::size_t j = 0; j < nx; ++j) tmp[j] = u[j] + 0.5 * dt * k1[j];
      rhs(tmp, k2);
      for (std::size_t j = 0; j < nx; ++j) tmp[j] = u[j] + 0.5 * dt * k2[j];
      rhs(tmp, k3);
      for (std::size_t j = 0; j < nx; ++j) tmp[j] = u[j] + dt * k3[j];
      rhs(tmp, k4);
      for (std::size_t j = 0; j < nx; ++j) {
        u[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        if (!std::isfinite(u[j]))
          throw std::runtime_error("solve_fisher_1d: non-finite state before output time index " + std::to_string(i));
      }
      t = (dt == t_next - t) ? t_next : t + dt;
    }
    std::copy(u.begin(), u.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * nx));
  }
  return out;
}

CgResult conjugate_gradient(const LinearOperator& apply, const std::vector<double>& b, std::vector<double>& x,
                            double rel_tol, std::size_t max_iter, const std::vector<double>& diag,
                            const std::function<void(const std::vector<double>&)>& on_iterate) {
  const std::size_t n = b.size();
  if (x.size() != n) x.assign(n, 0.0);
  auto dot = [](const std::vector<double>& a, const std::vector<double>& c) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * c[i];
    return s;
  };
  const double bnorm = std::sqrt(dot(b, b));
  CgResult res;
  if (bnorm == 0.0) {
    std::fill(x.begin(), x.end(), 0.0);
    res.converged = true;
    return res;
  }
  std::vector<double> r(n), z(n), p(n), ap(n);
  apply(x, ap);
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - ap[i];
  auto precondition = [&] {
    for (std::size_t i = 0; i < n; ++i) z[i] = diag.empty() ? r[i] : r[i] / diag[i];
  };
  precondition();
  p = z;
  double rz = dot(r, z);
  res.relative_residual = std::sqrt(dot(r, r)) / bnorm;
  while (res.relative_residual > rel_tol && res.iterations < max_iter) {
    apply(p, ap);
    const double alpha = rz / dot(p, ap);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    ++res.iterations;
    if (on_iterate) on_iterate(x);
    res.relative_residual = std::sqrt(dot(r, r)) / bnorm;
    precondition();
    const double rz_next = dot(r, z);
    const double beta = rz_next / rz;
    rz = rz_next;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  res.converged = res.relative_residual <= rel_tol;
  return res;
}

void DarcySystem::apply(const std::vector<double>& in, std::vector<double>& out) const {
  out.resize(diag.size());
  for (std::size_t u = 0; u < diag.size(); ++u) {
    double s = diag[u] * in[u];
    for (int k = 0; k < 4; ++k)
      if (nbr[u][k] >= 0) s -= coef[u][k] * in[static_cast<std::size_t>(nbr[u][k])];
    out[u] = s;
  }
}

DarcySystem assemble_darcy(const DarcyProblem& pb) {
  const std::size_t h = pb.height, w = pb.width, n = h * w;
  if (h < 3 || w < 3) throw std::invalid_argument("darcy: grid must be at least 3x3");
  if (pb.conductivity.size() != n || pb.mask.size() != n)
    throw std::invalid_argument("darcy: conductivity and mask must have H*W entries");
  if (!pb.source_field.empty() && pb.source_field.size() != n)
    throw std::invalid_argument("darcy: source field must have H*W entries");
  const double dx = (pb.box.x1 - pb.box.x0) / static_cast<double>(h - 1);
  const double dy = (pb.box.y1 - pb.box.y0) / static_cast<double>(w - 1);

  DarcySystem sys;
  sys.unknown.assign(n, -1);
  for (std::size_t i = 1; i + 1 < h; ++i)
    for (std::size_t j = 1; j + 1 < w; ++j) {
      const std::size_t q = i * w + j;
      if (!pb.mask[q] || !pb.mask[q - w] || !pb.mask[q + w] || !pb.mask[q - 1] || !pb.mask[q + 1]) continue;
      if (!(pb.conductivity[q] > 0.0))
        throw std::invalid_argument("darcy: conductivity must be > 0 inside the domain (node " + std::to_string(q) + ")");
      sys.unknown[q] = static_cast<std::int64_t>(sys.node.size());
      sys.node.push_back(q);
    }
  const std::size_t m = sys.node.size();
  sys.diag.assign(m, 0.0);
  sys.nbr.assign(m, {-1, -1, -1, -1});
  sys.coef.assign(m, {0.0, 0.0, 0.0, 0.0});
  sys.rhs.assign(m, 0.0);
  const double sgn = pb.sign == DarcySign::NegativeDivergence ? 1.0 : -1.0;
  for (std::size_t u = 0; u < m; ++u) {
    const std::size_t q = sys.node[u];
    const std::size_t nb[4] = {q - w, q + w, q - 1, q + 1};
    const double inv_d2[4] = {1.0 / (dx * dx), 1.0 / (dx * dx), 1.0 / (dy * dy), 1.0 / (dy * dy)};
    for (int k = 0; k < 4; ++k) {
      const double kp = pb.conductivity[q], kn = pb.conductivity[nb[k]];
      if (!(kn > 0.0))
        throw std::invalid_argument("darcy: conductivity must be > 0 inside the domain (node " +
                                    std::to_string(nb[k]) + ")");
      const double c = 2.0 * kp * kn / (kp + kn) * inv_d2[k];
      sys.diag[u] += c;
      sys.coef[u][k] = c;
      sys.nbr[u][k] = sys.unknown[nb[k]];
    }
    sys.rhs[u] = sgn * (pb.source_field.empty() ? pb.source : pb.source_field[q]);
  }
  return sys;
}

DarcySolution solve_darcy_2d(const DarcyProblem& pb) {
  const DarcySystem sys = assemble_darcy(pb);
  std::vector<double> x(sys.node.size(), 0.0);
  const std::size_t cap = 20 * pb.height * pb.width;
  DarcySolution out;
  out.cg = conjugate_gradient([&](const std::vector<double>& in, std::vector<double>& o) { sys.apply(in, o); },
                              sys.rhs, x, 1e-10, cap);
  if (!out.cg.converged)
    throw std::runtime_error("darcy: CG did not reach 1e-10 in " + std::to_string(cap) +
                             " iterations (residual " + std::to_string(out.cg.relative_residual) + ")");
  out.head.assign(pb.height * pb.width, 0.0);
  for (std::size_t u = 0; u < x.size(); ++u) out.head[sys.node[u]] = x[u];
  return out;
}

HeatSolution solve_heat_3d(const HeatProblem& pb, const HeatGrid& grid) {
  if (!(pb.conductivity > 0.0) || !(pb.h_c > 0.0)) throw std::invalid_argument("heat: K and h_c must be > 0");
  const std::size_t nx = grid.nx, ny = grid.ny, nz = grid.nz, n = nx * ny * nz;
  HeatSolution out;
  out.mask = rasterize_mask_3d(pb.plate, nx, ny, nz, grid.box);
  const auto& bits = out.mask.bits;
  const BBox3& b = grid.box;
  const double hs[3] = {(b.x1 - b.x0) / static_cast<double>(nx - 1), (b.y1 - b.y0) / static_cast<double>(ny - 1),
                        (b.z1 - b.z0) / static_cast<double>(nz - 1)};
  const double area[3] = {hs[1] * hs[2], hs[0] * hs[2], hs[0] * hs[1]};
  const std::size_t stride[3] = {ny * nz, nz, 1};

  std::vector<std::int64_t> unknown(n, -1);
  std::vector<std::size_t> node;
  for (std::size_t q = 0; q < n; ++q)
    if (bits[q]) {
      unknown[q] = static_cast<std::int64_t>(node.size());
      node.push_back(q);
    }
  const std::size_t m = node.size();
  if (m == 0) throw std::runtime_error("heat: empty domain");

  std::vector<double> diag(m, 0.0), rhs(m, 0.0);
  std::vector<std::uint8_t> robin(m, 0);
  for (const auto& f : classify_boundary(out.mask, pb.plate, grid.box)) {
    const auto u = static_cast<std::size_t>(unknown[f.node]);
    if (f.label == FaceLabel::Convective) {
      diag[u] += pb.h_c * f.area;
      robin[u] = 1;
    } else if (f.label == FaceLabel::HeatedHoleWall) {
      rhs[u] += pb.flux * f.area;
    }
  }
  // Interior conductances: neighbours in +x, +y, +z order per unknown.
  std::vector<std::array<std::int64_t, 6>> nbr(m);
  double cond[3];
  for (int a = 0; a < 3; ++a) cond[a] = pb.conductivity * area[a] / hs[a];
  for (std::size_t u = 0; u < m; ++u) {
    const std::size_t q = node[u];
    const std::size_t idx[3] = {q / stride[0], (q / nz) % ny, q % nz};
    const std::size_t ext[3] = {nx, ny, nz};
    for (int a = 0; a < 3; ++a)
      for (int s = 0; s < 2; ++s) {
        std::int64_t v = -1;
        if (s == 0 && idx[a] > 0) v = unknown[q - stride[a]];
        if (s == 1 && idx[a] + 1 < ext[a]) v = unknown[q + stride[a]];
        nbr[u][2 * a + s] = v;
        if (v >= 0) diag[u] += cond[a];
      }
  }

  // Every connected piece needs a Robin face or the system is singular.
  std::vector<std::int64_t> comp(m, -1);
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < m; ++s) {
    if (comp[s] >= 0) continue;
    bool grounded = false;
    comp[s] = static_cast<std::int64_t>(s);
    stack.push_back(s);
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      grounded = grounded || robin[u];
      for (auto v : nbr[u])
        if (v >= 0 && comp[static_cast<std::size_t>(v)] < 0) {
          comp[static_cast<std::size_t>(v)] = static_cast<std::int64_t>(s);
          stack.push_back(static_cast<std::size_t>(v));
        }
    }
    if (!grounded)
      throw std::runtime_error("heat: singular system, a connected region has no convective face (node " +
                               std::to_string(node[s]) + ")");
  }

  auto apply = [&](const std::vector<double>& in, std::vector<double>& o) {
    o.resize(m);
    for (std::size_t u = 0; u < m; ++u) {
      double acc = diag[u] * in[u];
      for (int k = 0; k < 6; ++k)
        if (nbr[u][k] >= 0) acc -= cond[k / 2] * in[static_cast<std::size_t>(nbr[u][k])];
      o[u] = acc;
    }
  };
  std::vector<double> w(m, 0.0);
  out.cg = conjugate_gradient(apply, rhs, w, 1e-8, 20 * m, diag);
  if (!out.cg.converged) throw std::runtime_error("heat: CG did not reach 1e-8");
  out.temperature.assign(n, 0.0);
  for (std::size_t u = 0; u < m; ++u) out.temperature[node[u]] = pb.u_inf + w[u];
  return out;
}

}  // namespace mtdon
