#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mtdon/geometry.hpp"
#include "mtdon/tensor.hpp"

namespace mtdon {

enum class ReactionFamily { Fisher, NWS, ZFK };

std::string to_string(ReactionFamily f);
ReactionFamily reaction_family_from_string(const std::string& name);

/// Fisher: a u (1 - u); NWS: a u (1 - u^2); ZFK: a u (1 - u) exp(-b (1 - u)).
struct ReactionSpec {
  ReactionFamily family = ReactionFamily::Fisher;
  double a = 1.0;
  double b = 1.0;  // ZFK only
};

void validate(const ReactionSpec& spec);

/// F(u) ~ alpha u + beta u^2 + gamma u^3 + delta.
struct PolyCoeffs {
  double alpha = 0.0, beta = 0.0, gamma = 0.0, delta = 0.0;
};

/// ZFK uses the quadratic Taylor factor of exp(-b(1-u)) and drops the u^4 term.
PolyCoeffs poly_coeffs(const ReactionSpec& spec);
double eval_poly(const PolyCoeffs& c, double u);
double eval_reaction(const ReactionSpec& spec, double u);
double reaction_derivative(const ReactionSpec& spec, double u);
/// Upper bound on |F(u) - poly(u)| for u in [0, 1]; zero for Fisher and NWS.
double truncation_bound(const ReactionSpec& spec, double u);

/// u_t = u_xx + F(u) on x in [0, 1], t in [0, 1], zero-flux ends. Returns
/// [nt x nx]; row i is t_i = i / (nt - 1), row 0 is the initial condition.
Tensor solve_fisher_1d(std::span<const double> ic, const ReactionSpec& spec, std::size_t nt = 20);

struct CgResult {
  std::size_t iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

using LinearOperator = std::function<void(const std::vector<double>& in, std::vector<double>& out)>;

/// Solves A x = b for SPD A from the initial guess in x. `diag` enables
/// Jacobi preconditioning when non-empty. on_iterate sees every iterate.
CgResult conjugate_gradient(const LinearOperator& apply, const std::vector<double>& b, std::vector<double>& x,
                            double rel_tol, std::size_t max_iter, const std::vector<double>& diag = {},
                            const std::function<void(const std::vector<double>&)>& on_iterate = {});

enum class DarcySign {
  NegativeDivergence,  // -div(K grad h) = g (SPD, positive heads for g = 1)
  AsWritten,           //  div(K grad h) = g
};

/// Nodes at linspace over the bounding box, index i*W + j is (x_i, y_j).
struct DarcyProblem {
  std::size_t height = 0, width = 0;
  std::vector<double> conductivity;
  std::vector<std::uint8_t> mask;
  double source = 1.0;
  std::vector<double> source_field;  // per node; overrides `source` when set
  DarcySign sign = DarcySign::NegativeDivergence;
  BBox2 box{};
};

/// 5-point stencil with harmonic face conductivity. Unknowns are mask-1 nodes
/// whose four neighbours all exist and are mask-1; every other node is 0.
struct DarcySystem {
  std::vector<std::int64_t> unknown;  // node -> unknown index or -1
  std::vector<std::size_t> node;      // unknown index -> node
  std::vector<double> diag;
  std::vector<std::array<std::int64_t, 4>> nbr;  // unknown indices, -1 for pinned
  std::vector<std::array<double, 4>> coef;       // off-diagonal magnitudes
  std::vector<double> rhs;

  void apply(const std::vector<double>& in, std::vector<double>& out) const;
};

DarcySystem assemble_darcy(const DarcyProblem& problem);

struct DarcySolution {
  std::vector<double> head;
  CgResult cg;
};

/// CG to relative residual 1e-10; throws if 20*H*W iterations do not suffice.
DarcySolution solve_darcy_2d(const DarcyProblem& problem);

struct HeatProblem {
  PlateGeometry plate;
  double conductivity = 1.0;
  double flux = 1.0;  // per unit area of hole wall
  double h_c = 0.3;
  double u_inf = 6.0;
};

struct HeatGrid {
  std::size_t nx = 24, ny = 24, nz = 24;
  BBox3 box{};
};

struct HeatSolution {
  std::vector<double> temperature;  // exterior nodes are 0
  BinaryMask mask;
  CgResult cg;
};

/// Finite-volume 7-point conduction with Robin, heated and adiabatic faces
/// from classify_boundary. Solves for u - u_inf with Jacobi-preconditioned
/// CG to 1e-8. Throws when a connected piece has no convective face.
HeatSolution solve_heat_3d(const HeatProblem& problem, const HeatGrid& grid = {});

}  // namespace mtdon
