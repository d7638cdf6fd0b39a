#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mtdon/geometry.hpp"
#include "mtdon/pde.hpp"
#include "mtdon/random_fields.hpp"
#include "mtdon/tensor.hpp"

namespace mtdon {

enum class ProblemKind { Fisher, Darcy, Heat };

std::string to_string(ProblemKind k);
ProblemKind problem_kind_from_string(const std::string& name);

enum class Split : std::uint8_t { Train = 0, Test = 1 };

/// Samples are stored train-first. Values are rounded to f32 at generation so
/// the in-memory dataset equals what a container round-trip yields.
struct Dataset {
  ProblemKind kind = ProblemKind::Fisher;
  Tensor branch;  // [N x F] or [N x 2 x H x W] (K; mask)
  Tensor trunk;   // [Q x D]
  Tensor target;  // [N x Q]
  Tensor params;  // [N x P] generating parameters, for reporting
  std::vector<std::uint8_t> split;
  std::vector<std::int32_t> task;
  std::vector<std::string> task_names;
  std::vector<std::size_t> grid;  // {nt, nx}, {H, W} or {X, Y, Z}

  // Masks stored once per geometry; empty when the problem has none.
  std::vector<std::uint8_t> masks;  // [G x Q]
  std::vector<std::int32_t> mask_index;

  NormStats branch_norm;
  NormStats target_norm;

  std::size_t num_samples() const { return split.size(); }
  std::size_t num_points() const { return trunk.dim(0); }
  std::size_t num_masks() const { return masks.empty() ? 0 : masks.size() / num_points(); }
  bool has_masks() const { return !masks.empty(); }
  std::span<const std::uint8_t> mask_of(std::size_t sample) const;
  std::vector<std::size_t> rows(Split s) const;
  std::vector<std::size_t> all_rows() const;

  /// Throws std::invalid_argument describing the first inconsistency.
  void validate() const;
};

struct FisherGenConfig {
  std::size_t num_train = 4000;
  std::size_t num_test = 1000;
  std::size_t num_ics = 0;  // 0: one initial condition per five samples
  std::vector<ReactionFamily> families{ReactionFamily::Fisher, ReactionFamily::NWS, ReactionFamily::ZFK};
  std::size_t nx = 64;
  std::size_t nt = 20;
  SqExpKernel kernel{0.4, 2.0};
  double mean_offset = 5.0;
  double mean_amplitude = 0.1;
  double trace_fraction = 0.999;
  double a_min = 0.1, a_max = 1.0, a_step = 0.1;
  double b_min = 0.5, b_max = 2.0, b_step = 0.15;
};

struct DarcyGenConfig {
  std::vector<std::string> geometries{"S1", "S2", "S3"};
  std::size_t num_train = 5400;
  std::size_t num_test = 600;
  std::size_t height = 33, width = 33;
  SqExpKernel kernel{0.05, 1.0};  // of log K
  double trace_fraction = 0.999;
  DarcySign sign = DarcySign::NegativeDivergence;
};

struct HeatGenConfig {
  HeatGrid grid{};
  double hole_radius = 0.2;
  double protrusion_radius = 0.6;
  double conductivity = 1.0, flux = 1.0, h_c = 0.3, u_inf = 6.0;
  std::vector<double> train_distances{0.9, 1.2, 1.6};
};

void validate(const FisherGenConfig& c);
void validate(const DarcyGenConfig& c);
void validate(const HeatGenConfig& c);

/// Grid of values lo, lo + step, ... up to hi (inclusive within 1e-9).
std::vector<double> parameter_grid(double lo, double hi, double step);

Dataset generate_fisher(const FisherGenConfig& c, std::uint64_t seed);
Dataset generate_darcy(const DarcyGenConfig& c, std::uint64_t seed);
/// Deterministic enumeration; no randomness involved.
Dataset generate_heat(const HeatGenConfig& c);

/// Fits branch/target stats on the train split (see generate_*).
void fit_dataset_norms(Dataset& d);

/// Named sub-seed: independent streams for independent generation stages.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag);

inline double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace mtdon
