#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "mtdon/tensor.hpp"

namespace mtdon {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moments keyed by parameter name, plus the step counter.
struct AdamState {
  AdamConfig config;
  NamedTensors m;
  NamedTensors v;
  std::int64_t t = 0;
};

/// One bias-corrected Adam update of every parameter that has a gradient.
/// Parameters without an entry in `grads` are left untouched. Throws on
/// non-finite gradients before modifying anything.
void adam_step(NamedTensors& params, const NamedTensors& grads, AdamState& state, double lr);

struct PiecewiseConstant {
  std::vector<double> rates;
  std::vector<std::int64_t> boundaries;  // rates.size() - 1 strictly increasing steps
};

struct ExponentialStaircase {
  double lr0 = 1e-3;
  double decay = 0.9;
  std::int64_t every = 1000;
};

class LrSchedule {
 public:
  using Variant = std::variant<PiecewiseConstant, ExponentialStaircase>;

  LrSchedule() : LrSchedule(ExponentialStaircase{1e-3, 1.0, 1}) {}
  LrSchedule(PiecewiseConstant p);
  LrSchedule(ExponentialStaircase e);

  static LrSchedule constant(double lr) { return LrSchedule(ExponentialStaircase{lr, 1.0, 1}); }
  /// Rates switch at ceil(k * total_steps / rates.size()), k = 1..rates.size()-1.
  static LrSchedule equal_segments(std::vector<double> rates, std::int64_t total_steps);

  const Variant& variant() const { return v_; }

 private:
  Variant v_;
};

double lr_at(const LrSchedule& schedule, std::int64_t step);

}  // namespace mtdon
