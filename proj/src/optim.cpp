#include "mtdon/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mtdon {

void adam_step(NamedTensors& params, const NamedTensors& grads, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("adam_step: gradient for unknown parameter '" + name + "'");
    if (it->second.shape() != g.shape())
      throw ShapeError("adam_step: parameter '" + name + "' has shape " + to_string(it->second.shape()) +
                       " but gradient has " + to_string(g.shape()));
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!std::isfinite(g[i]))
        throw std::runtime_error("adam_step: non-finite gradient in '" + name + "' at index " + std::to_string(i) +
                                 " (step " + std::to_string(state.t + 1) + ")");
  }

  state.t += 1;
  const auto& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    auto [mit, m_new] = state.m.try_emplace(name, g.shape(), 0.0);
    auto [vit, v_new] = state.v.try_emplace(name, g.shape(), 0.0);
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

LrSchedule::LrSchedule(PiecewiseConstant p) {
  if (p.rates.empty()) throw std::invalid_argument("piecewise schedule needs at least one rate");
  if (p.boundaries.size() + 1 != p.rates.size())
    throw std::invalid_argument("piecewise schedule needs exactly rates-1 boundaries");
  for (double r : p.rates)
    if (!(r > 0.0)) throw std::invalid_argument("piecewise schedule rates must be positive");
  for (std::size_t i = 1; i < p.boundaries.size(); ++i)
    if (p.boundaries[i] <= p.boundaries[i - 1])
      throw std::invalid_argument("piecewise schedule boundaries must be strictly increasing");
  v_ = std::move(p);
}

LrSchedule::LrSchedule(ExponentialStaircase e) {
  if (!(e.lr0 > 0.0)) throw std::invalid_argument("staircase schedule lr0 must be positive");
  if (!(e.decay > 0.0 && e.decay <= 1.0)) throw std::invalid_argument("staircase decay must lie in (0, 1]");
  if (e.every < 1) throw std::invalid_argument("staircase 'every' must be >= 1");
  v_ = e;
}

LrSchedule LrSchedule::equal_segments(std::vector<double> rates, std::int64_t total_steps) {
  PiecewiseConstant p;
  const auto n = static_cast<std::int64_t>(rates.size());
  for (std::int64_t k = 1; k < n; ++k) p.boundaries.push_back((k * total_steps + n - 1) / n);
  p.rates = std::move(rates);
  return LrSchedule(std::move(p));
}

double lr_at(const LrSchedule& schedule, std::int64_t step) {
  if (step < 0) throw std::invalid_argument("lr_at: step must be >= 0");
  if (const auto* p = std::get_if<PiecewiseConstant>(&schedule.variant())) {
    std::size_t idx = 0;
    while (idx < p->boundaries.size() && step >= p->boundaries[idx]) ++idx;
    return p->rates[idx];
  }
  const auto& e = std::get<ExponentialStaircase>(schedule.variant());
  return e.lr0 * std::pow(e.decay, static_cast<double>(step / e.every));
}

}  // namespace mtdon
