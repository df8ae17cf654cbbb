#pragma once

#include "splatlab/gaussian.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace splatlab {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-15;

/// Per-parameter learning rates in the flat ParamVector layout.
using LearningRates = std::array<double, kNumParams>;

/// First/second moment estimates, index-aligned with the cloud.
struct AdamState {
  std::vector<ParamVector> m;
  std::vector<ParamVector> v;
  std::int64_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, ParamVector{}), v(n, ParamVector{}) {}

  std::size_t size() const { return m.size(); }

  /// Survivors keep their moments; fresh entries start from zero.
  void apply(const Remap& map) {
    m = remap_reset(m, map, ParamVector{});
    v = remap_reset(v, map, ParamVector{});
  }
};

/// One bias-corrected Adam update of every Gaussian.
inline void adam_step(std::span<Gaussian> params, std::span<const ParamVector> grads,
                      AdamState& state, const LearningRates& lr) {
  if (grads.size() != params.size() || state.size() != params.size()) {
    throw ParameterError("adam_step: parameter, gradient and state sizes differ");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamVector p = pack(params[i]);
    ParamVector& m = state.m[i];
    ParamVector& v = state.v[i];
    const ParamVector& g = grads[i];
    for (int k = 0; k < kNumParams; ++k) {
      m[k] = kAdamBeta1 * m[k] + (1.0 - kAdamBeta1) * g[k];
      v[k] = kAdamBeta2 * v[k] + (1.0 - kAdamBeta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] -= lr[k] * m_hat / (std::sqrt(v_hat) + kAdamEps);
    }
    params[i] = unpack(p);
  }
}

}  // namespace splatlab
