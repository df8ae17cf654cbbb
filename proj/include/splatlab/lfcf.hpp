#pragma once

#include "splatlab/densify.hpp"
#include "splatlab/gaussian.hpp"
#include "splatlab/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace splatlab {

/// Independent refinements of the selective-expansion step.
struct LfcfStrategies {
  bool depth = true;          // enlarging factor interpolated by sampling rate
  bool scale = true;          // volume-preserving per-axis factors
  bool cadence = true;        // run every r-th densification round
  bool anneal = true;         // decay factors toward c_end over the window
  bool probabilistic = true;  // split with probability 1 - θ

  static LfcfStrategies none() { return {false, false, false, false, false}; }
};

struct LfcfConfig {
  double tau = 2e-4;
  double epsilon = 0.005;
  double c_max = 1.5;
  double c_min = 1.0;
  double c_end = 1.0;
  int r = 2;
  double anneal_n = 1.0;
  /// Use exp(ln(c) x^n) verbatim (rises from 1 to c) instead of the decay
  /// from c to c_end.
  bool literal_anneal = false;
  LfcfStrategies strategies;

  void validate() const {
    if (!(c_end > 0.0) || !(c_min >= c_end) || !(c_max >= c_min)) {
      throw ParameterError("lfcf: require c_max >= c_min >= c_end > 0");
    }
    if (!(tau >= 0.0)) throw ParameterError("lfcf: tau must be >= 0");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ParameterError("lfcf: epsilon must lie in (0,1)");
    if (r < 1) throw ParameterError("lfcf: r must be >= 1");
    if (!(anneal_n > 0.0)) throw ParameterError("lfcf: anneal_n must be > 0");
  }

  /// True when the given 1-based densification round should run LFCF.
  bool due(int round) const {
    const int every = strategies.cadence ? r : 1;
    return round > 0 && round % every == 0;
  }
};

/// Where the current iteration sits in the densification window.
struct IterationWindow {
  int iteration = 0;
  int densify_from = 0;
  int densify_until = 0;

  bool contains() const { return iteration >= densify_from && iteration <= densify_until; }
  double progress() const {
    if (densify_until <= densify_from) return 0.0;
    return std::clamp(static_cast<double>(iteration - densify_from) /
                          static_cast<double>(densify_until - densify_from),
                      0.0, 1.0);
  }
};

/// c(i) = θ c_max + (1 - θ) c_min; a constant c_max when the depth strategy is off.
inline std::vector<double> enlarging_factors(std::span<const double> theta, const LfcfConfig& cfg) {
  std::vector<double> c(theta.size(), cfg.c_max);
  if (!cfg.strategies.depth) return c;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    c[i] = theta[i] * cfg.c_max + (1.0 - theta[i]) * cfg.c_min;
  }
  return c;
}

/// Exponential decay of an enlarging factor across the densification window:
/// c_end * exp(ln(c / c_end) * (1 - x)^n). Returns 1 outside the window.
inline double anneal_factor(double c, const IterationWindow& window, const LfcfConfig& cfg) {
  if (!window.contains()) return 1.0;
  const double x = window.progress();
  if (cfg.literal_anneal) return std::exp(std::log(c) * std::pow(x, cfg.anneal_n));
  return cfg.c_end * std::exp(std::log(c / cfg.c_end) * std::pow(1.0 - x, cfg.anneal_n));
}

/// Per-axis factors with unit product: shortest axis gets c, longest 1/c,
/// middle 1 (ties by axis index). (c, c, c) when `volume_preserving` is off.
inline Vec3 scale_based_factors(const Gaussian& g, double c, bool volume_preserving = true) {
  if (!volume_preserving) return Vec3::Constant(c);
  const Vec3 s = g.scale();
  std::array<int, 3> axes{0, 1, 2};
  std::stable_sort(axes.begin(), axes.end(), [&](int a, int b) { return s[a] < s[b]; });
  Vec3 f = Vec3::Ones();
  f[axes[0]] = c;
  f[axes[2]] = 1.0 / c;
  return f;
}

/// η(i) = 1 - θ(i).
inline double split_probability(double theta) { return 1.0 - theta; }

/// Previous-gradient memory, index-aligned with the cloud.
struct LfcfState {
  std::vector<double> pgrad;

  explicit LfcfState(std::size_t n = 0) : pgrad(n, 0.0) {}
  std::size_t size() const { return pgrad.size(); }

  /// Children inherit their parent's value.
  void apply(const Remap& map) { pgrad = remap_inherit(pgrad, map); }
};

enum class LfcfBranch { Untouched, Expand, Shrink };

/// Branch of one Gaussian given its current and previous gradient statistic.
inline LfcfBranch lfcf_branch(double grad, double pgrad, double tau) {
  if (!(grad > tau)) return LfcfBranch::Untouched;
  return grad > pgrad ? LfcfBranch::Expand : LfcfBranch::Shrink;
}

struct LfcfStats {
  std::size_t expanded = 0;
  std::size_t shrunk = 0;
  std::size_t split = 0;
  std::size_t untouched = 0;
  std::size_t removed = 0;
};

/// Per-Gaussian factor vector after the depth -> anneal -> axis pipeline.
inline std::vector<Vec3> lfcf_factor_vectors(const GaussianCloud& cloud,
                                             std::span<const double> theta,
                                             const LfcfConfig& cfg,
                                             const IterationWindow& window) {
  const std::vector<double> base = enlarging_factors(theta, cfg);
  std::vector<Vec3> out(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double c = cfg.strategies.anneal ? anneal_factor(base[i], window, cfg) : base[i];
    out[i] = scale_based_factors(cloud[i], std::max(c, 1.0), cfg.strategies.scale);
  }
  return out;
}

/// Selective expand / shrink+split pass followed by opacity pruning.
/// `grad` is the current averaged screen-space gradient per Gaussian.
/// On return `state.pgrad` holds `grad` (children inherit their parent's).
inline LfcfStats lfcf_step(GaussianCloud& cloud, std::span<const double> grad, LfcfState& state,
                           const SamplingProfile& profile, const LfcfConfig& cfg,
                           const IterationWindow& window, Rng& rng,
                           Remap* remap_out = nullptr) {
  const std::size_t n = cloud.size();
  if (grad.size() != n || state.size() != n || profile.size() != n || profile.theta.size() != n) {
    throw ParameterError("lfcf_step: grad, state and profile must be aligned with the cloud");
  }
  cfg.validate();
  LfcfStats stats;
  const std::vector<Vec3> factors = lfcf_factor_vectors(cloud, profile.theta, cfg, window);

  StructuralResult res;
  auto keep = [&](const Gaussian& g) {
    if (g.opacity() < cfg.epsilon) {
      ++stats.removed;
      return false;
    }
    return true;
  };
  std::vector<Gaussian> updated(cloud.gaussians().begin(), cloud.gaussians().end());
  for (std::size_t i = 0; i < n; ++i) {
    switch (lfcf_branch(grad[i], state.pgrad[i], cfg.tau)) {
      case LfcfBranch::Untouched:
        ++stats.untouched;
        if (keep(updated[i])) {
          res.map.source.push_back(i);
          res.map.fresh.push_back(0);
        }
        break;
      case LfcfBranch::Expand:
        ++stats.expanded;
        updated[i] = apply_scale_factor(updated[i], factors[i]);
        if (keep(updated[i])) {
          res.map.source.push_back(i);
          res.map.fresh.push_back(0);
        }
        break;
      case LfcfBranch::Shrink: {
        ++stats.shrunk;
        updated[i] = apply_scale_factor(updated[i], factors[i].cwiseInverse());
        const bool do_split = !cfg.strategies.probabilistic ||
                              uniform01(rng) < split_probability(profile.theta[i]);
        if (do_split) {
          ++stats.split;
          for (const auto& child : split_children(updated[i], rng)) {
            if (!keep(child)) continue;
            res.map.source.push_back(i);
            res.map.fresh.push_back(1);
            res.fresh.push_back(child);
          }
        } else if (keep(updated[i])) {
          res.map.source.push_back(i);
          res.map.fresh.push_back(0);
        }
        break;
      }
    }
  }
  // Rebuild from the updated parameters; fresh children are supplied explicitly.
  for (std::size_t i = 0; i < n; ++i) cloud[i] = updated[i];
  cloud.rebuild(res.map, res.fresh);
  state.pgrad = remap_inherit(std::vector<double>(grad.begin(), grad.end()), res.map);
  if (remap_out) *remap_out = std::move(res.map);
  return stats;
}

}  // namespace splatlab
