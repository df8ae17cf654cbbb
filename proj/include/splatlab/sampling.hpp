#pragma once

#include "splatlab/camera.hpp"
#include "splatlab/gaussian.hpp"

#include <algorithm>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace splatlab {

/// Maximal sampling rate of a point: max over cameras of 1_k(p) * f_k / d_k,
/// with f_k = max(fx, fy). Zero when no camera sees the point.
inline double sampling_rate(const Vec3& p, std::span<const Camera> cams,
                            double guard_band = kDefaultGuardBand) {
  if (cams.empty()) throw ParameterError("sampling_rate: empty camera set");
  double best = 0.0;
  for (const auto& cam : cams) {
    if (!is_visible(cam, p, guard_band)) continue;
    const double depth = project_point(cam, p).depth;
    best = std::max(best, cam.focal() / depth);
  }
  return best;
}

/// Sampling interval 1/ν; empty for an unobserved point (ν <= 0).
inline std::optional<double> sampling_interval(double rate) {
  if (!(rate > 0.0)) return std::nullopt;
  return 1.0 / rate;
}

enum class OptimizationClass { OverOptimized, UnderOptimized };

inline const char* to_string(OptimizationClass c) {
  return c == OptimizationClass::OverOptimized ? "over" : "under";
}

/// Over-optimized iff the largest axis scale strictly exceeds the interval.
inline OptimizationClass classify(const Gaussian& g, double interval) {
  return g.scale().maxCoeff() > interval ? OptimizationClass::OverOptimized
                                         : OptimizationClass::UnderOptimized;
}

/// Min-max normalization of sampling rates to [0, 1]; unobserved entries
/// (rate 0) take part in the range. A degenerate range maps everything to 0.5.
inline std::vector<double> theta_factors(std::span<const double> rates) {
  std::vector<double> theta(rates.size(), 0.5);
  if (rates.empty()) return theta;
  const auto [lo, hi] = std::minmax_element(rates.begin(), rates.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return theta;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    theta[i] = std::clamp((rates[i] - *lo) / range, 0.0, 1.0);
  }
  return theta;
}

/// Per-Gaussian sampling rate, interval and interpolation factor.
struct SamplingProfile {
  std::vector<double> rate;
  std::vector<double> interval;  // 1/rate; +inf for unobserved Gaussians
  std::vector<double> theta;

  std::size_t size() const { return rate.size(); }
  bool observed(std::size_t i) const { return rate[i] > 0.0; }
};

inline SamplingProfile compute_sampling_profile(const GaussianCloud& cloud,
                                                std::span<const Camera> cams,
                                                double guard_band = kDefaultGuardBand) {
  SamplingProfile prof;
  prof.rate.resize(cloud.size());
  prof.interval.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    prof.rate[i] = sampling_rate(cloud[i].position, cams, guard_band);
    prof.interval[i] = sampling_interval(prof.rate[i]).value_or(
        std::numeric_limits<double>::infinity());
  }
  prof.theta = theta_factors(prof.rate);
  return prof;
}

}  // namespace splatlab
