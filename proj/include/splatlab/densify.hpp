#pragma once

#include "splatlab/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace splatlab {

inline constexpr double kSplitScaleDivisor = 1.6;  // 0.8 * 2 children
inline constexpr int kSplitChildren = 2;

struct DensifyConfig {
  double grad_threshold = 2e-4;
  double opacity_threshold = 0.005;
  double percent_dense = 0.01;  // clone/split boundary as a fraction of extent
  std::size_t max_gaussians = 200000;
};

struct DensifyStats {
  std::size_t cloned = 0;
  std::size_t split = 0;
  std::size_t pruned = 0;
};

struct StructuralResult {
  Remap map;
  std::vector<Gaussian> fresh;  // values for entries flagged fresh, in order
};

/// Children of a split: positions drawn from the parent density, scales
/// divided by 1.6, everything else copied.
inline std::vector<Gaussian> split_children(const Gaussian& parent, Rng& rng) {
  const Mat3 rot = rotation_matrix(normalized_rotation(parent.rotation));
  const Vec3 s = parent.scale();
  std::vector<Gaussian> out;
  out.reserve(kSplitChildren);
  for (int k = 0; k < kSplitChildren; ++k) {
    Vec3 z;
    for (int a = 0; a < 3; ++a) z[a] = standard_normal(rng);
    Gaussian child = parent;
    child.position = parent.position + rot * s.cwiseProduct(z);
    child.log_scale = parent.log_scale.array() - std::log(kSplitScaleDivisor);
    out.push_back(child);
  }
  return out;
}

/// Clone small / split large Gaussians whose averaged screen-space gradient
/// exceeds the threshold, then drop those below the opacity threshold.
/// Gradient statistics of the cloud are reset.
inline DensifyStats densify_and_prune(GaussianCloud& cloud, std::span<const double> grads,
                                      const DensifyConfig& cfg, double extent, Rng& rng,
                                      Remap* remap_out = nullptr) {
  if (grads.size() != cloud.size()) {
    throw ParameterError("densify_and_prune: gradient array not aligned with cloud");
  }
  DensifyStats stats;
  const std::size_t n = cloud.size();
  const double size_limit = cfg.percent_dense * extent;

  std::vector<std::uint8_t> split_parent(n, 0);
  std::vector<std::size_t> clone_src;
  std::vector<std::size_t> split_src;
  std::vector<Gaussian> split_kids;
  std::size_t budget = cfg.max_gaussians > n ? cfg.max_gaussians - n : 0;

  for (std::size_t i = 0; i < n; ++i) {
    if (!(grads[i] > cfg.grad_threshold)) continue;
    const bool small = cloud[i].scale().maxCoeff() <= size_limit;
    if (small) {
      if (budget < 1) continue;
      clone_src.push_back(i);
      budget -= 1;
    } else {
      if (budget < kSplitChildren - 1) continue;
      split_parent[i] = 1;
      for (const auto& child : split_children(cloud[i], rng)) {
        split_src.push_back(i);
        split_kids.push_back(child);
      }
      budget -= kSplitChildren - 1;
    }
  }
  stats.cloned = clone_src.size();
  stats.split = split_kids.size() / kSplitChildren;

  // Survivors in order, then clones, then split children; prune by opacity.
  StructuralResult res;
  auto keep = [&](const Gaussian& g) {
    if (g.opacity() < cfg.opacity_threshold) {
      ++stats.pruned;
      return false;
    }
    return true;
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (split_parent[i] || !keep(cloud[i])) continue;
    res.map.source.push_back(i);
    res.map.fresh.push_back(0);
  }
  for (std::size_t i : clone_src) {
    if (!keep(cloud[i])) continue;
    res.map.source.push_back(i);
    res.map.fresh.push_back(1);
    res.fresh.push_back(cloud[i]);
  }
  for (std::size_t k = 0; k < split_kids.size(); ++k) {
    if (!keep(split_kids[k])) continue;
    res.map.source.push_back(split_src[k]);
    res.map.fresh.push_back(1);
    res.fresh.push_back(split_kids[k]);
  }
  cloud.rebuild(res.map, res.fresh);
  cloud.reset_statistics();
  if (remap_out) *remap_out = std::move(res.map);
  return stats;
}

}  // namespace splatlab
