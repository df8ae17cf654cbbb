#pragma once

#include "splatlab/camera.hpp"
#include "splatlab/gaussian.hpp"
#include "splatlab/image.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <optional>
#include <span>
#include <thread>
#include <vector>

namespace splatlab {

inline constexpr double kScreenDilation = 0.3;      // pixel^2, added to cov2d
inline constexpr double kTransmittanceFloor = 1e-4;
inline constexpr double kMaxAlpha = 0.99999;
inline constexpr double kCutoffPower = -4.5;         // 3 sigma Mahalanobis radius
inline constexpr int kTileSize = 16;

/// Thread count from SPLATLAB_THREADS, else hardware concurrency.
inline int resolve_threads(int requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SPLATLAB_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

struct RenderSettings {
  Vec3 background = Vec3::Zero();
  double guard_band = kDefaultGuardBand;
  /// Optional per-Gaussian isotropic world-space variance added to Σ at
  /// render time (fixed low-pass baseline). Empty means no filter.
  std::span<const double> extra_variance;
  int threads = 0;
};

/// Screen-space footprint of one Gaussian, plus the intermediates that the
/// backward pass needs.
struct ProjectedGaussian {
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Identity();  // includes the +0.3 I dilation
  Mat2 conic = Mat2::Identity();
  double depth = 0.0;
  Vec3 color = Vec3::Zero();
  double alpha = 0.0;
  int radius = 0;

  Vec3 cam_point = Vec3::Zero();
  Mat3 cov3d = Mat3::Identity();
  Mat23 jacobian = Mat23::Zero();
  Vec3 view_dir = Vec3::UnitZ();
  double view_dist = 1.0;
};

/// RGB from band-0 (+ optional band-1) SH along unit view direction `dir`.
inline Vec3 evaluate_color(const Gaussian& g, const Vec3& dir, int sh_degree) {
  Vec3 rgb = (kShC0 * g.color).array() + 0.5;
  if (sh_degree >= 1) {
    for (int ch = 0; ch < 3; ++ch) {
      rgb[ch] += kShC1 * (-dir.y() * g.sh_rest[ch * 3 + 0] +
                          dir.z() * g.sh_rest[ch * 3 + 1] -
                          dir.x() * g.sh_rest[ch * 3 + 2]);
    }
  }
  return rgb;
}

inline Mat3 effective_covariance(const Gaussian& g, double extra_variance) {
  Mat3 sigma = build_covariance(g);
  if (extra_variance > 0.0) sigma.diagonal().array() += extra_variance;
  return sigma;
}

/// First-order EWA projection. Empty when behind the near plane or when the
/// 3σ footprint misses the guard-banded image.
inline std::optional<ProjectedGaussian> project_gaussian(
    const Gaussian& g, const Camera& cam, int sh_degree = 0,
    double extra_variance = 0.0, double guard_band = kDefaultGuardBand) {
  const Vec3 t = cam.rotation * g.position + cam.translation;
  if (!(t.z() > cam.near)) return std::nullopt;

  ProjectedGaussian pg;
  pg.cam_point = t;
  pg.depth = t.z();
  pg.cov3d = effective_covariance(g, extra_variance);

  const double iz = 1.0 / t.z();
  const double iz2 = iz * iz;
  pg.jacobian << cam.fx * iz, 0.0, -cam.fx * t.x() * iz2,
                 0.0, cam.fy * iz, -cam.fy * t.y() * iz2;
  const Mat23 jw = pg.jacobian * cam.rotation;
  pg.cov2d = jw * pg.cov3d * jw.transpose();
  pg.cov2d(0, 0) += kScreenDilation;
  pg.cov2d(1, 1) += kScreenDilation;
  pg.cov2d(0, 1) = pg.cov2d(1, 0) = 0.5 * (pg.cov2d(0, 1) + pg.cov2d(1, 0));

  const double det = pg.cov2d.determinant();
  if (!(det > 0.0)) return std::nullopt;
  pg.conic << pg.cov2d(1, 1) / det, -pg.cov2d(0, 1) / det,
              -pg.cov2d(0, 1) / det, pg.cov2d(0, 0) / det;

  pg.mean2d = Vec2(cam.fx * t.x() * iz + cam.cx, cam.fy * t.y() * iz + cam.cy);

  const double mid = 0.5 * (pg.cov2d(0, 0) + pg.cov2d(1, 1));
  const double lambda_max = mid + std::sqrt(std::max(0.1, mid * mid - det));
  pg.radius = static_cast<int>(std::ceil(3.0 * std::sqrt(lambda_max)));

  const double gx = guard_band * cam.width;
  const double gy = guard_band * cam.height;
  if (pg.mean2d.x() + pg.radius < -gx || pg.mean2d.x() - pg.radius > cam.width + gx ||
      pg.mean2d.y() + pg.radius < -gy || pg.mean2d.y() - pg.radius > cam.height + gy) {
    return std::nullopt;
  }

  const Vec3 v = g.position - cam.center();
  pg.view_dist = v.norm();
  pg.view_dir = pg.view_dist > 0.0 ? Vec3(v / pg.view_dist) : Vec3::UnitZ();
  pg.color = evaluate_color(g, pg.view_dir, sh_degree);
  pg.alpha = g.opacity();
  return pg;
}

struct RenderedImage {
  Image rgb;
  std::vector<double> alpha_accum;  // 1 - residual transmittance per pixel
};

namespace detail {

inline constexpr double kBinMargin = 1e-6;  // pixels

struct Splat {
  double u, v, a, b, c, opacity;
  double r, g, bl;
  std::uint32_t index;
};

struct Frame {
  int width = 0;
  int height = 0;
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<std::optional<ProjectedGaussian>> projected;
  std::vector<Splat> splats;                       // depth order
  std::vector<std::vector<std::uint32_t>> tiles;   // indices into splats
};

inline Frame prepare_frame(const GaussianCloud& cloud, const Camera& cam,
                           const RenderSettings& settings) {
  if (!settings.extra_variance.empty() && settings.extra_variance.size() != cloud.size()) {
    throw ParameterError("render: low-pass variance array is not aligned with the cloud");
  }
  Frame f;
  f.width = cam.width;
  f.height = cam.height;
  f.tiles_x = (cam.width + kTileSize - 1) / kTileSize;
  f.tiles_y = (cam.height + kTileSize - 1) / kTileSize;
  f.projected.resize(cloud.size());
  std::vector<std::uint32_t> order;
  order.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double extra = settings.extra_variance.empty() ? 0.0 : settings.extra_variance[i];
    f.projected[i] = project_gaussian(cloud[i], cam, cloud.sh_degree(), extra, settings.guard_band);
    if (f.projected[i]) order.push_back(static_cast<std::uint32_t>(i));
  }
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return f.projected[a]->depth < f.projected[b]->depth;
  });

  f.tiles.assign(static_cast<std::size_t>(f.tiles_x) * f.tiles_y, {});
  f.splats.reserve(order.size());
  for (std::uint32_t idx : order) {
    const ProjectedGaussian& pg = *f.projected[idx];
    // Bounding box of the cutoff ellipse (Mahalanobis radius 3).
    const double hx = 3.0 * std::sqrt(pg.cov2d(0, 0)) + kBinMargin;
    const double hy = 3.0 * std::sqrt(pg.cov2d(1, 1)) + kBinMargin;
    const int x0 = std::max(0, static_cast<int>(std::floor(pg.mean2d.x() - hx)));
    const int x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(pg.mean2d.x() + hx)));
    const int y0 = std::max(0, static_cast<int>(std::floor(pg.mean2d.y() - hy)));
    const int y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(pg.mean2d.y() + hy)));
    if (x0 > x1 || y0 > y1) continue;
    const auto splat_id = static_cast<std::uint32_t>(f.splats.size());
    f.splats.push_back(Splat{pg.mean2d.x(), pg.mean2d.y(), pg.conic(0, 0), pg.conic(0, 1),
                             pg.conic(1, 1), pg.alpha, pg.color[0], pg.color[1],
                             pg.color[2], idx});
    for (int ty = y0 / kTileSize; ty <= y1 / kTileSize; ++ty) {
      for (int tx = x0 / kTileSize; tx <= x1 / kTileSize; ++tx) {
        f.tiles[static_cast<std::size_t>(ty) * f.tiles_x + tx].push_back(splat_id);
      }
    }
  }
  return f;
}

struct Contribution {
  std::uint32_t splat;
  std::uint32_t saturated;  // alpha hit kMaxAlpha
  double alpha;
  double transmittance;     // before this splat
};

/// A splat prepared for one pixel row: power = (qa dx + qb) dx + qc with
/// dx = x - u, and [lo, hi] bounds the x positions that can pass the cutoff.
struct RowSplat {
  double lo, hi;
  double u, qa, qb, qc;
  double opacity, r, g, bl;
  std::uint32_t splat;
};

/// Splats of `list`, in order, whose cutoff ellipse crosses row `py`
/// somewhere in [x_lo, x_hi].
inline void row_candidates(const Frame& f, std::span<const std::uint32_t> list, double py,
                           double x_lo, double x_hi, std::vector<RowSplat>& out) {
  constexpr double q_max = -2.0 * kCutoffPower;
  out.clear();
  for (std::uint32_t sid : list) {
    const Splat& s = f.splats[sid];
    const double dy = py - s.v;
    const double bdy = s.b * dy;
    const double disc = bdy * bdy - s.a * (s.c * dy * dy - q_max);
    if (disc < -1e-9 * s.a) continue;
    const double root = std::sqrt(std::max(disc, 0.0));
    const double lo = s.u + (-bdy - root) / s.a - kBinMargin;
    const double hi = s.u + (-bdy + root) / s.a + kBinMargin;
    if (hi < x_lo || lo > x_hi) continue;
    out.push_back(RowSplat{lo, hi, s.u, -0.5 * s.a, -bdy, -0.5 * s.c * dy * dy, s.opacity, s.r,
                           s.g, s.bl, sid});
  }
}

/// Front-to-back compositing of one pixel of a prepared row. Fills
/// `contribs` when non-null and returns the final transmittance.
inline double composite_pixel(std::span<const RowSplat> row, double px, double out[3],
                              std::vector<Contribution>* contribs) {
  double t = 1.0;
  out[0] = out[1] = out[2] = 0.0;
  for (const RowSplat& s : row) {
    if (px < s.lo || px > s.hi) continue;
    const double dx = px - s.u;
    const double power = (s.qa * dx + s.qb) * dx + s.qc;
    if (power < kCutoffPower || power > 0.0) continue;
    double alpha = s.opacity * std::exp(power);
    std::uint32_t saturated = 0;
    if (alpha > kMaxAlpha) {
      alpha = kMaxAlpha;
      saturated = 1;
    }
    const double w = alpha * t;
    out[0] += w * s.r;
    out[1] += w * s.g;
    out[2] += w * s.bl;
    if (contribs) contribs->push_back(Contribution{s.splat, saturated, alpha, t});
    t *= 1.0 - alpha;
    if (t < kTransmittanceFloor) break;
  }
  return t;
}

template <class Fn>
void for_each_tile(const Frame& f, int threads, Fn&& fn) {
  const int n_tiles = f.tiles_x * f.tiles_y;
  threads = std::max(1, std::min(threads, n_tiles));
  if (threads == 1) {
    for (int tile = 0; tile < n_tiles; ++tile) fn(0, tile);
    return;
  }
  std::vector<std::thread> pool;
  for (int k = 0; k < threads; ++k) {
    pool.emplace_back([&, k] {
      for (int tile = k; tile < n_tiles; tile += threads) fn(k, tile);
    });
  }
  for (auto& th : pool) th.join();
}

/// Per-pixel compositing record kept by a forward pass for its backward pass.
struct ForwardRecords {
  std::vector<std::vector<Contribution>> tile_contribs;
  std::vector<std::uint32_t> pixel_begin;  // offset into the pixel's tile vector
  std::vector<std::uint32_t> pixel_count;
  std::vector<double> pixel_value;         // unclamped rgb, 3 per pixel
  bool valid = false;
};

inline RenderedImage render_frame(const Frame& f, const Camera& cam,
                                  const RenderSettings& settings,
                                  ForwardRecords* rec = nullptr) {
  RenderedImage out;
  out.rgb = Image(cam.width, cam.height);
  out.alpha_accum.assign(out.rgb.pixel_count(), 0.0);
  const Vec3 bg = settings.background;
  if (rec) {
    // Inner buffers keep their capacity from earlier frames.
    rec->tile_contribs.resize(static_cast<std::size_t>(f.tiles_x) * f.tiles_y);
    for (auto& v : rec->tile_contribs) v.clear();
    rec->pixel_begin.assign(out.rgb.pixel_count(), 0);
    rec->pixel_count.assign(out.rgb.pixel_count(), 0);
    rec->pixel_value.assign(out.rgb.pixel_count() * 3, 0.0);
  }

  for_each_tile(f, resolve_threads(settings.threads), [&](int, int tile) {
    const int tx = tile % f.tiles_x;
    const int ty = tile / f.tiles_x;
    const auto& list = f.tiles[tile];
    std::vector<Contribution>* contribs = rec ? &rec->tile_contribs[tile] : nullptr;
    std::vector<RowSplat> row;
    const int xe = std::min(f.width, (tx + 1) * kTileSize);
    for (int y = ty * kTileSize; y < std::min(f.height, (ty + 1) * kTileSize); ++y) {
      row_candidates(f, list, y, tx * kTileSize, xe - 1, row);
      for (int x = tx * kTileSize; x < xe; ++x) {
        const std::size_t pix = static_cast<std::size_t>(y) * f.width + x;
        const std::size_t begin = contribs ? contribs->size() : 0;
        double c[3];
        const double t = composite_pixel(row, x, c, contribs);
        for (int ch = 0; ch < 3; ++ch) {
          const double value = c[ch] + t * bg[ch];
          out.rgb.at(x, y, ch) = std::clamp(value, 0.0, 1.0);
          if (rec) rec->pixel_value[pix * 3 + ch] = value;
        }
        out.alpha_accum[pix] = std::clamp(1.0 - t, 0.0, 1.0);
        if (rec) {
          rec->pixel_begin[pix] = static_cast<std::uint32_t>(begin);
          rec->pixel_count[pix] = static_cast<std::uint32_t>(contribs->size() - begin);
        }
      }
    }
  });
  if (rec) rec->valid = true;
  return out;
}

}  // namespace detail

/// Renders the cloud front-to-back with per-tile depth-sorted lists.
inline RenderedImage render(const GaussianCloud& cloud, const Camera& cam,
                            const RenderSettings& settings = {}) {
  return detail::render_frame(detail::prepare_frame(cloud, cam, settings), cam, settings);
}

/// Per-Gaussian gradients of a scalar loss through one render call.
struct RenderGradients {
  std::vector<ParamVector> params;
  /// ‖∂L/∂mean2d‖ in normalized device units (pixel gradient scaled by W/2, H/2).
  std::vector<double> screen_grad_norm;
  std::vector<std::uint8_t> visible;
};

namespace detail {

inline RenderGradients backward_frame(const Frame& f, const GaussianCloud& cloud,
                                      const Camera& cam, const Image& grad_rgb,
                                      const RenderSettings& settings,
                                      const ForwardRecords* rec = nullptr) {
  if (grad_rgb.width != cam.width || grad_rgb.height != cam.height) {
    throw ParameterError("render_backward: gradient image does not match camera size");
  }
  const std::size_t n = cloud.size();
  const Vec3 bg = settings.background;

  // Per-splat screen-space accumulators: du, dv, dK00, dK01, dK11, dopacity, dr, dg, db.
  constexpr int kAcc = 9;
  // Accumulated per tile, then reduced in tile order, so results do not
  // depend on the thread count.
  const int threads = std::max(1, std::min(resolve_threads(settings.threads), f.tiles_x * f.tiles_y));
  std::vector<std::vector<double>> tile_acc(f.tiles.size());
  std::vector<std::vector<std::uint32_t>> slot(threads);

  for_each_tile(f, threads, [&](int worker, int tile) {
    std::vector<Contribution> scratch;
    std::vector<RowSplat> row;
    const int tx = tile % f.tiles_x;
    const int ty = tile / f.tiles_x;
    const auto& list = f.tiles[tile];
    if (list.empty()) return;
    tile_acc[tile].assign(list.size() * kAcc, 0.0);
    auto& where = slot[worker];
    if (where.empty()) where.resize(f.splats.size());
    for (std::size_t j = 0; j < list.size(); ++j) where[list[j]] = static_cast<std::uint32_t>(j);
    double* a = tile_acc[tile].data();
    const int xe = std::min(f.width, (tx + 1) * kTileSize);
    for (int y = ty * kTileSize; y < std::min(f.height, (ty + 1) * kTileSize); ++y) {
      if (!rec) row_candidates(f, list, y, tx * kTileSize, xe - 1, row);
      for (int x = tx * kTileSize; x < xe; ++x) {
        const std::size_t pix = static_cast<std::size_t>(y) * f.width + x;
        std::span<const Contribution> contribs;
        double value[3];
        if (rec) {
          contribs = std::span<const Contribution>(rec->tile_contribs[tile])
                         .subspan(rec->pixel_begin[pix], rec->pixel_count[pix]);
          for (int ch = 0; ch < 3; ++ch) value[ch] = rec->pixel_value[pix * 3 + ch];
        } else {
          scratch.clear();
          double c[3];
          const double t_final = composite_pixel(row, x, c, &scratch);
          for (int ch = 0; ch < 3; ++ch) value[ch] = c[ch] + t_final * bg[ch];
          contribs = scratch;
        }
        double g[3];
        bool any = false;
        for (int ch = 0; ch < 3; ++ch) {
          g[ch] = (value[ch] < 0.0 || value[ch] > 1.0) ? 0.0 : grad_rgb.at(x, y, ch);
          any = any || g[ch] != 0.0;
        }
        if (!any) continue;
        // Color seen from directly behind the current splat.
        double behind[3] = {bg[0], bg[1], bg[2]};
        for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
          const Splat& s = f.splats[it->splat];
          double* sa = a + static_cast<std::size_t>(where[it->splat]) * kAcc;
          const double w = it->alpha * it->transmittance;
          sa[6] += w * g[0];
          sa[7] += w * g[1];
          sa[8] += w * g[2];
          const double col[3] = {s.r, s.g, s.bl};
          double d_alpha = 0.0;
          for (int ch = 0; ch < 3; ++ch) {
            d_alpha += it->transmittance * (col[ch] - behind[ch]) * g[ch];
            behind[ch] = it->alpha * col[ch] + (1.0 - it->alpha) * behind[ch];
          }
          if (it->saturated) continue;
          sa[5] += d_alpha * it->alpha / s.opacity;
          const double d_power = d_alpha * it->alpha;
          const double dx = x - s.u;
          const double dy = y - s.v;
          // power = -0.5 dᵀ K d with d = pixel - mean
          sa[0] += d_power * (s.a * dx + s.b * dy);
          sa[1] += d_power * (s.b * dx + s.c * dy);
          sa[2] += -0.5 * d_power * dx * dx;
          sa[3] += -0.5 * d_power * dx * dy;  // per off-diagonal entry
          sa[4] += -0.5 * d_power * dy * dy;
        }
      }
    }
  });
  std::vector<double> acc(f.splats.size() * kAcc, 0.0);
  for (std::size_t tile = 0; tile < f.tiles.size(); ++tile) {
    const auto& list = f.tiles[tile];
    for (std::size_t j = 0; j < list.size(); ++j) {
      double* dst = acc.data() + static_cast<std::size_t>(list[j]) * kAcc;
      const double* src = tile_acc[tile].data() + j * kAcc;
      for (int k = 0; k < kAcc; ++k) dst[k] += src[k];
    }
  }

  RenderGradients out;
  out.params.assign(n, ParamVector{});
  out.screen_grad_norm.assign(n, 0.0);
  out.visible.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (f.projected[i]) out.visible[i] = 1;
  }

  const Mat3& w_rot = cam.rotation;
  for (std::size_t sid = 0; sid < f.splats.size(); ++sid) {
    const double* sa = acc.data() + sid * kAcc;
    const std::size_t gi = f.splats[sid].index;
    const Gaussian& gs = cloud[gi];
    const ProjectedGaussian& pg = *f.projected[gi];
    ParamVector& dp = out.params[gi];

    out.screen_grad_norm[gi] = std::hypot(sa[0] * 0.5 * cam.width, sa[1] * 0.5 * cam.height);

    // Opacity.
    const double o = pg.alpha;
    dp[kOpacityOffset] = sa[5] * o * (1.0 - o);

    // Color (band 0 and band 1).
    const Vec3 d_rgb(sa[6], sa[7], sa[8]);
    for (int ch = 0; ch < 3; ++ch) dp[kColorOffset + ch] = kShC0 * d_rgb[ch];
    Vec3 d_pos = Vec3::Zero();
    if (cloud.sh_degree() >= 1) {
      const Vec3& dir = pg.view_dir;
      Vec3 d_dir = Vec3::Zero();
      for (int ch = 0; ch < 3; ++ch) {
        dp[kShRestOffset + ch * 3 + 0] = -kShC1 * dir.y() * d_rgb[ch];
        dp[kShRestOffset + ch * 3 + 1] = kShC1 * dir.z() * d_rgb[ch];
        dp[kShRestOffset + ch * 3 + 2] = -kShC1 * dir.x() * d_rgb[ch];
        d_dir.x() += -kShC1 * gs.sh_rest[ch * 3 + 2] * d_rgb[ch];
        d_dir.y() += -kShC1 * gs.sh_rest[ch * 3 + 0] * d_rgb[ch];
        d_dir.z() += kShC1 * gs.sh_rest[ch * 3 + 1] * d_rgb[ch];
      }
      d_pos += (Mat3::Identity() - dir * dir.transpose()) * d_dir / pg.view_dist;
    }

    // Conic -> 2D covariance: dL/dM = -K (dL/dK) K.
    Mat2 d_conic;
    d_conic << sa[2], sa[3], sa[3], sa[4];
    const Mat2 d_cov2d = -pg.conic * d_conic * pg.conic;

    // 2D covariance -> 3D covariance and the projection Jacobian.
    const Mat23 jw = pg.jacobian * w_rot;
    const Mat3 d_sigma = jw.transpose() * d_cov2d * jw;
    const Mat23 d_jw = 2.0 * d_cov2d * jw * pg.cov3d;
    const Mat23 d_j = d_jw * w_rot.transpose();

    // Camera-space point gradient from the mean and the Jacobian.
    const Vec3& t = pg.cam_point;
    const double iz = 1.0 / t.z();
    const double iz2 = iz * iz;
    const double iz3 = iz2 * iz;
    const double fx = cam.fx, fy = cam.fy;
    Vec3 d_t;
    d_t.x() = sa[0] * fx * iz + d_j(0, 2) * (-fx * iz2);
    d_t.y() = sa[1] * fy * iz + d_j(1, 2) * (-fy * iz2);
    d_t.z() = sa[0] * (-fx * t.x() * iz2) + sa[1] * (-fy * t.y() * iz2) +
              d_j(0, 0) * (-fx * iz2) + d_j(0, 2) * (2.0 * fx * t.x() * iz3) +
              d_j(1, 1) * (-fy * iz2) + d_j(1, 2) * (2.0 * fy * t.y() * iz3);
    d_pos += w_rot.transpose() * d_t;
    for (int k = 0; k < 3; ++k) dp[kPosOffset + k] = d_pos[k];

    // Σ = (R S)(R S)ᵀ -> log scales and quaternion.
    const double qnorm = gs.rotation.norm();
    const Vec4 qn = gs.rotation / qnorm;
    const Mat3 rot = rotation_matrix(qn);
    const Vec3 s = gs.scale();
    const Mat3 m = rot * s.asDiagonal();
    const Mat3 d_m = 2.0 * d_sigma * m;
    Mat3 d_rot;
    for (int k = 0; k < 3; ++k) {
      dp[kScaleOffset + k] = rot.col(k).dot(d_m.col(k)) * s[k];
      d_rot.col(k) = d_m.col(k) * s[k];
    }
    const double qw = qn[0], qx = qn[1], qy = qn[2], qz = qn[3];
    const Mat3& gr = d_rot;
    Vec4 d_qn;
    d_qn[0] = 2.0 * (-qz * gr(0, 1) + qy * gr(0, 2) + qz * gr(1, 0) - qx * gr(1, 2) -
                     qy * gr(2, 0) + qx * gr(2, 1));
    d_qn[1] = 2.0 * (qy * gr(0, 1) + qz * gr(0, 2) + qy * gr(1, 0) - 2.0 * qx * gr(1, 1) -
                     qw * gr(1, 2) + qz * gr(2, 0) + qw * gr(2, 1) - 2.0 * qx * gr(2, 2));
    d_qn[2] = 2.0 * (-2.0 * qy * gr(0, 0) + qx * gr(0, 1) + qw * gr(0, 2) + qx * gr(1, 0) +
                     qz * gr(1, 2) - qw * gr(2, 0) + qz * gr(2, 1) - 2.0 * qy * gr(2, 2));
    d_qn[3] = 2.0 * (-2.0 * qz * gr(0, 0) - qw * gr(0, 1) + qx * gr(0, 2) + qw * gr(1, 0) -
                     2.0 * qz * gr(1, 1) + qy * gr(1, 2) + qx * gr(2, 0) + qy * gr(2, 1));
    const Vec4 d_q = (d_qn - qn * qn.dot(d_qn)) / qnorm;
    for (int k = 0; k < 4; ++k) dp[kRotOffset + k] = d_q[k];
  }
  return out;
}

}  // namespace detail

/// Analytic backward pass of render() for upstream per-pixel gradients.
inline RenderGradients render_backward(const GaussianCloud& cloud, const Camera& cam,
                                       const Image& grad_rgb,
                                       const RenderSettings& settings = {}) {
  return detail::backward_frame(detail::prepare_frame(cloud, cam, settings), cloud, cam,
                                grad_rgb, settings);
}

/// Forward and backward over one shared projection/tiling of the cloud.
/// The cloud and settings must outlive the pass and stay unmodified.
class RenderPass {
 public:
  /// `scratch`, when given, holds the contribution records so repeated passes
  /// reuse its buffers; it must outlive the pass.
  RenderPass(const GaussianCloud& cloud, const Camera& cam, const RenderSettings& settings,
             detail::ForwardRecords* scratch = nullptr)
      : cloud_(cloud), cam_(cam), settings_(settings),
        frame_(detail::prepare_frame(cloud, cam, settings)),
        records_(scratch ? scratch : &own_records_) {
    records_->valid = false;
  }

  /// Renders and records per-pixel contributions for backward().
  RenderedImage forward() { return detail::render_frame(frame_, cam_, settings_, records_); }

  RenderGradients backward(const Image& grad_rgb) const {
    return detail::backward_frame(frame_, cloud_, cam_, grad_rgb, settings_,
                                  records_->valid ? records_ : nullptr);
  }

 private:
  const GaussianCloud& cloud_;
  const Camera& cam_;
  RenderSettings settings_;
  detail::Frame frame_;
  detail::ForwardRecords own_records_;
  detail::ForwardRecords* records_;
};

/// Image size at which the NDC gradient statistic is used unscaled.
inline constexpr double kGradientReferenceResolution = 800.0;

/// Resolution factor for the gradient statistic: NDC gradients scale with the
/// world size of a footprint, so max(W,H)/800 keeps the densification
/// threshold tied to a fixed pixel footprint.
inline double gradient_resolution_scale(const Camera& cam) {
  return std::max(cam.width, cam.height) / kGradientReferenceResolution;
}

/// Adds one view's screen-space gradient norms, times `scale`, to the cloud's
/// densification statistics (visible Gaussians only).
inline void accumulate_statistics(GaussianCloud& cloud, const RenderGradients& grads,
                                  double scale = 1.0) {
  if (grads.visible.size() != cloud.size()) {
    throw ParameterError("accumulate_statistics: gradients not aligned with cloud");
  }
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (grads.visible[i]) cloud.accumulate(i, scale * grads.screen_grad_norm[i]);
  }
}

/// Fixed 3D low-pass filter: Σ' = Σ + (κ/ν̂)² I, applied at render time only.
struct LowpassFilter {
  std::vector<double> extra_variance;
  std::vector<std::uint8_t> unobserved;
};

inline constexpr double kDefaultLowpassKappa = 0.2;

inline LowpassFilter apply_lowpass_baseline(const GaussianCloud& cloud,
                                            std::span<const double> rates,
                                            double kappa = kDefaultLowpassKappa) {
  if (rates.size() != cloud.size()) {
    throw ParameterError("apply_lowpass_baseline: rates not aligned with cloud");
  }
  LowpassFilter filter;
  filter.extra_variance.assign(cloud.size(), 0.0);
  filter.unobserved.assign(cloud.size(), 0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (rates[i] > 0.0 && std::isfinite(rates[i])) {
      const double sd = kappa / rates[i];
      filter.extra_variance[i] = sd * sd;
    } else if (!(rates[i] > 0.0)) {
      filter.unobserved[i] = 1;
    }
  }
  return filter;
}

}  // namespace splatlab
