#pragma once

#include "splatlab/camera.hpp"
#include "splatlab/gaussian.hpp"
#include "splatlab/image.hpp"
#include "splatlab/rasterizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <string>
#include <vector>

namespace splatlab {

/// A camera together with its ground-truth image.
struct View {
  Camera camera;
  Image image;
};

struct InitPoint {
  Vec3 position = Vec3::Zero();
  Vec3 rgb = Vec3::Constant(0.5);
};

struct SceneBundle {
  std::vector<View> train;
  std::vector<View> test;
  std::vector<InitPoint> init_points;
  double extent = 1.0;  // bounding-box diagonal, world units
  Vec3 background = Vec3::Zero();

  CameraSet train_cameras() const {
    CameraSet out;
    for (const auto& v : train) out.push_back(v.camera);
    return out;
  }

  void validate() const {
    if (train.empty()) throw ParameterError("scene: at least one training view required");
    if (!(extent > 0.0)) throw ParameterError("scene: extent must be positive");
    std::set<std::string> ids;
    for (const auto& v : train) ids.insert(v.camera.id);
    for (const auto& v : test) {
      if (ids.count(v.camera.id)) throw ParameterError("scene: camera " + v.camera.id + " is in both splits");
    }
    for (const auto* split : {&train, &test}) {
      for (const auto& v : *split) {
        if (v.image.width != v.camera.width || v.image.height != v.camera.height) {
          throw ParameterError("scene: image size does not match camera " + v.camera.id);
        }
      }
    }
  }

  /// Copy restricted to the first `n` training views (sparse-view setting).
  SceneBundle with_train_subset(std::size_t n) const {
    if (n == 0 || n > train.size()) throw ParameterError("scene: invalid training subset size");
    SceneBundle out = *this;
    out.train.resize(n);
    return out;
  }
};

/// Parameters of the synthetic scene generator.
struct SyntheticSceneSpec {
  std::uint64_t seed = 0;
  int objects = 3;                 // foreground blobs (plus one distant cluster)
  int min_gaussians = 50;
  int max_gaussians = 500;
  int resolution = 128;
  int n_train = 9;
  int n_test = 3;
  double orbit_radius = 4.0;
  double focal_factor = 1.2;       // focal length in units of image width
  double min_elevation_deg = 15.0;
  double max_elevation_deg = 35.0;
  double init_fraction = 0.1;      // share of ground-truth centers kept as seeds
  double init_jitter = 0.002;      // seed jitter as a fraction of extent
  double splat_size = 1.0;         // tangent size relative to the surface spacing
  double flatness = 0.2;           // normal axis relative to the tangent axis
  double texture = 0.25;           // stripe amplitude on the base color
  Vec3 background = Vec3::Zero();

  void validate() const {
    if (n_train < 2) throw ParameterError("scene spec: n_train must be >= 2");
    if (n_test < 1) throw ParameterError("scene spec: n_test must be >= 1");
    if (objects < 1) throw ParameterError("scene spec: objects must be >= 1");
    if (min_gaussians < 1 || max_gaussians < min_gaussians) {
      throw ParameterError("scene spec: require 1 <= min_gaussians <= max_gaussians");
    }
    if (resolution < 16) throw ParameterError("scene spec: resolution must be >= 16");
    if (!(init_fraction > 0.0 && init_fraction <= 1.0)) {
      throw ParameterError("scene spec: init_fraction must lie in (0,1]");
    }
    if (!(splat_size > 0.0) || !(flatness > 0.0) || !(texture >= 0.0)) {
      throw ParameterError("scene spec: splat_size and flatness must be positive, texture >= 0");
    }
    if (!(orbit_radius > 0.0) || !(focal_factor > 0.0)) {
      throw ParameterError("scene spec: orbit_radius and focal_factor must be positive");
    }
  }
};

struct SyntheticScene {
  SceneBundle bundle;
  GaussianCloud ground_truth;
};

/// Orbit slots held out for testing: evenly spread, offset by half a stride.
inline std::vector<int> test_slots(int n_train, int n_test) {
  const int total = n_train + n_test;
  std::vector<int> slots;
  for (int j = 0; j < n_test; ++j) {
    slots.push_back(static_cast<int>(std::floor((j + 0.5) * total / n_test)) % total);
  }
  return slots;
}

namespace detail {

inline Vec3 random_unit(Rng& rng) {
  Vec3 v;
  do {
    for (int k = 0; k < 3; ++k) v[k] = standard_normal(rng);
  } while (v.norm() < 1e-9);
  return v.normalized();
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Surface blob: flattened Gaussians tangent to an ellipsoid, textured with
/// a position-dependent stripe pattern.
inline void add_blob(std::vector<Gaussian>& out, Rng& rng, const Vec3& center,
                     const Vec3& radii, const Vec3& base_rgb, int count,
                     const SyntheticSceneSpec& spec) {
  const Vec3 freq(uniform(rng, 6.0, 12.0), uniform(rng, 6.0, 12.0), uniform(rng, 6.0, 12.0));
  const double area = 4.0 * std::numbers::pi * std::pow(radii.prod(), 2.0 / 3.0);
  const double spacing = std::sqrt(area / count);
  for (int k = 0; k < count; ++k) {
    const Vec3 u = random_unit(rng);
    const Vec3 local = u.cwiseProduct(radii);
    const Vec3 normal = u.cwiseQuotient(radii).normalized();
    Gaussian g;
    g.position = center + local;
    const double tangent = spec.splat_size * spacing * uniform(rng, 0.5, 0.8);
    g.log_scale = Vec3(std::log(tangent), std::log(tangent * uniform(rng, 0.6, 1.0)),
                       std::log(spec.flatness * tangent));
    const double twist = uniform(rng, 0.0, std::numbers::pi);
    const Eigen::Quaterniond align = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), normal);
    const Eigen::Quaterniond q = align * Eigen::Quaterniond(Eigen::AngleAxisd(twist, Vec3::UnitZ()));
    g.rotation = Vec4(q.w(), q.x(), q.y(), q.z());
    g.set_opacity(uniform(rng, 0.75, 0.95));
    const double stripe = std::sin(freq.dot(local) * 3.0);
    Vec3 rgb = base_rgb + spec.texture * stripe * Vec3(1.0, 0.6, -0.4);
    rgb = rgb.cwiseMax(0.05).cwiseMin(0.95);
    g.set_base_rgb(rgb);
    out.push_back(g);
  }
}

}  // namespace detail

/// Builds a seeded ground-truth cloud, an orbit of cameras, target images
/// rendered from the ground truth (8-bit quantized) and jittered seed points.
inline SyntheticScene generate_synthetic_scene(const SyntheticSceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<Gaussian> gaussians;

  const int count_span = spec.max_gaussians - spec.min_gaussians + 1;
  auto draw_count = [&] {
    return spec.min_gaussians + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(count_span)));
  };
  for (int o = 0; o < spec.objects; ++o) {
    const double angle = 2.0 * std::numbers::pi * (o + detail::uniform(rng, -0.15, 0.15)) / spec.objects;
    const double dist = detail::uniform(rng, 0.35, 0.75);
    const Vec3 center(dist * std::cos(angle), detail::uniform(rng, -0.3, 0.4), dist * std::sin(angle));
    const Vec3 radii(detail::uniform(rng, 0.25, 0.45), detail::uniform(rng, 0.25, 0.5),
                     detail::uniform(rng, 0.25, 0.45));
    const Vec3 rgb(detail::uniform(rng, 0.2, 0.9), detail::uniform(rng, 0.2, 0.9),
                   detail::uniform(rng, 0.2, 0.9));
    detail::add_blob(gaussians, rng, center, radii, rgb, draw_count(), spec);
  }
  // Distant cluster: below the orbit center, the farthest region from every
  // camera and hence the lowest sampling rate.
  {
    const Vec3 center(0.0, -1.2, 0.0);
    const Vec3 radii(0.9, 0.12, 0.9);
    const Vec3 rgb(detail::uniform(rng, 0.3, 0.8), detail::uniform(rng, 0.3, 0.8),
                   detail::uniform(rng, 0.3, 0.8));
    detail::add_blob(gaussians, rng, center, radii, rgb, draw_count(), spec);
  }
  GaussianCloud truth(gaussians);

  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  for (const auto& g : truth.gaussians()) {
    lo = lo.cwiseMin(g.position);
    hi = hi.cwiseMax(g.position);
  }

  SyntheticScene scene;
  scene.bundle.extent = (hi - lo).norm();
  scene.bundle.background = spec.background;

  const int total = spec.n_train + spec.n_test;
  const std::vector<int> held_out = test_slots(spec.n_train, spec.n_test);
  const double phase = detail::uniform(rng, 0.0, 2.0 * std::numbers::pi);
  RenderSettings settings;
  settings.background = spec.background;
  settings.threads = 1;
  for (int slot = 0; slot < total; ++slot) {
    const double az = phase + 2.0 * std::numbers::pi * slot / total;
    const double el = detail::uniform(rng, spec.min_elevation_deg, spec.max_elevation_deg) *
                      std::numbers::pi / 180.0;
    const Vec3 eye = spec.orbit_radius *
                     Vec3(std::cos(el) * std::cos(az), std::sin(el), std::cos(el) * std::sin(az));
    const bool is_test = std::find(held_out.begin(), held_out.end(), slot) != held_out.end();
    char id[32];
    std::snprintf(id, sizeof(id), "%s_%02d", is_test ? "test" : "train", slot);
    Camera cam = Camera::look_at(id, eye, Vec3::Zero(), Vec3::UnitY(), spec.resolution,
                                 spec.resolution, spec.focal_factor * spec.resolution);
    cam.near = 0.05;
    cam.far = 4.0 * spec.orbit_radius;
    View view{cam, quantize8(render(truth, cam, settings).rgb)};
    (is_test ? scene.bundle.test : scene.bundle.train).push_back(std::move(view));
  }

  const double jitter = spec.init_jitter * scene.bundle.extent;
  for (const auto& g : truth.gaussians()) {
    if (uniform01(rng) >= spec.init_fraction) continue;
    InitPoint p;
    for (int k = 0; k < 3; ++k) p.position[k] = g.position[k] + jitter * standard_normal(rng);
    p.rgb = g.base_rgb();
    scene.bundle.init_points.push_back(p);
  }
  scene.ground_truth = std::move(truth);
  return scene;
}

inline constexpr double kInitOpacity = 0.1;

/// Seed cloud: isotropic scales from the RMS distance to the 3 nearest
/// neighbours, identity rotation, opacity 0.1.
inline GaussianCloud initial_cloud(std::span<const InitPoint> points, int sh_degree = 0) {
  std::vector<Gaussian> out;
  out.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::array<double, 3> best{1e300, 1e300, 1e300};
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (j == i) continue;
      const double d2 = (points[i].position - points[j].position).squaredNorm();
      if (d2 < best[2]) {
        best[2] = d2;
        std::sort(best.begin(), best.end());
      }
    }
    double mean_d2 = 0.0;
    int found = 0;
    for (double d : best) {
      if (d < 1e300) {
        mean_d2 += d;
        ++found;
      }
    }
    mean_d2 = found ? std::max(mean_d2 / found, 1e-7) : 1e-2;
    Gaussian g;
    g.position = points[i].position;
    g.log_scale = Vec3::Constant(0.5 * std::log(mean_d2));
    g.set_opacity(kInitOpacity);
    g.set_base_rgb(points[i].rgb);
    out.push_back(g);
  }
  return GaussianCloud(std::move(out), sh_degree);
}

enum class NoiseTarget { Coordinates, Scales, Both };

inline constexpr double kPositionNoiseUnit = 0.01;                  // fraction of extent
inline const double kScaleNoiseUnit = 0.5 * std::numbers::ln2;      // log-scale units

/// NI = Init + k n: Gaussian noise of intensity k on coordinates
/// (σ = 1% extent) and/or log-scales (σ = ln 2 / 2).
inline GaussianCloud inject_noise(const GaussianCloud& cloud, NoiseTarget target, double k,
                                  double extent, std::uint64_t seed) {
  if (!(k >= 0.0)) throw ParameterError("inject_noise: intensity must be >= 0");
  GaussianCloud out = cloud;
  if (k == 0.0) return out;
  Rng rng(seed);
  const bool coords = target != NoiseTarget::Scales;
  const bool scales = target != NoiseTarget::Coordinates;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Gaussian& g = out[i];
    for (int a = 0; a < 3; ++a) {
      const double zp = standard_normal(rng);
      const double zs = standard_normal(rng);
      if (coords) g.position[a] += k * kPositionNoiseUnit * extent * zp;
      if (scales) g.log_scale[a] += k * kScaleNoiseUnit * zs;
    }
  }
  return out;
}

inline constexpr double kResampleJitter = 0.005;  // fraction of extent

/// Dense low-quality seeding: every point gets factor-1 jittered duplicates
/// whose RMS offset from the source is 0.5% of the extent.
inline std::vector<InitPoint> resample_init(std::span<const InitPoint> points, int factor,
                                            double extent, std::uint64_t seed) {
  if (factor < 1) throw ParameterError("resample_init: factor must be >= 1");
  std::vector<InitPoint> out(points.begin(), points.end());
  if (factor == 1) return out;
  Rng rng(seed);
  const double sd = kResampleJitter * extent / std::sqrt(3.0);
  for (const auto& p : points) {
    for (int d = 1; d < factor; ++d) {
      InitPoint q = p;
      for (int a = 0; a < 3; ++a) q.position[a] += sd * standard_normal(rng);
      out.push_back(q);
    }
  }
  return out;
}

}  // namespace splatlab
