#pragma once

#include "splatlab/rasterizer.hpp"
#include "splatlab/sampling.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace splatlab::testing {

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline Vec4 random_quaternion(Rng& rng) {
  Vec4 q;
  for (int i = 0; i < 4; ++i) q[i] = standard_normal(rng);
  return q / q.norm();
}

inline Gaussian random_gaussian(Rng& rng, double spread = 1.0) {
  Gaussian g;
  for (int a = 0; a < 3; ++a) g.position[a] = uniform(rng, -spread, spread);
  for (int a = 0; a < 3; ++a) g.log_scale[a] = uniform(rng, -2.5, 0.5);
  g.rotation = random_quaternion(rng) * uniform(rng, 0.5, 2.0);
  g.opacity_logit = uniform(rng, -3.0, 3.0);
  for (int a = 0; a < 3; ++a) g.color[a] = uniform(rng, -1.5, 1.5);
  for (int k = 0; k < kShRestCount; ++k) g.sh_rest[k] = uniform(rng, -0.4, 0.4);
  return g;
}

/// A small scene: one camera looking down +z from the origin and up to
/// `max_gaussians` Gaussians in front of it.
struct GradientScene {
  GaussianCloud cloud;
  Camera camera;
  RenderSettings settings;
  Image upstream;  // dL/d(pixel) of the scalar test loss
};

inline GradientScene random_gradient_scene(std::uint64_t seed, int max_gaussians = 20, int size = 32) {
  Rng rng(seed);
  GradientScene s;
  s.camera.id = "cam";
  s.camera.width = size;
  s.camera.height = size;
  s.camera.fx = uniform(rng, 0.9, 1.3) * size;
  s.camera.fy = uniform(rng, 0.9, 1.3) * size;
  s.camera.cx = size / 2.0 + uniform(rng, -2.0, 2.0);
  s.camera.cy = size / 2.0 + uniform(rng, -2.0, 2.0);
  s.camera.rotation = Mat3::Identity();
  s.camera.translation = Vec3::Zero();
  s.camera.near = 0.1;
  s.camera.far = 100.0;
  const int n = 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(max_gaussians)));
  std::vector<Gaussian> gs;
  for (int i = 0; i < n; ++i) {
    Gaussian g;
    const double z = uniform(rng, 2.0, 5.0);
    g.position = Vec3(uniform(rng, -0.35, 0.35) * z, uniform(rng, -0.35, 0.35) * z, z);
    for (int a = 0; a < 3; ++a) g.log_scale[a] = std::log(uniform(rng, 0.05, 0.4));
    g.rotation = random_quaternion(rng) * uniform(rng, 0.7, 1.4);
    g.opacity_logit = uniform(rng, -2.0, 1.5);
    for (int a = 0; a < 3; ++a) g.color[a] = uniform(rng, -1.2, 1.2);
    for (int k = 0; k < kShRestCount; ++k) g.sh_rest[k] = uniform(rng, -0.3, 0.3);
    gs.push_back(g);
  }
  const int degree = uniform01(rng) < 0.5 ? 0 : 1;
  s.cloud = GaussianCloud(std::move(gs), degree);
  s.settings.background = Vec3::Constant(uniform(rng, 0.0, 0.3));
  s.settings.threads = 1;
  s.upstream = Image(size, size);
  for (auto& v : s.upstream.data) v = uniform(rng, -1.0, 1.0);
  return s;
}

/// Scalar test loss: sum of upstream-weighted pixel values.
inline double weighted_sum(const GaussianCloud& cloud, const GradientScene& s) {
  const Image img = render(cloud, s.camera, s.settings).rgb;
  double sum = 0.0;
  for (std::size_t i = 0; i < img.data.size(); ++i) sum += s.upstream.data[i] * img.data[i];
  return sum;
}

struct GradientMismatch {
  std::size_t gaussian = 0;
  int param = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradientCheck {
  std::size_t checked = 0;
  std::vector<GradientMismatch> mismatches;
  double worst_ratio = 0.0;  // max |a - fd| / allowed
};

/// Compares render_backward with central differences of weighted_sum for
/// every active parameter: |a - fd| <= max(abs_floor, rel * max(|a|, |fd|)).
inline GradientCheck check_gradients(const GradientScene& s, double rel = 1e-3, double abs_floor = 1e-6,
                                     double h = 1e-7) {
  GradientCheck out;
  const RenderGradients grads = render_backward(s.cloud, s.camera, s.upstream, s.settings);
  const int active = s.cloud.sh_degree() >= 1 ? kNumParams : kShRestOffset;
  for (std::size_t i = 0; i < s.cloud.size(); ++i) {
    for (int k = 0; k < active; ++k) {
      GaussianCloud plus = s.cloud, minus = s.cloud;
      ParamVector p = pack(s.cloud[i]);
      const double step = h * std::max(1.0, std::abs(p[k]));
      p[k] += step;
      plus[i] = unpack(p);
      p[k] -= 2.0 * step;
      minus[i] = unpack(p);
      const double fd = (weighted_sum(plus, s) - weighted_sum(minus, s)) / (2.0 * step);
      const double a = grads.params[i][k];
      const double allowed = std::max(abs_floor, rel * std::max(std::abs(a), std::abs(fd)));
      const double ratio = std::abs(a - fd) / allowed;
      out.worst_ratio = std::max(out.worst_ratio, ratio);
      ++out.checked;
      if (ratio > 1.0) out.mismatches.push_back({i, k, a, fd});
    }
  }
  return out;
}

inline std::string param_name(int k) {
  static const char* names[] = {"px", "py", "pz", "ls0", "ls1", "ls2", "qw", "qx",
                                "qy", "qz", "opacity", "c0", "c1", "c2"};
  if (k < kShRestOffset) return names[k];
  return "sh" + std::to_string(k - kShRestOffset);
}

inline Mat3 random_spd(Rng& rng) { return build_covariance(random_gaussian(rng)); }

inline Camera random_camera(Rng& rng, int k) {
  const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double r = uniform(rng, 1.0, 6.0);
  const Vec3 eye(r * std::cos(theta), uniform(rng, -2.0, 2.0), r * std::sin(theta));
  const Vec3 target(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5));
  Camera cam = Camera::look_at("k" + std::to_string(k), eye, target, Vec3::UnitY(),
                               64 + static_cast<int>(uniform_index(rng, 64)),
                               48 + static_cast<int>(uniform_index(rng, 64)), uniform(rng, 20.0, 200.0));
  cam.fy = cam.fx * uniform(rng, 0.8, 1.25);
  cam.near = uniform(rng, 0.05, 1.0);
  cam.far = uniform(rng, 3.0, 10.0);
  return cam;
}

// Independent oracle: explicit pinhole arithmetic per camera.
inline double brute_force_rate(const Vec3& p, const CameraSet& cams, double guard) {
  double best = 0.0;
  for (const Camera& c : cams) {
    const Vec3 x = c.rotation * p + c.translation;
    const double z = x[2];
    if (!(z > 0.0) || z < c.near || z > c.far) continue;
    const double u = c.fx * x[0] / z + c.cx, v = c.fy * x[1] / z + c.cy;
    if (u < -guard * c.width || u > (1 + guard) * c.width) continue;
    if (v < -guard * c.height || v > (1 + guard) * c.height) continue;
    const double ratio = (c.fx > c.fy ? c.fx : c.fy) / z;
    if (ratio > best) best = ratio;
  }
  return best;
}

}  // namespace splatlab::testing
