#pragma once

#include "splatlab/common.hpp"

#include <Eigen/LU>

#include <array>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace splatlab {

/// Real spherical-harmonic normalization constants for bands 0 and 1.
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;

/// Number of degree-1 SH coefficients (3 per channel, channel-major).
inline constexpr int kShRestCount = 9;

/// One anisotropic 3D Gaussian primitive.
///
/// Parameters live in unconstrained spaces so that plain gradient steps keep
/// them valid:
///   - log_scale:      log of the per-axis standard deviation
///   - rotation:       quaternion (w, x, y, z), normalized on use
///   - opacity_logit:  sigmoid gives alpha in (0, 1)
///   - color:          SH band-0 coefficient per channel; rgb = 0.5 + C0 * color
///   - sh_rest:        band-1 coefficients, index = channel * 3 + k
struct Gaussian {
  Vec3 position = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();
  Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);
  double opacity_logit = 0.0;
  Vec3 color = Vec3::Zero();
  Eigen::Matrix<double, kShRestCount, 1> sh_rest =
      Eigen::Matrix<double, kShRestCount, 1>::Zero();

  Vec3 scale() const { return log_scale.array().exp(); }
  double opacity() const { return sigmoid(opacity_logit); }
  Vec3 base_rgb() const { return (kShC0 * color).array() + 0.5; }
  void set_base_rgb(const Vec3& rgb) { color = (rgb.array() - 0.5) / kShC0; }
  void set_opacity(double alpha) { opacity_logit = logit(alpha); }

  bool finite() const {
    return position.allFinite() && log_scale.allFinite() &&
           rotation.allFinite() && std::isfinite(opacity_logit) &&
           color.allFinite() && sh_rest.allFinite();
  }
};

// Flat parameter layout shared by the optimizer and gradient buffers.
inline constexpr int kPosOffset = 0;
inline constexpr int kScaleOffset = 3;
inline constexpr int kRotOffset = 6;
inline constexpr int kOpacityOffset = 10;
inline constexpr int kColorOffset = 11;
inline constexpr int kShRestOffset = 14;
inline constexpr int kNumParams = kShRestOffset + kShRestCount;

using ParamVector = std::array<double, kNumParams>;

inline ParamVector pack(const Gaussian& g) {
  ParamVector p{};
  for (int i = 0; i < 3; ++i) {
    p[kPosOffset + i] = g.position[i];
    p[kScaleOffset + i] = g.log_scale[i];
    p[kColorOffset + i] = g.color[i];
  }
  for (int i = 0; i < 4; ++i) p[kRotOffset + i] = g.rotation[i];
  p[kOpacityOffset] = g.opacity_logit;
  for (int i = 0; i < kShRestCount; ++i) p[kShRestOffset + i] = g.sh_rest[i];
  return p;
}

inline Gaussian unpack(const ParamVector& p) {
  Gaussian g;
  for (int i = 0; i < 3; ++i) {
    g.position[i] = p[kPosOffset + i];
    g.log_scale[i] = p[kScaleOffset + i];
    g.color[i] = p[kColorOffset + i];
  }
  for (int i = 0; i < 4; ++i) g.rotation[i] = p[kRotOffset + i];
  g.opacity_logit = p[kOpacityOffset];
  for (int i = 0; i < kShRestCount; ++i) g.sh_rest[i] = p[kShRestOffset + i];
  return g;
}

/// Unit quaternion (w, x, y, z); throws on a zero-norm input.
inline Vec4 normalized_rotation(const Vec4& q) {
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw ParameterError("quaternion has zero or non-finite norm");
  }
  return q / n;
}

/// Rotation matrix of a unit quaternion (w, x, y, z).
inline Mat3 rotation_matrix(const Vec4& qn) {
  const double w = qn[0], x = qn[1], y = qn[2], z = qn[3];
  Mat3 r;
  r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
      2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
      2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return r;
}

/// Σ = R S Sᵀ Rᵀ with S = diag(exp(log_scale)).
inline Mat3 build_covariance(const Gaussian& g) {
  const Mat3 r = rotation_matrix(normalized_rotation(g.rotation));
  const Mat3 m = r * g.scale().asDiagonal();
  return m * m.transpose();
}

/// Normalized Gaussian density at x.
inline double evaluate_density(const Gaussian& g, const Vec3& x) {
  const Mat3 sigma = build_covariance(g);
  const Vec3 d = x - g.position;
  const double det = sigma.determinant();
  const double mahalanobis = d.dot(sigma.inverse() * d);
  return std::pow(2.0 * std::numbers::pi, -1.5) / std::sqrt(det) *
         std::exp(-0.5 * mahalanobis);
}

/// Magnitude of the Gaussian's Fourier transform at angular frequency ω,
/// normalized so the DC component is 1.
inline double frequency_weight(const Mat3& sigma, const Vec3& omega) {
  return std::exp(-0.5 * omega.dot(sigma * omega));
}

/// Returns a copy whose per-axis scales are multiplied by c.
inline Gaussian apply_scale_factor(const Gaussian& g, const Vec3& c) {
  for (int i = 0; i < 3; ++i) {
    if (!(c[i] > 0.0) || !std::isfinite(c[i])) {
      throw ParameterError("scale factor components must be positive and finite");
    }
  }
  Gaussian out = g;
  out.log_scale += c.array().log().matrix();
  return out;
}

/// Maps every index of a mutated population back to the index it came from.
/// `fresh` marks entries created by the mutation (clone/split children).
struct Remap {
  std::vector<std::size_t> source;
  std::vector<std::uint8_t> fresh;

  std::size_t size() const { return source.size(); }

  static Remap identity(std::size_t n) {
    Remap r;
    r.source.resize(n);
    for (std::size_t i = 0; i < n; ++i) r.source[i] = i;
    r.fresh.assign(n, 0);
    return r;
  }

  /// Composition: apply `first`, then `*this`.
  Remap after(const Remap& first) const {
    Remap r;
    r.source.resize(size());
    r.fresh.resize(size());
    for (std::size_t i = 0; i < size(); ++i) {
      r.source[i] = first.source[source[i]];
      r.fresh[i] = fresh[i] | first.fresh[source[i]];
    }
    return r;
  }
};

/// Every entry copied from its source, fresh entries included.
template <class T>
std::vector<T> remap_inherit(const std::vector<T>& values, const Remap& map) {
  std::vector<T> out;
  out.reserve(map.size());
  for (std::size_t s : map.source) out.push_back(values[s]);
  return out;
}

/// Survivors copied from their source, fresh entries set to `init`.
template <class T>
std::vector<T> remap_reset(const std::vector<T>& values, const Remap& map,
                           const T& init) {
  std::vector<T> out;
  out.reserve(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) {
    out.push_back(map.fresh[i] ? init : values[map.source[i]]);
  }
  return out;
}

/// The optimized model: Gaussians plus index-aligned densification statistics.
class GaussianCloud {
 public:
  GaussianCloud() = default;
  explicit GaussianCloud(std::vector<Gaussian> gaussians, int sh_degree = 0)
      : gaussians_(std::move(gaussians)), sh_degree_(sh_degree) {
    if (sh_degree < 0 || sh_degree > 1) {
      throw ParameterError("sh_degree must be 0 or 1");
    }
    reset_statistics();
  }

  std::size_t size() const { return gaussians_.size(); }
  bool empty() const { return gaussians_.empty(); }
  int sh_degree() const { return sh_degree_; }

  const Gaussian& operator[](std::size_t i) const { return gaussians_[i]; }
  Gaussian& operator[](std::size_t i) { return gaussians_[i]; }
  std::span<const Gaussian> gaussians() const { return gaussians_; }
  std::span<Gaussian> gaussians() { return gaussians_; }

  std::span<const double> grad_accum() const { return grad_accum_; }
  std::span<const std::uint32_t> observations() const { return observations_; }

  void push_back(const Gaussian& g) {
    gaussians_.push_back(g);
    grad_accum_.push_back(0.0);
    observations_.push_back(0);
  }

  /// Adds one view's screen-space gradient norm to Gaussian i.
  void accumulate(std::size_t i, double grad_norm) {
    grad_accum_[i] += grad_norm;
    observations_[i] += 1;
  }

  /// Accumulated gradient norm divided by observation count (0 if unseen).
  std::vector<double> average_gradients() const {
    std::vector<double> out(size(), 0.0);
    for (std::size_t i = 0; i < size(); ++i) {
      if (observations_[i] > 0) out[i] = grad_accum_[i] / observations_[i];
    }
    return out;
  }

  void reset_statistics() {
    grad_accum_.assign(gaussians_.size(), 0.0);
    observations_.assign(gaussians_.size(), 0);
  }

  /// Rebuilds the population from `map`; fresh entries take `fresh_values`
  /// in order. Statistics follow their source; fresh ones start at zero.
  void rebuild(const Remap& map, std::span<const Gaussian> fresh_values) {
    std::vector<Gaussian> next;
    next.reserve(map.size());
    std::size_t f = 0;
    for (std::size_t i = 0; i < map.size(); ++i) {
      if (map.fresh[i]) {
        if (f == fresh_values.size()) {
          throw ParameterError("rebuild: fresh value count does not match remap");
        }
        next.push_back(fresh_values[f++]);
      } else {
        next.push_back(gaussians_[map.source[i]]);
      }
    }
    if (f != fresh_values.size()) {
      throw ParameterError("rebuild: fresh value count does not match remap");
    }
    grad_accum_ = remap_reset(grad_accum_, map, 0.0);
    observations_ = remap_reset<std::uint32_t>(observations_, map, 0);
    gaussians_ = std::move(next);
  }

  bool finite() const {
    for (const auto& g : gaussians_) {
      if (!g.finite()) return false;
    }
    return true;
  }

  /// Average over Gaussians of the mean per-axis scale.
  double mean_scale() const {
    if (empty()) return 0.0;
    double sum = 0.0;
    for (const auto& g : gaussians_) sum += g.scale().mean();
    return sum / static_cast<double>(size());
  }

 private:
  std::vector<Gaussian> gaussians_;
  std::vector<double> grad_accum_;
  std::vector<std::uint32_t> observations_;
  int sh_degree_ = 0;
};

}  // namespace splatlab
