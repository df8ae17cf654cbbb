#pragma once

#include "splatlab/image.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace splatlab {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

/// Peak signal-to-noise ratio for unit dynamic range; +inf for identical images.
inline double psnr(const Image& img, const Image& ref) {
  if (!img.same_shape(ref)) throw ParameterError("psnr: image dimensions differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double d = img.data[i] - ref.data[i];
    sum += d * d;
  }
  if (img.data.empty() || sum == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = sum / static_cast<double>(img.data.size());
  return 10.0 * std::log10(1.0 / mse);
}

namespace detail {

inline std::array<double, kSsimWindow> ssim_kernel() {
  std::array<double, kSsimWindow> k{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - kSsimWindow / 2;
    k[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

/// Single-channel plane with "valid" separable Gaussian filtering and its adjoint.
struct Plane {
  int w = 0;
  int h = 0;
  std::vector<double> v;
  Plane(int w_, int h_) : w(w_), h(h_), v(static_cast<std::size_t>(w_) * h_, 0.0) {}
  double& operator()(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
  double operator()(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

inline Plane filter_valid(const Plane& in, const std::array<double, kSsimWindow>& k) {
  const int ow = in.w - kSsimWindow + 1;
  const int oh = in.h - kSsimWindow + 1;
  Plane tmp(ow, in.h);
  for (int y = 0; y < in.h; ++y) {
    const double* src = in.v.data() + static_cast<std::size_t>(y) * in.w;
    double* dst = tmp.v.data() + static_cast<std::size_t>(y) * ow;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double ki = k[i];
      for (int x = 0; x < ow; ++x) dst[x] += ki * src[x + i];
    }
  }
  Plane out(ow, oh);
  for (int y = 0; y < oh; ++y) {
    double* dst = out.v.data() + static_cast<std::size_t>(y) * ow;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double ki = k[i];
      const double* src = tmp.v.data() + static_cast<std::size_t>(y + i) * ow;
      for (int x = 0; x < ow; ++x) dst[x] += ki * src[x];
    }
  }
  return out;
}

inline Plane filter_valid_adjoint(const Plane& in, const std::array<double, kSsimWindow>& k) {
  const int fw = in.w + kSsimWindow - 1;
  const int fh = in.h + kSsimWindow - 1;
  Plane tmp(in.w, fh);
  for (int y = 0; y < in.h; ++y) {
    const double* src = in.v.data() + static_cast<std::size_t>(y) * in.w;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double ki = k[i];
      double* dst = tmp.v.data() + static_cast<std::size_t>(y + i) * in.w;
      for (int x = 0; x < in.w; ++x) dst[x] += ki * src[x];
    }
  }
  Plane out(fw, fh);
  for (int y = 0; y < fh; ++y) {
    const double* src = tmp.v.data() + static_cast<std::size_t>(y) * in.w;
    double* dst = out.v.data() + static_cast<std::size_t>(y) * fw;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double ki = k[i];
      for (int x = 0; x < in.w; ++x) dst[x + i] += ki * src[x];
    }
  }
  return out;
}

inline Plane channel(const Image& img, int c) {
  Plane p(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) p(x, y) = img.at(x, y, c);
  return p;
}

inline Plane product(const Plane& a, const Plane& b) {
  Plane p(a.w, a.h);
  for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] = a.v[i] * b.v[i];
  return p;
}

inline double ssim_impl(const Image& img, const Image& ref, Image* grad) {
  if (!img.same_shape(ref)) throw ParameterError("ssim: image dimensions differ");
  if (img.width < kSsimWindow || img.height < kSsimWindow) {
    throw ParameterError("ssim: images must be at least 11x11");
  }
  const auto k = ssim_kernel();
  constexpr double c1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
  constexpr double c2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);
  const int ow = img.width - kSsimWindow + 1;
  const int oh = img.height - kSsimWindow + 1;
  const double norm = 1.0 / (3.0 * ow * oh);
  if (grad) *grad = Image(img.width, img.height);

  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    const Plane x = channel(img, c);
    const Plane y = channel(ref, c);
    const Plane mx = filter_valid(x, k);
    const Plane my = filter_valid(y, k);
    const Plane mxx = filter_valid(product(x, x), k);
    const Plane myy = filter_valid(product(y, y), k);
    const Plane mxy = filter_valid(product(x, y), k);
    Plane g_mx(ow, oh), g_mxx(ow, oh), g_mxy(ow, oh);
    for (std::size_t i = 0; i < mx.v.size(); ++i) {
      const double ux = mx.v[i], uy = my.v[i];
      const double vx = mxx.v[i] - ux * ux;
      const double vy = myy.v[i] - uy * uy;
      const double cxy = mxy.v[i] - ux * uy;
      const double a1 = 2.0 * ux * uy + c1;
      const double a2 = 2.0 * cxy + c2;
      const double b1 = ux * ux + uy * uy + c1;
      const double b2 = vx + vy + c2;
      const double s = a1 * a2 / (b1 * b2);
      total += s;
      if (grad) {
        const double ds_dux = 2.0 * uy * a2 / (b1 * b2) - s * 2.0 * ux / b1;
        const double ds_dvx = -s / b2;
        const double ds_dcxy = 2.0 * a1 / (b1 * b2);
        g_mx.v[i] = ds_dux + ds_dvx * (-2.0 * ux) + ds_dcxy * (-uy);
        g_mxx.v[i] = ds_dvx;
        g_mxy.v[i] = ds_dcxy;
      }
    }
    if (grad) {
      const Plane a = filter_valid_adjoint(g_mx, k);
      const Plane b = filter_valid_adjoint(g_mxx, k);
      const Plane d = filter_valid_adjoint(g_mxy, k);
      for (int py = 0; py < img.height; ++py)
        for (int px = 0; px < img.width; ++px) {
          grad->at(px, py, c) =
              norm * (a(px, py) + 2.0 * x(px, py) * b(px, py) + y(px, py) * d(px, py));
        }
    }
  }
  return total * norm;
}

}  // namespace detail

/// Mean local SSIM: 11x11 Gaussian window (σ = 1.5), valid positions only,
/// K1 = 0.01, K2 = 0.03, unit dynamic range, averaged over channels.
inline double ssim(const Image& img, const Image& ref) {
  return detail::ssim_impl(img, ref, nullptr);
}

/// SSIM value and its gradient with respect to `img`.
inline double ssim_with_gradient(const Image& img, const Image& ref, Image& grad) {
  return detail::ssim_impl(img, ref, &grad);
}

}  // namespace splatlab
