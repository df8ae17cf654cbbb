#pragma once

#include "splatlab/adam.hpp"
#include "splatlab/densify.hpp"
#include "splatlab/lfcf.hpp"
#include "splatlab/metrics.hpp"
#include "splatlab/rasterizer.hpp"
#include "splatlab/sampling.hpp"
#include "splatlab/scene.hpp"

#include <chrono>
#include <cmath>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace splatlab {

struct TrainConfig {
  int iterations = 7000;
  int densify_from = 500;
  std::optional<int> densify_until;  // defaults to 0.6 * iterations
  int densify_interval = 100;
  double densify_grad_threshold = 2e-4;
  double opacity_prune = 0.005;
  double percent_dense = 0.01;
  std::size_t max_gaussians = 200000;

  // Position rates are multiplied by the scene extent.
  double lr_position = 1.6e-4;
  double lr_position_final = 1.6e-6;
  double lr_color = 2.5e-3;
  double lr_sh = 1.25e-4;
  double lr_opacity = 0.05;
  double lr_scale = 5e-3;
  double lr_rotation = 1e-3;

  double ssim_weight = 0.2;
  std::uint64_t seed = 0;
  int sh_degree = 0;
  int threads = 0;

  bool lowpass_baseline = false;
  double lowpass_kappa = kDefaultLowpassKappa;

  bool lfcf = false;
  LfcfConfig lfcf_config;

  int resolved_densify_until() const {
    return densify_until.value_or(static_cast<int>(0.6 * iterations));
  }

  /// Densification runs only when the window is non-empty.
  bool densify_enabled() const { return densify_from < resolved_densify_until(); }

  void validate() const {
    if (iterations < 0) throw ParameterError("iterations must be >= 0");
    if (densify_interval < 1) throw ParameterError("densify_interval must be >= 1");
    if (densify_enabled() && resolved_densify_until() > iterations) {
      throw ParameterError("require densify_until <= iterations");
    }
    if (densify_until && !(densify_from < *densify_until)) {
      throw ParameterError("require densify_from < densify_until");
    }
    if (!(ssim_weight >= 0.0 && ssim_weight <= 1.0)) {
      throw ParameterError("ssim_weight must lie in [0,1]");
    }
    if (!(opacity_prune > 0.0 && opacity_prune < 1.0)) {
      throw ParameterError("opacity_prune must lie in (0,1)");
    }
    if (sh_degree < 0 || sh_degree > 1) throw ParameterError("sh_degree must be 0 or 1");
    if (max_gaussians < 1) throw ParameterError("max_gaussians must be >= 1");
    if (lfcf) lfcf_config.validate();
  }
};

struct IterationLog {
  int iteration = 0;
  double loss = 0.0;
  std::size_t gaussian_count = 0;
  double mean_scale = 0.0;
  std::size_t clone_count = 0;
  std::size_t split_count = 0;
  std::size_t prune_count = 0;
  std::size_t lfcf_expand_count = 0;
  std::size_t lfcf_shrinksplit_count = 0;
  double wall_time_ms = 0.0;
};

inline constexpr const char* kIterationLogHeader =
    "iteration,loss,count,mean_scale,clones,splits,prunes,lfcf_expand,lfcf_shrinksplit,ms";

/// Writes the log stream as CSV. Timing is written as 0 unless requested so
/// that repeated runs produce identical bytes.
inline void write_iteration_log(std::ostream& out, const std::vector<IterationLog>& logs,
                                bool include_timing = false) {
  out << kIterationLogHeader << '\n';
  char buf[256];
  for (const auto& l : logs) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%zu,%.9g,%zu,%zu,%zu,%zu,%zu,%.3f\n", l.iteration,
                  l.loss, l.gaussian_count, l.mean_scale, l.clone_count, l.split_count,
                  l.prune_count, l.lfcf_expand_count, l.lfcf_shrinksplit_count,
                  include_timing ? l.wall_time_ms : 0.0);
    out << buf;
  }
}

struct LossResult {
  double value = 0.0;
  Image gradient;
};

/// (1 - λ) L1 + λ (1 - SSIM) with its per-pixel gradient.
inline LossResult loss(const Image& rendered, const Image& target, double ssim_weight) {
  if (!rendered.same_shape(target)) throw ParameterError("loss: image dimensions differ");
  LossResult out;
  out.gradient = Image(rendered.width, rendered.height);
  const double n = static_cast<double>(rendered.data.size());
  double l1 = 0.0;
  for (std::size_t i = 0; i < rendered.data.size(); ++i) {
    const double d = rendered.data[i] - target.data[i];
    l1 += std::abs(d);
    const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
    out.gradient.data[i] = (1.0 - ssim_weight) * sign / n;
  }
  out.value = (1.0 - ssim_weight) * l1 / n;
  if (ssim_weight > 0.0) {
    Image g;
    const double s = ssim_with_gradient(rendered, target, g);
    out.value += ssim_weight * (1.0 - s);
    for (std::size_t i = 0; i < g.data.size(); ++i) out.gradient.data[i] -= ssim_weight * g.data[i];
  }
  return out;
}

/// Learning rates for the flat parameter layout at a given iteration.
inline LearningRates learning_rates(const TrainConfig& cfg, double extent, int iteration) {
  LearningRates lr{};
  const double t = cfg.iterations > 0 ? std::clamp(static_cast<double>(iteration) / cfg.iterations, 0.0, 1.0) : 0.0;
  const double pos = std::exp((1.0 - t) * std::log(cfg.lr_position * extent) +
                              t * std::log(cfg.lr_position_final * extent));
  for (int k = 0; k < 3; ++k) {
    lr[kPosOffset + k] = pos;
    lr[kScaleOffset + k] = cfg.lr_scale;
    lr[kColorOffset + k] = cfg.lr_color;
  }
  for (int k = 0; k < 4; ++k) lr[kRotOffset + k] = cfg.lr_rotation;
  lr[kOpacityOffset] = cfg.lr_opacity;
  for (int k = 0; k < kShRestCount; ++k) lr[kShRestOffset + k] = cfg.sh_degree >= 1 ? cfg.lr_sh : 0.0;
  return lr;
}

struct TrainResult {
  GaussianCloud cloud;
  std::vector<IterationLog> logs;
};

/// Seeded shuffle-without-replacement over training views, one epoch at a time.
class ViewScheduler {
 public:
  ViewScheduler(std::size_t views, Rng& rng) : views_(views), rng_(rng) {}

  std::size_t next() {
    if (cursor_ >= order_.size()) refill();
    return order_[cursor_++];
  }

 private:
  void refill() {
    order_.resize(views_);
    for (std::size_t i = 0; i < views_; ++i) order_[i] = i;
    for (std::size_t i = views_; i > 1; --i) std::swap(order_[i - 1], order_[uniform_index(rng_, i)]);
    cursor_ = 0;
  }

  std::size_t views_;
  Rng& rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Optimizes `init` against the scene's training views.
inline TrainResult train(const SceneBundle& scene, const TrainConfig& cfg, GaussianCloud init) {
  cfg.validate();
  scene.validate();
  if (init.sh_degree() != cfg.sh_degree) {
    init = GaussianCloud(std::vector<Gaussian>(init.gaussians().begin(), init.gaussians().end()),
                         cfg.sh_degree);
  }
  TrainResult result;
  result.cloud = std::move(init);
  GaussianCloud& cloud = result.cloud;
  cloud.reset_statistics();
  if (cfg.iterations == 0) return result;

  Rng rng(cfg.seed);
  ViewScheduler scheduler(scene.train.size(), rng);
  AdamState adam(cloud.size());
  LfcfState lfcf_state(cloud.size());
  const CameraSet train_cams = scene.train_cameras();
  const int densify_until = cfg.resolved_densify_until();

  DensifyConfig dcfg;
  dcfg.grad_threshold = cfg.densify_grad_threshold;
  dcfg.opacity_threshold = cfg.opacity_prune;
  dcfg.percent_dense = cfg.percent_dense;
  dcfg.max_gaussians = cfg.max_gaussians;

  LowpassFilter filter;
  auto refresh_filter = [&] {
    if (!cfg.lowpass_baseline) return;
    const SamplingProfile prof = compute_sampling_profile(cloud, train_cams);
    filter = apply_lowpass_baseline(cloud, prof.rate, cfg.lowpass_kappa);
  };
  refresh_filter();

  detail::ForwardRecords records;
  int round = 0;
  result.logs.reserve(static_cast<std::size_t>(cfg.iterations));
  for (int it = 1; it <= cfg.iterations; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    IterationLog log;
    log.iteration = it;

    const View& view = scene.train[scheduler.next()];
    RenderSettings settings;
    settings.background = scene.background;
    settings.threads = cfg.threads;
    if (cfg.lowpass_baseline) settings.extra_variance = filter.extra_variance;

    RenderGradients grads;
    {
      RenderPass pass(cloud, view.camera, settings, &records);
      const RenderedImage rendered = pass.forward();
      const LossResult l = loss(rendered.rgb, view.image, cfg.ssim_weight);
      log.loss = l.value;
      grads = pass.backward(l.gradient);
    }
    if (it <= densify_until) {
      accumulate_statistics(cloud, grads, gradient_resolution_scale(view.camera));
    }
    adam_step(cloud.gaussians(), grads.params, adam, learning_rates(cfg, scene.extent, it));

    if (cfg.densify_enabled() && it > cfg.densify_from && it <= densify_until &&
        it % cfg.densify_interval == 0) {
      ++round;
      std::vector<double> avg = cloud.average_gradients();
      Remap map;
      const DensifyStats ds = densify_and_prune(cloud, avg, dcfg, scene.extent, rng, &map);
      adam.apply(map);
      lfcf_state.apply(map);
      avg = remap_inherit(avg, map);
      log.clone_count = ds.cloned;
      log.split_count = ds.split;
      log.prune_count = ds.pruned;

      if (cfg.lfcf && cfg.lfcf_config.due(round)) {
        const SamplingProfile prof = compute_sampling_profile(cloud, train_cams);
        const IterationWindow window{it, cfg.densify_from, densify_until};
        Remap lmap;
        const LfcfStats ls = lfcf_step(cloud, avg, lfcf_state, prof, cfg.lfcf_config, window, rng, &lmap);
        adam.apply(lmap);
        log.lfcf_expand_count = ls.expanded;
        log.lfcf_shrinksplit_count = ls.shrunk;
        log.prune_count += ls.removed;
      }
      if (!cloud.finite()) {
        throw std::runtime_error("training produced non-finite parameters at iteration " +
                                 std::to_string(it));
      }
      refresh_filter();
    }

    log.gaussian_count = cloud.size();
    log.mean_scale = cloud.mean_scale();
    log.wall_time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.logs.push_back(log);
  }
  return result;
}

/// Trains from the scene's own seed points.
inline TrainResult train(const SceneBundle& scene, const TrainConfig& cfg) {
  return train(scene, cfg, initial_cloud(scene.init_points, cfg.sh_degree));
}

}  // namespace splatlab
