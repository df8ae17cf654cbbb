#pragma once

#include "splatlab/config.hpp"
#include "splatlab/metrics.hpp"
#include "splatlab/ply.hpp"
#include "splatlab/png_io.hpp"
#include "splatlab/scene.hpp"
#include "splatlab/trainer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace splatlab {

/// One training run of an experiment: a config plus how its init is built.
struct Variant {
  std::string name;
  TrainConfig config;
  double noise_k = 0.0;
  NoiseTarget noise_target = NoiseTarget::Scales;
  std::uint64_t noise_seed = 0;
  int resample_factor = 1;
  std::size_t train_views = 0;  // 0 keeps every training view
};

struct CameraScore {
  std::string camera_id;
  std::string split;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::string variant;
  std::string config_hash;
  std::uint64_t seed = 0;
  double wall_time_s = 0.0;
  std::size_t final_count = 0;
  std::vector<CameraScore> cameras;
  double train_psnr = 0.0;
  double test_psnr = 0.0;
  double train_ssim = 0.0;
  double test_ssim = 0.0;
  double gap_psnr = 0.0;
  double gap_ssim = 0.0;
  std::vector<IterationLog> logs;
  std::optional<std::string> error;

  bool ok() const { return !error.has_value(); }
};

/// Per-image means within each split and their absolute difference.
inline void summarize(EvalReport& r) {
  double sums[2][2] = {{0, 0}, {0, 0}};
  int counts[2] = {0, 0};
  for (const auto& c : r.cameras) {
    const int s = c.split == "train" ? 0 : 1;
    sums[s][0] += c.psnr;
    sums[s][1] += c.ssim;
    ++counts[s];
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.train_psnr = counts[0] ? sums[0][0] / counts[0] : nan;
  r.train_ssim = counts[0] ? sums[0][1] / counts[0] : nan;
  r.test_psnr = counts[1] ? sums[1][0] / counts[1] : nan;
  r.test_ssim = counts[1] ? sums[1][1] / counts[1] : nan;
  r.gap_psnr = std::abs(r.train_psnr - r.test_psnr);
  r.gap_ssim = std::abs(r.train_ssim - r.test_ssim);
}

/// PSNR and SSIM of `cloud` on every train and test view.
inline std::vector<CameraScore> evaluate(const GaussianCloud& cloud, const SceneBundle& scene,
                                         int threads = 0) {
  RenderSettings settings;
  settings.background = scene.background;
  settings.threads = threads;
  std::vector<CameraScore> out;
  for (const char* split : {"train", "test"}) {
    const auto& views = std::string(split) == "train" ? scene.train : scene.test;
    for (const auto& v : views) {
      const Image img = render(cloud, v.camera, settings).rgb;
      out.push_back({v.camera.id, split, psnr(img, v.image), ssim(img, v.image)});
    }
  }
  return out;
}

/// Initial cloud of a variant: optional resampling, then optional noise.
inline GaussianCloud variant_init(const SceneBundle& scene, const Variant& v) {
  std::vector<InitPoint> points = scene.init_points;
  if (v.resample_factor > 1) {
    points = resample_init(points, v.resample_factor, scene.extent, v.noise_seed + 1);
  }
  GaussianCloud init = initial_cloud(points, v.config.sh_degree);
  return inject_noise(init, v.noise_target, v.noise_k, scene.extent, v.noise_seed);
}

struct VariantOutcome {
  EvalReport report;
  GaussianCloud cloud;
};

/// Trains and evaluates one variant. Errors are captured in the report.
inline VariantOutcome run_variant(const SceneBundle& full_scene, const Variant& v) {
  VariantOutcome out;
  out.report.variant = v.name;
  out.report.config_hash = config_hash(v.config);
  out.report.seed = v.config.seed;
  try {
    const SceneBundle scene = v.train_views ? full_scene.with_train_subset(v.train_views) : full_scene;
    const GaussianCloud init = variant_init(scene, v);
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult res = train(scene, v.config, init);
    out.report.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    // Held-out cameras stay in the evaluation even when training views are subset.
    SceneBundle eval_scene = scene;
    eval_scene.test = full_scene.test;
    out.report.cameras = evaluate(res.cloud, eval_scene, v.config.threads);
    out.report.final_count = res.cloud.size();
    out.report.logs = std::move(res.logs);
    out.cloud = std::move(res.cloud);
    summarize(out.report);
  } catch (const std::exception& e) {
    out.report.error = e.what();
    out.report.cameras.clear();
    out.report.logs.clear();
  }
  return out;
}

namespace detail {

inline std::string fmt_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace detail

inline constexpr const char* kEvalHeader = "variant,camera_id,split,psnr,ssim";

/// Per-camera rows, then per-variant summary rows: camera_id "mean" for the
/// train and test splits and split "gap" for their absolute difference.
/// Failed variants get a single row with camera_id "error".
inline void write_eval_csv(std::ostream& out, const std::vector<EvalReport>& reports) {
  out << kEvalHeader << '\n';
  for (const auto& r : reports) {
    if (!r.ok()) {
      out << r.variant << ",error,error,nan,nan\n";
      continue;
    }
    for (const auto& c : r.cameras) {
      out << r.variant << ',' << c.camera_id << ',' << c.split << ',' << detail::fmt_metric(c.psnr)
          << ',' << detail::fmt_metric(c.ssim) << '\n';
    }
  }
  for (const auto& r : reports) {
    if (!r.ok()) continue;
    out << r.variant << ",mean,train," << detail::fmt_metric(r.train_psnr) << ','
        << detail::fmt_metric(r.train_ssim) << '\n';
    out << r.variant << ",mean,test," << detail::fmt_metric(r.test_psnr) << ','
        << detail::fmt_metric(r.test_ssim) << '\n';
    out << r.variant << ",mean,gap," << detail::fmt_metric(r.gap_psnr) << ','
        << detail::fmt_metric(r.gap_ssim) << '\n';
  }
}

/// Run metadata. Wall time lives here, apart from the reproducible CSVs.
inline void write_timing_csv(std::ostream& out, const std::vector<EvalReport>& reports) {
  out << "variant,config_hash,seed,wall_time_s,final_count,status\n";
  for (const auto& r : reports) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f", r.wall_time_s);
    out << r.variant << ',' << r.config_hash << ',' << r.seed << ',' << buf << ',' << r.final_count
        << ',' << (r.ok() ? "ok" : "error: " + *r.error) << '\n';
  }
}

/// Polyline chart of one IterationLog column per variant.
inline void write_svg_chart(std::ostream& out, const std::vector<EvalReport>& reports,
                            const std::string& title, double IterationLog::*field) {
  constexpr int W = 640, H = 400, M = 50;
  double xmax = 1, ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  for (const auto& r : reports) {
    for (const auto& l : r.logs) {
      xmax = std::max(xmax, static_cast<double>(l.iteration));
      ymin = std::min(ymin, l.*field);
      ymax = std::max(ymax, l.*field);
    }
  }
  if (!(ymax > ymin)) {
    ymin = std::isfinite(ymin) ? ymin - 1 : 0;
    ymax = ymin + 2;
  }
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  char buf[128];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\">" << title << "</text>\n";
  std::snprintf(buf, sizeof(buf), "%.4g", ymax);
  out << "<text x=\"4\" y=\"" << M << "\" font-size=\"10\">" << buf << "</text>\n";
  std::snprintf(buf, sizeof(buf), "%.4g", ymin);
  out << "<text x=\"4\" y=\"" << H - M << "\" font-size=\"10\">" << buf << "</text>\n";
  out << "<rect x=\"" << M << "\" y=\"" << M << "\" width=\"" << W - 2 * M << "\" height=\"" << H - 2 * M
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    if (r.logs.empty()) continue;
    const std::size_t step = std::max<std::size_t>(1, r.logs.size() / 500);
    out << "<polyline fill=\"none\" stroke=\"" << palette[i % 10] << "\" points=\"";
    for (std::size_t k = 0; k < r.logs.size(); k += step) {
      const double x = M + (W - 2 * M) * r.logs[k].iteration / xmax;
      const double y = H - M - (H - 2 * M) * (r.logs[k].*field - ymin) / (ymax - ymin);
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", x, y);
      out << buf;
    }
    out << "\"/>\n";
    out << "<text x=\"" << M + 6 << "\" y=\"" << M + 14 * (i + 1) << "\" font-size=\"11\" fill=\""
        << palette[i % 10] << "\">" << r.variant << "</text>\n";
  }
  out << "</svg>\n";
}

struct ExperimentOptions {
  std::optional<std::filesystem::path> out_dir;
  int jobs = 1;
  bool render_test_views = true;
};

/// Trains every variant against the same scene and writes, under
/// out_dir/<name>: eval.csv, timing.csv, mean_scale.svg, loss.svg and per
/// variant <variant>/log.csv, final.ply and renders/<camera>.png.
inline std::vector<EvalReport> run_experiment(const std::string& name, const SceneBundle& scene,
                                              const std::vector<Variant>& variants,
                                              const ExperimentOptions& opts = {}) {
  if (variants.empty()) throw ParameterError("run_experiment: no variants");
  namespace fs = std::filesystem;
  std::optional<fs::path> root;
  if (opts.out_dir) {
    root = *opts.out_dir / name;
    fs::create_directories(*root);
  }
  std::vector<EvalReport> reports(variants.size());
  auto work = [&](std::size_t i) {
    VariantOutcome o = run_variant(scene, variants[i]);
    if (root && o.report.ok()) {
      const fs::path vdir = *root / variants[i].name;
      fs::create_directories(vdir / "renders");
      std::ofstream log(vdir / "log.csv");
      write_iteration_log(log, o.report.logs);
      save_ply(vdir / "final.ply", o.cloud);
      if (opts.render_test_views) {
        RenderSettings s;
        s.background = scene.background;
        s.threads = variants[i].config.threads;
        for (const auto& v : scene.test) {
          write_png(vdir / "renders" / (v.camera.id + ".png"), render(o.cloud, v.camera, s).rgb);
        }
      }
    }
    reports[i] = std::move(o.report);
  };
  const int jobs = std::max(1, std::min<int>(opts.jobs, static_cast<int>(variants.size())));
  if (jobs == 1) {
    for (std::size_t i = 0; i < variants.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < variants.size();) work(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  if (root) {
    std::ofstream eval(*root / "eval.csv");
    write_eval_csv(eval, reports);
    std::ofstream timing(*root / "timing.csv");
    write_timing_csv(timing, reports);
    std::ofstream s1(*root / "mean_scale.svg");
    write_svg_chart(s1, reports, name + ": mean scale", &IterationLog::mean_scale);
    std::ofstream s2(*root / "loss.svg");
    write_svg_chart(s2, reports, name + ": loss", &IterationLog::loss);
  }
  return reports;
}

/// Clean/noisy x baseline/EFA-GS table with the clean-minus-noisy gap rows.
struct CompareTable {
  EvalReport clean_baseline;
  EvalReport noisy_baseline;
  EvalReport clean_efa;
  EvalReport noisy_efa;
};

inline void write_compare_csv(std::ostream& out, const CompareTable& t) {
  out << "row,train_psnr,test_psnr,train_ssim,test_ssim\n";
  auto row = [&](const std::string& label, const EvalReport& r) {
    out << label << ',' << detail::fmt_metric(r.train_psnr) << ',' << detail::fmt_metric(r.test_psnr)
        << ',' << detail::fmt_metric(r.train_ssim) << ',' << detail::fmt_metric(r.test_ssim) << '\n';
  };
  auto gap = [&](const std::string& label, const EvalReport& a, const EvalReport& b) {
    out << label << ',' << detail::fmt_metric(std::abs(a.train_psnr - b.train_psnr)) << ','
        << detail::fmt_metric(std::abs(a.test_psnr - b.test_psnr)) << ','
        << detail::fmt_metric(std::abs(a.train_ssim - b.train_ssim)) << ','
        << detail::fmt_metric(std::abs(a.test_ssim - b.test_ssim)) << '\n';
  };
  row("Clean init (baseline)", t.clean_baseline);
  row("Noisy init (baseline)", t.noisy_baseline);
  gap("/Clean - Noisy/ (baseline)", t.clean_baseline, t.noisy_baseline);
  row("Clean init (EFA-GS)", t.clean_efa);
  row("Noisy init (EFA-GS)", t.noisy_efa);
  gap("/Clean - Noisy/ (EFA-GS)", t.clean_efa, t.noisy_efa);
}

}  // namespace splatlab
