// splatlab: command-line front end for scene generation, training,
// rendering, evaluation, sampling analysis and experiment batches.

#include "splatlab/config.hpp"
#include "splatlab/experiment.hpp"
#include "splatlab/ply.hpp"
#include "splatlab/png_io.hpp"
#include "splatlab/sampling.hpp"
#include "splatlab/scene_io.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#ifndef SPLATLAB_VERSION
#define SPLATLAB_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace splatlab;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 1;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_run_stamp(const fs::path& out, const std::string& command, std::uint64_t seed,
                     const nlohmann::json& extra = {}) {
  nlohmann::json j;
  j["tool"] = "splatlab";
  j["version"] = SPLATLAB_VERSION;
  j["command"] = command;
  j["seed"] = seed;
  if (!extra.is_null()) j["details"] = extra;
  std::ofstream f(out / "run.json");
  f << j.dump(2) << '\n';
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw std::runtime_error("cannot create " + p.string() + ": " + ec.message());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw UsageError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Flag overrides for every config key, applied after the config file.
struct ConfigFlags {
  std::map<std::string, std::vector<std::string>> values;

  void attach(CLI::App* cmd) {
    for (const auto& key : config_key_names()) {
      auto* opt = cmd->add_option("--" + config_flag_name(key), values[key],
                                  "override config key " + key);
      opt->expected(0, 1);
      opt->allow_extra_args(false);
    }
  }

  ConfigEntries entries(const CLI::App* cmd) const {
    ConfigEntries out;
    for (const auto& key : config_key_names()) {
      if (cmd->count("--" + config_flag_name(key)) == 0) continue;
      const auto& v = values.at(key);
      std::string raw = v.empty() ? "true" : v.front();
      if (raw == "on" || raw == "yes") raw = "true";
      if (raw == "off" || raw == "no") raw = "false";
      try {
        out.emplace_back(key, parse_config_value(raw));
      } catch (const ConfigError& e) {
        throw ConfigError("--" + config_flag_name(key) + ": " + e.what());
      }
    }
    return out;
  }
};

TrainConfig resolve_config(const std::optional<fs::path>& file, const ConfigEntries& overrides,
                           TrainConfig base = {}) {
  if (file) base = load_config_text(read_file(*file), base);
  apply_config(base, overrides);
  base.validate();
  return base;
}

NoiseTarget parse_noise_target(const std::string& s) {
  if (s == "scales") return NoiseTarget::Scales;
  if (s == "coordinates") return NoiseTarget::Coordinates;
  if (s == "both") return NoiseTarget::Both;
  throw UsageError("--noise-target must be scales, coordinates or both");
}

SyntheticSceneSpec parse_scene_spec(const std::string& text, std::uint64_t seed) {
  SyntheticSceneSpec spec;
  std::map<std::string, std::function<void(const ConfigValue&)>> setters;
  auto integer = [&](const std::string& k, int& dst) {
    setters[k] = [&dst, k](const ConfigValue& v) { dst = static_cast<int>(detail::as_int(k, v)); };
  };
  auto real = [&](const std::string& k, double& dst) {
    setters[k] = [&dst, k](const ConfigValue& v) { dst = detail::as_double(k, v); };
  };
  integer("objects", spec.objects);
  integer("min_gaussians", spec.min_gaussians);
  integer("max_gaussians", spec.max_gaussians);
  integer("resolution", spec.resolution);
  integer("n_train", spec.n_train);
  integer("n_test", spec.n_test);
  real("orbit_radius", spec.orbit_radius);
  real("focal_factor", spec.focal_factor);
  real("min_elevation_deg", spec.min_elevation_deg);
  real("max_elevation_deg", spec.max_elevation_deg);
  real("init_fraction", spec.init_fraction);
  real("init_jitter", spec.init_jitter);
  real("splat_size", spec.splat_size);
  real("flatness", spec.flatness);
  real("texture", spec.texture);
  setters["background"] = [&spec](const ConfigValue& v) {
    spec.background = Vec3::Constant(detail::as_double("background", v));
  };
  const ConfigEntries entries = parse_config_text(text);
  std::vector<std::string> unknown;
  for (const auto& [k, _] : entries) {
    if (!setters.count(k)) unknown.push_back(k);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown scene spec key(s):";
    for (const auto& u : unknown) msg += " " + u;
    throw ConfigError(msg);
  }
  for (const auto& [k, v] : entries) setters.at(k)(v);
  spec.seed = seed;
  spec.validate();
  return spec;
}

void write_sampling_report(const fs::path& out, const GaussianCloud& cloud, const CameraSet& cams) {
  const SamplingProfile prof = compute_sampling_profile(cloud, cams);
  std::ofstream csv(out / "sampling.csv");
  csv << "index,rate,interval,theta,max_scale,class,observed\n";
  std::size_t under = 0, unobserved = 0;
  char buf[256];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double max_scale = cloud[i].scale().maxCoeff();
    const bool seen = prof.observed(i);
    const OptimizationClass cls =
        seen ? classify(cloud[i], prof.interval[i]) : OptimizationClass::UnderOptimized;
    if (cls == OptimizationClass::UnderOptimized) ++under;
    if (!seen) ++unobserved;
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%s,%d\n", i, prof.rate[i], prof.interval[i],
                  prof.theta[i], max_scale, to_string(cls), seen ? 1 : 0);
    csv << buf;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, cloud.size()));
  nlohmann::json summary;
  summary["count"] = cloud.size();
  summary["under_optimized"] = under;
  summary["unobserved"] = unobserved;
  summary["under_optimized_fraction"] = cloud.empty() ? 0.0 : under / n;
  summary["unobserved_fraction"] = cloud.empty() ? 0.0 : unobserved / n;
  std::ofstream js(out / "summary.json");
  js << summary.dump(2) << '\n';
  std::printf("%zu Gaussians: %.2f%% under-optimized, %.2f%% unobserved\n", cloud.size(),
              100.0 * summary["under_optimized_fraction"].get<double>(),
              100.0 * summary["unobserved_fraction"].get<double>());
}

// Cartesian product of "key=v1,v2;key2=v3,v4".
std::vector<ConfigEntries> expand_grid(const std::string& grid, std::vector<std::string>& keys) {
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  std::stringstream ss(grid);
  std::string part;
  while (std::getline(ss, part, ';')) {
    part = detail::trim(part);
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw UsageError("--grid entries look like key=v1,v2");
    std::vector<std::string> vals;
    std::stringstream vs(part.substr(eq + 1));
    std::string v;
    while (std::getline(vs, v, ',')) vals.push_back(detail::trim(v));
    if (vals.empty()) throw UsageError("--grid axis without values");
    axes.emplace_back(detail::trim(part.substr(0, eq)), vals);
  }
  if (axes.empty()) throw UsageError("--grid is empty");
  std::vector<ConfigEntries> out{{}};
  for (const auto& [key, vals] : axes) {
    keys.push_back(key);
    std::vector<ConfigEntries> next;
    for (const auto& base : out) {
      for (const auto& v : vals) {
        ConfigEntries e = base;
        e.emplace_back(key, parse_config_value(v));
        next.push_back(e);
      }
    }
    out = std::move(next);
  }
  return out;
}

std::string value_text(const ConfigValue& v) {
  if (const auto* b = std::get_if<bool>(&v)) return *b ? "true" : "false";
  if (const auto* i = std::get_if<std::int64_t>(&v)) return std::to_string(*i);
  if (const auto* d = std::get_if<double>(&v)) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", *d);
    return buf;
  }
  return std::get<std::string>(v);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"splatlab: CPU Gaussian splatting trainer with LFCF densification"};
  app.set_version_flag("--version", SPLATLAB_VERSION);
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string out_dir;
  int jobs = 1;
  auto common = [&](CLI::App* cmd, bool needs_out = true) {
    cmd->add_option("--seed", seed, "seed for every random choice")->capture_default_str();
    auto* o = cmd->add_option("--out", out_dir, "output directory");
    if (needs_out) o->required();
  };

  // gen-scene
  auto* gen = app.add_subcommand("gen-scene", "generate a synthetic scene directory");
  std::string spec_path;
  common(gen);
  gen->add_option("--spec", spec_path, "scene spec file (key = value)")->check(CLI::ExistingFile);

  // train
  auto* trn = app.add_subcommand("train", "train a cloud on a scene");
  std::string scene_path, config_path, noise_target = "scales";
  double noise_k = 0.0;
  std::size_t train_views = 0;
  int resample = 1;
  ConfigFlags train_flags;
  common(trn);
  trn->add_option("--scene", scene_path, "scene directory")->required();
  trn->add_option("--config", config_path, "config file (key = value)")->check(CLI::ExistingFile);
  trn->add_option("--noise", noise_k, "noise intensity k on the init");
  trn->add_option("--noise-target", noise_target, "scales | coordinates | both");
  trn->add_option("--train-views", train_views, "use only the first N training views");
  trn->add_option("--resample", resample, "duplicate init points (low-quality dense init)");
  train_flags.attach(trn);

  // render
  auto* rnd = app.add_subcommand("render", "render a cloud from cameras to PNG");
  std::string ply_path, cameras_path;
  double background = 0.0;
  common(rnd);
  rnd->add_option("--ply", ply_path, "Gaussian PLY")->required()->check(CLI::ExistingFile);
  rnd->add_option("--cameras", cameras_path, "camera JSON or scene directory")->required();
  rnd->add_option("--background", background, "gray background level");

  // eval
  auto* evl = app.add_subcommand("eval", "PSNR/SSIM of a cloud on a scene");
  common(evl);
  evl->add_option("--scene", scene_path, "scene directory")->required();
  evl->add_option("--ply", ply_path, "Gaussian PLY")->required()->check(CLI::ExistingFile);

  // analyze-sampling
  auto* ana = app.add_subcommand("analyze-sampling", "per-Gaussian sampling rate and class");
  common(ana);
  ana->add_option("--ply", ply_path, "Gaussian PLY")->required()->check(CLI::ExistingFile);
  ana->add_option("--cameras", cameras_path, "camera JSON or scene directory")->required();

  // compare
  auto* cmp = app.add_subcommand("compare", "clean/noisy x baseline/EFA-GS table");
  std::string baseline_config, efa_config;
  common(cmp);
  cmp->add_option("--scene", scene_path, "scene directory")->required();
  cmp->add_option("--baseline-config", baseline_config, "baseline config")->check(CLI::ExistingFile);
  cmp->add_option("--efa-config", efa_config, "EFA-GS config")->check(CLI::ExistingFile);
  cmp->add_option("--noise", noise_k, "noise intensity k for the noisy rows")->capture_default_str();
  cmp->add_option("--noise-target", noise_target, "scales | coordinates | both");
  cmp->add_option("--jobs", jobs, "variants trained in parallel");
  ConfigFlags cmp_flags;
  cmp_flags.attach(cmp);

  // sweep
  auto* swp = app.add_subcommand("sweep", "train a grid of configs");
  std::string grid = "c_max=1.5,1.75,2.0;r=1,2,5";
  common(swp);
  swp->add_option("--scene", scene_path, "scene directory")->required();
  swp->add_option("--config", config_path, "base config (lfcf enabled by default)")
      ->check(CLI::ExistingFile);
  swp->add_option("--grid", grid, "key=v1,v2;key2=v3,...")->capture_default_str();
  swp->add_option("--noise", noise_k, "noise intensity k on the init");
  swp->add_option("--noise-target", noise_target, "scales | coordinates | both");
  swp->add_option("--jobs", jobs, "variants trained in parallel");
  ConfigFlags swp_flags;
  swp_flags.attach(swp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    const fs::path out = out_dir;
    if (gen->parsed()) {
      const SyntheticSceneSpec spec =
          parse_scene_spec(spec_path.empty() ? std::string() : read_file(spec_path), seed);
      const SyntheticScene scene = generate_synthetic_scene(spec);
      ensure_dir(out);
      save_scene(out, scene.bundle, &scene.ground_truth);
      write_run_stamp(out, "gen-scene", seed);
      std::printf("scene: %zu train, %zu test views, %zu init points, extent %.4f\n",
                  scene.bundle.train.size(), scene.bundle.test.size(), scene.bundle.init_points.size(),
                  scene.bundle.extent);
    } else if (trn->parsed()) {
      TrainConfig base;
      base.seed = seed;
      ConfigEntries overrides = train_flags.entries(trn);
      if (trn->count("--seed")) overrides.emplace_back("seed", static_cast<std::int64_t>(seed));
      const TrainConfig cfg = resolve_config(
          config_path.empty() ? std::nullopt : std::optional<fs::path>(config_path), overrides, base);
      const SceneBundle full = load_scene(scene_path);
      Variant v;
      v.name = "train";
      v.config = cfg;
      v.noise_k = noise_k;
      v.noise_target = parse_noise_target(noise_target);
      v.noise_seed = cfg.seed + 1;
      v.resample_factor = resample;
      v.train_views = train_views;
      const SceneBundle scene = train_views ? full.with_train_subset(train_views) : full;
      const GaussianCloud init = variant_init(scene, v);
      const TrainResult res = train(scene, cfg, init);
      ensure_dir(out);
      save_ply(out / "final.ply", res.cloud);
      std::ofstream log(out / "log.csv");
      write_iteration_log(log, res.logs);
      std::ofstream canon(out / "config.txt");
      canon << canonical_config(cfg);
      write_run_stamp(out, "train", cfg.seed, {{"config_hash", config_hash(cfg)}});
      std::printf("trained %d iterations: %zu Gaussians\n", cfg.iterations, res.cloud.size());
    } else if (rnd->parsed()) {
      const GaussianCloud cloud = load_ply(ply_path);
      const CameraSet cams = fs::is_directory(cameras_path) ? load_cameras(fs::path(cameras_path) / "cameras.json")
                                                            : load_cameras(cameras_path);
      ensure_dir(out);
      RenderSettings s;
      s.background = Vec3::Constant(background);
      for (const auto& c : cams) write_png(out / (c.id + ".png"), render(cloud, c, s).rgb);
      write_run_stamp(out, "render", seed);
      std::printf("rendered %zu views\n", cams.size());
    } else if (evl->parsed()) {
      const SceneBundle scene = load_scene(scene_path);
      EvalReport r;
      r.variant = "eval";
      r.cameras = evaluate(load_ply(ply_path), scene);
      summarize(r);
      ensure_dir(out);
      std::ofstream csv(out / "eval.csv");
      write_eval_csv(csv, {r});
      write_run_stamp(out, "eval", seed);
      std::printf("train PSNR %.3f  test PSNR %.3f  gap %.3f\n", r.train_psnr, r.test_psnr, r.gap_psnr);
    } else if (ana->parsed()) {
      const GaussianCloud cloud = load_ply(ply_path);
      const CameraSet cams = fs::is_directory(cameras_path) ? load_cameras(fs::path(cameras_path) / "cameras.json")
                                                            : load_cameras(cameras_path);
      if (cams.empty()) throw UsageError("camera set is empty");
      ensure_dir(out);
      write_sampling_report(out, cloud, cams);
      write_run_stamp(out, "analyze-sampling", seed);
    } else if (cmp->parsed()) {
      const SceneBundle scene = load_scene(scene_path);
      ConfigEntries overrides = cmp_flags.entries(cmp);
      overrides.emplace_back("seed", static_cast<std::int64_t>(seed));
      const TrainConfig base_cfg = resolve_config(
          baseline_config.empty() ? std::nullopt : std::optional<fs::path>(baseline_config), overrides);
      TrainConfig efa_base;
      efa_base.lfcf = true;
      const TrainConfig efa_cfg = resolve_config(
          efa_config.empty() ? std::nullopt : std::optional<fs::path>(efa_config), overrides, efa_base);
      const NoiseTarget target = parse_noise_target(noise_target);
      std::vector<Variant> variants(4);
      const char* names[4] = {"clean_baseline", "noisy_baseline", "clean_efa", "noisy_efa"};
      for (int i = 0; i < 4; ++i) {
        variants[i].name = names[i];
        variants[i].config = i < 2 ? base_cfg : efa_cfg;
        variants[i].noise_k = (i % 2) ? noise_k : 0.0;
        variants[i].noise_target = target;
        variants[i].noise_seed = seed + 1;
      }
      ensure_dir(out);
      ExperimentOptions opts;
      opts.out_dir = out;
      opts.jobs = jobs;
      const auto reports = run_experiment("compare", scene, variants, opts);
      for (const auto& r : reports) {
        if (!r.ok()) std::fprintf(stderr, "variant %s failed: %s\n", r.variant.c_str(), r.error->c_str());
      }
      std::ofstream csv(out / "compare.csv");
      write_compare_csv(csv, {reports[0], reports[1], reports[2], reports[3]});
      write_compare_csv(std::cout, {reports[0], reports[1], reports[2], reports[3]});
      write_run_stamp(out, "compare", seed, {{"noise", noise_k}, {"noise_target", noise_target}});
      for (const auto& r : reports) {
        if (!r.ok()) return kExitRuntime;
      }
    } else if (swp->parsed()) {
      const SceneBundle scene = load_scene(scene_path);
      std::vector<std::string> keys;
      const auto points = expand_grid(grid, keys);
      ConfigEntries overrides = swp_flags.entries(swp);
      overrides.emplace_back("seed", static_cast<std::int64_t>(seed));
      TrainConfig base;
      base.lfcf = true;
      base = resolve_config(config_path.empty() ? std::nullopt : std::optional<fs::path>(config_path),
                            overrides, base);
      std::vector<Variant> variants;
      for (const auto& p : points) {
        Variant v;
        v.config = base;
        apply_config(v.config, p);
        v.config.validate();
        for (const auto& [k, val] : p) v.name += (v.name.empty() ? "" : "_") + k + "=" + value_text(val);
        v.noise_k = noise_k;
        v.noise_target = parse_noise_target(noise_target);
        v.noise_seed = seed + 1;
        variants.push_back(v);
      }
      ensure_dir(out);
      ExperimentOptions opts;
      opts.out_dir = out;
      opts.jobs = jobs;
      const auto reports = run_experiment("sweep", scene, variants, opts);
      std::ofstream csv(out / "sweep.csv");
      for (const auto& k : keys) csv << k << ',';
      csv << "train_psnr,test_psnr,train_ssim,test_ssim,gap_psnr,status\n";
      bool failed = false;
      for (std::size_t i = 0; i < reports.size(); ++i) {
        for (const auto& [k, val] : points[i]) csv << value_text(val) << ',';
        const auto& r = reports[i];
        csv << detail::fmt_metric(r.train_psnr) << ',' << detail::fmt_metric(r.test_psnr) << ','
            << detail::fmt_metric(r.train_ssim) << ',' << detail::fmt_metric(r.test_ssim) << ','
            << detail::fmt_metric(r.gap_psnr) << ',' << (r.ok() ? "ok" : "error") << '\n';
        failed = failed || !r.ok();
      }
      write_run_stamp(out, "sweep", seed, {{"grid", grid}, {"noise", noise_k}});
      std::printf("sweep: %zu variants written to %s\n", reports.size(), (out / "sweep.csv").c_str());
      if (failed) return kExitRuntime;
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
