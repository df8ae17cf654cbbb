// Acceptance runner: one PASS/FAIL line per criterion.
//
// Environment:
//   SPLATLAB_ACCEPTANCE_OUT   output root (default ./acceptance_runs)
//   SPLATLAB_ACCEPTANCE_ONLY  comma-separated criterion numbers to run

#include "splatlab/experiment.hpp"
#include "splatlab/lfcf.hpp"
#include "support.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

using namespace splatlab;
using namespace splatlab::testing;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// 1-3: property suites

Verdict gradient_oracle() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t checked = 0, bad = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    const GradientScene s = random_gradient_scene(seed);
    const GradientCheck r = check_gradients(s, 1e-3, 1e-6);
    checked += r.checked;
    bad += r.mismatches.size();
    worst = std::max(worst, r.worst_ratio);
    v.require(s.cloud.size() <= 20 && s.camera.width == 32 && s.camera.height == 32, "scene shape");
  }
  const double t = seconds_since(t0);
  v.detail << "25 scenes, " << checked << " derivatives, " << bad << " mismatches, worst error/tolerance "
           << worst << ", " << t << " s";
  v.require(bad == 0, "all derivatives within tolerance");
  v.require(t <= 120.0, "runtime <= 2 min");
  return v;
}

Verdict algebraic_identities() {
  Verdict v;
  const LfcfConfig cfg;
  const std::vector<double> c = enlarging_factors(std::vector<double>{1.0, 0.0}, cfg);
  v.require(cfg.c_max == 1.5 && cfg.c_min == 1.0, "default c_max/c_min");
  v.require(c[0] == 1.5 && c[1] == 1.0, "enlarging factor endpoints");

  Rng rng(2024);
  double anneal_err = 0.0, eta_err = 0.0, det_err = 0.0;
  std::size_t rate_mismatch = 0, weight_bad = 0;
  for (int i = 0; i < 1000; ++i) {
    LfcfConfig a;
    a.c_end = uniform(rng, 0.5, 1.0);
    a.c_min = uniform(rng, a.c_end, 1.5);
    a.c_max = uniform(rng, a.c_min, 2.5);
    a.anneal_n = uniform(rng, 0.2, 4.0);
    const double ci = uniform(rng, a.c_min, a.c_max);
    const int from = static_cast<int>(uniform_index(rng, 1000)), until = from + 1 + static_cast<int>(uniform_index(rng, 5000));
    anneal_err = std::max(anneal_err, std::abs(anneal_factor(ci, {from, from, until}, a) - ci));
    anneal_err = std::max(anneal_err, std::abs(anneal_factor(ci, {until, from, until}, a) - a.c_end));

    const double theta = uniform01(rng);
    eta_err = std::max(eta_err, std::abs(split_probability(theta) - (1.0 - theta)));

    const Gaussian g = random_gaussian(rng);
    const double cs = uniform(rng, 1.0, 2.0);
    const Gaussian h = apply_scale_factor(g, scale_based_factors(g, cs));
    const double d0 = std::pow(g.scale().prod(), 2), d1 = std::pow(h.scale().prod(), 2);
    det_err = std::max(det_err, std::abs(d1 / d0 - 1.0));

    CameraSet cams;
    const int k = 1 + static_cast<int>(uniform_index(rng, 6));
    for (int j = 0; j < k; ++j) cams.push_back(random_camera(rng, j));
    const Vec3 p(uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2));
    if (sampling_rate(p, cams) != brute_force_rate(p, cams, kDefaultGuardBand)) ++rate_mismatch;

    const Mat3 sigma = random_spd(rng);
    const Vec3 w(standard_normal(rng), standard_normal(rng), standard_normal(rng));
    const double t = 1.0 + 4.0 * uniform01(rng);
    const double w0 = frequency_weight(sigma, Vec3::Zero());
    const double wa = frequency_weight(sigma, w), wb = frequency_weight(sigma, t * w);
    if (w0 != 1.0 || !(wa >= wb) || !(wa > 0.0 && wa <= 1.0)) ++weight_bad;
  }
  v.detail << "anneal endpoint err " << anneal_err << ", eta err " << eta_err << ", det rel err " << det_err
           << ", rate mismatches " << rate_mismatch << "/1000, weight violations " << weight_bad << "/1000";
  v.require(anneal_err <= 1e-12, "anneal endpoints");
  v.require(eta_err == 0.0, "eta = 1 - theta");
  v.require(det_err <= 1e-12, "volume preservation");
  v.require(rate_mismatch == 0, "sampling_rate vs brute force");
  v.require(weight_bad == 0, "frequency weight");
  return v;
}

Verdict branch_semantics() {
  Verdict v;
  const double tau = 2e-4, eps = 0.005;
  struct Row {
    double grad, pgrad, alpha;
    const char* outcome;
  };
  // (Grad vs tau) x (Grad vs PGrad) x (alpha vs eps); ties on each comparison included.
  const Row rows[] = {
      {1e-4, 0.0, 0.5, "untouched"},   {1e-4, 5e-4, 0.5, "untouched"},  {tau, 0.0, 0.5, "untouched"},
      {tau, 5e-4, 0.5, "untouched"},   {1e-4, 0.0, 0.001, "removed"},   {1e-4, 5e-4, 0.001, "removed"},
      {3e-4, 1e-4, 0.5, "expand"},     {3e-4, 1e-4, 0.001, "removed"},  {3e-4, 5e-4, 0.5, "shrink_split"},
      {3e-4, 3e-4, 0.5, "shrink_split"}, {3e-4, 5e-4, 0.001, "removed"}, {3e-4, 1e-4, eps, "expand"},
  };
  const IterationWindow window{500, 500, 4200};
  Rng rng(5);
  int ok = 0, total = 0;
  for (const Row& row : rows) {
    ++total;
    Gaussian g = random_gaussian(rng);
    g.set_opacity(row.alpha);
    GaussianCloud cloud({g});
    LfcfState state(1);
    state.pgrad[0] = row.pgrad;
    LfcfConfig cfg;
    cfg.tau = tau;
    cfg.epsilon = eps;
    cfg.strategies.probabilistic = false;
    SamplingProfile prof;
    prof.rate = {100.0};
    prof.interval = {0.01};
    prof.theta = {1.0};
    Rng step_rng(9);
    Remap map;
    const std::vector<double> grad{row.grad};
    const LfcfStats st = lfcf_step(cloud, grad, state, prof, cfg, window, step_rng, &map);
    const std::string out = row.outcome;
    bool good = state.size() == cloud.size();
    for (double pg : state.pgrad) good = good && pg == row.grad;
    if (out == "untouched") {
      good = good && st.untouched == 1 && cloud.size() == 1 && pack(cloud[0]) == pack(g);
    } else if (out == "expand") {
      const Gaussian e = apply_scale_factor(g, scale_based_factors(g, 1.5));
      good = good && st.expanded == 1 && cloud.size() == 1 && (cloud[0].log_scale - e.log_scale).norm() < 1e-12;
    } else if (out == "shrink_split") {
      const Gaussian s = apply_scale_factor(g, scale_based_factors(g, 1.5).cwiseInverse());
      good = good && st.shrunk == 1 && st.split == 1 && cloud.size() == 2;
      for (std::size_t i = 0; good && i < 2; ++i) {
        good = (cloud[i].log_scale - (s.log_scale - Vec3::Constant(std::log(kSplitScaleDivisor)))).norm() < 1e-12;
      }
    } else {
      good = good && cloud.size() == 0 && st.removed >= 1;
    }
    if (good) ++ok;
    else v.detail << " row(grad " << row.grad << ", pgrad " << row.pgrad << ", alpha " << row.alpha << ") ";
  }

  // PGrad refreshed for every Gaussian whatever its branch.
  const std::size_t n = 500;
  std::vector<Gaussian> gs;
  std::vector<double> grad(n);
  LfcfState state(n);
  for (std::size_t i = 0; i < n; ++i) {
    Gaussian g = random_gaussian(rng);
    g.set_opacity(uniform(rng, 0.0, 0.05));
    gs.push_back(g);
    grad[i] = uniform(rng, 0.0, 6e-4);
    state.pgrad[i] = uniform(rng, 0.0, 6e-4);
  }
  GaussianCloud cloud(gs);
  SamplingProfile prof;
  prof.rate.assign(n, 100.0);
  prof.interval.assign(n, 0.01);
  prof.theta.assign(n, 0.5);
  Remap map;
  const LfcfStats st = lfcf_step(cloud, grad, state, prof, LfcfConfig{}, {1000, 500, 4200}, rng, &map);
  bool pgrad_ok = state.size() == cloud.size() && st.expanded > 0 && st.shrunk > 0 && st.untouched > 0 && st.removed > 0;
  for (std::size_t i = 0; pgrad_ok && i < cloud.size(); ++i) pgrad_ok = state.pgrad[i] == grad[map.source[i]];
  v.detail << ok << "/" << total << " table rows; pgrad refresh over " << n << " Gaussians ("
           << st.expanded << " expand, " << st.shrunk << " shrink, " << st.untouched << " untouched, "
           << st.removed << " removed): " << (pgrad_ok ? "ok" : "wrong");
  v.require(ok == total, "branch table");
  v.require(pgrad_ok, "pgrad refresh");
  return v;
}

// ---------------------------------------------------------------------------
// 4-12: training runs on the reference scene

constexpr double kNoiseK = 2.0;

struct Runs {
  const SceneBundle& scene;
  fs::path out;
  std::map<std::string, EvalReport> cache;

  Variant variant(const std::string& name, bool efa, double k, std::uint64_t seed) const {
    Variant v;
    v.name = name;
    v.config.seed = seed;
    v.config.lfcf = efa;
    v.noise_k = k;
    v.noise_target = NoiseTarget::Scales;
    v.noise_seed = 1000 + seed;
    return v;
  }

  const EvalReport& get(const Variant& v, const fs::path& dir) {
    const std::string key = (dir / v.name).string();
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    std::fprintf(stderr, "  training %s ...\n", v.name.c_str());
    ExperimentOptions opts;
    opts.out_dir = dir;
    opts.render_test_views = false;
    EvalReport r = run_experiment(v.name, scene, {v}, opts).at(0);
    if (!r.ok()) throw std::runtime_error(v.name + ": " + *r.error);
    std::fprintf(stderr, "  %s: train %.3f test %.3f dB, %zu Gaussians, %.1f s\n", v.name.c_str(),
                 r.train_psnr, r.test_psnr, r.final_count, r.wall_time_s);
    return cache.emplace(key, std::move(r)).first->second;
  }

  const EvalReport& base(double k, std::uint64_t seed = 0) {
    return get(variant(tag("base", k, seed), false, k, seed), out);
  }
  const EvalReport& efa(double k, std::uint64_t seed = 0) {
    return get(variant(tag("efa", k, seed), true, k, seed), out);
  }
  static std::string tag(const char* what, double k, std::uint64_t seed) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_k%g_s%llu", what, k, static_cast<unsigned long long>(seed));
    return buf;
  }
};

Verdict noisy_gap(Runs& runs) {
  Verdict v;
  const EvalReport& clean = runs.base(0.0);
  const EvalReport& noisy = runs.base(kNoiseK);
  const double d_train = clean.train_psnr - noisy.train_psnr;
  const double d_test = clean.test_psnr - noisy.test_psnr;
  const double runtime = clean.wall_time_s + noisy.wall_time_s;
  v.detail << "train degradation " << d_train << " dB, test degradation " << d_test << " dB, ratio "
           << d_test / d_train << ", runtime " << runtime << " s";
  v.require(d_test > 0.0, "test degrades");
  v.require(d_train <= 0.0 ? d_test > 0.0 : d_test >= 2.0 * d_train, "test degradation >= 2x train");
  v.require(runtime <= 1200.0, "runtime <= 20 min");
  return v;
}

Verdict efa_improvement(Runs& runs) {
  Verdict v;
  for (std::uint64_t seed : {0ull, 1ull}) {
    const EvalReport &bc = runs.base(0.0, seed), &bn = runs.base(kNoiseK, seed);
    const EvalReport &ec = runs.efa(0.0, seed), &en = runs.efa(kNoiseK, seed);
    const double gain = en.test_psnr - bn.test_psnr;
    const double gap_b = std::abs(bc.test_psnr - bn.test_psnr), gap_e = std::abs(ec.test_psnr - en.test_psnr);
    v.detail << "seed " << seed << ": noisy test gain " << gain << " dB, gap " << gap_b << " -> " << gap_e
             << " dB; ";
    v.require(gain >= 0.3, "seed " + std::to_string(seed) + " gain >= 0.3 dB");
    v.require(gap_e < gap_b, "seed " + std::to_string(seed) + " gap shrinks");
  }
  return v;
}

Verdict clean_no_harm(Runs& runs) {
  Verdict v;
  const double d = runs.efa(0.0).test_psnr - runs.base(0.0).test_psnr;
  v.detail << "EFA - baseline clean test PSNR " << d << " dB";
  v.require(d >= -0.2, "within 0.2 dB or above");
  return v;
}

Verdict scale_dynamics(Runs& runs) {
  Verdict v;
  const EvalReport& clean = runs.base(0.0);
  const EvalReport& noisy = runs.base(kNoiseK);
  TrainConfig cfg;
  const int from = cfg.densify_from, until = cfg.resolved_densify_until();
  const int third = from + (until - from) / 3;
  for (const EvalReport* r : {&noisy, &clean}) {
    const auto& logs = r->logs;
    const double start = logs.front().mean_scale, end = logs.back().mean_scale;
    double at_third = start;
    for (const auto& l : logs) {
      if (l.iteration <= third) at_third = l.mean_scale;
    }
    const double total = start - end, early = start - at_third;
    v.detail << r->variant << ": mean_scale " << start << " -> " << at_third << " (it " << third << ") -> "
             << end << ", early share " << early / total << "; ";
    v.require(total > 0.0 && early >= 0.5 * total, r->variant + " drops early");
  }
  v.require(noisy.logs.back().mean_scale < clean.logs.back().mean_scale, "noisy final < clean final");
  return v;
}

Verdict sparse_views(Runs& runs) {
  Verdict v;
  double prev = -std::numeric_limits<double>::infinity();
  for (std::size_t n : {4u, 6u, 8u}) {
    Variant var = runs.variant("base_views" + std::to_string(n), false, 0.0, 0);
    var.train_views = n;
    const double t = runs.get(var, runs.out).test_psnr;
    v.detail << n << " views: " << t << " dB; ";
    v.require(t >= prev, "monotone at " + std::to_string(n) + " views");
    prev = t;
  }
  return v;
}

Verdict noise_intensity(Runs& runs) {
  Verdict v;
  double prev = std::numeric_limits<double>::infinity();
  for (double k : {1.0, 2.0, 3.0}) {
    const double b = runs.base(k).test_psnr, e = runs.efa(k).test_psnr;
    v.detail << "k=" << k << ": baseline " << b << ", EFA " << e << "; ";
    v.require(b <= prev, "baseline non-increasing at k=" + std::to_string(static_cast<int>(k)));
    v.require(e >= b, "EFA >= baseline at k=" + std::to_string(static_cast<int>(k)));
    prev = b;
  }
  return v;
}

Verdict ablation(Runs& runs) {
  Verdict v;
  const double full = runs.efa(kNoiseK).test_psnr;
  Variant nodepth = runs.variant("efa_nodepth_k2_s0", true, kNoiseK, 0);
  nodepth.config.lfcf_config.strategies.depth = false;
  Variant none = runs.variant("efa_none_k2_s0", true, kNoiseK, 0);
  none.config.lfcf_config.strategies = LfcfStrategies::none();
  const double nd = runs.get(nodepth, runs.out).test_psnr;
  const double nn = runs.get(none, runs.out).test_psnr;
  v.detail << "full " << full << ", no depth " << nd << ", no strategies " << nn << " dB";
  v.require(full - nd >= 0.05, "no-depth loses >= 0.05 dB");
  v.require(nn <= nd, "no strategies loses as much or more");
  return v;
}

Verdict overhead(Runs& runs) {
  Verdict v;
  const double b = runs.base(kNoiseK).wall_time_s, e = runs.efa(kNoiseK).wall_time_s;
  const double bc = runs.base(0.0).wall_time_s, ec = runs.efa(0.0).wall_time_s;
  v.detail << "noisy reference: EFA " << e << " s vs baseline " << b << " s (ratio " << e / b
           << "); clean: ratio " << ec / bc;
  v.require(e <= 1.15 * b, "EFA wall time <= 1.15x baseline");
  return v;
}

Verdict determinism(Runs& runs) {
  Verdict v;
  const fs::path again = runs.out / "repeat";
  std::size_t compared = 0, differing = 0;
  for (const Variant& var :
       {runs.variant(Runs::tag("base", kNoiseK, 0), false, kNoiseK, 0), runs.variant(Runs::tag("efa", kNoiseK, 0), true, kNoiseK, 0)}) {
    runs.get(var, runs.out);
    runs.get(var, again);
    for (const char* f : {"eval.csv", "mean_scale.svg", "loss.svg"}) {
      ++compared;
      if (slurp(runs.out / var.name / f) != slurp(again / var.name / f)) ++differing;
    }
    ++compared;
    const fs::path log = fs::path(var.name) / var.name / "log.csv";
    if (slurp(runs.out / log) != slurp(again / log) || slurp(runs.out / log).empty()) ++differing;
  }
  v.detail << compared << " files compared across repeated reference runs, " << differing << " differ";
  v.require(differing == 0, "byte-identical outputs");
  return v;
}

}  // namespace

int main() {
  std::set<int> only;
  if (const char* env = std::getenv("SPLATLAB_ACCEPTANCE_ONLY")) {
    std::stringstream ss(env);
    for (std::string item; std::getline(ss, item, ',');) only.insert(std::stoi(item));
  }
  const char* out_env = std::getenv("SPLATLAB_ACCEPTANCE_OUT");
  const fs::path out = out_env ? fs::path(out_env) : fs::path("acceptance_runs");

  std::optional<SceneBundle> scene;
  std::optional<Runs> runs;
  auto training = [&]() -> Runs& {
    if (!runs) {
      SyntheticSceneSpec spec;  // seed 0, 128x128, 9 train / 3 test
      scene = generate_synthetic_scene(spec).bundle;
      runs.emplace(Runs{*scene, out, {}});
    }
    return *runs;
  };

  const std::vector<std::pair<int, std::function<Verdict()>>> criteria = {
      {1, gradient_oracle},
      {2, algebraic_identities},
      {3, branch_semantics},
      {4, [&] { return noisy_gap(training()); }},
      {5, [&] { return efa_improvement(training()); }},
      {6, [&] { return clean_no_harm(training()); }},
      {7, [&] { return scale_dynamics(training()); }},
      {8, [&] { return sparse_views(training()); }},
      {9, [&] { return noise_intensity(training()); }},
      {10, [&] { return ablation(training()); }},
      {11, [&] { return overhead(training()); }},
      {12, [&] { return determinism(training()); }},
  };
  int failures = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << "exception: " << e.what();
    }
    if (!v.pass) ++failures;
    std::printf("CRITERION %2d %s: %s\n", id, v.pass ? "PASS" : "FAIL", v.detail.str().c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
