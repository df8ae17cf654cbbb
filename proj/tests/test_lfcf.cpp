#include "splatlab/lfcf.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace splatlab;
using namespace splatlab::testing;

namespace {

SamplingProfile flat_profile(std::size_t n, double theta) {
  SamplingProfile p;
  p.rate.assign(n, 100.0);
  p.interval.assign(n, 0.01);
  p.theta.assign(n, theta);
  return p;
}

Gaussian with_opacity(double alpha, Rng& rng) {
  Gaussian g = random_gaussian(rng);
  g.set_opacity(alpha);
  return g;
}

const IterationWindow kMidWindow{1000, 500, 4200};
const IterationWindow kStartWindow{500, 500, 4200};

}  // namespace

TEST(EnlargingFactors, Endpoints) {
  const LfcfConfig cfg;
  EXPECT_EQ(cfg.c_max, 1.5);
  EXPECT_EQ(cfg.c_min, 1.0);
  const std::vector<double> c = enlarging_factors(std::vector<double>{1.0, 0.0, 0.5}, cfg);
  EXPECT_EQ(c[0], 1.5);
  EXPECT_EQ(c[1], 1.0);
  EXPECT_EQ(c[2], 1.25);
}

TEST(EnlargingFactors, DepthStrategyToggle) {
  LfcfConfig cfg;
  cfg.c_max = 1.8;
  cfg.c_min = 1.1;
  Rng rng(1);
  std::vector<double> theta(200);
  for (auto& t : theta) t = uniform01(rng);
  std::sort(theta.begin(), theta.end());
  const std::vector<double> on = enlarging_factors(theta, cfg);
  for (std::size_t i = 1; i < on.size(); ++i) EXPECT_LE(on[i - 1], on[i]);
  cfg.strategies.depth = false;
  for (double c : enlarging_factors(theta, cfg)) EXPECT_EQ(c, 1.8);
}

TEST(Anneal, ClosedForm) {
  LfcfConfig cfg;
  cfg.anneal_n = 2.0;
  const IterationWindow mid{300, 100, 500};
  EXPECT_NEAR(anneal_factor(1.5, mid, cfg), std::pow(1.5, 0.25), 1e-15);
  EXPECT_NEAR(std::pow(1.5, 0.25), 1.10668, 1e-5);
}

TEST(Anneal, Endpoints) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    LfcfConfig cfg;
    cfg.c_end = uniform(rng, 0.5, 1.0);
    cfg.anneal_n = uniform(rng, 0.5, 3.0);
    const double c = uniform(rng, 1.0, 2.5);
    const int from = static_cast<int>(uniform_index(rng, 1000)), until = from + 1 + static_cast<int>(uniform_index(rng, 5000));
    EXPECT_NEAR(anneal_factor(c, {from, from, until}, cfg), c, 1e-12);
    EXPECT_NEAR(anneal_factor(c, {until, from, until}, cfg), cfg.c_end, 1e-12);
  }
}

TEST(Anneal, OutsideWindowIsIdentity) {
  const LfcfConfig cfg;
  EXPECT_EQ(anneal_factor(1.5, {10, 100, 200}, cfg), 1.0);
  EXPECT_EQ(anneal_factor(1.5, {201, 100, 200}, cfg), 1.0);
}

TEST(Anneal, LiteralFormRisesFromOne) {
  LfcfConfig cfg;
  cfg.literal_anneal = true;
  EXPECT_NEAR(anneal_factor(1.5, {100, 100, 200}, cfg), 1.0, 1e-15);
  EXPECT_NEAR(anneal_factor(1.5, {200, 100, 200}, cfg), 1.5, 1e-15);
}

TEST(ScaleFactors, Examples) {
  const Vec3 iso = scale_based_factors(Gaussian{}, 1.5);
  EXPECT_EQ(iso, Vec3(1.5, 1.0, 1.0 / 1.5));
  EXPECT_NEAR(iso.prod(), 1.0, 1e-15);

  Gaussian g;
  g.log_scale = Vec3(0.0, std::log(2.0), std::log(4.0));
  const Vec3 f = scale_based_factors(g, 2.0);
  EXPECT_EQ(f, Vec3(2.0, 1.0, 0.5));
  const Vec3 scaled = apply_scale_factor(g, f).scale();
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(scaled[a], 2.0, 1e-14);

  EXPECT_EQ(scale_based_factors(g, 1.0), Vec3::Ones());
  EXPECT_EQ(scale_based_factors(g, 1.7, false), Vec3::Constant(1.7));
}

TEST(ScaleFactors, UnsortedAxes) {
  Gaussian g;
  g.log_scale = Vec3(std::log(3.0), std::log(0.5), std::log(1.0));
  EXPECT_EQ(scale_based_factors(g, 1.25), Vec3(0.8, 1.25, 1.0));
}

TEST(ScaleFactors, VolumePreserved) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Gaussian g = random_gaussian(rng);
    const double c = uniform(rng, 1.0, 2.0);
    const double d0 = build_covariance(g).determinant();
    const double e0 = std::pow(g.scale().prod(), 2);
    for (const Vec3& f : {scale_based_factors(g, c), Vec3(scale_based_factors(g, c).cwiseInverse())}) {
      const Gaussian h = apply_scale_factor(g, f);
      EXPECT_NEAR(std::pow(h.scale().prod(), 2) / e0, 1.0, 1e-12);
      EXPECT_NEAR(build_covariance(h).determinant() / d0, 1.0, 1e-9);
    }
  }
}

TEST(SplitProbability, Complement) {
  EXPECT_EQ(split_probability(0.0), 1.0);
  EXPECT_EQ(split_probability(1.0), 0.0);
  EXPECT_NEAR(split_probability(0.4), 0.6, 1e-15);
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const double t = uniform01(rng);
    EXPECT_EQ(split_probability(t), 1.0 - t);
  }
}

TEST(Branch, PaperExamples) {
  EXPECT_EQ(lfcf_branch(3e-4, 1e-4, 2e-4), LfcfBranch::Expand);
  EXPECT_EQ(lfcf_branch(3e-4, 5e-4, 2e-4), LfcfBranch::Shrink);
  EXPECT_EQ(lfcf_branch(1e-5, 0.0, 2e-4), LfcfBranch::Untouched);
  EXPECT_EQ(lfcf_branch(2e-4, 0.0, 2e-4), LfcfBranch::Untouched);
  EXPECT_EQ(lfcf_branch(3e-4, 3e-4, 2e-4), LfcfBranch::Shrink);
}

// Every combination of (Grad vs τ, Grad vs PGrad, α vs ε) through lfcf_step.
TEST(LfcfStep, BranchTable) {
  struct Row {
    double grad, pgrad, alpha;
    const char* outcome;  // expand, shrink_split, untouched, removed
    std::size_t survivors;
  };
  const double tau = 2e-4, eps = 0.005;
  const Row rows[] = {
      {1e-4, 0.0, 0.5, "untouched", 1},    {1e-4, 5e-4, 0.5, "untouched", 1},
      {tau, 0.0, 0.5, "untouched", 1},     {1e-4, 0.0, 0.001, "removed", 0},
      {1e-4, 5e-4, 0.001, "removed", 0},   {3e-4, 1e-4, 0.5, "expand", 1},
      {3e-4, 1e-4, 0.001, "removed", 0},   {3e-4, 5e-4, 0.5, "shrink_split", 2},
      {3e-4, 3e-4, 0.5, "shrink_split", 2}, {3e-4, 5e-4, 0.001, "removed", 0},
  };
  Rng rng(5);
  for (const Row& row : rows) {
    SCOPED_TRACE(::testing::Message() << "grad " << row.grad << " pgrad " << row.pgrad << " alpha " << row.alpha);
    const Gaussian g = with_opacity(row.alpha, rng);
    GaussianCloud cloud({g});
    LfcfState state(1);
    state.pgrad[0] = row.pgrad;
    LfcfConfig cfg;
    cfg.tau = tau;
    cfg.epsilon = eps;
    cfg.strategies.probabilistic = false;
    const std::vector<double> grad{row.grad};
    Remap map;
    Rng step_rng(9);
    const LfcfStats st = lfcf_step(cloud, grad, state, flat_profile(1, 1.0), cfg, kStartWindow, step_rng, &map);
    ASSERT_EQ(cloud.size(), row.survivors);
    ASSERT_EQ(state.size(), row.survivors);
    EXPECT_EQ(st.expanded + st.shrunk + st.untouched, 1u);
    for (std::size_t i = 0; i < cloud.size(); ++i) EXPECT_EQ(state.pgrad[i], row.grad);
    const std::string outcome = row.outcome;
    if (outcome == "untouched") {
      EXPECT_EQ(st.untouched, 1u);
      EXPECT_EQ(pack(cloud[0]), pack(g));
    } else if (outcome == "expand") {
      EXPECT_EQ(st.expanded, 1u);
      EXPECT_GT(cloud[0].scale().minCoeff(), g.scale().minCoeff());
      EXPECT_NEAR(cloud[0].scale().prod(), g.scale().prod(), 1e-12 * g.scale().prod());
    } else if (outcome == "shrink_split") {
      EXPECT_EQ(st.shrunk, 1u);
      EXPECT_EQ(st.split, 1u);
      EXPECT_EQ(map.fresh, (std::vector<std::uint8_t>{1, 1}));
      const Gaussian shrunk = apply_scale_factor(g, scale_based_factors(g, 1.5).cwiseInverse());
      for (std::size_t i = 0; i < 2; ++i)
        for (int a = 0; a < 3; ++a)
          EXPECT_NEAR(cloud[i].log_scale[a], shrunk.log_scale[a] - std::log(kSplitScaleDivisor), 1e-12);
    } else {
      EXPECT_EQ(cloud.size(), 0u);
      EXPECT_GE(st.removed, 1u);
    }
  }
}

TEST(LfcfStep, PgradUpdatedForEveryGaussian) {
  Rng rng(6);
  const std::size_t n = 300;
  std::vector<Gaussian> gs;
  std::vector<double> grad(n);
  LfcfState state(n);
  for (std::size_t i = 0; i < n; ++i) {
    gs.push_back(with_opacity(uniform(rng, 0.01, 0.99), rng));
    grad[i] = uniform(rng, 0.0, 6e-4);
    state.pgrad[i] = uniform(rng, 0.0, 6e-4);
  }
  GaussianCloud cloud(gs);
  Remap map;
  const SamplingProfile prof = flat_profile(n, 0.5);
  const LfcfStats st = lfcf_step(cloud, grad, state, prof, LfcfConfig{}, kMidWindow, rng, &map);
  EXPECT_EQ(st.expanded + st.shrunk + st.untouched, n);
  EXPECT_GT(st.expanded, 0u);
  EXPECT_GT(st.shrunk, 0u);
  EXPECT_GT(st.untouched, 0u);
  ASSERT_EQ(state.size(), cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) EXPECT_EQ(state.pgrad[i], grad[map.source[i]]);
  for (const auto& g : cloud.gaussians()) EXPECT_GE(g.opacity(), LfcfConfig{}.epsilon);
}

TEST(LfcfStep, NonSplitGaussiansKeepVolume) {
  Rng rng(7);
  const std::size_t n = 200;
  std::vector<Gaussian> gs;
  std::vector<double> grad(n);
  LfcfState state(n);
  for (std::size_t i = 0; i < n; ++i) {
    gs.push_back(with_opacity(0.5, rng));
    grad[i] = 3e-4;
    state.pgrad[i] = i % 2 ? 1e-4 : 5e-4;
  }
  GaussianCloud cloud(gs);
  Remap map;
  LfcfConfig cfg;
  SamplingProfile prof = flat_profile(n, 0.7);
  const LfcfStats st = lfcf_step(cloud, grad, state, prof, cfg, kMidWindow, rng, &map);
  EXPECT_GT(st.shrunk - st.split, 0u);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (map.fresh[i]) continue;
    const double d0 = build_covariance(gs[map.source[i]]).determinant();
    EXPECT_NEAR(build_covariance(cloud[i]).determinant() / d0, 1.0, 1e-12);
  }
}

TEST(LfcfStep, SplitFrequencyFollowsEta) {
  Rng rng(8);
  const std::size_t n = 10000;
  GaussianCloud cloud(std::vector<Gaussian>(n, with_opacity(0.5, rng)));
  LfcfState state(n);
  std::fill(state.pgrad.begin(), state.pgrad.end(), 1.0);
  const std::vector<double> grad(n, 0.5);
  const LfcfStats st = lfcf_step(cloud, grad, state, flat_profile(n, 0.4), LfcfConfig{}, kMidWindow, rng);
  EXPECT_EQ(st.shrunk, n);
  const double freq = static_cast<double>(st.split) / n;
  EXPECT_GE(freq, 0.58);
  EXPECT_LE(freq, 0.62);
}

TEST(LfcfStep, ThetaOneNeverSplits) {
  Rng rng(9);
  GaussianCloud cloud(std::vector<Gaussian>(50, with_opacity(0.5, rng)));
  LfcfState state(50);
  std::fill(state.pgrad.begin(), state.pgrad.end(), 1.0);
  const LfcfStats st = lfcf_step(cloud, std::vector<double>(50, 0.5), state, flat_profile(50, 1.0),
                                 LfcfConfig{}, kMidWindow, rng);
  EXPECT_EQ(st.split, 0u);
  EXPECT_EQ(cloud.size(), 50u);
}

TEST(LfcfStep, MisalignedInputsRejected) {
  Rng rng(10);
  GaussianCloud cloud(std::vector<Gaussian>(3));
  LfcfState state(3);
  EXPECT_THROW(lfcf_step(cloud, std::vector<double>(2), state, flat_profile(3, 0.5), LfcfConfig{}, kMidWindow, rng),
               ParameterError);
  EXPECT_THROW(lfcf_step(cloud, std::vector<double>(3), state, flat_profile(4, 0.5), LfcfConfig{}, kMidWindow, rng),
               ParameterError);
  LfcfState short_state(2);
  EXPECT_THROW(lfcf_step(cloud, std::vector<double>(3), short_state, flat_profile(3, 0.5), LfcfConfig{}, kMidWindow, rng),
               ParameterError);
}

TEST(LfcfConfig, ValidationAndCadence) {
  LfcfConfig cfg;
  cfg.validate();
  EXPECT_EQ(cfg.r, 2);
  EXPECT_FALSE(cfg.due(1));
  EXPECT_TRUE(cfg.due(2));
  EXPECT_FALSE(cfg.due(3));
  EXPECT_TRUE(cfg.due(4));
  cfg.strategies.cadence = false;
  EXPECT_TRUE(cfg.due(1));
  EXPECT_TRUE(cfg.due(3));
  LfcfConfig bad;
  bad.c_min = 2.0;
  EXPECT_THROW(bad.validate(), ParameterError);
  bad = LfcfConfig{};
  bad.epsilon = 1.0;
  EXPECT_THROW(bad.validate(), ParameterError);
  bad = LfcfConfig{};
  bad.r = 0;
  EXPECT_THROW(bad.validate(), ParameterError);
  bad = LfcfConfig{};
  bad.c_end = 0.0;
  EXPECT_THROW(bad.validate(), ParameterError);
}

TEST(FactorPipeline, DepthThenAnnealThenAxis) {
  LfcfConfig cfg;
  Gaussian g;
  g.log_scale = Vec3(std::log(0.3), std::log(0.1), std::log(0.2));
  const GaussianCloud cloud({g, g});
  const std::vector<double> theta{1.0, 0.0};
  const IterationWindow start{500, 500, 4200};
  const std::vector<Vec3> f = lfcf_factor_vectors(cloud, theta, cfg, start);
  EXPECT_EQ(f[0], Vec3(1.0 / 1.5, 1.5, 1.0));
  EXPECT_EQ(f[1], Vec3::Ones());
  const IterationWindow end{4200, 500, 4200};
  EXPECT_EQ(lfcf_factor_vectors(cloud, theta, cfg, end)[0], Vec3::Ones());
  cfg.strategies = LfcfStrategies::none();
  EXPECT_EQ(lfcf_factor_vectors(cloud, theta, cfg, end)[1], Vec3::Constant(1.5));
}
