#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "omfbm/grid.hpp"

using namespace omfbm;

TEST(Grid, NodesUniformAndExactEndpoints) {
  Grid g(1.7, 37);
  auto t = g.nodes();
  EXPECT_EQ(t.front(), 0.0);
  EXPECT_EQ(t.back(), 1.7);
  for (std::size_t i = 1; i < t.size(); ++i) {
    EXPECT_GT(t[i], t[i - 1]);
    EXPECT_NEAR(t[i] - t[i - 1], g.step(), 1e-14);
  }
}

TEST(Grid, RejectsCoarseOrBadHorizon) {
  EXPECT_THROW(Grid(1.0, 7), std::invalid_argument);
  EXPECT_THROW(Grid(0.0, 16), std::invalid_argument);
  EXPECT_THROW(Grid(-1.0, 16), std::invalid_argument);
}

TEST(PathSample, Validation) {
  Grid g(1.0, 8);
  EXPECT_THROW(PathSample(g, Vec(8, 0.0)), std::invalid_argument);
  Vec bad(9, 0.0);
  bad[3] = std::nan("");
  EXPECT_THROW(PathSample(g, bad), std::invalid_argument);
  EXPECT_THROW(PathSample(g, std::vector<Vec>{}), std::invalid_argument);
  PathSample p(g, std::vector<Vec>{Vec(9, 1.0), Vec(9, 2.0)});
  EXPECT_EQ(p.dim(), 2u);
  EXPECT_THROW(p.component(2), std::out_of_range);
}

TEST(Norms, SupExamples) {
  Grid g(1.0, 8);
  EXPECT_EQ(sup_norm(PathSample(g, Vec(9, 3.0)), 0), 3.0);
  Vec v(9, 0.0);
  v[1] = 1.0;
  v[2] = -2.0;
  EXPECT_EQ(sup_norm(PathSample(g, v), 0), 2.0);
}

TEST(Norms, SupMatchesScan) {
  Grid g(1.0, 64);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  Vec v(g.size());
  for (auto& x : v) x = nd(rng);
  double m = 0;
  for (double x : v)
    if (std::abs(x) > m) m = std::abs(x);
  EXPECT_EQ(sup_norm(PathSample(g, v), 0), m);
}

TEST(Norms, HolderConstantAndLinear) {
  Grid g(1.0, 16);
  EXPECT_EQ(holder_seminorm(Vec(17, 3.0), g, 0.3), 0.0);
  EXPECT_EQ(holder_norm(Vec(17, -3.0), g, 0.3), 3.0);
  Vec lin = g.nodes();
  // brute force: (tj - ti)^{1/2}, maximised by the widest pair
  double brute = 0;
  for (std::size_t i = 0; i < lin.size(); ++i)
    for (std::size_t j = i + 1; j < lin.size(); ++j)
      brute = std::max(brute, (lin[j] - lin[i]) / std::sqrt(lin[j] - lin[i]));
  EXPECT_NEAR(holder_seminorm(lin, g, 0.5), 1.0, 1e-14);
  EXPECT_NEAR(holder_seminorm(lin, g, 0.5), brute, 1e-14);
  EXPECT_THROW(holder_norm(lin, g, 0.0), std::invalid_argument);
  EXPECT_THROW(holder_norm(lin, g, 1.0), std::invalid_argument);
}

TEST(Norms, HomogeneityTriangleMonotonicity) {
  Grid g(1.0, 32);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ub(0.01, 0.99);
  for (int rep = 0; rep < 50; ++rep) {
    Vec a(g.size()), b(g.size()), s(g.size()), c(g.size());
    double k = nd(rng) * 3;
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = nd(rng);
      b[i] = nd(rng);
      s[i] = a[i] + b[i];
      c[i] = k * a[i];
    }
    double beta = ub(rng);
    EXPECT_GE(holder_norm(a, g, beta), sup_norm(a));
    EXPECT_NEAR(sup_norm(c), std::abs(k) * sup_norm(a), 1e-12 * (1 + std::abs(k)));
    EXPECT_NEAR(holder_norm(c, g, beta), std::abs(k) * holder_norm(a, g, beta),
                1e-11 * (1 + std::abs(k)) * holder_norm(a, g, beta));
    EXPECT_LE(sup_norm(s), sup_norm(a) + sup_norm(b) + 1e-14);
    EXPECT_LE(holder_norm(s, g, beta), holder_norm(a, g, beta) + holder_norm(b, g, beta) + 1e-12);
  }
}

TEST(Special, GammaBeta) {
  EXPECT_NEAR(gamma_fn(1.0), 1.0, 1e-15);
  EXPECT_NEAR(gamma_fn(0.5), std::sqrt(M_PI), 1e-15);
  EXPECT_NEAR(gamma_fn(5.0), 24.0, 1e-12);
  double b = beta_fn(1.3, 0.7);
  EXPECT_NEAR(b, std::tgamma(1.3) * std::tgamma(0.7) / std::tgamma(2.0), 1e-12 * b);
  EXPECT_THROW(gamma_fn(0.0), std::domain_error);
  EXPECT_THROW(beta_fn(-1.0, 1.0), std::domain_error);
}

TEST(Hurst, ConstantRelationRandom) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    double H = k % 2 ? 0.25 + 0.25 * (0.001 + 0.998 * u(rng)) : 0.5 + 0.5 * (0.001 + 0.998 * u(rng));
    auto p = HurstParams::make(H);
    EXPECT_GT(p.c_H, 0);
    EXPECT_NEAR(p.d_H, p.c_H * std::tgamma(H + 0.5), 1e-12 * p.d_H);
    EXPECT_NEAR(p.alpha, std::abs(H - 0.5), 1e-15);
    EXPECT_EQ(p.regime, H < 0.5 ? Regime::Singular : Regime::Regular);
  }
}

TEST(Hurst, LimitAtOneHalf) {
  for (double H : {0.5 - 1e-4, 0.5 + 1e-4}) {
    auto p = HurstParams::make(H);
    EXPECT_NEAR(p.c_H, 1.0, 1e-2);
    EXPECT_NEAR(p.d_H, 1.0, 1e-2);
  }
}

TEST(Hurst, Rejections) {
  EXPECT_THROW(HurstParams::make(0.5), std::invalid_argument);
  EXPECT_THROW(HurstParams::make(1.0), std::invalid_argument);
  EXPECT_THROW(HurstParams::make(0.2), std::invalid_argument);
  EXPECT_NO_THROW(HurstParams::make(0.2, false));
}

TEST(Hurst, BetaWindows) {
  auto s = HurstParams::make(0.35);
  EXPECT_TRUE(s.beta_admissible(0.05));
  EXPECT_FALSE(s.beta_admissible(0.1));  // endpoint H - 1/4 excluded
  auto r = HurstParams::make(0.7);
  EXPECT_TRUE(r.beta_admissible(0.3));
  EXPECT_FALSE(r.beta_admissible(0.15));
  EXPECT_FALSE(r.beta_admissible(0.45));
}
