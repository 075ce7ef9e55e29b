#include <gtest/gtest.h>

#include <cmath>

#include "omfbm/action.hpp"

using namespace omfbm;

namespace {

DriftSpec example2_drift() {
  DriftSpec d = double_well_xy();
  set_sigma_identity_y(d);
  return d;
}

ReferencePath scalar_from_phi(const Vec& phi, const Grid& g, const HurstParams& hp) {
  PathInput in;
  in.phi2 = phi;
  return build_reference_path(ProblemKind::NonDegenerate, double_well_scalar(), in, 0.0, phi[0], g, hp);
}

}  // namespace

TEST(Drift, RegistryPassesValidation) {
  EXPECT_NO_THROW(double_well_scalar().validate());
  EXPECT_NO_THROW(example2_drift().validate());
  EXPECT_NO_THROW(linear_y(-0.7).validate());
  EXPECT_NO_THROW(zero_drift().validate());
  EXPECT_NO_THROW(separable_polynomial("p", {1, 2, 3}, {0.5, -1, 0, 0.25}).validate());
}

TEST(Drift, WrongPartialRejected) {
  DriftSpec d = double_well_scalar();
  d.b_y = [](double, double y) { return 1.0 - 2.0 * y * y; };
  EXPECT_THROW(d.validate(), std::invalid_argument);
  DriftSpec e = example2_drift();
  e.sigma_y = [](double, double) { return 0.5; };
  EXPECT_THROW(e.validate(), std::invalid_argument);
}

TEST(ReferencePath, ConstantsIntegrateExactly) {
  Grid g(1.0, 64);
  auto hp = HurstParams::make(0.35);
  PathInput in;
  in.phi2_dot = Vec(g.size(), 0.0);
  auto p = build_reference_path(ProblemKind::Degenerate, example2_drift(), in, -1.0, 1.0, g, hp);
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_DOUBLE_EQ(p.phi.component(1)[i], 1.0);
    EXPECT_NEAR(p.phi.component(0)[i], -1.0 + g.node(i), 1e-13);
  }
  EXPECT_LE(p.structural_residual, 1e-12);
}

TEST(ReferencePath, Example2StructureReproduced) {
  Grid g(1.0, 256);
  auto hp = HurstParams::make(0.7);
  PathInput in;
  in.phi2_dot = g.sample([](double t) { return std::cos(3 * t); });
  auto p = build_reference_path(ProblemKind::Degenerate, example2_drift(), in, -1.0, 1.0, g, hp);
  const Vec& y = p.phi.component(1);
  double acc = -1.0;
  for (std::size_t i = 1; i < g.size(); ++i) {
    acc += 0.5 * g.step() * (y[i - 1] + y[i]);
    EXPECT_NEAR(p.phi.component(0)[i], acc, 1e-12);
  }
}

TEST(ReferencePath, StiffSigmaDoesNotConverge) {
  Grid g(1.0, 8);
  auto hp = HurstParams::make(0.35);
  DriftSpec d = zero_drift();
  d.sigma = [](double x, double) { return 40.0 * x; };
  d.sigma_x = [](double, double) { return 40.0; };
  d.sigma_y = zero2();
  PathInput in;
  in.phi2_dot = Vec(g.size(), 0.0);
  EXPECT_THROW(build_reference_path(ProblemKind::Degenerate, d, in, 1.0, 0.0, g, hp), std::runtime_error);
}

TEST(ReferencePath, DegenerateRequiresSigma) {
  Grid g(1.0, 16);
  auto hp = HurstParams::make(0.35);
  PathInput in;
  in.phi2_dot = Vec(g.size(), 0.0);
  EXPECT_THROW(build_reference_path(ProblemKind::Degenerate, zero_drift(), in, 0.0, 0.0, g, hp),
               std::invalid_argument);
}

TEST(ReferencePath, RoundTripAtN2048) {
  Grid g(1.0, 2048);
  for (double H : {0.35, 0.7}) {
    auto hp = HurstParams::make(H);
    Vec phi = g.sample([](double t) { return 1.0 + std::sin(2 * t) + 0.5 * t * t; });
    auto p = scalar_from_phi(phi, g, hp);
    EXPECT_LE(p.roundtrip_residual, 2e-2) << H;
  }
}

TEST(Action, ZeroDriftGivesKineticTerm) {
  Grid g(1.0, 256);
  for (double H : {0.35, 0.7}) {
    auto hp = HurstParams::make(H);
    PathInput in;
    in.phi2_dot = g.sample([](double t) { return 1.0 + t; });
    auto p = build_reference_path(ProblemKind::NonDegenerate, zero_drift(), in, 0.0, 0.0, g, hp);
    auto r = om_action_nondegenerate(p, zero_drift(), hp);
    EXPECT_EQ(r.divergence_term, 0.0);
    // -1/2 int (1+t)^2 = -7/6
    EXPECT_NEAR(r.total, -7.0 / 6.0, 5e-3);
  }
}

TEST(Action, Example1ConstantPath) {
  for (double T : {1.0, 2.5}) {
    Grid g(T, 128);
    for (double H : {0.3, 0.45, 0.6, 0.9}) {
      auto hp = HurstParams::make(H);
      auto p = scalar_from_phi(Vec(g.size(), 1.0), g, hp);
      auto r = om_action_nondegenerate(p, double_well_scalar(), hp);
      EXPECT_EQ(r.quadratic_term, 0.0);
      EXPECT_NEAR(r.total, hp.d_H * T, 1e-12);
    }
  }
}

TEST(Action, ClassicalLimit) {
  Grid g(1.0, 1024);
  Vec phi = g.sample([](double t) { return 0.5 + 2.0 * std::sin(2 * t) - 0.3 * t * t; });
  double classical = classical_om_action(phi, double_well_scalar(), g);
  for (double H : {0.499, 0.501}) {
    auto hp = HurstParams::make(H);
    auto p = scalar_from_phi(phi, g, hp);
    double v = om_action_nondegenerate(p, double_well_scalar(), hp).total;
    EXPECT_NEAR(v, classical, 0.02 * std::abs(classical)) << H;
  }
}

TEST(Action, TotalIsSumBitwiseAndSigns) {
  Grid g(1.0, 512);
  for (double H : {0.3, 0.4, 0.6, 0.8}) {
    auto hp = HurstParams::make(H);
    for (int k = 0; k < 5; ++k) {
      Vec phi = g.sample([k](double t) { return -1.0 + 0.5 * k + std::sin((k + 1) * t); });
      auto p = scalar_from_phi(phi, g, hp);
      auto d = double_well_scalar();
      auto r = om_action_nondegenerate(p, d, hp);
      EXPECT_EQ(r.total, r.quadratic_term + r.divergence_term);
      EXPECT_LE(r.quadratic_term, 0.0);
      double iby = 0.0;
      for (std::size_t i = 1; i < g.size(); ++i) iby += d.b_y(0.0, phi[i]);
      EXPECT_EQ(std::signbit(r.divergence_term), !std::signbit(iby));
    }
  }
}

TEST(Action, RefinementDifferencesDecrease) {
  for (double H : {0.35, 0.7}) {
    auto hp = HurstParams::make(H);
    auto total = [&](std::size_t N) {
      Grid g(1.0, N);
      PathInput in;
      in.phi2_dot = g.sample([](double t) { return std::cos(2 * t); });
      auto p = build_reference_path(ProblemKind::NonDegenerate, double_well_scalar(), in, 0.0, 0.5, g, hp);
      return om_action_nondegenerate(p, double_well_scalar(), hp).total;
    };
    double t256 = total(256), t512 = total(512), t1024 = total(1024), t2048 = total(2048);
    double d1 = std::abs(t256 - t512), d2 = std::abs(t512 - t1024), d3 = std::abs(t1024 - t2048);
    EXPECT_GT(d1, d2) << H;
    EXPECT_GT(d2, d3) << H;
  }
}

TEST(Action, RegimeSymmetry) {
  Grid g(1.0, 512);
  DriftSpec d = linear_y(-0.8);
  Vec phi = g.sample([](double t) { return 1.0 + t - t * t; });
  auto hs = HurstParams::make(0.499), hr = HurstParams::make(0.501);
  double vs = om_action_nondegenerate(scalar_from_phi(phi, g, hs), d, hs).total;
  double vr = om_action_nondegenerate(scalar_from_phi(phi, g, hr), d, hr).total;
  EXPECT_NEAR(vs, vr, 0.02 * std::abs(vr));
}

TEST(Action, DegenerateExample2HasNoDivergence) {
  Grid g(1.0, 256);
  for (double H : {0.35, 0.7}) {
    auto hp = HurstParams::make(H);
    PathInput in;
    in.phi2_dot = g.sample([](double t) { return 1.0 - t; });
    auto d = example2_drift();
    auto p = build_reference_path(ProblemKind::Degenerate, d, in, -1.0, 1.0, g, hp);
    auto r = om_action_degenerate(p, d, hp);
    EXPECT_EQ(r.divergence_term, 0.0);
    EXPECT_LT(r.quadratic_term, 0.0);

    DriftSpec z = zero_drift();
    set_sigma_identity_y(z);
    auto rz = om_action_degenerate(p, z, hp);
    EXPECT_DOUBLE_EQ(rz.total, -0.5 * detail::QuadraticForm(g, hp).value(p.phi2_dot));
  }
}

TEST(Action, SecondOrderEntryAgrees) {
  Grid g(1.0, 256);
  for (double H : {0.35, 0.7}) {
    auto hp = HurstParams::make(H);
    PathInput in;
    in.phi2_dot = g.sample([](double t) { return std::sin(4 * t); });
    auto d = example2_drift();
    auto p = build_reference_path(ProblemKind::Degenerate, d, in, -1.0, 1.0, g, hp);
    auto a = om_action_degenerate(p, d, hp);
    auto b = om_action_second_order(p.phi.component(0), p.phi.component(1), p.phi2_dot, d, g, hp);
    EXPECT_NEAR(a.total, b.total, 1e-10);
  }
}

TEST(Action, StructuralViolationRefused) {
  Grid g(1.0, 64);
  auto hp = HurstParams::make(0.35);
  auto d = example2_drift();
  PathInput in;
  in.phi2_dot = Vec(g.size(), 0.5);
  auto p = build_reference_path(ProblemKind::Degenerate, d, in, -1.0, 1.0, g, hp);
  Vec x = p.phi.component(0);
  x[10] += 1e-3;
  ReferencePath bad{p.kind, PathSample(g, std::vector<Vec>{x, p.phi.component(1)}), p.phi2_dot, p.x0, p.y0};
  EXPECT_THROW(om_action_degenerate(bad, d, hp), std::runtime_error);
  EXPECT_THROW(om_action_nondegenerate(p, d, hp), std::invalid_argument);
}

TEST(Action, ReportJson) {
  Grid g(1.0, 32);
  auto hp = HurstParams::make(0.7);
  auto p = scalar_from_phi(Vec(g.size(), 1.0), g, hp);
  auto j = om_action_nondegenerate(p, double_well_scalar(), hp).to_json();
  EXPECT_EQ(j["regime"], "regular");
  EXPECT_EQ(j["N"], 32);
  EXPECT_DOUBLE_EQ(j["total"].get<double>(), hp.d_H);
  EXPECT_TRUE(j.contains("structural_residual"));
}

TEST(Trace, ZeroWhenDriftIndependentOfY) {
  Grid g(1.0, 64);
  auto hp = HurstParams::make(0.35);
  auto d = example2_drift();
  PathInput in;
  in.phi2_dot = Vec(g.size(), 0.0);
  auto p = build_reference_path(ProblemKind::Degenerate, d, in, -1.0, 1.0, g, hp);
  auto t = trace_divergence_check(d, p, hp);
  EXPECT_EQ(t.numeric_trace, 0.0);
  EXPECT_EQ(t.closed_form, 0.0);
}

TEST(Trace, IdentityBothRegimes) {
  Grid g(1.0, 1024);
  DriftSpec d = separable_polynomial("y", {}, {0.0, 1.0});
  for (double H : {0.35, 0.7}) {
    auto hp = HurstParams::make(H);
    auto p = scalar_from_phi(Vec(g.size(), 0.3), g, hp);
    auto t = trace_divergence_check(d, p, hp);
    EXPECT_NEAR(t.closed_form, 0.5 * hp.d_H, 1e-12);
    EXPECT_NEAR(t.numeric_trace, t.closed_form, 5e-2 * t.closed_form) << H;
  }
}

TEST(Trace, NonConstantIntegrand) {
  Grid g(1.0, 512);
  DriftSpec d = double_well_scalar();
  for (double H : {0.35, 0.7}) {
    auto hp = HurstParams::make(H);
    auto p = scalar_from_phi(g.sample([](double t) { return 0.2 + 0.8 * t; }), g, hp);
    auto t = trace_divergence_check(d, p, hp);
    EXPECT_NEAR(t.numeric_trace, t.closed_form, 5e-2 * std::abs(t.closed_form)) << H;
  }
}
