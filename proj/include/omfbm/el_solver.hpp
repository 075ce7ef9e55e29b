#ifndef OMFBM_EL_SOLVER_HPP
#define OMFBM_EL_SOLVER_HPP

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "action.hpp"

namespace omfbm {

struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class MinKind { NonDegenerateSingular, NonDegenerateRegular, DegenerateSingular, DegenerateRegular };

inline const char* to_string(MinKind k) {
  switch (k) {
    case MinKind::NonDegenerateSingular: return "nondegenerate-singular";
    case MinKind::NonDegenerateRegular: return "nondegenerate-regular";
    case MinKind::DegenerateSingular: return "degenerate-singular";
    default: return "degenerate-regular";
  }
}

inline MinKind min_kind(ProblemKind k, Regime r) {
  if (k == ProblemKind::NonDegenerate)
    return r == Regime::Singular ? MinKind::NonDegenerateSingular : MinKind::NonDegenerateRegular;
  return r == Regime::Singular ? MinKind::DegenerateSingular : MinKind::DegenerateRegular;
}

// Paths are parametrised by the noisy component: phi for scalar problems, phi2 = phi1_dot for
// the degenerate class sigma(x,y) = y, where phi1 = x + trapezoid integral of phi2.
// Inside the objective phi_dot is the time derivative, taken cellwise (box scheme).
class MinimizationProblem {
public:
  MinimizationProblem(MinKind kind, DriftSpec drift, Grid grid, double H, double x0, double y0,
                      std::optional<double> terminal = std::nullopt)
      : kind_(kind), drift_(std::move(drift)), grid_(grid), hp_(HurstParams::make(H)), x0_(x0), y0_(y0),
        terminal_(terminal) {
    if (min_kind(problem_kind(), hp_.regime) != kind_)
      throw std::invalid_argument("minimization: kind does not match the regime of H");
    if (degenerate()) {
      if (!drift_.has_sigma()) throw std::invalid_argument("minimization: degenerate kind requires sigma");
      for (double x : {-1.3, 0.2, 2.1})
        for (double y : {-0.7, 0.4, 1.9})
          if (std::abs(drift_.sigma(x, y) - y) > 1e-12)
            throw std::invalid_argument("minimization: degenerate kind supports sigma(x,y) = y only");
      if (!drift_.b_xx || !drift_.b_xy || !drift_.b_yy)
        throw std::invalid_argument("minimization: second partials of b are required");
    } else if (!drift_.b_yy) {
      throw std::invalid_argument("minimization: b'' is required");
    }
    if (!std::isfinite(x0) || !std::isfinite(y0)) throw std::invalid_argument("minimization: non-finite initial value");
  }

  MinKind kind() const { return kind_; }
  ProblemKind problem_kind() const {
    return kind_ == MinKind::NonDegenerateSingular || kind_ == MinKind::NonDegenerateRegular ? ProblemKind::NonDegenerate
                                                                                              : ProblemKind::Degenerate;
  }
  bool degenerate() const { return problem_kind() == ProblemKind::Degenerate; }
  const DriftSpec& drift() const { return drift_; }
  const Grid& grid() const { return grid_; }
  const HurstParams& hurst() const { return hp_; }
  double x0() const { return x0_; }
  double y0() const { return y0_; }
  std::optional<double> terminal() const { return terminal_; }

  std::size_t n_free() const { return grid_.n_steps() - (terminal_ ? 1 : 0); }

  // noisy component on all nodes from the free values
  Vec expand(const Vec& dof) const {
    if (dof.size() != n_free()) throw std::invalid_argument("minimization: wrong number of free values");
    Vec v(grid_.size());
    v[0] = y0_;
    for (std::size_t i = 0; i < dof.size(); ++i) v[i + 1] = dof[i];
    if (terminal_) v.back() = *terminal_;
    return v;
  }

  Vec restrict(const Vec& full) const { return Vec(full.begin() + 1, full.begin() + 1 + n_free()); }

  Vec integrate_phi1(const Vec& phi2) const {
    Vec c = detail::trapezoid_cumulative(phi2, grid_.step());
    for (double& v : c) v += x0_;
    return c;
  }

  PathSample path(const Vec& dof) const {
    Vec y = expand(dof);
    if (!degenerate()) return PathSample(grid_, y);
    return PathSample(grid_, std::vector<Vec>{integrate_phi1(y), y});
  }

  // free values of an admissible path
  Vec dof_of(const PathSample& p) const {
    if (p.grid() != grid_) throw std::invalid_argument("minimization: grid mismatch");
    const Vec& y = p.component(degenerate() ? 1 : 0);
    if (std::abs(y[0] - y0_) > 1e-12 * (1.0 + std::abs(y0_)))
      throw std::invalid_argument("minimization: initial guess violates the initial condition");
    if (terminal_ && std::abs(y.back() - *terminal_) > 1e-12 * (1.0 + std::abs(*terminal_)))
      throw std::invalid_argument("minimization: initial guess violates the terminal condition");
    if (degenerate() && std::abs(p.component(0)[0] - x0_) > 1e-12 * (1.0 + std::abs(x0_)))
      throw std::invalid_argument("minimization: initial guess violates the initial condition");
    return restrict(y);
  }

private:
  MinKind kind_;
  DriftSpec drift_;
  Grid grid_;
  HurstParams hp_;
  double x0_, y0_;
  std::optional<double> terminal_;
};

namespace detail {

// transpose of phi2 -> trapezoid cumulative integral
inline Vec trapezoid_transpose(const Vec& u, double h) {
  const std::size_t n = u.size();
  Vec r(n, 0.0);
  double tail = 0.0;  // sum_{i > j} u_i
  for (std::size_t j = n; j-- > 0;) {
    r[j] = h * (tail + (j >= 1 ? 0.5 * u[j] : 0.0));
    if (j == 0) r[0] = h * 0.5 * tail;
    tail += u[j];
  }
  return r;
}

// Free values are optimised through their first differences z_i = (v_i - v_{i-1}) / h, which
// removes the O(N^2) conditioning of the kinetic term.
inline Vec values_from_rates(const Vec& z, double first, double h) {
  Vec v(z.size());
  double prev = first;
  for (std::size_t i = 0; i < z.size(); ++i) prev = v[i] = prev + h * z[i];
  return v;
}

inline Vec rates_from_values(const Vec& v, double first, double h) {
  Vec z(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) z[i] = (v[i] - (i ? v[i - 1] : first)) / h;
  return z;
}

inline Vec rates_gradient(const Vec& gv, double h) {
  Vec gz(gv.size());
  double tail = 0.0;
  for (std::size_t i = gv.size(); i-- > 0;) gz[i] = h * (tail += gv[i]);
  return gz;
}

// Cell averages of the composite M = s^{e} P(s), e = a (H < 1/2) or -a (H > 1/2), with P linear on
// each cell through P_i = M_i t_i^{-e}; the weighted hat moments are exact. P(0) is the analytic
// limit b(phi_0) Gamma(1+e)/Gamma(1+2e).
class CellAverager {
public:
  CellAverager(const Grid& g, const HurstParams& hp) : n_(g.size()), pw_(g.size(), 0.0), mu0_(g.size(), 0.0), mu1_(g.size(), 0.0) {
    const double e = hp.regime == Regime::Singular ? hp.alpha : -hp.alpha;
    const double h = g.step();
    limit0_ = std::tgamma(1.0 + e) / std::tgamma(1.0 + 2.0 * e);
    for (std::size_t i = 1; i < n_; ++i) pw_[i] = std::pow(g.node(i), -e);
    const double sc = std::pow(h, e);
    for (std::size_t c = 1; c < n_; ++c) {
      const auto& r = c == 1 ? quad::jacobi01(8, 0.0, e) : quad::legendre01(8);
      double m0 = 0.0, m1 = 0.0;
      for (std::size_t q = 0; q < r.x.size(); ++q) {
        double u = r.x[q];
        double w = r.w[q] * (c == 1 ? 1.0 : std::pow(static_cast<double>(c - 1) + u, e));
        m0 += w * (1.0 - u);
        m1 += w * u;
      }
      mu0_[c] = sc * m0;
      mu1_[c] = sc * m1;
    }
  }

  // entry c is the average over cell c = [t_{c-1}, t_c]
  Vec apply(const Vec& M, double b0) const {
    Vec P = lift(M, b0), avg(n_, 0.0);
    for (std::size_t c = 1; c < n_; ++c) avg[c] = mu0_[c] * P[c - 1] + mu1_[c] * P[c];
    return avg;
  }

  Vec apply_transpose(const Vec& v) const {
    Vec gP(n_, 0.0);
    for (std::size_t c = 1; c < n_; ++c) {
      gP[c - 1] += mu0_[c] * v[c];
      gP[c] += mu1_[c] * v[c];
    }
    Vec gM(n_, 0.0);
    for (std::size_t i = 1; i < n_; ++i) gM[i] = pw_[i] * gP[i];
    return gM;
  }

private:
  Vec lift(const Vec& M, double b0) const {
    Vec P(n_);
    for (std::size_t i = 1; i < n_; ++i) P[i] = pw_[i] * M[i];
    P[0] = limit0_ * b0;
    return P;
  }
  std::size_t n_;
  double limit0_ = 0.0;
  Vec pw_, mu0_, mu1_;
};

struct Evaluation {
  double objective = 0.0;
  ActionParts parts;
  Vec gradient;  // with respect to all nodes of the noisy component
};

inline Evaluation evaluate(const MinimizationProblem& pb, const Vec& y, bool with_gradient) {
  const Grid& g = pb.grid();
  const HurstParams& hp = pb.hurst();
  const DriftSpec& d = pb.drift();
  const double h = g.step();
  const std::size_t n = g.size();
  Vec x = pb.degenerate() ? pb.integrate_phi1(y) : Vec(n, 0.0);
  Vec b(n), by(n);
  for (std::size_t i = 0; i < n; ++i) {
    b[i] = d.b(x[i], y[i]);
    by[i] = d.b_y(x[i], y[i]);
  }
  const WeightedOperator M = inverse_composite(g, hp);
  const Vec Mb = M.apply(b);
  const CellAverager avg(g, hp);
  const Vec Mc = avg.apply(Mb, b[0]);
  const double kap = composite_scale(hp);
  // node 0 is fixed here, so the plain trapezoid rule adds only a constant
  Vec wd(n, h);
  wd[0] = wd[n - 1] = 0.5 * h;
  Evaluation ev;
  ev.parts.residual.assign(n, 0.0);
  double q = 0.0, dv = 0.0;
  for (std::size_t c = 1; c < n; ++c) {
    double r = (y[c] - y[c - 1]) / h - kap * Mc[c];
    ev.parts.residual[c] = r;
    q += h * r * r;
  }
  for (std::size_t i = 0; i < n; ++i) dv += wd[i] * by[i];
  ev.parts.quadratic = -0.5 * q;
  ev.parts.divergence = -0.5 * hp.d_H * dv;
  ev.objective = -(ev.parts.quadratic + ev.parts.divergence);
  if (!std::isfinite(ev.objective)) throw SolverError("minimization: non-finite objective");
  if (!with_gradient) return ev;

  Vec grad(n, 0.0), gc(n, 0.0);
  for (std::size_t c = 1; c < n; ++c) {
    double G = h * ev.parts.residual[c];
    grad[c] += G / h;
    grad[c - 1] -= G / h;
    gc[c] = -kap * G;
  }
  const Vec gb = M.apply_transpose(avg.apply_transpose(gc));
  Vec viaX(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    grad[i] += by[i] * gb[i] + 0.5 * hp.d_H * wd[i] * d.b_yy(x[i], y[i]);
    if (pb.degenerate()) viaX[i] = d.b_x(x[i], y[i]) * gb[i] + 0.5 * hp.d_H * wd[i] * d.b_xy(x[i], y[i]);
  }
  if (pb.degenerate()) {
    Vec s = trapezoid_transpose(viaX, h);
    for (std::size_t i = 0; i < n; ++i) grad[i] += s[i];
  }
  ev.gradient = std::move(grad);
  return ev;
}

}  // namespace detail

// I = -L on the free values
inline double objective(const MinimizationProblem& pb, const Vec& dof) {
  return detail::evaluate(pb, pb.expand(dof), false).objective;
}

inline Vec objective_gradient(const MinimizationProblem& pb, const Vec& dof) {
  return pb.restrict(detail::evaluate(pb, pb.expand(dof), true).gradient);
}

struct IterRecord {
  std::size_t iteration;
  double objective;
  double grad_norm;
  double step;
};

enum class StopReason { GradTol, MaxIters, Stalled };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::GradTol: return "grad_tol";
    case StopReason::MaxIters: return "max_iters";
    default: return "stalled";
  }
}

struct MinimizeOptions {
  std::size_t max_iters = 2000;
  double grad_tol = 1e-9;
  std::size_t memory = 10;
  double armijo_c = 1e-4;
  std::size_t max_backtracks = 60;
};

struct MinimizeResult {
  PathSample path;
  ActionReport report;
  std::vector<IterRecord> log;
  StopReason reason;
  double objective;
  Vec dof;
};

inline ActionReport minimization_report(const MinimizationProblem& pb, const Vec& dof) {
  auto ev = detail::evaluate(pb, pb.expand(dof), false);
  return detail::make_report(pb.grid(), pb.hurst(), ev.parts, 0.0);
}

// L-BFGS with backtracking Armijo steps; accepted iterates never increase the objective.
inline MinimizeResult minimize_action(const MinimizationProblem& pb, const PathSample& init,
                                      const MinimizeOptions& opt = {}) {
  const double h = pb.grid().step();
  Vec xk = detail::rates_from_values(pb.dof_of(init), pb.y0(), h);
  const std::size_t m = xk.size();
  auto eval = [&](const Vec& z, Vec& grad) {
    auto ev = detail::evaluate(pb, pb.expand(detail::values_from_rates(z, pb.y0(), h)), true);
    grad = detail::rates_gradient(pb.restrict(ev.gradient), h);
    return ev.objective;
  };
  auto dot = [](const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  Vec gk;
  double fk = eval(xk, gk);
  std::deque<std::pair<Vec, Vec>> mem;
  std::vector<IterRecord> log;
  log.push_back({0, fk, sup_norm(gk), 0.0});
  StopReason reason = StopReason::MaxIters;

  for (std::size_t it = 1; it <= opt.max_iters; ++it) {
    if (sup_norm(gk) <= opt.grad_tol) {
      reason = StopReason::GradTol;
      break;
    }
    // two-loop recursion
    Vec q = gk;
    std::vector<double> al(mem.size());
    for (std::size_t k = mem.size(); k-- > 0;) {
      const auto& [s, y] = mem[k];
      al[k] = dot(s, q) / dot(y, s);
      for (std::size_t i = 0; i < m; ++i) q[i] -= al[k] * y[i];
    }
    if (!mem.empty()) {
      const auto& [s, y] = mem.back();
      double gamma = dot(s, y) / dot(y, y);
      for (double& v : q) v *= gamma;
    } else {
      double gs = sup_norm(gk);
      for (double& v : q) v /= std::max(gs, 1.0);
    }
    for (std::size_t k = 0; k < mem.size(); ++k) {
      const auto& [s, y] = mem[k];
      double be = dot(y, q) / dot(y, s);
      for (std::size_t i = 0; i < m; ++i) q[i] += s[i] * (al[k] - be);
    }
    Vec dir(m);
    for (std::size_t i = 0; i < m; ++i) dir[i] = -q[i];
    double slope = dot(gk, dir);
    if (!(slope < 0.0)) {
      mem.clear();
      for (std::size_t i = 0; i < m; ++i) dir[i] = -gk[i];
      slope = dot(gk, dir);
    }

    double step = 1.0;
    bool accepted = false;
    Vec xn(m), gn;
    double fn = fk;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      step = 1.0;
      for (std::size_t bt = 0; bt < opt.max_backtracks; ++bt) {
        for (std::size_t i = 0; i < m; ++i) xn[i] = xk[i] + step * dir[i];
        bool finite = true;
        try {
          fn = eval(xn, gn);
        } catch (const std::runtime_error&) {
          finite = false;
        }
        if (finite && fn <= fk + opt.armijo_c * step * slope) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        // retry once along steepest descent
        if (mem.empty()) break;
        mem.clear();
        for (std::size_t i = 0; i < m; ++i) dir[i] = -gk[i];
        slope = dot(gk, dir);
      }
    }
    if (!accepted) {
      if (it == 1) throw SolverError("minimization: no descent after line-search exhaustion");
      reason = StopReason::Stalled;
      break;
    }
    Vec s(m), y(m);
    for (std::size_t i = 0; i < m; ++i) {
      s[i] = xn[i] - xk[i];
      y[i] = gn[i] - gk[i];
    }
    if (dot(s, y) > 1e-16 * std::sqrt(dot(s, s) * dot(y, y))) {
      mem.emplace_back(std::move(s), std::move(y));
      if (mem.size() > opt.memory) mem.pop_front();
    }
    xk = xn;
    gk = gn;
    fk = fn;
    log.push_back({it, fk, sup_norm(gk), step});
  }
  if (reason == StopReason::MaxIters && sup_norm(gk) <= opt.grad_tol) reason = StopReason::GradTol;
  Vec dof = detail::values_from_rates(xk, pb.y0(), h);
  return {pb.path(dof), minimization_report(pb, dof), std::move(log), reason, fk, dof};
}

inline void write_iteration_log(const std::string& file, const std::vector<IterRecord>& log) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot open " + file);
  os.precision(17);
  os << "iteration,objective,grad_norm,step\n";
  for (const auto& r : log) os << r.iteration << ',' << r.objective << ',' << r.grad_norm << ',' << r.step << '\n';
}

inline void write_path_csv(const std::string& file, const PathSample& p) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot open " + file);
  os.precision(17);
  os << (p.dim() == 1 ? "t,phi\n" : "t,phi1,phi2\n");
  for (std::size_t i = 0; i < p.grid().size(); ++i) {
    os << p.grid().node(i);
    for (std::size_t k = 0; k < p.dim(); ++k) os << ',' << p.component(k)[i];
    os << '\n';
  }
}

struct ELResidual {
  Vec values;        // interior nodes 2..N-2
  std::size_t first;  // node index of values[0]
  double norm_l2 = 0.0;
  double norm_sup = 0.0;
};

// Continuous Euler-Lagrange expressions of I = -L, phi_dot the time derivative, assembled on the grid.
// With R = phi_dot - kappa A[b(phi)] and A* the adjoint of the regime composite A,
//   scalar:      -R' - kappa b'(phi) A*R + (d_H/2) b''(phi)
//   degenerate:  R'' - kappa b_x Q + kappa (b_y Q)' + (d_H/2)(b_xy - (b_yy)'),  Q = A*R, R = phi1'' - kappa A[b]
// H < 1/2: A = s^{-a} I^a_{0+}[u^a .],  A* = s^{a} I^a_{T-}[u^{-a} .]
// H > 1/2: A = s^{a} D^a_{0+}[u^{-a} .], A* = s^{-a} D^a_{T-}[u^{a} .]
// phi_dot and R' are cell differences (staggered), other derivatives centred differences, one-sided
// at the ends; 2 nodes at each end are dropped.
inline ELResidual el_residual(const PathSample& p, const MinimizationProblem& pb) {
  const Grid& g = pb.grid();
  if (p.grid() != g) throw std::invalid_argument("el_residual: grid mismatch");
  const HurstParams& hp = pb.hurst();
  const DriftSpec& d = pb.drift();
  const double h = g.step(), a = hp.alpha, kap = detail::composite_scale(hp);
  const std::size_t n = g.size();
  const Vec& y = p.component(pb.degenerate() ? 1 : 0);
  const Vec x = pb.degenerate() ? p.component(0) : Vec(n, 0.0);
  Vec b(n);
  for (std::size_t i = 0; i < n; ++i) b[i] = d.b(x[i], y[i]);
  const Vec M = inverse_composite(g, hp).apply(b);
  // R on cells from cell averages of phi_dot and of the composite; nodes take the mean of the
  // adjacent cells
  const Vec Mc = detail::CellAverager(g, hp).apply(M, b[0]);
  Vec Rc(n, 0.0);
  for (std::size_t c = 1; c < n; ++c) Rc[c] = (y[c] - y[c - 1]) / h - kap * Mc[c];
  Vec R(n), Rd(n);
  R[0] = Rc[1];
  R[n - 1] = Rc[n - 1];
  for (std::size_t i = 1; i + 1 < n; ++i) {
    R[i] = 0.5 * (Rc[i] + Rc[i + 1]);
    Rd[i] = (Rc[i + 1] - Rc[i]) / h;
  }
  Rd[0] = Rd[1];
  Rd[n - 1] = Rd[n - 2];
  const bool sing = hp.regime == Regime::Singular;
  const Vec Q = weighted_frac_op(R, g, a, sing ? -a : a, sing ? a : -a, Side::RightMinus,
                                 sing ? Kind::Integral : Kind::Derivative)
                    .values;
  Vec E(n);
  if (!pb.degenerate()) {
    for (std::size_t i = 0; i < n; ++i)
      E[i] = -Rd[i] - kap * d.b_y(0.0, y[i]) * Q[i] + 0.5 * hp.d_H * d.b_yy(0.0, y[i]);
  } else {
    const Vec Rdd = discrete_derivative(Rd, h);
    Vec byQ(n), byy(n);
    for (std::size_t i = 0; i < n; ++i) {
      byQ[i] = d.b_y(x[i], y[i]) * Q[i];
      byy[i] = d.b_yy(x[i], y[i]);
    }
    const Vec byQd = discrete_derivative(byQ, h), byyd = discrete_derivative(byy, h);
    for (std::size_t i = 0; i < n; ++i)
      E[i] = Rdd[i] - kap * d.b_x(x[i], y[i]) * Q[i] + kap * byQd[i] + 0.5 * hp.d_H * (d.b_xy(x[i], y[i]) - byyd[i]);
  }
  ELResidual out;
  out.first = 2;
  out.values.assign(E.begin() + 2, E.end() - 2);
  double s2 = 0.0;
  for (double v : out.values) {
    if (!std::isfinite(v)) throw std::runtime_error("el_residual: non-finite value");
    s2 += v * v * h;
    out.norm_sup = std::max(out.norm_sup, std::abs(v));
  }
  out.norm_l2 = std::sqrt(s2);
  return out;
}

// (I(phi + eps psi) - I(phi - eps psi)) / (2 eps), eps = 1e-5 / |psi|_inf.
// psi perturbs the noisy component on all nodes and must vanish where it is pinned.
inline double directional_derivative(const PathSample& p, const MinimizationProblem& pb, const Vec& psi) {
  if (psi.size() != pb.grid().size()) throw std::invalid_argument("directional_derivative: psi length must be N+1");
  const double s = sup_norm(psi);
  if (s == 0.0) return 0.0;
  if (psi[0] != 0.0 || (pb.terminal() && psi.back() != 0.0))
    throw std::invalid_argument("directional_derivative: psi must vanish at pinned nodes");
  const double eps = 1e-5 / s;
  Vec dof = pb.dof_of(p);
  Vec up = dof, dn = dof;
  for (std::size_t i = 0; i < dof.size(); ++i) {
    up[i] += eps * psi[i + 1];
    dn[i] -= eps * psi[i + 1];
  }
  return (objective(pb, up) - objective(pb, dn)) / (2.0 * eps);
}

}  // namespace omfbm

#endif
