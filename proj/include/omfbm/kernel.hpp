#ifndef OMFBM_KERNEL_HPP
#define OMFBM_KERNEL_HPP

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "frac_calc.hpp"
#include "grid.hpp"
#include "quadrature.hpp"

namespace omfbm {

// Evaluates K^H(r,u) through the scale-free profiles
//   H < 1/2:  K = c_H (r-u)^{-a} + c_H a u^{-a} G((r-u)/u),  G(z) = \int_0^z w^{-a-1}(1-(1+w)^{-a}) dw
//   H > 1/2:  K = c_H a u^{a} J((r-u)/u),                   J(z) = \int_0^z w^{a-1}(1+w)^{a} dw
// Each profile is split at z = 1 and the tail is mapped to v = 1/w, leaving Jacobi-weighted
// integrands that are analytic on [0,1].
class KernelEvaluator {
public:
  explicit KernelEvaluator(const HurstParams& hp) : hp_(hp), a_(hp.alpha) {
    if (hp.regime == Regime::Singular) {
      G1_ = G_small(1.0);
      P1_ = P(1.0);
    } else {
      J1_ = J_small(1.0);
      Q1_ = Q(1.0);
    }
  }

  const HurstParams& hurst() const { return hp_; }

  double operator()(double r, double u) const {
    if (!(u > 0.0) || !(u < r)) throw std::domain_error("kernel_value: requires 0 < u < r");
    const double z = (r - u) / u;
    if (hp_.regime == Regime::Singular)
      return hp_.c_H * std::pow(r - u, -a_) + hp_.c_H * a_ * std::pow(u, -a_) * G(z);
    return hp_.c_H * a_ * std::pow(u, a_) * J(z);
  }

  // K(r,u) (r-u)^{a} for H < 1/2, bounded as u -> r
  double regularised(double r, double u) const {
    const double z = (r - u) / u;
    return hp_.c_H + hp_.c_H * a_ * std::pow(u, -a_) * std::pow(r - u, a_) * G(z);
  }

  double G(double z) const {
    if (z <= 1.0) return G_small(z);
    return G1_ + (1.0 - std::pow(z, -a_)) / a_ - (P1_ - P(1.0 / z));
  }

  double J(double z) const {
    if (z <= 1.0) return J_small(z);
    return J1_ + (std::pow(z, 2 * a_) - 1.0) / (2 * a_) + (Q1_ - Q(1.0 / z));
  }

private:
  static constexpr int kPts = 16;

  double G_small(double z) const {
    const auto& r = quad::jacobi01(kPts, 0.0, -a_);
    double s = 0.0;
    for (int k = 0; k < kPts; ++k) {
      double w = z * r.x[k];
      s += r.w[k] * (-std::expm1(-a_ * std::log1p(w)) / w);
    }
    return std::pow(z, 1.0 - a_) * s;
  }
  double P(double b) const {
    const auto& r = quad::jacobi01(kPts, 0.0, 2 * a_ - 1.0);
    double s = 0.0;
    for (int k = 0; k < kPts; ++k) s += r.w[k] * std::pow(1.0 + b * r.x[k], -a_);
    return std::pow(b, 2 * a_) * s;
  }
  double J_small(double z) const {
    const auto& r = quad::jacobi01(kPts, 0.0, a_ - 1.0);
    double s = 0.0;
    for (int k = 0; k < kPts; ++k) s += r.w[k] * std::pow(1.0 + z * r.x[k], a_);
    return std::pow(z, a_) * s;
  }
  double Q(double b) const {
    const auto& r = quad::jacobi01(kPts, 0.0, -2 * a_);
    double s = 0.0;
    for (int k = 0; k < kPts; ++k) {
      double v = b * r.x[k];
      s += r.w[k] * (std::expm1(a_ * std::log1p(v)) / v);
    }
    return std::pow(b, 1.0 - 2 * a_) * s;
  }

  HurstParams hp_;
  double a_;
  double G1_ = 0, P1_ = 0, J1_ = 0, Q1_ = 0;
};

inline double kernel_value(const HurstParams& hp, double r, double u) {
  return KernelEvaluator(hp)(r, u);
}

namespace detail {

// \int_j^{j+1} K(i, x) dx on the unit lattice
inline double unit_cell_integral(const KernelEvaluator& K, std::size_t i, std::size_t j) {
  const double a = K.hurst().alpha;
  const bool singular = K.hurst().regime == Regime::Singular;
  const double id = static_cast<double>(i), jd = static_cast<double>(j);
  auto plain = [&](double lo, double hi, int n) {
    return quad::integrate(quad::legendre01(n), lo, hi, [&](double x) { return K(id, x); });
  };
  // weight (x - lo)^{-a} at the origin, where K ~ x^{-a} in both regimes
  auto left = [&](double lo, double hi) {
    const auto& r = quad::jacobi01(12, 0.0, -a);
    const double L = hi - lo;
    double s = 0.0;
    for (std::size_t k = 0; k < r.x.size(); ++k) {
      double x = lo + L * r.x[k];
      s += r.w[k] * K(id, x) * std::pow(x - lo, a);
    }
    return s * std::pow(L, 1.0 - a);
  };
  // weight (hi - x)^{e} at the diagonal
  auto right = [&](double lo, double hi) {
    const double e = singular ? -a : a;
    const auto& r = quad::jacobi01(12, e, 0.0);
    const double L = hi - lo;
    double s = 0.0;
    for (std::size_t k = 0; k < r.x.size(); ++k) {
      double x = lo + L * r.x[k];
      double f = singular ? K.regularised(id, x) : K(id, x) * std::pow(id - x, -a);
      s += r.w[k] * f;
    }
    return s * std::pow(L, 1.0 + e);
  };
  if (j + 1 == i) {
    if (j == 0) return left(0.0, 0.5) + right(0.5, 1.0);
    return right(jd, jd + 1.0);
  }
  if (j == 0) return left(0.0, 1.0);
  const std::size_t dist = std::min(j, i - j - 1);
  return plain(jd, jd + 1.0, dist < 4 ? 10 : (dist < 16 ? 4 : 2));
}

}  // namespace detail

// Cell-averaged kernel: entry (i,j) = (1/h) \int_{t_j}^{t_{j+1}} K^H(t_i, v) dv for j < i.
class KernelMatrix {
public:
  KernelMatrix(const Grid& g, const HurstParams& hp) : grid_(g), hp_(hp), W_(g.size()) {
    KernelEvaluator K(hp);
    const double s = std::pow(g.step(), hp.H - 0.5);
    for (std::size_t i = 1; i < g.size(); ++i)
      for (std::size_t j = 0; j < i; ++j) W_.at(i, j) = s * detail::unit_cell_integral(K, i, j);
  }

  const Grid& grid() const { return grid_; }
  const HurstParams& hurst() const { return hp_; }
  // strictly lower triangular
  double operator()(std::size_t i, std::size_t j) const { return j < i ? W_.at(i, j) : 0.0; }
  const double* row(std::size_t i) const { return W_.row(i); }

  Vec apply(const Vec& f) const {
    if (f.size() != grid_.size()) throw std::invalid_argument("apply_K: size mismatch");
    const double h = grid_.step();
    Vec out(f.size(), 0.0);
    for (std::size_t i = 1; i < f.size(); ++i) {
      const double* w = row(i);
      double s = 0.0;
      for (std::size_t j = 0; j < i; ++j) s += w[j] * (f[j] + f[j + 1]);
      out[i] = 0.5 * h * s;
    }
    return out;
  }

  // (K K^T)_{ik} h, to be compared with R_H(t_i, t_k)
  double gram(std::size_t i, std::size_t k) const {
    const std::size_t m = std::min(i, k);
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += (*this)(i, j) * (*this)(k, j);
    return s * grid_.step();
  }

private:
  Grid grid_;
  HurstParams hp_;
  detail::Packed W_;
};

inline std::shared_ptr<const KernelMatrix> kernel_matrix(const Grid& g, const HurstParams& hp) {
  static std::mutex mu;
  static std::map<std::tuple<std::size_t, double, double>, std::shared_ptr<const KernelMatrix>> cache;
  auto key = std::make_tuple(g.n_steps(), g.t_end(), hp.H);
  {
    std::lock_guard<std::mutex> lk(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  auto km = std::make_shared<const KernelMatrix>(g, hp);
  std::lock_guard<std::mutex> lk(mu);
  return cache.emplace(key, km).first->second;
}

inline Vec apply_K(const Vec& h, const Grid& g, const HurstParams& hp) {
  return kernel_matrix(g, hp)->apply(h);
}

// centred differences, one-sided at both ends
inline Vec discrete_derivative(const Vec& g, double h) {
  const std::size_t n = g.size();
  Vec d(n);
  d[0] = (g[1] - g[0]) / h;
  d[n - 1] = (g[n - 1] - g[n - 2]) / h;
  for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (g[i + 1] - g[i - 1]) / (2 * h);
  return d;
}

// (K^H)^{-1} applied to a density that has already been differentiated:
//   H < 1/2: s^{-a} I^a_{0+}[u^a f] / d_H,   H > 1/2: s^{a} D^a_{0+}[u^{-a} f] / d_H
inline WeightedOperator inverse_composite(const Grid& g, const HurstParams& hp) {
  const double a = hp.alpha;
  return hp.regime == Regime::Singular ? WeightedOperator(g, a, a, -a, Kind::Integral)
                                       : WeightedOperator(g, a, -a, a, Kind::Derivative);
}

inline Vec apply_K_inverse(const Vec& gv, const Grid& g, const HurstParams& hp) {
  if (gv.size() != g.size()) throw std::invalid_argument("apply_K_inverse: size mismatch");
  if (std::abs(gv[0]) > 1e-12) throw std::invalid_argument("apply_K_inverse: g(0) must be 0");
  Vec out = inverse_composite(g, hp).apply(discrete_derivative(gv, g.step()));
  for (double& v : out) v /= hp.d_H;
  return out;
}

class CovarianceMatrix {
public:
  CovarianceMatrix(const Grid& g, double H) : grid_(g), H_(H) {
    const std::size_t n = g.n_steps();
    R_.resize(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) R_(i, j) = R_(j, i) = fbm_cov(H, g.node(i + 1), g.node(j + 1));
    llt_.compute(R_);
    if (llt_.info() != Eigen::Success)
      throw std::runtime_error("covariance: Cholesky factorisation failed");
    L_ = llt_.matrixL();
  }
  const Eigen::MatrixXd& entries() const { return R_; }
  const Eigen::MatrixXd& factor() const { return L_; }

private:
  Grid grid_;
  double H_;
  Eigen::MatrixXd R_, L_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

inline std::shared_ptr<const CovarianceMatrix> covariance_matrix(const Grid& g, double H) {
  static std::mutex mu;
  static std::map<std::tuple<std::size_t, double, double>, std::shared_ptr<const CovarianceMatrix>> cache;
  auto key = std::make_tuple(g.n_steps(), g.t_end(), H);
  {
    std::lock_guard<std::mutex> lk(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  auto cm = std::make_shared<const CovarianceMatrix>(g, H);
  std::lock_guard<std::mutex> lk(mu);
  return cache.emplace(key, cm).first->second;
}

}  // namespace omfbm

#endif
