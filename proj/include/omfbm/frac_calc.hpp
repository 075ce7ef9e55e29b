#ifndef OMFBM_FRAC_CALC_HPP
#define OMFBM_FRAC_CALC_HPP

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <tuple>
#include <utility>
#include <vector>

#include "grid.hpp"
#include "quadrature.hpp"

namespace omfbm {

enum class Side { LeftPlus, RightMinus };
enum class Kind { Integral, Derivative };

namespace detail {

inline void check_order(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("frac: alpha must lie in (0,1)");
}

// Lower-triangular matrix, row i holds columns 0..i.
struct Packed {
  std::size_t n = 0;
  std::vector<double> a;
  explicit Packed(std::size_t n_ = 0) : n(n_), a(n_ * (n_ + 1) / 2, 0.0) {}
  double& at(std::size_t i, std::size_t j) { return a[i * (i + 1) / 2 + j]; }
  double at(std::size_t i, std::size_t j) const { return a[i * (i + 1) / 2 + j]; }
  const double* row(std::size_t i) const { return a.data() + i * (i + 1) / 2; }
};

// \int_k^{k+1} x^p (i-x)^c {1, x-k} dx on the unit lattice
inline std::pair<double, double> cell_moments(std::size_t k, std::size_t i, double p, double c) {
  const double kd = static_cast<double>(k), id = static_cast<double>(i);
  if (k == 0 && i == 1) {
    return {std::exp(std::lgamma(p + 1) + std::lgamma(c + 1) - std::lgamma(p + c + 2)),
            std::exp(std::lgamma(p + 2) + std::lgamma(c + 1) - std::lgamma(p + c + 3))};
  }
  double m0 = 0.0, m1 = 0.0;
  if (k == 0 && p != 0.0) {
    const auto& r = quad::jacobi01(10, 0.0, p);
    for (std::size_t q = 0; q < r.x.size(); ++q) {
      double x = r.x[q];
      double f = std::pow(id - x, c) * r.w[q];
      m0 += f;
      m1 += f * x;
    }
    return {m0, m1};
  }
  if (k + 1 == i) {
    const auto& r = quad::jacobi01(10, c, 0.0);
    for (std::size_t q = 0; q < r.x.size(); ++q) {
      double x = kd + r.x[q];
      double f = (p == 0.0 ? 1.0 : std::pow(x, p)) * r.w[q];
      m0 += f;
      m1 += f * r.x[q];
    }
    return {m0, m1};
  }
  const std::size_t dist = std::min(k, i - k - 1);
  const auto& r = quad::legendre01(dist < 4 ? 10 : 5);
  for (std::size_t q = 0; q < r.x.size(); ++q) {
    double x = kd + r.x[q];
    double f = (p == 0.0 ? 1.0 : std::pow(x, p)) * std::pow(id - x, c) * r.w[q];
    m0 += f;
    m1 += f * r.x[q];
  }
  return {m0, m1};
}

// Unit-step weights for y^p-weighted operators; the physical operator is h^{p+alpha} (integral)
// or h^{p-alpha} (derivative) times this, with Gamma normalisation included.
inline Packed build_weights(std::size_t n_steps, double alpha, double p, Kind kind) {
  const std::size_t n = n_steps + 1;
  Packed W(n);
  if (kind == Kind::Integral) {
    const double g = 1.0 / std::tgamma(alpha);
    for (std::size_t i = 1; i < n; ++i)
      for (std::size_t k = 0; k < i; ++k) {
        auto [m0, m1] = cell_moments(k, i, p, alpha - 1.0);
        W.at(i, k) += g * (m0 - m1);
        W.at(i, k + 1) += g * m1;
      }
  } else {
    const double g = 1.0 / std::tgamma(1.0 - alpha);
    // (s^p - y^p) part of the Weyl integral in closed form
    const double C = std::tgamma(-alpha) * (1.0 / std::tgamma(1.0 - alpha) -
                                            std::tgamma(p + 1.0) / std::tgamma(p + 1.0 - alpha));
    for (std::size_t i = 1; i < n; ++i) {
      const double id = static_cast<double>(i);
      W.at(i, i) += g * (1.0 + alpha * C) * std::pow(id, p - alpha);
      for (std::size_t k = 0; k + 1 < i; ++k) {
        auto [m0, m1] = cell_moments(k, i, p, -alpha - 1.0);
        // (f_i - f_k) m0 - (f_{k+1} - f_k) m1
        W.at(i, i) += g * alpha * m0;
        W.at(i, k) += g * alpha * (m1 - m0);
        W.at(i, k + 1) -= g * alpha * m1;
      }
      auto [ml, unused] = cell_moments(i - 1, i, p, -alpha);
      (void)unused;
      W.at(i, i) += g * alpha * ml;
      W.at(i, i - 1) -= g * alpha * ml;
    }
  }
  return W;
}

inline std::shared_ptr<const Packed> cached_weights(std::size_t n_steps, double alpha, double p,
                                                    Kind kind) {
  static std::mutex mu;
  static std::map<std::tuple<std::size_t, double, double, int>, std::shared_ptr<const Packed>> cache;
  auto key = std::make_tuple(n_steps, alpha, p, static_cast<int>(kind));
  {
    std::lock_guard<std::mutex> lk(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  auto w = std::make_shared<const Packed>(build_weights(n_steps, alpha, p, kind));
  std::lock_guard<std::mutex> lk(mu);
  return cache.emplace(key, w).first->second;
}

inline double extrapolate0(const Vec& v) { return 3.0 * v[1] - 3.0 * v[2] + v[3]; }

}  // namespace detail

struct FracResult {
  Vec values;
  std::vector<std::size_t> extrapolated;  // nodes filled by quadratic extrapolation
};

// Linear map f -> s^q Op^alpha_{0+}[u^p f](s) on a grid, left side.
class WeightedOperator {
public:
  WeightedOperator(const Grid& g, double alpha, double inner_power, double outer_power, Kind kind)
      : grid_(g), alpha_(alpha), p_(inner_power), q_(outer_power), kind_(kind) {
    detail::check_order(alpha);
    if (!(inner_power > -1.0)) throw std::invalid_argument("frac: inner_power must exceed -1");
    W_ = detail::cached_weights(g.n_steps(), alpha, inner_power, kind);
    const double h = g.step();
    const double hs = std::pow(h, kind == Kind::Integral ? p_ + alpha : p_ - alpha);
    scale_.assign(g.size(), 0.0);
    for (std::size_t i = 1; i < g.size(); ++i) scale_[i] = hs * std::pow(g.node(i), q_);
    const double e = q_ + p_ + (kind == Kind::Integral ? alpha : -alpha);
    if (kind == Kind::Integral && e > 1e-14) {
      mode0_ = Zero;
    } else if (kind == Kind::Integral && std::abs(e) <= 1e-14) {
      mode0_ = Limit;
      limit0_ = std::tgamma(p_ + 1.0) / std::tgamma(p_ + alpha + 1.0);
    } else {
      mode0_ = Extrap;
    }
  }

  const Grid& grid() const { return grid_; }
  bool node0_extrapolated() const { return mode0_ == Extrap; }

  Vec apply(const Vec& f) const {
    const std::size_t n = grid_.size();
    if (f.size() != n) throw std::invalid_argument("frac: size mismatch");
    Vec out(n, 0.0);
    for (std::size_t i = 1; i < n; ++i) {
      const double* w = W_->row(i);
      double s = 0.0;
      for (std::size_t j = 0; j <= i; ++j) s += w[j] * f[j];
      out[i] = scale_[i] * s;
    }
    if (mode0_ == Limit) out[0] = limit0_ * f[0];
    else if (mode0_ == Extrap) out[0] = detail::extrapolate0(out);
    return out;
  }

  // adjoint of apply in the plain Euclidean pairing
  Vec apply_transpose(const Vec& v) const {
    const std::size_t n = grid_.size();
    Vec r = v;
    Vec out(n, 0.0);
    if (mode0_ == Limit) out[0] += limit0_ * v[0];
    else if (mode0_ == Extrap) {
      r[1] += 3.0 * v[0];
      r[2] -= 3.0 * v[0];
      r[3] += v[0];
    }
    for (std::size_t i = 1; i < n; ++i) {
      const double* w = W_->row(i);
      const double c = scale_[i] * r[i];
      if (c == 0.0) continue;
      for (std::size_t j = 0; j <= i; ++j) out[j] += w[j] * c;
    }
    return out;
  }

private:
  enum Mode0 { Zero, Limit, Extrap };
  Grid grid_;
  double alpha_, p_, q_;
  Kind kind_;
  std::shared_ptr<const detail::Packed> W_;
  Vec scale_;
  Mode0 mode0_ = Zero;
  double limit0_ = 0.0;
};

namespace detail {

inline Vec reversed(const Vec& v) { return Vec(v.rbegin(), v.rend()); }

}  // namespace detail

inline FracResult weighted_frac_op(const Vec& f, const Grid& g, double alpha, double inner_power,
                                   double outer_power, Side side, Kind kind) {
  detail::check_order(alpha);
  if (!(inner_power > -1.0)) throw std::invalid_argument("frac: inner_power must exceed -1");
  if (f.size() != g.size()) throw std::invalid_argument("frac: size mismatch");
  FracResult res;
  if (side == Side::LeftPlus) {
    WeightedOperator op(g, alpha, inner_power, outer_power, kind);
    res.values = op.apply(f);
    if (op.node0_extrapolated()) res.extrapolated.push_back(0);
    return res;
  }
  // right side: u^p is smooth away from 0, so weight pointwise and reflect t -> T - t
  const std::size_t n = g.size();
  Vec w(n);
  for (std::size_t i = 1; i < n; ++i) w[i] = std::pow(g.node(i), inner_power) * f[i];
  bool fill0 = inner_power < 0.0;
  w[0] = fill0 ? detail::extrapolate0(w) : (inner_power == 0.0 ? f[0] : 0.0);
  WeightedOperator op(g, alpha, 0.0, 0.0, kind);
  Vec r = detail::reversed(op.apply(detail::reversed(w)));
  for (std::size_t i = 1; i < n; ++i) r[i] *= std::pow(g.node(i), outer_power);
  if (op.node0_extrapolated()) res.extrapolated.push_back(n - 1);
  if (outer_power < 0.0 || fill0) {
    r[0] = detail::extrapolate0(r);
    res.extrapolated.insert(res.extrapolated.begin(), 0);
  } else if (outer_power > 0.0) {
    r[0] = 0.0;
  }
  res.values = std::move(r);
  return res;
}

inline Vec frac_integral(const Vec& f, const Grid& g, double alpha, Side side = Side::LeftPlus) {
  return weighted_frac_op(f, g, alpha, 0.0, 0.0, side, Kind::Integral).values;
}

// Weyl form; f should be Hoelder of order > alpha for convergence
inline Vec frac_derivative(const Vec& f, const Grid& g, double alpha, Side side = Side::LeftPlus) {
  return weighted_frac_op(f, g, alpha, 0.0, 0.0, side, Kind::Derivative).values;
}

inline double lp_norm(const Vec& f, const Grid& g, double p) {
  const double h = g.step();
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    double w = (i == 0 || i + 1 == f.size()) ? 0.5 * h : h;
    s += w * std::pow(std::abs(f[i]), p);
  }
  return std::pow(s, 1.0 / p);
}

struct NormBound {
  double lhs;
  double rhs;
};

inline NormBound frac_norm_bound_check(const Vec& f, const Grid& g, double alpha, double p) {
  if (!(p >= 1.0)) throw std::invalid_argument("frac_norm_bound_check: p must be >= 1");
  detail::check_order(alpha);
  Vec I = frac_integral(f, g, alpha);
  double rhs = std::pow(g.t_end(), alpha) / (alpha * std::tgamma(alpha)) * lp_norm(f, g, p);
  return {lp_norm(I, g, p), rhs};
}

}  // namespace omfbm

#endif
