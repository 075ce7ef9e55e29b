#ifndef OMFBM_GRID_HPP
#define OMFBM_GRID_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace omfbm {

using Vec = std::vector<double>;

class Grid {
public:
  Grid(double t_end, std::size_t n_steps) : t_end_(t_end), n_(n_steps) {
    if (!(t_end > 0.0) || !std::isfinite(t_end))
      throw std::invalid_argument("grid: T must be positive and finite");
    if (n_steps < 8)
      throw std::invalid_argument("grid: n_steps must be >= 8");
    h_ = t_end / static_cast<double>(n_steps);
  }

  double t_end() const { return t_end_; }
  std::size_t n_steps() const { return n_; }
  std::size_t size() const { return n_ + 1; }
  double step() const { return h_; }
  // last node is exactly T
  double node(std::size_t i) const { return i == n_ ? t_end_ : static_cast<double>(i) * h_; }

  Vec nodes() const {
    Vec t(size());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = node(i);
    return t;
  }

  template <class F>
  Vec sample(F&& f) const {
    Vec v(size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(node(i));
    return v;
  }

  bool operator==(const Grid& o) const { return n_ == o.n_ && t_end_ == o.t_end_; }
  bool operator!=(const Grid& o) const { return !(*this == o); }

private:
  double t_end_;
  std::size_t n_;
  double h_;
};

class PathSample {
public:
  PathSample(Grid g, std::vector<Vec> comps) : grid_(g), comps_(std::move(comps)) {
    if (comps_.empty() || comps_.size() > 2)
      throw std::invalid_argument("path: 1 or 2 components required");
    for (const auto& c : comps_) {
      if (c.size() != grid_.size())
        throw std::invalid_argument("path: component length must be N+1");
      for (double v : c)
        if (!std::isfinite(v)) throw std::invalid_argument("path: non-finite value");
    }
  }
  PathSample(Grid g, Vec single) : PathSample(g, std::vector<Vec>{std::move(single)}) {}

  const Grid& grid() const { return grid_; }
  std::size_t dim() const { return comps_.size(); }
  const Vec& component(std::size_t k) const {
    if (k >= comps_.size()) throw std::out_of_range("path: component out of range");
    return comps_[k];
  }
  const std::vector<Vec>& components() const { return comps_; }

private:
  Grid grid_;
  std::vector<Vec> comps_;
};

inline double gamma_fn(double x) {
  if (!(x > 0.0)) throw std::domain_error("gamma_fn: argument must be positive");
  return boost::math::tgamma(x);
}

inline double beta_fn(double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw std::domain_error("beta_fn: arguments must be positive");
  return boost::math::beta(a, b);
}

enum class Regime { Singular, Regular };

inline const char* to_string(Regime r) { return r == Regime::Singular ? "singular" : "regular"; }

struct HurstParams {
  double H;
  double alpha;
  Regime regime;
  double c_H;
  double d_H;

  // strict: enforce the windows (1/4,1/2) and (1/2,1); loose accepts any H in (0,1)\{1/2}
  static HurstParams make(double H, bool strict = true) {
    if (!(H > 0.0 && H < 1.0) || H == 0.5)
      throw std::invalid_argument("hurst: H must lie in (0,1) and differ from 1/2");
    if (strict && !(H > 0.25))
      throw std::invalid_argument("hurst: singular regime requires 1/4 < H < 1/2");
    HurstParams p{};
    p.H = H;
    p.regime = H < 0.5 ? Regime::Singular : Regime::Regular;
    p.alpha = std::abs(H - 0.5);
    p.c_H = std::sqrt(2.0 * H * boost::math::tgamma(1.5 - H) /
                      (boost::math::tgamma(H + 0.5) * boost::math::tgamma(2.0 - 2.0 * H)));
    p.d_H = std::sqrt(2.0 * H * boost::math::tgamma(1.5 - H) * boost::math::tgamma(H + 0.5) /
                      boost::math::tgamma(2.0 - 2.0 * H));
    return p;
  }

  bool beta_admissible(double beta) const {
    double hi = H - 0.25;
    double lo = regime == Regime::Singular ? 0.0 : H - 0.5;
    return beta > lo && beta < hi;
  }
};

inline double fbm_cov(double H, double t, double s) {
  return 0.5 * (std::pow(t, 2 * H) + std::pow(s, 2 * H) - std::pow(std::abs(t - s), 2 * H));
}

inline double sup_norm(const Vec& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline double sup_norm(const PathSample& p, std::size_t component) {
  return sup_norm(p.component(component));
}

// O(N^2) over all node pairs
inline double holder_seminorm(const Vec& v, const Grid& g, double beta) {
  if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("holder: beta must lie in (0,1)");
  const std::size_t n = v.size();
  const double h = g.step();
  Vec w(n);
  for (std::size_t d = 1; d < n; ++d) w[d] = std::pow(h * static_cast<double>(d), -beta);
  double m = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m = std::max(m, std::abs(v[j] - v[i]) * w[j - i]);
  return m;
}

inline double holder_norm(const Vec& v, const Grid& g, double beta) {
  return sup_norm(v) + holder_seminorm(v, g, beta);
}

inline double holder_norm(const PathSample& p, std::size_t component, double beta) {
  return holder_norm(p.component(component), p.grid(), beta);
}

}  // namespace omfbm

#endif
