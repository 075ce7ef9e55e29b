#ifndef OMFBM_DRIFT_HPP
#define OMFBM_DRIFT_HPP

#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace omfbm {

using Fn2 = std::function<double(double, double)>;

// Drift b(x,y) of the noisy component and optional coupling sigma(x,y) of the smooth one.
// Scalar (non-degenerate) problems carry their state in the y slot, so b' = b_y there.
struct DriftSpec {
  std::string name;
  Fn2 b, b_x, b_y;
  Fn2 b_xx, b_xy, b_yy;
  Fn2 sigma, sigma_x, sigma_y;  // empty when absent

  bool has_sigma() const { return static_cast<bool>(sigma); }

  void validate(double box = 2.0, int points = 100, std::uint64_t seed = 12345) const {
    if (!b || !b_x || !b_y) throw std::invalid_argument("drift '" + name + "': b, b_x, b_y are required");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-box, box);
    auto check = [&](const Fn2& f, const Fn2& df, int dir, const char* what, double x, double y) {
      if (!f || !df) return;
      double e = 1e-5 * (1.0 + std::abs(dir == 0 ? x : y));
      double fd = dir == 0 ? (f(x + e, y) - f(x - e, y)) / (2 * e) : (f(x, y + e) - f(x, y - e)) / (2 * e);
      double d = df(x, y);
      if (!std::isfinite(d) || std::abs(fd - d) > 1e-5 * (1.0 + std::abs(d)))
        throw std::invalid_argument("drift '" + name + "': partial " + what +
                                    " does not match finite differences");
      // effect-free contract
      if (df(x, y) != d) throw std::invalid_argument("drift '" + name + "': " + what + " is not pure");
    };
    for (int k = 0; k < points; ++k) {
      double x = u(rng), y = u(rng);
      check(b, b_x, 0, "b_x", x, y);
      check(b, b_y, 1, "b_y", x, y);
      check(b_x, b_xx, 0, "b_xx", x, y);
      check(b_x, b_xy, 1, "b_xy", x, y);
      check(b_y, b_yy, 1, "b_yy", x, y);
      check(sigma, sigma_x, 0, "sigma_x", x, y);
      check(sigma, sigma_y, 1, "sigma_y", x, y);
    }
  }
};

inline Fn2 zero2() {
  return [](double, double) { return 0.0; };
}

// sum_k c_k v^k and its first two derivatives
struct Poly {
  std::vector<double> c;
  double operator()(double v) const {
    double s = 0;
    for (std::size_t k = c.size(); k-- > 0;) s = s * v + c[k];
    return s;
  }
  Poly deriv() const {
    Poly d;
    for (std::size_t k = 1; k < c.size(); ++k) d.c.push_back(static_cast<double>(k) * c[k]);
    return d;
  }
};

// b(x,y) = px(x) + py(y)
inline DriftSpec separable_polynomial(std::string name, const std::vector<double>& cx, const std::vector<double>& cy) {
  Poly px{cx}, py{cy};
  Poly px1 = px.deriv(), py1 = py.deriv();
  Poly px2 = px1.deriv(), py2 = py1.deriv();
  DriftSpec d;
  d.name = std::move(name);
  d.b = [=](double x, double y) { return px(x) + py(y); };
  d.b_x = [=](double x, double) { return px1(x); };
  d.b_y = [=](double, double y) { return py1(y); };
  d.b_xx = [=](double x, double) { return px2(x); };
  d.b_xy = zero2();
  d.b_yy = [=](double, double y) { return py2(y); };
  return d;
}

inline DriftSpec zero_drift() { return separable_polynomial("zero", {}, {}); }

// Example 1: scalar double well acting on the state
inline DriftSpec double_well_scalar() { return separable_polynomial("doubleWell", {}, {0.0, 1.0, 0.0, -1.0}); }

// Example 2: b(x,y) = x - x^3, independent of y
inline DriftSpec double_well_xy() { return separable_polynomial("doubleWell", {0.0, 1.0, 0.0, -1.0}, {}); }

inline DriftSpec linear_y(double lambda) { return separable_polynomial("linear", {}, {0.0, lambda}); }

inline void set_sigma_identity_y(DriftSpec& d) {
  d.sigma = [](double, double y) { return y; };
  d.sigma_x = zero2();
  d.sigma_y = [](double, double) { return 1.0; };
}

inline void set_sigma_zero(DriftSpec& d) {
  d.sigma = zero2();
  d.sigma_x = zero2();
  d.sigma_y = zero2();
}

}  // namespace omfbm

#endif
