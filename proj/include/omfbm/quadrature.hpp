#ifndef OMFBM_QUADRATURE_HPP
#define OMFBM_QUADRATURE_HPP

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

namespace omfbm::quad {

struct Rule {
  std::vector<double> x;
  std::vector<double> w;
};

// Golub-Welsch for weight (1-x)^a x^b on [0,1]
inline Rule build_jacobi01(int n, double a, double b) {
  if (n < 1 || !(a > -1.0) || !(b > -1.0)) throw std::invalid_argument("jacobi: bad parameters");
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  const double ab = a + b;
  for (int k = 0; k < n; ++k) {
    double s = 2.0 * k + ab;
    double diag = (k == 0) ? (b - a) / (ab + 2.0) : (b * b - a * a) / (s * (s + 2.0));
    J(k, k) = diag;
    if (k + 1 < n) {
      double m = k + 1.0;
      double t = 2.0 * m + ab;
      // for m = 1 the factor (m + a + b) / (t - 1) is exactly 1, which matters when a + b = -1
      double num = 4.0 * m * (m + a) * (m + b) * (m == 1.0 ? 1.0 : m + ab);
      double den = t * t * (t + 1.0) * (m == 1.0 ? 1.0 : t - 1.0);
      double off = std::sqrt(num / den);
      J(k, k + 1) = off;
      J(k + 1, k) = off;
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  const double mu0 = std::exp(std::lgamma(a + 1.0) + std::lgamma(b + 1.0) - std::lgamma(ab + 2.0));
  Rule r;
  r.x.resize(n);
  r.w.resize(n);
  for (int k = 0; k < n; ++k) {
    double v0 = es.eigenvectors()(0, k);
    r.x[k] = 0.5 * (1.0 + es.eigenvalues()(k));
    r.w[k] = mu0 * v0 * v0;
  }
  return r;
}

inline const Rule& jacobi01(int n, double a, double b) {
  static std::mutex mu;
  static std::map<std::tuple<int, double, double>, Rule> cache;
  std::lock_guard<std::mutex> lk(mu);
  auto key = std::make_tuple(n, a, b);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, build_jacobi01(n, a, b)).first;
  return it->second;
}

inline const Rule& legendre01(int n) { return jacobi01(n, 0.0, 0.0); }

template <class F>
double integrate(const Rule& r, double lo, double hi, F&& f) {
  double s = 0.0, L = hi - lo;
  for (std::size_t k = 0; k < r.x.size(); ++k) s += r.w[k] * f(lo + L * r.x[k]);
  return s * L;
}

}  // namespace omfbm::quad

#endif
