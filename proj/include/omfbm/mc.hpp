#ifndef OMFBM_MC_HPP
#define OMFBM_MC_HPP

#include <atomic>
#include <boost/uuid/detail/sha1.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "action.hpp"
#include "sampling.hpp"

namespace omfbm {

// Raised when an estimate does not have enough hits; callers treat it as a statistical, not a numerical, failure.
struct StatisticalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kMinHits = 30;
inline constexpr std::size_t kMinPaths = 100;

struct SdeSimConfig {
  DriftSpec drift;
  ProblemKind kind = ProblemKind::NonDegenerate;
  double x0 = 0.0;
  double y0 = 0.0;
  Grid grid{1.0, 64};
  double H = 0.35;
  std::size_t n_paths = 1000;
  std::uint64_t seed = 0;
  std::string integrator = "EulerMaruyamaExplicit";
};

// Y = y0 + B + D with D the accumulated drift, kept apart so that deviations from a reference path are
// formed without cancellation against y0.
struct SdeBatch {
  Grid grid;
  ProblemKind kind;
  double x0, y0;
  std::uint64_t seed;
  std::vector<Vec> noise;  // B^H at nodes
  std::vector<Vec> drift;  // D at nodes
  std::vector<Vec> x;      // X at nodes (degenerate), empty otherwise
  std::vector<char> aborted;
  std::size_t n_aborted = 0;

  std::size_t size() const { return noise.size(); }
  Vec y(std::size_t p) const {
    Vec v(grid.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = y0 + (noise[p][i] + drift[p][i]);
    return v;
  }
};

// Explicit Euler step on the given fBm paths:
//   Y_{i+1} = Y_i + b(X_i, Y_i) h + dB_i,  X_{i+1} = X_i + sigma(X_i, Y_i) h
// Scalar problems use b(0, Y). A non-finite state aborts the path.
inline SdeBatch simulate_sde(const SdeSimConfig& cfg, const FbmBatch& fbm, unsigned workers = 1) {
  if (fbm.grid != cfg.grid) throw std::invalid_argument("simulate_sde: noise grid does not match");
  if (cfg.kind == ProblemKind::Degenerate && !cfg.drift.has_sigma())
    throw std::invalid_argument("simulate_sde: degenerate kind requires sigma");
  if (!cfg.drift.b) throw std::invalid_argument("simulate_sde: drift b is required");
  const std::size_t n = cfg.grid.size(), P = fbm.paths.size();
  const double h = cfg.grid.step();
  const bool deg = cfg.kind == ProblemKind::Degenerate;
  SdeBatch out{cfg.grid, cfg.kind, cfg.x0, cfg.y0, fbm.seed, fbm.paths, std::vector<Vec>(P), {}, std::vector<char>(P, 0)};
  if (deg) out.x.resize(P);
  parallel_for(P, workers, [&](std::size_t p) {
    const Vec& B = out.noise[p];
    Vec& D = out.drift[p];
    D.assign(n, 0.0);
    Vec X(deg ? n : 0, cfg.x0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const double yi = cfg.y0 + (B[i] + D[i]);
      const double xi = deg ? X[i] : 0.0;
      D[i + 1] = D[i] + cfg.drift.b(xi, yi) * h;
      if (deg) X[i + 1] = X[i] + cfg.drift.sigma(xi, yi) * h;
      if (!std::isfinite(D[i + 1]) || (deg && !std::isfinite(X[i + 1]))) {
        out.aborted[p] = 1;
        std::fill(D.begin() + static_cast<std::ptrdiff_t>(i) + 1, D.end(), 0.0);
        break;
      }
    }
    if (deg) out.x[p] = std::move(X);
  });
  for (char a : out.aborted) out.n_aborted += a;
  return out;
}

inline SdeBatch simulate_sde(const SdeSimConfig& cfg, unsigned workers = 1) {
  if (cfg.n_paths < 1) throw std::invalid_argument("simulate_sde: n_paths must be >= 1");
  HurstParams::make(cfg.H, false);
  FbmBatch fbm = sample_fbm(FbmSampler{cfg.grid, cfg.H, SamplingMethod::CholeskyExact, cfg.seed}, cfg.n_paths, workers);
  return simulate_sde(cfg, fbm, workers);
}

// every k-th node of a batch, on the grid with N/k steps
inline FbmBatch coarsen(const FbmBatch& b, std::size_t k) {
  const std::size_t N = b.grid.n_steps();
  if (k == 0 || N % k != 0) throw std::invalid_argument("coarsen: factor must divide N");
  FbmBatch c{Grid(b.grid.t_end(), N / k), b.H, b.seed, b.method, std::vector<Vec>(b.paths.size()), {}};
  for (std::size_t p = 0; p < b.paths.size(); ++p) {
    c.paths[p].resize(N / k + 1);
    for (std::size_t i = 0; i <= N / k; ++i) c.paths[p][i] = b.paths[p][i * k];
  }
  return c;
}

enum class NormKind { Sup, Holder };
enum class ComponentMode { FullZ, YOnly };

struct NormSpec {
  NormKind kind = NormKind::Sup;
  double beta = 0.0;

  double operator()(const Vec& v, const Grid& g) const { return kind == NormKind::Sup ? sup_norm(v) : holder_norm(v, g, beta); }
  std::string name() const {
    if (kind == NormKind::Sup) return "sup";
    char buf[48];
    std::snprintf(buf, sizeof buf, "holder(%.6g)", beta);
    return buf;
  }
};

inline NormSpec sup_norm_spec() { return {}; }
inline NormSpec holder_norm_spec(double beta) {
  if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("norm: beta must lie in (0,1)");
  return {NormKind::Holder, beta};
}

inline const char* to_string(ComponentMode m) { return m == ComponentMode::FullZ ? "FullZ" : "YOnly"; }

struct TubeEstimate {
  double epsilon;
  std::string norm;
  std::size_t n_paths;
  std::size_t n_hits;
  double p_hat;
  double std_err;
};

inline TubeEstimate make_estimate(double eps, const NormSpec& norm, std::size_t n, std::size_t hits) {
  double p = n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
  return {eps, norm.name(), n, hits, p, n ? std::sqrt(p * (1.0 - p) / static_cast<double>(n)) : 0.0};
}

struct TubeDistances {
  Vec y;     // |Y - phi2|
  Vec x;     // |X - phi1| (degenerate), zero otherwise
  Vec full;  // sqrt(|X - phi1|^2 + |Y - phi2|^2)
};

// Per-path distances to the reference path; aborted paths sit at +infinity.
inline TubeDistances tube_distances(const SdeBatch& b, const ReferencePath& phi, const NormSpec& norm,
                                    unsigned workers = 1) {
  if (phi.grid() != b.grid) throw std::invalid_argument("tube: batch and reference path must share a grid");
  if (phi.kind != b.kind) throw std::invalid_argument("tube: batch and reference path are of different kinds");
  const std::size_t n = b.grid.size(), P = b.size();
  const bool deg = b.kind == ProblemKind::Degenerate;
  const Vec& phi2 = phi.noisy();
  Vec shift(n);
  for (std::size_t i = 0; i < n; ++i) shift[i] = b.y0 - phi2[i];
  TubeDistances d{Vec(P), Vec(P, 0.0), Vec(P)};
  const double inf = std::numeric_limits<double>::infinity();
  parallel_for(P, workers, [&](std::size_t p) {
    if (b.aborted[p]) {
      d.y[p] = d.x[p] = d.full[p] = inf;
      return;
    }
    Vec dev(n);
    for (std::size_t i = 0; i < n; ++i) dev[i] = b.noise[p][i] + (b.drift[p][i] + shift[i]);
    d.y[p] = norm(dev, b.grid);
    if (deg) {
      const Vec& phi1 = phi.phi.component(0);
      for (std::size_t i = 0; i < n; ++i) dev[i] = b.x[p][i] - phi1[i];
      d.x[p] = norm(dev, b.grid);
    }
    d.full[p] = std::sqrt(d.x[p] * d.x[p] + d.y[p] * d.y[p]);
  });
  return d;
}

inline std::size_t count_within(const Vec& dist, double eps) {
  std::size_t c = 0;
  for (double v : dist) c += v <= eps;
  return c;
}

inline TubeEstimate tube_probability(const SdeBatch& b, const ReferencePath& phi, double eps, const NormSpec& norm,
                                     ComponentMode mode, unsigned workers = 1) {
  auto d = tube_distances(b, phi, norm, workers);
  return make_estimate(eps, norm, b.size(), count_within(mode == ComponentMode::FullZ ? d.full : d.y, eps));
}

// Largest |X - phi1| / eps over paths with |Y - phi2| <= eps (zero when there are none).
inline double equivalence_constant(const TubeDistances& d, double eps) {
  double c = 0.0;
  for (std::size_t p = 0; p < d.y.size(); ++p)
    if (d.y[p] <= eps) c = std::max(c, d.x[p] / eps);
  return c;
}

// paths inside the FullZ tube but outside the YOnly tube
inline std::size_t subset_violations(const TubeDistances& d, double eps) {
  std::size_t v = 0;
  for (std::size_t p = 0; p < d.y.size(); ++p) v += d.full[p] <= eps && d.y[p] > eps;
  return v;
}

// eps_k = eps0 * factor^k
inline Vec epsilon_ladder(double eps0, double factor, std::size_t count) {
  if (!(eps0 > 0.0) || !(factor > 0.0 && factor < 1.0) || count == 0)
    throw std::invalid_argument("epsilon ladder: need eps0 > 0, 0 < factor < 1, count >= 1");
  Vec e(count);
  for (std::size_t k = 0; k < count; ++k) e[k] = eps0 * std::pow(factor, static_cast<double>(k));
  return e;
}

struct GammaRow {
  double epsilon;
  std::size_t hits_num, hits_den, hits_both;
  double p_num, p_den;
  double ratio, log_ratio, std_err;
  bool flagged;  // fewer than kMinHits in the numerator or the denominator
};

struct GammaTable {
  std::string norm;
  ComponentMode mode;
  std::size_t n_paths;
  std::size_t n_aborted;
  std::vector<GammaRow> rows;
};

// ratio and delta-method standard error from joint counts over a common batch
inline GammaRow gamma_row(double eps, std::size_t n, std::size_t a, std::size_t b, std::size_t ab) {
  const double N = static_cast<double>(n);
  GammaRow r{eps, a, b, ab, a / N, b / N, std::numeric_limits<double>::quiet_NaN(),
             std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(),
             a < kMinHits || b < kMinHits};
  if (a > 0 && b > 0) {
    r.ratio = r.p_num / r.p_den;
    r.log_ratio = std::log(r.ratio);
    const double pab = ab / N;
    const double rel = (1.0 - r.p_num) / r.p_num + (1.0 - r.p_den) / r.p_den - 2.0 * (pab - r.p_num * r.p_den) / (r.p_num * r.p_den);
    r.std_err = r.ratio * std::sqrt(std::max(rel, 0.0) / N);
  }
  return r;
}

// gamma_eps(phi) = P(|Z - phi| <= eps) / P(|B^H| <= eps), numerator and denominator on the same fBm batch.
inline GammaTable gamma_ratio(const SdeBatch& batch, const ReferencePath& phi, const Vec& eps_list, const NormSpec& norm,
                              ComponentMode mode, unsigned workers = 1) {
  if (batch.size() < kMinPaths) throw std::invalid_argument("gamma: n_paths must be >= 100");
  auto d = tube_distances(batch, phi, norm, workers);
  const Vec& num = mode == ComponentMode::FullZ ? d.full : d.y;
  Vec den(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t p) { den[p] = norm(batch.noise[p], batch.grid); });
  GammaTable t{norm.name(), mode, batch.size(), batch.n_aborted, {}};
  for (double eps : eps_list) {
    std::size_t a = 0, b = 0, ab = 0;
    for (std::size_t p = 0; p < batch.size(); ++p) {
      bool u = num[p] <= eps, v = den[p] <= eps;
      a += u;
      b += v;
      ab += u && v;
    }
    t.rows.push_back(gamma_row(eps, batch.size(), a, b, ab));
  }
  return t;
}

inline GammaTable gamma_ratio(const SdeSimConfig& cfg, const ReferencePath& phi, const Vec& eps_list, const NormSpec& norm,
                              ComponentMode mode, unsigned workers = 1) {
  return gamma_ratio(simulate_sde(cfg, workers), phi, eps_list, norm, mode, workers);
}

// smallest listed eps whose row and all larger ones have enough hits; throws when none has
inline const GammaRow& smallest_feasible(const GammaTable& t) {
  const GammaRow* best = nullptr;
  for (const auto& r : t.rows) {
    if (r.flagged) continue;
    if (!best || r.epsilon < best->epsilon) best = &r;
  }
  if (!best) throw StatisticalFailure("gamma: no epsilon with enough hits");
  return *best;
}

struct SmallBallPoint {
  double epsilon;
  std::size_t hits;
  double p_hat;
  double x;  // eps^{-exponent}
  double y;  // log p_hat
  bool used;
};

struct SmallBallFit {
  std::string norm;
  double H;
  double exponent;       // 1/H (sup) or 1/(H - beta) (Holder)
  double slope;          // d log p / d eps^{-exponent}
  double decay_constant;  // -slope
  double intercept;
  double r2;
  double slope_stderr;
  std::size_t n_paths;
  std::vector<SmallBallPoint> points;
};

// Least squares of log p_hat on eps^{-exponent} over ladder points with at least kMinHits hits.
// The slope error propagates the binomial variance (1 - p)/(n p) of each log p_hat through the fit.
inline SmallBallFit fit_smallball(const Vec& dist, const Vec& eps_list, double exponent, const std::string& norm, double H) {
  SmallBallFit f{norm, H, exponent, 0, 0, 0, 0, 0, dist.size(), {}};
  const double n = static_cast<double>(dist.size());
  for (double eps : eps_list) {
    std::size_t c = count_within(dist, eps);
    double p = c / n;
    f.points.push_back({eps, c, p, std::pow(eps, -exponent), c ? std::log(p) : -std::numeric_limits<double>::infinity(),
                        c >= kMinHits});
  }
  std::vector<const SmallBallPoint*> u;
  for (const auto& pt : f.points)
    if (pt.used) u.push_back(&pt);
  if (u.size() < 4) throw StatisticalFailure("smallball: fewer than 4 epsilon values with at least 30 hits");
  double mx = 0, my = 0;
  for (auto* p : u) {
    mx += p->x;
    my += p->y;
  }
  mx /= u.size();
  my /= u.size();
  double sxx = 0, sxy = 0, syy = 0;
  for (auto* p : u) {
    sxx += (p->x - mx) * (p->x - mx);
    sxy += (p->x - mx) * (p->y - my);
    syy += (p->y - my) * (p->y - my);
  }
  if (!(sxx > 0)) throw StatisticalFailure("smallball: degenerate epsilon ladder");
  f.slope = sxy / sxx;
  f.decay_constant = -f.slope;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0 ? sxy * sxy / (sxx * syy) : 1.0;
  double var = 0;
  for (auto* p : u) {
    double w = (p->x - mx) / sxx;
    var += w * w * (1.0 - p->p_hat) / (n * p->p_hat);
  }
  f.slope_stderr = std::sqrt(var);
  return f;
}

inline double smallball_exponent(double H, const NormSpec& norm) {
  if (norm.kind == NormKind::Sup) return 1.0 / H;
  if (!(norm.beta < H)) throw std::invalid_argument("smallball: Holder norm needs beta < H");
  return 1.0 / (H - norm.beta);
}

inline SmallBallFit smallball_scaling(double H, const NormSpec& norm, const Vec& eps_list, std::size_t n_paths,
                                      std::uint64_t seed, const Grid& grid, unsigned workers = 1) {
  if (n_paths < kMinPaths) throw std::invalid_argument("smallball: n_paths must be >= 100");
  const double ex = smallball_exponent(H, norm);
  FbmBatch b = sample_fbm(FbmSampler{grid, H, SamplingMethod::CholeskyExact, seed}, n_paths, workers);
  Vec dist(n_paths);
  parallel_for(n_paths, workers, [&](std::size_t p) { dist[p] = norm(b.paths[p], grid); });
  return fit_smallball(dist, eps_list, ex, norm.name(), H);
}

// git blob id of a text: sha1("blob <len>\0" + text)
inline std::string git_blob_hash(const std::string& text) {
  boost::uuids::detail::sha1 s;
  std::string head = "blob " + std::to_string(text.size());
  s.process_bytes(head.data(), head.size() + 1);
  s.process_bytes(text.data(), text.size());
  boost::uuids::detail::sha1::digest_type dg;
  s.get_digest(dg);
  char buf[41];
  for (int i = 0; i < 5; ++i) std::snprintf(buf + 8 * i, 9, "%08x", dg[i]);
  return buf;
}

inline void write_gamma_csv(const std::string& file, const GammaTable& t) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot open " + file);
  os.precision(17);
  os << "epsilon,p_num,p_den,ratio,log_ratio,stderr,hits_num,hits_den,flagged\n";
  for (const auto& r : t.rows)
    os << r.epsilon << ',' << r.p_num << ',' << r.p_den << ',' << r.ratio << ',' << r.log_ratio << ',' << r.std_err << ','
       << r.hits_num << ',' << r.hits_den << ',' << (r.flagged ? 1 : 0) << '\n';
}

inline void write_smallball_csv(const std::string& file, const SmallBallFit& f) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot open " + file);
  os.precision(17);
  os << "epsilon,hits,p_hat,eps_pow,log_p,used\n";
  for (const auto& p : f.points)
    os << p.epsilon << ',' << p.hits << ',' << p.p_hat << ',' << p.x << ',' << p.y << ',' << (p.used ? 1 : 0) << '\n';
}

struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  double H = 0.0;
  std::size_t N = 0;
  double T = 1.0;
  std::size_t n_paths = 0;
  std::string norm;
  std::string drift;
  std::string config_hash;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["seed"] = seed;
    j["H"] = H;
    j["N"] = N;
    j["T"] = T;
    j["n_paths"] = n_paths;
    j["norm"] = norm;
    j["drift"] = drift;
    j["config_hash"] = config_hash;
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    return j;
  }
};

inline void write_manifest(const std::string& file, const RunManifest& m) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot open " + file);
  os << m.to_json().dump(2) << '\n';
}

}  // namespace omfbm

#endif
