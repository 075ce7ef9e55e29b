#ifndef OMFBM_SAMPLING_HPP
#define OMFBM_SAMPLING_HPP

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "kernel.hpp"

namespace omfbm {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Independent stream per (seed, index): results do not depend on how paths are split across workers.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t a = splitmix64(seed ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

template <class F>
void parallel_for(std::size_t n, unsigned workers, F&& body) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(workers);
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        errs[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

enum class SamplingMethod { CholeskyExact, KernelConvolution };

inline const char* to_string(SamplingMethod m) {
  return m == SamplingMethod::CholeskyExact ? "cholesky" : "kernel";
}

struct FbmSampler {
  Grid grid;
  double H;
  SamplingMethod method = SamplingMethod::CholeskyExact;
  std::uint64_t seed = 0;
};

struct FbmBatch {
  Grid grid;
  double H;
  std::uint64_t seed;
  SamplingMethod method;
  std::vector<Vec> paths;  // B^H at nodes 0..N, B_0 = 0
  std::vector<Vec> dW;     // Brownian increments per cell (KernelConvolution only)
};

inline FbmBatch sample_fbm(const FbmSampler& s, std::size_t n_paths, unsigned workers = 1) {
  if (n_paths < 1) throw std::invalid_argument("sample_fbm: n_paths must be >= 1");
  const std::size_t N = s.grid.n_steps();
  FbmBatch b{s.grid, s.H, s.seed, s.method, std::vector<Vec>(n_paths), {}};
  if (s.method == SamplingMethod::CholeskyExact) {
    auto cov = covariance_matrix(s.grid, s.H);
    const Eigen::MatrixXd& L = cov->factor();
    parallel_for(n_paths, workers, [&](std::size_t p) {
      auto rng = substream(s.seed, p);
      std::normal_distribution<double> nd;
      Eigen::VectorXd z(N);
      for (std::size_t i = 0; i < N; ++i) z[i] = nd(rng);
      Eigen::VectorXd x = L.triangularView<Eigen::Lower>() * z;
      Vec& out = b.paths[p];
      out.assign(N + 1, 0.0);
      for (std::size_t i = 0; i < N; ++i) out[i + 1] = x[i];
    });
  } else {
    auto K = kernel_matrix(s.grid, HurstParams::make(s.H, false));
    b.dW.resize(n_paths);
    const double sd = std::sqrt(s.grid.step());
    parallel_for(n_paths, workers, [&](std::size_t p) {
      auto rng = substream(s.seed, p);
      std::normal_distribution<double> nd;
      Vec& dw = b.dW[p];
      dw.resize(N);
      for (auto& v : dw) v = sd * nd(rng);
      Vec& out = b.paths[p];
      out.assign(N + 1, 0.0);
      for (std::size_t i = 1; i <= N; ++i) {
        const double* w = K->row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < i; ++j) acc += w[j] * dw[j];
        out[i] = acc;
      }
    });
  }
  return b;
}

// CSV: header "t,path_0,path_1,...", one row per node
inline void write_paths_csv(const std::string& file, const Grid& g, const std::vector<Vec>& paths) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot open " + file);
  os << std::setprecision(17);
  os << "t";
  for (std::size_t p = 0; p < paths.size(); ++p) os << ",path_" << p;
  os << "\n";
  for (std::size_t i = 0; i < g.size(); ++i) {
    os << g.node(i);
    for (const auto& v : paths) os << "," << v[i];
    os << "\n";
  }
}

// Binary batch: "OMFBMBAT" | u32 version=1 | u32 method | u64 N | f64 T | f64 H | u64 seed |
// u64 n_paths | n_paths x (N+1) f64, path-major, little endian host order
inline constexpr char kBatchMagic[8] = {'O', 'M', 'F', 'B', 'M', 'B', 'A', 'T'};

inline void write_batch_binary(const std::string& file, const FbmBatch& b) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + file);
  auto put = [&](const auto& v) { os.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  os.write(kBatchMagic, 8);
  put(std::uint32_t{1});
  put(static_cast<std::uint32_t>(b.method));
  put(static_cast<std::uint64_t>(b.grid.n_steps()));
  put(b.grid.t_end());
  put(b.H);
  put(b.seed);
  put(static_cast<std::uint64_t>(b.paths.size()));
  for (const auto& p : b.paths) os.write(reinterpret_cast<const char*>(p.data()), p.size() * sizeof(double));
}

inline FbmBatch read_batch_binary(const std::string& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + file);
  char magic[8];
  is.read(magic, 8);
  if (std::memcmp(magic, kBatchMagic, 8) != 0) throw std::runtime_error("batch: bad magic");
  auto get = [&](auto& v) { is.read(reinterpret_cast<char*>(&v), sizeof(v)); };
  std::uint32_t version, method;
  std::uint64_t N, seed, n;
  double T, H;
  get(version);
  if (version != 1) throw std::runtime_error("batch: unsupported version");
  get(method);
  get(N);
  get(T);
  get(H);
  get(seed);
  get(n);
  Grid g(T, N);
  FbmBatch b{g, H, seed, static_cast<SamplingMethod>(method), std::vector<Vec>(n, Vec(N + 1)), {}};
  for (auto& p : b.paths) is.read(reinterpret_cast<char*>(p.data()), p.size() * sizeof(double));
  if (!is) throw std::runtime_error("batch: truncated file");
  return b;
}

}  // namespace omfbm

#endif
