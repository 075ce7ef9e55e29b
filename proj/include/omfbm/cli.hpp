#ifndef OMFBM_CLI_HPP
#define OMFBM_CLI_HPP

#include <CLI11.hpp>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "action.hpp"
#include "el_solver.hpp"
#include "mc.hpp"
#include "sampling.hpp"

namespace omfbm::cli {

using ojson = nlohmann::ordered_json;

enum ExitCode : int { kOk = 0, kInternal = 1, kInvalid = 2, kStructural = 3, kSolver = 4, kStatistical = 5 };

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> c{"fbm-sample", "action-eval", "mpp", "gamma", "smallball"};
  return c;
}

inline bool is_command(const std::string& s) {
  for (const auto& c : command_names())
    if (c == s) return true;
  return false;
}

// keys accepted by each command; "workers" and "output" are runtime-only and never copied into outputs
inline const std::vector<std::string>& allowed_keys(const std::string& cmd) {
  static const std::vector<std::string> common{"command", "hurst", "T", "n", "seed", "workers", "output"};
  static const std::map<std::string, std::vector<std::string>> extra{
      {"fbm-sample", {"paths", "method", "binary"}},
      {"action-eval", {"kind", "regime", "drift", "sigma", "x0", "y0", "path"}},
      {"mpp", {"kind", "regime", "drift", "sigma", "x0", "y0", "terminal", "max_iters", "grad_tol", "init"}},
      {"gamma", {"kind", "regime", "drift", "sigma", "x0", "y0", "path", "compare_path", "paths", "norm", "beta", "mode",
                 "epsilon", "epsilon_list"}},
      {"smallball", {"paths", "norm", "beta", "epsilon", "epsilon_list"}}};
  static std::map<std::string, std::vector<std::string>> all;
  static std::once_flag once;
  std::call_once(once, [] {
    for (const auto& [k, v] : extra) {
      auto& a = all[k];
      a = common;
      a.insert(a.end(), v.begin(), v.end());
    }
  });
  auto it = all.find(cmd);
  if (it == all.end()) throw ConfigError("unknown command '" + cmd + "'");
  return it->second;
}

inline bool known_key(const std::string& k) {
  for (const auto& c : command_names())
    for (const auto& a : allowed_keys(c))
      if (a == k) return true;
  return false;
}

namespace detail {

inline double get_number(const ojson& j, const std::string& key) {
  if (!j.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError("config key '" + key + "' must be finite");
  return v;
}

inline std::int64_t get_int(const ojson& j, const std::string& key) {
  if (!j.is_number_integer()) throw ConfigError("config key '" + key + "' must be an integer");
  return j.get<std::int64_t>();
}

inline std::string get_string(const ojson& j, const std::string& key, std::initializer_list<const char*> choices = {}) {
  if (!j.is_string()) throw ConfigError("config key '" + key + "' must be a string");
  std::string s = j.get<std::string>();
  if (choices.size() == 0) return s;
  std::string list;
  for (const char* c : choices) {
    if (s == c) return s;
    list += std::string(list.empty() ? "" : ", ") + c;
  }
  throw ConfigError("config key '" + key + "' must be one of: " + list);
}

inline std::vector<double> get_numbers(const ojson& j, const std::string& key) {
  if (!j.is_array() || j.empty()) throw ConfigError("config key '" + key + "' must be a non-empty array of numbers");
  std::vector<double> v;
  for (std::size_t i = 0; i < j.size(); ++i) v.push_back(get_number(j[i], key + "[" + std::to_string(i) + "]"));
  return v;
}

inline void only_keys(const ojson& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError("config key '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : keys) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown config key '" + where + "." + it.key() + "'");
  }
}

inline ojson resolve_path_spec(const ojson& p, const std::string& key) {
  only_keys(p, key, {"phi2_dot", "phi2", "phi2_dot_file"});
  if (p.size() != 1) throw ConfigError("config key '" + key + "' needs exactly one of phi2_dot, phi2, phi2_dot_file");
  ojson out;
  if (p.contains("phi2_dot")) out["phi2_dot"] = get_numbers(p["phi2_dot"], key + ".phi2_dot");
  if (p.contains("phi2")) out["phi2"] = get_numbers(p["phi2"], key + ".phi2");
  if (p.contains("phi2_dot_file")) out["phi2_dot_file"] = get_string(p["phi2_dot_file"], key + ".phi2_dot_file");
  return out;
}

}  // namespace detail

// Merges the file's top-level keys with its section for `cmd`, applies overrides, checks every key and
// fills defaults. Keys are emitted in a fixed order so serialization round-trips byte for byte.
inline ojson resolve_config(const std::string& cmd, const ojson& file, const ojson& overrides = ojson::object()) {
  using namespace detail;
  const auto& allowed = allowed_keys(cmd);
  auto allowed_here = [&](const std::string& k) { return std::find(allowed.begin(), allowed.end(), k) != allowed.end(); };
  if (!file.is_object()) throw ConfigError("config must be a JSON object");
  ojson in = ojson::object();
  for (auto it = file.begin(); it != file.end(); ++it) {
    if (is_command(it.key())) continue;
    if (!known_key(it.key())) throw ConfigError("unknown config key '" + it.key() + "'");
    if (allowed_here(it.key())) in[it.key()] = it.value();
  }
  if (file.contains(cmd)) {
    const ojson& sec = file[cmd];
    if (!sec.is_object()) throw ConfigError("config key '" + cmd + "' must be an object");
    for (auto it = sec.begin(); it != sec.end(); ++it) {
      if (!allowed_here(it.key())) throw ConfigError("unknown config key '" + cmd + "." + it.key() + "'");
      in[it.key()] = it.value();
    }
  }
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    if (!allowed_here(it.key())) throw ConfigError("option '" + it.key() + "' does not apply to " + cmd);
    in[it.key()] = it.value();
  }
  if (in.contains("command") && get_string(in["command"], "command") != cmd)
    throw ConfigError("config key 'command' names '" + in["command"].get<std::string>() + "', not '" + cmd + "'");

  auto has = [&](const char* k) { return in.contains(k); };
  ojson r;
  r["command"] = cmd;
  if (!has("hurst")) throw ConfigError("config key 'hurst' is required");
  const double H = get_number(in["hurst"], "hurst");
  const bool strict = cmd != "fbm-sample" && cmd != "smallball";
  try {
    HurstParams::make(H, strict);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config key 'hurst': ") + e.what());
  }
  r["hurst"] = H;
  r["T"] = has("T") ? get_number(in["T"], "T") : 1.0;
  if (!(r["T"].get<double>() > 0.0)) throw ConfigError("config key 'T' must be positive");
  const std::int64_t n = has("n") ? get_int(in["n"], "n") : 256;
  if (n < 8) throw ConfigError("config key 'n' must be >= 8");
  r["n"] = n;
  const std::int64_t seed = has("seed") ? get_int(in["seed"], "seed") : 0;
  if (seed < 0) throw ConfigError("config key 'seed' must be non-negative");
  r["seed"] = seed;

  const bool physical = cmd == "action-eval" || cmd == "mpp" || cmd == "gamma";
  if (physical) {
    const std::string kind = has("kind") ? get_string(in["kind"], "kind", {"nondegenerate", "degenerate"}) : "nondegenerate";
    r["kind"] = kind;
    const std::string natural = H < 0.5 ? "singular" : "regular";
    if (has("regime")) {
      std::string reg = get_string(in["regime"], "regime", {"singular", "regular"});
      if (reg != natural)
        throw ConfigError("config key 'regime': '" + reg + "' does not match hurst = " + std::to_string(H));
    }
    r["regime"] = natural;
    ojson d = has("drift") ? in["drift"] : ojson{{"name", "doubleWell"}};
    if (d.is_string()) d = ojson{{"name", d}};
    only_keys(d, "drift", {"name", "lambda", "x_coeffs", "y_coeffs"});
    if (!d.contains("name")) throw ConfigError("config key 'drift.name' is required");
    ojson rd;
    rd["name"] = get_string(d["name"], "drift.name", {"doubleWell", "linear", "zero", "polynomial"});
    const std::string dn = rd["name"];
    if (dn == "linear") {
      if (!d.contains("lambda")) throw ConfigError("config key 'drift.lambda' is required for the linear drift");
      rd["lambda"] = get_number(d["lambda"], "drift.lambda");
    } else if (d.contains("lambda")) {
      throw ConfigError("config key 'drift.lambda' only applies to the linear drift");
    }
    if (dn == "polynomial") {
      rd["x_coeffs"] = d.contains("x_coeffs") ? get_numbers(d["x_coeffs"], "drift.x_coeffs") : std::vector<double>{0.0};
      rd["y_coeffs"] = d.contains("y_coeffs") ? get_numbers(d["y_coeffs"], "drift.y_coeffs") : std::vector<double>{0.0};
    } else if (d.contains("x_coeffs") || d.contains("y_coeffs")) {
      throw ConfigError("config keys 'drift.x_coeffs' and 'drift.y_coeffs' only apply to the polynomial drift");
    }
    r["drift"] = rd;
    // sigma: "none", "zero", "identity_y" or {"name": "affine", "x": a, "y": c} for a x + c y
    ojson sg = has("sigma") ? in["sigma"] : ojson(kind == "degenerate" ? "identity_y" : "none");
    std::string sig;
    ojson rs;
    if (sg.is_object()) {
      only_keys(sg, "sigma", {"name", "x", "y"});
      if (!sg.contains("name")) throw ConfigError("config key 'sigma.name' is required");
      sig = get_string(sg["name"], "sigma.name", {"affine"});
      rs["name"] = sig;
      rs["x"] = sg.contains("x") ? get_number(sg["x"], "sigma.x") : 0.0;
      rs["y"] = sg.contains("y") ? get_number(sg["y"], "sigma.y") : 0.0;
    } else {
      sig = get_string(sg, "sigma", {"none", "zero", "identity_y", "affine"});
      if (sig == "affine") throw ConfigError("config key 'sigma': affine sigma needs the object form");
      rs = sig;
    }
    if (kind == "degenerate" && sig == "none") throw ConfigError("config key 'sigma': degenerate kind needs a sigma");
    if (kind == "nondegenerate" && sig != "none") throw ConfigError("config key 'sigma': only degenerate kind takes a sigma");
    if (cmd == "mpp" && kind == "degenerate" && sig != "identity_y")
      throw ConfigError("config key 'sigma': mpp supports identity_y only");
    r["sigma"] = rs;
    r["x0"] = has("x0") ? get_number(in["x0"], "x0") : 0.0;
    r["y0"] = has("y0") ? get_number(in["y0"], "y0") : 0.0;
    if (cmd != "mpp") r["path"] = resolve_path_spec(has("path") ? in["path"] : ojson{{"phi2_dot", {0.0}}}, "path");
  }
  if (cmd == "mpp") {
    if (has("terminal")) r["terminal"] = get_number(in["terminal"], "terminal");
    r["max_iters"] = has("max_iters") ? get_int(in["max_iters"], "max_iters") : 2000;
    if (r["max_iters"].get<std::int64_t>() < 1) throw ConfigError("config key 'max_iters' must be >= 1");
    r["grad_tol"] = has("grad_tol") ? get_number(in["grad_tol"], "grad_tol") : 1e-9;
    if (!(r["grad_tol"].get<double>() > 0.0)) throw ConfigError("config key 'grad_tol' must be positive");
    if (has("init")) r["init"] = get_numbers(in["init"], "init");
  }
  if (cmd == "gamma" && has("compare_path")) r["compare_path"] = resolve_path_spec(in["compare_path"], "compare_path");
  if (cmd == "fbm-sample" || cmd == "gamma" || cmd == "smallball") {
    const std::int64_t p = has("paths") ? get_int(in["paths"], "paths") : (cmd == "fbm-sample" ? 100 : 20000);
    if (p < 1) throw ConfigError("config key 'paths' must be >= 1");
    if (cmd != "fbm-sample" && p < static_cast<std::int64_t>(kMinPaths))
      throw ConfigError("config key 'paths' must be >= 100 for probability estimates");
    r["paths"] = p;
  }
  if (cmd == "fbm-sample") {
    r["method"] = has("method") ? get_string(in["method"], "method", {"cholesky", "kernel"}) : "cholesky";
    if (has("binary") && !in["binary"].is_boolean()) throw ConfigError("config key 'binary' must be true or false");
    r["binary"] = has("binary") ? in["binary"].get<bool>() : false;
  }
  if (cmd == "gamma" || cmd == "smallball") {
    r["norm"] = has("norm") ? get_string(in["norm"], "norm", {"sup", "holder"}) : "sup";
    if (r["norm"] == "holder") {
      if (!has("beta")) throw ConfigError("config key 'beta' is required for the holder norm");
      const double beta = get_number(in["beta"], "beta");
      if (cmd == "smallball") {
        if (!(beta > 0.0 && beta < H)) throw ConfigError("config key 'beta' must lie in (0, hurst)");
      } else {
        const double lo = H < 0.5 ? 0.0 : H - 0.5, hi = H - 0.25;
        if (!(beta > lo && beta < hi))
          throw ConfigError("config key 'beta' must lie in (" + std::string(H < 0.5 ? "0" : "hurst - 1/2") +
                            ", hurst - 1/4) for gamma");
      }
      r["beta"] = beta;
    } else if (has("beta")) {
      throw ConfigError("config key 'beta' only applies to the holder norm");
    }
    if (cmd == "gamma") r["mode"] = has("mode") ? get_string(in["mode"], "mode", {"FullZ", "YOnly"}) : "YOnly";
    if (has("epsilon") && has("epsilon_list")) throw ConfigError("config keys 'epsilon' and 'epsilon_list' are exclusive");
    if (has("epsilon_list")) {
      auto e = get_numbers(in["epsilon_list"], "epsilon_list");
      for (double v : e)
        if (!(v > 0.0)) throw ConfigError("config key 'epsilon_list' must hold positive values");
      r["epsilon_list"] = e;
    } else {
      ojson e = has("epsilon") ? in["epsilon"] : ojson::object();
      only_keys(e, "epsilon", {"eps0", "factor", "count"});
      ojson re;
      re["eps0"] = e.contains("eps0") ? get_number(e["eps0"], "epsilon.eps0") : 1.0;
      re["factor"] = e.contains("factor") ? get_number(e["factor"], "epsilon.factor") : 0.5;
      re["count"] = e.contains("count") ? get_int(e["count"], "epsilon.count") : 8;
      try {
        epsilon_ladder(re["eps0"], re["factor"], static_cast<std::size_t>(std::max<std::int64_t>(re["count"].get<std::int64_t>(), 0)));
      } catch (const std::invalid_argument& ex) {
        throw ConfigError(std::string("config key 'epsilon': ") + ex.what());
      }
      r["epsilon"] = re;
    }
  }
  return r;
}

// runtime options that never reach the outputs
struct RuntimeOptions {
  unsigned workers = 1;
  std::string output;
  bool dry_run = false;
};

inline RuntimeOptions runtime_options(const std::string& cmd, const ojson& file, const ojson& overrides) {
  RuntimeOptions o;
  auto pick = [&](const char* k) -> const ojson* {
    if (overrides.contains(k)) return &overrides[k];
    if (file.contains(cmd) && file[cmd].is_object() && file[cmd].contains(k)) return &file[cmd][k];
    if (file.contains(k)) return &file[k];
    return nullptr;
  };
  if (auto w = pick("workers")) {
    auto v = detail::get_int(*w, "workers");
    if (v < 1) throw ConfigError("config key 'workers' must be >= 1");
    o.workers = static_cast<unsigned>(v);
  }
  if (auto out = pick("output")) o.output = detail::get_string(*out, "output");
  return o;
}

inline std::string canonical_text(const ojson& resolved) { return resolved.dump(2) + "\n"; }

// ---- building blocks from a resolved config ----

inline Grid grid_of(const ojson& r) { return Grid(r["T"].get<double>(), static_cast<std::size_t>(r["n"].get<std::int64_t>())); }

inline ProblemKind kind_of(const ojson& r) {
  return r["kind"] == "degenerate" ? ProblemKind::Degenerate : ProblemKind::NonDegenerate;
}

inline DriftSpec drift_of(const ojson& r) {
  const ojson& d = r["drift"];
  const std::string name = d["name"];
  const bool deg = kind_of(r) == ProblemKind::Degenerate;
  DriftSpec s;
  if (name == "doubleWell") s = deg ? double_well_xy() : double_well_scalar();
  else if (name == "linear") s = linear_y(d["lambda"].get<double>());
  else if (name == "zero") s = zero_drift();
  else s = separable_polynomial("polynomial", d["x_coeffs"].get<std::vector<double>>(), d["y_coeffs"].get<std::vector<double>>());
  const ojson& sg = r["sigma"];
  if (sg == "identity_y") set_sigma_identity_y(s);
  if (sg == "zero") set_sigma_zero(s);
  if (sg.is_object()) {
    const double a = sg["x"], c = sg["y"];
    s.sigma = [a, c](double x, double y) { return a * x + c * y; };
    s.sigma_x = [a](double, double) { return a; };
    s.sigma_y = [c](double, double) { return c; };
  }
  s.validate();
  return s;
}

inline Vec polynomial_on_grid(const std::vector<double>& c, const Grid& g) {
  Poly p{c};
  return g.sample([&](double t) { return p(t); });
}

inline Vec read_values_file(const std::string& file, std::size_t n, const std::filesystem::path& base) {
  std::filesystem::path p(file);
  if (p.is_relative() && !base.empty()) p = base / p;
  std::ifstream is(p);
  if (!is) throw ConfigError("config key 'path.phi2_dot_file': cannot open " + p.string());
  Vec v;
  std::string tok;
  while (is >> tok) {
    for (char& c : tok)
      if (c == ',') c = ' ';
    std::istringstream ts(tok);
    double x;
    while (ts >> x) v.push_back(x);
  }
  if (v.size() != n)
    throw ConfigError("config key 'path.phi2_dot_file': expected " + std::to_string(n) + " values, found " +
                      std::to_string(v.size()));
  return v;
}

inline ReferencePath reference_of(const ojson& r, const ojson& ps, const DriftSpec& d,
                                  const std::filesystem::path& base = {}) {
  const Grid g = grid_of(r);
  const auto hp = HurstParams::make(r["hurst"].get<double>());
  PathInput in;
  if (ps.contains("phi2_dot")) in.phi2_dot = polynomial_on_grid(ps["phi2_dot"].get<std::vector<double>>(), g);
  if (ps.contains("phi2_dot_file")) in.phi2_dot = read_values_file(ps["phi2_dot_file"], g.size(), base);
  if (ps.contains("phi2")) {
    in.phi2 = polynomial_on_grid(ps["phi2"].get<std::vector<double>>(), g);
    if ((*in.phi2)[0] != r["y0"].get<double>()) throw ConfigError("config key 'path.phi2': phi2(0) must equal y0");
  }
  return build_reference_path(kind_of(r), d, in, r["x0"].get<double>(), r["y0"].get<double>(), g, hp);
}

inline NormSpec norm_of(const ojson& r) {
  return r["norm"] == "sup" ? sup_norm_spec() : holder_norm_spec(r["beta"].get<double>());
}

inline Vec epsilons_of(const ojson& r) {
  if (r.contains("epsilon_list")) return r["epsilon_list"].get<std::vector<double>>();
  const ojson& e = r["epsilon"];
  return epsilon_ladder(e["eps0"].get<double>(), e["factor"].get<double>(), static_cast<std::size_t>(e["count"].get<std::int64_t>()));
}

inline std::string drift_label(const ojson& r) {
  if (!r.contains("drift")) return "none";
  return r["drift"]["name"].get<std::string>();
}

inline RunManifest manifest_of(const ojson& r) {
  RunManifest m;
  m.command = r["command"];
  m.seed = static_cast<std::uint64_t>(r["seed"].get<std::int64_t>());
  m.H = r["hurst"];
  m.N = static_cast<std::size_t>(r["n"].get<std::int64_t>());
  m.T = r["T"];
  m.n_paths = r.contains("paths") ? static_cast<std::size_t>(r["paths"].get<std::int64_t>()) : 0;
  m.norm = r.contains("norm") ? (r["norm"] == "sup" ? std::string("sup") : norm_of(r).name()) : "none";
  m.drift = drift_label(r);
  m.config_hash = git_blob_hash(canonical_text(r));
  return m;
}

inline std::vector<std::string> planned_files(const ojson& r) {
  std::vector<std::string> f{"manifest.json", "config.json"};
  const std::string c = r["command"];
  if (c == "fbm-sample") {
    f.push_back("paths.csv");
    if (r["binary"].get<bool>()) f.push_back("batch.bin");
  } else if (c == "action-eval") {
    f.insert(f.end(), {"report.json", "path.csv"});
  } else if (c == "mpp") {
    f.insert(f.end(), {"path.csv", "iterations.csv", "report.json", "el_residual.csv"});
  } else if (c == "gamma") {
    f.push_back("gamma.csv");
    if (r.contains("compare_path")) f.push_back("gamma_compare.csv");
  } else {
    f.insert(f.end(), {"smallball.csv", "fit.json"});
  }
  f.push_back("summary.txt");
  return f;
}

inline std::string default_output_dir(const std::string& cmd) {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << "runs/" << cmd << "-" << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return os.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + p.string());
  os << s;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << (v == 0.0 ? 0.0 : v);
  return os.str();
}

// ---- commands; each writes into dir and returns the summary text ----

inline std::string run_fbm_sample(const ojson& r, const std::filesystem::path& dir, unsigned workers) {
  const Grid g = grid_of(r);
  const double H = r["hurst"];
  FbmSampler s{g, H, r["method"] == "kernel" ? SamplingMethod::KernelConvolution : SamplingMethod::CholeskyExact,
               static_cast<std::uint64_t>(r["seed"].get<std::int64_t>())};
  auto b = sample_fbm(s, static_cast<std::size_t>(r["paths"].get<std::int64_t>()), workers);
  write_paths_csv((dir / "paths.csv").string(), g, b.paths);
  if (r["binary"].get<bool>()) write_batch_binary((dir / "batch.bin").string(), b);
  std::ostringstream os;
  os << "fbm-sample: " << b.paths.size() << " paths, H = " << H << ", N = " << g.n_steps() << ", method "
     << to_string(s.method) << "\n";
  return os.str();
}

inline std::string run_action_eval(const ojson& r, const std::filesystem::path& dir, const std::filesystem::path& base) {
  const auto hp = HurstParams::make(r["hurst"].get<double>());
  const DriftSpec d = drift_of(r);
  const ReferencePath p = reference_of(r, r["path"], d, base);
  const ActionReport rep = om_action(p, d, hp);
  write_text(dir / "report.json", rep.to_json().dump(2) + "\n");
  write_path_csv((dir / "path.csv").string(), p.phi);
  std::ostringstream os;
  os << "action-eval: " << to_string(p.kind) << ", " << to_string(hp.regime) << " regime, H = " << hp.H << "\n"
     << "  total           " << fmt(rep.total) << "\n"
     << "  quadratic term  " << fmt(rep.quadratic_term) << "\n"
     << "  divergence term " << fmt(rep.divergence_term) << "\n"
     << "  d_H * T         " << fmt(hp.d_H * r["T"].get<double>()) << "\n"
     << "  structural residual " << fmt(rep.structural_residual) << "\n";
  return os.str();
}

inline void write_el_csv(const std::filesystem::path& p, const ELResidual& e, const Grid& g) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot open " + p.string());
  os.precision(17);
  os << "t,residual\n";
  for (std::size_t i = 0; i < e.values.size(); ++i) os << g.node(i + e.first) << ',' << e.values[i] << '\n';
}

struct MppOutcome {
  std::string summary;
  bool converged;
};

inline MppOutcome run_mpp(const ojson& r, const std::filesystem::path& dir) {
  const double H = r["hurst"];
  const auto hp = HurstParams::make(H);
  const DriftSpec d = drift_of(r);
  std::optional<double> term;
  if (r.contains("terminal")) term = r["terminal"].get<double>();
  MinimizationProblem pb(min_kind(kind_of(r), hp.regime), d, grid_of(r), H, r["x0"], r["y0"], term);
  Vec init(pb.n_free(), pb.y0());
  if (r.contains("init")) {
    Vec v = polynomial_on_grid(r["init"].get<std::vector<double>>(), pb.grid());
    if (v[0] != pb.y0()) throw ConfigError("config key 'init': initial guess must start at y0");
    if (term) v.back() = *term;
    init = pb.restrict(v);
  } else if (term) {
    init.back() = *term;
  }
  MinimizeOptions opt;
  opt.max_iters = static_cast<std::size_t>(r["max_iters"].get<std::int64_t>());
  opt.grad_tol = r["grad_tol"];
  const PathSample guess = pb.path(init);
  auto res = minimize_action(pb, guess, opt);
  const ELResidual el = el_residual(res.path, pb), el0 = el_residual(guess, pb);
  write_path_csv((dir / "path.csv").string(), res.path);
  write_iteration_log((dir / "iterations.csv").string(), res.log);
  write_text(dir / "report.json", res.report.to_json().dump(2) + "\n");
  write_el_csv(dir / "el_residual.csv", el, pb.grid());
  std::ostringstream os;
  os << "mpp: " << to_string(pb.kind()) << ", H = " << H << ", N = " << pb.grid().n_steps() << "\n"
     << "  stop reason      " << to_string(res.reason) << " after " << res.log.size() - 1 << " iterations\n"
     << "  objective I = -L " << fmt(res.objective) << "\n"
     << "  gradient sup     " << fmt(res.log.back().grad_norm) << "\n"
     << "  EL residual l2   " << fmt(el.norm_l2) << " (initial guess " << fmt(el0.norm_l2) << ")\n"
     << "  EL residual sup  " << fmt(el.norm_sup) << " (initial guess " << fmt(el0.norm_sup) << ")\n";
  return {os.str(), res.reason == StopReason::GradTol};
}

inline std::string gamma_lines(const GammaTable& t) {
  std::ostringstream os;
  os << "  " << std::left << std::setw(16) << "epsilon" << std::setw(16) << "ratio" << std::setw(16) << "stderr"
     << "hits(num/den)\n";
  for (const auto& r : t.rows)
    os << "  " << std::setw(16) << fmt(r.epsilon) << std::setw(16) << fmt(r.ratio) << std::setw(16) << fmt(r.std_err)
       << r.hits_num << "/" << r.hits_den << (r.flagged ? "  (insufficient hits)" : "") << "\n";
  return os.str();
}

inline std::string run_gamma(const ojson& r, const std::filesystem::path& dir, unsigned workers,
                             const std::filesystem::path& base) {
  const double H = r["hurst"];
  const auto hp = HurstParams::make(H);
  const DriftSpec d = drift_of(r);
  SdeSimConfig cfg;
  cfg.drift = d;
  cfg.kind = kind_of(r);
  cfg.x0 = r["x0"];
  cfg.y0 = r["y0"];
  cfg.grid = grid_of(r);
  cfg.H = H;
  cfg.n_paths = static_cast<std::size_t>(r["paths"].get<std::int64_t>());
  cfg.seed = static_cast<std::uint64_t>(r["seed"].get<std::int64_t>());
  const NormSpec norm = norm_of(r);
  const ComponentMode mode = r["mode"] == "FullZ" ? ComponentMode::FullZ : ComponentMode::YOnly;
  const Vec eps = epsilons_of(r);
  const ReferencePath phi = reference_of(r, r["path"], d, base);
  const double L = om_action(phi, d, hp).total;
  const SdeBatch batch = simulate_sde(cfg, workers);
  const GammaTable t = gamma_ratio(batch, phi, eps, norm, mode, workers);
  write_gamma_csv((dir / "gamma.csv").string(), t);
  std::ostringstream os;
  os << "gamma: " << to_string(cfg.kind) << ", H = " << H << ", N = " << cfg.grid.n_steps() << ", " << cfg.n_paths
     << " paths, norm " << norm.name() << ", mode " << to_string(mode) << "\n"
     << "  aborted paths " << batch.n_aborted << "\n"
     << "  reference path: L = " << fmt(L) << ", exp(L) = " << fmt(std::exp(L)) << "\n"
     << gamma_lines(t);
  const GammaRow& fa = smallest_feasible(t);
  os << "  smallest feasible epsilon " << fmt(fa.epsilon) << ": ratio " << fmt(fa.ratio) << " +- " << fmt(fa.std_err) << "\n";
  if (r.contains("compare_path")) {
    const ReferencePath psi = reference_of(r, r["compare_path"], d, base);
    const double Lc = om_action(psi, d, hp).total;
    const GammaTable tc = gamma_ratio(batch, psi, eps, norm, mode, workers);
    write_gamma_csv((dir / "gamma_compare.csv").string(), tc);
    os << "  compare path: L = " << fmt(Lc) << ", exp(L) = " << fmt(std::exp(Lc)) << "\n" << gamma_lines(tc);
    std::size_t k = eps.size();
    for (std::size_t i = 0; i < eps.size(); ++i)
      if (!t.rows[i].flagged && !tc.rows[i].flagged) k = i;
    if (k == eps.size()) throw StatisticalFailure("gamma: no epsilon with enough hits for both paths");
    const auto &a = t.rows[k], &b = tc.rows[k];
    const double sep = std::abs(a.ratio - b.ratio) / std::hypot(a.std_err, b.std_err);
    const bool agree = (a.ratio > b.ratio) == (L > Lc);
    os << "  ordering at epsilon " << fmt(a.epsilon) << ": " << (agree ? "matches" : "contradicts")
       << " exp(L) ordering, separation " << fmt(sep) << " sigma\n";
  }
  return os.str();
}

inline std::string run_smallball(const ojson& r, const std::filesystem::path& dir, unsigned workers) {
  const double H = r["hurst"];
  const NormSpec norm = norm_of(r);
  const auto fit = smallball_scaling(H, norm, epsilons_of(r), static_cast<std::size_t>(r["paths"].get<std::int64_t>()),
                                     static_cast<std::uint64_t>(r["seed"].get<std::int64_t>()), grid_of(r), workers);
  write_smallball_csv((dir / "smallball.csv").string(), fit);
  ojson j;
  j["norm"] = fit.norm;
  j["H"] = fit.H;
  j["exponent"] = fit.exponent;
  j["slope"] = fit.slope;
  j["decay_constant"] = fit.decay_constant;
  j["intercept"] = fit.intercept;
  j["r2"] = fit.r2;
  j["slope_stderr"] = fit.slope_stderr;
  j["n_paths"] = fit.n_paths;
  write_text(dir / "fit.json", j.dump(2) + "\n");
  std::ostringstream os;
  os << "smallball: H = " << H << ", norm " << fit.norm << ", " << fit.n_paths << " paths\n"
     << "  log p = slope * eps^(-" << fmt(fit.exponent) << ") + intercept\n"
     << "  slope " << fmt(fit.slope) << " +- " << fmt(fit.slope_stderr) << ", intercept " << fmt(fit.intercept)
     << ", R^2 " << fmt(fit.r2) << "\n";
  return os.str();
}

// Runs one command from a resolved config. Exceptions map to exit codes in run_cli.
inline int execute(const ojson& r, const RuntimeOptions& rt, std::ostream& out, const std::filesystem::path& base = {}) {
  const std::string cmd = r["command"];
  if (rt.dry_run) {
    out << "plan: " << cmd << "\n" << canonical_text(r) << "outputs:";
    for (const auto& f : planned_files(r)) out << " " << f;
    out << "\n";
    return kOk;
  }
  std::filesystem::path dir = rt.output.empty() ? default_output_dir(cmd) : rt.output;
  std::filesystem::create_directories(dir);
  write_manifest((dir / "manifest.json").string(), manifest_of(r));
  write_text(dir / "config.json", canonical_text(r));
  std::string summary;
  int code = kOk;
  if (cmd == "fbm-sample") summary = run_fbm_sample(r, dir, rt.workers);
  else if (cmd == "action-eval") summary = run_action_eval(r, dir, base);
  else if (cmd == "mpp") {
    auto m = run_mpp(r, dir);
    summary = m.summary;
    if (!m.converged) {
      summary += "  solver did not reach grad_tol\n";
      code = kSolver;
    }
  } else if (cmd == "gamma") summary = run_gamma(r, dir, rt.workers, base);
  else summary = run_smallball(r, dir, rt.workers);
  write_text(dir / "summary.txt", summary);
  out << summary << "output: " << dir.string() << "\n";
  return code;
}

inline ojson load_config_file(const std::string& file) {
  std::ifstream is(file);
  if (!is) throw ConfigError("cannot open config file " + file);
  try {
    return ojson::parse(is, nullptr, true, true);
  } catch (const ojson::parse_error& e) {
    throw ConfigError("config file " + file + ": " + e.what());
  }
}

inline int report_error(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const StructuralError& e) {
    err << "structural error: " << e.what() << "\n";
    return kStructural;
  } catch (const SolverError& e) {
    err << "solver failure: " << e.what() << "\n";
    return kSolver;
  } catch (const StatisticalFailure& e) {
    err << "statistical failure: " << e.what() << "\n";
    return kStatistical;
  } catch (const std::invalid_argument& e) {
    err << "invalid input: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInternal;
  }
}

// Every command section of the file, in the fixed command order; stops at the first failure.
inline int run_all(const std::string& config, const std::string& out_dir, unsigned workers, bool dry, std::ostream& out,
                   std::ostream& err) {
  return report_error(err, [&] {
    const ojson file = load_config_file(config);
    const std::filesystem::path base = std::filesystem::path(config).parent_path();
    std::vector<std::string> cmds;
    for (const auto& c : command_names())
      if (file.contains(c)) cmds.push_back(c);
    if (cmds.empty()) throw ConfigError("config file has no command sections");
    const std::string root = out_dir.empty() ? default_output_dir("run") : out_dir;
    std::vector<ojson> resolved;
    std::vector<RuntimeOptions> rts;
    for (const auto& c : cmds) {
      ojson rt_ov = ojson::object();
      if (workers) rt_ov["workers"] = workers;
      RuntimeOptions rt = runtime_options(c, file, rt_ov);
      rt.output = (std::filesystem::path(root) / c).string();
      rt.dry_run = dry;
      resolved.push_back(resolve_config(c, file));
      rts.push_back(rt);
    }
    for (std::size_t i = 0; i < cmds.size(); ++i) {
      int code = execute(resolved[i], rts[i], out, base);
      if (code != kOk) return code;
    }
    return static_cast<int>(kOk);
  });
}

// Full command line: `omfbm <command> [--config FILE] [overrides] [--dry-run] [--workers K]`.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Onsager-Machlup functionals for SDEs driven by fractional Brownian motion"};
  app.require_subcommand(1);
  struct Opts {
    std::string config, out, regime, kind, norm, mode, drift, sigma, method;
    std::optional<double> hurst, T, beta, x0, y0, terminal;
    std::optional<std::int64_t> n, paths, seed;
    unsigned workers = 0;
    bool dry = false;
  };
  std::map<std::string, Opts> opts;
  for (const auto& c : command_names()) {
    static const std::map<std::string, std::string> about{
        {"fbm-sample", "sample fBm paths"},
        {"action-eval", "evaluate the OM action of a reference path"},
        {"mpp", "minimise the action and report the Euler-Lagrange residual"},
        {"gamma", "Monte Carlo tube-probability ratios"},
        {"smallball", "small-ball probability scaling fit"}};
    auto* sc = app.add_subcommand(c, about.at(c));
    Opts& o = opts[c];
    sc->add_option("--config", o.config, "JSON config file");
    sc->add_option("--hurst", o.hurst, "Hurst index H");
    sc->add_option("--T", o.T, "time horizon");
    sc->add_option("--n", o.n, "number of grid steps");
    sc->add_option("--seed", o.seed, "random seed");
    sc->add_option("--out", o.out, "output directory");
    sc->add_option("--workers", o.workers, "worker threads");
    sc->add_flag("--dry-run", o.dry, "validate and print the plan");
    if (c == "fbm-sample" || c == "gamma" || c == "smallball") sc->add_option("--paths", o.paths, "number of paths");
    if (c == "fbm-sample") sc->add_option("--method", o.method, "cholesky or kernel");
    if (c == "action-eval" || c == "mpp" || c == "gamma") {
      sc->add_option("--regime", o.regime, "singular or regular (checked against H)");
      sc->add_option("--kind", o.kind, "nondegenerate or degenerate");
      sc->add_option("--drift", o.drift, "doubleWell, linear, zero or polynomial");
      sc->add_option("--sigma", o.sigma, "none, zero or identity_y");
      sc->add_option("--x0", o.x0, "initial x");
      sc->add_option("--y0", o.y0, "initial y");
    }
    if (c == "mpp") sc->add_option("--terminal", o.terminal, "pinned terminal value");
    if (c == "gamma" || c == "smallball") {
      sc->add_option("--norm", o.norm, "sup or holder");
      sc->add_option("--beta", o.beta, "Holder exponent");
    }
    if (c == "gamma") sc->add_option("--mode", o.mode, "FullZ or YOnly");
  }
  std::string run_config, run_out;
  unsigned run_workers = 0;
  bool run_dry = false;
  auto* run = app.add_subcommand("run", "run every command section of a config file");
  run->add_option("--config", run_config, "JSON config file")->required();
  run->add_option("--out", run_out, "output directory (one subdirectory per command)");
  run->add_option("--workers", run_workers, "worker threads");
  run->add_flag("--dry-run", run_dry, "validate and print the plans");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  }
  std::string cmd;
  for (auto* sc : app.get_subcommands()) cmd = sc->get_name();
  if (cmd == "run") return run_all(run_config, run_out, run_workers, run_dry, out, err);
  const Opts& o = opts[cmd];
  return report_error(err, [&] {
    ojson file = ojson::object();
    std::filesystem::path base;
    if (!o.config.empty()) {
      file = load_config_file(o.config);
      base = std::filesystem::path(o.config).parent_path();
    }
    ojson ov = ojson::object();
    if (o.hurst) ov["hurst"] = *o.hurst;
    if (o.T) ov["T"] = *o.T;
    if (o.n) ov["n"] = *o.n;
    if (o.seed) ov["seed"] = *o.seed;
    if (o.paths) ov["paths"] = *o.paths;
    if (!o.method.empty()) ov["method"] = o.method;
    if (!o.regime.empty()) ov["regime"] = o.regime;
    if (!o.kind.empty()) ov["kind"] = o.kind;
    if (!o.drift.empty()) {
      ojson d = file.contains(cmd) && file[cmd].contains("drift") ? file[cmd]["drift"]
                                                                  : (file.contains("drift") ? file["drift"] : ojson::object());
      if (d.is_string()) d = ojson::object();
      if (!d.contains("name") || d["name"] != o.drift) d = ojson{{"name", o.drift}};
      ov["drift"] = d;
    }
    if (!o.sigma.empty()) ov["sigma"] = o.sigma;
    if (o.x0) ov["x0"] = *o.x0;
    if (o.y0) ov["y0"] = *o.y0;
    if (o.terminal) ov["terminal"] = *o.terminal;
    if (!o.norm.empty()) ov["norm"] = o.norm;
    if (o.beta) ov["beta"] = *o.beta;
    if (!o.mode.empty()) ov["mode"] = o.mode;
    ojson rt_ov = ojson::object();
    if (o.workers) rt_ov["workers"] = o.workers;
    if (!o.out.empty()) rt_ov["output"] = o.out;
    RuntimeOptions rt = runtime_options(cmd, file, rt_ov);
    rt.dry_run = o.dry;
    const ojson r = resolve_config(cmd, file, ov);
    return execute(r, rt, out, base);
  });
}

}  // namespace omfbm::cli

#endif
