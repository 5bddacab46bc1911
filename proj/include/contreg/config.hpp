#pragma once

// Run configuration: an INI file with sections [plant], [forwarding],
// [scenario.N], [verify], [sweep], [output] and top-level seed/workers.
// Unknown keys are rejected so typos fail loudly.

#include "contreg/evolution.hpp"
#include "contreg/forwarding.hpp"
#include "contreg/plants.hpp"
#include "contreg/regulator.hpp"
#include "contreg/space.hpp"
#include "contreg/verify.hpp"

#include <boost/algorithm/string.hpp>
#include <boost/functional/hash.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef CONTREG_VERSION
#define CONTREG_VERSION "0.1.0"
#endif

namespace contreg {

namespace pt = boost::property_tree;

inline constexpr const char* kVersion = CONTREG_VERSION;

struct PlantSpec {
  std::string type = "linear_benchmark";
  // linear_benchmark
  int lb_n = 20;
  double lb_alpha = 0.5;
  std::uint64_t lb_seed = 42;
  LinearBenchmarkOptions lb_opts;
  // scalar
  double sc_a = 2.0, sc_b = 1.0, sc_c = 1.0, sc_cubic = 0.0;
  // sine_gordon
  SineGordonParams sg;
  // wilson_cowan
  WilsonCowanParams wc;
  std::string wc_kernel = "constant";
  double wc_kernel_value = 0.1;
  double wc_kernel_width = 0.1;
  std::string wc_nonlinearity = "tanh";
};

/// Vectors are given either as an explicit comma list (a single value is
/// broadcast) or by a norm and a shape: zero, constant, random, smooth.
struct VectorSpec {
  std::optional<std::vector<double>> values;
  double norm = 0.0;
  std::string shape = "zero";
};

struct ScenarioSpec {
  std::string name;
  VectorSpec d, y_ref, w0, z0;
  std::optional<double> horizon;        // T
  std::optional<double> horizon_kappa;  // T in units of 1/κ
  double dt = 0.01;
  std::optional<double> window;
  double window_kappa = 1.0;
  bool equilibrium = true;
  EquilibriumOptions eq;
};

struct SweepSpec {
  std::vector<double> d_norms{0.0};
  std::vector<double> y_ref_norms{0.0};
  std::string d_shape = "constant";
  std::string y_ref_shape = "constant";
  double dt = 0.01;
  double horizon = 50.0;
  EquilibriumOptions eq;
  double success_tol = 1e-4;  // on ‖Cw* - y_ref‖
};

struct RunConfig {
  std::string source;  // file contents, for the hash
  std::uint64_t seed = 1;
  int workers = 1;
  PlantSpec plant;
  ForwardingOptions forwarding;
  std::vector<ScenarioSpec> scenarios;
  BatteryConfig verify;
  std::string sampler = "ball";  // ball | smooth
  SweepSpec sweep;
  std::string out_dir = "out";

  std::string hash() const {
    std::ostringstream os;
    os << std::hex << boost::hash_value(source + "#seed=" + std::to_string(seed));
    return os.str();
  }
};

namespace detail {

inline std::vector<double> parse_list(const std::string& key, const std::string& s) {
  std::vector<std::string> parts;
  boost::split(parts, s, boost::is_any_of(","));
  std::vector<double> out;
  for (auto p : parts) {
    boost::trim(p);
    if (p.empty()) continue;
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(p, &pos));
      if (pos != p.size()) throw std::invalid_argument(p);
    } catch (const std::exception&) {
      throw ConfigurationError("config: " + key + ": not a number: '" + p + "'");
    }
  }
  return out;
}

class Section {
 public:
  Section(std::string name, const pt::ptree* tree) : name_(std::move(name)), tree_(tree) {}

  template <class T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!tree_) return fallback;
    const auto v = tree_->get_optional<std::string>(key);
    if (!v) return fallback;
    return convert<T>(key, *v);
  }

  template <class T>
  std::optional<T> opt(const std::string& key) {
    used_.insert(key);
    if (!tree_) return std::nullopt;
    const auto v = tree_->get_optional<std::string>(key);
    if (!v) return std::nullopt;
    return convert<T>(key, *v);
  }

  std::optional<std::vector<double>> list(const std::string& key) {
    used_.insert(key);
    if (!tree_) return std::nullopt;
    const auto v = tree_->get_optional<std::string>(key);
    if (!v) return std::nullopt;
    return parse_list(name_ + "." + key, *v);
  }

  void reject_unknown() const {
    if (!tree_) return;
    for (const auto& [k, v] : *tree_) {
      if (!used_.count(k)) {
        throw ConfigurationError("config: unknown key '" + k + "' in [" + name_ + "]");
      }
    }
  }

 private:
  template <class T>
  T convert(const std::string& key, std::string v) const {
    boost::trim(v);
    const std::string where = "config: [" + name_ + "] " + key;
    if constexpr (std::is_same_v<T, std::string>) {
      return v;
    } else if constexpr (std::is_same_v<T, bool>) {
      std::string l = boost::to_lower_copy(v);
      if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
      if (l == "false" || l == "0" || l == "no" || l == "off") return false;
      throw ConfigurationError(where + ": expected a boolean, got '" + v + "'");
    } else {
      if (std::is_floating_point_v<T> && boost::to_lower_copy(v) == "pi") {
        return static_cast<T>(std::numbers::pi);
      }
      std::istringstream is(v);
      T out{};
      is >> out;
      if (is.fail() || !is.eof()) {
        throw ConfigurationError(where + ": cannot parse '" + v + "'");
      }
      return out;
    }
  }

  std::string name_;
  const pt::ptree* tree_;
  std::set<std::string> used_;
};

inline VectorSpec read_vector(Section& s, const std::string& key,
                              const std::string& default_shape) {
  VectorSpec v;
  v.values = s.list(key);
  v.norm = s.get<double>(key + "_norm", 0.0);
  v.shape = s.get<std::string>(key + "_shape", default_shape);
  if (v.values && (s.opt<double>(key + "_norm"))) {
    throw ConfigurationError("config: give either " + key + " or " + key + "_norm, not both");
  }
  static const std::set<std::string> shapes{"zero", "constant", "random", "smooth"};
  if (!shapes.count(v.shape)) {
    throw ConfigurationError("config: unknown shape '" + v.shape + "' for " + key);
  }
  if (v.norm < 0.0) throw ConfigurationError("config: " + key + "_norm must be >= 0");
  return v;
}

inline void read_equilibrium(Section& s, EquilibriumOptions& eq, double dt) {
  eq.dt = s.get<double>("eq_dt", dt);
  eq.check_interval = s.get<double>("eq_check_interval", eq.check_interval);
  eq.stagnation_tol = s.get<double>("eq_stagnation_tol", eq.stagnation_tol);
  eq.max_time = s.get<double>("eq_max_time", eq.max_time);
}

}  // namespace detail

inline RunConfig parse_config_string(const std::string& text) {
  pt::ptree tree;
  {
    std::istringstream is(text);
    try {
      pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
      throw ConfigurationError(std::string("config: ") + e.what());
    }
  }
  RunConfig cfg;
  cfg.source = text;

  auto section = [&](const std::string& name) -> const pt::ptree* {
    const auto c = tree.get_child_optional(pt::ptree::path_type(name, '/'));
    return c ? &*c : nullptr;
  };

  // top-level keys
  std::set<std::string> sections{"plant", "forwarding", "verify", "sweep", "output"};
  for (const auto& [k, v] : tree) {
    if (v.empty()) {
      if (k == "seed") {
        cfg.seed = detail::Section("top", &tree).get<std::uint64_t>("seed", 1);
      } else if (k == "workers") {
        cfg.workers = detail::Section("top", &tree).get<int>("workers", 1);
      } else {
        throw ConfigurationError("config: unknown top-level key '" + k + "'");
      }
    } else if (!sections.count(k) && !boost::starts_with(k, "scenario.")) {
      throw ConfigurationError("config: unknown section [" + k + "]");
    }
  }
  if (cfg.workers < 1) throw ConfigurationError("config: workers must be >= 1");

  {
    detail::Section s("plant", section("plant"));
    auto& p = cfg.plant;
    p.type = s.get<std::string>("type", p.type);
    if (p.type == "linear_benchmark") {
      p.lb_n = s.get<int>("n", p.lb_n);
      p.lb_alpha = s.get<double>("alpha", p.lb_alpha);
      p.lb_seed = s.get<std::uint64_t>("seed", p.lb_seed);
      p.lb_opts.io_dim = s.get<int>("io_dim", p.lb_opts.io_dim);
      p.lb_opts.skew_scale = s.get<double>("skew_scale", p.lb_opts.skew_scale);
      p.lb_opts.rank_deficient = s.get<bool>("rank_deficient", false);
    } else if (p.type == "scalar") {
      p.sc_a = s.get<double>("a", p.sc_a);
      p.sc_b = s.get<double>("b", p.sc_b);
      p.sc_c = s.get<double>("c", p.sc_c);
      p.sc_cubic = s.get<double>("cubic", p.sc_cubic);
    } else if (p.type == "sine_gordon") {
      p.sg.length = s.get<double>("length", p.sg.length);
      p.sg.xi = s.get<double>("xi", p.sg.xi);
      p.sg.gamma = s.get<double>("gamma", p.sg.gamma);
      p.sg.n = s.get<int>("n", p.sg.n);
      p.sg.window_lo = s.get<double>("window_lo", p.sg.window_lo);
      p.sg.window_hi = s.get<double>("window_hi", p.sg.window_hi);
    } else if (p.type == "wilson_cowan") {
      p.wc.n = s.get<int>("n", p.wc.n);
      p.wc.alpha_gain = s.get<double>("alpha_gain", p.wc.alpha_gain);
      p.wc_kernel = s.get<std::string>("kernel", p.wc_kernel);
      p.wc_kernel_value = s.get<double>("kernel_value", p.wc_kernel_value);
      p.wc_kernel_width = s.get<double>("kernel_width", p.wc_kernel_width);
      p.wc_nonlinearity = s.get<std::string>("nonlinearity", p.wc_nonlinearity);
      p.wc.window_lo = s.get<double>("window_lo", p.wc.window_lo);
      p.wc.window_hi = s.get<double>("window_hi", p.wc.window_hi);
      if (p.wc_kernel == "constant") {
        p.wc.kernel = constant_kernel(p.wc_kernel_value);
      } else if (p.wc_kernel == "gaussian") {
        p.wc.kernel = gaussian_kernel(p.wc_kernel_value, p.wc_kernel_width);
      } else {
        throw ConfigurationError("config: unknown kernel '" + p.wc_kernel + "'");
      }
      if (p.wc_nonlinearity == "tanh") {
        p.wc.s = tanh_nonlinearity();
      } else if (p.wc_nonlinearity == "atan") {
        p.wc.s = atan_nonlinearity();
      } else {
        throw ConfigurationError("config: unknown nonlinearity '" + p.wc_nonlinearity + "'");
      }
    } else {
      throw ConfigurationError("config: unknown plant type '" + p.type + "'");
    }
    s.reject_unknown();
  }

  {
    detail::Section s("forwarding", section("forwarding"));
    auto& f = cfg.forwarding;
    f.dt_quad = s.get<double>("dt_quad", f.dt_quad);
    f.tail_tol = s.get<double>("tail_tol", f.tail_tol);
    f.tau_ceiling = s.get<double>("tau_ceiling", f.tau_ceiling);
    f.tau_max = s.opt<double>("tau_max");
    f.early_stop = s.get<bool>("early_stop", f.early_stop);
    f.alpha_fallback = s.opt<double>("alpha_fallback");
    f.norm_iters = s.get<int>("norm_iters", f.norm_iters);
    if (!(f.dt_quad > 0.0) || !(f.tail_tol > 0.0) || !(f.tau_ceiling > 0.0)) {
      throw ConfigurationError("config: dt_quad, tail_tol, tau_ceiling must be positive");
    }
    s.reject_unknown();
  }

  // scenarios, ordered by their numeric suffix
  std::vector<std::pair<long, std::string>> names;
  for (const auto& [k, v] : tree) {
    if (boost::starts_with(k, "scenario.")) {
      const std::string idx = k.substr(9);
      long n = 0;
      try {
        std::size_t pos = 0;
        n = std::stol(idx, &pos);
        if (pos != idx.size()) throw std::invalid_argument(idx);
      } catch (const std::exception&) {
        throw ConfigurationError("config: scenario sections are named [scenario.N], got [" + k + "]");
      }
      names.emplace_back(n, k);
    }
  }
  std::sort(names.begin(), names.end());
  for (const auto& [n, k] : names) {
    detail::Section s(k, section(k));
    ScenarioSpec sc;
    sc.name = "scenario_" + std::to_string(n);
    sc.d = detail::read_vector(s, "d", "constant");
    sc.y_ref = detail::read_vector(s, "y_ref", "constant");
    sc.w0 = detail::read_vector(s, "w0", "random");
    sc.z0 = detail::read_vector(s, "z0", "zero");
    sc.horizon = s.opt<double>("T");
    sc.horizon_kappa = s.opt<double>("T_kappa");
    if (sc.horizon.has_value() == sc.horizon_kappa.has_value()) {
      throw ConfigurationError("config: [" + k + "] needs exactly one of T, T_kappa");
    }
    sc.dt = s.get<double>("dt", sc.dt);
    sc.window = s.opt<double>("window");
    sc.window_kappa = s.get<double>("window_kappa", sc.window_kappa);
    sc.equilibrium = s.get<bool>("equilibrium", sc.equilibrium);
    detail::read_equilibrium(s, sc.eq, sc.dt);
    if (!(sc.dt > 0.0)) throw ConfigurationError("config: [" + k + "] dt must be positive");
    s.reject_unknown();
    cfg.scenarios.push_back(std::move(sc));
  }

  {
    detail::Section s("verify", section("verify"));
    auto& v = cfg.verify;
    cfg.sampler = s.get<std::string>("sampler", cfg.sampler);
    if (cfg.sampler != "ball" && cfg.sampler != "smooth") {
      throw ConfigurationError("config: [verify] sampler must be ball or smooth");
    }
    v.sample_radius = s.get<double>("sample_radius", v.sample_radius);
    v.monotonicity_samples = s.get<int>("monotonicity_samples", v.monotonicity_samples);
    v.monotonicity_tol = s.get<double>("monotonicity_tol", v.monotonicity_tol);
    v.contraction_pairs = s.get<int>("contraction_pairs", v.contraction_pairs);
    v.contraction_horizon_factor =
        s.get<double>("contraction_horizon_factor", v.contraction_horizon_factor);
    v.contraction_dt = s.get<double>("contraction_dt", v.contraction_dt);
    v.contraction_slack = s.get<double>("contraction_slack", v.contraction_slack);
    v.fe_samples = s.get<int>("fe_samples", v.fe_samples);
    v.fe_tol = s.get<double>("fe_tol", v.fe_tol);
    v.m_zero_tol = s.get<double>("m_zero_tol", v.m_zero_tol);
    v.duality_samples = s.get<int>("duality_samples", v.duality_samples);
    v.duality_tol = s.get<double>("duality_tol", v.duality_tol);
    v.fd_eps = s.get<double>("fd_eps", v.fd_eps);
    v.fd_tol = s.get<double>("fd_tol", v.fd_tol);
    v.lyapunov_runs = s.get<int>("lyapunov_runs", v.lyapunov_runs);
    v.lyapunov_horizon = s.get<double>("lyapunov_T", v.lyapunov_horizon);
    v.lyapunov_dt = s.get<double>("lyapunov_dt", v.lyapunov_dt);
    v.lyapunov_radius = s.get<double>("lyapunov_radius", v.lyapunov_radius);
    v.uniform_coercivity = s.get<bool>("uniform_coercivity", v.uniform_coercivity);
    v.uniform_samples = s.get<int>("uniform_samples", v.uniform_samples);
    v.uniform_radius = s.get<double>("uniform_radius", v.uniform_radius);
    v.global_convergence = s.get<bool>("global_convergence", v.global_convergence);
    v.global_runs = s.get<int>("global_runs", v.global_runs);
    v.global_radius = s.get<double>("global_radius", v.global_radius);
    v.global_horizon = s.get<double>("global_T", v.global_horizon);
    v.global_dt = s.get<double>("global_dt", v.global_dt);
    v.global_ratio = s.get<double>("global_ratio", v.global_ratio);
    s.reject_unknown();
  }

  {
    detail::Section s("sweep", section("sweep"));
    auto& w = cfg.sweep;
    if (auto l = s.list("d_norms")) w.d_norms = *l;
    if (auto l = s.list("y_ref_norms")) w.y_ref_norms = *l;
    w.d_shape = s.get<std::string>("d_shape", w.d_shape);
    w.y_ref_shape = s.get<std::string>("y_ref_shape", w.y_ref_shape);
    w.dt = s.get<double>("dt", w.dt);
    w.horizon = s.get<double>("T", w.horizon);
    w.success_tol = s.get<double>("success_tol", w.success_tol);
    detail::read_equilibrium(s, w.eq, w.dt);
    for (double x : w.d_norms) {
      if (x < 0.0) throw ConfigurationError("config: [sweep] d_norms must be >= 0");
    }
    for (double x : w.y_ref_norms) {
      if (x < 0.0) throw ConfigurationError("config: [sweep] y_ref_norms must be >= 0");
    }
    s.reject_unknown();
  }

  {
    detail::Section s("output", section("output"));
    cfg.out_dir = s.get<std::string>("dir", cfg.out_dir);
    s.reject_unknown();
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_string(ss.str());
}

inline Plant build_plant(const PlantSpec& p) {
  if (p.type == "linear_benchmark") return make_linear_benchmark(p.lb_n, p.lb_alpha, p.lb_seed, p.lb_opts);
  if (p.type == "scalar") return make_scalar_plant(p.sc_a, p.sc_b, p.sc_c, p.sc_cubic);
  if (p.type == "sine_gordon") return make_sine_gordon(p.sg);
  if (p.type == "wilson_cowan") return make_wilson_cowan(p.wc);
  throw ConfigurationError("unknown plant type '" + p.type + "'");
}

/// Unit-norm (in H) direction of the given shape; "smooth" uses the plant's
/// smooth sampler where one exists and falls back to "random".
inline Vec h_direction(const PlantSpec& ps, const Plant& plant,
                       const std::string& shape, std::mt19937_64& rng) {
  const Space& h = plant.H();
  Vec v;
  if (shape == "zero") return Vec::Zero(h.dim());
  if (shape == "constant") {
    v = Vec::Ones(h.dim());
  } else if (shape == "smooth" && ps.type == "sine_gordon") {
    v = sine_gordon_smooth_state(ps.sg, rng);
  } else {
    v = sample_ball(h, 1.0, rng);
  }
  const double n = h.norm(v);
  if (!(n > 0.0)) return Vec::Zero(h.dim());
  return v / n;
}

inline Vec make_vector(const VectorSpec& v, const PlantSpec& ps,
                       const Plant& plant, const Space& space, bool in_h,
                       std::mt19937_64& rng, const std::string& what) {
  if (v.values) {
    const auto& vals = *v.values;
    if (vals.size() == 1) return Vec::Constant(space.dim(), vals[0]);
    if (static_cast<Eigen::Index>(vals.size()) != space.dim()) {
      throw ConfigurationError("config: " + what + " has " + std::to_string(vals.size()) +
                               " entries, expected " + std::to_string(space.dim()));
    }
    return Eigen::Map<const Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  }
  if (v.norm == 0.0 || v.shape == "zero") return Vec::Zero(space.dim());
  Vec dir;
  if (in_h) {
    dir = h_direction(ps, plant, v.shape, rng);
  } else {
    dir = v.shape == "constant" ? Vec(Vec::Ones(space.dim())) : sample_ball(space, 1.0, rng);
    const double n = space.norm(dir);
    if (n > 0.0) dir /= n;
  }
  return v.norm * dir;
}

inline BatteryConfig battery_config(const RunConfig& cfg) {
  BatteryConfig b = cfg.verify;
  b.seed = cfg.seed;
  if (cfg.sampler == "smooth" && cfg.plant.type == "sine_gordon") {
    const auto sg = cfg.plant.sg;
    const double r = b.sample_radius;
    b.sampler = [sg, r](std::mt19937_64& rng) { return sine_gordon_smooth_state(sg, rng, 3, r); };
  }
  return b;
}

}  // namespace contreg
