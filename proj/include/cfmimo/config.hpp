#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_set>

#include <json.hpp>

#include "cfmimo/errors.hpp"

namespace cfmimo {

/// Uniform planar array: n_horizontal x n_vertical elements spaced in
/// carrier wavelengths.
struct ArrayGeometry {
  int n_horizontal = 1;
  int n_vertical = 1;
  double spacing = 0.5;

  int size() const { return n_horizontal * n_vertical; }

  void validate() const {
    if (n_horizontal < 1 || n_vertical < 1)
      throw GeometryError("array dimensions must be positive, got " +
                          std::to_string(n_horizontal) + "x" +
                          std::to_string(n_vertical));
    if (!(spacing > 0.0))
      throw GeometryError("array element spacing must be > 0");
  }

  bool operator==(const ArrayGeometry&) const = default;
};

/// Log-distance path loss PL(d) = pl0_db + 10*exponent*log10(d/ref_distance).
struct PathLossModel {
  double pl0_db = 61.4;
  double ref_distance_m = 1.0;
  double exponent = 2.8;

  double loss_db(double distance_m) const {
    const double d = std::max(distance_m, ref_distance_m);
    return pl0_db + 10.0 * exponent * std::log10(d / ref_distance_m);
  }

  bool operator==(const PathLossModel&) const = default;
};

/// Tolerances and iteration caps for the max-min power allocation solver.
struct SolverSettings {
  double bisection_tol = 1e-6;  // relative gap on the SQNR target t
  double ao_tol = 1e-7;         // relative t improvement between AO rounds
  double sigma_tol = 1e-9;      // |C_m - C| at the sigma subproblem root
  int max_bisection_iters = 200;
  int max_ao_iters = 100;
  int max_root_iters = 200;

  void validate() const {
    if (!(bisection_tol > 0.0) || !(ao_tol > 0.0) || !(sigma_tol > 0.0))
      throw ConfigError("solver tolerances must be > 0");
    if (max_bisection_iters < 1 || max_ao_iters < 1 || max_root_iters < 1)
      throw ConfigError("solver iteration caps must be >= 1");
  }

  bool operator==(const SolverSettings&) const = default;
};

/// Consumption model for the energy-efficiency figure. The DAC term is
/// dac_coeff_exp*2^B + dac_coeff_lin*B per converter; B = infinity is
/// evaluated at b_infinity_cap bits.
struct PowerModel {
  double pa_efficiency = 0.4;
  double p_rf_chain = 0.2;
  double dac_coeff_exp = 1e-4;
  double dac_coeff_lin = 1e-3;
  double p_fixed_bs = 1.0;
  double fronthaul_watts_per_bpshz = 0.02;
  int b_infinity_cap = 12;

  void validate() const {
    if (!(pa_efficiency > 0.0) || pa_efficiency > 1.0)
      throw ConfigError("pa_efficiency must be in (0, 1]");
    if (p_rf_chain < 0.0 || dac_coeff_exp < 0.0 || dac_coeff_lin < 0.0 ||
        p_fixed_bs < 0.0 || fronthaul_watts_per_bpshz < 0.0)
      throw ConfigError("power model coefficients must be >= 0");
    if (b_infinity_cap < 1) throw ConfigError("b_infinity_cap must be >= 1");
  }

  bool operator==(const PowerModel&) const = default;
};

enum class Mode { Cellfree, SmallcellMrt, SmallcellZf, SmallcellRzf };

inline std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::Cellfree: return "cellfree";
    case Mode::SmallcellMrt: return "smallcell-mrt";
    case Mode::SmallcellZf: return "smallcell-zf";
    case Mode::SmallcellRzf: return "smallcell-rzf";
  }
  throw ConfigError("unreachable mode value");
}

inline Mode mode_from_string(const std::string& name) {
  if (name == "cellfree") return Mode::Cellfree;
  if (name == "smallcell-mrt") return Mode::SmallcellMrt;
  if (name == "smallcell-zf") return Mode::SmallcellZf;
  if (name == "smallcell-rzf") return Mode::SmallcellRzf;
  throw ConfigError("unknown mode '" + name +
                    "' (expected cellfree, smallcell-mrt, smallcell-zf or "
                    "smallcell-rzf)");
}

/// Full scenario, hardware, and solver description of one simulation run.
/// Desk-scale defaults; every field can be set from a JSON config file.
struct SystemConfig {
  int num_bs = 4;                        // key "m"
  int num_users = 8;                     // key "k"
  ArrayGeometry bs_array{4, 4, 0.5};     // key "n_bs"
  int num_rf_chains = 4;                 // key "n_rf"
  ArrayGeometry ue_array{2, 1, 0.5};     // key "n_ue"
  double carrier_hz = 30e9;              // key "f_c"
  double bandwidth_hz = 80e6;            // key "w"
  double max_bs_power_w = 1.9952623149688795;     // key "p"  (33 dBm)
  double noise_psd_w_per_hz = 3.9810717055349695e-21;  // key "n0" (-174 dBm/Hz)
  double isd_m = 200.0;                  // key "isd"
  int paths_per_link = 4;                // key "paths_per_link"
  std::optional<int> dac_bits{};         // key "b"; nullopt = infinite
  std::optional<double> fronthaul_capacity_bpshz{};  // key "c"; nullopt = inf
  Mode mode = Mode::Cellfree;            // key "mode"
  std::optional<double> rzf_alpha{};     // key "rzf_alpha"; nullopt = auto
  std::uint64_t seed = 1;                // key "seed"
  int trials = 50;                       // key "trials"
  SolverSettings solver{};               // key "solver"
  PowerModel power_model{};              // key "power_model"
  PathLossModel pathloss{};              // key "pathloss"

  double awgn_var() const { return noise_psd_w_per_hz * bandwidth_hz; }
  int users_per_bs() const { return num_users / num_bs; }
  bool infinite_bits() const { return !dac_bits.has_value(); }
  bool infinite_fronthaul() const {
    return !fronthaul_capacity_bpshz.has_value();
  }

  void validate() const {
    if (num_bs < 1 || num_users < 1)
      throw ConfigError("m and k must be >= 1");
    if (num_users % num_bs != 0)
      throw ConfigError("k must be divisible by m (got k=" +
                        std::to_string(num_users) + ", m=" +
                        std::to_string(num_bs) + ")");
    bs_array.validate();
    ue_array.validate();
    if (num_rf_chains < 1) throw ConfigError("n_rf must be >= 1");
    if (num_rf_chains > bs_array.size())
      throw ConfigError("n_rf must not exceed the base-station antenna count");
    if (mode == Mode::Cellfree && num_bs * num_rf_chains < num_users)
      throw ConfigError("cellfree mode requires m*n_rf >= k");
    if (!(carrier_hz > 0.0) || !(bandwidth_hz > 0.0) ||
        !(max_bs_power_w > 0.0) || !(noise_psd_w_per_hz > 0.0) ||
        !(isd_m > 0.0))
      throw ConfigError("physical quantities must be > 0");
    if (paths_per_link < 1) throw ConfigError("paths_per_link must be >= 1");
    if (dac_bits && *dac_bits < 1)
      throw InvalidResolutionError("b must be >= 1 or \"inf\"");
    if (fronthaul_capacity_bpshz && !(*fronthaul_capacity_bpshz > 0.0))
      throw ConfigError("c must be > 0 or \"inf\"");
    if (rzf_alpha && *rzf_alpha < 0.0)
      throw ConfigError("rzf_alpha must be >= 0");
    if (trials < 1) throw ConfigError("trials must be >= 1");
    if (!(pathloss.ref_distance_m > 0.0))
      throw ConfigError("pathloss reference distance must be > 0");
    solver.validate();
    power_model.validate();
  }

  /// Returns a validated copy with derived defaults filled in (currently the
  /// MMSE-flavored RZF ridge (k/m) * awgn_var / p when rzf_alpha is unset).
  SystemConfig resolved() const {
    SystemConfig out = *this;
    if (!out.rzf_alpha)
      out.rzf_alpha = (static_cast<double>(num_users) / num_bs) * awgn_var() /
                      max_bs_power_w;
    out.validate();
    return out;
  }

  bool operator==(const SystemConfig&) const = default;
};

namespace detail {

inline void require_known_keys(const nlohmann::json& object,
                               const std::unordered_set<std::string>& known,
                               const std::string& scope) {
  for (const auto& item : object.items()) {
    if (!known.contains(item.key()))
      throw ConfigError("unknown config key '" + item.key() + "' in " + scope);
  }
}

inline ArrayGeometry geometry_from_json(const nlohmann::json& j,
                                        const std::string& scope) {
  require_known_keys(j, {"n_horizontal", "n_vertical", "spacing"}, scope);
  ArrayGeometry g;
  if (j.contains("n_horizontal")) g.n_horizontal = j.at("n_horizontal");
  if (j.contains("n_vertical")) g.n_vertical = j.at("n_vertical");
  if (j.contains("spacing")) g.spacing = j.at("spacing");
  return g;
}

template <typename T>
std::optional<T> finite_or_inf_from_json(const nlohmann::json& value,
                                         const std::string& key) {
  if (value.is_string()) {
    if (value.get<std::string>() == "inf") return std::nullopt;
    throw ConfigError("key '" + key + "' must be a number or \"inf\"");
  }
  return value.get<T>();
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const ArrayGeometry& g) {
  j = {{"n_horizontal", g.n_horizontal},
       {"n_vertical", g.n_vertical},
       {"spacing", g.spacing}};
}

inline void to_json(nlohmann::json& j, const PathLossModel& p) {
  j = {{"pl0_db", p.pl0_db},
       {"ref_distance_m", p.ref_distance_m},
       {"exponent", p.exponent}};
}

inline void to_json(nlohmann::json& j, const SolverSettings& s) {
  j = {{"bisection_tol", s.bisection_tol},
       {"ao_tol", s.ao_tol},
       {"sigma_tol", s.sigma_tol},
       {"max_bisection_iters", s.max_bisection_iters},
       {"max_ao_iters", s.max_ao_iters},
       {"max_root_iters", s.max_root_iters}};
}

inline void to_json(nlohmann::json& j, const PowerModel& p) {
  j = {{"pa_efficiency", p.pa_efficiency},
       {"p_rf_chain", p.p_rf_chain},
       {"dac_coeff_exp", p.dac_coeff_exp},
       {"dac_coeff_lin", p.dac_coeff_lin},
       {"p_fixed_bs", p.p_fixed_bs},
       {"fronthaul_watts_per_bpshz", p.fronthaul_watts_per_bpshz},
       {"b_infinity_cap", p.b_infinity_cap}};
}

inline void to_json(nlohmann::json& j, const SystemConfig& c) {
  j = nlohmann::json{{"m", c.num_bs},
                     {"k", c.num_users},
                     {"n_bs", c.bs_array},
                     {"n_rf", c.num_rf_chains},
                     {"n_ue", c.ue_array},
                     {"f_c", c.carrier_hz},
                     {"w", c.bandwidth_hz},
                     {"p", c.max_bs_power_w},
                     {"n0", c.noise_psd_w_per_hz},
                     {"isd", c.isd_m},
                     {"paths_per_link", c.paths_per_link},
                     {"mode", to_string(c.mode)},
                     {"seed", c.seed},
                     {"trials", c.trials},
                     {"solver", c.solver},
                     {"power_model", c.power_model},
                     {"pathloss", c.pathloss}};
  j["b"] = c.dac_bits ? nlohmann::json(*c.dac_bits) : nlohmann::json("inf");
  j["c"] = c.fronthaul_capacity_bpshz
               ? nlohmann::json(*c.fronthaul_capacity_bpshz)
               : nlohmann::json("inf");
  if (c.rzf_alpha) j["rzf_alpha"] = *c.rzf_alpha;
}

inline void from_json(const nlohmann::json& j, SolverSettings& s) {
  detail::require_known_keys(j,
                             {"bisection_tol", "ao_tol", "sigma_tol",
                              "max_bisection_iters", "max_ao_iters",
                              "max_root_iters"},
                             "solver");
  if (j.contains("bisection_tol")) s.bisection_tol = j.at("bisection_tol");
  if (j.contains("ao_tol")) s.ao_tol = j.at("ao_tol");
  if (j.contains("sigma_tol")) s.sigma_tol = j.at("sigma_tol");
  if (j.contains("max_bisection_iters"))
    s.max_bisection_iters = j.at("max_bisection_iters");
  if (j.contains("max_ao_iters")) s.max_ao_iters = j.at("max_ao_iters");
  if (j.contains("max_root_iters")) s.max_root_iters = j.at("max_root_iters");
}

inline void from_json(const nlohmann::json& j, PowerModel& p) {
  detail::require_known_keys(
      j,
      {"pa_efficiency", "p_rf_chain", "dac_coeff_exp", "dac_coeff_lin",
       "p_fixed_bs", "fronthaul_watts_per_bpshz", "b_infinity_cap"},
      "power_model");
  if (j.contains("pa_efficiency")) p.pa_efficiency = j.at("pa_efficiency");
  if (j.contains("p_rf_chain")) p.p_rf_chain = j.at("p_rf_chain");
  if (j.contains("dac_coeff_exp")) p.dac_coeff_exp = j.at("dac_coeff_exp");
  if (j.contains("dac_coeff_lin")) p.dac_coeff_lin = j.at("dac_coeff_lin");
  if (j.contains("p_fixed_bs")) p.p_fixed_bs = j.at("p_fixed_bs");
  if (j.contains("fronthaul_watts_per_bpshz"))
    p.fronthaul_watts_per_bpshz = j.at("fronthaul_watts_per_bpshz");
  if (j.contains("b_infinity_cap")) p.b_infinity_cap = j.at("b_infinity_cap");
}

inline void from_json(const nlohmann::json& j, PathLossModel& p) {
  detail::require_known_keys(j, {"pl0_db", "ref_distance_m", "exponent"},
                             "pathloss");
  if (j.contains("pl0_db")) p.pl0_db = j.at("pl0_db");
  if (j.contains("ref_distance_m")) p.ref_distance_m = j.at("ref_distance_m");
  if (j.contains("exponent")) p.exponent = j.at("exponent");
}

inline void from_json(const nlohmann::json& j, SystemConfig& c) {
  detail::require_known_keys(
      j,
      {"m", "k", "n_bs", "n_rf", "n_ue", "f_c", "w", "p", "n0", "isd",
       "paths_per_link", "b", "c", "mode", "rzf_alpha", "seed", "trials",
       "solver", "power_model", "pathloss"},
      "config");
  if (j.contains("m")) c.num_bs = j.at("m");
  if (j.contains("k")) c.num_users = j.at("k");
  if (j.contains("n_bs"))
    c.bs_array = detail::geometry_from_json(j.at("n_bs"), "n_bs");
  if (j.contains("n_rf")) c.num_rf_chains = j.at("n_rf");
  if (j.contains("n_ue"))
    c.ue_array = detail::geometry_from_json(j.at("n_ue"), "n_ue");
  if (j.contains("f_c")) c.carrier_hz = j.at("f_c");
  if (j.contains("w")) c.bandwidth_hz = j.at("w");
  if (j.contains("p")) c.max_bs_power_w = j.at("p");
  if (j.contains("n0")) c.noise_psd_w_per_hz = j.at("n0");
  if (j.contains("isd")) c.isd_m = j.at("isd");
  if (j.contains("paths_per_link")) c.paths_per_link = j.at("paths_per_link");
  if (j.contains("b"))
    c.dac_bits = detail::finite_or_inf_from_json<int>(j.at("b"), "b");
  if (j.contains("c"))
    c.fronthaul_capacity_bpshz =
        detail::finite_or_inf_from_json<double>(j.at("c"), "c");
  if (j.contains("mode")) c.mode = mode_from_string(j.at("mode"));
  if (j.contains("rzf_alpha")) c.rzf_alpha = j.at("rzf_alpha").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed");
  if (j.contains("trials")) c.trials = j.at("trials");
  if (j.contains("solver")) c.solver = j.at("solver").get<SolverSettings>();
  if (j.contains("power_model"))
    c.power_model = j.at("power_model").get<PowerModel>();
  if (j.contains("pathloss"))
    c.pathloss = j.at("pathloss").get<PathLossModel>();
}

/// Parses a JSON config file. Unknown keys are errors; absent keys keep
/// their defaults.
inline SystemConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config parse error in " + path + ": " + e.what());
  }
  return j.get<SystemConfig>();
}

}  // namespace cfmimo
