#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cfmimo/channel.hpp"
#include "cfmimo/config.hpp"
#include "cfmimo/errors.hpp"
#include "cfmimo/maxmin.hpp"
#include "cfmimo/precode.hpp"
#include "cfmimo/quantize.hpp"
#include "cfmimo/rng.hpp"

#ifndef CFMIMO_VERSION_STRING
#define CFMIMO_VERSION_STRING "unversioned"
#endif

namespace cfmimo {

/// Outcome of one Monte-Carlo trial. Flagged trials carry the failure
/// reason instead of metrics.
struct TrialMetrics {
  int trial_index = 0;
  bool flagged = false;
  std::string flag_reason;
  Eigen::VectorXd rates;           // per user, bps/Hz
  Eigen::VectorXd bs_power;        // per station, W
  Eigen::VectorXd fronthaul_used;  // per station, bps/Hz (0 for small cells)
  double total_consumption = 0.0;  // W
  double ee_per_user = 0.0;        // bits/Joule
  std::vector<AoIterate> solver_trace;
};

struct RunResult {
  SystemConfig config;  // resolved
  std::vector<TrialMetrics> trials;
  long rf_rank_padding_events = 0;
  bool b_infinity_capped = false;

  int flagged_count() const {
    return static_cast<int>(
        std::count_if(trials.begin(), trials.end(),
                      [](const TrialMetrics& t) { return t.flagged; }));
  }
};

/// Sorted empirical CDF: value[i] has cumulative fraction cdf[i] = (i+1)/n.
struct CdfTable {
  std::vector<double> value;
  std::vector<double> cdf;
};

inline CdfTable aggregate_cdf(std::vector<double> samples) {
  if (samples.empty()) throw DomainError("empty sample set has no CDF");
  std::sort(samples.begin(), samples.end());
  CdfTable table;
  table.cdf.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    table.cdf[i] = static_cast<double>(i + 1) / samples.size();
  table.value = std::move(samples);
  return table;
}

/// Pooled per-user rates of all unflagged trials.
inline std::vector<double> pooled_rates(const RunResult& run) {
  std::vector<double> rates;
  for (const auto& trial : run.trials) {
    if (trial.flagged) continue;
    rates.insert(rates.end(), trial.rates.begin(), trial.rates.end());
  }
  return rates;
}

inline double median(std::vector<double> values) {
  if (values.empty()) throw DomainError("median of empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2]
                    : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

/// Fills total_consumption and ee_per_user of a trial:
/// consumption per station = PA (radiated / efficiency) + RF chains with a
/// DAC pair each + fixed part + fronthaul transport; the per-user energy
/// efficiency is W * sum(rates) / (K * consumption) in bits/Joule.
/// Returns true when an infinite DAC resolution was evaluated at the
/// configured b_infinity_cap.
inline bool energy_efficiency(TrialMetrics& metrics, const SystemConfig& config) {
  const PowerModel& pm = config.power_model;
  const bool capped = config.infinite_bits();
  const int bits = capped ? pm.b_infinity_cap : *config.dac_bits;
  const double dac_pair =
      2.0 * (pm.dac_coeff_exp * std::exp2(bits) + pm.dac_coeff_lin * bits);
  double total = 0.0;
  for (Eigen::Index m = 0; m < metrics.bs_power.size(); ++m) {
    total += metrics.bs_power(m) / pm.pa_efficiency +
             config.num_rf_chains * (pm.p_rf_chain + dac_pair) + pm.p_fixed_bs +
             pm.fronthaul_watts_per_bpshz * metrics.fronthaul_used(m);
  }
  if (!(total > 0.0)) throw DomainError("zero power consumption");
  metrics.total_consumption = total;
  metrics.ee_per_user = std::isinf(total)
                            ? 0.0
                            : config.bandwidth_hz * metrics.rates.sum() /
                                  (config.num_users * total);
  return capped;
}

/// Run-level energy efficiency: mean of the per-trial figures over
/// unflagged trials.
inline double run_energy_efficiency(const RunResult& run) {
  double sum = 0.0;
  int count = 0;
  for (const auto& trial : run.trials) {
    if (trial.flagged) continue;
    sum += trial.ee_per_user;
    ++count;
  }
  if (count == 0) throw DomainError("no unflagged trials");
  return sum / count;
}

namespace detail {

inline PrecoderKind precoder_kind(Mode mode) {
  switch (mode) {
    case Mode::Cellfree: return PrecoderKind::CellfreeZf;
    case Mode::SmallcellMrt: return PrecoderKind::SmallcellMrt;
    case Mode::SmallcellZf: return PrecoderKind::SmallcellZf;
    case Mode::SmallcellRzf: return PrecoderKind::SmallcellRzf;
  }
  throw ConfigError("unreachable mode");
}

}  // namespace detail

/// Runs all Monte-Carlo trials of a config. Each trial draws its channel
/// from an independent sub-stream of the run seed, so results do not depend
/// on execution order. Trials that fail in the solver are flagged with the
/// reason; the run fails if more than 5% of trials flag.
inline RunResult run_trials(const SystemConfig& raw_config) {
  RunResult run;
  run.config = raw_config.resolved();
  const SystemConfig& config = run.config;
  const QuantizationModel quant = QuantizationModel::from_bits(config.dac_bits);

  run.trials.reserve(config.trials);
  for (int trial = 0; trial < config.trials; ++trial) {
    TrialMetrics metrics;
    metrics.trial_index = trial;
    try {
      Rng rng(substream_seed(config.seed, static_cast<std::uint64_t>(trial)));
      const ChannelRealization channel = draw_channel(config, rng);
      const Assignment assignment = nearest_bs_assignment(
          channel.bs_positions, channel.user_positions, config.users_per_bs());
      RfChains rf;
      rf.ue_combiners = design_combiners(channel, assignment);
      std::vector<std::string> padding;
      rf.bs_precoders = design_rf_precoders(channel, rf.ue_combiners, assignment,
                                            config.num_rf_chains, &padding);
      run.rf_rank_padding_events += static_cast<long>(padding.size());
      const EffectiveChannel effective = effective_channel(channel, rf, config);

      metrics.bs_power.resize(config.num_bs);
      metrics.fronthaul_used.resize(config.num_bs);
      if (config.mode == Mode::Cellfree) {
        const PrecoderSet precoders = zf_precoder(effective);
        AoResult solution = ao_solve(effective, precoders, rf, quant,
                                     config.max_bs_power_w,
                                     config.fronthaul_capacity_bpshz,
                                     config.solver);
        const Eigen::VectorXd& eta = solution.allocation.eta;
        const Eigen::VectorXd& sigma = solution.allocation.sigma;
        const Eigen::MatrixXd eta_mk =
            eta.transpose().replicate(config.num_bs, 1);
        metrics.rates = general_rate_bounds(effective, precoders, eta_mk,
                                            sigma, quant);
        for (int m = 0; m < config.num_bs; ++m) {
          metrics.bs_power(m) =
              bs_power(eta, sigma(m), m, precoders, rf, quant);
          metrics.fronthaul_used(m) =
              config.infinite_fronthaul()
                  ? std::numeric_limits<double>::infinity()
                  : fronthaul_rate(eta, sigma(m), m, precoders);
        }
        metrics.solver_trace = std::move(solution.trace);
      } else {
        const PrecoderSet precoders =
            smallcell_precoders(effective, assignment,
                                detail::precoder_kind(config.mode),
                                *config.rzf_alpha);
        const Eigen::MatrixXd eta_mk = smallcell_full_power_scaling(
            precoders, rf, quant, config.max_bs_power_w);
        const Eigen::VectorXd sigma = Eigen::VectorXd::Zero(config.num_bs);
        metrics.rates =
            general_rate_bounds(effective, precoders, eta_mk, sigma, quant);
        for (int m = 0; m < config.num_bs; ++m) {
          metrics.bs_power(m) = bs_transmit_power(
              rf.bs_precoders[m], precoders.blocks[m],
              eta_mk.row(m).transpose(), 0.0, quant.rho);
          metrics.fronthaul_used(m) = 0.0;  // no fronthaul constraint
        }
      }
      run.b_infinity_capped |= energy_efficiency(metrics, config);
    } catch (const Error& error) {
      metrics.flagged = true;
      metrics.flag_reason = error.what();
    }
    run.trials.push_back(std::move(metrics));
  }

  const int flagged = run.flagged_count();
  if (flagged * 20 > config.trials)  // more than 5%
    throw Error(std::to_string(flagged) + " of " +
                std::to_string(config.trials) +
                " trials flagged (first reason: " +
                [&] {
                  for (const auto& t : run.trials)
                    if (t.flagged) return t.flag_reason;
                  return std::string("none");
                }() +
                ")");
  return run;
}

enum class OutputFormat { Csv, Structured, Both };

inline OutputFormat output_format_from_string(const std::string& name) {
  if (name == "csv") return OutputFormat::Csv;
  if (name == "structured") return OutputFormat::Structured;
  if (name == "both") return OutputFormat::Both;
  throw ConfigError("unknown output format '" + name +
                    "' (expected csv or structured)");
}

namespace detail {

inline std::string format_number(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.12g", value);
  return buffer;
}

inline std::string bits_field(const SystemConfig& config) {
  return config.dac_bits ? std::to_string(*config.dac_bits) : "inf";
}

inline std::string fronthaul_field(const SystemConfig& config) {
  return config.fronthaul_capacity_bpshz
             ? format_number(*config.fronthaul_capacity_bpshz)
             : "inf";
}

inline void write_file(const std::filesystem::path& path,
                       const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << contents;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace detail

/// Writes the run manifest (resolved config + version), the pooled rate CDF
/// table, and the energy-efficiency summary into `out_dir`. CSV files carry
/// 12 significant digits; the structured (JSON) forms round-trip exactly.
inline void emit_results(const RunResult& run, const std::string& out_dir,
                         OutputFormat format = OutputFormat::Both) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " +
                        ec.message());
  const fs::path dir(out_dir);

  const CdfTable cdf = aggregate_cdf(pooled_rates(run));
  const double ee = run_energy_efficiency(run);
  const std::string mode = to_string(run.config.mode);
  const std::string bits = detail::bits_field(run.config);
  const std::string fronthaul = detail::fronthaul_field(run.config);

  nlohmann::json manifest{
      {"version", CFMIMO_VERSION_STRING},
      {"config", run.config},
      {"trials_flagged", run.flagged_count()},
      {"rf_rank_padding_events", run.rf_rank_padding_events},
      {"b_infinity_capped", run.b_infinity_capped},
      {"ee_definition",
       "bandwidth * sum(user rates) / (num_users * total consumption), "
       "averaged over unflagged trials"},
  };
  detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  if (format == OutputFormat::Csv || format == OutputFormat::Both) {
    std::string csv = "mode,bits,fronthaul_bpshz,rate_bpshz,cdf\n";
    for (std::size_t i = 0; i < cdf.value.size(); ++i)
      csv += mode + "," + bits + "," + fronthaul + "," +
             detail::format_number(cdf.value[i]) + "," +
             detail::format_number(cdf.cdf[i]) + "\n";
    detail::write_file(dir / "cdf.csv", csv);

    std::string ee_csv = "mode,bits,fronthaul_bpshz,ee_bits_per_joule\n";
    ee_csv += mode + "," + bits + "," + fronthaul + "," +
              detail::format_number(ee) + "\n";
    detail::write_file(dir / "ee.csv", ee_csv);
  }

  if (format == OutputFormat::Structured || format == OutputFormat::Both) {
    nlohmann::json cdf_json{{"mode", mode},
                            {"bits", bits},
                            {"fronthaul_bpshz", fronthaul},
                            {"rate_bpshz", cdf.value},
                            {"cdf", cdf.cdf}};
    detail::write_file(dir / "cdf.json", cdf_json.dump(2) + "\n");
    nlohmann::json ee_json{{"mode", mode},
                           {"bits", bits},
                           {"fronthaul_bpshz", fronthaul},
                           {"ee_bits_per_joule", ee}};
    detail::write_file(dir / "ee.json", ee_json.dump(2) + "\n");
  }
}

}  // namespace cfmimo
