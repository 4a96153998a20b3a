#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cfmimo/config.hpp"
#include "cfmimo/errors.hpp"
#include "cfmimo/precode.hpp"
#include "cfmimo/quantize.hpp"

namespace cfmimo {

/// Max-min power allocation: per-user power coefficients, per-station
/// fronthaul compression noise standard deviations, and the achieved
/// common SQNR target.
struct Allocation {
  Eigen::VectorXd eta;
  Eigen::VectorXd sigma;
  double target = 0.0;
};

/// Snapshot of one alternating-optimization round.
struct AoIterate {
  double target = 0.0;
  double max_power = 0.0;
  double max_fronthaul = 0.0;
  Eigen::VectorXd sigma;
};

struct AoResult {
  Allocation allocation;
  std::vector<AoIterate> trace;
};

/// Precomputed linear coefficients of the SQNR, power, and fronthaul-rate
/// evaluators for one (effective channel, precoder, RF stage, DAC) tuple.
/// All solver queries run off this data.
struct MaxminProblem {
  int num_users = 0;
  int num_bs = 0;
  int num_rf_chains = 0;
  double rho = 0.0;
  double awgn_var = 0.0;
  double max_power = 0.0;
  std::optional<double> fronthaul_capacity{};
  Eigen::MatrixXd quant_coupling;      // K x K, u_{k,i} = sum_j |h_k[j]|^2 |F[j,i]|^2
  Eigen::MatrixXd link_gain;           // K x M, ||h_{k,m}||^2
  Eigen::MatrixXd power_coeff;         // M x K, d P_m / d eta_i at sigma = 0
  Eigen::VectorXd power_sigma_coeff;   // M, d P_m / d sigma_m^2 = (1-rho) tr(W W^H)
  std::vector<Eigen::MatrixXcd> precoder_blocks;
};

inline MaxminProblem build_maxmin_problem(const EffectiveChannel& effective,
                                          const PrecoderSet& precoders,
                                          const RfChains& rf,
                                          const QuantizationModel& quant,
                                          double max_power,
                                          std::optional<double> fronthaul_capacity) {
  MaxminProblem p;
  p.num_users = effective.num_users();
  p.num_bs = effective.num_bs();
  p.num_rf_chains = effective.num_rf_chains;
  p.rho = quant.rho;
  p.awgn_var = effective.awgn_var;
  p.max_power = max_power;
  p.fronthaul_capacity = fronthaul_capacity;
  p.precoder_blocks = precoders.blocks;

  const Eigen::MatrixXd h_abs2 = effective.stacked.cwiseAbs2();
  p.quant_coupling = h_abs2 * precoders.full.cwiseAbs2();
  p.link_gain.resize(p.num_users, p.num_bs);
  for (int m = 0; m < p.num_bs; ++m)
    p.link_gain.col(m) =
        h_abs2.middleCols(m * p.num_rf_chains, p.num_rf_chains).rowwise().sum();

  const double rho = p.rho;
  p.power_coeff.resize(p.num_bs, p.num_users);
  p.power_sigma_coeff.resize(p.num_bs);
  for (int m = 0; m < p.num_bs; ++m) {
    const Eigen::MatrixXcd combined = rf.bs_precoders[m] * precoders.blocks[m];
    const Eigen::VectorXd beamformed =
        combined.cwiseAbs2().colwise().sum().transpose();
    const Eigen::VectorXd rf_col_power =
        rf.bs_precoders[m].cwiseAbs2().colwise().sum().transpose();
    const Eigen::VectorXd quantized =
        precoders.blocks[m].cwiseAbs2().transpose() * rf_col_power;
    p.power_coeff.row(m) = ((1.0 - rho) * (1.0 - rho) * beamformed +
                            rho * (1.0 - rho) * quantized)
                               .transpose();
    p.power_sigma_coeff(m) = (1.0 - rho) * rf.bs_precoders[m].squaredNorm();
  }
  return p;
}

/// SQNR of every user at the given allocation:
/// (1-rho)^2 eta_k / (rho(1-rho) sum_i u_{k,i} eta_i
///                    + (1-rho) sum_m sigma_m^2 ||h_{k,m}||^2 + awgn_var).
inline Eigen::VectorXd sqnr_all(const Eigen::VectorXd& eta,
                                const Eigen::VectorXd& sigma,
                                const MaxminProblem& problem) {
  if ((eta.array() < 0.0).any() || (sigma.array() < 0.0).any())
    throw DomainError("eta and sigma must be non-negative");
  const double rho = problem.rho;
  const Eigen::VectorXd sigma2 = sigma.cwiseAbs2();
  const Eigen::VectorXd denom = rho * (1.0 - rho) * (problem.quant_coupling * eta).array() +
                                (1.0 - rho) * (problem.link_gain * sigma2).array() +
                                problem.awgn_var;
  return (1.0 - rho) * (1.0 - rho) * eta.array() / denom.array();
}

inline Eigen::VectorXd sqnr_all(const Eigen::VectorXd& eta,
                                const Eigen::VectorXd& sigma,
                                const EffectiveChannel& effective,
                                const PrecoderSet& precoders,
                                const RfChains& rf,
                                const QuantizationModel& quant) {
  return sqnr_all(eta, sigma,
                  build_maxmin_problem(effective, precoders, rf, quant, 0.0, {}));
}

/// Transmit power of station m at the given allocation (three-term form).
inline double bs_power(const Eigen::VectorXd& eta, double sigma_m, int m,
                       const PrecoderSet& precoders, const RfChains& rf,
                       const QuantizationModel& quant) {
  return bs_transmit_power(rf.bs_precoders[m], precoders.blocks[m], eta,
                           sigma_m, quant.rho);
}

inline double bs_power(const Eigen::VectorXd& eta, double sigma_m, int m,
                       const MaxminProblem& problem) {
  return problem.power_coeff.row(m).dot(eta) +
         sigma_m * sigma_m * problem.power_sigma_coeff(m);
}

namespace detail {

inline Eigen::VectorXd signal_eigenvalues(const Eigen::MatrixXcd& precoder_block,
                                          const Eigen::VectorXd& eta) {
  const Eigen::MatrixXcd scaled =
      precoder_block *
      eta.cwiseSqrt().asDiagonal().toDenseMatrix().cast<std::complex<double>>();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(scaled * scaled.adjoint());
  return eig.eigenvalues().cwiseMax(0.0);
}

/// Treats the per-station signal covariance as zero when its largest
/// eigenvalue vanishes relative to the natural scale of F_m and eta.
inline bool signal_is_zero(const Eigen::VectorXd& eigenvalues,
                           const Eigen::MatrixXcd& precoder_block,
                           const Eigen::VectorXd& eta) {
  const double scale =
      precoder_block.squaredNorm() * std::max(eta.maxCoeff(), 0.0);
  return !(eigenvalues.maxCoeff() > 1e-15 * scale);
}

}  // namespace detail

/// Fronthaul rate consumed by station m:
/// log2 det(I + F_m eta F_m^H / sigma_m^2), evaluated over eigenvalues.
/// A noiseless link (sigma_m = 0) carrying a nonzero signal has infinite
/// rate and is an error; with a zero signal the rate is zero.
inline double fronthaul_rate(const Eigen::VectorXd& eta, double sigma_m, int m,
                             const PrecoderSet& precoders) {
  if ((eta.array() < 0.0).any())
    throw DomainError("eta entries must be non-negative");
  const Eigen::VectorXd lambda =
      detail::signal_eigenvalues(precoders.blocks[m], eta);
  if (detail::signal_is_zero(lambda, precoders.blocks[m], eta)) return 0.0;
  if (!(sigma_m > 0.0))
    throw InfiniteRateError("station " + std::to_string(m) +
                            " carries a nonzero signal over a noiseless link");
  const double inv_var = 1.0 / (sigma_m * sigma_m);
  double rate = 0.0;
  for (Eigen::Index i = 0; i < lambda.size(); ++i)
    rate += std::log1p(lambda(i) * inv_var) / std::numbers::ln2;
  return rate;
}

enum class InfeasibilityReason {
  None,
  SingularSystem,
  NegativeEta,
  PowerExceeded,
  CapacityExceeded,
};

inline std::string to_string(InfeasibilityReason reason) {
  switch (reason) {
    case InfeasibilityReason::None: return "feasible";
    case InfeasibilityReason::SingularSystem: return "singular equality system";
    case InfeasibilityReason::NegativeEta: return "negative power coefficient";
    case InfeasibilityReason::PowerExceeded: return "transmit power exceeded";
    case InfeasibilityReason::CapacityExceeded: return "fronthaul capacity exceeded";
  }
  return "unknown";
}

struct EtaSolve {
  bool feasible = false;
  InfeasibilityReason reason = InfeasibilityReason::None;
  int offending_index = -1;
  Eigen::VectorXd eta;
};

// Feasibility slacks absorbing solver round-off: the sigma subproblem puts
// C_m at the capacity within ~1e-13, and power checks tolerate 1 ppt of
// machine noise.
inline constexpr double kPowerSlack = 1e-12;      // relative on P
inline constexpr double kCapacitySlack = 1e-9;    // absolute on C (bps/Hz)

/// Solves the K x K linear equality system SQNR_k(eta, sigma) = t and runs
/// the feasibility checks: non-negative solution, per-station power budget,
/// and per-station fronthaul capacity. A singular system or a negative
/// component is reported as "t too large".
inline EtaSolve solve_eta_for_target(double t, const Eigen::VectorXd& sigma,
                                     const MaxminProblem& problem) {
  EtaSolve out;
  const double rho = problem.rho;
  const int num_users = problem.num_users;
  const Eigen::VectorXd sigma2 = sigma.cwiseAbs2();

  if (t == 0.0) {
    out.eta = Eigen::VectorXd::Zero(num_users);
  } else {
    Eigen::MatrixXd system = -t * rho * (1.0 - rho) * problem.quant_coupling;
    system.diagonal().array() += (1.0 - rho) * (1.0 - rho);
    const Eigen::VectorXd rhs =
        t * ((1.0 - rho) * (problem.link_gain * sigma2).array() + problem.awgn_var);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
    out.eta = lu.solve(rhs);
    const double residual = (system * out.eta - rhs).norm();
    if (!out.eta.allFinite() || residual > 1e-8 * (rhs.norm() + 1.0)) {
      out.reason = InfeasibilityReason::SingularSystem;
      return out;
    }
  }

  for (int k = 0; k < num_users; ++k) {
    if (out.eta(k) < 0.0) {
      out.reason = InfeasibilityReason::NegativeEta;
      out.offending_index = k;
      return out;
    }
  }
  for (int m = 0; m < problem.num_bs; ++m) {
    if (bs_power(out.eta, sigma(m), m, problem) >
        problem.max_power * (1.0 + kPowerSlack)) {
      out.reason = InfeasibilityReason::PowerExceeded;
      out.offending_index = m;
      return out;
    }
  }
  if (problem.fronthaul_capacity) {
    for (int m = 0; m < problem.num_bs; ++m) {
      const Eigen::VectorXd lambda =
          detail::signal_eigenvalues(problem.precoder_blocks[m], out.eta);
      if (detail::signal_is_zero(lambda, problem.precoder_blocks[m], out.eta))
        continue;
      double used = std::numeric_limits<double>::infinity();
      if (sigma(m) > 0.0) {
        const double inv_var = 1.0 / (sigma(m) * sigma(m));
        used = 0.0;
        for (Eigen::Index i = 0; i < lambda.size(); ++i)
          used += std::log1p(lambda(i) * inv_var) / std::numbers::ln2;
      }
      if (used > *problem.fronthaul_capacity + kCapacitySlack) {
        out.reason = InfeasibilityReason::CapacityExceeded;
        out.offending_index = m;
        return out;
      }
    }
  }
  out.feasible = true;
  return out;
}

struct BisectionResult {
  Eigen::VectorXd eta;
  double target = 0.0;
};

/// Max-min SQNR over eta at fixed sigma by bisection on the target t. The
/// upper bracket is found by doubling from max(1, 2 * warm start) until
/// infeasible; the interval then shrinks to the relative tolerance. Returns
/// the last feasible pair. `warm_start` must be a known-feasible target (or
/// 0); it keeps successive AO rounds monotone.
inline BisectionResult bisection_eta(const Eigen::VectorXd& sigma,
                                     const MaxminProblem& problem,
                                     const SolverSettings& settings,
                                     double warm_start = 0.0) {
  EtaSolve at_zero = solve_eta_for_target(0.0, sigma, problem);
  if (!at_zero.feasible)
    throw InitializationError(
        "t = 0 infeasible: " + to_string(at_zero.reason) +
        " (compression noise too strong for the power budget)");
  double t_lo = 0.0;
  Eigen::VectorXd eta_lo = std::move(at_zero.eta);

  if (warm_start > 0.0) {
    EtaSolve warm = solve_eta_for_target(warm_start, sigma, problem);
    if (warm.feasible) {
      t_lo = warm_start;
      eta_lo = std::move(warm.eta);
    }
  }

  double t_hi = std::max(1.0, 2.0 * t_lo);
  bool bracketed = false;
  for (int i = 0; i < 60; ++i) {
    EtaSolve probe = solve_eta_for_target(t_hi, sigma, problem);
    if (!probe.feasible) {
      bracketed = true;
      break;
    }
    t_lo = t_hi;
    eta_lo = std::move(probe.eta);
    t_hi *= 2.0;
  }
  if (!bracketed)
    throw NumericError("SQNR target not bracketed after 60 doublings");

  for (int i = 0; i < settings.max_bisection_iters; ++i) {
    if (t_hi - t_lo <= settings.bisection_tol * std::max(1.0, t_lo)) break;
    const double mid = 0.5 * (t_lo + t_hi);
    EtaSolve probe = solve_eta_for_target(mid, sigma, problem);
    if (probe.feasible) {
      t_lo = mid;
      eta_lo = std::move(probe.eta);
    } else {
      t_hi = mid;
    }
  }
  return {std::move(eta_lo), t_lo};
}

/// Smallest compression noise that satisfies the fronthaul constraint with
/// equality: the root of sum_i log2(1 + lambda_i / s^2) = capacity. The
/// left side spans (0, inf) in s, so a safeguarded Newton iteration on a
/// doubling bracket always converges. Returns 0 for a zero signal.
inline double solve_sigma_for_capacity(const Eigen::MatrixXcd& precoder_block,
                                       const Eigen::VectorXd& eta,
                                       double capacity,
                                       const SolverSettings& settings) {
  if (!(capacity > 0.0)) throw DomainError("capacity must be > 0");
  if ((eta.array() < 0.0).any())
    throw DomainError("eta entries must be non-negative");
  const Eigen::VectorXd lambda = detail::signal_eigenvalues(precoder_block, eta);
  if (detail::signal_is_zero(lambda, precoder_block, eta)) return 0.0;

  auto rate_gap = [&](double s) {
    const double inv_var = 1.0 / (s * s);
    double rate = 0.0;
    for (Eigen::Index i = 0; i < lambda.size(); ++i)
      rate += std::log1p(lambda(i) * inv_var) / std::numbers::ln2;
    return rate - capacity;
  };
  auto rate_slope = [&](double s) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < lambda.size(); ++i)
      sum += lambda(i) / (s * s + lambda(i));
    return -2.0 / (s * std::numbers::ln2) * sum;
  };

  // Bracket [lo, hi] with gap(lo) >= 0 >= gap(hi).
  double lo = std::sqrt(lambda.maxCoeff()) *
              std::exp2(-capacity / (2.0 * lambda.size()));
  double hi = lo;
  int doublings = 0;
  while (rate_gap(lo) < 0.0) {
    lo /= 2.0;
    if (++doublings > 200)
      throw NumericError("sigma root not bracketed from below");
  }
  doublings = 0;
  while (rate_gap(hi) > 0.0) {
    hi *= 2.0;
    if (++doublings > 200)
      throw NumericError("sigma root not bracketed from above");
  }

  double s = 0.5 * (lo + hi);
  const double tol = std::min(settings.sigma_tol, 1e-13 * std::max(1.0, capacity));
  for (int i = 0; i < settings.max_root_iters; ++i) {
    const double gap = rate_gap(s);
    if (std::abs(gap) <= tol) break;
    (gap > 0.0 ? lo : hi) = s;
    const double newton = s - gap / rate_slope(s);
    s = (newton > lo && newton < hi) ? newton : 0.5 * (lo + hi);
  }
  return s;
}

/// Alternating optimization for the max-min allocation: bisection over eta
/// at fixed sigma, then per-station capacity-equality updates of sigma.
/// The target trace is non-decreasing and every sigma trace non-increasing;
/// iteration stops once the relative target improvement drops below ao_tol.
/// An infinite fronthaul capacity pins sigma to zero and reduces to a single
/// bisection.
inline AoResult ao_solve(const EffectiveChannel& effective,
                         const PrecoderSet& precoders, const RfChains& rf,
                         const QuantizationModel& quant, double max_power,
                         std::optional<double> fronthaul_capacity,
                         const SolverSettings& settings) {
  if (precoders.kind != PrecoderKind::CellfreeZf)
    throw ConfigError("max-min allocation expects the cell-free ZF precoder");
  const MaxminProblem problem = build_maxmin_problem(
      effective, precoders, rf, quant, max_power, fronthaul_capacity);
  const int num_bs = problem.num_bs;

  AoResult out;
  if (!fronthaul_capacity) {
    const Eigen::VectorXd sigma = Eigen::VectorXd::Zero(num_bs);
    BisectionResult best = bisection_eta(sigma, problem, settings);
    double max_p = 0.0;
    for (int m = 0; m < num_bs; ++m)
      max_p = std::max(max_p, bs_power(best.eta, 0.0, m, problem));
    out.trace.push_back({best.target, max_p,
                         std::numeric_limits<double>::infinity(), sigma});
    out.allocation = {std::move(best.eta), sigma, best.target};
    return out;
  }

  // Start point. The per-round alternation below keeps every monotonicity
  // guarantee but converges to whichever of the (many) fixed points its
  // start lies under: with an arbitrary loading it can settle with most of
  // the power budget unused, blocked by the capacity check at a stale
  // sigma. The warm start therefore bisects the target with a jointly
  // consistent probe: the same two subproblem solvers (eta equality system,
  // sigma at capacity equality) alternated until they settle.
  if (!(problem.power_coeff.rowwise().sum().maxCoeff() > 0.0))
    throw InitializationError("all-zero precoder: no power can be allocated");
  MaxminProblem power_only = problem;
  power_only.fronthaul_capacity.reset();
  auto settle = [&](double t, Eigen::VectorXd* eta_out,
                    Eigen::VectorXd* sigma_out) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(num_bs);
    for (int it = 0; it < 500; ++it) {
      EtaSolve solve = solve_eta_for_target(t, s, power_only);
      if (!solve.feasible) return false;
      bool settled = true;
      for (int m = 0; m < num_bs; ++m) {
        const double updated = solve_sigma_for_capacity(
            problem.precoder_blocks[m], solve.eta, *fronthaul_capacity,
            settings);
        if (std::abs(updated - s(m)) > 1e-10 * (updated + 1e-300))
          settled = false;
        s(m) = updated;
      }
      if (settled) {
        for (int m = 0; m < num_bs; ++m)
          if (bs_power(solve.eta, s(m), m, problem) >
              max_power * (1.0 + kPowerSlack))
            return false;
        if (eta_out) *eta_out = std::move(solve.eta);
        if (sigma_out) *sigma_out = std::move(s);
        return true;
      }
    }
    return false;
  };

  Eigen::VectorXd eta = Eigen::VectorXd::Zero(problem.num_users);
  Eigen::VectorXd sigma = Eigen::VectorXd::Zero(num_bs);
  double t_init = 0.0;
  {
    double t_hi = 1.0;
    for (int i = 0; i < 60 && settle(t_hi, &eta, &sigma); ++i) {
      t_init = t_hi;
      t_hi *= 2.0;
    }
    for (int i = 0; i < settings.max_bisection_iters &&
                    t_hi - t_init > settings.bisection_tol * std::max(1.0, t_init);
         ++i) {
      const double mid = 0.5 * (t_init + t_hi);
      (settle(mid, &eta, &sigma) ? t_init : t_hi) = mid;
    }
  }

  double previous_target = t_init;
  for (int round = 0; round < settings.max_ao_iters; ++round) {
    BisectionResult step = bisection_eta(sigma, problem, settings,
                                         previous_target);
    eta = std::move(step.eta);

    for (int m = 0; m < num_bs; ++m) {
      const double updated = solve_sigma_for_capacity(
          problem.precoder_blocks[m], eta, *fronthaul_capacity, settings);
      sigma(m) = std::min(updated, sigma(m));  // keep the trace monotone
    }

    double max_p = 0.0, max_c = 0.0;
    for (int m = 0; m < num_bs; ++m) {
      max_p = std::max(max_p, bs_power(eta, sigma(m), m, problem));
      max_c = std::max(max_c, fronthaul_rate(eta, sigma(m), m, precoders));
    }
    out.trace.push_back({step.target, max_p, max_c, sigma});

    const bool converged =
        round > 0 && step.target - previous_target <=
                         settings.ao_tol * std::max(1.0, previous_target);
    previous_target = step.target;
    if (converged) break;
  }

  out.allocation = {std::move(eta), std::move(sigma), previous_target};
  return out;
}

}  // namespace cfmimo
