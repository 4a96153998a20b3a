#pragma once

#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "cfmimo/channel.hpp"
#include "cfmimo/config.hpp"
#include "cfmimo/errors.hpp"
#include "cfmimo/quantize.hpp"

namespace cfmimo {

/// Baseband view of the RF-combined channel: per-link vectors
/// h_{k,m} = W_m^H H_{k,m}^H w_k, their K x (M*N_RF) row stack
/// [h_{k,1}^H ... h_{k,M}^H], and the post-combining AWGN variance.
struct EffectiveChannel {
  std::vector<std::vector<Eigen::VectorXcd>> per_link;  // [user][bs], N_RF each
  Eigen::MatrixXcd stacked;                             // K x (M*N_RF)
  double awgn_var = 0.0;
  int num_rf_chains = 0;

  int num_users() const { return static_cast<int>(stacked.rows()); }
  int num_bs() const { return static_cast<int>(per_link.empty() ? 0 : per_link.front().size()); }
};

enum class PrecoderKind { CellfreeZf, SmallcellMrt, SmallcellZf, SmallcellRzf };

inline std::string to_string(PrecoderKind kind) {
  switch (kind) {
    case PrecoderKind::CellfreeZf: return "cellfree-zf";
    case PrecoderKind::SmallcellMrt: return "smallcell-mrt";
    case PrecoderKind::SmallcellZf: return "smallcell-zf";
    case PrecoderKind::SmallcellRzf: return "smallcell-rzf";
  }
  throw ConfigError("unreachable precoder kind");
}

/// Stacked linear precoder F ((M*N_RF) x K) and its per-base-station blocks
/// F_m (N_RF x K); stacking the blocks reproduces `full` exactly.
struct PrecoderSet {
  Eigen::MatrixXcd full;
  std::vector<Eigen::MatrixXcd> blocks;
  PrecoderKind kind = PrecoderKind::CellfreeZf;
};

/// Applies the fixed RF stage to a channel realization.
inline EffectiveChannel effective_channel(const ChannelRealization& channel,
                                          const RfChains& rf,
                                          const SystemConfig& config) {
  EffectiveChannel out;
  const int num_rf = static_cast<int>(rf.bs_precoders.front().cols());
  out.num_rf_chains = num_rf;
  out.awgn_var = config.awgn_var();  // combiners have unit norm
  out.per_link.assign(channel.num_users, std::vector<Eigen::VectorXcd>(channel.num_bs));
  out.stacked.resize(channel.num_users, channel.num_bs * num_rf);
  for (int k = 0; k < channel.num_users; ++k) {
    for (int m = 0; m < channel.num_bs; ++m) {
      Eigen::VectorXcd h = rf.bs_precoders[m].adjoint() *
                           (channel.matrices[k][m].adjoint() * rf.ue_combiners[k]);
      out.stacked.row(k).segment(m * num_rf, num_rf) = h.adjoint();
      out.per_link[k][m] = std::move(h);
    }
  }
  return out;
}

namespace detail {

inline std::vector<Eigen::MatrixXcd> split_blocks(const Eigen::MatrixXcd& full,
                                                  int num_bs, int num_rf) {
  std::vector<Eigen::MatrixXcd> blocks;
  blocks.reserve(num_bs);
  for (int m = 0; m < num_bs; ++m)
    blocks.push_back(full.middleRows(m * num_rf, num_rf));
  return blocks;
}

}  // namespace detail

/// Cell-free zero-forcing precoder: the minimum-Frobenius-norm right inverse
/// F = H^H (H H^H)^{-1} of the stacked effective channel, with an SVD-based
/// pseudoinverse fallback if the Gram solve leaves a poor residual.
/// Requires full row rank; condition number beyond 1e12 is an error.
inline PrecoderSet zf_precoder(const EffectiveChannel& effective) {
  const Eigen::MatrixXcd& h = effective.stacked;
  if (h.rows() > h.cols())
    throw PrecoderSingularError("stacked channel has more users than RF dims");

  const Eigen::MatrixXcd gram = h * h.adjoint();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(gram);
  const double lambda_min = eig.eigenvalues().minCoeff();
  const double lambda_max = eig.eigenvalues().maxCoeff();
  if (!(lambda_min > 0.0) || lambda_max / lambda_min > 1e12)
    throw PrecoderSingularError(
        "effective channel Gram matrix is singular or ill-conditioned "
        "(condition number " +
        std::to_string(lambda_max / std::max(lambda_min, 0.0)) + ")");

  Eigen::MatrixXcd full = gram.ldlt().solve(h).adjoint();
  const double residual = (h * full - Eigen::MatrixXcd::Identity(h.rows(), h.rows())).norm();
  if (!(residual <= 1e-8)) {
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(h, Eigen::ComputeThinU | Eigen::ComputeThinV);
    full = svd.matrixV() *
           svd.singularValues().cwiseInverse().asDiagonal().toDenseMatrix().cast<std::complex<double>>() *
           svd.matrixU().adjoint();
    const double retry = (h * full - Eigen::MatrixXcd::Identity(h.rows(), h.rows())).norm();
    if (!(retry <= 1e-8))
      throw PrecoderSingularError("zero-forcing residual " + std::to_string(retry) +
                                  " exceeds 1e-8 after SVD fallback");
  }

  PrecoderSet out;
  out.kind = PrecoderKind::CellfreeZf;
  out.full = std::move(full);
  out.blocks = detail::split_blocks(out.full, effective.num_bs(), effective.num_rf_chains);
  return out;
}

/// Per-base-station baseline precoders on the locally served users:
/// MRT (conjugate match), ZF (right inverse), or RZF (ridge-regularized
/// inverse). Non-served users get zero columns.
inline PrecoderSet smallcell_precoders(const EffectiveChannel& effective,
                                       const Assignment& assignment,
                                       PrecoderKind kind,
                                       double regularization = 0.0) {
  if (kind == PrecoderKind::CellfreeZf)
    throw ConfigError("smallcell_precoders expects a small-cell kind");
  if (regularization < 0.0)
    throw DomainError("regularization must be non-negative");
  const int num_rf = effective.num_rf_chains;
  const int num_users = effective.num_users();
  const int num_bs = effective.num_bs();

  PrecoderSet out;
  out.kind = kind;
  out.blocks.reserve(num_bs);
  for (int m = 0; m < num_bs; ++m) {
    const auto& served = assignment.served_users[m];
    Eigen::MatrixXcd local(served.size(), num_rf);
    for (std::size_t i = 0; i < served.size(); ++i)
      local.row(i) = effective.stacked.row(served[i]).segment(m * num_rf, num_rf);

    Eigen::MatrixXcd local_precoder;  // N_RF x |served|
    switch (kind) {
      case PrecoderKind::SmallcellMrt:
        local_precoder = local.adjoint();
        break;
      case PrecoderKind::SmallcellZf: {
        const Eigen::MatrixXcd gram = local * local.adjoint();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(gram);
        const double lambda_min = eig.eigenvalues().minCoeff();
        const double lambda_max = eig.eigenvalues().maxCoeff();
        if (!(lambda_min > 0.0) || lambda_max / lambda_min > 1e12)
          throw PrecoderSingularError("station " + std::to_string(m) +
                                      ": local channel is rank-deficient for ZF");
        local_precoder = gram.ldlt().solve(local).adjoint();
        break;
      }
      case PrecoderKind::SmallcellRzf: {
        Eigen::MatrixXcd gram = local * local.adjoint();
        gram.diagonal().array() += regularization;
        local_precoder = gram.ldlt().solve(local).adjoint();
        break;
      }
      default:
        throw ConfigError("unreachable precoder kind");
    }

    Eigen::MatrixXcd block = Eigen::MatrixXcd::Zero(num_rf, num_users);
    for (std::size_t i = 0; i < served.size(); ++i)
      block.col(served[i]) = local_precoder.col(i);
    out.blocks.push_back(std::move(block));
  }

  out.full.resize(num_bs * num_rf, num_users);
  for (int m = 0; m < num_bs; ++m)
    out.full.middleRows(m * num_rf, num_rf) = out.blocks[m];
  return out;
}

/// Transmit power of one base station, Eq.-of-state for the power budget:
/// (1-rho)^2 tr(W F eta F^H W^H) + rho(1-rho) tr(W diag(F eta F^H) W^H)
/// + (1-rho) sigma_m^2 tr(W W^H).
inline double bs_transmit_power(const Eigen::MatrixXcd& rf_precoder,
                                const Eigen::MatrixXcd& precoder_block,
                                const Eigen::VectorXd& eta, double sigma_m,
                                double rho) {
  if ((eta.array() < 0.0).any())
    throw DomainError("eta entries must be non-negative");
  const Eigen::MatrixXcd combined = rf_precoder * precoder_block;
  const double beamformed = (combined.cwiseAbs2() * eta).sum();
  const Eigen::VectorXd signal_diag = precoder_block.cwiseAbs2() * eta;
  const Eigen::VectorXd rf_col_power =
      rf_precoder.cwiseAbs2().colwise().sum().transpose();
  const double quantized = signal_diag.dot(rf_col_power);
  const double compression = sigma_m * sigma_m * rf_precoder.squaredNorm();
  return (1.0 - rho) * (1.0 - rho) * beamformed +
         rho * (1.0 - rho) * quantized + (1.0 - rho) * compression;
}

/// Generic worst-case-noise rate lower bounds for arbitrary precoders and
/// per-(station, user) power coefficients. For cell-free ZF with a common
/// eta_k this reduces to the dedicated SQNR evaluator of the max-min solver.
inline Eigen::VectorXd general_rate_bounds(const EffectiveChannel& effective,
                                           const PrecoderSet& precoders,
                                           const Eigen::MatrixXd& eta_mk,
                                           const Eigen::VectorXd& sigma,
                                           const QuantizationModel& quant) {
  const int num_users = effective.num_users();
  const int num_bs = effective.num_bs();
  const int num_rf = effective.num_rf_chains;
  if (eta_mk.rows() != num_bs || eta_mk.cols() != num_users)
    throw DomainError("eta must be M x K");
  if ((eta_mk.array() < 0.0).any())
    throw DomainError("eta entries must be non-negative");
  if (sigma.size() != num_bs || (sigma.array() < 0.0).any())
    throw DomainError("sigma must be length M and non-negative");

  const double rho = quant.rho;
  // Aggregate-noise covariance is block diagonal; accumulate its diagonal.
  Eigen::VectorXd noise_diag(num_bs * num_rf);
  for (int m = 0; m < num_bs; ++m) {
    const Eigen::MatrixXcd block_cov = aggregate_noise_cov(
        precoders.blocks[m], eta_mk.row(m).transpose(), sigma(m), rho);
    noise_diag.segment(m * num_rf, num_rf) = block_cov.diagonal().real();
  }

  // Per-user combining gains g_{k,i} = sum_m h_{k,m}^H f_{m,i} sqrt(eta_{m,i}).
  Eigen::MatrixXcd gains = Eigen::MatrixXcd::Zero(num_users, num_users);
  for (int m = 0; m < num_bs; ++m) {
    const Eigen::MatrixXcd rows = effective.stacked.middleCols(m * num_rf, num_rf);
    gains.noalias() +=
        rows * (precoders.blocks[m] *
                eta_mk.row(m).transpose().cwiseSqrt().asDiagonal().toDenseMatrix().cast<std::complex<double>>());
  }

  const double scale = (1.0 - rho) * (1.0 - rho);
  Eigen::VectorXd rates(num_users);
  for (int k = 0; k < num_users; ++k) {
    const double quant_noise =
        effective.stacked.row(k).cwiseAbs2().dot(noise_diag.transpose());
    double interference = 0.0;
    for (int i = 0; i < num_users; ++i)
      if (i != k) interference += scale * std::norm(gains(k, i));
    const double desired = scale * std::norm(gains(k, k));
    const double sinqr =
        desired / (interference + quant_noise + effective.awgn_var);
    rates(k) = rate_lower_bound(sinqr);
  }
  return rates;
}

/// Full-power scaling of small-cell baselines: per base station a common
/// power coefficient over its served users such that the transmit power
/// equals the budget exactly (the power is linear in the common
/// coefficient). Served users are the nonzero precoder columns.
inline Eigen::MatrixXd smallcell_full_power_scaling(const PrecoderSet& precoders,
                                                    const RfChains& rf,
                                                    const QuantizationModel& quant,
                                                    double max_power) {
  if (precoders.kind == PrecoderKind::CellfreeZf)
    throw ConfigError("full-power scaling applies to small-cell precoders");
  const int num_bs = static_cast<int>(precoders.blocks.size());
  const int num_users = static_cast<int>(precoders.full.cols());
  Eigen::MatrixXd eta_mk = Eigen::MatrixXd::Zero(num_bs, num_users);
  for (int m = 0; m < num_bs; ++m) {
    Eigen::VectorXd served_mask(num_users);
    for (int i = 0; i < num_users; ++i)
      served_mask(i) = precoders.blocks[m].col(i).norm() > 0.0 ? 1.0 : 0.0;
    const double unit_power = bs_transmit_power(rf.bs_precoders[m],
                                                precoders.blocks[m],
                                                served_mask, 0.0, quant.rho);
    if (!(unit_power > 0.0))
      throw DegenerateChannelError("station " + std::to_string(m) +
                                   " has an all-zero precoder");
    eta_mk.row(m) = (max_power / unit_power) * served_mask.transpose();
  }
  return eta_mk;
}

}  // namespace cfmimo
