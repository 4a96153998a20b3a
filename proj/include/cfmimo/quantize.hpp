#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "cfmimo/errors.hpp"

namespace cfmimo {

namespace detail {

inline double gauss_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double gauss_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

inline double gauss_quantile(double q) {
  double lo = -12.0, hi = 12.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (gauss_cdf(mid) < q ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Mean squared error of the optimal (Lloyd-Max) MMSE scalar quantizer with
/// `levels` representation points for a zero-mean unit-variance Gaussian.
///
/// Solves the stationarity system (thresholds at level midpoints, levels at
/// cell centroids) by a damped Newton iteration on the level vector; plain
/// Lloyd iterations converge too slowly past a few bits.
inline double lloyd_max_mmse_distortion(int levels) {
  if (levels < 2) throw InvalidResolutionError("quantizer needs >= 2 levels");
  const int n = levels;
  std::vector<double> y(n), centroid(n), prob(n);
  for (int i = 0; i < n; ++i)
    y[i] = detail::gauss_quantile((i + 0.5) / n);

  // Cell i spans thresholds T[i]..T[i+1]; T[0] = -inf, T[n] = +inf.
  std::vector<double> thr(n + 1), pdf_thr(n + 1);
  auto evaluate = [&](const std::vector<double>& lv) {
    thr[0] = -std::numeric_limits<double>::infinity();
    thr[n] = std::numeric_limits<double>::infinity();
    pdf_thr[0] = pdf_thr[n] = 0.0;
    for (int j = 1; j < n; ++j) {
      thr[j] = 0.5 * (lv[j - 1] + lv[j]);
      pdf_thr[j] = detail::gauss_pdf(thr[j]);
    }
    double residual = 0.0;
    for (int i = 0; i < n; ++i) {
      const double c_hi = (i + 1 < n) ? detail::gauss_cdf(thr[i + 1]) : 1.0;
      const double c_lo = (i > 0) ? detail::gauss_cdf(thr[i]) : 0.0;
      prob[i] = c_hi - c_lo;
      centroid[i] = (pdf_thr[i] - pdf_thr[i + 1]) / prob[i];
      residual = std::max(residual, std::abs(centroid[i] - lv[i]));
    }
    return residual;
  };

  double residual = evaluate(y);
  std::vector<double> lower(n), diag(n), upper(n), rhs(n), trial(n);
  bool stalled = false;
  for (int iter = 0; iter < 200 && residual > 1e-14 && !stalled; ++iter) {
    // Tridiagonal Jacobian of y - centroid(y).
    for (int i = 0; i < n; ++i) {
      double d_lo = 0.0, d_hi = 0.0;  // d centroid_i / d T[i], d T[i+1]
      if (i > 0) d_lo = pdf_thr[i] * (centroid[i] - thr[i]) / prob[i];
      if (i + 1 < n) d_hi = pdf_thr[i + 1] * (thr[i + 1] - centroid[i]) / prob[i];
      lower[i] = -0.5 * d_lo;
      diag[i] = 1.0 - 0.5 * (d_lo + d_hi);
      upper[i] = -0.5 * d_hi;
      rhs[i] = centroid[i] - y[i];
    }
    // Thomas solve.
    for (int i = 1; i < n; ++i) {
      const double w = lower[i] / diag[i - 1];
      diag[i] -= w * upper[i - 1];
      rhs[i] -= w * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for (int i = n - 2; i >= 0; --i)
      rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];

    // Damped step; near the optimum progress bottoms out at the accuracy of
    // erfc, which is convergence for the distortion (stationary there).
    double step = 1.0;
    for (int backtrack = 0; backtrack < 40; ++backtrack) {
      bool ordered = true;
      for (int i = 0; i < n; ++i) {
        trial[i] = y[i] + step * rhs[i];
        if (i > 0 && trial[i] <= trial[i - 1]) ordered = false;
      }
      const double trial_residual = ordered ? evaluate(trial) : residual + 1.0;
      if (trial_residual < residual) {
        y.swap(trial);
        residual = trial_residual;
        break;
      }
      step *= 0.5;
      if (backtrack == 39) stalled = true;
    }
  }
  if (residual > 1e-9)
    throw NumericError("Lloyd-Max iteration stalled at residual " +
                       std::to_string(residual));

  // One closing centroid update keeps the distortion identity
  // D = E[X^2] - E[q(X)^2] exact.
  evaluate(y);
  double second_moment = 0.0;
  for (int i = 0; i < n; ++i) second_moment += prob[i] * centroid[i] * centroid[i];
  return 1.0 - second_moment;
}

/// Distortion factor rho of a pair of B-bit DACs: the normalized MMSE of the
/// optimal 2^B-level quantizer on a unit-variance Gaussian. Exact Lloyd-Max
/// values for B <= 8 (computed once, cached); the pi*sqrt(3)/2 * 2^(-2B)
/// high-resolution approximation above that; 0 for infinite resolution.
inline double distortion_factor(std::optional<int> bits) {
  if (!bits) return 0.0;
  const int b = *bits;
  if (b < 1) throw InvalidResolutionError("DAC resolution must be >= 1 bit");
  if (b <= 8) {
    static const std::array<double, 8> table = [] {
      std::array<double, 8> t{};
      for (int i = 0; i < 8; ++i) t[i] = lloyd_max_mmse_distortion(1 << (i + 1));
      return t;
    }();
    return table[b - 1];
  }
  return std::numbers::pi * std::sqrt(3.0) / 2.0 * std::exp2(-2.0 * b);
}

/// B-bit DAC model: resolution (nullopt = infinite) and distortion factor.
struct QuantizationModel {
  std::optional<int> bits{};
  double rho = 0.0;

  static QuantizationModel from_bits(std::optional<int> bits) {
    return {bits, distortion_factor(bits)};
  }
};

/// Covariance of the aggregate noise (quantization plus scaled fronthaul
/// compression noise) at one base station:
/// rho(1-rho) diag(F eta F^H) + (1-rho) sigma_m^2 I. Always diagonal with
/// non-negative entries.
inline Eigen::MatrixXcd aggregate_noise_cov(const Eigen::MatrixXcd& precoder_block,
                                            const Eigen::VectorXd& eta,
                                            double sigma_m, double rho) {
  if (precoder_block.cols() != eta.size())
    throw DomainError("eta length must match precoder columns");
  if ((eta.array() < 0.0).any())
    throw DomainError("eta entries must be non-negative");
  if (sigma_m < 0.0) throw DomainError("sigma_m must be non-negative");
  if (rho < 0.0 || rho >= 1.0) throw DomainError("rho must lie in [0, 1)");
  const Eigen::VectorXd signal_diag =
      precoder_block.cwiseAbs2() * eta;  // diag(F eta F^H)
  const Eigen::VectorXd d = rho * (1.0 - rho) * signal_diag.array() +
                            (1.0 - rho) * sigma_m * sigma_m;
  return d.cast<std::complex<double>>().asDiagonal();
}

/// Block-diagonal stack of per-base-station noise covariances; the blocks
/// are independent across base stations, so all cross blocks are zero.
inline Eigen::MatrixXcd stacked_noise_cov(
    const std::vector<Eigen::MatrixXcd>& blocks) {
  if (blocks.empty()) throw DomainError("no covariance blocks given");
  const Eigen::Index n = blocks.front().rows();
  for (const auto& block : blocks)
    if (block.rows() != n || block.cols() != n)
      throw DomainError("covariance blocks must be square and equally sized");
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(n * blocks.size(), n * blocks.size());
  for (std::size_t m = 0; m < blocks.size(); ++m)
    out.block(n * m, n * m, n, n) = blocks[m];
  return out;
}

/// Worst-case-noise achievable rate lower bound log2(1 + SQNR) in bps/Hz.
inline double rate_lower_bound(double sqnr) {
  if (sqnr < 0.0) throw DomainError("SQNR must be non-negative");
  return std::log1p(sqnr) / std::numbers::ln2;
}

}  // namespace cfmimo
