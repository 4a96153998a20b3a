#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "cfmimo/config.hpp"
#include "cfmimo/errors.hpp"
#include "cfmimo/rng.hpp"

namespace cfmimo {

/// One propagation path: complex gain plus departure/arrival angle pairs.
/// Azimuths lie in [-pi, pi], elevations in [0, pi].
struct PathParams {
  std::complex<double> gain;
  double aoa_azimuth = 0.0;
  double aoa_elevation = 0.0;
  double aod_azimuth = 0.0;
  double aod_elevation = 0.0;
};

/// Multipath channel draw: per-link path parameters, assembled channel
/// matrices (N_UE x N_BS each), and the planar deployment behind them.
struct ChannelRealization {
  int num_users = 0;
  int num_bs = 0;
  std::vector<std::vector<std::vector<PathParams>>> paths;   // [user][bs]
  std::vector<std::vector<Eigen::MatrixXcd>> matrices;       // [user][bs]
  std::vector<Eigen::Vector2d> bs_positions;
  std::vector<Eigen::Vector2d> user_positions;
};

/// Fixed RF stage: per-base-station constant-modulus precoders W_m
/// (N_BS x N_RF, entries of modulus 1/sqrt(N_BS)) and per-user combiners w_k
/// (length N_UE, entries of modulus 1/sqrt(N_UE), hence unit norm).
struct RfChains {
  std::vector<Eigen::MatrixXcd> bs_precoders;
  std::vector<Eigen::VectorXcd> ue_combiners;
  std::vector<std::string> warnings;
};

/// User-to-base-station maps: geometric nearest (combiner design) and the
/// capacity-constrained serving sets of exactly K/M users per base station.
struct Assignment {
  std::vector<int> nearest_bs;
  std::vector<int> serving_bs;
  std::vector<std::vector<int>> served_users;
};

/// Steering vector of a uniform planar array. Element (p, q) with
/// p in [0, n_horizontal) and q in [0, n_vertical) has phase
/// 2*pi*spacing*(p*sin(elevation)*sin(azimuth) + q*cos(elevation)); the
/// output is flattened row-major over (q, p).
inline Eigen::VectorXcd upa_response(const ArrayGeometry& geometry,
                                     double azimuth, double elevation) {
  geometry.validate();
  Eigen::VectorXcd response(geometry.size());
  const double horizontal = std::sin(elevation) * std::sin(azimuth);
  const double vertical = std::cos(elevation);
  for (int q = 0; q < geometry.n_vertical; ++q) {
    for (int p = 0; p < geometry.n_horizontal; ++p) {
      const double phase =
          2.0 * std::numbers::pi * geometry.spacing * (p * horizontal + q * vertical);
      response(q * geometry.n_horizontal + p) = std::polar(1.0, phase);
    }
  }
  return response;
}

/// Base stations on a hexagonal-like grid (staggered rows) with the given
/// inter-site distance, centered so the first station sits at the origin
/// of its row/column cell.
inline std::vector<Eigen::Vector2d> bs_grid_positions(int num_bs, double isd) {
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(num_bs))));
  std::vector<Eigen::Vector2d> positions;
  positions.reserve(num_bs);
  const double row_pitch = isd * std::sqrt(3.0) / 2.0;
  for (int i = 0; i < num_bs; ++i) {
    const int row = i / cols;
    const int col = i % cols;
    const double x = (col + 0.5 * (row % 2)) * isd;
    positions.emplace_back(x, row * row_pitch);
  }
  return positions;
}

/// Draws a full multipath channel realization: stations on the grid, users
/// uniform over the deployment area, and per link L i.i.d. paths with
/// uniform angles and complex Gaussian gains scaled by log-distance path
/// loss. Fully determined by (config, rng state).
inline ChannelRealization draw_channel(const SystemConfig& config, Rng& rng) {
  config.validate();
  ChannelRealization out;
  out.num_users = config.num_users;
  out.num_bs = config.num_bs;
  out.bs_positions = bs_grid_positions(config.num_bs, config.isd_m);

  double min_x = 0.0, max_x = 0.0, min_y = 0.0, max_y = 0.0;
  for (const auto& pos : out.bs_positions) {
    min_x = std::min(min_x, pos.x());
    max_x = std::max(max_x, pos.x());
    min_y = std::min(min_y, pos.y());
    max_y = std::max(max_y, pos.y());
  }
  const double margin = config.isd_m / 2.0;
  out.user_positions.reserve(config.num_users);
  for (int k = 0; k < config.num_users; ++k) {
    const double x = rng.uniform(min_x - margin, max_x + margin);
    const double y = rng.uniform(min_y - margin, max_y + margin);
    out.user_positions.emplace_back(x, y);
  }

  const int num_paths = config.paths_per_link;
  out.paths.assign(config.num_users,
                   std::vector<std::vector<PathParams>>(config.num_bs));
  out.matrices.assign(config.num_users,
                      std::vector<Eigen::MatrixXcd>(config.num_bs));
  for (int k = 0; k < config.num_users; ++k) {
    for (int m = 0; m < config.num_bs; ++m) {
      const double distance =
          (out.user_positions[k] - out.bs_positions[m]).norm();
      const double loss_db = config.pathloss.loss_db(distance);
      const double gain_std =
          std::sqrt(std::pow(10.0, -loss_db / 10.0) / num_paths);
      auto& link_paths = out.paths[k][m];
      link_paths.reserve(num_paths);
      Eigen::MatrixXcd h =
          Eigen::MatrixXcd::Zero(config.ue_array.size(), config.bs_array.size());
      for (int l = 0; l < num_paths; ++l) {
        PathParams path;
        path.aoa_azimuth = rng.uniform(-std::numbers::pi, std::numbers::pi);
        path.aoa_elevation = rng.uniform(0.0, std::numbers::pi);
        path.aod_azimuth = rng.uniform(-std::numbers::pi, std::numbers::pi);
        path.aod_elevation = rng.uniform(0.0, std::numbers::pi);
        path.gain = gain_std * rng.normal_complex();
        link_paths.push_back(path);
        const Eigen::VectorXcd at_ue =
            upa_response(config.ue_array, path.aoa_azimuth, path.aoa_elevation);
        const Eigen::VectorXcd at_bs =
            upa_response(config.bs_array, path.aod_azimuth, path.aod_elevation);
        h.noalias() += path.gain * at_ue * at_bs.adjoint();
      }
      out.matrices[k][m] = std::move(h);
    }
  }
  return out;
}

/// Maps each user to its geometrically nearest base station, and builds
/// capacity-constrained serving sets of exactly `users_per_bs` users each:
/// users are visited in order of distance to their nearest station and
/// greedily take the closest station with a free slot.
inline Assignment nearest_bs_assignment(
    const std::vector<Eigen::Vector2d>& bs_positions,
    const std::vector<Eigen::Vector2d>& user_positions, int users_per_bs) {
  const int num_bs = static_cast<int>(bs_positions.size());
  const int num_users = static_cast<int>(user_positions.size());
  if (num_bs < 1 || num_users < 1)
    throw ConfigError("assignment needs at least one station and one user");
  if (num_users != num_bs * users_per_bs)
    throw ConfigError("user count must equal stations * users_per_bs");

  Assignment out;
  out.nearest_bs.resize(num_users);
  out.serving_bs.assign(num_users, -1);
  out.served_users.resize(num_bs);

  std::vector<std::vector<double>> dist(num_users, std::vector<double>(num_bs));
  for (int k = 0; k < num_users; ++k) {
    for (int m = 0; m < num_bs; ++m)
      dist[k][m] = (user_positions[k] - bs_positions[m]).norm();
    out.nearest_bs[k] = static_cast<int>(
        std::min_element(dist[k].begin(), dist[k].end()) - dist[k].begin());
  }

  std::vector<int> order(num_users);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dist[a][out.nearest_bs[a]] < dist[b][out.nearest_bs[b]];
  });

  std::vector<int> capacity(num_bs, users_per_bs);
  for (const int k : order) {
    std::vector<int> by_distance(num_bs);
    std::iota(by_distance.begin(), by_distance.end(), 0);
    std::stable_sort(by_distance.begin(), by_distance.end(),
                     [&](int a, int b) { return dist[k][a] < dist[k][b]; });
    for (const int m : by_distance) {
      if (capacity[m] > 0) {
        --capacity[m];
        out.serving_bs[k] = m;
        out.served_users[m].push_back(k);
        break;
      }
    }
  }
  for (auto& users : out.served_users) std::sort(users.begin(), users.end());
  return out;
}

/// Entrywise projection onto the constant-modulus set: each entry keeps its
/// phase and takes modulus `target_modulus`; zero entries map to phase 0.
inline Eigen::MatrixXcd project_constant_modulus(const Eigen::MatrixXcd& x,
                                                 double target_modulus) {
  if (!(target_modulus > 0.0))
    throw DomainError("target modulus must be > 0");
  Eigen::MatrixXcd out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const std::complex<double> v = x(i, j);
      const double mag = std::abs(v);
      out(i, j) = (mag == 0.0) ? std::complex<double>(target_modulus, 0.0)
                               : target_modulus / mag * v;
    }
  }
  return out;
}

/// Nearest matrix with orthonormal columns in Frobenius norm: U V^H from the
/// compact SVD X = U S V^H.
inline Eigen::MatrixXcd project_semi_unitary(const Eigen::MatrixXcd& x) {
  if (x.rows() < x.cols())
    throw DomainError("semi-unitary projection needs rows >= cols");
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double tol = std::max(x.rows(), x.cols()) *
                     std::numeric_limits<double>::epsilon() * sv(0);
  if (!(sv(sv.size() - 1) > tol))
    throw DegenerateProjectionError(
        "rank-deficient input to semi-unitary projection");
  return svd.matrixU() * svd.matrixV().adjoint();
}

/// Alternates constant-modulus and semi-unitary projections from a
/// semi-unitary start until successive semi-unitary iterates move by at most
/// `tol` in Frobenius norm. Returns the last constant-modulus iterate, so
/// the result satisfies the modulus constraint exactly. When `distances` is
/// given, it receives the per-iteration set distance for convergence checks.
inline Eigen::MatrixXcd alternating_projection(
    const Eigen::MatrixXcd& x0, int max_iters = 200, double tol = 1e-8,
    double target_modulus = -1.0, std::vector<double>* distances = nullptr) {
  if (target_modulus <= 0.0)
    target_modulus = 1.0 / std::sqrt(static_cast<double>(x0.rows()));
  Eigen::MatrixXcd x = x0;
  for (int iter = 0; iter < max_iters; ++iter) {
    const Eigen::MatrixXcd cm = project_constant_modulus(x, target_modulus);
    if (distances) distances->push_back((cm - x).norm());
    const Eigen::MatrixXcd su = project_semi_unitary(cm);
    const double step = (su - x).norm();
    x = su;
    if (step <= tol) return cm;
  }
  return project_constant_modulus(x, target_modulus);
}

namespace detail {

/// Rotates a vector by a unit phase so its largest-modulus entry (first such
/// entry on ties) is real and positive. SVD factors are only defined up to
/// phase; this pins them for reproducible designs.
inline Eigen::VectorXcd canonical_phase(const Eigen::VectorXcd& v) {
  Eigen::Index pivot = 0;
  double best = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double mag = std::abs(v(i));
    if (mag > best * (1.0 + 1e-12)) {
      best = mag;
      pivot = i;
    }
  }
  if (best == 0.0) return v;
  return v * (std::conj(v(pivot)) / best);
}

}  // namespace detail

/// RF combiner design: for each user, the dominant left singular vector of
/// the channel to its nearest base station, pushed to constant modulus
/// 1/sqrt(N_UE) by alternating projection. Every returned combiner has unit
/// norm.
inline std::vector<Eigen::VectorXcd> design_combiners(
    const ChannelRealization& channel, const Assignment& assignment,
    int max_iters = 200, double tol = 1e-8) {
  std::vector<Eigen::VectorXcd> combiners;
  combiners.reserve(channel.num_users);
  for (int k = 0; k < channel.num_users; ++k) {
    const Eigen::MatrixXcd& h = channel.matrices[k][assignment.nearest_bs[k]];
    if (!(h.norm() > 0.0))
      throw DegenerateChannelError("all-zero channel for user " +
                                   std::to_string(k));
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(h, Eigen::ComputeThinU);
    const Eigen::VectorXcd dominant = detail::canonical_phase(svd.matrixU().col(0));
    const double target = 1.0 / std::sqrt(static_cast<double>(h.rows()));
    combiners.push_back(alternating_projection(dominant, max_iters, tol, target));
  }
  return combiners;
}

/// RF precoder design: per base station, stack the combined rows w_k^H H_{k,m}
/// of its served users, take the top-N_RF right singular vectors, and push
/// them to constant modulus 1/sqrt(N_BS) by alternating projection. If the
/// stacked matrix has rank below N_RF the remaining columns are completed
/// with trailing singular vectors and a warning is recorded.
inline std::vector<Eigen::MatrixXcd> design_rf_precoders(
    const ChannelRealization& channel,
    const std::vector<Eigen::VectorXcd>& ue_combiners,
    const Assignment& assignment, int num_rf_chains,
    std::vector<std::string>* warnings = nullptr, int max_iters = 200,
    double tol = 1e-8) {
  std::vector<Eigen::MatrixXcd> precoders;
  precoders.reserve(channel.num_bs);
  for (int m = 0; m < channel.num_bs; ++m) {
    const auto& users = assignment.served_users[m];
    const int num_bs_antennas =
        static_cast<int>(channel.matrices[0][m].cols());
    Eigen::MatrixXcd stacked(users.size(), num_bs_antennas);
    for (std::size_t i = 0; i < users.size(); ++i)
      stacked.row(i) = ue_combiners[users[i]].adjoint() * channel.matrices[users[i]][m];

    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(stacked, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double tol_rank = std::max<Eigen::Index>(stacked.rows(), stacked.cols()) *
                            std::numeric_limits<double>::epsilon() *
                            (sv.size() > 0 ? sv(0) : 0.0);
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
      if (sv(i) > tol_rank) ++rank;
    if (rank < num_rf_chains && warnings)
      warnings->push_back("station " + std::to_string(m) +
                          ": effective RF channel rank " + std::to_string(rank) +
                          " < n_rf " + std::to_string(num_rf_chains) +
                          ", padded with trailing singular vectors");

    Eigen::MatrixXcd top = svd.matrixV().leftCols(num_rf_chains);
    for (Eigen::Index j = 0; j < top.cols(); ++j)
      top.col(j) = detail::canonical_phase(top.col(j));
    const double target = 1.0 / std::sqrt(static_cast<double>(num_bs_antennas));
    precoders.push_back(alternating_projection(top, max_iters, tol, target));
  }
  return precoders;
}

/// Convenience wrapper running both RF design stages.
inline RfChains design_rf_chains(const ChannelRealization& channel,
                                 const Assignment& assignment,
                                 int num_rf_chains) {
  RfChains rf;
  rf.ue_combiners = design_combiners(channel, assignment);
  rf.bs_precoders = design_rf_precoders(channel, rf.ue_combiners, assignment,
                                        num_rf_chains, &rf.warnings);
  return rf;
}

}  // namespace cfmimo
