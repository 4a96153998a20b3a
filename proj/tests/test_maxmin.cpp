#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <optional>

#include "cfmimo/maxmin.hpp"
#include "test_support.hpp"

using Catch::Approx;
using namespace cfmimo;

namespace {

struct Instance {
  EffectiveChannel effective;
  PrecoderSet precoders;
  RfChains rf;
  QuantizationModel quant;
  double max_power = 1.0;
};

Instance random_instance(Rng& rng, int users, int stations, int num_rf,
                         std::optional<int> bits, double awgn = 0.1) {
  Instance inst;
  auto zf = testutil::random_zf_instance(rng, users, stations, num_rf,
                                         4 * num_rf, awgn);
  inst.effective = std::move(zf.effective);
  inst.precoders = std::move(zf.precoders);
  inst.rf = std::move(zf.rf);
  inst.quant = QuantizationModel::from_bits(bits);
  return inst;
}

MaxminProblem problem_of(const Instance& inst, double power,
                         std::optional<double> capacity) {
  return build_maxmin_problem(inst.effective, inst.precoders, inst.rf,
                              inst.quant, power, capacity);
}

}  // namespace

TEST_CASE("sqnr collapses without quantization and compression", "[maxmin]") {
  Rng rng(1);
  auto inst = random_instance(rng, 3, 2, 2, std::nullopt);
  inst.effective.awgn_var = 1.0;
  const MaxminProblem problem = problem_of(inst, 1.0, std::nullopt);
  const Eigen::VectorXd eta = Eigen::VectorXd::Constant(3, 2.0);
  const Eigen::VectorXd s =
      sqnr_all(eta, Eigen::VectorXd::Zero(2), problem);
  for (int k = 0; k < 3; ++k) CHECK(s(k) == Approx(2.0).epsilon(1e-12));
}

TEST_CASE("sqnr scalar hand evaluation", "[maxmin]") {
  // h = 1, f = 1, rho = 1/2, eta = 1, sigma^2 = 1, awgn = 1 -> 1/7.
  const EffectiveChannel eff =
      testutil::make_effective(Eigen::MatrixXcd::Ones(1, 1), 1, 1.0);
  PrecoderSet f;
  f.kind = PrecoderKind::CellfreeZf;
  f.full = Eigen::MatrixXcd::Ones(1, 1);
  f.blocks = {f.full};
  RfChains rf;
  rf.bs_precoders = {Eigen::MatrixXcd::Ones(1, 1)};
  const QuantizationModel quant{1, 0.5};
  const MaxminProblem problem =
      build_maxmin_problem(eff, f, rf, quant, 1.0, std::nullopt);
  const Eigen::VectorXd s = sqnr_all(Eigen::VectorXd::Ones(1),
                                     Eigen::VectorXd::Ones(1), problem);
  CHECK(s(0) == Approx(1.0 / 7.0).epsilon(1e-12));
}

TEST_CASE("sqnr vanishes with eta", "[maxmin]") {
  Rng rng(2);
  const auto inst = random_instance(rng, 3, 2, 2, 4);
  const MaxminProblem problem = problem_of(inst, 1.0, std::nullopt);
  const Eigen::VectorXd s = sqnr_all(Eigen::VectorXd::Zero(3),
                                     Eigen::VectorXd::Zero(2), problem);
  CHECK(s.norm() == 0.0);
}

TEST_CASE("station power endpoints", "[maxmin]") {
  Rng rng(3);
  const auto inst = random_instance(rng, 3, 2, 2, 4);
  CHECK(bs_power(Eigen::VectorXd::Zero(3), 0.0, 0, inst.precoders, inst.rf,
                 inst.quant) == 0.0);

  // rho = 0, unit sigma, eta = 0: only (1-rho) sigma^2 tr(W W^H) = N_RF
  // survives for constant-modulus W.
  const QuantizationModel ideal{std::nullopt, 0.0};
  const double p = bs_power(Eigen::VectorXd::Zero(3), 1.0, 1, inst.precoders,
                            inst.rf, ideal);
  CHECK(p == Approx(2.0).epsilon(1e-12));  // N_RF = 2
}

TEST_CASE("station power is linear in eta", "[maxmin]") {
  Rng rng(4);
  const auto inst = random_instance(rng, 3, 2, 2, 3);
  Eigen::VectorXd eta(3);
  eta << 0.3, 1.1, 0.7;
  const double sigma_m = 0.4;
  const double base = bs_power(Eigen::VectorXd::Zero(3), sigma_m, 0,
                               inst.precoders, inst.rf, inst.quant);
  const double once =
      bs_power(eta, sigma_m, 0, inst.precoders, inst.rf, inst.quant);
  const double twice =
      bs_power(2.0 * eta, sigma_m, 0, inst.precoders, inst.rf, inst.quant);
  CHECK(twice - base == Approx(2.0 * (once - base)).epsilon(1e-12));
}

TEST_CASE("fronthaul rate scalar and diagonal cases", "[maxmin]") {
  PrecoderSet f;
  f.full = Eigen::MatrixXcd::Ones(1, 1);
  f.blocks = {f.full};
  Eigen::VectorXd eta(1);
  eta << 3.0;
  CHECK(fronthaul_rate(eta, 1.0, 0, f) == Approx(2.0).epsilon(1e-12));
  CHECK(fronthaul_rate(Eigen::VectorXd::Zero(1), 1.0, 0, f) == 0.0);
  CHECK(fronthaul_rate(Eigen::VectorXd::Zero(1), 0.0, 0, f) == 0.0);
  CHECK_THROWS_AS(fronthaul_rate(eta, 0.0, 0, f), InfiniteRateError);

  // diag(1, 3) eigenvalues: log2(2) + log2(4) = 3.
  PrecoderSet g;
  g.full = Eigen::MatrixXcd::Identity(2, 2);
  g.blocks = {g.full};
  Eigen::VectorXd eta2(2);
  eta2 << 1.0, 3.0;
  CHECK(fronthaul_rate(eta2, 1.0, 0, g) == Approx(3.0).epsilon(1e-12));
}

TEST_CASE("equality solve at zero target", "[maxmin]") {
  Rng rng(5);
  const auto inst = random_instance(rng, 3, 2, 2, 4);
  const MaxminProblem problem = problem_of(inst, 1.0, std::nullopt);
  const EtaSolve solve =
      solve_eta_for_target(0.0, Eigen::VectorXd::Zero(2), problem);
  REQUIRE(solve.feasible);
  CHECK(solve.eta.norm() == 0.0);
}

TEST_CASE("equality solve without quantization is explicit", "[maxmin]") {
  Rng rng(6);
  auto inst = random_instance(rng, 3, 2, 2, std::nullopt);
  inst.effective.awgn_var = 0.3;
  const MaxminProblem problem = problem_of(inst, 1e6, std::nullopt);
  const double t = 1.7;
  const EtaSolve solve =
      solve_eta_for_target(t, Eigen::VectorXd::Zero(2), problem);
  REQUIRE(solve.feasible);
  for (int k = 0; k < 3; ++k)
    CHECK(solve.eta(k) == Approx(t * 0.3).epsilon(1e-12));
}

TEST_CASE("equality solve pins every user to the target", "[maxmin]") {
  Rng rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    const auto inst = random_instance(rng, 4, 2, 3, 1 + (rep % 8));
    const MaxminProblem problem = problem_of(inst, 1e9, std::nullopt);
    Eigen::VectorXd sigma(2);
    sigma << rng.uniform(0.0, 0.5), rng.uniform(0.0, 0.5);
    const double t = rng.uniform(0.1, 3.0);
    const EtaSolve solve = solve_eta_for_target(t, sigma, problem);
    if (!solve.feasible) continue;
    const Eigen::VectorXd s = sqnr_all(solve.eta, sigma, problem);
    for (int k = 0; k < 4; ++k)
      CHECK(std::abs(s(k) - t) <= 1e-9 * std::max(1.0, t));
  }
}

TEST_CASE("equality solution is the elementwise floor (Lemma property)",
          "[maxmin]") {
  Rng rng(8);
  int checked = 0;
  for (int rep = 0; rep < 300; ++rep) {
    const auto inst = random_instance(rng, 3, 2, 2, 1 + (rep % 8));
    const MaxminProblem problem = problem_of(inst, 1e12, std::nullopt);
    Eigen::VectorXd sigma(2);
    sigma << rng.uniform(0.0, 0.3), rng.uniform(0.0, 0.3);
    Eigen::VectorXd candidate(3);
    for (int i = 0; i < 3; ++i) candidate(i) = rng.uniform(0.05, 4.0);
    const double t = sqnr_all(candidate, sigma, problem).minCoeff();
    const EtaSolve solve = solve_eta_for_target(t, sigma, problem);
    REQUIRE(solve.feasible);
    for (int k = 0; k < 3; ++k)
      CHECK(candidate(k) >= solve.eta(k) - 1e-9 * std::max(1.0, solve.eta(k)));
    ++checked;
  }
  CHECK(checked == 300);
}

TEST_CASE("fronthaul rate grows with eta (determinant monotonicity)",
          "[maxmin]") {
  Rng rng(9);
  for (int rep = 0; rep < 50; ++rep) {
    const auto inst = random_instance(rng, 3, 2, 2, 4);
    Eigen::VectorXd eta(3), bump(3);
    for (int i = 0; i < 3; ++i) {
      eta(i) = rng.uniform(0.0, 2.0);
      bump(i) = rng.uniform(0.0, 1.0);
    }
    const double sigma_m = rng.uniform(0.1, 1.0);
    const double before = fronthaul_rate(eta, sigma_m, 0, inst.precoders);
    const double after = fronthaul_rate(eta + bump, sigma_m, 0, inst.precoders);
    CHECK(after >= before - 1e-9);
  }
}

TEST_CASE("monotone responses to compression noise", "[maxmin]") {
  Rng rng(10);
  const auto inst = random_instance(rng, 3, 2, 2, 4);
  const MaxminProblem problem = problem_of(inst, 1.0, std::nullopt);
  Eigen::VectorXd eta(3);
  eta << 0.4, 0.9, 1.3;
  Eigen::VectorXd sigma_low(2), sigma_high(2);
  sigma_low << 0.2, 0.3;
  sigma_high << 0.5, 0.3;

  const Eigen::VectorXd s_low = sqnr_all(eta, sigma_low, problem);
  const Eigen::VectorXd s_high = sqnr_all(eta, sigma_high, problem);
  for (int k = 0; k < 3; ++k) CHECK(s_high(k) <= s_low(k) + 1e-12);

  CHECK(bs_power(eta, 0.5, 0, inst.precoders, inst.rf, inst.quant) >=
        bs_power(eta, 0.2, 0, inst.precoders, inst.rf, inst.quant));

  CHECK(fronthaul_rate(eta, 0.5, 0, inst.precoders) <=
        fronthaul_rate(eta, 0.2, 0, inst.precoders));
}

TEST_CASE("single-user bisection matches the closed form", "[maxmin]") {
  Rng rng(11);
  auto inst = random_instance(rng, 1, 1, 2, std::nullopt);
  inst.effective.awgn_var = 0.05;
  const double power = 2.3;
  const MaxminProblem problem = problem_of(inst, power, std::nullopt);
  SolverSettings settings;

  const BisectionResult result =
      bisection_eta(Eigen::VectorXd::Zero(1), problem, settings);
  const double eta_cap = power / problem.power_coeff(0, 0);
  const double expected = eta_cap / inst.effective.awgn_var;
  CHECK(std::abs(result.target - expected) <=
        2.0 * settings.bisection_tol * std::max(1.0, expected));
}

TEST_CASE("bisection brackets the feasibility boundary", "[maxmin]") {
  Rng rng(12);
  const auto inst = random_instance(rng, 2, 1, 2, 3);
  const double power = 1.0, capacity = 6.0;
  const MaxminProblem problem = problem_of(inst, power, capacity);
  Eigen::VectorXd sigma(1);
  sigma << 0.2;
  SolverSettings settings;
  const BisectionResult result = bisection_eta(sigma, problem, settings);

  CHECK(solve_eta_for_target(result.target, sigma, problem).feasible);
  const double above = result.target * (1.0 + 10 * settings.bisection_tol) + 1e-9;
  CHECK_FALSE(solve_eta_for_target(above, sigma, problem).feasible);
}

TEST_CASE("bisection against the 2-D grid oracle", "[maxmin]") {
  Rng rng(13);
  for (int rep = 0; rep < 5; ++rep) {
    auto zf = testutil::random_zf_instance(rng, 2, 1, 2, 8);
    const QuantizationModel quant = QuantizationModel::from_bits(1 + rep);
    const double power = 1.0;
    const double capacity = 4.0 + rep;
    const MaxminProblem problem = build_maxmin_problem(
        zf.effective, zf.precoders, zf.rf, quant, power, capacity);
    Eigen::VectorXd sigma(1);
    sigma << rng.uniform(0.1, 0.4);
    SolverSettings settings;
    const BisectionResult bisected = bisection_eta(sigma, problem, settings);
    const double gridded = testutil::grid_search_max_min_target(
        zf, quant, problem, sigma, power, capacity);
    CHECK(std::abs(bisected.target - gridded) <=
          1e-3 * std::max(bisected.target, 1e-12));
  }
}

TEST_CASE("infeasible start raises initialization error", "[maxmin]") {
  Rng rng(14);
  const auto inst = random_instance(rng, 2, 1, 2, 4);
  const MaxminProblem problem = problem_of(inst, 1e-6, std::nullopt);
  Eigen::VectorXd sigma(1);
  sigma << 1e3;  // sigma-only power already exceeds the budget
  SolverSettings settings;
  CHECK_THROWS_AS(bisection_eta(sigma, problem, settings), InitializationError);
}

TEST_CASE("sigma subproblem closed form", "[maxmin]") {
  PrecoderSet f;
  f.full = Eigen::MatrixXcd::Constant(1, 1, std::sqrt(3.0));
  f.blocks = {f.full};
  SolverSettings settings;
  const double sigma = solve_sigma_for_capacity(
      f.blocks[0], Eigen::VectorXd::Ones(1), 2.0, settings);
  CHECK(sigma == Approx(1.0).margin(1e-12));
}

TEST_CASE("sigma subproblem zero signal", "[maxmin]") {
  PrecoderSet f;
  f.full = Eigen::MatrixXcd::Ones(2, 2);
  f.blocks = {f.full};
  SolverSettings settings;
  CHECK(solve_sigma_for_capacity(f.blocks[0], Eigen::VectorXd::Zero(2), 8.0,
                                 settings) == 0.0);
}

TEST_CASE("sigma subproblem hits capacity equality", "[maxmin]") {
  Rng rng(15);
  SolverSettings settings;
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::MatrixXcd block = testutil::random_complex(rng, 3, 4);
    Eigen::VectorXd eta(4);
    for (int i = 0; i < 4; ++i) eta(i) = rng.uniform(0.0, 5.0);
    if (!(eta.maxCoeff() > 0)) continue;
    const double capacity = rng.uniform(0.5, 40.0);
    const double sigma =
        solve_sigma_for_capacity(block, eta, capacity, settings);
    PrecoderSet f;
    f.blocks = {block};
    f.full = block;
    CHECK(std::abs(fronthaul_rate(eta, sigma, 0, f) - capacity) <=
          settings.sigma_tol);
  }
}

TEST_CASE("alternating optimization reduces to one bisection when unconstrained",
          "[maxmin]") {
  Rng rng(16);
  const auto inst = random_instance(rng, 3, 2, 2, 5);
  SolverSettings settings;
  const AoResult ao = ao_solve(inst.effective, inst.precoders, inst.rf,
                               inst.quant, 1.0, std::nullopt, settings);
  CHECK(ao.trace.size() == 1);
  CHECK(ao.allocation.sigma.norm() == 0.0);

  const MaxminProblem problem = problem_of(inst, 1.0, std::nullopt);
  const BisectionResult direct =
      bisection_eta(Eigen::VectorXd::Zero(2), problem, settings);
  CHECK(ao.allocation.target == Approx(direct.target).epsilon(1e-12));
}

TEST_CASE("alternating optimization attains the joint reference target",
          "[maxmin]") {
  Rng rng(18);
  SolverSettings settings;
  for (int rep = 0; rep < 8; ++rep) {
    const auto inst = random_instance(rng, 4, 2, 3, 1 + (rep % 8));
    const double power = 1.0;
    const double capacity = rep % 2 == 0 ? 8.0 : 64.0;
    const MaxminProblem problem = problem_of(inst, power, capacity);
    const AoResult ao = ao_solve(inst.effective, inst.precoders, inst.rf,
                                 inst.quant, power, capacity, settings);
    const double reference =
        testutil::joint_bisection_oracle(problem, power, capacity, settings);
    CHECK(ao.allocation.target >=
          reference * (1.0 - 10 * settings.bisection_tol) - 1e-12);
  }
}

TEST_CASE("alternating optimization converges monotonically", "[maxmin]") {
  Rng rng(17);
  SolverSettings settings;
  for (int rep = 0; rep < 20; ++rep) {
    const auto inst = random_instance(rng, 4, 2, 3, 1 + (rep % 8));
    const double power = 1.0;
    const double capacity = 4.0 + 3.0 * (rep % 5);
    const AoResult ao = ao_solve(inst.effective, inst.precoders, inst.rf,
                                 inst.quant, power, capacity, settings);
    REQUIRE(!ao.trace.empty());
    for (std::size_t i = 1; i < ao.trace.size(); ++i) {
      CHECK(ao.trace[i].target >= ao.trace[i - 1].target - 1e-9);
      for (int m = 0; m < 2; ++m)
        CHECK(ao.trace[i].sigma(m) <= ao.trace[i - 1].sigma(m));
    }
    // Final allocation meets both budgets.
    for (int m = 0; m < 2; ++m) {
      CHECK(bs_power(ao.allocation.eta, ao.allocation.sigma(m), m,
                     inst.precoders, inst.rf, inst.quant) <=
            power * (1.0 + 1e-6));
      const double used = fronthaul_rate(ao.allocation.eta,
                                         ao.allocation.sigma(m), m,
                                         inst.precoders);
      CHECK(std::abs(used - capacity) <= 1e-6);
    }
    CHECK((ao.allocation.eta.array() >= 0.0).all());
  }
}
