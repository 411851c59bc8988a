#include <doctest.h>

#include <cmath>

#include "sigctrl/sde.hpp"

using namespace sigctrl;

namespace {

SdeModel ou_model(double shift = 0.0) {
  SdeModel m;
  m.d_x = 1;
  m.d_w = 1;
  m.d_u = 0;
  m.drift = [shift](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    return Eigen::VectorXd::Constant(1, -x(0) + shift).eval();
  };
  m.diffusion = [](const Eigen::VectorXd&, const Eigen::VectorXd&) {
    return Eigen::MatrixXd::Constant(1, 1, 1.0).eval();
  };
  return m;
}

ControlFn no_control() {
  return [](double) { return Eigen::VectorXd(0); };
}

// Terminal values of n_paths OU rollouts; paths themselves are discarded so the
// big MC checks stay in constant memory.
Eigen::VectorXd ou_terminals(const SolverGrid& grid, int n_paths, std::uint64_t seed) {
  SdeModel m = ou_model();
  Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, 1.0);
  Rng root(seed);
  Eigen::VectorXd out(n_paths);
  for (int i = 0; i < n_paths; ++i) {
    Rng ri = root.derive(i);
    Eigen::MatrixXd dw = brownian_increments(grid, 1, ri);
    TimedPath p = euler_maruyama(m, x0, no_control(), grid, dw);
    out(i) = p.values(p.n_points() - 1, 0);
  }
  return out;
}

}  // namespace

TEST_CASE("brownian_increments moments and determinism") {
  SolverGrid grid{0.0, 100.0, 100000};  // dt = 1e-3
  const int d_w = 10;                   // 10^6 draws total
  Rng rng(42);
  Eigen::MatrixXd dw = brownian_increments(grid, d_w, rng);
  REQUIRE(dw.rows() == grid.n_steps);
  REQUIRE(dw.cols() == d_w);

  const double n = static_cast<double>(dw.size());
  double mean = dw.mean();
  double var = (dw.array() - mean).square().sum() / n;
  CHECK(std::abs(mean) < 4.0 * std::sqrt(grid.dt() / n));
  CHECK(var == doctest::Approx(grid.dt()).epsilon(0.01));

  Rng rng2(42);
  Eigen::MatrixXd dw2 = brownian_increments(grid, d_w, rng2);
  CHECK((dw.cwiseEqual(dw2)).all());
}

TEST_CASE("euler_maruyama null dynamics and errors") {
  SdeModel m;
  m.d_x = 2;
  m.d_w = 1;
  m.drift = [](const Eigen::VectorXd&, const Eigen::VectorXd&) { return Eigen::VectorXd::Zero(2).eval(); };
  m.diffusion = [](const Eigen::VectorXd&, const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(2, 1).eval(); };
  SolverGrid grid{0.0, 1.0, 10};
  Eigen::VectorXd x0(2);
  x0 << 3.0, -1.5;
  Rng rng(1);
  Eigen::MatrixXd dw = brownian_increments(grid, 1, rng);
  TimedPath p = euler_maruyama(m, x0, no_control(), grid, dw);
  REQUIRE(p.n_points() == 11);
  for (int k = 0; k <= 10; ++k) {
    CHECK(p.values(k, 0) == 3.0);
    CHECK(p.values(k, 1) == -1.5);
  }
  CHECK((p.values.row(0).transpose().cwiseEqual(x0)).all());

  SdeModel bad = m;
  bad.drift = [](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    return (x.array() * 1e80).matrix().eval();  // overflows to inf within a few steps
  };
  CHECK_THROWS_AS(euler_maruyama(bad, x0, no_control(), grid, dw), NonFiniteState);
}

TEST_CASE("euler_maruyama clamps nonnegative states when asked") {
  SdeModel m;
  m.d_x = 1;
  m.d_w = 1;
  m.clamp_nonneg = true;
  m.drift = [](const Eigen::VectorXd&, const Eigen::VectorXd&) {
    return Eigen::VectorXd::Constant(1, -10.0).eval();
  };
  m.diffusion = [](const Eigen::VectorXd&, const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(1, 1).eval(); };
  SolverGrid grid{0.0, 1.0, 4};
  Rng rng(0);
  Eigen::MatrixXd dw = brownian_increments(grid, 1, rng);
  TimedPath p = euler_maruyama(m, Eigen::VectorXd::Constant(1, 1.0), no_control(), grid, dw);
  CHECK(p.values.minCoeff() == 0.0);
}

TEST_CASE("OU terminal moments match the closed form") {
  // dX = -X dt + dW, X_0 = 1: E X_1 = e^{-1}, Var X_1 = (1 - e^{-2}) / 2.
  SolverGrid grid{0.0, 1.0, 1000};  // dt = 1e-3
  const int n_paths = 100000;
  Eigen::VectorXd xt = ou_terminals(grid, n_paths, 2024);

  const double mean_true = std::exp(-1.0);
  const double var_true = (1.0 - std::exp(-2.0)) / 2.0;
  double mean = xt.mean();
  double var = (xt.array() - mean).square().sum() / (n_paths - 1);

  double se_mean = std::sqrt(var_true / n_paths);
  CHECK(std::abs(mean - mean_true) < 3.0 * se_mean);
  // Var of the sample variance for Gaussians: 2 sigma^4 / (n-1).
  double se_var = std::sqrt(2.0 * var_true * var_true / (n_paths - 1));
  CHECK(std::abs(var - var_true) < 3.0 * se_var);
}

TEST_CASE("weak order-1 consistency on OU") {
  const double mean_true = std::exp(-1.0);
  const int n_paths = 1000000;
  double errs[3];
  int idx = 0;
  for (int n_steps : {10, 20, 40}) {  // dt = 0.1, 0.05, 0.025
    SolverGrid grid{0.0, 1.0, n_steps};
    errs[idx++] = std::abs(ou_terminals(grid, n_paths, 99).mean() - mean_true);
  }
  CHECK(errs[0] > errs[1]);
  CHECK(errs[1] > errs[2]);
}

TEST_CASE("rollout_batch consistency and determinism") {
  SdeModel m = ou_model();
  SolverGrid grid{0.0, 1.0, 50};
  Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, 1.0);
  Rng rng(5);

  auto paths = rollout_batch(m, x0, no_control(), grid, 10, rng);
  REQUIRE(paths.size() == 10);

  Rng r0 = rng.derive(0);
  Eigen::MatrixXd dw0 = brownian_increments(grid, 1, r0);
  TimedPath single = euler_maruyama(m, x0, no_control(), grid, dw0);
  CHECK((paths[0].values.cwiseEqual(single.values)).all());

  auto again = rollout_batch(m, x0, no_control(), grid, 10, rng);
  for (int i = 0; i < 10; ++i) CHECK((paths[i].values.cwiseEqual(again[i].values)).all());

  SdeModel det = m;
  det.diffusion = [](const Eigen::VectorXd&, const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(1, 1).eval(); };
  auto dpaths = rollout_batch(det, x0, no_control(), grid, 4, rng);
  for (int i = 1; i < 4; ++i) CHECK((dpaths[i].values.cwiseEqual(dpaths[0].values)).all());
}

TEST_CASE("shared noise couples identical models bit-exactly") {
  SdeModel a = ou_model();
  SdeModel b = ou_model();  // distinct closures, same dynamics
  SolverGrid grid{0.0, 2.0, 200};
  Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, 0.5);
  Rng rng(77);
  Eigen::MatrixXd dw = brownian_increments(grid, 1, rng);
  TimedPath pa = euler_maruyama(a, x0, no_control(), grid, dw);
  TimedPath pb = euler_maruyama(b, x0, no_control(), grid, dw);
  CHECK((pa.values.cwiseEqual(pb.values)).all());
}

TEST_CASE("deterministic part tracks an RK4 reference") {
  // dx = -x + sin(x) drift, sigma = 0; compare against RK4 at dt/100.
  auto f = [](double x) { return -x + std::sin(x); };
  SdeModel m;
  m.d_x = 1;
  m.d_w = 1;
  m.drift = [f](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    return Eigen::VectorXd::Constant(1, f(x(0))).eval();
  };
  m.diffusion = [](const Eigen::VectorXd&, const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(1, 1).eval(); };

  SolverGrid grid{0.0, 1.0, 100};
  Eigen::MatrixXd dw = Eigen::MatrixXd::Zero(grid.n_steps, 1);
  TimedPath p = euler_maruyama(m, Eigen::VectorXd::Constant(1, 2.0), no_control(), grid, dw);

  double x = 2.0, h = grid.dt() / 100.0;
  for (int k = 0; k < grid.n_steps * 100; ++k) {
    double k1 = f(x), k2 = f(x + 0.5 * h * k1), k3 = f(x + 0.5 * h * k2), k4 = f(x + h * k3);
    x += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  CHECK(std::abs(p.values(p.n_points() - 1, 0) - x) < 2.0 * grid.dt());
}
