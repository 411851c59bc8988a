#include <doctest.h>

#include <cmath>

#include "sigctrl/sindy.hpp"

using namespace sigctrl;

namespace {

NormStats unit_norm(int d_x, int d_u) {
  NormStats n;
  n.state_mean = Eigen::VectorXd::Zero(d_x);
  n.state_std = Eigen::VectorXd::Ones(d_x);
  n.control_min = Eigen::VectorXd::Zero(d_u);
  n.control_max = Eigen::VectorXd::Ones(d_u);
  return n;
}

// dense noiseless samples of dx/dt = a x + b u under u(t) = cos(w t)
Trajectory linear_trajectory(double a, double b, double x0, double w, int n, double tf) {
  Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(n, 0.0, tf);
  Eigen::MatrixXd xv(n, 1), uv(n, 1);
  double x = x0;
  const double dt = tf / (n - 1) / 20.0;
  int at = 0;
  double tcur = 0.0;
  for (int i = 0; i < n; ++i) {
    while (tcur < t(i) - 1e-12) {
      double u = std::cos(w * tcur);
      double k1 = a * x + b * u;
      double k2 = a * (x + 0.5 * dt * k1) + b * std::cos(w * (tcur + 0.5 * dt));
      double k3 = a * (x + 0.5 * dt * k2) + b * std::cos(w * (tcur + 0.5 * dt));
      double k4 = a * (x + dt * k3) + b * std::cos(w * (tcur + dt));
      x += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
      tcur += dt;
    }
    xv(i, 0) = x;
    uv(i, 0) = std::cos(w * t(i));
    (void)at;
  }
  Trajectory tr;
  tr.state = make_path(t, xv);
  tr.control = make_path(t, uv);
  tr.x0 = xv.row(0);
  return tr;
}

}  // namespace

TEST_CASE("library layout") {
  Eigen::MatrixXd x(3, 1), u(3, 1);
  x << 0.0, 2.0, -1.0;
  u << 0.0, 3.0, 0.5;

  Eigen::MatrixXd l1 = build_library(x, u, 1);
  REQUIRE(l1.cols() == 3);  // [1, x, u]
  CHECK(l1(1, 0) == 1.0);
  CHECK(l1(1, 1) == 2.0);
  CHECK(l1(1, 2) == 3.0);
  CHECK((l1.row(0).tail(2).cwiseAbs().maxCoeff()) == 0.0);  // zero inputs keep only the constant

  Eigen::MatrixXd l2 = build_library(x, u, 2);
  REQUIRE(l2.cols() == 6);  // [1, x, u, x^2, x*u, u^2]
  CHECK(l2(1, 3) == 4.0);
  CHECK(l2(1, 4) == 6.0);
  CHECK(l2(1, 5) == 9.0);
  std::vector<std::string> lbl = library_labels(1, 1, 2);
  CHECK(lbl == std::vector<std::string>{"1", "x1", "u1", "x1^2", "x1*u1", "u1^2"});

  CHECK_THROWS_AS(build_library(x, Eigen::MatrixXd::Zero(2, 1), 1), ShapeMismatch);
}

TEST_CASE("stlsq recovers a sparse linear law exactly") {
  Rng rng(4);
  const int n = 200;
  Eigen::MatrixXd x(n, 1), u(n, 1), d(n, 1);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.uniform(-2.0, 2.0);
    u(i, 0) = rng.uniform(-2.0, 2.0);
    d(i, 0) = 1.5 * x(i, 0) - 0.8 * u(i, 0);
  }
  Eigen::MatrixXd lib = build_library(x, u, 2);
  bool zero = true;
  Eigen::MatrixXd theta = stlsq(lib, d, 0.1, 1e-10, &zero);
  CHECK_FALSE(zero);
  CHECK(theta(1, 0) == doctest::Approx(1.5).epsilon(1e-6));
  CHECK(theta(2, 0) == doctest::Approx(-0.8).epsilon(1e-6));
  theta(1, 0) = theta(2, 0) = 0.0;
  CHECK(theta.cwiseAbs().maxCoeff() == 0.0);  // nothing spurious survives

  SUBCASE("threshold zero is plain ridge") {
    Eigen::MatrixXd plain = stlsq(lib, d, 0.0, 0.3);
    Eigen::MatrixXd G = lib.transpose() * lib;
    G.diagonal().array() += 0.3;
    Eigen::MatrixXd direct = G.ldlt().solve(lib.transpose() * d);
    CHECK((plain - direct).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("pure-noise derivatives are thresholded to the flagged zero model") {
    Eigen::MatrixXd dn(n, 1);
    Rng r2(9);
    for (int i = 0; i < n; ++i) dn(i, 0) = 0.05 * r2.normal();
    bool z2 = false;
    Eigen::MatrixXd t2 = stlsq(lib, dn, 0.5, 0.1, &z2);
    CHECK(z2);
    CHECK(t2.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("the returned support is a fixed point of the refit") {
    Eigen::MatrixXd A(n, 2);
    A << lib.col(1), lib.col(2);
    Eigen::MatrixXd G = A.transpose() * A;
    G.diagonal().array() += 1e-10;
    Eigen::VectorXd refit = G.ldlt().solve(A.transpose() * d);
    Eigen::MatrixXd again = stlsq(lib, d, 0.1, 1e-10);
    CHECK(std::abs(again(1, 0) - refit(0)) < 1e-12);
    CHECK(std::abs(again(2, 0) - refit(1)) < 1e-12);
  }
}

TEST_CASE("random sparse degree-2 systems: exact support recovery") {
  const double threshold = 0.1;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(1000 + seed);
    const int p = library_size(2, 1, 2);
    Eigen::MatrixXd truth = Eigen::MatrixXd::Zero(p, 2);
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < p; ++i)
        if (rng.uniform() < 0.3) {
          double mag = rng.uniform(2.0 * threshold, 1.5);
          truth(i, c) = rng.uniform() < 0.5 ? mag : -mag;
        }

    const int n = 400;
    Eigen::MatrixXd x(n, 2), u(n, 1);
    for (int i = 0; i < n; ++i) {
      x(i, 0) = rng.uniform(-1.5, 1.5);
      x(i, 1) = rng.uniform(-1.5, 1.5);
      u(i, 0) = rng.uniform(-1.5, 1.5);
    }
    Eigen::MatrixXd lib = build_library(x, u, 2);
    Eigen::MatrixXd theta = stlsq(lib, lib * truth, threshold, 1e-12);
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < p; ++i) CHECK((theta(i, c) != 0.0) == (truth(i, c) != 0.0));
  }
}

TEST_CASE("finite differences on irregular grids") {
  Eigen::VectorXd t(5);
  t << 0.0, 0.1, 0.4, 0.5, 1.0;
  Eigen::MatrixXd v(5, 1);
  for (int i = 0; i < 5; ++i) v(i, 0) = 3.0 * t(i) + 1.0;  // linear: FD is exact everywhere
  Eigen::MatrixXd d = estimate_derivatives(make_path(t, v));
  CHECK((d.array() - 3.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("fit, selection, and cost prediction on a controlled linear system") {
  Dataset train, val;
  train.t_s = val.t_s = 0.0;
  train.t_f = val.t_f = 4.0;
  Rng rng(3);
  for (int i = 0; i < 12; ++i) {
    Trajectory tr = linear_trajectory(-0.7, 0.9, rng.uniform(-1.0, 1.0), rng.uniform(0.5, 2.0), 161, 4.0);
    (i < 9 ? train : val).trajectories.push_back(tr);
  }
  train.norm = val.norm = unit_norm(1, 1);

  SindyModel m = sindy_fit(train, SindyConfig{1, 0.1, 1e-8});
  CHECK(m.theta(1, 0) == doctest::Approx(-0.7).epsilon(2e-2));
  CHECK(m.theta(2, 0) == doctest::Approx(0.9).epsilon(2e-2));
  CHECK(m.theta(0, 0) == 0.0);

  SUBCASE("grid selection minimizes validation one-step error") {
    std::vector<int> degs{1, 2};
    std::vector<double> ths{0.1, 0.5};
    std::vector<double> rgs{1e-8, 10.0};
    SindyModel best = sindy_fit_best(train, val, degs, ths, rgs);
    double best_mse = sindy_one_step_mse(best, val);
    for (int dg : degs)
      for (double th : ths)
        for (double rg : rgs)
          CHECK(best_mse <= sindy_one_step_mse(sindy_fit(train, SindyConfig{dg, th, rg}), val) + 1e-15);
  }

  SUBCASE("predicted cost is the cost of the integrated ODE") {
    NormStats norm = unit_norm(1, 1);
    ObjectiveSpec spec;
    spec.task = ObjectiveTask::CancerExplicit;
    spec.t0 = 0.0;
    spec.tf = 4.0;
    ControlPlan none;
    none.timepoints.push_back(Eigen::VectorXd::Zero(1));
    none.dosages.push_back(Eigen::VectorXd::Zero(1));
    SolverGrid grid{0.0, 4.0, 200};
    double c = sindy_predict_cost(m, norm, Eigen::VectorXd::Constant(1, 0.8), none, spec, grid);
    TimedPath p = sindy_integrate(m, Eigen::VectorXd::Constant(1, 0.8),
                                  [](double) { return Eigen::VectorXd::Zero(1); }, grid);
    CHECK(c == cost_of_path(p, none, spec));
    // x(4) = 0.8 e^{-0.7*4} under the true law; discovered ODE is close
    CHECK(c == doctest::Approx(std::pow(0.8 * std::exp(-2.8), 2)).epsilon(0.05));
  }

  SUBCASE("divergence guard") {
    SindyModel bad = m;
    bad.cfg.degree = 2;
    bad.theta = Eigen::MatrixXd::Zero(6, 1);
    bad.theta(3, 0) = 4.0;  // dx/dt = 4 x^2 escapes in finite time
    CHECK_THROWS_AS(sindy_integrate(bad, Eigen::VectorXd::Constant(1, 2.0),
                                    [](double) { return Eigen::VectorXd::Zero(1); }, SolverGrid{0.0, 4.0, 400}),
                    IntegrationDiverged);
  }
}

TEST_CASE("structural recovery of a growth/clearance system") {
  // d logV = (a - b logV - c C - e u_r - f u_r^2) dt, dC = (-k C + u_c) dt:
  // the fitted support on the degree-2 library matches the generating terms
  Rng rng(8);
  Dataset ds;
  ds.t_s = 0.0;
  ds.t_f = 3.0;
  ds.norm = unit_norm(2, 2);
  const double a = 1.1, b = 0.6, cc = 0.5, e = 0.7, f = 0.3, kc = 0.8;
  for (int traj = 0; traj < 10; ++traj) {
    const int n = 121;
    Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(n, 0.0, 3.0);
    const double dt = 3.0 / (n - 1) / 20.0;
    double z = rng.uniform(0.5, 2.0), C = 0.3 * traj / 10.0;
    double uc = rng.uniform(0.0, 1.2), ur = rng.uniform(0.0, 1.2);  // constant doses per trajectory
    Eigen::MatrixXd xv(n, 2), uv(n, 2);
    double tcur = 0.0;
    for (int i = 0; i < n; ++i) {
      while (tcur < t(i) - 1e-12) {
        // small-step Euler as the reference integrator
        double dz = a - b * z - cc * C - e * ur - f * ur * ur;
        double dC = -kc * C + uc;
        z += dt * dz;
        C += dt * dC;
        tcur += dt;
      }
      xv(i, 0) = z;
      xv(i, 1) = C;
      uv(i, 0) = uc;
      uv(i, 1) = ur;
    }
    Trajectory tr;
    tr.state = make_path(t, xv);
    tr.control = make_path(t, uv);
    tr.x0 = xv.row(0);
    ds.trajectories.push_back(tr);
  }

  SindyModel m = sindy_fit(ds, SindyConfig{2, 0.1, 1e-8});
  std::vector<std::string> lbl = library_labels(2, 2, 2);
  std::vector<std::string> want1{"1", "x1", "x2", "u2", "u2^2"};  // z equation
  std::vector<std::string> want2{"x2", "u1"};                     // C equation
  for (int i = 0; i < m.theta.rows(); ++i) {
    bool in1 = std::find(want1.begin(), want1.end(), lbl[i]) != want1.end();
    bool in2 = std::find(want2.begin(), want2.end(), lbl[i]) != want2.end();
    CHECK((m.theta(i, 0) != 0.0) == in1);
    CHECK((m.theta(i, 1) != 0.0) == in2);
  }
  std::string eq = sindy_equations(m);
  CHECK(eq.find("dx1/dt =") != std::string::npos);
  CHECK(eq.find("u2^2") != std::string::npos);
}
