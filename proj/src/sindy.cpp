#include "sigctrl/sindy.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <sstream>

#include "sigctrl/errors.hpp"

namespace sigctrl {

int library_size(int d_x, int d_u, int degree) {
  const int m = d_x + d_u;
  int n = 1 + m;
  if (degree >= 2) n += m * (m + 1) / 2;
  return n;
}

std::vector<std::string> library_labels(int d_x, int d_u, int degree) {
  const int m = d_x + d_u;
  auto var = [d_x](int i) {
    return i < d_x ? "x" + std::to_string(i + 1) : "u" + std::to_string(i - d_x + 1);
  };
  std::vector<std::string> out{"1"};
  for (int i = 0; i < m; ++i) out.push_back(var(i));
  if (degree >= 2)
    for (int i = 0; i < m; ++i)
      for (int j = i; j < m; ++j) out.push_back(i == j ? var(i) + "^2" : var(i) + "*" + var(j));
  return out;
}

Eigen::MatrixXd build_library(const Eigen::MatrixXd& states, const Eigen::MatrixXd& controls, int degree) {
  if (states.rows() != controls.rows()) throw ShapeMismatch("states and controls need matching row counts");
  const int n = static_cast<int>(states.rows());
  const int m = static_cast<int>(states.cols() + controls.cols());
  Eigen::MatrixXd z(n, m);
  z << states, controls;

  Eigen::MatrixXd lib(n, library_size(static_cast<int>(states.cols()), static_cast<int>(controls.cols()), degree));
  lib.col(0).setOnes();
  lib.middleCols(1, m) = z;
  if (degree >= 2) {
    int col = 1 + m;
    for (int i = 0; i < m; ++i)
      for (int j = i; j < m; ++j) lib.col(col++) = z.col(i).cwiseProduct(z.col(j));
  }
  return lib;
}

Eigen::MatrixXd stlsq(const Eigen::MatrixXd& library, const Eigen::MatrixXd& derivatives, double threshold,
                      double ridge, bool* all_zero) {
  if (library.rows() != derivatives.rows()) throw ShapeMismatch("library and derivative row counts differ");
  const int p = static_cast<int>(library.cols());
  Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(p, derivatives.cols());

  for (int c = 0; c < derivatives.cols(); ++c) {
    std::vector<int> active(p);
    for (int i = 0; i < p; ++i) active[i] = i;
    Eigen::VectorXd coef;
    for (int sweep = 0; sweep < 20; ++sweep) {
      if (active.empty()) break;
      Eigen::MatrixXd A(library.rows(), active.size());
      for (std::size_t i = 0; i < active.size(); ++i) A.col(i) = library.col(active[i]);
      Eigen::MatrixXd G = A.transpose() * A;
      G.diagonal().array() += ridge;
      coef = G.ldlt().solve(A.transpose() * derivatives.col(c));

      std::vector<int> keep;
      for (std::size_t i = 0; i < active.size(); ++i)
        if (std::abs(coef(static_cast<int>(i))) >= threshold) keep.push_back(active[i]);
      if (keep.size() == active.size()) break;  // fixed point
      active = keep;
    }
    for (std::size_t i = 0; i < active.size(); ++i) theta(active[i], c) = coef(static_cast<int>(i));
  }
  if (all_zero != nullptr) *all_zero = theta.cwiseAbs().maxCoeff() == 0.0;
  return theta;
}

Eigen::MatrixXd estimate_derivatives(const TimedPath& state) {
  const int n = state.n_points();
  if (n < 2) throw ShapeMismatch("need at least two samples for finite differences");
  Eigen::MatrixXd d(n, state.dim());
  d.row(0) = (state.values.row(1) - state.values.row(0)) / (state.times(1) - state.times(0));
  d.row(n - 1) = (state.values.row(n - 1) - state.values.row(n - 2)) / (state.times(n - 1) - state.times(n - 2));
  for (int i = 1; i + 1 < n; ++i)
    d.row(i) = (state.values.row(i + 1) - state.values.row(i - 1)) / (state.times(i + 1) - state.times(i - 1));
  return d;
}

namespace {

void stack_dataset(const Dataset& ds, Eigen::MatrixXd& X, Eigen::MatrixXd& U, Eigen::MatrixXd& dX) {
  int rows = 0;
  for (const Trajectory& tr : ds.trajectories) rows += tr.state.n_points();
  const int dx = ds.trajectories.front().state.dim(), du = ds.trajectories.front().control.dim();
  X.resize(rows, dx);
  U.resize(rows, du);
  dX.resize(rows, dx);
  int at = 0;
  for (const Trajectory& tr : ds.trajectories) {
    const int n = tr.state.n_points();
    X.middleRows(at, n) = tr.state.values;
    U.middleRows(at, n) = interpolate_at(tr.control, tr.state.times);
    dX.middleRows(at, n) = estimate_derivatives(tr.state);
    at += n;
  }
}

}  // namespace

SindyModel sindy_fit(const Dataset& ds_norm, const SindyConfig& cfg) {
  if (ds_norm.trajectories.empty()) throw EmptySample("cannot fit on an empty dataset");
  Eigen::MatrixXd X, U, dX;
  stack_dataset(ds_norm, X, U, dX);
  SindyModel m;
  m.cfg = cfg;
  m.d_x = static_cast<int>(X.cols());
  m.d_u = static_cast<int>(U.cols());
  m.theta = stlsq(build_library(X, U, cfg.degree), dX, cfg.threshold, cfg.ridge, &m.all_zero);
  return m;
}

double sindy_one_step_mse(const SindyModel& model, const Dataset& ds_norm) {
  double acc = 0.0;
  int count = 0;
  for (const Trajectory& tr : ds_norm.trajectories) {
    Eigen::MatrixXd U = interpolate_at(tr.control, tr.state.times);
    for (int i = 0; i + 1 < tr.state.n_points(); ++i) {
      const double dt = tr.state.times(i + 1) - tr.state.times(i);
      Eigen::VectorXd pred = tr.state.values.row(i).transpose() +
                             dt * sindy_rhs(model, tr.state.values.row(i).transpose(), U.row(i).transpose());
      acc += (pred - tr.state.values.row(i + 1).transpose()).squaredNorm();
      ++count;
    }
  }
  return acc / count;
}

SindyModel sindy_fit_best(const Dataset& train_norm, const Dataset& val_norm, const std::vector<int>& degrees,
                          const std::vector<double>& thresholds, const std::vector<double>& ridges) {
  SindyModel best;
  double best_mse = std::numeric_limits<double>::infinity();
  for (int deg : degrees)
    for (double th : thresholds)
      for (double rg : ridges) {
        SindyModel m = sindy_fit(train_norm, SindyConfig{deg, th, rg});
        double mse = sindy_one_step_mse(m, val_norm);
        if (mse < best_mse) {
          best_mse = mse;
          best = m;
        }
      }
  return best;
}

Eigen::VectorXd sindy_rhs(const SindyModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
  Eigen::MatrixXd lib = build_library(x.transpose(), u.transpose(), model.cfg.degree);
  return (lib * model.theta).row(0).transpose();
}

TimedPath sindy_integrate(const SindyModel& model, const Eigen::VectorXd& x0_norm, const ControlFn& u_norm,
                          const SolverGrid& grid) {
  const double dt = grid.dt();
  Eigen::MatrixXd values(grid.n_steps + 1, x0_norm.size());
  Eigen::VectorXd x = x0_norm;
  values.row(0) = x.transpose();
  for (int k = 0; k < grid.n_steps; ++k) {
    const double t = grid.node(k);
    Eigen::VectorXd k1 = sindy_rhs(model, x, u_norm(t));
    Eigen::VectorXd k2 = sindy_rhs(model, x + 0.5 * dt * k1, u_norm(t + 0.5 * dt));
    Eigen::VectorXd k3 = sindy_rhs(model, x + 0.5 * dt * k2, u_norm(t + 0.5 * dt));
    Eigen::VectorXd k4 = sindy_rhs(model, x + dt * k3, u_norm(t + dt));
    x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 1e8)
      throw IntegrationDiverged("discovered dynamics blew up during integration");
    values.row(k + 1) = x.transpose();
  }
  return make_path(grid.nodes(), values);
}

double sindy_predict_cost(const SindyModel& model, const NormStats& norm, const Eigen::VectorXd& x0_raw,
                          const ControlPlan& plan, const ObjectiveSpec& spec, const SolverGrid& grid) {
  ControlFn u_raw = spec.dose_max.size() > 0 ? render_control(plan, spec.dose_max) : render_control(plan);
  ControlFn u_norm = [&norm, u_raw](double t) { return apply_norm_control(u_raw(t), norm); };
  TimedPath p = sindy_integrate(model, apply_norm_state(x0_raw, norm), u_norm, grid);
  return cost_of_path(invert_norm(p, norm, ChannelRole::State), plan, spec);
}

std::string sindy_equations(const SindyModel& model) {
  std::vector<std::string> labels = library_labels(model.d_x, model.d_u, model.cfg.degree);
  std::ostringstream out;
  for (int c = 0; c < model.d_x; ++c) {
    out << "dx" << (c + 1) << "/dt =";
    bool any = false;
    for (int i = 0; i < model.theta.rows(); ++i) {
      const double v = model.theta(i, c);
      if (v == 0.0) continue;
      out << (any ? (v < 0 ? " - " : " + ") : (v < 0 ? " -" : " ")) << std::abs(v);
      if (labels[i] != "1") out << "*" << labels[i];
      any = true;
    }
    if (!any) out << " 0";
    out << "\n";
  }
  return out.str();
}

}  // namespace sigctrl
