#pragma once

#include <string>
#include <vector>

#include "sigctrl/control_opt.hpp"
#include "sigctrl/path.hpp"

namespace sigctrl {

struct SindyConfig {
  int degree = 2;          // polynomial library degree, 1 or 2
  double threshold = 0.1;  // coefficient cutoff
  double ridge = 0.1;      // regularization of each least-squares refit
};

// Sparse polynomial ODE dx/dt = Theta(x, u)^T theta fitted per state channel.
struct SindyModel {
  SindyConfig cfg;
  int d_x = 0, d_u = 0;
  Eigen::MatrixXd theta;  // library terms x d_x
  bool all_zero = false;  // every coefficient thresholded away
};

int library_size(int d_x, int d_u, int degree);
std::vector<std::string> library_labels(int d_x, int d_u, int degree);

// Column order: constant, then z_1..z_m linear terms with z = (x, u), then for
// degree 2 all products z_i z_j with i <= j in row-major pair order.
Eigen::MatrixXd build_library(const Eigen::MatrixXd& states, const Eigen::MatrixXd& controls, int degree);

// Sequentially thresholded ridge least squares, iterated to a fixed point
// (at most 20 sweeps), independently per derivative column.
Eigen::MatrixXd stlsq(const Eigen::MatrixXd& library, const Eigen::MatrixXd& derivatives, double threshold,
                      double ridge, bool* all_zero = nullptr);

// Central differences on the path's own (irregular) grid, one-sided ends.
Eigen::MatrixXd estimate_derivatives(const TimedPath& state);

// Population-level fit on a normalized dataset; controls are interpolated to
// the state observation times.
SindyModel sindy_fit(const Dataset& ds_norm, const SindyConfig& cfg);

// Mean squared one-step-ahead prediction error over consecutive observations.
double sindy_one_step_mse(const SindyModel& model, const Dataset& ds_norm);

// Grid search selecting the configuration with the lowest validation MSE.
SindyModel sindy_fit_best(const Dataset& train_norm, const Dataset& val_norm, const std::vector<int>& degrees,
                          const std::vector<double>& thresholds, const std::vector<double>& ridges);

Eigen::VectorXd sindy_rhs(const SindyModel& model, const Eigen::VectorXd& x, const Eigen::VectorXd& u);

// RK4 integration of the discovered ODE (normalized coordinates).
TimedPath sindy_integrate(const SindyModel& model, const Eigen::VectorXd& x0_norm, const ControlFn& u_norm,
                          const SolverGrid& grid);

// Plan cost predicted by the deterministic discovered dynamics.
double sindy_predict_cost(const SindyModel& model, const NormStats& norm, const Eigen::VectorXd& x0_raw,
                          const ControlPlan& plan, const ObjectiveSpec& spec, const SolverGrid& grid);

std::string sindy_equations(const SindyModel& model);

}  // namespace sigctrl
