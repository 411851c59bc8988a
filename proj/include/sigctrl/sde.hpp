#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "sigctrl/path.hpp"
#include "sigctrl/rng.hpp"

namespace sigctrl {

// Drift/diffusion pair evaluated pointwise; reentrant.
struct SdeModel {
  int d_x = 0, d_w = 0, d_u = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd& x, const Eigen::VectorXd& u)> drift;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& x, const Eigen::VectorXd& u)> diffusion;  // d_x x d_w
  // Physically nonnegative states are clamped at 0 after each step.
  bool clamp_nonneg = false;
};

struct SolverGrid {
  double t0 = 0.0, tf = 1.0;
  int n_steps = 1;

  double dt() const { return (tf - t0) / n_steps; }
  double node(int k) const { return t0 + k * dt(); }
  Eigen::VectorXd nodes() const {
    Eigen::VectorXd t(n_steps + 1);
    for (int k = 0; k <= n_steps; ++k) t(k) = node(k);
    return t;
  }
};

using ControlFn = std::function<Eigen::VectorXd(double t)>;

// i.i.d. Normal(0, dt) entries, one row per step.
Eigen::MatrixXd brownian_increments(const SolverGrid& grid, int d_w, Rng& rng);

// X_{k+1} = X_k + mu(X_k, u_k) dt + sigma(X_k, u_k) dW_k on the grid nodes.
TimedPath euler_maruyama(const SdeModel& model, const Eigen::VectorXd& x0, const ControlFn& control,
                         const SolverGrid& grid, const Eigen::MatrixXd& noise);

// Path i uses increments from rng.derive(i): a deterministic function of
// (seed, i) independent of evaluation order.
std::vector<TimedPath> rollout_batch(const SdeModel& model, const Eigen::VectorXd& x0, const ControlFn& control,
                                     const SolverGrid& grid, int n_paths, const Rng& rng);

}  // namespace sigctrl
