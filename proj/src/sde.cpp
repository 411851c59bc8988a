#include "sigctrl/sde.hpp"

#include <cmath>
#include <string>

#include "sigctrl/errors.hpp"

namespace sigctrl {

Eigen::MatrixXd brownian_increments(const SolverGrid& grid, int d_w, Rng& rng) {
  const double sd = std::sqrt(grid.dt());
  Eigen::MatrixXd dW(grid.n_steps, d_w);
  for (int k = 0; k < grid.n_steps; ++k)
    for (int j = 0; j < d_w; ++j) dW(k, j) = sd * rng.normal();
  return dW;
}

TimedPath euler_maruyama(const SdeModel& model, const Eigen::VectorXd& x0, const ControlFn& control,
                         const SolverGrid& grid, const Eigen::MatrixXd& noise) {
  if (x0.size() != model.d_x) throw SizeMismatch("x0 dimension mismatch");
  if (noise.rows() != grid.n_steps || noise.cols() != model.d_w)
    throw SizeMismatch("noise matrix shape mismatch");

  const double dt = grid.dt();
  Eigen::MatrixXd values(grid.n_steps + 1, model.d_x);
  Eigen::VectorXd x = x0;
  values.row(0) = x;
  for (int k = 0; k < grid.n_steps; ++k) {
    const Eigen::VectorXd u = control(grid.node(k));
    x += model.drift(x, u) * dt + model.diffusion(x, u) * noise.row(k).transpose();
    if (model.clamp_nonneg) x = x.array().max(0.0).matrix();
    if (!x.allFinite()) throw NonFiniteState("integration diverged at step " + std::to_string(k + 1));
    values.row(k + 1) = x;
  }
  return TimedPath{grid.nodes(), values, {}};
}

std::vector<TimedPath> rollout_batch(const SdeModel& model, const Eigen::VectorXd& x0, const ControlFn& control,
                                     const SolverGrid& grid, int n_paths, const Rng& rng) {
  std::vector<TimedPath> paths;
  paths.reserve(n_paths);
  for (int i = 0; i < n_paths; ++i) {
    Rng path_rng = rng.derive(static_cast<std::uint64_t>(i));
    Eigen::MatrixXd dW = brownian_increments(grid, model.d_w, path_rng);
    try {
      paths.push_back(euler_maruyama(model, x0, control, grid, dW));
    } catch (const NonFiniteState& e) {
      throw NonFiniteState(std::string(e.what()) + " (path " + std::to_string(i) + ")");
    }
  }
  return paths;
}

}  // namespace sigctrl
