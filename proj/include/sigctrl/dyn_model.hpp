#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "sigctrl/path.hpp"
#include "sigctrl/sde.hpp"
#include "sigctrl/sigkernel.hpp"

namespace sigctrl {

// Differentiable SDE with diagonal diffusion (d_w = d_x): batched drift and
// per-state diffusion scale, plus the vector-Jacobian products needed for
// reverse mode over a fixed-step rollout. Columns index batch elements.
class DiffSde {
 public:
  virtual ~DiffSde() = default;
  virtual int d_x() const = 0;
  virtual int d_u() const = 0;
  // X: d_x x B, U: d_u x B -> mu, sig of shape d_x x B
  virtual void eval(const Eigen::MatrixXd& X, const Eigen::MatrixXd& U, Eigen::MatrixXd& mu,
                    Eigen::MatrixXd& sig) const = 0;
  // Accumulates into X_bar, U_bar and theta_bar (theta_bar may be null for
  // parameter-free models).
  virtual void vjp(const Eigen::MatrixXd& X, const Eigen::MatrixXd& U, const Eigen::MatrixXd& mu_bar,
                   const Eigen::MatrixXd& sig_bar, Eigen::MatrixXd& X_bar, Eigen::MatrixXd& U_bar,
                   Eigen::VectorXd* theta_bar) const = 0;
  virtual int param_count() const { return 0; }

  // Single-path adapter for the generic engine (used by the regularizer and
  // evaluation plumbing; gradients go through the batched interface).
  SdeModel as_sde_model() const;
};

// States, controls and noise stored per step for the backward sweep; network
// activations are recomputed in the sweep rather than stored.
struct RolloutCache {
  SolverGrid grid;
  std::vector<Eigen::MatrixXd> X;   // n_steps+1 of d_x x B
  std::vector<Eigen::MatrixXd> U;   // n_steps of d_u x B
  std::vector<Eigen::MatrixXd> dW;  // n_steps of d_x x B

  int batch() const { return X.empty() ? 0 : static_cast<int>(X[0].cols()); }
};

RolloutCache rollout_forward(const DiffSde& model, const Eigen::MatrixXd& X0, const std::vector<Eigen::MatrixXd>& U,
                             const SolverGrid& grid, const std::vector<Eigen::MatrixXd>& dW);

// node_bar[k] holds dL/dX_k on entry; on return X0_bar / U_bar / theta_bar
// carry the accumulated derivatives (any may be null).
void rollout_backward(const DiffSde& model, const RolloutCache& cache, std::vector<Eigen::MatrixXd> node_bar,
                      Eigen::MatrixXd* X0_bar, std::vector<Eigen::MatrixXd>* U_bar, Eigen::VectorXd* theta_bar);

// Per-state network drift and diffusion. Each state owns an independent
// 3-layer drift net (in -> h -> h -> 1, smooth-swish hidden, tanh output
// scaled by mu_max) and a 1-hidden-layer diffusion net (in -> h_d -> 1,
// squashed into (0, s_max)). Diffusion sees the control only when
// diffusion_on_control is set.
struct NetSdeSpec {
  int d_x = 1, d_u = 1;
  int drift_hidden = 64;
  int diffusion_hidden = 8;
  double mu_max = 5.0;
  double s_max = 1.0;
  bool diffusion_on_control = false;
  // Restoring drift outside |x_j| > x_box keeps rollouts inside the region
  // the normalized data occupies; without it a saturated drift integrated over
  // a long horizon overflows exp() when states are mapped back to raw scale.
  // box_gain must satisfy gain * dt < 2 for the Euler grids in use or the
  // backward sweep amplifies geometrically.
  double x_box = 6.0;
  double box_gain = 1.0;
};

class NetSde : public DiffSde {
 public:
  NetSde(const NetSdeSpec& spec, std::uint64_t init_seed);

  int d_x() const override { return spec_.d_x; }
  int d_u() const override { return spec_.d_u; }
  int param_count() const override { return static_cast<int>(theta_.size()); }
  const NetSdeSpec& spec() const { return spec_; }

  Eigen::VectorXd& params() { return theta_; }
  const Eigen::VectorXd& params() const { return theta_; }

  void eval(const Eigen::MatrixXd& X, const Eigen::MatrixXd& U, Eigen::MatrixXd& mu,
            Eigen::MatrixXd& sig) const override;
  void vjp(const Eigen::MatrixXd& X, const Eigen::MatrixXd& U, const Eigen::MatrixXd& mu_bar,
           const Eigen::MatrixXd& sig_bar, Eigen::MatrixXd& X_bar, Eigen::MatrixXd& U_bar,
           Eigen::VectorXd* theta_bar) const override;

 private:
  NetSdeSpec spec_;
  Eigen::VectorXd theta_;
};

// Conditional signature-score loss of one trajectory: m_samples model rollouts
// under (x0, u) restricted to the observed grid, scored against the observed
// path. Everything operates in normalized coordinates. If grad_theta is
// non-null it receives dL/dtheta (not accumulated).
double sig_score_loss(const DiffSde& model, const Trajectory& traj_norm, double t_s, double t_f,
                      const SolverGrid& grid, const SigKernelConfig& kcfg, int m_samples, const Rng& rng,
                      Eigen::VectorXd* grad_theta);

struct TrainConfig {
  double lr = 1e-4;
  int steps = 2000;
  int batch = 16;
  int m_samples = 8;
  int val_every = 200;
  int val_subset = 16;
  std::uint64_t seed = 0;
  SolverGrid grid;
  SigKernelConfig kernel;
  double rmsprop_alpha = 0.99;
  double rmsprop_eps = 1e-8;
  double grad_clip = 10.0;  // global-norm clip; 0 disables
};

struct TrainResult {
  Eigen::VectorXd theta_best;
  double best_val = 0.0;
  int best_step = 0;
  std::vector<double> loss_trace;              // per-step training loss
  std::vector<std::pair<int, double>> val_trace;  // (step, validation score)
};

// RMSProp on the score loss; datasets must hold normalized values. The model's
// parameters are left at the best-validation checkpoint.
TrainResult train(NetSde& model, const Dataset& train_norm, const Dataset& val_norm, const TrainConfig& cfg);

struct Checkpoint {
  NetSdeSpec spec;
  Eigen::VectorXd theta;
  NormStats norm;
  double t_s = 0.0, t_f = 0.0;
};

void save_checkpoint(const std::string& file, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& file);

}  // namespace sigctrl
