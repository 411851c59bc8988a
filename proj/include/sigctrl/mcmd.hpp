#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <vector>

#include "sigctrl/path.hpp"
#include "sigctrl/plan.hpp"
#include "sigctrl/sde.hpp"
#include "sigctrl/sigkernel.hpp"

namespace sigctrl {

// Conditioning point: initial state plus the control path, both already
// preprocessed exactly like every other kernel input (normalized, augmented).
struct CmePair {
  Eigen::VectorXd x0;
  TimedPath u;
};

struct CmeConfig {
  double x0_bandwidth = 1.0;  // rbf on initial states
  SigKernelConfig sig;        // signature kernel on control paths (also the output kernel)
  double ridge = 1e-3;        // scaled by n inside the solve
};

// k_rbf(x0, x0') * k_sig(u, u')
double conditioning_kernel(const CmePair& a, const CmePair& b, const CmeConfig& cfg);

// Kernel-ridge conditional mean embedding over an anchor set. The regularized
// system (K + n*ridge*I) is factorized once; conditioning is always a solve,
// never an explicit inverse.
class CmeFit {
 public:
  CmeFit() = default;
  CmeFit(std::vector<CmePair> anchors, const CmeConfig& cfg);

  int n() const { return static_cast<int>(anchors_.size()); }
  const std::vector<CmePair>& anchors() const { return anchors_; }
  const CmeConfig& config() const { return cfg_; }
  const Eigen::MatrixXd& gram() const { return K_; }

  // k_{X0,U}(anchor_i, query) for all anchors
  Eigen::VectorXd query_vector(const CmePair& query) const;
  // w = (K + n*ridge*I)^{-1} v (columnwise for matrix right-hand sides)
  Eigen::MatrixXd solve(const Eigen::MatrixXd& v) const;

 private:
  std::vector<CmePair> anchors_;
  CmeConfig cfg_;
  Eigen::MatrixXd K_;
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;
};

CmeFit fit_cme(std::vector<CmePair> anchors, double ridge, const CmeConfig& cfg);

// Plug-in MCMD^2 between the conditional laws embedded from the paired path
// lists (true_paths[i] / model_paths[i] attached to anchor i). Negative values
// from the plug-in quadratic form are clipped at 0; *clip_count is incremented
// when that happens.
double mcmd_squared(const CmeFit& fit, const CmePair& query, const std::vector<TimedPath>& true_paths,
                    const std::vector<TimedPath>& model_paths, int* clip_count = nullptr);

// Precomputes the query-independent quadratic form so per-query evaluation
// (and its gradient, needed inside plan optimization) costs one kernel row.
class McmdRegularizer {
 public:
  McmdRegularizer() = default;
  McmdRegularizer(CmeFit fit, const std::vector<TimedPath>& true_paths, const std::vector<TimedPath>& model_paths);

  // sqrt of the clipped MCMD^2 at the query
  double value(const CmePair& query, int* clip_count = nullptr) const;
  // Also the gradient w.r.t. the query control path values (same shape as
  // query.u.values; the appended time channel column is included and zero).
  double value_and_grad(const CmePair& query, Eigen::MatrixXd& grad_u, int* clip_count = nullptr) const;

  const CmeFit& fit() const { return fit_; }

 private:
  CmeFit fit_;
  Eigen::MatrixXd M_;  // W (K_X - K_XY - K_XY^T + K_Y) W, symmetric
};

// Raw material for the regularizer: per-anchor conditioning pair and the
// paired true/model trajectories, all preprocessed (normalized, augmented over
// the full horizon).
struct RegularizerData {
  std::vector<CmePair> anchors;
  std::vector<TimedPath> true_paths, model_paths;
};

// Path restricted to [ta, tb] with linearly interpolated endpoints; channels
// (including any appended time channel) are kept as-is.
TimedPath subpath(const TimedPath& path, double ta, double tb);

// One McmdRegularizer per partition interval. Interval j conditions on (state
// at t_j, control restricted to [t_j, t_{j+1}]) and compares the restricted
// true/model path laws; j=0 conditions on the initial state, so a trivial
// partition {t_s, t_f} reduces to a single full-horizon MCMD.
struct PartitionedRegularizer {
  Eigen::VectorXd partition;  // K+1 boundary times
  std::vector<McmdRegularizer> intervals;
};

PartitionedRegularizer build_partitioned_regularizer(const RegularizerData& data, const Eigen::VectorXd& partition,
                                                     const CmeConfig& cfg);

// Sum over intervals of the per-interval discrepancy under the plan. K=1 is
// the default; for K>1 the interval start states are drawn from mc_n model
// rollouts (in normalized coordinates) and per-rollout values are averaged — a
// kernel-smoothing surrogate for exact state conditioning.
struct RegularizerContext {
  const NormStats* norm = nullptr;
  double t_s = 0.0, t_f = 0.0;
  Eigen::VectorXd obs_times;  // grid on which anchor controls were recorded
  SolverGrid rollout_grid;    // used only when the partition has K > 1
};

double regularizer_value(const SdeModel& model_normalized, const ControlPlan& plan, const Eigen::VectorXd& x0_raw,
                         const PartitionedRegularizer& reg, int mc_n, const RegularizerContext& ctx, const Rng& rng,
                         int* clip_count = nullptr);

}  // namespace sigctrl
