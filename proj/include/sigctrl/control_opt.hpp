#pragma once

#include <functional>
#include <vector>

#include "sigctrl/dyn_model.hpp"
#include "sigctrl/mcmd.hpp"
#include "sigctrl/plan.hpp"

namespace sigctrl {

enum class ObjectiveTask { CancerExplicit, CancerRelative, CovidTrack };

struct ObjectiveSpec {
  ObjectiveTask task = ObjectiveTask::CancerExplicit;
  double lambda_c = 1e-3, lambda_r = 1e-3;  // running-dose penalties, channels 0 / 1
  double lambda_x = 1.0 / 1000.0;           // tracking weight
  double v_target = 0.0;                    // relative-reduction target volume
  TimedPath track_target;                   // reference trajectory, raw units
  double t0 = 0.0, tf = 0.0;
  Eigen::VectorXd dose_max;  // admissible box for the rendered control (empty: unclipped)
};

// Trapezoid quadrature of the running integrand over the path's own grid plus
// the terminal term. The terminal state channel 0 is the tumor volume for the
// cancer tasks. The control enters through the plan's hard rendering.
double cost_of_path(const TimedPath& state, const ControlPlan& plan, const ObjectiveSpec& spec);

// Monte Carlo plan cost under a raw-coordinate model.
double estimate_cost(const SdeModel& model, const Eigen::VectorXd& x0, const ControlPlan& plan,
                     const ObjectiveSpec& spec, int mc_n, const SolverGrid& grid, const Rng& rng);

// Same under a learned model that lives in normalized coordinates: states and
// controls are normalized on the way in, states inverted for the cost.
double estimate_cost(const DiffSde& model, const NormStats& norm, const Eigen::VectorXd& x0_raw,
                     const ControlPlan& plan, const ObjectiveSpec& spec, int mc_n, const SolverGrid& grid,
                     const Rng& rng);

struct ConservativeBreakdown {
  double estimate = 0.0, reg = 0.0;
  int clip_count = 0;
};

// estimate + lambda_reg * regularizer; lambda_reg = 0 (or reg == nullptr)
// reduces bit-exactly to estimate_cost under the same seed.
double conservative_cost(const DiffSde& model, const NormStats& norm, const Eigen::VectorXd& x0_raw,
                         const ControlPlan& plan, const ObjectiveSpec& spec, double lambda_reg,
                         const PartitionedRegularizer* reg, const RegularizerContext* ctx, int mc_n,
                         const SolverGrid& grid, const Rng& rng, ConservativeBreakdown* parts = nullptr);

struct OptimizerConfig {
  double lr = 1e-3;
  int iterations = 5000;
  int mc_n = 10;
  double lambda_reg = 0.0;
  std::uint64_t seed = 0;
  double slope = 50.0;  // steepness of the smooth pulse surrogate
  double rmsprop_alpha = 0.99;
  double rmsprop_eps = 1e-8;
  double diverge_threshold = 1e10;
};

struct OptimizeResult {
  ControlPlan plan;           // best iterate, bounds-projected
  std::vector<double> trace;  // objective value per iteration
  double best_value = 0.0;
  int best_iteration = 0;
  int reg_clip_events = 0;
  int diverge_events = 0;  // iterations rejected for leaving the finite range
};

// Single-shooting RMSProp on phi = (timepoints, dosages). The rollout uses the
// smooth surrogate control; timepoints are projected into [t0, tf] and dosages
// into [0, dose_max] after every step. Iterates that leave the finite range
// are rejected (reverting to the best plan so far); DivergedOptimization is
// thrown only when no iterate ever produced a finite objective.
OptimizeResult optimize_plan(const DiffSde& model, const NormStats& norm, const Eigen::VectorXd& x0_raw,
                             const ControlPlan& init, const ObjectiveSpec& spec, const OptimizerConfig& cfg,
                             const PartitionedRegularizer* reg, const RegularizerContext* ctx,
                             const SolverGrid& grid);

// n candidate plans: timepoints uniform on [t0, tf], dosages uniform on
// [0.1, 0.3] of dose_max per channel, K administrations each.
std::vector<ControlPlan> sample_control_library(ControlFamily family, int n, int n_channels, int K, double t0,
                                                double tf, const Eigen::VectorXd& dose_max, const Rng& rng);

// Running integrand f(t, x) plus terminal g(x); control dependence is folded
// into f by the caller.
struct CostFunctional {
  std::function<double(double, const Eigen::VectorXd&)> running;
  std::function<double(const Eigen::VectorXd&)> terminal;
};

struct TelescopeResult {
  double delta_direct = 0.0, direct_stderr = 0.0;
  double delta_telescoped = 0.0, telescoped_stderr = 0.0;
};

// Numerical check that the cost gap J_true - J_learned equals the telescoped
// sum of one-interval discrepancies of hybrid processes (learned before t_j,
// true after), with shared-noise coupling between the two branches and nested
// Monte Carlo continuation values. Partition times are snapped to grid nodes.
TelescopeResult telescope_check(const SdeModel& true_model, const SdeModel& learned_model,
                                const Eigen::VectorXd& x0, const ControlFn& u, const CostFunctional& cost,
                                const Eigen::VectorXd& partition, int mc_n, int inner_mc, const SolverGrid& grid,
                                const Rng& rng);

}  // namespace sigctrl
