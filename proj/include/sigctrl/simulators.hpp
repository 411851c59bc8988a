#pragma once

#include <Eigen/Core>

#include "sigctrl/path.hpp"
#include "sigctrl/plan.hpp"
#include "sigctrl/sde.hpp"

namespace sigctrl {

enum class Task { Cancer, Covid };

// Lung-cancer chemo/radiotherapy dynamics. Growth/kill constants are external
// literature values (tumor-growth PK/PD prior means); they are plain config
// fields so substituting other values keeps the suite valid.
struct CancerParams {
  double rho = 7.00e-5;        // growth rate, 1/day
  double K_cap = 14137.16694;  // carrying capacity, cm^3 (30 cm diameter sphere)
  double beta_c = 0.028;       // chemo cell-kill, 1/(day * concentration)
  double alpha_r = 0.0398;     // radio linear kill, 1/(day * Gy)
  double beta_r = 0.00398;     // radio quadratic kill (alpha/beta ratio 10)
  double k_C = 0.5;            // chemo clearance, 1/day
  double sigma_noise = 0.1;    // multiplicative volatility on V
};

struct CovidParams {
  double k_dp = 1, k_di = 1, k_dr = 1, k_id = 1, k_io = 1, k_if = 1;
  double k_ep = 1, k_cp = 1, k_d = 1, k_im = 1, k_kel = 1;
  double h_p = 2, h_c = 2;
  double sigma_noise = 0.1;  // per channel, multiplicative
};

// State (V, C): dV = [rho log(K/V) - beta_c C - alpha_r Ur - beta_r Ur^2] V dt + sigma V dW,
// dC = (-k_C C + Uc) dt. Controls (Uc, Ur).
SdeModel cancer_model(const CancerParams& params);

// State (viral load, innate response, adaptive immunity, lung dexamethasone),
// single dexamethasone exposure control, diagonal multiplicative noise.
SdeModel covid_model(const CovidParams& params);

inline Eigen::VectorXd cancer_dose_bounds_lo() { return Eigen::Vector2d(0.0, 0.0); }
inline Eigen::VectorXd cancer_dose_bounds_hi() { return Eigen::Vector2d(5.0, 2.0); }  // mg chemo, Gy radio
inline Eigen::VectorXd covid_dose_bounds_lo() { return Eigen::VectorXd::Constant(1, 0.0); }
inline Eigen::VectorXd covid_dose_bounds_hi() { return Eigen::VectorXd::Constant(1, 10.0); }  // mg

// Stage-conditional initial tumor volume prior: mixture over stages, each with
// a lognormal diameter distribution (cm), converted to volume (cm^3).
struct CancerStagePrior {
  Eigen::VectorXd weights;          // mixture weights, sums to 1
  Eigen::VectorXd log_diam_median;  // log of median diameter per stage
  Eigen::VectorXd log_diam_sigma;
  static CancerStagePrior defaults();
};

double diameter_to_volume(double d_cm);        // sphere, pi d^3 / 6
double sample_cancer_volume(const CancerStagePrior& prior, Rng& rng);
// Rejection-sampled into a diameter window (planning uses 2-5 cm).
double sample_cancer_volume_in_diameter_range(const CancerStagePrior& prior, double d_lo, double d_hi, Rng& rng);

// Sequential (weekly chemo weeks 1-3, then weekly radio weeks 4-6) or
// concurrent (joint chemo-radio every two weeks) protocol, prob. 1/2 each.
// Pulses are held for one day.
ControlPlan sample_cancer_protocol(Rng& rng);

// Single intervention: t* in {2, 5, 8} days, dose Unif(0, 10) mg,
// u(t) = d 1(t >= t*) exp(-k_kel (t - t*)).
struct CovidTreatmentTimes {
  Eigen::Vector3d candidates{2.0, 5.0, 8.0};
};
ControlPlan sample_covid_treatment(Rng& rng, const CovidTreatmentTimes& times = {}, double k_kel = 1.0);

Eigen::VectorXd sample_initial(Task task, Rng& rng, const CancerStagePrior& prior = CancerStagePrior::defaults());

struct SimSettings {
  SolverGrid sim_grid;          // integration grid
  Eigen::VectorXd obs_times;    // observation grid before masking (daily)
  static SimSettings for_task(Task task);
};

struct DatasetGenConfig {
  Task task = Task::Cancer;
  int n_train = 800, n_val = 128;
  double mask_fraction = 0.3;
  CancerParams cancer;
  CovidParams covid;
  CancerStagePrior stage_prior = CancerStagePrior::defaults();
  CovidTreatmentTimes covid_times;
  int covid_repeats = 5;  // trajectories per (initial condition, treatment)
};

// Simulates, records on the daily grid, masks whole triplets, and fits
// normalization on the training split only. Trajectories are stored in raw
// units; consumers normalize via the attached stats.
std::pair<Dataset, Dataset> generate_dataset(const DatasetGenConfig& cfg, const Rng& rng);

// Pointwise mean of n_samples rollouts on the grid nodes (covid tracking target).
TimedPath mean_trajectory(const SdeModel& model, const Eigen::VectorXd& x0, const ControlPlan& plan,
                          const SolverGrid& grid, int n_samples, const Rng& rng);

}  // namespace sigctrl
