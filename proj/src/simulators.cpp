#include "sigctrl/simulators.hpp"

#include <cmath>

#include "sigctrl/errors.hpp"

namespace sigctrl {

SdeModel cancer_model(const CancerParams& p) {
  SdeModel m;
  m.d_x = 2;
  m.d_w = 1;
  m.d_u = 2;
  m.clamp_nonneg = true;
  m.drift = [p](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    const double V = x(0), C = x(1);
    const double Uc = u(0), Ur = u(1);
    Eigen::VectorXd dx(2);
    // log(K/V) is only evaluated for positive V; clamped-at-zero volumes stay absorbed.
    const double growth = V > 0.0 ? p.rho * std::log(p.K_cap / V) : 0.0;
    dx(0) = (growth - p.beta_c * C - p.alpha_r * Ur - p.beta_r * Ur * Ur) * V;
    dx(1) = -p.k_C * C + Uc;
    return dx;
  };
  m.diffusion = [p](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(2, 1);
    s(0, 0) = p.sigma_noise * x(0);  // no diffusion on the concentration channel
    return s;
  };
  return m;
}

SdeModel covid_model(const CovidParams& p) {
  SdeModel m;
  m.d_x = 4;
  m.d_w = 4;
  m.d_u = 1;
  m.clamp_nonneg = true;
  m.drift = [p](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    const double X1 = x(0), X2 = x(1), X3 = x(2), X4 = x(3);
    const double Uc = u(0);
    Eigen::VectorXd dx(4);
    dx(0) = p.k_dp * X1 - p.k_di * X1 * std::pow(X3, p.h_c) - p.k_dr * X1 * X2;
    const double hill_num = std::pow(X2, p.h_p);
    const double hill = hill_num > 0.0 ? p.k_ep * hill_num / (std::pow(p.k_cp, p.h_p) + hill_num) : 0.0;
    dx(1) = p.k_id * X1 - p.k_io * X2 + p.k_if * X1 * X2 + hill - p.k_d * X4 * X2;
    dx(2) = p.k_im * X2;
    dx(3) = p.k_kel * Uc - p.k_kel * X4;
    return dx;
  };
  m.diffusion = [p](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(4, 4);
    for (int i = 0; i < 4; ++i) s(i, i) = p.sigma_noise * x(i);
    return s;
  };
  return m;
}

double diameter_to_volume(double d_cm) { return M_PI * d_cm * d_cm * d_cm / 6.0; }

CancerStagePrior CancerStagePrior::defaults() {
  CancerStagePrior p;
  p.weights = Eigen::Vector4d(0.30, 0.25, 0.25, 0.20);
  Eigen::Vector4d medians(2.0, 3.5, 5.0, 7.0);  // cm
  p.log_diam_median = medians.array().log();
  p.log_diam_sigma = Eigen::Vector4d::Constant(0.25);
  return p;
}

double sample_cancer_volume(const CancerStagePrior& prior, Rng& rng) {
  double u = rng.uniform();
  int stage = 0;
  double acc = 0.0;
  for (; stage < prior.weights.size() - 1; ++stage) {
    acc += prior.weights(stage);
    if (u < acc) break;
  }
  const double log_d = prior.log_diam_median(stage) + prior.log_diam_sigma(stage) * rng.normal();
  return diameter_to_volume(std::exp(log_d));
}

double sample_cancer_volume_in_diameter_range(const CancerStagePrior& prior, double d_lo, double d_hi, Rng& rng) {
  const double v_lo = diameter_to_volume(d_lo), v_hi = diameter_to_volume(d_hi);
  for (int attempt = 0; attempt < 100000; ++attempt) {
    double v = sample_cancer_volume(prior, rng);
    if (v >= v_lo && v <= v_hi) return v;
  }
  throw Error("stage prior puts no mass in the requested diameter range");
}

ControlPlan sample_cancer_protocol(Rng& rng) {
  ControlPlan plan;
  plan.family = ControlFamily::CancerBangBang;
  plan.pulse_width = 1.0;
  Eigen::VectorXd chemo_t(3), radio_t(3);
  if (rng.uniform() < 0.5) {
    // sequential: weekly chemo in weeks 1-3, weekly radio in weeks 4-6
    chemo_t << 0.0, 7.0, 14.0;
    radio_t << 21.0, 28.0, 35.0;
  } else {
    // concurrent: joint administration every two weeks over six weeks
    chemo_t << 0.0, 14.0, 28.0;
    radio_t = chemo_t;
  }
  plan.timepoints = {chemo_t, radio_t};
  // bang-bang: each administration is independently off or at the full dose
  Eigen::VectorXd chemo_d(3), radio_d(3);
  for (int k = 0; k < 3; ++k) {
    chemo_d(k) = rng.uniform() < 0.5 ? 5.0 : 0.0;
    radio_d(k) = rng.uniform() < 0.5 ? 2.0 : 0.0;
  }
  plan.dosages = {chemo_d, radio_d};
  return plan;
}

ControlPlan sample_covid_treatment(Rng& rng, const CovidTreatmentTimes& times, double k_kel) {
  ControlPlan plan;
  plan.family = ControlFamily::CovidExpDecay;
  plan.k_kel = k_kel;
  const double t_star = times.candidates(rng.uniform_int(0, 2));
  const double dose = rng.uniform(0.0, 10.0);
  plan.timepoints = {Eigen::VectorXd::Constant(1, t_star)};
  plan.dosages = {Eigen::VectorXd::Constant(1, dose)};
  return plan;
}

Eigen::VectorXd sample_initial(Task task, Rng& rng, const CancerStagePrior& prior) {
  if (task == Task::Cancer) {
    Eigen::VectorXd x0(2);
    x0(0) = sample_cancer_volume(prior, rng);
    x0(1) = 0.0;  // initial chemo concentration is zero
    return x0;
  }
  Eigen::VectorXd x0(4);
  for (int i = 0; i < 4; ++i) x0(i) = rng.exponential(100.0);
  return x0;
}

SimSettings SimSettings::for_task(Task task) {
  SimSettings s;
  if (task == Task::Cancer) {
    s.sim_grid = SolverGrid{0.0, 60.0, 240};  // dt = 0.25 day, resolves 1-day pulses
    s.obs_times = Eigen::VectorXd::LinSpaced(61, 0.0, 60.0);
  } else {
    s.sim_grid = SolverGrid{0.0, 14.0, 280};  // dt = 0.05 day
    s.obs_times = Eigen::VectorXd::LinSpaced(15, 0.0, 14.0);
  }
  return s;
}

namespace {

// Record both state and control on the daily grid, then drop the same time
// points from both (the dataset observes triplets at shared times).
Trajectory observe_and_mask(const TimedPath& sim_path, const ControlFn& control, const Eigen::VectorXd& obs_times,
                            double mask_fraction, const Eigen::VectorXd& x0, Rng& rng) {
  Eigen::MatrixXd state_vals = interpolate_at(sim_path, obs_times);
  TimedPath state{obs_times, state_vals, {}};
  TimedPath masked_state = mask_uniform(state, mask_fraction, rng);
  Eigen::MatrixXd ctrl_vals(masked_state.n_points(), static_cast<int>(control(obs_times(0)).size()));
  for (int i = 0; i < masked_state.n_points(); ++i) ctrl_vals.row(i) = control(masked_state.times(i));
  Trajectory tr;
  tr.state = masked_state;
  tr.control = TimedPath{masked_state.times, ctrl_vals, {}};
  tr.x0 = x0;
  return tr;
}

std::vector<Trajectory> gen_split(const DatasetGenConfig& cfg, const SdeModel& model, const SimSettings& settings,
                                  int n, const Rng& rng) {
  std::vector<Trajectory> out;
  out.reserve(n);
  if (cfg.task == Task::Cancer) {
    for (int i = 0; i < n; ++i) {
      Rng r = rng.derive(i);
      Eigen::VectorXd x0 = sample_initial(Task::Cancer, r, cfg.stage_prior);
      ControlPlan plan = sample_cancer_protocol(r);
      ControlFn u = render_control(plan, cancer_dose_bounds_hi());
      Eigen::MatrixXd dW = brownian_increments(settings.sim_grid, model.d_w, r);
      TimedPath path = euler_maruyama(model, x0, u, settings.sim_grid, dW);
      out.push_back(observe_and_mask(path, u, settings.obs_times, cfg.mask_fraction, x0, r));
    }
  } else {
    // covid: covid_repeats trajectories per (initial condition, treatment) pair
    const int reps = std::max(1, cfg.covid_repeats);
    for (int i = 0; i < n; ++i) {
      const int group = i / reps;
      Rng group_rng = rng.derive(0x10000 + group);
      Eigen::VectorXd x0 = sample_initial(Task::Covid, group_rng);
      ControlPlan plan = sample_covid_treatment(group_rng, cfg.covid_times, cfg.covid.k_kel);
      ControlFn u = render_control(plan);
      Rng r = rng.derive(i);
      Eigen::MatrixXd dW = brownian_increments(settings.sim_grid, model.d_w, r);
      TimedPath path = euler_maruyama(model, x0, u, settings.sim_grid, dW);
      out.push_back(observe_and_mask(path, u, settings.obs_times, cfg.mask_fraction, x0, r));
    }
  }
  return out;
}

}  // namespace

std::pair<Dataset, Dataset> generate_dataset(const DatasetGenConfig& cfg, const Rng& rng) {
  if (cfg.n_train < 1 || cfg.n_val < 1) throw ConfigInvalid("dataset sizes must be >= 1");
  const SimSettings settings = SimSettings::for_task(cfg.task);
  const SdeModel model = cfg.task == Task::Cancer ? cancer_model(cfg.cancer) : covid_model(cfg.covid);

  Dataset train, val;
  train.t_s = val.t_s = settings.sim_grid.t0;
  train.t_f = val.t_f = settings.sim_grid.tf;
  train.trajectories = gen_split(cfg, model, settings, cfg.n_train, rng.derive(1));
  val.trajectories = gen_split(cfg, model, settings, cfg.n_val, rng.derive(2));

  const StateTransform transform =
      cfg.task == Task::Cancer ? StateTransform::LogThenStandardize : StateTransform::Standardize;
  const Eigen::VectorXd lo = cfg.task == Task::Cancer ? cancer_dose_bounds_lo() : covid_dose_bounds_lo();
  const Eigen::VectorXd hi = cfg.task == Task::Cancer ? cancer_dose_bounds_hi() : covid_dose_bounds_hi();
  train.norm = fit_norm(train.trajectories, transform, lo, hi);
  val.norm = train.norm;  // validation never updates the statistics
  return {train, val};
}

TimedPath mean_trajectory(const SdeModel& model, const Eigen::VectorXd& x0, const ControlPlan& plan,
                          const SolverGrid& grid, int n_samples, const Rng& rng) {
  ControlFn u = plan.family == ControlFamily::CancerBangBang ? render_control(plan, cancer_dose_bounds_hi())
                                                             : render_control(plan);
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(grid.n_steps + 1, model.d_x);
  for (int i = 0; i < n_samples; ++i) {
    Rng r = rng.derive(i);
    Eigen::MatrixXd dW = brownian_increments(grid, model.d_w, r);
    acc += euler_maruyama(model, x0, u, grid, dW).values;
  }
  acc /= static_cast<double>(n_samples);
  return TimedPath{grid.nodes(), acc, {}};
}

}  // namespace sigctrl
