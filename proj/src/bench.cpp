#include "sigctrl/bench.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <json.hpp>
#include <sstream>

#include "sigctrl/errors.hpp"
#include "sigctrl/stats.hpp"

namespace sigctrl {

using nlohmann::json;

namespace {

void atomic_write(const std::string& file, const std::string& content) {
  const std::string tmp = file + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out << content;
  }
  std::filesystem::rename(tmp, file);
}

json load_json(const std::string& file, const char* what) {
  std::ifstream in(file);
  if (!in) throw MissingArtifact(std::string(what) + " not found at " + file + "; run the upstream subcommand first");
  json j;
  in >> j;
  return j;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
  return h;
}

double get_num(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw ConfigInvalid(std::string("config field '") + key + "' must be a number");
  return j.at(key).get<double>();
}

int default_plan_k(Task task) { return task == Task::Cancer ? 5 : 1; }

ControlFamily family_of(Task task) {
  return task == Task::Cancer ? ControlFamily::CancerBangBang : ControlFamily::CovidExpDecay;
}

Eigen::VectorXd dose_hi(Task task) {
  return task == Task::Cancer ? cancer_dose_bounds_hi() : covid_dose_bounds_hi();
}

SdeModel true_model(const ExperimentConfig& cfg) {
  return cfg.task == Task::Cancer ? cancer_model(CancerParams{}) : covid_model(CovidParams{});
}

NetSdeSpec net_spec(Task task) {
  NetSdeSpec s;
  if (task == Task::Cancer) {
    s.d_x = 2;
    s.d_u = 2;
  } else {
    s.d_x = 4;
    s.d_u = 1;
  }
  return s;
}

// Tracking reference for the covid task: the population mean trajectory under
// a fixed early standard dose, recomputable from the seed alone.
TimedPath covid_target(const ExperimentConfig& cfg, const Eigen::VectorXd& x0, const SolverGrid& grid) {
  ControlPlan ref;
  ref.family = ControlFamily::CovidExpDecay;
  ref.timepoints.push_back(Eigen::VectorXd::Constant(1, 2.0));
  ref.dosages.push_back(Eigen::VectorXd::Constant(1, 5.0));
  return mean_trajectory(covid_model(CovidParams{}), x0, ref, grid, 50, Rng(cfg.seed).derive(0x7c01dull));
}

ObjectiveSpec objective_for(const ExperimentConfig& cfg, const Eigen::VectorXd& x0, const SolverGrid& grid) {
  ObjectiveSpec spec;
  spec.task = cfg.objective;
  spec.t0 = grid.t0;
  spec.tf = grid.tf;
  spec.dose_max = dose_hi(cfg.task);
  if (cfg.objective == ObjectiveTask::CancerRelative) spec.v_target = 0.3 * x0(0);
  if (cfg.objective == ObjectiveTask::CovidTrack) spec.track_target = covid_target(cfg, x0, grid);
  return spec;
}

json plan_to_json(const ControlPlan& p) {
  json j;
  j["family"] = p.family == ControlFamily::CancerBangBang ? "cancer-bangbang" : "covid-expdecay";
  j["pulse_width"] = p.pulse_width;
  j["k_kel"] = p.k_kel;
  for (int c = 0; c < p.n_channels(); ++c) {
    j["timepoints"].push_back(std::vector<double>(p.timepoints[c].begin(), p.timepoints[c].end()));
    j["dosages"].push_back(std::vector<double>(p.dosages[c].begin(), p.dosages[c].end()));
  }
  return j;
}

ControlPlan plan_from_json(const json& j) {
  ControlPlan p;
  p.family = j.at("family") == "cancer-bangbang" ? ControlFamily::CancerBangBang : ControlFamily::CovidExpDecay;
  p.pulse_width = j.at("pulse_width").get<double>();
  p.k_kel = j.at("k_kel").get<double>();
  for (const auto& tp : j.at("timepoints")) {
    std::vector<double> v = tp.get<std::vector<double>>();
    p.timepoints.push_back(Eigen::Map<Eigen::VectorXd>(v.data(), v.size()));
  }
  for (const auto& d : j.at("dosages")) {
    std::vector<double> v = d.get<std::vector<double>>();
    p.dosages.push_back(Eigen::Map<Eigen::VectorXd>(v.data(), v.size()));
  }
  return p;
}

json path_to_json(const TimedPath& p) {
  json j;
  j["times"] = std::vector<double>(p.times.begin(), p.times.end());
  for (int i = 0; i < p.n_points(); ++i)
    j["values"].push_back(std::vector<double>(p.values.row(i).begin(), p.values.row(i).end()));
  return j;
}

TimedPath path_from_json(const json& j) {
  std::vector<double> t = j.at("times").get<std::vector<double>>();
  Eigen::MatrixXd v(t.size(), j.at("values").at(0).size());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    std::vector<double> row = j.at("values").at(i).get<std::vector<double>>();
    v.row(i) = Eigen::Map<Eigen::VectorXd>(row.data(), row.size()).transpose();
  }
  return make_path(t, v);
}

ControlPlan init_plan(const ExperimentConfig& cfg, const SolverGrid& grid, Rng& rng) {
  const Eigen::VectorXd hi = dose_hi(cfg.task);
  const int K = cfg.plan_k > 0 ? cfg.plan_k : default_plan_k(cfg.task);
  ControlPlan p;
  p.family = family_of(cfg.task);
  for (int c = 0; c < hi.size(); ++c) {
    Eigen::VectorXd tp(K), d(K);
    for (int k = 0; k < K; ++k) {
      tp(k) = rng.uniform(grid.t0, grid.tf);
      d(k) = rng.uniform(0.1, 0.3) * hi(c);
    }
    p.timepoints.push_back(tp);
    p.dosages.push_back(d);
  }
  return p;
}

// Masking can drop the endpoints of an observed path; extend it to span
// [t0, tf] by holding the boundary values so interval restriction stays valid.
TimedPath pad_span(const TimedPath& p, double t0, double tf) {
  std::vector<double> ts;
  std::vector<Eigen::VectorXd> vs;
  if (p.first_time() > t0) {
    ts.push_back(t0);
    vs.push_back(p.values.row(0).transpose());
  }
  for (Eigen::Index i = 0; i < p.times.size(); ++i) {
    ts.push_back(p.times(i));
    vs.push_back(p.values.row(i).transpose());
  }
  if (p.last_time() < tf) {
    ts.push_back(tf);
    vs.push_back(p.values.row(p.values.rows() - 1).transpose());
  }
  TimedPath out;
  out.times = Eigen::Map<const Eigen::VectorXd>(ts.data(), static_cast<Eigen::Index>(ts.size()));
  out.values.resize(static_cast<Eigen::Index>(vs.size()), p.values.cols());
  for (std::size_t i = 0; i < vs.size(); ++i) out.values.row(static_cast<Eigen::Index>(i)) = vs[i].transpose();
  return out;
}

// Anchor set for the distribution penalty: the validation trajectories, with
// model paths rolled out under each anchor's own observed control.
RegularizerData regularizer_data(const Dataset& val_raw, const NetSde& net, const SolverGrid& grid,
                                 std::uint64_t seed) {
  const NormStats& norm = val_raw.norm;
  SdeModel mn = net.as_sde_model();
  RegularizerData data;
  int i = 0;
  for (const Trajectory& tr : val_raw.trajectories) {
    TimedPath u_norm = pad_span(apply_norm(tr.control, norm, ChannelRole::Control), val_raw.t_s, val_raw.t_f);
    CmePair a;
    a.x0 = apply_norm_state(tr.x0, norm);
    a.u = time_augment(u_norm, val_raw.t_s, val_raw.t_f);
    data.anchors.push_back(a);
    data.true_paths.push_back(time_augment(
        pad_span(apply_norm(tr.state, norm, ChannelRole::State), val_raw.t_s, val_raw.t_f), val_raw.t_s, val_raw.t_f));

    ControlFn ufn = [&u_norm](double t) {
      return linear_interpolate(u_norm, std::clamp(t, u_norm.first_time(), u_norm.last_time()));
    };
    Rng ri = Rng(seed).derive(0xA0000000ull + i++);
    Eigen::MatrixXd noise = brownian_increments(grid, mn.d_w, ri);
    TimedPath rolled = euler_maruyama(mn, a.x0, ufn, grid, noise);
    const Eigen::VectorXd& anchor_times = data.true_paths.back().times;
    data.model_paths.push_back(
        time_augment(make_path(anchor_times, interpolate_at(rolled, anchor_times)), val_raw.t_s, val_raw.t_f));
  }
  return data;
}

}  // namespace

ExperimentConfig load_config(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw ConfigInvalid("config file not found: " + file);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigInvalid(std::string("config is not valid JSON: ") + e.what());
  }

  static const std::vector<std::string> known{
      "task",       "objective",     "n_train",       "n_val",         "mask_fraction",  "train_steps",
      "batch",      "m_samples",     "train_lr",      "val_every",     "train_grid_steps", "opt_lr",
      "kernel_bandwidth",
      "opt_iterations", "opt_mc_n",  "lambdas",       "k_intervals",   "n_initial_conditions", "plan_k",
      "library_size", "eval_rollouts", "pred_rollouts", "seed"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigInvalid("unknown config field '" + key + "'");
  }

  ExperimentConfig cfg;
  std::string task = j.value("task", "cancer");
  if (task == "cancer")
    cfg.task = Task::Cancer;
  else if (task == "covid")
    cfg.task = Task::Covid;
  else
    throw ConfigInvalid("task must be 'cancer' or 'covid', got '" + task + "'");

  std::string obj = j.value("objective", cfg.task == Task::Cancer ? "cancer-relative" : "covid-track");
  if (obj == "cancer-explicit")
    cfg.objective = ObjectiveTask::CancerExplicit;
  else if (obj == "cancer-relative")
    cfg.objective = ObjectiveTask::CancerRelative;
  else if (obj == "covid-track")
    cfg.objective = ObjectiveTask::CovidTrack;
  else
    throw ConfigInvalid("unknown objective '" + obj + "'");
  if ((cfg.objective == ObjectiveTask::CovidTrack) != (cfg.task == Task::Covid))
    throw ConfigInvalid("objective '" + obj + "' does not belong to task '" + task + "'");

  cfg.n_train = static_cast<int>(get_num(j, "n_train", cfg.n_train));
  cfg.n_val = static_cast<int>(get_num(j, "n_val", cfg.n_val));
  cfg.mask_fraction = get_num(j, "mask_fraction", cfg.mask_fraction);
  cfg.train_steps = static_cast<int>(get_num(j, "train_steps", cfg.train_steps));
  cfg.batch = static_cast<int>(get_num(j, "batch", cfg.batch));
  cfg.m_samples = static_cast<int>(get_num(j, "m_samples", cfg.m_samples));
  cfg.train_lr = get_num(j, "train_lr", cfg.train_lr);
  cfg.val_every = static_cast<int>(get_num(j, "val_every", cfg.val_every));
  cfg.train_grid_steps = static_cast<int>(get_num(j, "train_grid_steps", cfg.train_grid_steps));
  cfg.opt_lr = get_num(j, "opt_lr", cfg.task == Task::Cancer ? 5e-2 : 1e-2);
  cfg.opt_iterations = static_cast<int>(get_num(j, "opt_iterations", cfg.opt_iterations));
  cfg.opt_mc_n = static_cast<int>(get_num(j, "opt_mc_n", cfg.opt_mc_n));
  if (j.contains("lambdas")) cfg.lambdas = j.at("lambdas").get<std::vector<double>>();
  cfg.k_intervals = static_cast<int>(get_num(j, "k_intervals", cfg.k_intervals));
  cfg.n_initial_conditions = static_cast<int>(get_num(j, "n_initial_conditions", cfg.n_initial_conditions));
  cfg.plan_k = static_cast<int>(get_num(j, "plan_k", cfg.plan_k));
  cfg.library_size = static_cast<int>(get_num(j, "library_size", cfg.library_size));
  cfg.eval_rollouts = static_cast<int>(get_num(j, "eval_rollouts", cfg.eval_rollouts));
  cfg.pred_rollouts = static_cast<int>(get_num(j, "pred_rollouts", cfg.pred_rollouts));
  cfg.seed = static_cast<std::uint64_t>(get_num(j, "seed", 0.0));

  if (cfg.n_train < 1 || cfg.n_val < 1) throw ConfigInvalid("dataset sizes must be positive");
  if (cfg.mask_fraction < 0.0 || cfg.mask_fraction >= 1.0) throw ConfigInvalid("mask_fraction must be in [0, 1)");
  if (cfg.train_steps < 1 || cfg.opt_iterations < 1) throw ConfigInvalid("step counts must be positive");
  if (cfg.opt_mc_n < 1 || cfg.eval_rollouts < 1) throw ConfigInvalid("rollout counts must be positive");
  for (double l : cfg.lambdas)
    if (l < 0.0) throw ConfigInvalid("lambda values must be nonnegative");
  if (cfg.lambdas.empty()) throw ConfigInvalid("lambdas must not be empty");
  return cfg;
}

void apply_full_scale(ExperimentConfig& cfg) {
  cfg.n_train = 800;
  cfg.n_val = 128;
  cfg.train_steps = cfg.task == Task::Cancer ? 15000 : 30000;
  cfg.eval_rollouts = 200;
  cfg.pred_rollouts = 200;
}

Dataset normalized(const Dataset& ds) {
  Dataset out = ds;
  for (Trajectory& tr : out.trajectories) {
    tr.state = apply_norm(tr.state, ds.norm, ChannelRole::State);
    tr.control = apply_norm(tr.control, ds.norm, ChannelRole::Control);
    tr.x0 = apply_norm_state(tr.x0, ds.norm);
  }
  return out;
}

std::string train_file(const std::string& out) { return out + "/train.json"; }
std::string val_file(const std::string& out) { return out + "/val.json"; }
std::string checkpoint_file(const std::string& out) { return out + "/checkpoint.json"; }
std::string plans_file(const std::string& out) { return out + "/plans.json"; }

void cmd_simulate(const ExperimentConfig& cfg, const std::string& out_dir) {
  DatasetGenConfig gen;
  gen.task = cfg.task;
  gen.n_train = cfg.n_train;
  gen.n_val = cfg.n_val;
  gen.mask_fraction = cfg.mask_fraction;
  auto [train_ds, val_ds] = generate_dataset(gen, Rng(cfg.seed));
  std::filesystem::create_directories(out_dir);
  save_dataset(train_file(out_dir) + ".tmp", train_ds);
  std::filesystem::rename(train_file(out_dir) + ".tmp", train_file(out_dir));
  save_dataset(val_file(out_dir) + ".tmp", val_ds);
  std::filesystem::rename(val_file(out_dir) + ".tmp", val_file(out_dir));
}

void cmd_train(const ExperimentConfig& cfg, const std::string& out_dir) {
  std::ifstream probe(train_file(out_dir));
  if (!probe) throw MissingArtifact("dataset not found in " + out_dir + "; run 'simulate' first");
  Dataset train_raw = load_dataset(train_file(out_dir));
  Dataset val_raw = load_dataset(val_file(out_dir));
  Dataset train_n = normalized(train_raw), val_n = normalized(val_raw);

  SolverGrid grid = SimSettings::for_task(cfg.task).sim_grid;
  if (cfg.train_grid_steps > 0) grid.n_steps = cfg.train_grid_steps;

  NetSde net(net_spec(cfg.task), Rng(cfg.seed).derive(0x1417ull).uniform_int(1, 1 << 30));
  TrainConfig tc;
  tc.lr = cfg.train_lr;
  tc.steps = cfg.train_steps;
  tc.batch = cfg.batch;
  tc.m_samples = cfg.m_samples;
  tc.val_every = cfg.val_every;
  tc.seed = cfg.seed;
  tc.grid = grid;
  TrainResult res = train(net, train_n, val_n, tc);

  Checkpoint ck;
  ck.spec = net.spec();
  ck.theta = res.theta_best;
  ck.norm = train_raw.norm;
  ck.t_s = train_raw.t_s;
  ck.t_f = train_raw.t_f;
  save_checkpoint(checkpoint_file(out_dir) + ".tmp", ck);
  std::filesystem::rename(checkpoint_file(out_dir) + ".tmp", checkpoint_file(out_dir));

  std::ostringstream csv;
  csv << "step,train_loss\n";
  for (std::size_t i = 0; i < res.loss_trace.size(); ++i) csv << i << "," << res.loss_trace[i] << "\n";
  for (const auto& [step, vs] : res.val_trace) csv << "# val," << step << "," << vs << "\n";
  csv << "# best_val," << res.best_val << " at step " << res.best_step << "\n";
  atomic_write(out_dir + "/train_trace.csv", csv.str());
}

void cmd_optimize(const ExperimentConfig& cfg, const std::string& out_dir) {
  Checkpoint ck = load_checkpoint(checkpoint_file(out_dir));
  Dataset val_raw = load_dataset(val_file(out_dir));
  NetSde net(ck.spec, 1);
  net.params() = ck.theta;

  SimSettings sim = SimSettings::for_task(cfg.task);
  SolverGrid grid = sim.sim_grid;
  if (cfg.train_grid_steps > 0) grid.n_steps = cfg.train_grid_steps;

  RegularizerData rdata = regularizer_data(val_raw, net, grid, cfg.seed);
  Eigen::VectorXd partition = Eigen::VectorXd::LinSpaced(cfg.k_intervals + 1, ck.t_s, ck.t_f);
  CmeConfig ccfg;
  PartitionedRegularizer reg = build_partitioned_regularizer(rdata, partition, ccfg);
  RegularizerContext ctx;
  ctx.norm = &ck.norm;
  ctx.t_s = ck.t_s;
  ctx.t_f = ck.t_f;
  ctx.obs_times = sim.obs_times;
  ctx.rollout_grid = grid;

  json out;
  out["task"] = cfg.task == Task::Cancer ? "cancer" : "covid";
  out["seed"] = cfg.seed;
  std::ostringstream traces;
  traces << "ic,lambda,iteration,objective\n";

  for (int ic = 0; ic < cfg.n_initial_conditions; ++ic) {
    Rng ic_rng = Rng(cfg.seed).derive(0x1C000000ull + ic);
    Eigen::VectorXd x0 = sample_initial(cfg.task, ic_rng);
    ObjectiveSpec spec = objective_for(cfg, x0, grid);
    ControlPlan start = init_plan(cfg, grid, ic_rng);

    json ic_rec;
    ic_rec["x0"] = std::vector<double>(x0.begin(), x0.end());
    ic_rec["v_target"] = spec.v_target;
    for (std::size_t li = 0; li < cfg.lambdas.size(); ++li) {
      OptimizerConfig oc;
      oc.lr = cfg.opt_lr;
      oc.iterations = cfg.opt_iterations;
      oc.mc_n = cfg.opt_mc_n;
      oc.lambda_reg = cfg.lambdas[li];
      oc.seed = Rng(cfg.seed).derive(0x0B000000ull + ic * 100 + li).uniform_int(1, 1 << 30);
      OptimizeResult res = optimize_plan(net, ck.norm, x0, start, spec, oc, &reg, &ctx, grid);

      ConservativeBreakdown parts;
      conservative_cost(net, ck.norm, x0, res.plan, spec, 1.0, &reg, &ctx, cfg.opt_mc_n, grid,
                        Rng(cfg.seed).derive(0x0C000000ull + ic * 100 + li), &parts);

      // model-predicted trajectories under the optimized plan, for the
      // distribution-shift report (evaluate never touches the model itself)
      ControlFn u_raw = render_control(res.plan, spec.dose_max);
      ControlFn u_n = [&ck, u_raw](double t) { return apply_norm_control(u_raw(t), ck.norm); };
      SdeModel mn = net.as_sde_model();
      std::vector<TimedPath> pred =
          rollout_batch(mn, apply_norm_state(x0, ck.norm), u_n, grid, cfg.pred_rollouts,
                        Rng(cfg.seed).derive(0x0D000000ull + ic * 100 + li));

      json lrec;
      lrec["lambda"] = cfg.lambdas[li];
      lrec["plan"] = plan_to_json(res.plan);
      lrec["best_objective"] = res.best_value;
      lrec["best_iteration"] = res.best_iteration;
      lrec["model_cost"] = parts.estimate;
      lrec["reg_value"] = parts.reg;
      for (const TimedPath& p : pred)
        lrec["predicted_paths"].push_back(
            path_to_json(make_path(sim.obs_times, interpolate_at(invert_norm(p, ck.norm, ChannelRole::State),
                                                                 sim.obs_times))));
      ic_rec["by_lambda"].push_back(lrec);
      for (std::size_t k = 0; k < res.trace.size(); ++k)
        traces << ic << "," << cfg.lambdas[li] << "," << k << "," << res.trace[k] << "\n";
    }
    out["initial_conditions"].push_back(ic_rec);
  }
  std::filesystem::create_directories(out_dir);
  atomic_write(plans_file(out_dir), out.dump(1));
  atomic_write(out_dir + "/opt_traces.csv", traces.str());
}

void cmd_evaluate(const ExperimentConfig& cfg, const std::string& out_dir) {
  json plans = load_json(plans_file(out_dir), "plans artifact");
  Dataset train_raw = load_dataset(train_file(out_dir));  // normalization stats only
  SdeModel truth = true_model(cfg);
  SimSettings sim = SimSettings::for_task(cfg.task);
  SolverGrid grid = sim.sim_grid;

  SigKernelConfig kcfg;
  json report;
  report["task"] = plans.at("task");
  report["seed"] = cfg.seed;
  report["config_hash"] = fnv1a(plans.dump());
  report["note"] =
      "desk-scale protocol: absolute cost magnitudes are not comparable to full-scale results; "
      "the lambda-sweep comparison below is the supported readout";
  std::ostringstream csv;
  csv << "ic,lambda,true_cost,relative_improvement,model_cost,reg_value,mmd_squared\n";

  std::map<double, std::vector<double>> by_lambda;
  int ic = 0;
  for (const json& ic_rec : plans.at("initial_conditions")) {
    std::vector<double> x0v = ic_rec.at("x0").get<std::vector<double>>();
    Eigen::VectorXd x0 = Eigen::Map<Eigen::VectorXd>(x0v.data(), x0v.size());
    ObjectiveSpec spec = objective_for(cfg, x0, grid);

    json ic_out;
    ic_out["x0"] = ic_rec.at("x0");
    double cost0 = 0.0;
    int li = 0;
    for (const json& lrec : ic_rec.at("by_lambda")) {
      const double lambda = lrec.at("lambda").get<double>();
      ControlPlan plan = plan_from_json(lrec.at("plan"));
      double cost = estimate_cost(truth, x0, plan, spec, cfg.eval_rollouts, grid,
                                  Rng(cfg.seed).derive(0xE0000000ull + ic * 100 + li));
      if (li == 0) cost0 = cost;

      // distribution shift between true and model-predicted trajectories
      std::vector<TimedPath> true_paths, pred_paths;
      ControlFn u = render_control(plan, spec.dose_max);
      std::vector<TimedPath> rolled = rollout_batch(truth, x0, u, grid, cfg.pred_rollouts,
                                                    Rng(cfg.seed).derive(0xF0000000ull + ic * 100 + li));
      for (const TimedPath& p : rolled)
        true_paths.push_back(kernel_preprocess(
            apply_norm(make_path(sim.obs_times, interpolate_at(p, sim.obs_times)), train_raw.norm,
                       ChannelRole::State),
            kcfg, train_raw.t_s, train_raw.t_f));
      for (const json& pj : lrec.at("predicted_paths"))
        pred_paths.push_back(kernel_preprocess(apply_norm(path_from_json(pj), train_raw.norm, ChannelRole::State),
                                               kcfg, train_raw.t_s, train_raw.t_f));
      double mmd = mmd_squared(true_paths, pred_paths, kcfg);

      double rel = cost0 != 0.0 ? (cost - cost0) / cost0 : 0.0;
      json lout;
      lout["lambda"] = lambda;
      lout["true_cost"] = cost;
      lout["relative_improvement"] = rel;
      lout["model_cost"] = lrec.at("model_cost");
      lout["reg_value"] = lrec.at("reg_value");
      lout["mmd_squared"] = mmd;
      ic_out["by_lambda"].push_back(lout);
      by_lambda[lambda].push_back(cost);
      csv << ic << "," << lambda << "," << cost << "," << rel << "," << lrec.at("model_cost").get<double>() << ","
          << lrec.at("reg_value").get<double>() << "," << mmd << "\n";
      ++li;
    }
    report["initial_conditions"].push_back(ic_out);
    ++ic;
  }
  for (auto& [lambda, costs] : by_lambda) {
    json m;
    m["lambda"] = lambda;
    m["median_true_cost"] = median(costs);
    report["medians"].push_back(m);
  }
  atomic_write(out_dir + "/report.json", report.dump(1));
  atomic_write(out_dir + "/report.csv", csv.str());
}

void cmd_library(const ExperimentConfig& cfg, const std::string& out_dir) {
  Checkpoint ck = load_checkpoint(checkpoint_file(out_dir));
  Dataset train_raw = load_dataset(train_file(out_dir));
  Dataset val_raw = load_dataset(val_file(out_dir));
  NetSde net(ck.spec, 1);
  net.params() = ck.theta;
  SdeModel truth = true_model(cfg);
  SolverGrid grid = SimSettings::for_task(cfg.task).sim_grid;

  Eigen::VectorXd hi = dose_hi(cfg.task);
  const int K = cfg.plan_k > 0 ? cfg.plan_k : default_plan_k(cfg.task);
  std::vector<ControlPlan> lib = sample_control_library(family_of(cfg.task), cfg.library_size,
                                                        static_cast<int>(hi.size()), K, ck.t_s, ck.t_f, hi,
                                                        Rng(cfg.seed).derive(0x11Bull));

  Rng ic_rng = Rng(cfg.seed).derive(0x11B0ull);
  Eigen::VectorXd x0 = sample_initial(cfg.task, ic_rng);
  ObjectiveSpec spec = objective_for(cfg, x0, grid);

  SindyModel sindy = sindy_fit_best(normalized(train_raw), normalized(val_raw), {1, 2}, {0.1, 0.2, 0.5},
                                    {0.1, 0.2, 0.5});

  std::vector<double> pred_model, pred_sindy, true_cost;
  for (std::size_t i = 0; i < lib.size(); ++i) {
    pred_model.push_back(estimate_cost(net, ck.norm, x0, lib[i], spec, cfg.pred_rollouts, grid,
                                       Rng(cfg.seed).derive(0x12000000ull + i)));
    double sc;
    try {
      sc = sindy_predict_cost(sindy, ck.norm, x0, lib[i], spec, grid);
    } catch (const IntegrationDiverged&) {
      sc = 1e12;  // diverged prediction ranks last
    }
    pred_sindy.push_back(sc);
    true_cost.push_back(estimate_cost(truth, x0, lib[i], spec, cfg.eval_rollouts, grid,
                                      Rng(cfg.seed).derive(0x13000000ull + i)));
  }

  json report;
  report["x0"] = std::vector<double>(x0.begin(), x0.end());
  report["seed"] = cfg.seed;
  report["spearman_model"] = spearman(pred_model, true_cost);
  report["spearman_sindy"] = spearman(pred_sindy, true_cost);
  report["sindy_equations"] = sindy_equations(sindy);
  report["predicted_model"] = pred_model;
  report["predicted_sindy"] = pred_sindy;
  report["true_cost"] = true_cost;
  std::ostringstream csv;
  csv << "plan,predicted_model,predicted_sindy,true_cost\n";
  for (std::size_t i = 0; i < lib.size(); ++i) {
    report["plans"].push_back(plan_to_json(lib[i]));
    csv << i << "," << pred_model[i] << "," << pred_sindy[i] << "," << true_cost[i] << "\n";
  }
  atomic_write(out_dir + "/library.json", report.dump(1));
  atomic_write(out_dir + "/library.csv", csv.str());
}

int run_cli(const CliOptions& opts) {
  try {
    ExperimentConfig cfg = load_config(opts.config_path);
    if (opts.seed_set) cfg.seed = opts.seed;
    if (opts.full_scale) apply_full_scale(cfg);
    std::filesystem::create_directories(opts.out_dir);

    if (opts.command == "simulate")
      cmd_simulate(cfg, opts.out_dir);
    else if (opts.command == "train")
      cmd_train(cfg, opts.out_dir);
    else if (opts.command == "optimize")
      cmd_optimize(cfg, opts.out_dir);
    else if (opts.command == "evaluate")
      cmd_evaluate(cfg, opts.out_dir);
    else if (opts.command == "library")
      cmd_library(cfg, opts.out_dir);
    else
      throw ConfigInvalid("unknown subcommand '" + opts.command + "'");
    return 0;
  } catch (const ConfigInvalid& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const MissingArtifact& e) {
    std::fprintf(stderr, "missing artifact: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  }
}

}  // namespace sigctrl
