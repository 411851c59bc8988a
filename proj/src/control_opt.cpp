#include "sigctrl/control_opt.hpp"

#include <algorithm>
#include <cmath>

#include "sigctrl/errors.hpp"

namespace sigctrl {

namespace {

double trapezoid_weight(const Eigen::VectorXd& t, int i) {
  const int n = static_cast<int>(t.size());
  if (n < 2) return 0.0;
  if (i == 0) return 0.5 * (t(1) - t(0));
  if (i == n - 1) return 0.5 * (t(n - 1) - t(n - 2));
  return 0.5 * (t(i + 1) - t(i - 1));
}

double channel_weight(const ObjectiveSpec& spec, int c) { return c == 0 ? spec.lambda_c : spec.lambda_r; }

double terminal_cost(const ObjectiveSpec& spec, const Eigen::VectorXd& x) {
  switch (spec.task) {
    case ObjectiveTask::CancerExplicit:
      return x(0) * x(0);
    case ObjectiveTask::CancerRelative: {
      double d = x(0) - spec.v_target;
      return d * d;
    }
    case ObjectiveTask::CovidTrack:
      return 0.0;
  }
  return 0.0;
}

// d terminal / d x(0)
double terminal_grad0(const ObjectiveSpec& spec, const Eigen::VectorXd& x) {
  switch (spec.task) {
    case ObjectiveTask::CancerExplicit:
      return 2.0 * x(0);
    case ObjectiveTask::CancerRelative:
      return 2.0 * (x(0) - spec.v_target);
    case ObjectiveTask::CovidTrack:
      return 0.0;
  }
  return 0.0;
}

}  // namespace

double cost_of_path(const TimedPath& state, const ControlPlan& plan, const ObjectiveSpec& spec) {
  const double tol = 1e-9 * std::max(1.0, spec.tf - spec.t0);
  if (std::abs(state.first_time() - spec.t0) > tol || std::abs(state.last_time() - spec.tf) > tol)
    throw HorizonMismatch("state path does not span the objective horizon");

  ControlFn u = spec.dose_max.size() > 0 ? render_control(plan, spec.dose_max) : render_control(plan);
  double running = 0.0;
  for (int i = 0; i < state.n_points(); ++i) {
    const double t = state.times(i);
    const double w = trapezoid_weight(state.times, i);
    double f = 0.0;
    if (spec.task == ObjectiveTask::CovidTrack) {
      Eigen::VectorXd xs = linear_interpolate(spec.track_target, t);
      f = spec.lambda_x * (state.values.row(i).transpose() - xs).squaredNorm();
    } else {
      Eigen::VectorXd uv = u(t);
      for (int c = 0; c < uv.size(); ++c) f += channel_weight(spec, c) * uv(c) * uv(c);
    }
    running += w * f;
  }
  return running + terminal_cost(spec, state.values.row(state.n_points() - 1).transpose());
}

double estimate_cost(const SdeModel& model, const Eigen::VectorXd& x0, const ControlPlan& plan,
                     const ObjectiveSpec& spec, int mc_n, const SolverGrid& grid, const Rng& rng) {
  ControlFn u = spec.dose_max.size() > 0 ? render_control(plan, spec.dose_max) : render_control(plan);
  std::vector<TimedPath> paths = rollout_batch(model, x0, u, grid, mc_n, rng);
  double acc = 0.0;
  for (const TimedPath& p : paths) acc += cost_of_path(p, plan, spec);
  return acc / mc_n;
}

double estimate_cost(const DiffSde& model, const NormStats& norm, const Eigen::VectorXd& x0_raw,
                     const ControlPlan& plan, const ObjectiveSpec& spec, int mc_n, const SolverGrid& grid,
                     const Rng& rng) {
  ControlFn u_raw = spec.dose_max.size() > 0 ? render_control(plan, spec.dose_max) : render_control(plan);
  ControlFn u_norm = [&norm, u_raw](double t) { return apply_norm_control(u_raw(t), norm); };
  SdeModel mn = model.as_sde_model();
  std::vector<TimedPath> paths = rollout_batch(mn, apply_norm_state(x0_raw, norm), u_norm, grid, mc_n, rng);
  double acc = 0.0;
  for (const TimedPath& p : paths) acc += cost_of_path(invert_norm(p, norm, ChannelRole::State), plan, spec);
  return acc / mc_n;
}

double conservative_cost(const DiffSde& model, const NormStats& norm, const Eigen::VectorXd& x0_raw,
                         const ControlPlan& plan, const ObjectiveSpec& spec, double lambda_reg,
                         const PartitionedRegularizer* reg, const RegularizerContext* ctx, int mc_n,
                         const SolverGrid& grid, const Rng& rng, ConservativeBreakdown* parts) {
  double est = estimate_cost(model, norm, x0_raw, plan, spec, mc_n, grid, rng);
  double rv = 0.0;
  int clips = 0;
  if (lambda_reg > 0.0 && reg != nullptr) {
    SdeModel mn = model.as_sde_model();
    rv = regularizer_value(mn, plan, x0_raw, *reg, mc_n, *ctx, rng.derive(0x52454755u), &clips);
  }
  if (parts != nullptr) {
    parts->estimate = est;
    parts->reg = rv;
    parts->clip_count = clips;
  }
  return est + lambda_reg * rv;
}

namespace {

// phi layout: per channel, timepoints then dosages
struct PhiLayout {
  std::vector<int> tp_offset, d_offset, count;
  int total = 0;
};

PhiLayout layout_of(const ControlPlan& plan) {
  PhiLayout l;
  for (int c = 0; c < plan.n_channels(); ++c) {
    int k = static_cast<int>(plan.timepoints[c].size());
    l.tp_offset.push_back(l.total);
    l.d_offset.push_back(l.total + k);
    l.count.push_back(k);
    l.total += 2 * k;
  }
  return l;
}

Eigen::VectorXd flatten(const ControlPlan& plan, const PhiLayout& l) {
  Eigen::VectorXd phi(l.total);
  for (int c = 0; c < plan.n_channels(); ++c) {
    phi.segment(l.tp_offset[c], l.count[c]) = plan.timepoints[c];
    phi.segment(l.d_offset[c], l.count[c]) = plan.dosages[c];
  }
  return phi;
}

void unflatten(const Eigen::VectorXd& phi, const PhiLayout& l, ControlPlan& plan) {
  for (int c = 0; c < plan.n_channels(); ++c) {
    plan.timepoints[c] = phi.segment(l.tp_offset[c], l.count[c]);
    plan.dosages[c] = phi.segment(l.d_offset[c], l.count[c]);
  }
}

void project(ControlPlan& plan, const ObjectiveSpec& spec) {
  for (int c = 0; c < plan.n_channels(); ++c) {
    for (int k = 0; k < plan.timepoints[c].size(); ++k) {
      plan.timepoints[c](k) = std::clamp(plan.timepoints[c](k), spec.t0, spec.tf);
      double hi = spec.dose_max.size() > c ? spec.dose_max(c) : std::numeric_limits<double>::infinity();
      plan.dosages[c](k) = std::clamp(plan.dosages[c](k), 0.0, hi);
    }
  }
}

}  // namespace

OptimizeResult optimize_plan(const DiffSde& model, const NormStats& norm, const Eigen::VectorXd& x0_raw,
                             const ControlPlan& init, const ObjectiveSpec& spec, const OptimizerConfig& cfg,
                             const PartitionedRegularizer* reg, const RegularizerContext* ctx,
                             const SolverGrid& grid) {
  const int dx = model.d_x(), du = model.d_u(), n = grid.n_steps, mc = cfg.mc_n;
  const double dt = grid.dt();
  if (du != init.n_channels()) throw ShapeMismatch("plan channels do not match the model control dimension");
  const Eigen::VectorXd span = norm.control_max - norm.control_min;

  ControlPlan plan = init;
  project(plan, spec);
  PhiLayout lay = layout_of(plan);
  Eigen::VectorXd phi = flatten(plan, lay);
  Eigen::VectorXd ms = Eigen::VectorXd::Zero(lay.total);

  const Eigen::VectorXd x0n = apply_norm_state(x0_raw, norm);
  const Eigen::VectorXd nodes = grid.nodes();
  Rng root(cfg.seed);

  OptimizeResult out;
  out.best_value = std::numeric_limits<double>::infinity();

  const bool cancer_penalty = spec.task != ObjectiveTask::CovidTrack;

  for (int it = 0; it < cfg.iterations; ++it) {
    unflatten(phi, lay, plan);
    project(plan, spec);

    // smooth surrogate control on the grid nodes, with d/dphi
    std::vector<std::vector<ControlChannelEval>> ev(n + 1, std::vector<ControlChannelEval>(du));
    Eigen::MatrixXd u_raw(du, n + 1);
    for (int k = 0; k <= n; ++k)
      for (int c = 0; c < du; ++c) {
        ev[k][c] = eval_smooth_channel(plan, c, nodes(k), cfg.slope);
        u_raw(c, k) = ev[k][c].value;
      }
    Eigen::MatrixXd u_norm = ((u_raw.colwise() - norm.control_min).array().colwise() / span.array()).matrix();

    std::vector<Eigen::MatrixXd> U(n), dW(n);
    Rng it_rng = root.derive(0x4f505400u + static_cast<std::uint64_t>(it));
    const double sd = std::sqrt(dt);
    for (int k = 0; k < n; ++k) {
      U[k] = u_norm.col(k).replicate(1, mc);
      dW[k].resize(dx, mc);
      for (int s = 0; s < mc; ++s)
        for (int d = 0; d < dx; ++d) dW[k](d, s) = sd * it_rng.normal();
    }
    RolloutCache cache = rollout_forward(model, x0n.replicate(1, mc), U, grid, dW);

    // state-dependent cost and its gradient at the grid nodes
    double value = 0.0;
    std::vector<Eigen::MatrixXd> node_bar(n + 1, Eigen::MatrixXd::Zero(dx, mc));
    for (int k = 0; k <= n; ++k) {
      const double w = trapezoid_weight(nodes, k);
      for (int s = 0; s < mc; ++s) {
        Eigen::VectorXd xr = invert_norm_state(cache.X[k].col(s), norm);
        Eigen::VectorXd dxr(dx);  // d raw / d normalized, per channel
        for (int d = 0; d < dx; ++d) dxr(d) = norm.logs(d) ? norm.state_std(d) * xr(d) : norm.state_std(d);
        if (spec.task == ObjectiveTask::CovidTrack) {
          Eigen::VectorXd xs = linear_interpolate(spec.track_target, nodes(k));
          value += w * spec.lambda_x * (xr - xs).squaredNorm() / mc;
          node_bar[k].col(s) += (2.0 * spec.lambda_x * w / mc) * ((xr - xs).array() * dxr.array()).matrix();
        }
        if (k == n) {
          value += terminal_cost(spec, xr) / mc;
          node_bar[k](0, s) += terminal_grad0(spec, xr) * dxr(0) / mc;
        }
      }
    }

    // running dose penalty (cancer): direct function of the smooth control
    Eigen::MatrixXd u_pen_bar = Eigen::MatrixXd::Zero(du, n + 1);
    if (cancer_penalty)
      for (int k = 0; k <= n; ++k) {
        const double w = trapezoid_weight(nodes, k);
        for (int c = 0; c < du; ++c) {
          value += w * channel_weight(spec, c) * u_raw(c, k) * u_raw(c, k);
          u_pen_bar(c, k) = 2.0 * w * channel_weight(spec, c) * u_raw(c, k);
        }
      }

    std::vector<Eigen::MatrixXd> U_bar(n, Eigen::MatrixXd::Zero(du, mc));
    rollout_backward(model, cache, node_bar, nullptr, &U_bar, nullptr);

    Eigen::VectorXd grad = Eigen::VectorXd::Zero(lay.total);
    auto add_control_grad = [&](int k, int c, double coeff) {
      grad.segment(lay.tp_offset[c], lay.count[c]) += coeff * ev[k][c].d_timepoints;
      grad.segment(lay.d_offset[c], lay.count[c]) += coeff * ev[k][c].d_dosages;
    };
    for (int k = 0; k < n; ++k)
      for (int c = 0; c < du; ++c) add_control_grad(k, c, U_bar[k].row(c).sum() / (mc * span(c)));
    if (cancer_penalty)
      for (int k = 0; k <= n; ++k)
        for (int c = 0; c < du; ++c)
          if (u_pen_bar(c, k) != 0.0) add_control_grad(k, c, u_pen_bar(c, k));

    // distributional penalty: one query-kernel row per interval
    if (cfg.lambda_reg > 0.0 && reg != nullptr) {
      const Eigen::VectorXd& part = reg->partition;
      for (int j = 0; j + 1 < part.size(); ++j) {
        std::vector<double> qt{part(j)};
        for (int i = 0; i < ctx->obs_times.size(); ++i)
          if (ctx->obs_times(i) > part(j) && ctx->obs_times(i) < part(j + 1)) qt.push_back(ctx->obs_times(i));
        qt.push_back(part(j + 1));

        const int nq = static_cast<int>(qt.size());
        Eigen::MatrixXd qv(nq, du);
        std::vector<std::vector<ControlChannelEval>> qev(nq, std::vector<ControlChannelEval>(du));
        for (int i = 0; i < nq; ++i)
          for (int c = 0; c < du; ++c) {
            qev[i][c] = eval_smooth_channel(plan, c, qt[i], cfg.slope);
            qv(i, c) = (qev[i][c].value - norm.control_min(c)) / span(c);
          }
        CmePair query;
        query.u = time_augment(make_path(qt, qv), ctx->t_s, ctx->t_f);
        if (j == 0) {
          query.x0 = x0n;
        } else {
          // conditioning state from the current rollouts; its phi-dependence
          // is dropped from the gradient
          int kj = static_cast<int>(std::lround((part(j) - grid.t0) / dt));
          query.x0 = cache.X[kj].rowwise().mean();
        }
        int clips = 0;
        Eigen::MatrixXd gq;
        double v = reg->intervals[j].value_and_grad(query, gq, &clips);
        out.reg_clip_events += clips;
        value += cfg.lambda_reg * v;
        for (int i = 0; i < nq; ++i)
          for (int c = 0; c < du; ++c) {
            double coeff = cfg.lambda_reg * gq(i, c) / span(c);
            if (coeff != 0.0) {
              grad.segment(lay.tp_offset[c], lay.count[c]) += coeff * qev[i][c].d_timepoints;
              grad.segment(lay.d_offset[c], lay.count[c]) += coeff * qev[i][c].d_dosages;
            }
          }
      }
    }

    if (!std::isfinite(value) || std::abs(value) > cfg.diverge_threshold || !grad.allFinite()) {
      // the model exploded under this iterate: revert to the best plan so far
      // (when there is one) and try again with the next noise draw
      ++out.diverge_events;
      out.trace.push_back(std::numeric_limits<double>::infinity());
      if (std::isfinite(out.best_value)) {
        plan = out.plan;
        phi = flatten(plan, lay);
        ms.setZero();
      }
      continue;
    }

    out.trace.push_back(value);
    if (value < out.best_value) {
      out.best_value = value;
      out.best_iteration = it;
      out.plan = plan;
    }

    ms = cfg.rmsprop_alpha * ms + (1.0 - cfg.rmsprop_alpha) * grad.cwiseProduct(grad);
    phi -= cfg.lr * (grad.array() / (ms.array().sqrt() + cfg.rmsprop_eps)).matrix();
    unflatten(phi, lay, plan);
    project(plan, spec);
    phi = flatten(plan, lay);  // projected iterate is the optimizer state
  }
  if (!std::isfinite(out.best_value))
    throw DivergedOptimization("objective never entered the finite range during plan optimization");
  return out;
}

std::vector<ControlPlan> sample_control_library(ControlFamily family, int n, int n_channels, int K, double t0,
                                                double tf, const Eigen::VectorXd& dose_max, const Rng& rng) {
  std::vector<ControlPlan> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng r = rng.derive(static_cast<std::uint64_t>(i));
    ControlPlan p;
    p.family = family;
    for (int c = 0; c < n_channels; ++c) {
      Eigen::VectorXd tp(K), d(K);
      for (int k = 0; k < K; ++k) {
        tp(k) = r.uniform(t0, tf);
        d(k) = r.uniform(0.1, 0.3) * dose_max(c);
      }
      p.timepoints.push_back(tp);
      p.dosages.push_back(d);
    }
    out.push_back(std::move(p));
  }
  return out;
}

namespace {

double functional_cost(const TimedPath& p, const CostFunctional& cf, bool with_terminal) {
  double acc = 0.0;
  for (int i = 0; i < p.n_points(); ++i)
    acc += trapezoid_weight(p.times, i) * cf.running(p.times(i), p.values.row(i).transpose());
  if (with_terminal) acc += cf.terminal(p.values.row(p.n_points() - 1).transpose());
  return acc;
}

}  // namespace

TelescopeResult telescope_check(const SdeModel& true_model, const SdeModel& learned_model,
                                const Eigen::VectorXd& x0, const ControlFn& u, const CostFunctional& cost,
                                const Eigen::VectorXd& partition, int mc_n, int inner_mc, const SolverGrid& grid,
                                const Rng& rng) {
  const double dt = grid.dt();
  const int K = static_cast<int>(partition.size()) - 1;
  std::vector<int> node(K + 1);
  for (int j = 0; j <= K; ++j) node[j] = static_cast<int>(std::lround((partition(j) - grid.t0) / dt));

  TelescopeResult res;
  // direct gap, shared-noise coupled for variance
  {
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < mc_n; ++i) {
      Rng r = rng.derive(0xD1000000ull + i);
      Eigen::MatrixXd noise = brownian_increments(grid, true_model.d_w, r);
      double ct = functional_cost(euler_maruyama(true_model, x0, u, grid, noise), cost, true);
      double cl = functional_cost(euler_maruyama(learned_model, x0, u, grid, noise), cost, true);
      double d = ct - cl;
      sum += d;
      sq += d * d;
    }
    res.delta_direct = sum / mc_n;
    res.direct_stderr = std::sqrt(std::max(0.0, sq / mc_n - res.delta_direct * res.delta_direct) / mc_n);
  }

  // telescoped sum over hybrid processes
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < mc_n; ++i) {
    Rng r = rng.derive(0x7E000000ull + i);
    Eigen::MatrixXd prefix_noise = brownian_increments(grid, learned_model.d_w, r);
    TimedPath prefix = euler_maruyama(learned_model, x0, u, grid, prefix_noise);

    double di = 0.0;
    for (int j = 0; j < K; ++j) {
      SolverGrid gj{grid.node(node[j]), grid.node(node[j + 1]), node[j + 1] - node[j]};
      Eigen::VectorXd xj = prefix.values.row(node[j]).transpose();
      Rng rj = r.derive(0x100 + j);
      Eigen::MatrixXd nj = brownian_increments(gj, true_model.d_w, rj);
      TimedPath pa = euler_maruyama(true_model, xj, u, gj, nj);
      TimedPath pb = euler_maruyama(learned_model, xj, u, gj, nj);
      double branch_a = functional_cost(pa, cost, false);
      double branch_b = functional_cost(pb, cost, false);
      Eigen::VectorXd a = pa.values.row(pa.n_points() - 1).transpose();
      Eigen::VectorXd b = pb.values.row(pb.n_points() - 1).transpose();

      const int tail_steps = grid.n_steps - node[j + 1];
      if (tail_steps == 0) {
        branch_a += cost.terminal(a);
        branch_b += cost.terminal(b);
      } else {
        SolverGrid gt{grid.node(node[j + 1]), grid.tf, tail_steps};
        double ca = 0.0, cb = 0.0;
        for (int m = 0; m < inner_mc; ++m) {
          Rng rm = rj.derive(0x1000 + m);
          Eigen::MatrixXd nm = brownian_increments(gt, true_model.d_w, rm);
          ca += functional_cost(euler_maruyama(true_model, a, u, gt, nm), cost, true);
          cb += functional_cost(euler_maruyama(true_model, b, u, gt, nm), cost, true);
        }
        branch_a += ca / inner_mc;
        branch_b += cb / inner_mc;
      }
      di += branch_a - branch_b;
    }
    sum += di;
    sq += di * di;
  }
  res.delta_telescoped = sum / mc_n;
  res.telescoped_stderr = std::sqrt(std::max(0.0, sq / mc_n - res.delta_telescoped * res.delta_telescoped) / mc_n);
  return res;
}

}  // namespace sigctrl
