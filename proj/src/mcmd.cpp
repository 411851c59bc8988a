#include "sigctrl/mcmd.hpp"

#include <cmath>

namespace sigctrl {

double conditioning_kernel(const CmePair& a, const CmePair& b, const CmeConfig& cfg) {
  if (a.x0.size() != b.x0.size()) throw SizeMismatch("conditioning states differ in dimension");
  double d2 = (a.x0 - b.x0).squaredNorm();
  double k_x0 = std::exp(-d2 / (2.0 * cfg.x0_bandwidth * cfg.x0_bandwidth));
  return k_x0 * sig_kernel(a.u, b.u, cfg.sig);
}

CmeFit::CmeFit(std::vector<CmePair> anchors, const CmeConfig& cfg) : anchors_(std::move(anchors)), cfg_(cfg) {
  const int n = static_cast<int>(anchors_.size());
  if (n < 2) throw SampleTooSmall("conditional mean embedding needs at least 2 anchors");
  if (!(cfg_.ridge > 0.0)) throw ConfigInvalid("cme ridge must be positive");
  K_.resize(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      K_(i, j) = conditioning_kernel(anchors_[i], anchors_[j], cfg_);
      K_(j, i) = K_(i, j);
    }
  Eigen::MatrixXd reg = K_ + n * cfg_.ridge * Eigen::MatrixXd::Identity(n, n);
  ldlt_.compute(reg);
  if (ldlt_.info() != Eigen::Success) throw SingularSystem("regularized conditioning Gram failed to factorize");
}

Eigen::VectorXd CmeFit::query_vector(const CmePair& query) const {
  Eigen::VectorXd k(n());
  for (int i = 0; i < n(); ++i) k(i) = conditioning_kernel(anchors_[i], query, cfg_);
  return k;
}

Eigen::MatrixXd CmeFit::solve(const Eigen::MatrixXd& v) const { return ldlt_.solve(v); }

CmeFit fit_cme(std::vector<CmePair> anchors, double ridge, const CmeConfig& cfg) {
  CmeConfig c = cfg;
  c.ridge = ridge;
  return CmeFit(std::move(anchors), c);
}

namespace {

// W (K_X - K_XY - K_XY^T + K_Y) W with W = (K + n ridge I)^{-1}; the MCMD^2 at
// query k is then k^T M k.
Eigen::MatrixXd quadratic_form_core(const CmeFit& fit, const std::vector<TimedPath>& true_paths,
                                    const std::vector<TimedPath>& model_paths) {
  const int n = fit.n();
  if (static_cast<int>(true_paths.size()) != n || static_cast<int>(model_paths.size()) != n)
    throw SizeMismatch("anchor and path list sizes differ");
  const SigKernelConfig& out = fit.config().sig;
  Eigen::MatrixXd Kx = gram(true_paths, true_paths, out);
  Eigen::MatrixXd Ky = gram(model_paths, model_paths, out);
  Eigen::MatrixXd Kxy = gram(true_paths, model_paths, out);
  Eigen::MatrixXd G = Kx - Kxy - Kxy.transpose() + Ky;
  // two solves apply W on both sides
  Eigen::MatrixXd WG = fit.solve(G);
  Eigen::MatrixXd M = fit.solve(WG.transpose());
  return 0.5 * (M + M.transpose());  // symmetrize against roundoff
}

double clipped(double v, int* clip_count) {
  if (v < 0.0) {
    if (clip_count) ++*clip_count;
    return 0.0;
  }
  return v;
}

}  // namespace

double mcmd_squared(const CmeFit& fit, const CmePair& query, const std::vector<TimedPath>& true_paths,
                    const std::vector<TimedPath>& model_paths, int* clip_count) {
  Eigen::MatrixXd M = quadratic_form_core(fit, true_paths, model_paths);
  Eigen::VectorXd k = fit.query_vector(query);
  return clipped(k.dot(M * k), clip_count);
}

McmdRegularizer::McmdRegularizer(CmeFit fit, const std::vector<TimedPath>& true_paths,
                                 const std::vector<TimedPath>& model_paths)
    : fit_(std::move(fit)) {
  M_ = quadratic_form_core(fit_, true_paths, model_paths);
}

double McmdRegularizer::value(const CmePair& query, int* clip_count) const {
  Eigen::VectorXd k = fit_.query_vector(query);
  return std::sqrt(clipped(k.dot(M_ * k), clip_count));
}

double McmdRegularizer::value_and_grad(const CmePair& query, Eigen::MatrixXd& grad_u, int* clip_count) const {
  const int n = fit_.n();
  const CmeConfig& cfg = fit_.config();
  Eigen::VectorXd k(n);
  std::vector<Eigen::MatrixXd> dk_du(n);  // d k_i / d query.u.values
  for (int i = 0; i < n; ++i) {
    const CmePair& a = fit_.anchors()[i];
    double d2 = (a.x0 - query.x0).squaredNorm();
    double k_x0 = std::exp(-d2 / (2.0 * cfg.x0_bandwidth * cfg.x0_bandwidth));
    SigKernelGrads g = sig_kernel_with_grads(a.u, query.u, cfg.sig, false, true);
    k(i) = k_x0 * g.value;
    dk_du[i] = k_x0 * g.grad_y;
  }
  Eigen::VectorXd Mk = M_ * k;
  double v2 = clipped(k.dot(Mk), clip_count);
  double v = std::sqrt(v2);
  grad_u = Eigen::MatrixXd::Zero(query.u.n_points(), query.u.dim());
  if (v > 1e-12) {
    // d sqrt(k^T M k) / d u = (M k)^T dk/du / sqrt(.)
    for (int i = 0; i < n; ++i) grad_u += (Mk(i) / v) * dk_du[i];
  }
  return v;
}

TimedPath subpath(const TimedPath& path, double ta, double tb) {
  if (!(tb > ta)) throw OutOfRange("degenerate subpath interval");
  std::vector<double> ts;
  std::vector<Eigen::VectorXd> vs;
  ts.push_back(ta);
  vs.push_back(linear_interpolate(path, ta));
  for (int i = 0; i < path.n_points(); ++i)
    if (path.times(i) > ta && path.times(i) < tb) {
      ts.push_back(path.times(i));
      vs.push_back(path.values.row(i).transpose());
    }
  ts.push_back(tb);
  vs.push_back(linear_interpolate(path, tb));
  Eigen::VectorXd t(ts.size());
  Eigen::MatrixXd v(ts.size(), path.dim());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    t(i) = ts[i];
    v.row(i) = vs[i].transpose();
  }
  return make_path(t, v);
}

PartitionedRegularizer build_partitioned_regularizer(const RegularizerData& data, const Eigen::VectorXd& partition,
                                                     const CmeConfig& cfg) {
  if (partition.size() < 2) throw ConfigInvalid("partition needs at least 2 boundary times");
  const int n = static_cast<int>(data.anchors.size());
  PartitionedRegularizer out;
  out.partition = partition;
  for (int j = 0; j + 1 < partition.size(); ++j) {
    double ta = partition(j), tb = partition(j + 1);
    std::vector<CmePair> anchors(n);
    std::vector<TimedPath> tp(n), mp(n);
    for (int i = 0; i < n; ++i) {
      // conditioning state at t_j: the observed state (minus the appended time
      // channel) for j>0, the given initial state for j=0
      if (j == 0) {
        anchors[i].x0 = data.anchors[i].x0;
      } else {
        Eigen::VectorXd full = linear_interpolate(data.true_paths[i], ta);
        anchors[i].x0 = full.head(full.size() - 1);
      }
      anchors[i].u = subpath(data.anchors[i].u, ta, tb);
      tp[i] = subpath(data.true_paths[i], ta, tb);
      mp[i] = subpath(data.model_paths[i], ta, tb);
    }
    out.intervals.emplace_back(CmeFit(std::move(anchors), cfg), tp, mp);
  }
  return out;
}

double regularizer_value(const SdeModel& model_normalized, const ControlPlan& plan, const Eigen::VectorXd& x0_raw,
                         const PartitionedRegularizer& reg, int mc_n, const RegularizerContext& ctx, const Rng& rng,
                         int* clip_count) {
  if (!ctx.norm) throw ConfigInvalid("regularizer context needs normalization stats");
  const NormStats& norm = *ctx.norm;

  TimedPath u_full = plan_to_path(plan, ctx.obs_times, norm.control_max);
  u_full = time_augment(apply_norm(u_full, norm, ChannelRole::Control), ctx.t_s, ctx.t_f);
  Eigen::VectorXd x0n = apply_norm_state(x0_raw, norm);

  double total = 0.0;
  const int n_intervals = static_cast<int>(reg.intervals.size());
  if (n_intervals == 1) {
    CmePair query{x0n, u_full};
    return reg.intervals[0].value(query, clip_count);
  }

  // K>1: draw start states at each boundary from model rollouts
  ControlFn u_raw = render_control(plan, norm.control_max);
  ControlFn u_norm = [&](double t) { return apply_norm_control(u_raw(t), norm); };
  Rng root = rng.derive(0x52454755u);
  std::vector<TimedPath> rollouts = rollout_batch(model_normalized, x0n, u_norm, ctx.rollout_grid, mc_n, root);
  for (int j = 0; j < n_intervals; ++j) {
    double ta = reg.partition(j);
    TimedPath u_sub = subpath(u_full, ta, reg.partition(j + 1));
    if (j == 0) {
      total += reg.intervals[0].value(CmePair{x0n, u_sub}, clip_count);
      continue;
    }
    double acc = 0.0;
    for (const TimedPath& r : rollouts) acc += reg.intervals[j].value(CmePair{linear_interpolate(r, ta), u_sub}, clip_count);
    total += acc / mc_n;
  }
  return total;
}

}  // namespace sigctrl
