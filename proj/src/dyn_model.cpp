#include "sigctrl/dyn_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace sigctrl {

SdeModel DiffSde::as_sde_model() const {
  SdeModel m;
  m.d_x = d_x();
  m.d_w = d_x();
  m.d_u = d_u();
  m.drift = [this](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::MatrixXd mu, sig;
    eval(x, u, mu, sig);
    return Eigen::VectorXd(mu.col(0));
  };
  m.diffusion = [this](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::MatrixXd mu, sig;
    eval(x, u, mu, sig);
    return Eigen::MatrixXd(sig.col(0).asDiagonal());
  };
  return m;
}

RolloutCache rollout_forward(const DiffSde& model, const Eigen::MatrixXd& X0, const std::vector<Eigen::MatrixXd>& U,
                             const SolverGrid& grid, const std::vector<Eigen::MatrixXd>& dW) {
  if (static_cast<int>(U.size()) != grid.n_steps || static_cast<int>(dW.size()) != grid.n_steps)
    throw SizeMismatch("per-step control/noise count does not match the grid");
  RolloutCache c;
  c.grid = grid;
  c.X.reserve(grid.n_steps + 1);
  c.U = U;
  c.dW = dW;
  c.X.push_back(X0);
  const double dt = grid.dt();
  Eigen::MatrixXd mu, sig;
  for (int k = 0; k < grid.n_steps; ++k) {
    model.eval(c.X[k], U[k], mu, sig);
    Eigen::MatrixXd next = c.X[k] + mu * dt + sig.cwiseProduct(dW[k]);
    if (!next.allFinite()) throw NonFiniteState("rollout diverged at step " + std::to_string(k));
    c.X.push_back(std::move(next));
  }
  return c;
}

void rollout_backward(const DiffSde& model, const RolloutCache& cache, std::vector<Eigen::MatrixXd> node_bar,
                      Eigen::MatrixXd* X0_bar, std::vector<Eigen::MatrixXd>* U_bar, Eigen::VectorXd* theta_bar) {
  const int n = cache.grid.n_steps;
  if (static_cast<int>(node_bar.size()) != n + 1) throw SizeMismatch("node gradient count does not match the grid");
  const double dt = cache.grid.dt();
  if (U_bar) U_bar->assign(n, Eigen::MatrixXd::Zero(cache.U[0].rows(), cache.U[0].cols()));

  Eigen::MatrixXd xbar = node_bar[n];
  for (int k = n - 1; k >= 0; --k) {
    // X_{k+1} = X_k + mu dt + sig o dW
    Eigen::MatrixXd mu_bar = xbar * dt;
    Eigen::MatrixXd sig_bar = xbar.cwiseProduct(cache.dW[k]);
    Eigen::MatrixXd ub = Eigen::MatrixXd::Zero(cache.U[k].rows(), cache.U[k].cols());
    Eigen::MatrixXd xb_step = Eigen::MatrixXd::Zero(xbar.rows(), xbar.cols());
    model.vjp(cache.X[k], cache.U[k], mu_bar, sig_bar, xb_step, ub, theta_bar);
    if (U_bar) (*U_bar)[k] = std::move(ub);
    xbar += xb_step;  // identity term plus local Jacobian
    xbar += node_bar[k];
  }
  if (!xbar.allFinite()) throw NonFiniteGradient("non-finite state gradient in backward sweep");
  if (X0_bar) *X0_bar = std::move(xbar);
}

namespace {

// LipSwish activation and its derivative
inline Eigen::ArrayXXd lipswish(const Eigen::ArrayXXd& a) { return 0.909 * a / (1.0 + (-a).exp()); }

inline Eigen::ArrayXXd lipswish_deriv(const Eigen::ArrayXXd& a) {
  Eigen::ArrayXXd s = 1.0 / (1.0 + (-a).exp());
  return 0.909 * s * (1.0 + a * (1.0 - s));
}

struct Layout {
  // per-state drift net: W1 (h x in), b1, W2 (h x h), b2, w3 (h), b3
  // per-state diffusion net: V1 (hd x ind), c1, v2 (hd), c2
  int in = 0, h = 0, ind = 0, hd = 0;
  int drift_size() const { return h * in + h + h * h + h + h + 1; }
  int diff_size() const { return hd * ind + hd + hd + 1; }
};

Layout layout_of(const NetSdeSpec& s) {
  Layout l;
  l.in = s.d_x + s.d_u;
  l.h = s.drift_hidden;
  l.ind = s.diffusion_on_control ? s.d_x + s.d_u : s.d_x;
  l.hd = s.diffusion_hidden;
  return l;
}

using MapM = Eigen::Map<const Eigen::MatrixXd>;
using MapV = Eigen::Map<const Eigen::VectorXd>;
using MutM = Eigen::Map<Eigen::MatrixXd>;
using MutV = Eigen::Map<Eigen::VectorXd>;

}  // namespace

NetSde::NetSde(const NetSdeSpec& spec, std::uint64_t init_seed) : spec_(spec) {
  Layout l = layout_of(spec_);
  theta_.setZero(spec_.d_x * (l.drift_size() + l.diff_size()));
  Rng rng(init_seed);
  auto fill = [&](double* p, int count, int fan_in, int fan_out) {
    double r = std::sqrt(6.0 / (fan_in + fan_out));
    for (int i = 0; i < count; ++i) p[i] = rng.uniform(-r, r);
  };
  double* p = theta_.data();
  for (int i = 0; i < spec_.d_x; ++i) {
    fill(p, l.h * l.in, l.in, l.h);
    p += l.h * l.in + l.h;  // biases stay 0
    fill(p, l.h * l.h, l.h, l.h);
    p += l.h * l.h + l.h;
    fill(p, l.h, l.h, 1);
    p += l.h + 1;
  }
  for (int i = 0; i < spec_.d_x; ++i) {
    fill(p, l.hd * l.ind, l.ind, l.hd);
    p += l.hd * l.ind + l.hd;
    fill(p, l.hd, l.hd, 1);
    p += l.hd;
    *p = -2.0;  // output bias: start with small diffusion, sigma ~ 0.06 s_max
    p += 1;
  }
}

void NetSde::eval(const Eigen::MatrixXd& X, const Eigen::MatrixXd& U, Eigen::MatrixXd& mu,
                  Eigen::MatrixXd& sig) const {
  const Layout l = layout_of(spec_);
  const int B = static_cast<int>(X.cols());
  if (X.rows() != spec_.d_x || U.rows() != spec_.d_u || U.cols() != B)
    throw ShapeMismatch("batched eval input shapes");
  Eigen::MatrixXd In(l.in, B);
  In.topRows(spec_.d_x) = X;
  In.bottomRows(spec_.d_u) = U;
  Eigen::MatrixXd Ind(l.ind, B);
  Ind.topRows(spec_.d_x) = X;
  if (spec_.diffusion_on_control) Ind.bottomRows(spec_.d_u) = U;

  mu.resize(spec_.d_x, B);
  sig.resize(spec_.d_x, B);
  const double* p = theta_.data();
  for (int i = 0; i < spec_.d_x; ++i) {
    MapM W1(p, l.h, l.in);
    MapV b1(p + l.h * l.in, l.h);
    MapM W2(p + l.h * l.in + l.h, l.h, l.h);
    MapV b2(p + l.h * l.in + l.h + l.h * l.h, l.h);
    MapV w3(p + l.h * l.in + l.h + l.h * l.h + l.h, l.h);
    double b3 = p[l.drift_size() - 1];
    Eigen::MatrixXd A1 = (W1 * In).colwise() + b1;
    Eigen::MatrixXd H1 = lipswish(A1.array()).matrix();
    Eigen::MatrixXd A2 = (W2 * H1).colwise() + b2;
    Eigen::MatrixXd H2 = lipswish(A2.array()).matrix();
    Eigen::RowVectorXd Z = ((w3.transpose() * H2).array() + b3).matrix();
    mu.row(i) = (spec_.mu_max * Z.array().tanh()).matrix();
    p += l.drift_size();
  }
  if (spec_.x_box > 0.0) {
    Eigen::ArrayXXd excess = (X.array().abs() - spec_.x_box).max(0.0);
    mu.array() -= spec_.box_gain * excess * X.array().sign();
  }
  for (int i = 0; i < spec_.d_x; ++i) {
    MapM V1(p, l.hd, l.ind);
    MapV c1(p + l.hd * l.ind, l.hd);
    MapV v2(p + l.hd * l.ind + l.hd, l.hd);
    double c2 = p[l.diff_size() - 1];
    Eigen::MatrixXd A1 = (V1 * Ind).colwise() + c1;
    Eigen::MatrixXd H1 = lipswish(A1.array()).matrix();
    Eigen::RowVectorXd Z = ((v2.transpose() * H1).array() + c2).matrix();
    sig.row(i) = (spec_.s_max * 0.5 * (Z.array().tanh() + 1.0)).matrix();
    p += l.diff_size();
  }
}

void NetSde::vjp(const Eigen::MatrixXd& X, const Eigen::MatrixXd& U, const Eigen::MatrixXd& mu_bar,
                 const Eigen::MatrixXd& sig_bar, Eigen::MatrixXd& X_bar, Eigen::MatrixXd& U_bar,
                 Eigen::VectorXd* theta_bar) const {
  const Layout l = layout_of(spec_);
  const int B = static_cast<int>(X.cols());
  Eigen::MatrixXd In(l.in, B);
  In.topRows(spec_.d_x) = X;
  In.bottomRows(spec_.d_u) = U;
  Eigen::MatrixXd Ind(l.ind, B);
  Ind.topRows(spec_.d_x) = X;
  if (spec_.diffusion_on_control) Ind.bottomRows(spec_.d_u) = U;

  Eigen::MatrixXd In_bar = Eigen::MatrixXd::Zero(l.in, B);
  Eigen::MatrixXd Ind_bar = Eigen::MatrixXd::Zero(l.ind, B);
  if (spec_.x_box > 0.0) {
    In_bar.topRows(spec_.d_x).array() -=
        spec_.box_gain * mu_bar.array() *
        (X.array().abs() > spec_.x_box).cast<double>();
  }

  const double* p = theta_.data();
  double* g = theta_bar ? theta_bar->data() : nullptr;
  for (int i = 0; i < spec_.d_x; ++i) {
    MapM W1(p, l.h, l.in);
    MapV b1(p + l.h * l.in, l.h);
    MapM W2(p + l.h * l.in + l.h, l.h, l.h);
    MapV b2(p + l.h * l.in + l.h + l.h * l.h, l.h);
    MapV w3(p + l.h * l.in + l.h + l.h * l.h + l.h, l.h);
    double b3 = p[l.drift_size() - 1];
    // recompute forward activations
    Eigen::MatrixXd A1 = (W1 * In).colwise() + b1;
    Eigen::MatrixXd H1 = lipswish(A1.array()).matrix();
    Eigen::MatrixXd A2 = (W2 * H1).colwise() + b2;
    Eigen::MatrixXd H2 = lipswish(A2.array()).matrix();
    Eigen::ArrayXd Z = ((w3.transpose() * H2).array() + b3).transpose();
    Eigen::ArrayXd T = Z.tanh();

    Eigen::ArrayXd Zbar = mu_bar.row(i).transpose().array() * spec_.mu_max * (1.0 - T.square());
    Eigen::MatrixXd H2bar = w3 * Zbar.matrix().transpose();
    Eigen::MatrixXd A2bar = (H2bar.array() * lipswish_deriv(A2.array())).matrix();
    Eigen::MatrixXd H1bar = W2.transpose() * A2bar;
    Eigen::MatrixXd A1bar = (H1bar.array() * lipswish_deriv(A1.array())).matrix();
    In_bar += W1.transpose() * A1bar;
    if (g) {
      MutM W1g(g, l.h, l.in);
      MutV b1g(g + l.h * l.in, l.h);
      MutM W2g(g + l.h * l.in + l.h, l.h, l.h);
      MutV b2g(g + l.h * l.in + l.h + l.h * l.h, l.h);
      MutV w3g(g + l.h * l.in + l.h + l.h * l.h + l.h, l.h);
      W1g.noalias() += A1bar * In.transpose();
      b1g += A1bar.rowwise().sum();
      W2g.noalias() += A2bar * H1.transpose();
      b2g += A2bar.rowwise().sum();
      w3g += H2 * Zbar.matrix();
      g[l.drift_size() - 1] += Zbar.sum();
      g += l.drift_size();
    }
    p += l.drift_size();
  }
  for (int i = 0; i < spec_.d_x; ++i) {
    MapM V1(p, l.hd, l.ind);
    MapV c1(p + l.hd * l.ind, l.hd);
    MapV v2(p + l.hd * l.ind + l.hd, l.hd);
    double c2 = p[l.diff_size() - 1];
    Eigen::MatrixXd A1 = (V1 * Ind).colwise() + c1;
    Eigen::MatrixXd H1 = lipswish(A1.array()).matrix();
    Eigen::ArrayXd Z = ((v2.transpose() * H1).array() + c2).transpose();
    Eigen::ArrayXd T = Z.tanh();

    Eigen::ArrayXd Zbar = sig_bar.row(i).transpose().array() * spec_.s_max * 0.5 * (1.0 - T.square());
    Eigen::MatrixXd H1bar = v2 * Zbar.matrix().transpose();
    Eigen::MatrixXd A1bar = (H1bar.array() * lipswish_deriv(A1.array())).matrix();
    Ind_bar += V1.transpose() * A1bar;
    if (g) {
      MutM V1g(g, l.hd, l.ind);
      MutV c1g(g + l.hd * l.ind, l.hd);
      MutV v2g(g + l.hd * l.ind + l.hd, l.hd);
      V1g.noalias() += A1bar * Ind.transpose();
      c1g += A1bar.rowwise().sum();
      v2g += H1 * Zbar.matrix();
      g[l.diff_size() - 1] += Zbar.sum();
      g += l.diff_size();
    }
    p += l.diff_size();
  }

  X_bar += In_bar.topRows(spec_.d_x);
  U_bar += In_bar.bottomRows(spec_.d_u);
  X_bar += Ind_bar.topRows(spec_.d_x);
  if (spec_.diffusion_on_control) U_bar += Ind_bar.bottomRows(spec_.d_u);
}

namespace {

// linear-interpolation weights of observation times into grid nodes
struct ObsInterp {
  std::vector<int> lo;
  std::vector<double> w;  // value = (1-w) X[lo] + w X[lo+1]
};

ObsInterp obs_interp(const Eigen::VectorXd& obs_times, const SolverGrid& grid) {
  ObsInterp oi;
  const double dt = grid.dt();
  for (Eigen::Index i = 0; i < obs_times.size(); ++i) {
    double s = (obs_times(i) - grid.t0) / dt;
    int k = std::clamp(static_cast<int>(std::floor(s)), 0, grid.n_steps - 1);
    oi.lo.push_back(k);
    oi.w.push_back(std::clamp(s - k, 0.0, 1.0));
  }
  return oi;
}

}  // namespace

double sig_score_loss(const DiffSde& model, const Trajectory& traj_norm, double t_s, double t_f,
                      const SolverGrid& grid, const SigKernelConfig& kcfg, int m_samples, const Rng& rng,
                      Eigen::VectorXd* grad_theta) {
  if (m_samples < 2) throw SampleTooSmall("the signature score needs at least 2 model samples");
  const int dx = model.d_x(), du = model.d_u(), n = grid.n_steps;
  const double sd = std::sqrt(grid.dt());

  Eigen::MatrixXd X0 = traj_norm.state.values.row(0).transpose().replicate(1, m_samples);
  std::vector<Eigen::MatrixXd> U(n), dW(n);
  for (int k = 0; k < n; ++k)
    U[k] = linear_interpolate(traj_norm.control, std::clamp(grid.node(k), traj_norm.control.first_time(),
                                                            traj_norm.control.last_time()))
               .replicate(1, m_samples);
  Rng noise = rng.derive(0x524f4c4cu);
  for (int k = 0; k < n; ++k) {
    dW[k].resize(dx, m_samples);
    for (int b = 0; b < m_samples; ++b)
      for (int i = 0; i < dx; ++i) dW[k](i, b) = sd * noise.normal();
  }
  (void)du;

  RolloutCache cache = rollout_forward(model, X0, U, grid, dW);

  // restrict to the observed grid and score against the observation
  const Eigen::VectorXd& obs_t = traj_norm.state.times;
  ObsInterp oi = obs_interp(obs_t, grid);
  std::vector<TimedPath> model_paths;
  model_paths.reserve(m_samples);
  for (int b = 0; b < m_samples; ++b) {
    Eigen::MatrixXd v(obs_t.size(), dx);
    for (Eigen::Index i = 0; i < obs_t.size(); ++i)
      v.row(i) = ((1.0 - oi.w[i]) * cache.X[oi.lo[i]].col(b) + oi.w[i] * cache.X[oi.lo[i] + 1].col(b)).transpose();
    model_paths.push_back(kernel_preprocess(make_path(obs_t, v), kcfg, t_s, t_f));
  }
  TimedPath y = kernel_preprocess(traj_norm.state, kcfg, t_s, t_f);

  if (!grad_theta) return sig_score(model_paths, y, kcfg);

  std::vector<Eigen::MatrixXd> grads;
  double loss = sig_score_with_grads(model_paths, y, kcfg, grads);

  std::vector<Eigen::MatrixXd> node_bar(n + 1, Eigen::MatrixXd::Zero(dx, m_samples));
  for (int b = 0; b < m_samples; ++b)
    for (Eigen::Index i = 0; i < obs_t.size(); ++i) {
      Eigen::VectorXd gi = grads[b].row(i).head(dx).transpose();  // drop the time channel
      node_bar[oi.lo[i]].col(b) += (1.0 - oi.w[i]) * gi;
      node_bar[oi.lo[i] + 1].col(b) += oi.w[i] * gi;
    }

  grad_theta->setZero(model.param_count());
  rollout_backward(model, cache, std::move(node_bar), nullptr, nullptr, grad_theta);
  if (!grad_theta->allFinite()) throw NonFiniteGradient("non-finite parameter gradient");
  return loss;
}

TrainResult train(NetSde& model, const Dataset& train_norm, const Dataset& val_norm, const TrainConfig& cfg) {
  if (train_norm.size() < 1 || val_norm.size() < 1) throw EmptySample("training needs data");
  const int n_params = model.param_count();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n_params);
  Rng root(cfg.seed);
  Rng batch_rng = root.derive(1);

  const int n_val = std::min(cfg.val_subset, val_norm.size());
  auto validate = [&]() {
    // median across trajectories: a single degenerate rollout (kernel blow-up
    // on an exploded path) must not capture the checkpoint
    std::vector<double> s(n_val);
    for (int i = 0; i < n_val; ++i)
      s[i] = sig_score_loss(model, val_norm.trajectories[i], val_norm.t_s, val_norm.t_f, cfg.grid, cfg.kernel,
                            cfg.m_samples, root.derive(0x56414c0000ull + i), nullptr);
    std::nth_element(s.begin(), s.begin() + n_val / 2, s.end());
    return s[n_val / 2];
  };

  TrainResult res;
  res.best_val = std::numeric_limits<double>::infinity();
  Eigen::VectorXd grad(n_params), acc(n_params);
  for (int step = 0; step < cfg.steps; ++step) {
    acc.setZero();
    double loss = 0.0;
    for (int bi = 0; bi < cfg.batch; ++bi) {
      int idx = batch_rng.uniform_int(0, train_norm.size() - 1);
      loss += sig_score_loss(model, train_norm.trajectories[idx], train_norm.t_s, train_norm.t_f, cfg.grid,
                             cfg.kernel, cfg.m_samples, root.derive(0x10000000ull + step * 1000ull + bi), &grad);
      acc += grad;
    }
    loss /= cfg.batch;
    acc /= cfg.batch;
    if (!std::isfinite(loss)) throw DivergedTraining("non-finite training loss at step " + std::to_string(step));
    res.loss_trace.push_back(loss);

    if (cfg.grad_clip > 0.0) {
      double gn = acc.norm();
      if (gn > cfg.grad_clip) acc *= cfg.grad_clip / gn;
    }
    v = cfg.rmsprop_alpha * v + (1.0 - cfg.rmsprop_alpha) * acc.cwiseProduct(acc);
    model.params() -= cfg.lr * acc.cwiseQuotient((v.array().sqrt() + cfg.rmsprop_eps).matrix());

    if ((step + 1) % cfg.val_every == 0 || step + 1 == cfg.steps) {
      double vs = validate();
      res.val_trace.emplace_back(step + 1, vs);
      if (vs < res.best_val) {
        res.best_val = vs;
        res.best_step = step + 1;
        res.theta_best = model.params();
      }
    }
  }
  if (res.theta_best.size() == 0) res.theta_best = model.params();
  model.params() = res.theta_best;
  return res;
}

namespace {

using nlohmann::json;

json vec_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd vec_from(const json& j) {
  std::vector<double> v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void save_checkpoint(const std::string& file, const Checkpoint& ckpt) {
  json j;
  j["format"] = "sigctrl-checkpoint-v1";
  j["spec"] = {{"d_x", ckpt.spec.d_x},
               {"d_u", ckpt.spec.d_u},
               {"drift_hidden", ckpt.spec.drift_hidden},
               {"diffusion_hidden", ckpt.spec.diffusion_hidden},
               {"mu_max", ckpt.spec.mu_max},
               {"s_max", ckpt.spec.s_max},
               {"diffusion_on_control", ckpt.spec.diffusion_on_control},
               {"x_box", ckpt.spec.x_box},
               {"box_gain", ckpt.spec.box_gain}};
  j["theta"] = vec_json(ckpt.theta);
  j["norm"] = {{"state_mean", vec_json(ckpt.norm.state_mean)},
               {"state_std", vec_json(ckpt.norm.state_std)},
               {"control_min", vec_json(ckpt.norm.control_min)},
               {"control_max", vec_json(ckpt.norm.control_max)},
               {"state_transform",
                ckpt.norm.state_transform == StateTransform::LogThenStandardize ? "log-then-standardize"
                                                                                : "standardize"},
               {"log_channel", ckpt.norm.log_channel}};
  j["t_s"] = ckpt.t_s;
  j["t_f"] = ckpt.t_f;
  std::ofstream out(file);
  if (!out) throw Error("cannot open " + file + " for writing");
  out << j.dump(1) << "\n";
}

Checkpoint load_checkpoint(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw MissingArtifact("cannot open checkpoint file " + file);
  json j = json::parse(in);
  if (j.value("format", "") != std::string("sigctrl-checkpoint-v1"))
    throw ConfigInvalid("unknown checkpoint format in " + file);
  Checkpoint c;
  const json& s = j.at("spec");
  c.spec.d_x = s.at("d_x").get<int>();
  c.spec.d_u = s.at("d_u").get<int>();
  c.spec.drift_hidden = s.at("drift_hidden").get<int>();
  c.spec.diffusion_hidden = s.at("diffusion_hidden").get<int>();
  c.spec.mu_max = s.at("mu_max").get<double>();
  c.spec.s_max = s.at("s_max").get<double>();
  c.spec.diffusion_on_control = s.at("diffusion_on_control").get<bool>();
  c.spec.x_box = s.value("x_box", 0.0);
  c.spec.box_gain = s.value("box_gain", 0.0);
  c.theta = vec_from(j.at("theta"));
  const json& n = j.at("norm");
  c.norm.state_mean = vec_from(n.at("state_mean"));
  c.norm.state_std = vec_from(n.at("state_std"));
  c.norm.control_min = vec_from(n.at("control_min"));
  c.norm.control_max = vec_from(n.at("control_max"));
  c.norm.state_transform = n.at("state_transform").get<std::string>() == "log-then-standardize"
                               ? StateTransform::LogThenStandardize
                               : StateTransform::Standardize;
  if (n.contains("log_channel")) c.norm.log_channel = n.at("log_channel").get<std::vector<bool>>();
  c.t_s = j.at("t_s").get<double>();
  c.t_f = j.at("t_f").get<double>();
  return c;
}

}  // namespace sigctrl
