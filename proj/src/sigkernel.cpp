#include "sigctrl/sigkernel.hpp"

#include <cmath>

#include "sigctrl/errors.hpp"

namespace sigctrl {

namespace {

// Flat row-major tensor product: out[p * d^j + q] = a[p] * b[q].
Eigen::VectorXd tensor_product(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::VectorXd out(a.size() * b.size());
  for (Eigen::Index p = 0; p < a.size(); ++p) out.segment(p * b.size(), b.size()) = a(p) * b;
  return out;
}

// Signature of one linear segment with increment a: level k term a^{x k} / k!.
std::vector<Eigen::VectorXd> segment_signature(const Eigen::VectorXd& a, int level) {
  std::vector<Eigen::VectorXd> s(level + 1);
  s[0] = Eigen::VectorXd::Constant(1, 1.0);
  for (int k = 1; k <= level; ++k) s[k] = tensor_product(s[k - 1], a) / static_cast<double>(k);
  return s;
}

}  // namespace

TruncatedSignature truncated_signature(const TimedPath& path, int level) {
  if (level < 0) throw OutOfRange("signature level must be >= 0");
  const int d = path.dim();
  TruncatedSignature sig;
  sig.level = level;
  sig.dim = d;
  sig.tensors.resize(level + 1);
  sig.tensors[0] = Eigen::VectorXd::Constant(1, 1.0);
  for (int k = 1; k <= level; ++k) sig.tensors[k] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(std::pow(d, k)));

  // Chen's relation: signature of a concatenation is the tensor-algebra product.
  for (int seg = 0; seg + 1 < path.n_points(); ++seg) {
    const Eigen::VectorXd inc = (path.values.row(seg + 1) - path.values.row(seg)).transpose();
    const auto segsig = segment_signature(inc, level);
    std::vector<Eigen::VectorXd> next(level + 1);
    next[0] = sig.tensors[0];
    for (int k = 1; k <= level; ++k) {
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(sig.tensors[k].size());
      for (int i = 0; i <= k; ++i) acc += tensor_product(sig.tensors[i], segsig[k - i]);
      next[k] = std::move(acc);
    }
    sig.tensors = std::move(next);
  }
  return sig;
}

double sig_inner(const TruncatedSignature& a, const TruncatedSignature& b) {
  if (a.dim != b.dim) throw SizeMismatch("signature dimension mismatch");
  const int level = std::min(a.level, b.level);
  double s = 0.0;
  for (int k = 0; k <= level; ++k) s += a.tensors[k].dot(b.tensors[k]);
  return s;
}

TimedPath kernel_preprocess(const TimedPath& path, const SigKernelConfig& cfg, double t_s, double t_f) {
  return cfg.time_augment ? time_augment(path, t_s, t_f) : path;
}

namespace {

// Refine each segment into r equal linear pieces; returns (n-1)*r + 1 rows.
Eigen::MatrixXd dyadic_refine(const TimedPath& p, int r) {
  const int n = p.n_points();
  Eigen::MatrixXd out((n - 1) * r + 1, p.dim());
  for (int seg = 0; seg < n - 1; ++seg)
    for (int s = 0; s < r; ++s) {
      const double w = static_cast<double>(s) / r;
      out.row(seg * r + s) = (1.0 - w) * p.values.row(seg) + w * p.values.row(seg + 1);
    }
  out.row((n - 1) * r) = p.values.row(n - 1);
  return out;
}

double static_kernel(const StaticKernelSpec& k, const Eigen::RowVectorXd& p, const Eigen::RowVectorXd& q) {
  if (k.kind == StaticKernelSpec::Kind::Linear) return p.dot(q);
  const double d2 = (p - q).squaredNorm();
  return std::exp(-d2 / (2.0 * k.bandwidth * k.bandwidth));
}

struct PdeSolve {
  Eigen::MatrixXd K;  // lifted static kernel on the refined grid
  Eigen::MatrixXd u;  // Goursat solution, boundary 1
};

PdeSolve solve_goursat(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, const StaticKernelSpec& spec) {
  const Eigen::Index M = X.rows(), N = Y.rows();
  PdeSolve out;
  out.K.resize(M, N);
  for (Eigen::Index i = 0; i < M; ++i)
    for (Eigen::Index j = 0; j < N; ++j) out.K(i, j) = static_kernel(spec, X.row(i), Y.row(j));

  out.u.resize(M, N);
  out.u.row(0).setOnes();
  out.u.col(0).setOnes();
  for (Eigen::Index i = 0; i + 1 < M; ++i)
    for (Eigen::Index j = 0; j + 1 < N; ++j) {
      const double inc = out.K(i + 1, j + 1) - out.K(i + 1, j) - out.K(i, j + 1) + out.K(i, j);
      out.u(i + 1, j + 1) =
          out.u(i + 1, j) + out.u(i, j + 1) - out.u(i, j) + 0.5 * inc * (out.u(i + 1, j) + out.u(i, j + 1));
    }
  return out;
}

void check_pair(const TimedPath& x, const TimedPath& y) {
  if (x.n_points() < 2 || y.n_points() < 2) throw EmptyPath("kernel inputs need at least 2 points");
  if (x.dim() != y.dim()) throw SizeMismatch("kernel inputs must share channel count");
}

// Scatter refined-point gradients back to the original sample points (the
// refinement is a fixed linear map).
Eigen::MatrixXd unrefine_grad(const Eigen::MatrixXd& g_refined, int n_orig, int r) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n_orig, g_refined.cols());
  for (int seg = 0; seg < n_orig - 1; ++seg)
    for (int s = 0; s < r; ++s) {
      const double w = static_cast<double>(s) / r;
      g.row(seg) += (1.0 - w) * g_refined.row(seg * r + s);
      g.row(seg + 1) += w * g_refined.row(seg * r + s);
    }
  g.row(n_orig - 1) += g_refined.row((n_orig - 1) * r);
  return g;
}

}  // namespace

double sig_kernel(const TimedPath& x, const TimedPath& y, const SigKernelConfig& cfg) {
  check_pair(x, y);
  const int r = 1 << cfg.dyadic_order;
  const Eigen::MatrixXd X = dyadic_refine(x, r), Y = dyadic_refine(y, r);
  const PdeSolve sol = solve_goursat(X, Y, cfg.static_kernel);
  return sol.u(sol.u.rows() - 1, sol.u.cols() - 1);
}

SigKernelGrads sig_kernel_with_grads(const TimedPath& x, const TimedPath& y, const SigKernelConfig& cfg,
                                     bool want_grad_x, bool want_grad_y) {
  check_pair(x, y);
  const int r = 1 << cfg.dyadic_order;
  const Eigen::MatrixXd X = dyadic_refine(x, r), Y = dyadic_refine(y, r);
  const PdeSolve sol = solve_goursat(X, Y, cfg.static_kernel);
  const Eigen::Index M = X.rows(), N = Y.rows();

  SigKernelGrads out;
  out.value = sol.u(M - 1, N - 1);
  if (!want_grad_x && !want_grad_y) return out;

  // Reverse sweep over the Goursat recursion: ubar then Kbar.
  Eigen::MatrixXd ubar = Eigen::MatrixXd::Zero(M, N);
  Eigen::MatrixXd Kbar = Eigen::MatrixXd::Zero(M, N);
  ubar(M - 1, N - 1) = 1.0;
  for (Eigen::Index i = M - 2; i >= 0; --i)
    for (Eigen::Index j = N - 2; j >= 0; --j) {
      const double g = ubar(i + 1, j + 1);
      if (g == 0.0) continue;
      const double inc = sol.K(i + 1, j + 1) - sol.K(i + 1, j) - sol.K(i, j + 1) + sol.K(i, j);
      ubar(i + 1, j) += g * (1.0 + 0.5 * inc);
      ubar(i, j + 1) += g * (1.0 + 0.5 * inc);
      ubar(i, j) -= g;
      const double incbar = g * 0.5 * (sol.u(i + 1, j) + sol.u(i, j + 1));
      Kbar(i + 1, j + 1) += incbar;
      Kbar(i + 1, j) -= incbar;
      Kbar(i, j + 1) -= incbar;
      Kbar(i, j) += incbar;
    }

  const StaticKernelSpec& spec = cfg.static_kernel;
  Eigen::MatrixXd gX, gY;
  if (want_grad_x) gX = Eigen::MatrixXd::Zero(M, X.cols());
  if (want_grad_y) gY = Eigen::MatrixXd::Zero(N, Y.cols());
  for (Eigen::Index i = 0; i < M; ++i)
    for (Eigen::Index j = 0; j < N; ++j) {
      const double kb = Kbar(i, j);
      if (kb == 0.0) continue;
      if (spec.kind == StaticKernelSpec::Kind::Linear) {
        if (want_grad_x) gX.row(i) += kb * Y.row(j);
        if (want_grad_y) gY.row(j) += kb * X.row(i);
      } else {
        const double scale = sol.K(i, j) / (spec.bandwidth * spec.bandwidth);
        if (want_grad_x) gX.row(i) += kb * scale * (Y.row(j) - X.row(i));
        if (want_grad_y) gY.row(j) += kb * scale * (X.row(i) - Y.row(j));
      }
    }
  if (want_grad_x) out.grad_x = unrefine_grad(gX, x.n_points(), r);
  if (want_grad_y) out.grad_y = unrefine_grad(gY, y.n_points(), r);
  return out;
}

Eigen::MatrixXd gram(const std::vector<TimedPath>& paths_a, const std::vector<TimedPath>& paths_b,
                     const SigKernelConfig& cfg) {
  Eigen::MatrixXd G(paths_a.size(), paths_b.size());
  const bool same = &paths_a == &paths_b;
  for (std::size_t i = 0; i < paths_a.size(); ++i)
    for (std::size_t j = same ? i : 0; j < paths_b.size(); ++j) {
      G(i, j) = sig_kernel(paths_a[i], paths_b[j], cfg);
      if (same && j != i) G(j, i) = G(i, j);
    }
  return G;
}

double mmd_squared(const std::vector<TimedPath>& sample_p, const std::vector<TimedPath>& sample_q,
                   const SigKernelConfig& cfg, bool unbiased) {
  if (sample_p.empty() || sample_q.empty()) throw EmptySample("mmd_squared needs nonempty samples");
  const Eigen::MatrixXd Kpp = gram(sample_p, sample_p, cfg);
  const Eigen::MatrixXd Kqq = gram(sample_q, sample_q, cfg);
  const Eigen::MatrixXd Kpq = gram(sample_p, sample_q, cfg);
  const double n = static_cast<double>(sample_p.size()), m = static_cast<double>(sample_q.size());
  double tpp, tqq;
  if (unbiased) {
    if (sample_p.size() < 2 || sample_q.size() < 2) throw SampleTooSmall("unbiased MMD needs >= 2 per sample");
    tpp = (Kpp.sum() - Kpp.trace()) / (n * (n - 1.0));
    tqq = (Kqq.sum() - Kqq.trace()) / (m * (m - 1.0));
  } else {
    tpp = Kpp.sum() / (n * n);
    tqq = Kqq.sum() / (m * m);
  }
  return tpp - 2.0 * Kpq.sum() / (n * m) + tqq;
}

double sig_score(const std::vector<TimedPath>& model_sample, const TimedPath& y, const SigKernelConfig& cfg,
                 bool include_diagonal) {
  const std::size_t m = model_sample.size();
  if (m < 2) throw SampleTooSmall("sig_score needs a model sample of size >= 2");
  const Eigen::MatrixXd Kxx = gram(model_sample, model_sample, cfg);
  double first = include_diagonal ? Kxx.sum() / static_cast<double>(m * m)
                                  : (Kxx.sum() - Kxx.trace()) / static_cast<double>(m * (m - 1));
  double cross = 0.0;
  for (std::size_t i = 0; i < m; ++i) cross += sig_kernel(model_sample[i], y, cfg);
  return first - 2.0 * cross / static_cast<double>(m);
}

double sig_score_with_grads(const std::vector<TimedPath>& model_sample, const TimedPath& y,
                            const SigKernelConfig& cfg, std::vector<Eigen::MatrixXd>& grads) {
  const std::size_t m = model_sample.size();
  if (m < 2) throw SampleTooSmall("sig_score needs a model sample of size >= 2");
  grads.assign(m, Eigen::MatrixXd());
  for (std::size_t i = 0; i < m; ++i)
    grads[i] = Eigen::MatrixXd::Zero(model_sample[i].n_points(), model_sample[i].dim());

  const double w_pair = 2.0 / static_cast<double>(m * (m - 1));  // both (i,j) and (j,i)
  double first = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      SigKernelGrads kg = sig_kernel_with_grads(model_sample[i], model_sample[j], cfg, true, true);
      first += w_pair * kg.value;
      grads[i] += w_pair * kg.grad_x;
      grads[j] += w_pair * kg.grad_y;
    }
  double cross = 0.0;
  const double w_cross = 2.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    SigKernelGrads kg = sig_kernel_with_grads(model_sample[i], y, cfg, true, false);
    cross += w_cross * kg.value;
    grads[i] -= w_cross * kg.grad_x;
  }
  return first - cross;
}

}  // namespace sigctrl
