#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "sigctrl/sde.hpp"
#include "sigctrl/sigkernel.hpp"

using namespace sigctrl;

namespace {

TimedPath random_path(int n_points, int dim, double total_variation, Rng& rng) {
  Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(n_points, 0.0, 1.0);
  Eigen::MatrixXd v(n_points, dim);
  v.row(0).setZero();
  double tv = 0.0;
  for (int i = 1; i < n_points; ++i) {
    for (int c = 0; c < dim; ++c) v(i, c) = v(i - 1, c) + rng.normal();
    tv += (v.row(i) - v.row(i - 1)).norm();
  }
  if (tv > 0) v *= total_variation / tv;
  return make_path(t, v);
}

TimedPath line_path(const Eigen::VectorXd& a, int n_points) {
  Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(n_points, 0.0, 1.0);
  Eigen::MatrixXd v(n_points, a.size());
  for (int i = 0; i < n_points; ++i) v.row(i) = t(i) * a.transpose();
  return make_path(t, v);
}

// <S(x), S(y)> truncated at level M: the independent oracle for the PDE solver.
double sig_inner_oracle(const TimedPath& x, const TimedPath& y, int level) {
  return sig_inner(truncated_signature(x, level), truncated_signature(y, level));
}

std::vector<TimedPath> ou_sample(int n, double drift_shift, std::uint64_t seed) {
  SdeModel m;
  m.d_x = 1;
  m.d_w = 1;
  m.drift = [drift_shift](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    return Eigen::VectorXd::Constant(1, -x(0) + drift_shift).eval();
  };
  m.diffusion = [](const Eigen::VectorXd&, const Eigen::VectorXd&) {
    return Eigen::MatrixXd::Constant(1, 1, 1.0).eval();
  };
  SolverGrid grid{0.0, 1.0, 10};
  Rng rng(seed);
  auto paths = rollout_batch(m, Eigen::VectorXd::Zero(1), [](double) { return Eigen::VectorXd(0); }, grid, n, rng);
  SigKernelConfig cfg;  // only used for preprocessing defaults
  for (auto& p : paths) p = kernel_preprocess(p, cfg, 0.0, 1.0);
  return paths;
}

double vstat_mmd_from_gram(const Eigen::MatrixXd& G, const std::vector<int>& idx_p, const std::vector<int>& idx_q) {
  double kpp = 0, kqq = 0, kpq = 0;
  for (int i : idx_p)
    for (int j : idx_p) kpp += G(i, j);
  for (int i : idx_q)
    for (int j : idx_q) kqq += G(i, j);
  for (int i : idx_p)
    for (int j : idx_q) kpq += G(i, j);
  double np = idx_p.size(), nq = idx_q.size();
  return kpp / (np * np) + kqq / (nq * nq) - 2.0 * kpq / (np * nq);
}

}  // namespace

TEST_CASE("truncated_signature basics") {
  Eigen::MatrixXd v = Eigen::MatrixXd::Constant(5, 3, 2.5);
  TimedPath flat = make_path(Eigen::VectorXd::LinSpaced(5, 0, 1), v);
  TruncatedSignature s = truncated_signature(flat, 4);
  CHECK(s.tensors[0](0) == 1.0);
  for (int k = 1; k <= 4; ++k) {
    CHECK(s.tensors[k].size() == static_cast<int>(std::pow(3, k)));
    CHECK(s.tensors[k].cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  }

  // straight line with increment a: S^(k) = a^{tensor k} / k!
  Eigen::Vector2d a(0.7, -0.4);
  TruncatedSignature line = truncated_signature(line_path(a, 6), 3);
  CHECK(line.tensors[1].isApprox(a, 1e-12));
  Eigen::MatrixXd a2 = a * a.transpose() / 2.0;
  CHECK(line.tensors[2](0) == doctest::Approx(a2(0, 0)));
  CHECK(line.tensors[2](1) == doctest::Approx(a2(0, 1)));  // row-major flattening
  CHECK(line.tensors[2](2) == doctest::Approx(a2(1, 0)));
  // an order-3 entry: index (i,j,k) = a_i a_j a_k / 6
  CHECK(line.tensors[3](0 * 4 + 1 * 2 + 0) == doctest::Approx(a(0) * a(1) * a(0) / 6.0));

  // level-1 term of an arbitrary path is the total increment
  Rng rng(9);
  TimedPath p = random_path(7, 2, 2.0, rng);
  TruncatedSignature sp = truncated_signature(p, 2);
  Eigen::VectorXd inc = (p.values.row(p.n_points() - 1) - p.values.row(0)).transpose();
  CHECK(sp.tensors[1].isApprox(inc, 1e-12));
}

TEST_CASE("sig_kernel trivial values") {
  SigKernelConfig lin;
  lin.static_kernel.kind = StaticKernelSpec::Kind::Linear;
  lin.dyadic_order = 2;

  Eigen::MatrixXd cv = Eigen::MatrixXd::Constant(4, 2, 1.0);
  TimedPath c1 = make_path(Eigen::VectorXd::LinSpaced(4, 0, 1), cv);
  TimedPath c2 = make_path(Eigen::VectorXd::LinSpaced(4, 0, 1), (cv.array() + 5.0).matrix());
  CHECK(sig_kernel(c1, c2, lin) == doctest::Approx(1.0));  // only order 0 survives

  Rng rng(3);
  TimedPath x = random_path(6, 2, 1.0, rng);
  CHECK(sig_kernel(x, x, lin) >= 1.0);

  TimedPath empty;
  CHECK_THROWS_AS(sig_kernel(empty, x, lin), EmptyPath);
}

TEST_CASE("linear paths give the Bessel-type series") {
  // x_t = a t, y_t = b t with <a,b> = 1: k = sum_k 1/(k!)^2 ~ 2.2796
  SigKernelConfig lin;
  lin.static_kernel.kind = StaticKernelSpec::Kind::Linear;
  lin.dyadic_order = 5;
  Eigen::Vector2d a(1.0, 0.0), b(1.0, 5.0);  // <a,b> = 1
  double series = 0.0;
  for (int k = 0; k <= 20; ++k) {
    double f = std::tgamma(k + 1.0);
    series += 1.0 / (f * f);
  }
  CHECK(series == doctest::Approx(2.2796).epsilon(1e-4));
  double kv = sig_kernel(line_path(a, 9), line_path(b, 9), lin);
  CHECK(kv == doctest::Approx(series).epsilon(2e-3));
}

TEST_CASE("PDE solver matches the truncated-signature oracle") {
  SigKernelConfig lin;
  lin.static_kernel.kind = StaticKernelSpec::Kind::Linear;
  lin.dyadic_order = 3;
  Rng rng(17);
  for (int trial = 0; trial < 6; ++trial) {
    TimedPath x = random_path(6, 2, 1.0, rng);
    TimedPath y = random_path(5, 2, 1.0, rng);
    double pde = sig_kernel(x, y, lin);
    double oracle = sig_inner_oracle(x, y, 8);
    CHECK(std::abs(pde - oracle) / std::abs(oracle) < 1e-3);
  }
}

TEST_CASE("symmetry and dyadic convergence") {
  Rng rng(23);
  SigKernelConfig cfg;  // rbf bandwidth 1
  TimedPath x = random_path(7, 2, 1.5, rng);
  TimedPath y = random_path(6, 2, 1.5, rng);
  for (int order : {0, 1, 2, 3}) {
    cfg.dyadic_order = order;
    CHECK(std::abs(sig_kernel(x, y, cfg) - sig_kernel(y, x, cfg)) <= 1e-12);
  }
  double v[4];
  for (int order = 0; order < 4; ++order) {
    cfg.dyadic_order = order;
    v[order] = sig_kernel(x, y, cfg);
  }
  CHECK(std::abs(v[2] - v[1]) < std::abs(v[1] - v[0]));
  CHECK(std::abs(v[3] - v[2]) < std::abs(v[2] - v[1]));
}

TEST_CASE("gram structure and positive semidefiniteness") {
  // smooth trajectory-like paths: the PDE discretization error on rough
  // white-noise paths at dyadic order 1 can break PSD numerically
  Rng rng(31);
  std::vector<TimedPath> paths;
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(9, 0.0, 1.0);
    Eigen::MatrixXd v(9, 2);
    double a0 = rng.uniform(0.5, 1.5), a1 = rng.uniform(0.5, 1.5);
    double ph0 = rng.uniform(0.0, 6.28), ph1 = rng.uniform(0.0, 6.28);
    for (int k = 0; k < 9; ++k) {
      v(k, 0) = a0 * std::sin(3.0 * t(k) + ph0);
      v(k, 1) = a1 * std::exp(-t(k)) * std::cos(2.0 * t(k) + ph1);
    }
    paths.push_back(make_path(t, v));
  }
  SigKernelConfig cfg;
  Eigen::MatrixXd G = gram(paths, paths, cfg);
  REQUIRE(G.rows() == 20);
  CHECK(G.isApprox(G.transpose(), 1e-12));

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  CHECK(es.eigenvalues().minCoeff() >= -1e-6 * G.trace());

  CHECK(G(3, 7) == doctest::Approx(sig_kernel(paths[3], paths[7], cfg)));

  std::vector<TimedPath> one{paths[0]};
  Eigen::MatrixXd g1 = gram(one, one, cfg);
  CHECK(g1(0, 0) == doctest::Approx(sig_kernel(paths[0], paths[0], cfg)));

  std::vector<TimedPath> perm{paths[2], paths[0], paths[1]};
  std::vector<TimedPath> abc{paths[0], paths[1], paths[2]};
  Eigen::MatrixXd Gp = gram(perm, abc, cfg);
  Eigen::MatrixXd Ga = gram(abc, abc, cfg);
  CHECK(Gp.row(0).isApprox(Ga.row(2), 1e-12));
  CHECK(Gp.row(1).isApprox(Ga.row(0), 1e-12));
}

TEST_CASE("kernel_preprocess adds the time channel when configured") {
  Rng rng(2);
  TimedPath p = random_path(5, 1, 1.0, rng);
  SigKernelConfig cfg;
  TimedPath a = kernel_preprocess(p, cfg, 0.0, 1.0);
  CHECK(a.dim() == 2);
  cfg.time_augment = false;
  TimedPath b = kernel_preprocess(p, cfg, 0.0, 1.0);
  CHECK(b.dim() == 1);
}

TEST_CASE("mmd_squared identities and permutation test") {
  SigKernelConfig cfg;
  auto p = ou_sample(200, 0.0, 111);
  auto q = ou_sample(200, 0.0, 222);
  auto q_shift = ou_sample(200, 0.5, 333);

  CHECK(mmd_squared(p, p, cfg) == doctest::Approx(0.0));  // plug-in identity
  CHECK_THROWS_AS(mmd_squared({}, p, cfg), EmptySample);

  // permutation null from the pooled Gram (the oracle for the 95% threshold)
  auto threshold_and_stat = [&](const std::vector<TimedPath>& a, const std::vector<TimedPath>& b) {
    std::vector<TimedPath> pooled = a;
    pooled.insert(pooled.end(), b.begin(), b.end());
    Eigen::MatrixXd G = gram(pooled, pooled, cfg);
    int n = static_cast<int>(a.size());
    std::vector<int> ia(n), ib(n);
    std::iota(ia.begin(), ia.end(), 0);
    std::iota(ib.begin(), ib.end(), n);
    double stat = vstat_mmd_from_gram(G, ia, ib);

    Rng rng(7);
    std::vector<int> all(2 * n);
    std::iota(all.begin(), all.end(), 0);
    std::vector<double> null_stats;
    for (int rep = 0; rep < 200; ++rep) {
      for (int i = 2 * n - 1; i > 0; --i) std::swap(all[i], all[rng.uniform_int(0, i)]);
      std::vector<int> pa(all.begin(), all.begin() + n), pb(all.begin() + n, all.end());
      null_stats.push_back(vstat_mmd_from_gram(G, pa, pb));
    }
    std::sort(null_stats.begin(), null_stats.end());
    return std::make_pair(null_stats[189], stat);  // 95th percentile
  };

  auto [thr_same, stat_same] = threshold_and_stat(p, q);
  CHECK(stat_same < thr_same);
  auto [thr_diff, stat_diff] = threshold_and_stat(p, q_shift);
  CHECK(stat_diff > thr_diff);

  double mmd_lib = mmd_squared(p, q_shift, cfg);
  std::vector<TimedPath> pooled = p;
  pooled.insert(pooled.end(), q_shift.begin(), q_shift.end());
  Eigen::MatrixXd G = gram(pooled, pooled, cfg);
  std::vector<int> ia(200), ib(200);
  std::iota(ia.begin(), ia.end(), 0);
  std::iota(ib.begin(), ib.end(), 200);
  CHECK(mmd_lib == doctest::Approx(vstat_mmd_from_gram(G, ia, ib)).epsilon(1e-10));
}

TEST_CASE("sig_score small-sample formulas") {
  SigKernelConfig cfg;
  Rng rng(41);
  TimedPath y = random_path(6, 2, 1.5, rng);
  TimedPath a = random_path(6, 2, 1.5, rng);
  TimedPath b = random_path(6, 2, 1.5, rng);

  CHECK_THROWS_AS(sig_score({a}, y, cfg), SampleTooSmall);

  double kab = sig_kernel(a, b, cfg), kay = sig_kernel(a, y, cfg), kby = sig_kernel(b, y, cfg);
  CHECK(sig_score({a, b}, y, cfg) == doctest::Approx(kab - (kay + kby)).epsilon(1e-10));

  double kyy = sig_kernel(y, y, cfg);
  CHECK(sig_score({y, y, y}, y, cfg) == doctest::Approx(kyy - 2.0 * kyy).epsilon(1e-10));

  // include_diagonal switches the first term to the plug-in mean
  double kaa = sig_kernel(a, a, cfg), kbb = sig_kernel(b, b, cfg);
  double plug = (kaa + kbb + 2 * kab) / 4.0 - (kay + kby);
  CHECK(sig_score({a, b}, y, cfg, true) == doctest::Approx(plug).epsilon(1e-10));
}

TEST_CASE("sig_score prefers the true law") {
  SigKernelConfig cfg;
  auto model = ou_sample(16, 0.0, 900);
  auto ys_p = ou_sample(250, 0.0, 901);
  auto ys_q = ou_sample(250, 1.0, 902);
  double sp = 0, sq = 0;
  for (const auto& y : ys_p) sp += sig_score(model, y, cfg);
  for (const auto& y : ys_q) sq += sig_score(model, y, cfg);
  CHECK(sp / 250.0 < sq / 250.0);
}

TEST_CASE("sig_kernel_with_grads matches finite differences") {
  Rng rng(51);
  for (auto kind : {StaticKernelSpec::Kind::Linear, StaticKernelSpec::Kind::Rbf}) {
    SigKernelConfig cfg;
    cfg.static_kernel.kind = kind;
    cfg.dyadic_order = 1;
    TimedPath x = random_path(5, 2, 1.5, rng);
    TimedPath y = random_path(4, 2, 1.5, rng);
    SigKernelGrads g = sig_kernel_with_grads(x, y, cfg, true, true);
    CHECK(g.value == doctest::Approx(sig_kernel(x, y, cfg)).epsilon(1e-12));
    REQUIRE(g.grad_x.rows() == x.n_points());
    REQUIRE(g.grad_y.rows() == y.n_points());

    const double h = 1e-6;
    for (int i = 0; i < x.n_points(); ++i)
      for (int c = 0; c < 2; ++c) {
        TimedPath xp = x, xm = x;
        xp.values(i, c) += h;
        xm.values(i, c) -= h;
        double fd = (sig_kernel(xp, y, cfg) - sig_kernel(xm, y, cfg)) / (2 * h);
        CHECK(g.grad_x(i, c) == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
      }
    for (int j = 0; j < y.n_points(); ++j)
      for (int c = 0; c < 2; ++c) {
        TimedPath yp = y, ym = y;
        yp.values(j, c) += h;
        ym.values(j, c) -= h;
        double fd = (sig_kernel(x, yp, cfg) - sig_kernel(x, ym, cfg)) / (2 * h);
        CHECK(g.grad_y(j, c) == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
      }
  }
}

TEST_CASE("sig_score_with_grads matches finite differences") {
  SigKernelConfig cfg;
  Rng rng(61);
  std::vector<TimedPath> sample{random_path(5, 2, 1.5, rng), random_path(5, 2, 1.5, rng),
                                random_path(5, 2, 1.5, rng)};
  TimedPath y = random_path(5, 2, 1.5, rng);
  std::vector<Eigen::MatrixXd> grads;
  double val = sig_score_with_grads(sample, y, cfg, grads);
  CHECK(val == doctest::Approx(sig_score(sample, y, cfg)).epsilon(1e-10));
  REQUIRE(grads.size() == sample.size());

  const double h = 1e-6;
  for (size_t m = 0; m < sample.size(); ++m)
    for (int i = 0; i < sample[m].n_points(); ++i)
      for (int c = 0; c < 2; ++c) {
        auto sp = sample, sm = sample;
        sp[m].values(i, c) += h;
        sm[m].values(i, c) -= h;
        double fd = (sig_score(sp, y, cfg) - sig_score(sm, y, cfg)) / (2 * h);
        CHECK(grads[m](i, c) == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
      }
}
