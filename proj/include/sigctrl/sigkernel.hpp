#pragma once

#include <Eigen/Core>
#include <vector>

#include "sigctrl/path.hpp"

namespace sigctrl {

// Graded iterated integrals of a piecewise-linear path, exact up to the
// truncation level. tensors[k] is the order-k tensor flattened row-major
// (length d^k); tensors[0] = [1].
struct TruncatedSignature {
  int level = 0;
  int dim = 0;
  std::vector<Eigen::VectorXd> tensors;
};

TruncatedSignature truncated_signature(const TimedPath& path, int level);

// Sum over levels of the flat tensor inner products.
double sig_inner(const TruncatedSignature& a, const TruncatedSignature& b);

struct StaticKernelSpec {
  enum class Kind { Rbf, Linear };
  Kind kind = Kind::Rbf;
  double bandwidth = 1.0;
};

struct SigKernelConfig {
  StaticKernelSpec static_kernel;
  int dyadic_order = 1;
  bool time_augment = true;  // consumed by kernel_preprocess, not by sig_kernel itself
};

// Adds the normalized-time channel when the config asks for it. Kernel inputs
// go through normalize -> time_augment -> kernel.
TimedPath kernel_preprocess(const TimedPath& path, const SigKernelConfig& cfg, double t_s, double t_f);

// Terminal value of the Goursat problem
//   d2u/dsdt = (mixed second-order increment of the lifted static kernel) u
// on the sample grid refined 2^dyadic_order times per segment.
double sig_kernel(const TimedPath& x, const TimedPath& y, const SigKernelConfig& cfg);

struct SigKernelGrads {
  double value = 0.0;
  Eigen::MatrixXd grad_x;  // d value / d x.values, same shape as x.values (empty if not requested)
  Eigen::MatrixXd grad_y;
};
SigKernelGrads sig_kernel_with_grads(const TimedPath& x, const TimedPath& y, const SigKernelConfig& cfg,
                                     bool want_grad_x, bool want_grad_y);

Eigen::MatrixXd gram(const std::vector<TimedPath>& paths_a, const std::vector<TimedPath>& paths_b,
                     const SigKernelConfig& cfg);

// Plug-in V-statistic by default (identical samples give exactly 0);
// unbiased=true drops the diagonal of the within-sample terms.
double mmd_squared(const std::vector<TimedPath>& sample_p, const std::vector<TimedPath>& sample_q,
                   const SigKernelConfig& cfg, bool unbiased = false);

// Signature scoring rule E[k(x,x')] - 2 E[k(x,y)] with the first expectation
// estimated over off-diagonal pairs (include_diagonal switches to the plug-in).
double sig_score(const std::vector<TimedPath>& model_sample, const TimedPath& y, const SigKernelConfig& cfg,
                 bool include_diagonal = false);

// Score plus gradients w.r.t. each model path's values.
double sig_score_with_grads(const std::vector<TimedPath>& model_sample, const TimedPath& y,
                            const SigKernelConfig& cfg, std::vector<Eigen::MatrixXd>& grads);

}  // namespace sigctrl
