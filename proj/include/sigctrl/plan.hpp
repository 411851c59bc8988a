#pragma once

#include <Eigen/Core>
#include <vector>

#include "sigctrl/path.hpp"
#include "sigctrl/sde.hpp"

namespace sigctrl {

enum class ControlFamily { CancerBangBang, CovidExpDecay };

// Parameterized open-loop treatment plan. Dosages are stored in raw clinical
// units (mg / Gy); phi = (timepoints, dosages) per control channel.
struct ControlPlan {
  ControlFamily family = ControlFamily::CancerBangBang;
  std::vector<Eigen::VectorXd> timepoints;  // per channel, K entries each
  std::vector<Eigen::VectorXd> dosages;
  double pulse_width = 1.0;  // cancer: each administration is held for one day
  double k_kel = 1.0;        // covid: exponential elimination rate

  int n_channels() const { return static_cast<int>(timepoints.size()); }
  int max_administrations() const { return timepoints.empty() ? 0 : static_cast<int>(timepoints[0].size()); }
};

// Hard rendering: exact indicator pulses (cancer) / decay impulses (covid).
// Overlapping pulses sum and are clipped to [0, dose_max] per channel.
ControlFn render_control(const ControlPlan& plan, const Eigen::VectorXd& dose_max);
ControlFn render_control(const ControlPlan& plan);  // no clipping

// Smooth surrogate used inside gradient-based optimization: the indicator
// 1(t in [a, a+w]) is replaced by sigmoid(s(t-a)) * sigmoid(s(a+w-t)).
double smooth_window(double t, double a, double w, double slope);
ControlFn render_control_smooth(const ControlPlan& plan, double slope);

// u(t) for channel c plus derivatives w.r.t. the channel's (timepoint_i, dosage_i).
struct ControlChannelEval {
  double value = 0.0;
  Eigen::VectorXd d_timepoints;
  Eigen::VectorXd d_dosages;
};
ControlChannelEval eval_smooth_channel(const ControlPlan& plan, int channel, double t, double slope);

// Plan rendered on an explicit grid (hard indicators), as a TimedPath.
TimedPath plan_to_path(const ControlPlan& plan, const Eigen::VectorXd& times, const Eigen::VectorXd& dose_max);

}  // namespace sigctrl
