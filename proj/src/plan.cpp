#include "sigctrl/plan.hpp"

#include <cmath>

#include "sigctrl/errors.hpp"

namespace sigctrl {

namespace {

double hard_channel_value(const ControlPlan& plan, int c, double t) {
  const Eigen::VectorXd& tp = plan.timepoints[c];
  const Eigen::VectorXd& ds = plan.dosages[c];
  double v = 0.0;
  if (plan.family == ControlFamily::CancerBangBang) {
    for (Eigen::Index i = 0; i < tp.size(); ++i)
      if (t >= tp(i) && t <= tp(i) + plan.pulse_width) v += ds(i);
  } else {
    for (Eigen::Index i = 0; i < tp.size(); ++i)
      if (t >= tp(i)) v += ds(i) * std::exp(-plan.k_kel * (t - tp(i)));
  }
  return v;
}

}  // namespace

ControlFn render_control(const ControlPlan& plan, const Eigen::VectorXd& dose_max) {
  if (dose_max.size() != plan.n_channels()) throw SizeMismatch("dose_max size mismatch");
  return [plan, dose_max](double t) {
    Eigen::VectorXd u(plan.n_channels());
    for (int c = 0; c < plan.n_channels(); ++c)
      u(c) = std::min(hard_channel_value(plan, c, t), dose_max(c));
    return u;
  };
}

ControlFn render_control(const ControlPlan& plan) {
  return [plan](double t) {
    Eigen::VectorXd u(plan.n_channels());
    for (int c = 0; c < plan.n_channels(); ++c) u(c) = hard_channel_value(plan, c, t);
    return u;
  };
}

double smooth_window(double t, double a, double w, double slope) {
  const auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  return sig(slope * (t - a)) * sig(slope * (a + w - t));
}

ControlChannelEval eval_smooth_channel(const ControlPlan& plan, int channel, double t, double slope) {
  const Eigen::VectorXd& tp = plan.timepoints[channel];
  const Eigen::VectorXd& ds = plan.dosages[channel];
  ControlChannelEval out;
  out.d_timepoints = Eigen::VectorXd::Zero(tp.size());
  out.d_dosages = Eigen::VectorXd::Zero(tp.size());
  const auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  if (plan.family == ControlFamily::CancerBangBang) {
    for (Eigen::Index i = 0; i < tp.size(); ++i) {
      const double sl = sig(slope * (t - tp(i)));
      const double sr = sig(slope * (tp(i) + plan.pulse_width - t));
      const double win = sl * sr;
      out.value += ds(i) * win;
      out.d_dosages(i) = win;
      // d/da [sig(s(t-a)) sig(s(a+w-t))] = s * (-sl(1-sl) sr + sl sr(1-sr))
      out.d_timepoints(i) = ds(i) * slope * (sl * sr * (1.0 - sr) - sl * (1.0 - sl) * sr);
    }
  } else {
    for (Eigen::Index i = 0; i < tp.size(); ++i) {
      const double gate = sig(slope * (t - tp(i)));
      const double dec = std::exp(-plan.k_kel * (t - tp(i)));
      out.value += ds(i) * gate * dec;
      out.d_dosages(i) = gate * dec;
      out.d_timepoints(i) = ds(i) * dec * (-slope * gate * (1.0 - gate) + gate * plan.k_kel);
    }
  }
  return out;
}

ControlFn render_control_smooth(const ControlPlan& plan, double slope) {
  return [plan, slope](double t) {
    Eigen::VectorXd u(plan.n_channels());
    for (int c = 0; c < plan.n_channels(); ++c) u(c) = eval_smooth_channel(plan, c, t, slope).value;
    return u;
  };
}

TimedPath plan_to_path(const ControlPlan& plan, const Eigen::VectorXd& times, const Eigen::VectorXd& dose_max) {
  ControlFn fn = render_control(plan, dose_max);
  Eigen::MatrixXd values(times.size(), plan.n_channels());
  for (Eigen::Index i = 0; i < times.size(); ++i) values.row(i) = fn(times(i));
  return TimedPath{times, values, {}};
}

}  // namespace sigctrl
