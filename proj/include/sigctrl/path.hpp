#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "sigctrl/errors.hpp"
#include "sigctrl/rng.hpp"

namespace sigctrl {

// One irregular trajectory: strictly increasing times with a d-dimensional
// value per sample. Immutable by convention after construction.
struct TimedPath {
  Eigen::VectorXd times;   // n
  Eigen::MatrixXd values;  // n x d
  std::vector<std::string> channel_labels;

  int n_points() const { return static_cast<int>(times.size()); }
  int dim() const { return static_cast<int>(values.cols()); }
  double first_time() const { return times(0); }
  double last_time() const { return times(times.size() - 1); }
};

TimedPath make_path(const Eigen::VectorXd& times, const Eigen::MatrixXd& values);
TimedPath make_path(const std::vector<double>& times, const Eigen::MatrixXd& values);

// Removes floor(fraction * n) non-initial points uniformly at random. The
// first sample is always kept so an initial condition exists.
TimedPath mask_uniform(const TimedPath& path, double fraction, Rng& rng);

Eigen::VectorXd linear_interpolate(const TimedPath& path, double t);

// Values of the path at each of the given times (rows), linearly interpolated.
Eigen::MatrixXd interpolate_at(const TimedPath& path, const Eigen::VectorXd& times);

// Appends the channel (t - t_s) / (t_f - t_s). Not idempotent; callers augment
// exactly once before kernel evaluation.
TimedPath time_augment(const TimedPath& path, double t_s, double t_f);

enum class StateTransform { Standardize, LogThenStandardize };
enum class ChannelRole { State, Control };

struct NormStats {
  Eigen::VectorXd state_mean, state_std;
  Eigen::VectorXd control_min, control_max;
  StateTransform state_transform = StateTransform::Standardize;
  // Under LogThenStandardize, the log applies per channel and only where the
  // training data is strictly positive (dosing compartments start at exactly
  // 0); other channels fall back to plain standardization. Empty means "no
  // channel logged".
  std::vector<bool> log_channel;

  bool logs(int c) const {
    return state_transform == StateTransform::LogThenStandardize &&
           c < static_cast<int>(log_channel.size()) && log_channel[c];
  }
};

struct Trajectory {
  TimedPath state;
  TimedPath control;
  Eigen::VectorXd x0;
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  NormStats norm;
  double t_s = 0.0, t_f = 0.0;

  int size() const { return static_cast<int>(trajectories.size()); }
};

// Fits state statistics on the given (training) trajectories; control bounds
// are the task's known dose bounds, not data-derived.
NormStats fit_norm(const std::vector<Trajectory>& train, StateTransform transform,
                   const Eigen::VectorXd& control_min, const Eigen::VectorXd& control_max);

TimedPath apply_norm(const TimedPath& path, const NormStats& stats, ChannelRole role);
TimedPath invert_norm(const TimedPath& path, const NormStats& stats, ChannelRole role);

// Value-level transforms used when whole paths are not at hand.
Eigen::VectorXd apply_norm_state(const Eigen::VectorXd& x, const NormStats& stats);
Eigen::VectorXd invert_norm_state(const Eigen::VectorXd& z, const NormStats& stats);
Eigen::VectorXd apply_norm_control(const Eigen::VectorXd& u, const NormStats& stats);

// Self-describing JSON container, one file per split. Doubles survive the
// round trip bit-exactly.
void save_dataset(const std::string& file, const Dataset& ds);
Dataset load_dataset(const std::string& file);

}  // namespace sigctrl
