#include "sigctrl/path.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace sigctrl {

namespace {

void validate(const Eigen::VectorXd& times, const Eigen::MatrixXd& values) {
  if (times.size() != values.rows()) throw LengthMismatch("times/values row count mismatch");
  if (times.size() < 2) throw LengthMismatch("a path needs at least 2 points");
  if (values.cols() < 1) throw LengthMismatch("a path needs at least 1 channel");
  for (Eigen::Index i = 1; i < times.size(); ++i)
    if (!(times(i) > times(i - 1))) throw NonMonotoneTimes("times must be strictly increasing");
  if (!times.allFinite() || !values.allFinite()) throw NonFiniteValue("non-finite path entry");
}

}  // namespace

TimedPath make_path(const Eigen::VectorXd& times, const Eigen::MatrixXd& values) {
  validate(times, values);
  return TimedPath{times, values, {}};
}

TimedPath make_path(const std::vector<double>& times, const Eigen::MatrixXd& values) {
  Eigen::VectorXd t = Eigen::Map<const Eigen::VectorXd>(times.data(), static_cast<Eigen::Index>(times.size()));
  return make_path(t, values);
}

TimedPath mask_uniform(const TimedPath& path, double fraction, Rng& rng) {
  const int n = path.n_points();
  const int n_interior = n - 1;  // every point but the first is a candidate
  const int n_remove = static_cast<int>(std::floor(fraction * n));
  if (n - n_remove < 2) throw TooFewPointsRemain("masking would leave fewer than 2 points");
  if (n_remove == 0) return path;

  // partial Fisher-Yates over candidate indices 1..n-1
  std::vector<int> idx(n_interior);
  std::iota(idx.begin(), idx.end(), 1);
  for (int k = 0; k < n_remove; ++k) {
    int j = k + rng.uniform_int(0, n_interior - 1 - k);
    std::swap(idx[k], idx[j]);
  }
  std::vector<bool> removed(n, false);
  for (int k = 0; k < n_remove; ++k) removed[idx[k]] = true;

  const int m = n - n_remove;
  Eigen::VectorXd times(m);
  Eigen::MatrixXd values(m, path.dim());
  int r = 0;
  for (int i = 0; i < n; ++i) {
    if (removed[i]) continue;
    times(r) = path.times(i);
    values.row(r) = path.values.row(i);
    ++r;
  }
  return TimedPath{times, values, path.channel_labels};
}

Eigen::VectorXd linear_interpolate(const TimedPath& path, double t) {
  if (t < path.first_time() || t > path.last_time()) throw OutOfRange("interpolation time outside path span");
  const Eigen::VectorXd& ts = path.times;
  auto it = std::lower_bound(ts.data(), ts.data() + ts.size(), t);
  Eigen::Index hi = it - ts.data();
  if (hi == 0) return path.values.row(0);
  if (hi == ts.size()) return path.values.row(ts.size() - 1);
  if (ts(hi) == t) return path.values.row(hi);
  Eigen::Index lo = hi - 1;
  double w = (t - ts(lo)) / (ts(hi) - ts(lo));
  return (1.0 - w) * path.values.row(lo).transpose() + w * path.values.row(hi).transpose();
}

Eigen::MatrixXd interpolate_at(const TimedPath& path, const Eigen::VectorXd& times) {
  Eigen::MatrixXd out(times.size(), path.dim());
  for (Eigen::Index i = 0; i < times.size(); ++i) out.row(i) = linear_interpolate(path, times(i));
  return out;
}

TimedPath time_augment(const TimedPath& path, double t_s, double t_f) {
  if (!(t_f > t_s)) throw OutOfRange("degenerate augmentation interval");
  Eigen::MatrixXd values(path.n_points(), path.dim() + 1);
  values.leftCols(path.dim()) = path.values;
  values.col(path.dim()) = (path.times.array() - t_s) / (t_f - t_s);
  return TimedPath{path.times, values, {}};
}

NormStats fit_norm(const std::vector<Trajectory>& train, StateTransform transform,
                   const Eigen::VectorXd& control_min, const Eigen::VectorXd& control_max) {
  if (train.empty()) throw EmptySample("fit_norm needs at least one trajectory");
  if (control_min.size() != control_max.size()) throw LengthMismatch("control bound size mismatch");
  for (Eigen::Index c = 0; c < control_min.size(); ++c)
    if (!(control_max(c) > control_min(c))) throw DegenerateBounds("control_max must exceed control_min");

  const int d = train.front().state.dim();
  NormStats stats;
  stats.state_transform = transform;
  if (transform == StateTransform::LogThenStandardize) {
    stats.log_channel.assign(d, true);
    for (const auto& tr : train)
      for (int c = 0; c < d; ++c)
        if ((tr.state.values.col(c).array() <= 0.0).any()) stats.log_channel[c] = false;
  }

  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d), sumsq = Eigen::VectorXd::Zero(d);
  long count = 0;
  for (const auto& tr : train) {
    Eigen::MatrixXd v = tr.state.values;
    for (int c = 0; c < d; ++c)
      if (stats.logs(c)) v.col(c) = v.col(c).array().log().matrix();
    sum += v.colwise().sum().transpose();
    sumsq += v.array().square().matrix().colwise().sum().transpose();
    count += v.rows();
  }
  stats.state_mean = sum / static_cast<double>(count);
  Eigen::VectorXd var = sumsq / static_cast<double>(count) - stats.state_mean.array().square().matrix();
  stats.state_std = var.array().max(0.0).sqrt();
  for (int c = 0; c < d; ++c)
    if (stats.state_std(c) < 1e-12) throw ZeroVariance("constant state channel in training data");
  stats.control_min = control_min;
  stats.control_max = control_max;
  return stats;
}

Eigen::VectorXd apply_norm_state(const Eigen::VectorXd& x, const NormStats& stats) {
  Eigen::VectorXd v = x;
  for (Eigen::Index c = 0; c < v.size(); ++c) {
    if (!stats.logs(static_cast<int>(c))) continue;
    if (!(v(c) > 0.0)) throw NonPositiveForLog("log transform needs positive states");
    v(c) = std::log(v(c));
  }
  return ((v - stats.state_mean).array() / stats.state_std.array()).matrix();
}

Eigen::VectorXd invert_norm_state(const Eigen::VectorXd& z, const NormStats& stats) {
  Eigen::VectorXd v = (z.array() * stats.state_std.array()).matrix() + stats.state_mean;
  for (Eigen::Index c = 0; c < v.size(); ++c)
    if (stats.logs(static_cast<int>(c))) v(c) = std::exp(v(c));
  return v;
}

Eigen::VectorXd apply_norm_control(const Eigen::VectorXd& u, const NormStats& stats) {
  return ((u - stats.control_min).array() / (stats.control_max - stats.control_min).array()).matrix();
}

TimedPath apply_norm(const TimedPath& path, const NormStats& stats, ChannelRole role) {
  Eigen::MatrixXd values(path.n_points(), path.dim());
  for (int i = 0; i < path.n_points(); ++i) {
    if (role == ChannelRole::State)
      values.row(i) = apply_norm_state(path.values.row(i), stats);
    else
      values.row(i) = apply_norm_control(path.values.row(i), stats);
  }
  return TimedPath{path.times, values, path.channel_labels};
}

TimedPath invert_norm(const TimedPath& path, const NormStats& stats, ChannelRole role) {
  Eigen::MatrixXd values(path.n_points(), path.dim());
  for (int i = 0; i < path.n_points(); ++i) {
    if (role == ChannelRole::State) {
      values.row(i) = invert_norm_state(path.values.row(i), stats);
    } else {
      values.row(i) =
          (path.values.row(i).transpose().array() * (stats.control_max - stats.control_min).array()).matrix() +
          stats.control_min;
    }
  }
  return TimedPath{path.times, values, path.channel_labels};
}

namespace {

using nlohmann::json;

json vec_to_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vec_from_json(const json& j) {
  std::vector<double> v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json mat_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd mat_from_json(const json& j) {
  const auto rows = j.size();
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  const auto cols = j.at(0).size();
  Eigen::MatrixXd m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
  return m;
}

json path_to_json(const TimedPath& p) {
  return json{{"times", vec_to_json(p.times)}, {"values", mat_to_json(p.values)}};
}

TimedPath path_from_json(const json& j) {
  return make_path(vec_from_json(j.at("times")), mat_from_json(j.at("values")));
}

}  // namespace

void save_dataset(const std::string& file, const Dataset& ds) {
  json j;
  j["format"] = "sigctrl-dataset-v1";
  j["t_s"] = ds.t_s;
  j["t_f"] = ds.t_f;
  j["norm"] = {
      {"state_mean", vec_to_json(ds.norm.state_mean)},
      {"state_std", vec_to_json(ds.norm.state_std)},
      {"control_min", vec_to_json(ds.norm.control_min)},
      {"control_max", vec_to_json(ds.norm.control_max)},
      {"state_transform", ds.norm.state_transform == StateTransform::LogThenStandardize ? "log-then-standardize"
                                                                                        : "standardize"},
      {"log_channel", ds.norm.log_channel},
  };
  json trajs = json::array();
  for (const auto& tr : ds.trajectories) {
    trajs.push_back(json{{"state", path_to_json(tr.state)},
                         {"control", path_to_json(tr.control)},
                         {"x0", vec_to_json(tr.x0)}});
  }
  j["trajectories"] = std::move(trajs);
  std::ofstream out(file);
  if (!out) throw Error("cannot open " + file + " for writing");
  out << j.dump(1) << "\n";
}

Dataset load_dataset(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw MissingArtifact("cannot open dataset file " + file);
  json j = json::parse(in);
  if (j.value("format", "") != std::string("sigctrl-dataset-v1"))
    throw ConfigInvalid("unknown dataset format in " + file);
  Dataset ds;
  ds.t_s = j.at("t_s").get<double>();
  ds.t_f = j.at("t_f").get<double>();
  const json& n = j.at("norm");
  ds.norm.state_mean = vec_from_json(n.at("state_mean"));
  ds.norm.state_std = vec_from_json(n.at("state_std"));
  ds.norm.control_min = vec_from_json(n.at("control_min"));
  ds.norm.control_max = vec_from_json(n.at("control_max"));
  ds.norm.state_transform = n.at("state_transform").get<std::string>() == "log-then-standardize"
                                ? StateTransform::LogThenStandardize
                                : StateTransform::Standardize;
  if (n.contains("log_channel")) ds.norm.log_channel = n.at("log_channel").get<std::vector<bool>>();
  for (const auto& tj : j.at("trajectories")) {
    Trajectory tr;
    tr.state = path_from_json(tj.at("state"));
    tr.control = path_from_json(tj.at("control"));
    tr.x0 = vec_from_json(tj.at("x0"));
    ds.trajectories.push_back(std::move(tr));
  }
  return ds;
}

}  // namespace sigctrl
