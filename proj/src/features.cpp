#include "fedvlf/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "fedvlf/binary_io.hpp"
#include "fedvlf/error.hpp"

namespace fedvlf::features {

namespace {

constexpr char kWindowMagic[4] = {'V', 'L', 'F', 'W'};
constexpr std::uint32_t kWindowVersion = 1;

template <int N>
void welford_merge(double& count, Eigen::Matrix<double, N, 1>& mean, Eigen::Matrix<double, N, 1>& m2,
                   double other_count, const Eigen::Matrix<double, N, 1>& other_mean,
                   const Eigen::Matrix<double, N, 1>& other_m2) {
  if (other_count == 0.0) return;
  const double total = count + other_count;
  const Eigen::Matrix<double, N, 1> delta = other_mean - mean;
  mean += delta * (other_count / total);
  m2 += other_m2 + delta.cwiseProduct(delta) * (count * other_count / total);
  count = total;
}

template <int N>
Eigen::Matrix<double, N, 1> checked_scale(const Eigen::Matrix<double, N, 1>& m2, double count,
                                          const auto& names) {
  Eigen::Matrix<double, N, 1> scale = (m2 / count).cwiseSqrt();
  for (int i = 0; i < N; ++i) {
    if (!(scale[i] > 0.0) || !std::isfinite(scale[i])) {
      throw DataError(std::string("degenerate feature '") + names[i] + "': zero variance over the training set");
    }
  }
  return scale;
}

nlohmann::json vec_json(const auto& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

template <int N>
Eigen::Matrix<double, N, 1> vec_from_json(const nlohmann::json& a) {
  if (!a.is_array() || a.size() != static_cast<std::size_t>(N)) {
    throw FormatError("standardizer vector has wrong dimension");
  }
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v[i] = a[i].get<double>();
  return v;
}

}  // namespace

ProjectionRef ProjectionRef::centered_on(double lon0, double lat0) {
  ProjectionRef ref;
  ref.lon0 = lon0;
  ref.lat0 = lat0;
  ref.meters_per_deg_lat = kMetersPerDegLat;
  ref.meters_per_deg_lon = kMetersPerDegLat * std::cos(lat0 * std::numbers::pi / 180.0);
  return ref;
}

ProjectionRef ProjectionRef::from_trajectories(std::span<const ais::VesselTrajectory> trajectories) {
  double lon_min = std::numeric_limits<double>::infinity(), lon_max = -lon_min;
  double lat_min = lon_min, lat_max = -lon_min;
  for (const auto& traj : trajectories) {
    for (const auto& p : traj.points) {
      lon_min = std::min(lon_min, p.lon);
      lon_max = std::max(lon_max, p.lon);
      lat_min = std::min(lat_min, p.lat);
      lat_max = std::max(lat_max, p.lat);
    }
  }
  if (!std::isfinite(lon_min)) throw DataError("cannot place a projection reference on an empty dataset");
  return centered_on(0.5 * (lon_min + lon_max), 0.5 * (lat_min + lat_max));
}

Eigen::Vector2d project(double lon, double lat, const ProjectionRef& ref) {
  return {(lon - ref.lon0) * ref.meters_per_deg_lon, (lat - ref.lat0) * ref.meters_per_deg_lat};
}

void WindowConfig::validate() const {
  if (len_min < 1 || len_max < len_min) throw ConfigError("window lengths must satisfy 1 <= len_min <= len_max");
}

double wrap_course_delta(double phi_prev, double phi_curr) {
  double d = std::fmod(phi_curr - phi_prev, 360.0);
  if (d > 180.0) d -= 360.0;
  if (d <= -180.0) d += 360.0;
  return d;
}

TransitionSequence derive_transitions(const ais::VesselTrajectory& traj, const ProjectionRef& ref) {
  const auto n = static_cast<Eigen::Index>(traj.size());
  if (n < 2) throw DataError("trajectory too short for transitions: need at least 2 points");
  TransitionSequence seq;
  seq.mmsi = traj.mmsi;
  seq.vessel_type = traj.vessel_type;
  seq.steps.setZero(kInputDim, n - 1);
  seq.t_end.resize(static_cast<std::size_t>(n - 1));

  Eigen::Vector2d prev = project(traj.points[0].lon, traj.points[0].lat, ref);
  for (Eigen::Index i = 1; i < n; ++i) {
    const auto& a = traj.points[static_cast<std::size_t>(i - 1)];
    const auto& b = traj.points[static_cast<std::size_t>(i)];
    const Eigen::Vector2d cur = project(b.lon, b.lat, ref);
    auto col = seq.steps.col(i - 1);
    col[kDx] = cur.x() - prev.x();
    col[kDy] = cur.y() - prev.y();
    col[kDv] = b.speed - a.speed;
    col[kDphi] = wrap_course_delta(a.course, b.course);
    col[kDtCurr] = b.t - a.t;
    seq.t_end[static_cast<std::size_t>(i - 1)] = b.t;
    prev = cur;
  }
  for (Eigen::Index i = 0; i + 1 < seq.size(); ++i) seq.steps(kDtNext, i) = seq.steps(kDtCurr, i + 1);
  return seq;
}

std::vector<TrainingWindow> make_windows(const TransitionSequence& seq, const WindowConfig& cfg) {
  cfg.validate();
  std::vector<TrainingWindow> out;
  const Eigen::Index n = seq.size();
  for (int len = cfg.len_min; len <= cfg.len_max; ++len) {
    const Eigen::Index stride = (len + 1) / 2;
    for (Eigen::Index start = 0; start + len < n; start += stride) {
      const Eigen::Index label_idx = start + len;
      TrainingWindow w;
      w.vessel_type = seq.vessel_type;
      w.steps = seq.steps.middleCols(start, len);
      w.label << seq.steps(kDx, label_idx), seq.steps(kDy, label_idx);
      w.horizon_s = seq.steps(kDtCurr, label_idx);
      w.t_end = seq.t_end[static_cast<std::size_t>(label_idx - 1)];
      out.push_back(std::move(w));
    }
  }
  return out;
}

std::vector<TrainingWindow> windows_from_trajectories(std::span<const ais::VesselTrajectory> trajectories,
                                                      const ProjectionRef& ref, const WindowConfig& cfg) {
  std::vector<TrainingWindow> out;
  for (const auto& traj : trajectories) {
    if (traj.size() < 2) continue;
    auto ws = make_windows(derive_transitions(traj, ref), cfg);
    std::move(ws.begin(), ws.end(), std::back_inserter(out));
  }
  return out;
}

void FeatureMoments::add(const TrainingWindow& w) {
  const double n = static_cast<double>(w.length());
  if (n > 0) {
    const FeatureVector mean = w.steps.rowwise().mean();
    const FeatureVector m2 = (w.steps.colwise() - mean).rowwise().squaredNorm();
    welford_merge<kInputDim>(input_count, input_mean, input_m2, n, mean, m2);
  }
  welford_merge<kLabelDim>(label_count, label_mean, label_m2, 1.0, w.label, LabelVector::Zero());
}

void FeatureMoments::merge(const FeatureMoments& other) {
  welford_merge<kInputDim>(input_count, input_mean, input_m2, other.input_count, other.input_mean, other.input_m2);
  welford_merge<kLabelDim>(label_count, label_mean, label_m2, other.label_count, other.label_mean, other.label_m2);
}

Standardizer::Standardizer(FeatureVector input_mean, FeatureVector input_scale, LabelVector label_mean,
                           LabelVector label_scale)
    : input_mean_(std::move(input_mean)),
      input_scale_(std::move(input_scale)),
      label_mean_(std::move(label_mean)),
      label_scale_(std::move(label_scale)) {
  if ((input_scale_.array() <= 0.0).any() || (label_scale_.array() <= 0.0).any()) {
    throw DataError("standardizer scales must be positive");
  }
}

Standardizer Standardizer::fit(std::span<const TrainingWindow> train) {
  FeatureMoments m;
  for (const auto& w : train) m.add(w);
  return from_moments(m);
}

Standardizer Standardizer::from_moments(const FeatureMoments& m) {
  if (m.label_count == 0.0 || m.input_count == 0.0) throw DataError("cannot fit a standardizer on an empty training set");
  return Standardizer(m.input_mean, checked_scale<kInputDim>(m.input_m2, m.input_count, kFeatureNames), m.label_mean,
                      checked_scale<kLabelDim>(m.label_m2, m.label_count, kLabelNames));
}

TrainingWindow Standardizer::apply(const TrainingWindow& w) const {
  TrainingWindow out = w;
  out.steps = ((w.steps.colwise() - input_mean_).array().colwise() / input_scale_.array()).matrix();
  out.label = (w.label - label_mean_).cwiseQuotient(label_scale_);
  return out;
}

TrainingWindow Standardizer::invert(const TrainingWindow& w) const {
  TrainingWindow out = w;
  out.steps = ((w.steps.array().colwise() * input_scale_.array()).matrix().colwise() + input_mean_);
  out.label = label_to_meters(w.label);
  return out;
}

std::vector<TrainingWindow> Standardizer::apply(std::span<const TrainingWindow> ws) const {
  std::vector<TrainingWindow> out;
  out.reserve(ws.size());
  for (const auto& w : ws) out.push_back(apply(w));
  return out;
}

nlohmann::json Standardizer::to_json() const {
  return {{"input_mean", vec_json(input_mean_)},
          {"input_scale", vec_json(input_scale_)},
          {"label_mean", vec_json(label_mean_)},
          {"label_scale", vec_json(label_scale_)},
          {"input_features", kFeatureNames},
          {"label_features", kLabelNames}};
}

Standardizer Standardizer::from_json(const nlohmann::json& j) {
  try {
    return Standardizer(vec_from_json<kInputDim>(j.at("input_mean")), vec_from_json<kInputDim>(j.at("input_scale")),
                        vec_from_json<kLabelDim>(j.at("label_mean")), vec_from_json<kLabelDim>(j.at("label_scale")));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("standardizer json: ") + e.what());
  }
}

TemporalSplit temporal_split_between(std::span<const TrainingWindow> windows, double t_start, double t_end,
                                     double train_frac, double val_frac) {
  const double span = t_end - t_start;
  const double cut_train = t_start + train_frac * span;
  const double cut_val = t_start + (train_frac + val_frac) * span;
  TemporalSplit out;
  for (const auto& w : windows) {
    if (w.t_end < cut_train) {
      out.train.push_back(w);
    } else if (w.t_end < cut_val) {
      out.val.push_back(w);
    } else {
      out.test.push_back(w);
    }
  }
  return out;
}

TemporalSplit temporal_split(std::span<const TrainingWindow> windows, double train_frac, double val_frac) {
  if (windows.empty()) return {};
  const auto [lo, hi] = std::minmax_element(windows.begin(), windows.end(),
                                            [](const auto& a, const auto& b) { return a.t_end < b.t_end; });
  return temporal_split_between(windows, lo->t_end, hi->t_end, train_frac, val_frac);
}

void write_windows(std::ostream& out, std::span<const TrainingWindow> windows) {
  std::string buf(kWindowMagic, 4);
  binary::put<std::uint32_t>(buf, kWindowVersion);
  binary::put<std::uint64_t>(buf, windows.size());
  binary::put<std::uint32_t>(buf, kInputDim);
  binary::put<std::uint32_t>(buf, kLabelDim);
  for (const auto& w : windows) {
    binary::put<std::uint32_t>(buf, static_cast<std::uint32_t>(w.length()));
    binary::put<std::int32_t>(buf, w.vessel_type);
    binary::put<double>(buf, w.horizon_s);
    binary::put<double>(buf, w.t_end);
    for (int i = 0; i < kLabelDim; ++i) binary::put<double>(buf, w.label[i]);
    for (Eigen::Index i = 0; i < w.steps.size(); ++i) binary::put<double>(buf, w.steps.data()[i]);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing window dataset");
}

std::vector<TrainingWindow> read_windows(std::istream& in) {
  const std::string data = binary::slurp(in);
  binary::Reader r(data.data(), data.size());
  if (r.bytes(4) != std::string(kWindowMagic, 4)) throw FormatError("not a window dataset (bad magic)");
  if (r.get<std::uint32_t>() != kWindowVersion) throw FormatError("unsupported window dataset version");
  const auto count = r.get<std::uint64_t>();
  if (r.get<std::uint32_t>() != kInputDim || r.get<std::uint32_t>() != kLabelDim) {
    throw FormatError("window dataset feature dimensions do not match");
  }
  std::vector<TrainingWindow> out;
  for (std::uint64_t k = 0; k < count; ++k) {
    TrainingWindow w;
    const auto len = r.get<std::uint32_t>();
    w.vessel_type = r.get<std::int32_t>();
    w.horizon_s = r.get<double>();
    w.t_end = r.get<double>();
    for (int i = 0; i < kLabelDim; ++i) w.label[i] = r.get<double>();
    if (static_cast<std::size_t>(len) * kInputDim * sizeof(double) > r.remaining()) {
      throw FormatError("truncated binary stream");
    }
    w.steps.resize(kInputDim, len);
    for (Eigen::Index i = 0; i < w.steps.size(); ++i) w.steps.data()[i] = r.get<double>();
    out.push_back(std::move(w));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after window records");
  return out;
}

nlohmann::json to_json(const ProjectionRef& ref) {
  return {{"lon0", ref.lon0},
          {"lat0", ref.lat0},
          {"meters_per_deg_lat", ref.meters_per_deg_lat},
          {"meters_per_deg_lon", ref.meters_per_deg_lon}};
}

ProjectionRef projection_from_json(const nlohmann::json& j) {
  try {
    ProjectionRef ref;
    ref.lon0 = j.at("lon0").get<double>();
    ref.lat0 = j.at("lat0").get<double>();
    ref.meters_per_deg_lat = j.at("meters_per_deg_lat").get<double>();
    ref.meters_per_deg_lon = j.at("meters_per_deg_lon").get<double>();
    if (!(ref.meters_per_deg_lat > 0.0) || !(ref.meters_per_deg_lon > 0.0)) {
      throw FormatError("projection scale factors must be positive");
    }
    return ref;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("projection json: ") + e.what());
  }
}

}  // namespace fedvlf::features
