#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "fedvlf/ais.hpp"

namespace fedvlf::features {

inline constexpr int kInputDim = 6;
inline constexpr int kLabelDim = 2;

// Row order of a transition column.
enum Feature : int { kDx = 0, kDy, kDv, kDphi, kDtCurr, kDtNext };

inline constexpr std::array<const char*, kInputDim> kFeatureNames = {"dx", "dy", "dv", "dphi", "dt_curr", "dt_next"};
inline constexpr std::array<const char*, kLabelDim> kLabelNames = {"dx_next", "dy_next"};

using StepMatrix = Eigen::Matrix<double, kInputDim, Eigen::Dynamic>;
using FeatureVector = Eigen::Matrix<double, kInputDim, 1>;
using LabelVector = Eigen::Matrix<double, kLabelDim, 1>;

// Local equirectangular frame around (lon0, lat0).
struct ProjectionRef {
  static constexpr double kMetersPerDegLat = 111'320.0;

  double lon0 = 0.0;
  double lat0 = 0.0;
  double meters_per_deg_lat = kMetersPerDegLat;
  double meters_per_deg_lon = kMetersPerDegLat;

  static ProjectionRef centered_on(double lon0, double lat0);
  // Centroid of the bounding box of every point.
  static ProjectionRef from_trajectories(std::span<const ais::VesselTrajectory> trajectories);
};

Eigen::Vector2d project(double lon, double lat, const ProjectionRef& ref);

// First-order differences of a trajectory. Column i describes the move from
// point i to point i + 1; its dt_next row holds the duration of the move that
// follows it and stays 0 for the last column.
struct TransitionSequence {
  std::uint64_t mmsi = 0;
  int vessel_type = 0;
  StepMatrix steps;
  std::vector<double> t_end;  // timestamp of each transition's end point

  Eigen::Index size() const { return steps.cols(); }
};

struct TrainingWindow {
  int vessel_type = 0;
  StepMatrix steps;  // kInputDim x L
  LabelVector label = LabelVector::Zero();
  double horizon_s = 0.0;
  double t_end = 0.0;  // timestamp of the final input point

  Eigen::Index length() const { return steps.cols(); }
};

struct WindowConfig {
  int len_min = 18;
  int len_max = 32;

  void validate() const;
};

// Minimal signed difference phi_curr - phi_prev in (-180, 180].
double wrap_course_delta(double phi_prev, double phi_curr);

TransitionSequence derive_transitions(const ais::VesselTrajectory& traj, const ProjectionRef& ref);

// Sliding windows with stride ceil(L / 2) for every L in [len_min, len_max].
// The transition right after each window is its label.
std::vector<TrainingWindow> make_windows(const TransitionSequence& seq, const WindowConfig& cfg = {});

std::vector<TrainingWindow> windows_from_trajectories(std::span<const ais::VesselTrajectory> trajectories,
                                                      const ProjectionRef& ref, const WindowConfig& cfg = {});

// Running moments with a parallel merge, so silos can contribute sums
// without exposing their windows.
struct FeatureMoments {
  double input_count = 0.0;
  FeatureVector input_mean = FeatureVector::Zero();
  FeatureVector input_m2 = FeatureVector::Zero();
  double label_count = 0.0;
  LabelVector label_mean = LabelVector::Zero();
  LabelVector label_m2 = LabelVector::Zero();

  void add(const TrainingWindow& w);
  void merge(const FeatureMoments& other);
};

// z-score transform: subtract the mean, divide by the population standard
// deviation, per feature.
class Standardizer {
 public:
  static Standardizer fit(std::span<const TrainingWindow> train);
  static Standardizer from_moments(const FeatureMoments& moments);
  Standardizer(FeatureVector input_mean, FeatureVector input_scale, LabelVector label_mean,
               LabelVector label_scale);

  TrainingWindow apply(const TrainingWindow& w) const;
  TrainingWindow invert(const TrainingWindow& w) const;
  std::vector<TrainingWindow> apply(std::span<const TrainingWindow> ws) const;

  LabelVector label_to_meters(const LabelVector& standardized) const {
    return standardized.cwiseProduct(label_scale_) + label_mean_;
  }

  const FeatureVector& input_mean() const { return input_mean_; }
  const FeatureVector& input_scale() const { return input_scale_; }
  const LabelVector& label_mean() const { return label_mean_; }
  const LabelVector& label_scale() const { return label_scale_; }

  nlohmann::json to_json() const;
  static Standardizer from_json(const nlohmann::json& j);

 private:
  FeatureVector input_mean_, input_scale_;
  LabelVector label_mean_, label_scale_;
};

struct TemporalSplit {
  std::vector<TrainingWindow> train, val, test;
};

// Cuts [t_start, t_end] at 50% and 75% and assigns windows by t_end.
TemporalSplit temporal_split_between(std::span<const TrainingWindow> windows, double t_start, double t_end,
                                     double train_frac = 0.50, double val_frac = 0.25);
// Span taken from the windows' own final-point timestamps.
TemporalSplit temporal_split(std::span<const TrainingWindow> windows, double train_frac = 0.50,
                             double val_frac = 0.25);

// Binary window dataset, little-endian:
//   "VLFW" u32 version u64 count u32 input_dim u32 label_dim
//   per record: u32 L, i32 vessel_type, f64 horizon_s, f64 t_end,
//               f64 label[label_dim], f64 steps[L * input_dim] (column-major)
void write_windows(std::ostream& out, std::span<const TrainingWindow> windows);
std::vector<TrainingWindow> read_windows(std::istream& in);

nlohmann::json to_json(const ProjectionRef& ref);
ProjectionRef projection_from_json(const nlohmann::json& j);

}  // namespace fedvlf::features
