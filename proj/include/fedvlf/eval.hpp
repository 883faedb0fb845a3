#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fedvlf/features.hpp"
#include "fedvlf/nn/params.hpp"

namespace fedvlf::eval {

// De-standardized displacement prediction in projection-plane meters.
struct PredictionSample {
  Eigen::Vector2d pred = Eigen::Vector2d::Zero();
  Eigen::Vector2d truth = Eigen::Vector2d::Zero();
  double horizon_s = 0.0;
};

// Mean Euclidean distance between predicted and true displacement.
double fde(std::span<const PredictionSample> samples);

inline constexpr int kBucketCount = 12;
inline constexpr double kBucketWidthS = 300.0;
inline constexpr double kMaxHorizonS = kBucketCount * kBucketWidthS;

struct BucketCell {
  std::size_t count = 0;
  double fde_m = 0.0;  // meaningful only when count > 0

  bool operator==(const BucketCell&) const = default;
};

// Right-closed five-minute horizon buckets (0,5], (5,10], ... (55,60].
struct FdeBucketTable {
  std::array<BucketCell, kBucketCount> buckets{};
  // Buckets starting at or beyond this horizon print as N/A (the segmentation
  // threshold caps the horizons a corpus can contain).
  double na_from_s = kMaxHorizonS;

  std::size_t total() const;
  bool is_na(int bucket) const;
  bool operator==(const FdeBucketTable&) const = default;
};

// Unique bucket of a horizon in (0, 3600] seconds; throws DataError outside.
int bucket_index(double horizon_s);
// Label of a bucket in minutes, e.g. "(0,5]".
std::string bucket_label(int bucket);

FdeBucketTable bucket_by_horizon(std::span<const PredictionSample> samples, double na_from_s = kMaxHorizonS);

// Eval-mode predictions for raw (unstandardized) windows, mapped back to meters.
std::vector<PredictionSample> predict_samples(const nn::ModelParams<float>& params,
                                              std::span<const features::TrainingWindow> raw_windows,
                                              const features::Standardizer& standardizer);

FdeBucketTable evaluate_model(const nn::ModelParams<float>& params, std::span<const features::TrainingWindow> raw_windows,
                              const features::Standardizer& standardizer, double na_from_s = kMaxHorizonS);

struct VariantTable {
  std::string variant;
  FdeBucketTable table;
};

// variant,bucket,lo_min,hi_min,count,fde_m,na_from_s (fde_m is NA for empty buckets)
void write_fde_csv(std::ostream& out, std::span<const VariantTable> tables);
std::vector<VariantTable> read_fde_csv(std::istream& in);
// Rows are variants, columns are buckets.
void write_fde_markdown(std::ostream& out, std::span<const VariantTable> tables);

struct Pca2 {
  Eigen::VectorXd mean;
  Eigen::Matrix<double, Eigen::Dynamic, 2> axes;  // features x 2, orthonormal columns
  Eigen::Vector2d eigenvalues;
  Eigen::Matrix<double, Eigen::Dynamic, 2> projected;  // samples x 2
};

// Top-2 principal components of the rows of data. Each axis is flipped so its
// largest-magnitude component is positive.
Pca2 pca2(const Eigen::MatrixXd& data);

// One row per window: the mean of its (standardized) step features.
Eigen::MatrixXd window_feature_means(std::span<const features::TrainingWindow> windows);

struct GridSpec {
  int nx = 200;
  int ny = 200;
  // Explicit [x_min, x_max, y_min, y_max]; default is the 1st-99th percentile box.
  std::optional<std::array<double, 4>> bounds;
};

struct KdeGrid {
  double x_min = 0.0, x_max = 0.0, y_min = 0.0, y_max = 0.0;
  Eigen::Vector2d bandwidth = Eigen::Vector2d::Zero();
  Eigen::MatrixXd density;  // nx x ny, density(i, j) at (x(i), y(j))

  int nx() const { return static_cast<int>(density.rows()); }
  int ny() const { return static_cast<int>(density.cols()); }
  double x(int i) const { return x_min + (x_max - x_min) * i / (nx() - 1); }
  double y(int j) const { return y_min + (y_max - y_min) * j / (ny() - 1); }
  double cell_area() const { return (x_max - x_min) / (nx() - 1) * (y_max - y_min) / (ny() - 1); }
  double integral() const { return density.sum() * cell_area(); }
};

// Scott's rule per axis: n^(-1/6) * sigma.
Eigen::Vector2d scott_bandwidth(const Eigen::Matrix<double, Eigen::Dynamic, 2>& points);

// Gaussian product-kernel density on a regular grid.
KdeGrid kde2(const Eigen::Matrix<double, Eigen::Dynamic, 2>& points, std::optional<Eigen::Vector2d> bandwidth = std::nullopt,
             const GridSpec& grid = {});

// Interior and edge nodes strictly above all 8-neighbors and above
// rel_threshold * max density.
int count_local_maxima(const KdeGrid& grid, double rel_threshold = 1e-3);

// Peaks that survive a flooding from the top: a peak counts when every path
// to a higher peak dips below (1 - min_prominence) of its height. Sampling
// ripples on a flat ridge show up as local maxima but not as modes.
int count_modes(const KdeGrid& grid, double rel_threshold = 1e-3, double min_prominence = 0.05);

void write_kde_csv(std::ostream& out, const KdeGrid& grid);

}  // namespace fedvlf::eval
