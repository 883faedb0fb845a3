#include "fedvlf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "fedvlf/error.hpp"
#include "fedvlf/nn/trainer.hpp"

namespace fedvlf::eval {

double fde(std::span<const PredictionSample> samples) {
  if (samples.empty()) throw DataError("FDE of an empty sample set");
  double sum = 0.0;
  for (const auto& s : samples) sum += (s.pred - s.truth).norm();
  return sum / static_cast<double>(samples.size());
}

std::size_t FdeBucketTable::total() const {
  std::size_t n = 0;
  for (const auto& b : buckets) n += b.count;
  return n;
}

bool FdeBucketTable::is_na(int bucket) const {
  return buckets[static_cast<std::size_t>(bucket)].count == 0 || bucket * kBucketWidthS >= na_from_s;
}

int bucket_index(double horizon_s) {
  if (!(horizon_s > 0.0) || horizon_s > kMaxHorizonS) {
    throw DataError("horizon " + std::to_string(horizon_s) + " s outside (0, 3600]");
  }
  const int idx = static_cast<int>(std::ceil(horizon_s / kBucketWidthS)) - 1;
  return std::clamp(idx, 0, kBucketCount - 1);
}

std::string bucket_label(int bucket) {
  const int lo = bucket * 5;
  return "(" + std::to_string(lo) + "," + std::to_string(lo + 5) + "]";
}

FdeBucketTable bucket_by_horizon(std::span<const PredictionSample> samples, double na_from_s) {
  FdeBucketTable table;
  table.na_from_s = na_from_s;
  std::array<double, kBucketCount> sums{};
  for (const auto& s : samples) {
    const int k = bucket_index(s.horizon_s);
    sums[static_cast<std::size_t>(k)] += (s.pred - s.truth).norm();
    ++table.buckets[static_cast<std::size_t>(k)].count;
  }
  for (std::size_t k = 0; k < table.buckets.size(); ++k) {
    auto& cell = table.buckets[k];
    cell.fde_m = cell.count ? sums[k] / static_cast<double>(cell.count) : 0.0;
  }
  return table;
}

std::vector<PredictionSample> predict_samples(const nn::ModelParams<float>& params,
                                              std::span<const features::TrainingWindow> raw_windows,
                                              const features::Standardizer& standardizer) {
  const auto& d = params.dims();
  if (d.input != standardizer.input_mean().size() || d.output != standardizer.label_mean().size()) {
    throw DataError("standardizer feature dimensions do not match the model");
  }
  for (const auto& w : raw_windows) {
    if (w.steps.rows() != d.input) throw DataError("window feature dimension does not match the model");
  }
  const auto standardized = standardizer.apply(raw_windows);
  const nn::Matrix<float> pred = nn::predict(params, std::span<const features::TrainingWindow>(standardized));
  std::vector<PredictionSample> out;
  out.reserve(raw_windows.size());
  for (std::size_t k = 0; k < raw_windows.size(); ++k) {
    PredictionSample s;
    s.pred = standardizer.label_to_meters(pred.col(static_cast<Eigen::Index>(k)).cast<double>());
    s.truth = raw_windows[k].label;
    s.horizon_s = raw_windows[k].horizon_s;
    out.push_back(s);
  }
  return out;
}

FdeBucketTable evaluate_model(const nn::ModelParams<float>& params, std::span<const features::TrainingWindow> raw_windows,
                              const features::Standardizer& standardizer, double na_from_s) {
  const auto samples = predict_samples(params, raw_windows, standardizer);
  return bucket_by_horizon(samples, na_from_s);
}

void write_fde_csv(std::ostream& out, std::span<const VariantTable> tables) {
  out << "variant,bucket,lo_min,hi_min,count,fde_m,na_from_s\n" << std::setprecision(17);
  for (const auto& vt : tables) {
    for (int k = 0; k < kBucketCount; ++k) {
      const auto& cell = vt.table.buckets[static_cast<std::size_t>(k)];
      out << vt.variant << ',' << bucket_label(k) << ',' << k * 5 << ',' << k * 5 + 5 << ',' << cell.count << ',';
      if (cell.count == 0) {
        out << "NA";
      } else {
        out << cell.fde_m;
      }
      out << ',' << vt.table.na_from_s << '\n';
    }
  }
  if (!out) throw IoError("failed writing FDE table");
}

std::vector<VariantTable> read_fde_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty FDE table");
  std::vector<VariantTable> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    // The bucket label "(a,b]" contains a comma; parse around it.
    const auto open = line.find(",(");
    const auto close = line.find("],");
    if (open == std::string::npos || close == std::string::npos) throw FormatError("malformed FDE row: " + line);
    const std::string variant = line.substr(0, open);
    std::stringstream rest(line.substr(close + 2));
    std::string lo, hi, count, fde_m, na_from;
    if (!std::getline(rest, lo, ',') || !std::getline(rest, hi, ',') || !std::getline(rest, count, ',') ||
        !std::getline(rest, fde_m, ',') || !std::getline(rest, na_from)) {
      throw FormatError("malformed FDE row: " + line);
    }
    if (out.empty() || out.back().variant != variant) out.push_back({variant, {}});
    const int k = std::stoi(lo) / 5;
    if (k < 0 || k >= kBucketCount) throw FormatError("FDE bucket out of range: " + line);
    auto& cell = out.back().table.buckets[static_cast<std::size_t>(k)];
    cell.count = std::stoull(count);
    cell.fde_m = fde_m == "NA" ? 0.0 : std::stod(fde_m);
    out.back().table.na_from_s = std::stod(na_from);
  }
  return out;
}

void write_fde_markdown(std::ostream& out, std::span<const VariantTable> tables) {
  out << "| Model |";
  for (int k = 0; k < kBucketCount; ++k) out << ' ' << bucket_label(k) << " |";
  out << "\n|---|";
  for (int k = 0; k < kBucketCount; ++k) out << "---:|";
  out << '\n';
  for (const auto& vt : tables) {
    out << "| " << vt.variant << " |";
    for (int k = 0; k < kBucketCount; ++k) {
      if (vt.table.is_na(k)) {
        out << " N/A |";
      } else {
        out << ' ' << static_cast<long long>(std::llround(vt.table.buckets[static_cast<std::size_t>(k)].fde_m)) << " |";
      }
    }
    out << '\n';
  }
}

Pca2 pca2(const Eigen::MatrixXd& data) {
  if (data.rows() < 3 || data.cols() < 2) throw DataError("PCA needs at least 3 samples and 2 features");
  Pca2 out;
  out.mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.rowwise() - out.mean.transpose();
  const Eigen::MatrixXd cov = centered.adjoint() * centered / static_cast<double>(data.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("PCA eigen-solve failed");
  const Eigen::Index n = cov.rows();
  // Eigenvalues come back ascending.
  out.eigenvalues << std::max(0.0, solver.eigenvalues()[n - 1]), std::max(0.0, solver.eigenvalues()[n - 2]);
  const double tol = 1e-12 * std::max(1.0, cov.diagonal().cwiseAbs().maxCoeff());
  if (out.eigenvalues[0] <= tol) throw DataError("degenerate data: no variance to decompose");
  out.axes.resize(n, 2);
  out.axes.col(0) = solver.eigenvectors().col(n - 1);
  out.axes.col(1) = solver.eigenvectors().col(n - 2);
  for (int k = 0; k < 2; ++k) {
    Eigen::Index arg;
    out.axes.col(k).cwiseAbs().maxCoeff(&arg);
    if (out.axes(arg, k) < 0.0) out.axes.col(k) *= -1.0;
  }
  out.projected = centered * out.axes;
  return out;
}

Eigen::MatrixXd window_feature_means(std::span<const features::TrainingWindow> windows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(windows.size()), features::kInputDim);
  for (std::size_t k = 0; k < windows.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) = windows[k].steps.rowwise().mean().transpose();
  }
  return out;
}

namespace {

double percentile(Eigen::VectorXd v, double q) {
  std::sort(v.data(), v.data() + v.size());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<Eigen::Index>(std::floor(pos));
  const auto hi = std::min<Eigen::Index>(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Eigen::MatrixXd gaussian_kernel(const Eigen::VectorXd& nodes, const Eigen::VectorXd& centers, double h) {
  const double norm = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * h);
  Eigen::MatrixXd k(nodes.size(), centers.size());
  for (Eigen::Index j = 0; j < centers.size(); ++j) {
    k.col(j) = ((nodes.array() - centers[j]) / h).square().unaryExpr([norm](double z) { return norm * std::exp(-0.5 * z); });
  }
  return k;
}

}  // namespace

Eigen::Vector2d scott_bandwidth(const Eigen::Matrix<double, Eigen::Dynamic, 2>& points) {
  const auto n = static_cast<double>(points.rows());
  const Eigen::RowVector2d mean = points.colwise().mean();
  Eigen::Vector2d sigma = ((points.rowwise() - mean).colwise().squaredNorm() / (n - 1.0)).cwiseSqrt().transpose();
  if (sigma[0] <= 0.0 && sigma[1] <= 0.0) throw DataError("degenerate KDE input: zero variance on both axes");
  // A flat axis borrows the other axis' spread.
  if (sigma[0] <= 0.0) sigma[0] = sigma[1];
  if (sigma[1] <= 0.0) sigma[1] = sigma[0];
  return sigma * std::pow(n, -1.0 / 6.0);
}

KdeGrid kde2(const Eigen::Matrix<double, Eigen::Dynamic, 2>& points, std::optional<Eigen::Vector2d> bandwidth,
             const GridSpec& grid) {
  if (points.rows() < 2) throw DataError("KDE needs at least 2 points");
  if (grid.nx < 2 || grid.ny < 2) throw ConfigError("KDE grid needs at least 2 nodes per axis");
  const Eigen::Vector2d h = bandwidth ? *bandwidth : scott_bandwidth(points);
  if (!(h[0] > 0.0) || !(h[1] > 0.0)) throw ConfigError("KDE bandwidth must be positive");

  KdeGrid out;
  out.bandwidth = h;
  if (grid.bounds) {
    const auto& b = *grid.bounds;
    out.x_min = b[0], out.x_max = b[1], out.y_min = b[2], out.y_max = b[3];
  } else {
    out.x_min = percentile(points.col(0), 0.01);
    out.x_max = percentile(points.col(0), 0.99);
    out.y_min = percentile(points.col(1), 0.01);
    out.y_max = percentile(points.col(1), 0.99);
    if (out.x_max <= out.x_min) out.x_min -= h[0], out.x_max += h[0];
    if (out.y_max <= out.y_min) out.y_min -= h[1], out.y_max += h[1];
  }
  if (!(out.x_max > out.x_min) || !(out.y_max > out.y_min)) throw ConfigError("KDE grid bounds are empty");

  const Eigen::VectorXd xs = Eigen::VectorXd::LinSpaced(grid.nx, out.x_min, out.x_max);
  const Eigen::VectorXd ys = Eigen::VectorXd::LinSpaced(grid.ny, out.y_min, out.y_max);
  // Separable product kernel: density = Kx * Ky^T / n.
  const Eigen::MatrixXd kx = gaussian_kernel(xs, points.col(0), h[0]);
  const Eigen::MatrixXd ky = gaussian_kernel(ys, points.col(1), h[1]);
  out.density = kx * ky.transpose() / static_cast<double>(points.rows());
  return out;
}

int count_local_maxima(const KdeGrid& grid, double rel_threshold) {
  const Eigen::MatrixXd& d = grid.density;
  const double floor = rel_threshold * d.maxCoeff();
  int count = 0;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.cols(); ++j) {
      const double v = d(i, j);
      if (v <= floor) continue;
      bool peak = true;
      for (Eigen::Index di = -1; di <= 1 && peak; ++di) {
        for (Eigen::Index dj = -1; dj <= 1; ++dj) {
          if (di == 0 && dj == 0) continue;
          const Eigen::Index a = i + di, b = j + dj;
          if (a < 0 || b < 0 || a >= d.rows() || b >= d.cols()) continue;
          if (d(a, b) >= v) {
            peak = false;
            break;
          }
        }
      }
      count += peak ? 1 : 0;
    }
  }
  return count;
}

int count_modes(const KdeGrid& grid, double rel_threshold, double min_prominence) {
  const Eigen::MatrixXd& d = grid.density;
  if (d.size() == 0) return 0;
  if (!(min_prominence >= 0.0 && min_prominence < 1.0)) throw ConfigError("min_prominence must be in [0, 1)");
  const Eigen::Index rows = d.rows(), cols = d.cols(), n = d.size();
  const double floor = rel_threshold * d.maxCoeff();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return d(a) > d(b); });

  // union-find; each root remembers the height of its component's peak
  std::vector<Eigen::Index> parent(static_cast<std::size_t>(n), -1);
  std::vector<double> peak(static_cast<std::size_t>(n), 0.0);
  auto find = [&](Eigen::Index x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  int modes = 0;
  for (Eigen::Index idx : order) {
    const double level = d(idx);
    if (level <= floor) break;
    parent[idx] = idx;
    peak[idx] = level;
    const Eigen::Index i = idx % rows, j = idx / rows;  // column-major
    for (Eigen::Index di = -1; di <= 1; ++di) {
      for (Eigen::Index dj = -1; dj <= 1; ++dj) {
        const Eigen::Index a = i + di, b = j + dj;
        if ((di == 0 && dj == 0) || a < 0 || b < 0 || a >= rows || b >= cols) continue;
        const Eigen::Index nb = a + b * rows;
        if (parent[nb] < 0) continue;
        Eigen::Index ra = find(idx), rb = find(nb);
        if (ra == rb) continue;
        if (peak[ra] < peak[rb]) std::swap(ra, rb);
        // rb is the lower peak and level is the saddle between them
        if (rb != idx && level < (1.0 - min_prominence) * peak[rb]) ++modes;
        parent[rb] = ra;
      }
    }
  }
  // components still separate at the floor each keep their peak
  for (Eigen::Index x = 0; x < n; ++x) modes += parent[x] == x ? 1 : 0;
  return modes;
}

void write_kde_csv(std::ostream& out, const KdeGrid& grid) {
  out << "x,y,density\n" << std::setprecision(12);
  for (int i = 0; i < grid.nx(); ++i) {
    for (int j = 0; j < grid.ny(); ++j) out << grid.x(i) << ',' << grid.y(j) << ',' << grid.density(i, j) << '\n';
  }
  if (!out) throw IoError("failed writing KDE grid");
}

}  // namespace fedvlf::eval
