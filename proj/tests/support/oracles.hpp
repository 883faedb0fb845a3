#pragma once

// Independent reference implementations used to freeze expected values.
// Deliberately written the slow, obvious way; nothing here calls into the
// code under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <set>
#include <utility>
#include <vector>

#include "fedvlf/ais.hpp"

namespace fedvlf::oracle {

// Dedup: walk the input and keep a key only the first time it is seen, then
// order by (mmsi, t) using insertion index as tiebreaker.
inline std::vector<ais::AisRecord> dedup(const std::vector<ais::AisRecord>& in) {
  std::set<std::pair<std::uint64_t, double>> seen;
  std::vector<std::pair<std::size_t, ais::AisRecord>> kept;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (seen.insert({in[i].mmsi, in[i].t}).second) kept.push_back({i, in[i]});
  }
  // insertion sort, O(n^2) on purpose
  for (std::size_t i = 1; i < kept.size(); ++i) {
    for (std::size_t j = i; j > 0; --j) {
      const auto& a = kept[j - 1].second;
      const auto& b = kept[j].second;
      const bool swap = a.mmsi > b.mmsi || (a.mmsi == b.mmsi && a.t > b.t);
      if (!swap) break;
      std::swap(kept[j - 1], kept[j]);
    }
  }
  std::vector<ais::AisRecord> out;
  for (auto& [i, r] : kept) out.push_back(r);
  return out;
}

// Subsample: index-based scan remembering the last kept timestamp.
inline std::vector<double> subsample_times(const std::vector<double>& t, double dt_min) {
  std::vector<double> out;
  bool have = false;
  double last = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!have || t[i] - last >= dt_min) {
      out.push_back(t[i]);
      last = t[i];
      have = true;
    }
  }
  return out;
}

// Segment: locate cut positions first, then slice and filter by length.
inline std::vector<std::vector<double>> segment_times(const std::vector<double>& t, double t_max, std::size_t min_pts) {
  std::vector<std::size_t> cuts = {0};
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i] - t[i - 1] > t_max) cuts.push_back(i);
  }
  cuts.push_back(t.size());
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    if (cuts[k + 1] - cuts[k] >= min_pts && cuts[k + 1] > cuts[k]) {
      out.emplace_back(t.begin() + static_cast<std::ptrdiff_t>(cuts[k]), t.begin() + static_cast<std::ptrdiff_t>(cuts[k + 1]));
    }
  }
  return out;
}

// Window count by enumerating every (L, offset) pair directly.
inline std::size_t window_count(long n_transitions, int len_min, int len_max) {
  std::size_t count = 0;
  for (int len = len_min; len <= len_max; ++len) {
    const long stride = (len % 2 == 0) ? len / 2 : len / 2 + 1;
    for (long offset = 0; offset < n_transitions; ++offset) {
      if (offset % stride != 0) continue;
      if (offset + len + 1 <= n_transitions) ++count;
    }
  }
  return count;
}

inline double haversine_m(double lon1, double lat1, double lon2, double lat2) {
  constexpr double kEarthRadius = 6'371'008.8;
  const double rad = std::numbers::pi / 180.0;
  const double dlat = (lat2 - lat1) * rad;
  const double dlon = (lon2 - lon1) * rad;
  const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(lat1 * rad) * std::cos(lat2 * rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadius * std::asin(std::sqrt(a));
}

// Scalar Adam with textbook notation, for comparison against the vectorized one.
struct ScalarAdam {
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double w, double g, double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    return w - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

}  // namespace fedvlf::oracle
