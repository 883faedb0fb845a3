#include "fedvlf/ais.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <string_view>
#include <unordered_map>

#include "fedvlf/error.hpp"

namespace fedvlf::ais {

namespace {

constexpr std::uint64_t kMmsiLow = 100'000'000ULL;
constexpr std::uint64_t kMmsiHigh = 999'999'999ULL;
constexpr std::uint64_t kMidMin = 201;
constexpr std::uint64_t kMidMax = 775;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '"' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

template <class Int>
bool parse_int(std::string_view s, Int& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool record_in_range(const AisRecord& r) {
  return is_valid_mmsi(r.mmsi) && r.lon >= -180.0 && r.lon <= 180.0 && r.lat >= -90.0 &&
         r.lat <= 90.0 && r.speed >= 0.0 && r.course >= 0.0 && r.course < 360.0;
}

VesselTrajectory with_points(const VesselTrajectory& proto, std::vector<TrackPoint> pts) {
  VesselTrajectory out;
  out.mmsi = proto.mmsi;
  out.vessel_type = proto.vessel_type;
  out.points = std::move(pts);
  return out;
}

std::size_t total_points(std::span<const VesselTrajectory> trajs) {
  std::size_t n = 0;
  for (const auto& t : trajs) n += t.size();
  return n;
}

}  // namespace

void CleaningConfig::validate() const {
  if (!(dt_min_s > 0.0) || min_pts == 0 || !(speed_min_kn > 0.0) || !(speed_max_kn > 0.0) ||
      !(t_max_s > 0.0)) {
    throw ConfigError("cleaning config: all thresholds must be positive");
  }
  if (!(speed_min_kn < speed_max_kn)) {
    throw ConfigError("cleaning config: speed_min_kn must be below speed_max_kn");
  }
  if (!(dt_min_s < t_max_s)) throw ConfigError("cleaning config: dt_min_s must be below t_max_s");
}

ParseResult parse_ais_csv(std::istream& source, const CsvSchema& schema) {
  if (!source) throw IoError("AIS source stream is not readable");
  std::string line;
  if (!std::getline(source, line)) {
    if (source.bad()) throw IoError("failed reading AIS header");
    throw DataError("AIS source is empty (no header row)");
  }
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM

  const auto header = split(line, schema.delimiter);
  auto column = [&](const std::string& name) -> int {
    const auto it = std::find(header.begin(), header.end(), std::string_view(name));
    if (it == header.end()) throw DataError("schema column '" + name + "' missing from CSV header");
    return static_cast<int>(it - header.begin());
  };
  const int c_mmsi = column(schema.mmsi);
  const int c_t = column(schema.t);
  const int c_lon = column(schema.lon);
  const int c_lat = column(schema.lat);
  const int c_speed = column(schema.speed);
  const int c_course = column(schema.course);
  const int c_type = schema.vessel_type.empty() ? -1 : column(schema.vessel_type);

  ParseResult result;
  while (std::getline(source, line)) {
    if (trim(line).empty()) continue;
    const auto fields = split(line, schema.delimiter);
    if (fields.size() != header.size()) {
      ++result.skipped;
      continue;
    }
    AisRecord r;
    bool ok = parse_int(fields[c_mmsi], r.mmsi) && parse_double(fields[c_t], r.t) &&
              parse_double(fields[c_lon], r.lon) && parse_double(fields[c_lat], r.lat) &&
              parse_double(fields[c_speed], r.speed) && parse_double(fields[c_course], r.course);
    if (ok && c_type >= 0 && !fields[c_type].empty()) ok = parse_int(fields[c_type], r.vessel_type);
    r.t *= schema.time_scale;
    if (!ok || !record_in_range(r) || r.vessel_type < 0) {
      ++result.skipped;
      continue;
    }
    result.records.push_back(r);
  }
  if (source.bad()) throw IoError("I/O failure while reading AIS rows");
  return result;
}

std::vector<AisRecord> deduplicate(std::span<const AisRecord> records) {
  std::vector<AisRecord> out(records.begin(), records.end());
  std::stable_sort(out.begin(), out.end(), [](const AisRecord& a, const AisRecord& b) {
    return a.mmsi != b.mmsi ? a.mmsi < b.mmsi : a.t < b.t;
  });
  // stable_sort keeps input order within equal keys, so unique keeps the first one seen.
  const auto last = std::unique(out.begin(), out.end(), [](const AisRecord& a, const AisRecord& b) {
    return a.mmsi == b.mmsi && a.t == b.t;
  });
  out.erase(last, out.end());
  return out;
}

bool is_valid_mmsi(std::uint64_t mmsi) { return mmsi >= kMmsiLow && mmsi <= kMmsiHigh; }

bool validate_mid(std::uint64_t mmsi) {
  if (!is_valid_mmsi(mmsi)) throw DataError("malformed MMSI " + std::to_string(mmsi) + ": expected 9 digits");
  const std::uint64_t mid = mmsi / 1'000'000ULL;
  return mid >= kMidMin && mid <= kMidMax;
}

std::vector<VesselTrajectory> group_by_vessel(std::span<const AisRecord> records) {
  std::vector<VesselTrajectory> out;
  for (const auto& r : records) {
    if (out.empty() || out.back().mmsi != r.mmsi) {
      out.push_back({r.mmsi, r.vessel_type, {}});
    }
    out.back().points.push_back({r.t, r.lon, r.lat, r.speed, r.course});
  }
  return out;
}

VesselTrajectory filter_speed(const VesselTrajectory& traj, const CleaningConfig& cfg) {
  std::vector<TrackPoint> kept;
  kept.reserve(traj.size());
  for (const auto& p : traj.points) {
    if (p.speed >= cfg.speed_min_kn && p.speed <= cfg.speed_max_kn) kept.push_back(p);
  }
  return with_points(traj, std::move(kept));
}

VesselTrajectory subsample(const VesselTrajectory& traj, double dt_min_s) {
  std::vector<TrackPoint> kept;
  kept.reserve(traj.size());
  for (const auto& p : traj.points) {
    if (kept.empty() || p.t - kept.back().t >= dt_min_s) kept.push_back(p);
  }
  return with_points(traj, std::move(kept));
}

std::vector<VesselTrajectory> segment(const VesselTrajectory& traj, const CleaningConfig& cfg) {
  std::vector<VesselTrajectory> out;
  std::vector<TrackPoint> current;
  auto flush = [&] {
    if (current.size() >= cfg.min_pts) out.push_back(with_points(traj, std::move(current)));
    current.clear();
  };
  for (const auto& p : traj.points) {
    if (!current.empty() && p.t - current.back().t > cfg.t_max_s) flush();
    current.push_back(p);
  }
  flush();
  return out;
}

DatasetStats compute_stats(std::span<const VesselTrajectory> trajectories) {
  if (trajectories.empty()) throw DataError("cannot compute statistics of an empty dataset");
  DatasetStats s;
  s.n_trajectories = trajectories.size();
  s.n_records = total_points(trajectories);
  if (s.n_records == 0) throw DataError("cannot compute statistics of an empty dataset");

  std::set<std::uint64_t> vessels;
  double gap_sum = 0.0;
  std::size_t gap_count = 0;
  s.sampling_rate_s.min = std::numeric_limits<double>::infinity();
  s.sampling_rate_s.max = 0.0;
  s.pts_per_traj.min = std::numeric_limits<std::size_t>::max();
  s.pts_per_traj.max = 0;
  s.lon_min = s.lat_min = s.t_start = std::numeric_limits<double>::infinity();
  s.lon_max = s.lat_max = s.t_end = -std::numeric_limits<double>::infinity();

  for (const auto& traj : trajectories) {
    vessels.insert(traj.mmsi);
    s.pts_per_traj.min = std::min(s.pts_per_traj.min, traj.size());
    s.pts_per_traj.max = std::max(s.pts_per_traj.max, traj.size());
    for (std::size_t i = 0; i < traj.size(); ++i) {
      const auto& p = traj.points[i];
      s.lon_min = std::min(s.lon_min, p.lon);
      s.lon_max = std::max(s.lon_max, p.lon);
      s.lat_min = std::min(s.lat_min, p.lat);
      s.lat_max = std::max(s.lat_max, p.lat);
      s.t_start = std::min(s.t_start, p.t);
      s.t_end = std::max(s.t_end, p.t);
      if (i > 0) {
        const double gap = p.t - traj.points[i - 1].t;
        s.sampling_rate_s.min = std::min(s.sampling_rate_s.min, gap);
        s.sampling_rate_s.max = std::max(s.sampling_rate_s.max, gap);
        gap_sum += gap;
        ++gap_count;
      }
    }
  }
  s.n_vessels = vessels.size();
  s.pts_per_traj.avg = static_cast<double>(s.n_records) / static_cast<double>(s.n_trajectories);
  if (gap_count == 0) {
    s.sampling_rate_s = {};
  } else {
    s.sampling_rate_s.avg = gap_sum / static_cast<double>(gap_count);
  }
  return s;
}

PipelineResult run_pipeline(std::span<const AisRecord> records, const CleaningConfig& cfg) {
  cfg.validate();
  PipelineResult res;
  res.counts.parsed = records.size();

  auto unique = deduplicate(records);
  res.counts.after_dedup = unique.size();

  std::erase_if(unique, [](const AisRecord& r) { return !validate_mid(r.mmsi); });
  res.counts.after_mid = unique.size();

  std::vector<VesselTrajectory> trajs;
  for (const auto& vessel : group_by_vessel(unique)) trajs.push_back(subsample(vessel, cfg.dt_min_s));
  res.counts.after_subsample = total_points(trajs);

  std::erase_if(trajs, [&](const VesselTrajectory& t) { return t.size() < cfg.min_pts; });
  res.counts.after_min_pts = total_points(trajs);

  for (auto& t : trajs) t = filter_speed(t, cfg);
  res.counts.after_speed = total_points(trajs);

  for (const auto& t : trajs) {
    for (auto& piece : segment(t, cfg)) res.trajectories.push_back(std::move(piece));
  }
  res.counts.after_segment = total_points(res.trajectories);
  return res;
}

void write_trajectories(std::ostream& out, std::span<const VesselTrajectory> trajectories) {
  for (const auto& traj : trajectories) {
    nlohmann::json j;
    j["mmsi"] = traj.mmsi;
    j["type"] = traj.vessel_type;
    auto& t = j["t"] = nlohmann::json::array();
    auto& lon = j["lon"] = nlohmann::json::array();
    auto& lat = j["lat"] = nlohmann::json::array();
    auto& speed = j["speed"] = nlohmann::json::array();
    auto& course = j["course"] = nlohmann::json::array();
    for (const auto& p : traj.points) {
      t.push_back(p.t);
      lon.push_back(p.lon);
      lat.push_back(p.lat);
      speed.push_back(p.speed);
      course.push_back(p.course);
    }
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing trajectories");
}

std::vector<VesselTrajectory> read_trajectories(std::istream& in) {
  if (!in) throw IoError("trajectory stream is not readable");
  std::vector<VesselTrajectory> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      VesselTrajectory traj;
      traj.mmsi = j.at("mmsi").get<std::uint64_t>();
      traj.vessel_type = j.at("type").get<int>();
      const auto& t = j.at("t");
      const auto& lon = j.at("lon");
      const auto& lat = j.at("lat");
      const auto& speed = j.at("speed");
      const auto& course = j.at("course");
      const std::size_t n = t.size();
      if (lon.size() != n || lat.size() != n || speed.size() != n || course.size() != n) {
        throw DataError("ragged arrays");
      }
      traj.points.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        traj.points[i] = {t[i].get<double>(), lon[i].get<double>(), lat[i].get<double>(),
                          speed[i].get<double>(), course[i].get<double>()};
      }
      out.push_back(std::move(traj));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("trajectory line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("trajectory line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

nlohmann::json to_json(const DatasetStats& s) {
  return {
      {"n_records", s.n_records},
      {"n_vessels", s.n_vessels},
      {"n_trajectories", s.n_trajectories},
      {"sampling_rate_s", {{"min", s.sampling_rate_s.min}, {"avg", s.sampling_rate_s.avg}, {"max", s.sampling_rate_s.max}}},
      {"pts_per_traj", {{"min", s.pts_per_traj.min}, {"avg", s.pts_per_traj.avg}, {"max", s.pts_per_traj.max}}},
      {"spatial_range", {{"lon", {s.lon_min, s.lon_max}}, {"lat", {s.lat_min, s.lat_max}}}},
      {"temporal_range", {s.t_start, s.t_end}},
  };
}

nlohmann::json to_json(const PipelineCounts& c) {
  return {{"parsed", c.parsed},
          {"after_dedup", c.after_dedup},
          {"after_mid", c.after_mid},
          {"after_subsample", c.after_subsample},
          {"after_min_pts", c.after_min_pts},
          {"after_speed", c.after_speed},
          {"after_segment", c.after_segment}};
}

nlohmann::json to_json(const CleaningConfig& c) {
  return {{"dt_min_s", c.dt_min_s},
          {"min_pts", c.min_pts},
          {"speed_min_kn", c.speed_min_kn},
          {"speed_max_kn", c.speed_max_kn},
          {"t_max_s", c.t_max_s}};
}

CleaningConfig cleaning_from_json(const nlohmann::json& j) {
  CleaningConfig c;
  try {
    c.dt_min_s = j.value("dt_min_s", c.dt_min_s);
    c.min_pts = j.value("min_pts", c.min_pts);
    c.speed_min_kn = j.value("speed_min_kn", c.speed_min_kn);
    c.speed_max_kn = j.value("speed_max_kn", c.speed_max_kn);
    c.t_max_s = j.value("t_max_s", c.t_max_s);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("cleaning config: ") + e.what());
  }
  c.validate();
  return c;
}

CsvSchema schema_from_json(const nlohmann::json& j) {
  CsvSchema s;
  try {
    s.mmsi = j.value("mmsi", s.mmsi);
    s.t = j.value("t", s.t);
    s.lon = j.value("lon", s.lon);
    s.lat = j.value("lat", s.lat);
    s.speed = j.value("speed", s.speed);
    s.course = j.value("course", s.course);
    if (j.contains("vessel_type") && j["vessel_type"].is_null()) {
      s.vessel_type.clear();
    } else {
      s.vessel_type = j.value("vessel_type", s.vessel_type);
    }
    s.time_scale = j.value("time_scale", s.time_scale);
    const std::string delim = j.value("delimiter", std::string(1, s.delimiter));
    if (delim.size() != 1) throw ConfigError("schema delimiter must be a single character");
    s.delimiter = delim[0];
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("schema: ") + e.what());
  }
  if (!(s.time_scale > 0.0)) throw ConfigError("schema time_scale must be positive");
  return s;
}

}  // namespace fedvlf::ais
