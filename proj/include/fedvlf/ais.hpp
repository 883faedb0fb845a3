#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace fedvlf::ais {

// One decoded AIS position report.
struct AisRecord {
  std::uint64_t mmsi = 0;
  double t = 0.0;  // epoch seconds
  double lon = 0.0;
  double lat = 0.0;
  double speed = 0.0;   // knots over ground
  double course = 0.0;  // degrees over ground, [0, 360)
  int vessel_type = 0;
};

struct TrackPoint {
  double t = 0.0;
  double lon = 0.0;
  double lat = 0.0;
  double speed = 0.0;
  double course = 0.0;
};

// Time-ordered positions of a single vessel. After cleaning, t is strictly
// increasing.
struct VesselTrajectory {
  std::uint64_t mmsi = 0;
  int vessel_type = 0;
  std::vector<TrackPoint> points;

  std::size_t size() const { return points.size(); }
};

struct CleaningConfig {
  double dt_min_s = 10.0;
  std::size_t min_pts = 20;
  double speed_min_kn = 1.0;
  double speed_max_kn = 50.0;
  double t_max_s = 30.0 * 60.0;

  // Throws ConfigError when an invariant does not hold.
  void validate() const;
};

// Column names of the source CSV. An empty vessel_type column means the
// corpus carries no type information and every record gets type 0.
struct CsvSchema {
  std::string mmsi = "mmsi";
  std::string t = "t";
  std::string lon = "lon";
  std::string lat = "lat";
  std::string speed = "speed";
  std::string course = "course";
  std::string vessel_type = "vessel_type";
  double time_scale = 1.0;  // multiply raw timestamps into seconds (0.001 for ms)
  char delimiter = ',';
};

struct ParseResult {
  std::vector<AisRecord> records;
  std::size_t skipped = 0;
};

template <class T>
struct MinAvgMax {
  T min{};
  double avg = 0.0;
  T max{};
};

struct DatasetStats {
  std::size_t n_records = 0;
  std::size_t n_vessels = 0;
  std::size_t n_trajectories = 0;
  MinAvgMax<double> sampling_rate_s;
  MinAvgMax<std::size_t> pts_per_traj;
  double lon_min = 0.0, lon_max = 0.0, lat_min = 0.0, lat_max = 0.0;
  double t_start = 0.0, t_end = 0.0;
};

// Record counts after each stage of run_pipeline.
struct PipelineCounts {
  std::size_t parsed = 0;
  std::size_t after_dedup = 0;
  std::size_t after_mid = 0;
  std::size_t after_subsample = 0;
  std::size_t after_min_pts = 0;
  std::size_t after_speed = 0;
  std::size_t after_segment = 0;
};

struct PipelineResult {
  std::vector<VesselTrajectory> trajectories;
  PipelineCounts counts;
};

// Malformed rows (bad field count, unparsable numbers, out-of-range values)
// are skipped and counted. A mapped column missing from the header throws
// DataError; a failing stream throws IoError.
ParseResult parse_ais_csv(std::istream& source, const CsvSchema& schema);

// Keeps the first record seen for every (mmsi, t); output sorted by (mmsi, t).
std::vector<AisRecord> deduplicate(std::span<const AisRecord> records);

bool is_valid_mmsi(std::uint64_t mmsi);

// Accept iff the MID (first three digits) lies in [201, 775]. Throws
// DataError for identifiers that are not nine digits long.
bool validate_mid(std::uint64_t mmsi);

// Groups sorted, deduplicated records into one trajectory per vessel. The
// vessel type is taken from the first record of each vessel.
std::vector<VesselTrajectory> group_by_vessel(std::span<const AisRecord> records);

VesselTrajectory filter_speed(const VesselTrajectory& traj, const CleaningConfig& cfg);

// Greedy keep-first: a point survives when it is at least dt_min_s after the
// last kept point.
VesselTrajectory subsample(const VesselTrajectory& traj, double dt_min_s);

// Splits wherever consecutive points are more than t_max_s apart and drops
// pieces shorter than min_pts.
std::vector<VesselTrajectory> segment(const VesselTrajectory& traj, const CleaningConfig& cfg);

DatasetStats compute_stats(std::span<const VesselTrajectory> trajectories);

// dedup -> MID filter -> subsample -> min_pts drop -> speed filter -> segment
PipelineResult run_pipeline(std::span<const AisRecord> records, const CleaningConfig& cfg);

// Newline-delimited JSON, one trajectory per line.
void write_trajectories(std::ostream& out, std::span<const VesselTrajectory> trajectories);
std::vector<VesselTrajectory> read_trajectories(std::istream& in);

nlohmann::json to_json(const DatasetStats& stats);
nlohmann::json to_json(const PipelineCounts& counts);
nlohmann::json to_json(const CleaningConfig& cfg);
CleaningConfig cleaning_from_json(const nlohmann::json& j);
CsvSchema schema_from_json(const nlohmann::json& j);

}  // namespace fedvlf::ais
