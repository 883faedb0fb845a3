#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fedvlf/ais.hpp"
#include "fedvlf/features.hpp"
#include "fedvlf/nn/params.hpp"

namespace fedvlf::cli {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kWorkersEnv = "FEDVLF_WORKERS";

// Everything a subcommand needs: the effective config (file values with
// command-line overrides applied and every path made absolute), where to
// write, and the run seed.
struct RunContext {
  std::string command;
  nlohmann::json config;
  fs::path out_dir;
  std::uint64_t seed = 0;
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> workers;
};

nlohmann::json read_json_file(const fs::path& path);

// Loads the config, resolves relative paths against the config file's
// directory and applies overrides (flags beat the environment beats the file).
RunContext make_context(const std::string& command, const fs::path& config_path, const Overrides& overrides);
RunContext make_context(const std::string& command, nlohmann::json config, const fs::path& base_dir,
                        const Overrides& overrides);

std::uint64_t fnv1a64(std::string_view bytes);
std::string config_hash(const nlohmann::json& config);

// Creates the run directory and writes config.json and manifest.json.
void open_run_dir(const RunContext& ctx);

void write_text(const fs::path& path, const std::string& text);
void write_json(const fs::path& path, const nlohmann::json& j);

// Section of the config with a default when absent.
const nlohmann::json& section(const nlohmann::json& config, const char* key);

ais::CleaningConfig cleaning_config(const nlohmann::json& config);
features::WindowConfig window_config(const nlohmann::json& config);
nn::ModelDims model_dims(const nlohmann::json& config);

// A data source is {"trajectories": file} (cleaned NDJSON) or
// {"csv": file-or-list, "schema": {...}} (raw AIS, cleaned on load).
struct LoadedData {
  std::vector<ais::VesselTrajectory> trajectories;
  ais::PipelineCounts counts;
  std::size_t skipped_rows = 0;
  bool from_csv = false;
};
LoadedData load_source(const nlohmann::json& source, const ais::CleaningConfig& cleaning);

// Path-valued config entry; ConfigError when missing or not on disk.
fs::path existing_path(const nlohmann::json& config, const char* key);

}  // namespace fedvlf::cli
