#include "fedvlf/cli/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <Eigen/Core>

#include "fedvlf/error.hpp"
#include "fedvlf/nn/trainer.hpp"

namespace fedvlf::cli {

namespace {

bool is_path_key(const std::string& key) {
  return key == "trajectories" || key == "csv" || key == "out" ||
         (key.size() > 5 && key.compare(key.size() - 5, 5, "_path") == 0);
}

void absolutize(nlohmann::json& j, const fs::path& base) {
  auto fix = [&](nlohmann::json& v) {
    if (v.is_string()) v = (base / v.get<std::string>()).lexically_normal().string();
  };
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (is_path_key(it.key())) {
        if (it->is_array()) {
          for (auto& e : *it) fix(e);
        } else {
          fix(*it);
        }
      } else {
        absolutize(*it, base);
      }
    }
  } else if (j.is_array()) {
    for (auto& e : j) absolutize(e, base);
  }
}

std::vector<std::string> string_list(const nlohmann::json& v) {
  if (v.is_string()) return {v.get<std::string>()};
  if (!v.is_array()) throw ConfigError("expected a path or a list of paths");
  std::vector<std::string> out;
  for (const auto& e : v) out.push_back(e.get<std::string>());
  return out;
}

}  // namespace

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

RunContext make_context(const std::string& command, const fs::path& config_path, const Overrides& overrides) {
  const fs::path abs = fs::absolute(config_path);
  return make_context(command, read_json_file(abs), abs.parent_path(), overrides);
}

RunContext make_context(const std::string& command, nlohmann::json config, const fs::path& base_dir,
                        const Overrides& overrides) {
  if (!config.is_object()) throw ConfigError("config must be a JSON object");
  absolutize(config, fs::absolute(base_dir));
  if (overrides.seed) config["seed"] = *overrides.seed;
  if (overrides.out) config["out"] = fs::absolute(*overrides.out).lexically_normal().string();
  if (const char* env = std::getenv(kWorkersEnv); env != nullptr && *env != '\0') {
    try {
      config["fed"]["workers"] = std::stoi(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string(kWorkersEnv) + " must be an integer");
    }
  }
  if (overrides.workers) config["fed"]["workers"] = *overrides.workers;

  RunContext ctx;
  ctx.command = command;
  if (!config.contains("out") || !config["out"].is_string()) throw ConfigError("config needs an \"out\" directory");
  ctx.out_dir = config["out"].get<std::string>();
  if (config.contains("seed") && !(config["seed"].is_number_integer() && config["seed"].get<std::int64_t>() >= 0)) {
    throw ConfigError("seed must be a nonnegative integer");
  }
  ctx.seed = config.value("seed", std::uint64_t{0});
  config["seed"] = ctx.seed;
  ctx.config = std::move(config);
  return ctx;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const nlohmann::json& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(config.dump())));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

void open_run_dir(const RunContext& ctx) {
  std::error_code ec;
  fs::create_directories(ctx.out_dir, ec);
  if (ec) throw IoError("cannot create run directory " + ctx.out_dir.string() + ": " + ec.message());
  write_json(ctx.out_dir / "config.json", ctx.config);
  const std::string eigen = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION);
  const std::string json = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                           std::to_string(NLOHMANN_JSON_VERSION_PATCH);
  write_json(ctx.out_dir / "manifest.json", {{"command", ctx.command},
                                             {"config_hash", config_hash(ctx.config)},
                                             {"seed", ctx.seed},
                                             {"versions", {{"fedvlf", kVersion}, {"eigen", eigen}, {"json", json}}}});
}

const nlohmann::json& section(const nlohmann::json& config, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!config.contains(key)) return empty;
  const auto& s = config[key];
  if (!s.is_object()) throw ConfigError(std::string("config section \"") + key + "\" must be an object");
  return s;
}

ais::CleaningConfig cleaning_config(const nlohmann::json& config) { return ais::cleaning_from_json(section(config, "cleaning")); }

features::WindowConfig window_config(const nlohmann::json& config) {
  const auto& s = section(config, "windows");
  features::WindowConfig w;
  try {
    w.len_min = s.value("len_min", w.len_min);
    w.len_max = s.value("len_max", w.len_max);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("windows: ") + e.what());
  }
  w.validate();
  return w;
}

nn::ModelDims model_dims(const nlohmann::json& config) { return nn::dims_from_json(section(config, "model")); }

fs::path existing_path(const nlohmann::json& config, const char* key) {
  if (!config.contains(key) || !config[key].is_string()) throw ConfigError(std::string("config needs \"") + key + "\"");
  fs::path p = config[key].get<std::string>();
  if (!fs::exists(p)) throw ConfigError(std::string(key) + " does not exist: " + p.string());
  return p;
}

LoadedData load_source(const nlohmann::json& source, const ais::CleaningConfig& cleaning) {
  if (!source.is_object()) throw ConfigError("a data source must be an object");
  LoadedData out;
  if (source.contains("trajectories")) {
    const fs::path p = existing_path(source, "trajectories");
    std::ifstream in(p);
    if (!in) throw IoError("cannot read " + p.string());
    out.trajectories = ais::read_trajectories(in);
    return out;
  }
  if (!source.contains("csv")) throw ConfigError("a data source needs \"trajectories\" or \"csv\"");
  const ais::CsvSchema schema = ais::schema_from_json(section(source, "schema"));
  std::vector<ais::AisRecord> records;
  for (const auto& file : string_list(source["csv"])) {
    if (!fs::exists(file)) throw ConfigError("csv does not exist: " + file);
    std::ifstream in(file);
    if (!in) throw IoError("cannot read " + file);
    auto parsed = ais::parse_ais_csv(in, schema);
    out.skipped_rows += parsed.skipped;
    records.insert(records.end(), parsed.records.begin(), parsed.records.end());
  }
  auto cleaned = ais::run_pipeline(records, cleaning);
  out.trajectories = std::move(cleaned.trajectories);
  out.counts = cleaned.counts;
  out.from_csv = true;
  return out;
}

}  // namespace fedvlf::cli
