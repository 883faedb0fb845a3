#include "fedvlf/cli/commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "fedvlf/error.hpp"
#include "fedvlf/eval.hpp"
#include "fedvlf/fed.hpp"
#include "fedvlf/nn/serialize.hpp"
#include "fedvlf/nn/trainer.hpp"
#include "fedvlf/rng.hpp"

namespace fedvlf::cli {

namespace {

// Sub-streams of the run seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kSiloStream = 100;
constexpr std::uint64_t kPersonalizeStream = 0x7065;

std::vector<ais::AisRecord> flatten(std::span<const ais::VesselTrajectory> trajs) {
  std::vector<ais::AisRecord> out;
  for (const auto& t : trajs) {
    for (const auto& p : t.points) out.push_back({t.mmsi, p.t, p.lon, p.lat, p.speed, p.course, t.vessel_type});
  }
  return out;
}

template <class Fn>
void write_stream(const fs::path& path, Fn&& fn) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  fn(out);
  if (!out) throw IoError("failed writing " + path.string());
}

void write_tables(const fs::path& dir, const std::vector<eval::VariantTable>& tables) {
  write_stream(dir / "fde.csv", [&](std::ostream& o) { eval::write_fde_csv(o, tables); });
  write_stream(dir / "fde.md", [&](std::ostream& o) { eval::write_fde_markdown(o, tables); });
}

std::pair<double, double> split_fractions(const nlohmann::json& config) {
  const auto& s = section(config, "split");
  const double train = s.value("train", 0.50), val = s.value("val", 0.25);
  if (!(train > 0.0) || !(val > 0.0) || !(train + val < 1.0)) {
    throw ConfigError("split fractions must be positive and leave room for a test split");
  }
  return {train, val};
}

nn::TrainConfig train_config(const nlohmann::json& config) { return nn::train_config_from_json(section(config, "train")); }

// Table horizons beyond the segmentation gap cannot occur, so they print N/A.
double na_from(const ais::CleaningConfig& c) { return std::min(c.t_max_s, eval::kMaxHorizonS); }

struct NamedSource {
  std::string name;
  nlohmann::json source;
};

std::vector<NamedSource> silo_sources(const nlohmann::json& config) {
  if (!config.contains("silos") || !config["silos"].is_array() || config["silos"].empty()) {
    throw ConfigError("config needs a nonempty \"silos\" list");
  }
  std::vector<NamedSource> out;
  for (std::size_t k = 0; k < config["silos"].size(); ++k) {
    const auto& s = config["silos"][k];
    if (!s.is_object() || !s.contains("data")) throw ConfigError("each silo needs a \"data\" source");
    out.push_back({s.value("name", "silo" + std::to_string(k)), s["data"]});
  }
  return out;
}

std::vector<std::vector<ais::VesselTrajectory>> load_silos(const std::vector<NamedSource>& sources,
                                                           const ais::CleaningConfig& cleaning) {
  std::vector<std::vector<ais::VesselTrajectory>> out;
  for (const auto& s : sources) out.push_back(load_source(s.source, cleaning).trajectories);
  return out;
}

// The coordinator publishes one projection for the whole region: the centroid
// of the union bounding box.
features::ProjectionRef shared_projection(const std::vector<std::vector<ais::VesselTrajectory>>& silos) {
  std::vector<ais::VesselTrajectory> all;
  for (const auto& s : silos) all.insert(all.end(), s.begin(), s.end());
  return features::ProjectionRef::from_trajectories(all);
}

features::ProjectionRef load_projection(const nlohmann::json& config) {
  return features::projection_from_json(read_json_file(existing_path(config, "projection_path")));
}

features::Standardizer load_standardizer(const nlohmann::json& config) {
  return features::Standardizer::from_json(read_json_file(existing_path(config, "standardizer_path")));
}

std::vector<double> mu_values(const nlohmann::json& config) {
  const auto& f = section(config, "fed");
  if (!f.contains("mu_prox")) return {fed::FedConfig{}.mu_prox};
  const auto& m = f["mu_prox"];
  if (m.is_number()) return {m.get<double>()};
  if (m.is_string() && m.get<std::string>() == "grid") return {std::begin(fed::kMuProxGrid), std::end(fed::kMuProxGrid)};
  if (!m.is_array() || m.empty()) throw ConfigError("fed.mu_prox must be a number, a list, or \"grid\"");
  std::vector<double> out;
  for (const auto& v : m) out.push_back(v.get<double>());
  return out;
}

std::string mu_label(double mu) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "mu_%g", mu);
  return buf;
}

std::string safe_name(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  }
  return s;
}

}  // namespace

void cmd_preprocess(const RunContext& ctx) {
  const auto cleaning = cleaning_config(ctx.config);
  if (!ctx.config.contains("input")) throw ConfigError("preprocess needs an \"input\" data source");
  LoadedData data = load_source(ctx.config["input"], cleaning);
  if (!data.from_csv) {
    // already-cleaned input goes through the same pipeline again
    auto again = ais::run_pipeline(flatten(data.trajectories), cleaning);
    data.trajectories = std::move(again.trajectories);
    data.counts = again.counts;
  }
  if (data.trajectories.empty()) throw DataError("empty dataset: no trajectory survived cleaning");
  const auto stats = ais::compute_stats(data.trajectories);
  open_run_dir(ctx);
  write_stream(ctx.out_dir / "trajectories.ndjson", [&](std::ostream& o) { ais::write_trajectories(o, data.trajectories); });
  write_json(ctx.out_dir / "stats.json",
             {{"stats", ais::to_json(stats)}, {"counts", ais::to_json(data.counts)}, {"skipped_rows", data.skipped_rows}});
  std::cout << "preprocess: " << stats.n_records << " records, " << stats.n_vessels << " vessels, "
            << stats.n_trajectories << " trajectories\n";
}

void cmd_train(const RunContext& ctx) {
  const auto cleaning = cleaning_config(ctx.config);
  const auto windows_cfg = window_config(ctx.config);
  const auto dims = model_dims(ctx.config);
  auto tcfg = train_config(ctx.config);
  tcfg.seed = mix_seed(ctx.seed, kTrainStream);
  const auto [train_frac, val_frac] = split_fractions(ctx.config);
  if (!ctx.config.contains("data")) throw ConfigError("train needs a \"data\" source");

  const auto data = load_source(ctx.config["data"], cleaning);
  const auto ref = features::ProjectionRef::from_trajectories(data.trajectories);
  const auto windows = features::windows_from_trajectories(data.trajectories, ref, windows_cfg);
  const auto split = features::temporal_split(windows, train_frac, val_frac);
  if (split.train.empty() || split.val.empty() || split.test.empty()) {
    throw DataError("temporal split left an empty train, validation or test set");
  }
  const auto standardizer = features::Standardizer::fit(split.train);
  const auto train = standardizer.apply(std::span<const features::TrainingWindow>(split.train));
  const auto val = standardizer.apply(std::span<const features::TrainingWindow>(split.val));

  Rng init_rng(mix_seed(ctx.seed, kInitStream));
  const auto initial = nn::ModelParams<float>::random(dims, init_rng);
  const auto fitted = nn::fit<float>(initial, train, val, tcfg);
  const auto table = eval::evaluate_model(fitted.params, split.test, standardizer, na_from(cleaning));

  open_run_dir(ctx);
  nn::save_params((ctx.out_dir / "model.bin").string(), fitted.params);
  write_json(ctx.out_dir / "standardizer.json", standardizer.to_json());
  write_json(ctx.out_dir / "projection.json", features::to_json(ref));
  write_stream(ctx.out_dir / "history.csv", [&](std::ostream& o) { nn::write_history_csv(o, fitted.history); });
  write_tables(ctx.out_dir, {{"centralized", table}});
  write_json(ctx.out_dir / "summary.json", {{"windows", {{"train", split.train.size()},
                                                         {"val", split.val.size()},
                                                         {"test", split.test.size()}}},
                                            {"best_epoch", fitted.history.best_epoch},
                                            {"best_val_loss", fitted.history.best_val_loss},
                                            {"epochs_run", fitted.history.epochs.size()}});
  std::cout << "train: best epoch " << fitted.history.best_epoch << ", val rmse " << fitted.history.best_val_loss
            << ", test windows " << split.test.size() << "\n";
}

void cmd_federate(const RunContext& ctx) {
  const auto cleaning = cleaning_config(ctx.config);
  const auto windows_cfg = window_config(ctx.config);
  const auto dims = model_dims(ctx.config);
  const auto base = fed::fed_config_from_json(section(ctx.config, "fed"));
  const auto [train_frac, val_frac] = split_fractions(ctx.config);
  const auto sources = silo_sources(ctx.config);
  if (sources.size() < 2) throw ConfigError("a federation needs at least 2 silos");
  const auto mus = mu_values(ctx.config);

  const auto corpora = load_silos(sources, cleaning);
  const auto ref = shared_projection(corpora);
  std::vector<features::TemporalSplit> splits;
  features::FeatureMoments moments;
  for (std::size_t k = 0; k < corpora.size(); ++k) {
    splits.push_back(features::temporal_split(features::windows_from_trajectories(corpora[k], ref, windows_cfg), train_frac,
                                              val_frac));
    if (splits.back().test.empty()) throw DataError("silo " + sources[k].name + " has no test windows");
    moments.merge(fed::Silo::train_moments(splits.back().train));
  }
  const auto standardizer = features::Standardizer::from_moments(moments);
  std::vector<fed::Silo> silos;
  for (std::size_t k = 0; k < splits.size(); ++k) {
    silos.emplace_back(static_cast<int>(k), splits[k], standardizer, mix_seed(ctx.seed, kSiloStream + k));
  }

  open_run_dir(ctx);
  write_json(ctx.out_dir / "standardizer.json", standardizer.to_json());
  write_json(ctx.out_dir / "projection.json", features::to_json(ref));

  nlohmann::json summary = nlohmann::json::array();
  for (double mu : mus) {
    auto cfg = base;
    cfg.mu_prox = mu;
    cfg.validate();
    const fs::path dir = mus.size() == 1 ? ctx.out_dir : ctx.out_dir / mu_label(mu);
    fs::create_directories(dir);

    const auto result = fed::run_federation(silos, cfg, dims, mix_seed(ctx.seed, kInitStream));
    nn::save_params((dir / "global.bin").string(), result.global);
    write_stream(dir / "rounds.csv", [&](std::ostream& o) { fed::write_round_log_csv(o, result.rounds); });

    std::vector<eval::VariantTable> tables;
    nlohmann::json per_silo = nlohmann::json::array();
    for (std::size_t k = 0; k < silos.size(); ++k) {
      auto pcfg = cfg.local;
      pcfg.seed = mix_seed(silos[k].seed(), kPersonalizeStream);
      const auto personal = silos[k].personalize(result.global, cfg.personalize_epochs, cfg.personalize_patience, pcfg);
      const std::string name = safe_name(sources[k].name);
      nn::save_params((dir / ("personalized_" + name + ".bin")).string(), personal.params);
      tables.push_back({sources[k].name + "/global", silos[k].test_fde(result.global, na_from(cleaning))});
      tables.push_back({sources[k].name + "/personalized", silos[k].test_fde(personal.params, na_from(cleaning))});
      per_silo.push_back({{"name", sources[k].name},
                          {"train_windows", silos[k].sample_count()},
                          {"personalize_best_epoch", personal.history.best_epoch},
                          {"personalize_epochs_run", personal.history.epochs.size()}});
    }
    write_tables(dir, tables);
    summary.push_back({{"mu_prox", cfg.effective_mu()},
                       {"dir", fs::relative(dir, ctx.out_dir).string()},
                       {"final_val_loss", result.rounds.back().aggregate_val_loss},
                       {"bytes_sent", result.rounds.back().bytes_sent},
                       {"bytes_received", result.rounds.back().bytes_received},
                       {"silos", per_silo}});
    std::cout << "federate: mu " << cfg.effective_mu() << ", " << cfg.rounds << " rounds, final val rmse "
              << result.rounds.back().aggregate_val_loss << "\n";
  }
  write_json(ctx.out_dir / "summary.json", summary);
}

void cmd_personalize(const RunContext& ctx) {
  const auto cleaning = cleaning_config(ctx.config);
  const auto windows_cfg = window_config(ctx.config);
  const auto cfg = fed::fed_config_from_json(section(ctx.config, "fed"));
  const auto [train_frac, val_frac] = split_fractions(ctx.config);
  const auto global = nn::load_params(existing_path(ctx.config, "model_path").string());
  const auto standardizer = load_standardizer(ctx.config);
  const auto ref = load_projection(ctx.config);
  if (!ctx.config.contains("data")) throw ConfigError("personalize needs the silo's \"data\" source");

  const auto data = load_source(ctx.config["data"], cleaning);
  const auto split = features::temporal_split(features::windows_from_trajectories(data.trajectories, ref, windows_cfg),
                                              train_frac, val_frac);
  if (split.test.empty()) throw DataError("silo has no test windows");
  const fed::Silo silo(0, split, standardizer, mix_seed(ctx.seed, kSiloStream));
  auto pcfg = cfg.local;
  pcfg.seed = mix_seed(silo.seed(), kPersonalizeStream);
  const auto personal = silo.personalize(global, cfg.personalize_epochs, cfg.personalize_patience, pcfg);

  open_run_dir(ctx);
  nn::save_params((ctx.out_dir / "personalized.bin").string(), personal.params);
  write_stream(ctx.out_dir / "history.csv", [&](std::ostream& o) { nn::write_history_csv(o, personal.history); });
  write_tables(ctx.out_dir, {{"global", silo.test_fde(global, na_from(cleaning))},
                             {"personalized", silo.test_fde(personal.params, na_from(cleaning))}});
  std::cout << "personalize: best epoch " << personal.history.best_epoch << " of " << personal.history.epochs.size() - 1
            << "\n";
}

void cmd_evaluate(const RunContext& ctx) {
  const auto cleaning = cleaning_config(ctx.config);
  const auto windows_cfg = window_config(ctx.config);
  const auto [train_frac, val_frac] = split_fractions(ctx.config);
  const auto params = nn::load_params(existing_path(ctx.config, "model_path").string());
  const auto standardizer = load_standardizer(ctx.config);
  const auto ref = load_projection(ctx.config);
  if (!ctx.config.contains("data")) throw ConfigError("evaluate needs a \"data\" source");
  const std::string which = ctx.config.value("split", std::string("test"));
  if (which != "test" && which != "all") throw ConfigError("split must be \"test\" or \"all\"");

  const auto data = load_source(ctx.config["data"], cleaning);
  auto windows = features::windows_from_trajectories(data.trajectories, ref, windows_cfg);
  if (which == "test") windows = features::temporal_split(windows, train_frac, val_frac).test;
  if (windows.empty()) throw DataError("no windows to evaluate");
  const auto table = eval::evaluate_model(params, windows, standardizer, na_from(cleaning));

  open_run_dir(ctx);
  write_tables(ctx.out_dir, {{ctx.config.value("variant", std::string("model")), table}});
  std::cout << "evaluate: " << table.total() << " windows\n";
}

void cmd_commcost(const RunContext& ctx) {
  const auto& c = ctx.config;
  auto bytes = [&](const char* bytes_key, const char* scaled_key, double scale) -> double {
    if (c.contains(bytes_key)) return c[bytes_key].get<double>();
    if (c.contains(scaled_key)) return c[scaled_key].get<double>() * scale;
    return -1.0;
  };
  fed::CommCostInputs in;
  try {
    in.dataset_bytes = bytes("dataset_bytes", "dataset_gb", fed::kGiB);
    in.model_msg_bytes = bytes("model_msg_bytes", "model_msg_mb", fed::kMiB);
    in.param_bytes = bytes("param_bytes", "param_mb", fed::kMiB);
    // without an explicit size, the wire payload of the configured model
    if (in.param_bytes < 0.0) in.param_bytes = static_cast<double>(nn::payload_bytes(model_dims(c)));
    if (in.dataset_bytes < 0.0 || in.model_msg_bytes < 0.0) {
      throw ConfigError("commcost needs the dataset and model-message sizes");
    }
    in.n_silos = c.at("n_silos").get<int>();
    in.rounds = c.at("rounds").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("commcost: ") + e.what());
  }
  const auto report = fed::comm_cost(in);
  open_run_dir(ctx);
  auto j = fed::to_json(report);
  j["inputs"] = {{"dataset_bytes", in.dataset_bytes},
                 {"model_msg_bytes", in.model_msg_bytes},
                 {"param_bytes", in.param_bytes},
                 {"n_silos", in.n_silos},
                 {"rounds", in.rounds}};
  write_json(ctx.out_dir / "commcost.json", j);
  char line[160];
  std::snprintf(line, sizeof line, "commcost: centralized %.3f GB, federated %.3f GB, reduction %.1f%%\n",
                report.centralized_bytes / fed::kGiB, report.federated_bytes / fed::kGiB, 100.0 * report.reduction_fraction);
  std::cout << line;
}

void cmd_diagnose(const RunContext& ctx) {
  const auto cleaning = cleaning_config(ctx.config);
  const auto windows_cfg = window_config(ctx.config);
  const auto sources = silo_sources(ctx.config);
  const auto& g = section(ctx.config, "grid");
  eval::GridSpec grid;
  grid.nx = g.value("nx", grid.nx);
  grid.ny = g.value("ny", grid.ny);
  const double rel_threshold = g.value("peak_threshold", 1e-3);
  const double min_prominence = g.value("min_prominence", 0.05);

  const auto corpora = load_silos(sources, cleaning);
  const auto ref = shared_projection(corpora);
  std::vector<std::vector<features::TrainingWindow>> windows;
  features::FeatureMoments moments;
  for (std::size_t k = 0; k < corpora.size(); ++k) {
    windows.push_back(features::windows_from_trajectories(corpora[k], ref, windows_cfg));
    if (windows.back().size() < 2) throw DataError("degenerate silo " + sources[k].name + ": fewer than 2 windows");
    for (const auto& w : windows.back()) moments.add(w);
  }
  const auto standardizer = features::Standardizer::from_moments(moments);

  // Common axes from the pooled window means, then one density per silo.
  std::vector<Eigen::MatrixXd> means;
  Eigen::Index rows = 0;
  for (const auto& ws : windows) {
    means.push_back(eval::window_feature_means(standardizer.apply(std::span<const features::TrainingWindow>(ws))));
    rows += means.back().rows();
  }
  Eigen::MatrixXd pooled(rows, features::kInputDim);
  Eigen::Index at = 0;
  for (const auto& m : means) {
    pooled.middleRows(at, m.rows()) = m;
    at += m.rows();
  }
  const auto pca = eval::pca2(pooled);

  open_run_dir(ctx);
  nlohmann::json report = {{"eigenvalues", {pca.eigenvalues[0], pca.eigenvalues[1]}}, {"silos", nlohmann::json::array()}};
  nlohmann::json axes = nlohmann::json::array();
  for (int k = 0; k < 2; ++k) {
    nlohmann::json axis = nlohmann::json::array();
    for (Eigen::Index i = 0; i < pca.axes.rows(); ++i) axis.push_back(pca.axes(i, k));
    axes.push_back(axis);
  }
  report["axes"] = axes;
  at = 0;
  for (std::size_t k = 0; k < means.size(); ++k) {
    const Eigen::Matrix<double, Eigen::Dynamic, 2> pts = pca.projected.middleRows(at, means[k].rows());
    at += means[k].rows();
    const auto kde = eval::kde2(pts, std::nullopt, grid);
    const std::string name = safe_name(sources[k].name);
    write_stream(ctx.out_dir / ("kde_" + name + ".csv"), [&](std::ostream& o) { eval::write_kde_csv(o, kde); });
    const int maxima = eval::count_local_maxima(kde, rel_threshold);
    const int modes = eval::count_modes(kde, rel_threshold, min_prominence);
    report["silos"].push_back({{"name", sources[k].name},
                               {"windows", pts.rows()},
                               {"bandwidth", {kde.bandwidth[0], kde.bandwidth[1]}},
                               {"bounds", {kde.x_min, kde.x_max, kde.y_min, kde.y_max}},
                               {"local_maxima", maxima},
                               {"modes", modes}});
    std::cout << "diagnose: " << sources[k].name << " " << pts.rows() << " windows, " << modes << " mode(s)\n";
  }
  write_json(ctx.out_dir / "diagnose.json", report);
}

void dispatch(const RunContext& ctx) {
  static const std::map<std::string, void (*)(const RunContext&)> table = {
      {"preprocess", cmd_preprocess}, {"train", cmd_train},       {"federate", cmd_federate}, {"personalize", cmd_personalize},
      {"evaluate", cmd_evaluate},     {"commcost", cmd_commcost}, {"diagnose", cmd_diagnose}};
  const auto it = table.find(ctx.command);
  if (it == table.end()) throw ConfigError("unknown command " + ctx.command);
  it->second(ctx);
}

int exit_code(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) return static_cast<int>(err->kind());
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return static_cast<int>(ErrorKind::Config);
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return static_cast<int>(ErrorKind::Io);
  return 1;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Federated vessel location forecasting"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config_path;
  Overrides ov;
  const std::vector<std::pair<const char*, const char*>> commands = {
      {"preprocess", "clean raw AIS into trajectories and dataset statistics"},
      {"train", "train one model on pooled data"},
      {"federate", "run FedProx/FedAvg across silos, then personalize"},
      {"personalize", "fine-tune a global model on one silo"},
      {"evaluate", "bucketed FDE of a saved model"},
      {"commcost", "communication cost of centralized vs federated training"},
      {"diagnose", "PCA and KDE of window features per silo"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "JSON config file")->required();
    sub->add_option("--seed", ov.seed, "override the config seed");
    sub->add_option("--out", ov.out, "override the run directory");
    sub->add_option("--workers", ov.workers, "silo workers (also " + std::string(kWorkersEnv) + ")");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::Config);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    dispatch(make_context(command, config_path, ov));
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "fedvlf " << command << ": " << e.what() << "\n";
    return exit_code(e);
  }
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace fedvlf::cli
