#include "fedvlf/fed.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <iomanip>
#include <optional>
#include <ostream>

#include "fedvlf/error.hpp"
#include "fedvlf/nn/serialize.hpp"
#include "fedvlf/rng.hpp"

namespace fedvlf::fed {

void FedConfig::validate() const {
  if (rounds < 1) throw ConfigError("fed config: rounds must be positive");
  if (!(mu_prox >= 0.0)) throw ConfigError("fed config: mu_prox must be nonnegative");
  if (local_epochs < 1) throw ConfigError("fed config: local_epochs must be positive");
  if (personalize_epochs < 1 || personalize_patience < 1 || personalize_patience > personalize_epochs) {
    throw ConfigError("fed config: personalization needs 1 <= patience <= epochs");
  }
  if (workers < 0) throw ConfigError("fed config: workers must be nonnegative");
}

Silo::Silo(int id, const features::TemporalSplit& raw, const features::Standardizer& standardizer, std::uint64_t seed)
    : id_(id),
      seed_(seed),
      standardizer_(standardizer),
      train_(standardizer.apply(raw.train)),
      val_(standardizer.apply(raw.val)),
      test_raw_(raw.test) {
  if (train_.empty()) throw DataError("silo " + std::to_string(id) + " has no training windows");
  if (val_.empty()) throw DataError("silo " + std::to_string(id) + " has no validation windows");
}

features::FeatureMoments Silo::train_moments(std::span<const features::TrainingWindow> raw_train) {
  features::FeatureMoments m;
  for (const auto& w : raw_train) m.add(w);
  return m;
}

LocalUpdate Silo::local_train(const Params& global, int epochs, double mu_prox, const nn::TrainConfig& cfg) const {
  if (epochs < 1) throw ConfigError("local_train needs at least one epoch");
  nn::TrainConfig local = cfg;
  local.max_epochs = epochs;
  local.patience = epochs;
  nn::FitOptions<float> opts;
  opts.early_stopping = false;
  opts.restore_best = false;
  opts.proximal = {&global, mu_prox};
  auto fitted = nn::fit(global, train_, val_, local, opts);
  return {std::move(fitted.params), train_.size(), std::move(fitted.history)};
}

double Silo::validation_loss(const Params& params) const { return nn::evaluate_loss(params, val_); }

nn::FitResult<float> Silo::personalize(const Params& global, int epochs, int patience, const nn::TrainConfig& cfg) const {
  nn::TrainConfig local = cfg;
  local.max_epochs = epochs;
  local.patience = patience;
  nn::FitOptions<float> opts;
  opts.baseline_epoch = true;
  return nn::fit(global, train_, val_, local, opts);
}

eval::FdeBucketTable Silo::test_fde(const Params& params, double na_from_s) const {
  return eval::evaluate_model(params, test_raw_, standardizer_, na_from_s);
}

LocalUpdate local_train(const Silo& silo, const Params& global, int epochs, double mu_prox, const nn::TrainConfig& cfg) {
  return silo.local_train(global, epochs, mu_prox, cfg);
}

Params aggregate(std::span<const std::pair<const Params*, std::size_t>> updates) {
  if (updates.empty()) throw DataError("aggregate needs at least one update");
  const nn::ModelDims& dims = updates.front().first->dims();
  double total = 0.0;
  for (const auto& [p, n] : updates) {
    if (!(p->dims() == dims)) throw DataError("aggregate: update dimensions do not match");
    total += static_cast<double>(n);
  }
  if (!(total > 0.0)) throw DataError("aggregate: total sample count is zero");

  Params out(dims);
  const auto k = updates.size();
  std::vector<double> terms(k);
  std::vector<double> weights(k);
  for (std::size_t s = 0; s < k; ++s) weights[s] = static_cast<double>(updates[s].second);
  const Eigen::Index size = out.flat().size();
  for (Eigen::Index i = 0; i < size; ++i) {
    for (std::size_t s = 0; s < k; ++s) terms[s] = weights[s] * static_cast<double>(updates[s].first->flat()[i]);
    std::sort(terms.begin(), terms.end());
    double acc = 0.0;
    for (double t : terms) acc += t;
    out.flat()[i] = static_cast<float>(acc / total);
  }
  return out;
}

std::uint64_t local_seed(const Silo& silo, int round) { return mix_seed(silo.seed(), static_cast<std::uint64_t>(round)); }

FederationResult run_federation(std::span<const Silo> silos, const FedConfig& cfg, const nn::ModelDims& dims,
                                std::uint64_t seed) {
  Rng rng(seed);
  return run_federation(silos, cfg, Params::random(dims, rng));
}

FederationResult run_federation(std::span<const Silo> silos, const FedConfig& cfg, const Params& initial) {
  cfg.validate();
  if (silos.size() < 2) throw ConfigError("a federation needs at least 2 silos");
  std::vector<const Silo*> order;
  for (const auto& s : silos) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const Silo* a, const Silo* b) { return a->id() < b->id(); });

  FederationResult result{initial, {}};
  const double mu = cfg.effective_mu();
  const std::size_t workers = cfg.workers == 0 ? order.size() : static_cast<std::size_t>(cfg.workers);
  std::uint64_t sent = 0, received = 0;

  for (int round = 1; round <= cfg.rounds; ++round) {
    const std::string broadcast = nn::serialize_params(result.global);
    const Params& global = result.global;

    // Each slot is written by exactly one worker; results are consumed in
    // silo-id order, so scheduling never changes the outcome.
    std::vector<std::optional<LocalUpdate>> updates(order.size());
    std::vector<std::string> uploads(order.size());
    auto work = [&](std::size_t s) {
      const Params received_global = nn::deserialize_params(broadcast);
      nn::TrainConfig local_cfg = cfg.local;
      local_cfg.seed = local_seed(*order[s], round);
      try {
        updates[s] = order[s]->local_train(received_global, cfg.local_epochs, mu, local_cfg);
        uploads[s] = nn::serialize_params(updates[s]->params);
      } catch (const NumericError&) {
        updates[s].reset();
      }
    };
    for (std::size_t start = 0; start < order.size(); start += workers) {
      std::vector<std::future<void>> pending;
      const std::size_t end = std::min(order.size(), start + workers);
      for (std::size_t s = start; s < end; ++s) pending.push_back(std::async(std::launch::async, work, s));
      for (auto& f : pending) f.get();
    }

    RoundLog log;
    log.round = round;
    std::vector<Params> decoded;
    std::vector<std::size_t> counts;
    decoded.reserve(order.size());
    for (std::size_t s = 0; s < order.size(); ++s) {
      sent += broadcast.size();
      SiloRoundStats stats;
      stats.silo_id = order[s]->id();
      if (!updates[s] || !updates[s]->params.all_finite()) {
        stats.diverged = true;
        stats.train_loss = stats.val_loss = stats.drift = std::nan("");
      } else {
        received += uploads[s].size();
        decoded.push_back(nn::deserialize_params(uploads[s]));
        counts.push_back(updates[s]->sample_count);
        const auto& last = updates[s]->history.epochs.back();
        stats.train_loss = last.train_loss;
        stats.val_loss = last.val_loss;
        stats.drift = nn::l2_distance(decoded.back(), global);
      }
      log.silos.push_back(stats);
    }
    if (decoded.empty()) throw NumericError("federation failed: every silo diverged in round " + std::to_string(round));

    std::vector<std::pair<const Params*, std::size_t>> weighted;
    for (std::size_t k = 0; k < decoded.size(); ++k) weighted.emplace_back(&decoded[k], counts[k]);
    result.global = aggregate(weighted);

    double val_sum = 0.0, val_n = 0.0;
    for (const Silo* silo : order) {
      const auto n = static_cast<double>(silo->val_count());
      const double rmse = silo->validation_loss(result.global);
      val_sum += rmse * rmse * n;
      val_n += n;
    }
    log.aggregate_val_loss = std::sqrt(val_sum / val_n);
    log.bytes_sent = sent;
    log.bytes_received = received;
    result.rounds.push_back(std::move(log));
  }
  return result;
}

Params personalize(const Params& global, const Silo& silo, int epochs, int patience, const nn::TrainConfig& cfg) {
  return silo.personalize(global, epochs, patience, cfg).params;
}

void write_round_log_csv(std::ostream& out, std::span<const RoundLog> rounds) {
  out << "round,silo,train_loss,val_loss,drift,diverged,bytes_sent,bytes_received\n" << std::setprecision(17);
  for (const auto& r : rounds) {
    for (const auto& s : r.silos) {
      out << r.round << ',' << s.silo_id << ',' << s.train_loss << ',' << s.val_loss << ',' << s.drift << ','
          << (s.diverged ? 1 : 0) << ',' << r.bytes_sent << ',' << r.bytes_received << '\n';
    }
    out << r.round << ",aggregate,," << r.aggregate_val_loss << ",,0," << r.bytes_sent << ',' << r.bytes_received << '\n';
  }
  if (!out) throw IoError("failed writing round log");
}

CommCostReport comm_cost(const CommCostInputs& in) {
  if (in.dataset_bytes < 0.0 || in.model_msg_bytes < 0.0 || in.param_bytes < 0.0 || in.n_silos < 0 || in.rounds < 0) {
    throw ConfigError("communication cost inputs must be nonnegative");
  }
  CommCostReport r;
  r.centralized_bytes = in.dataset_bytes + in.model_msg_bytes * in.n_silos * static_cast<double>(in.rounds);
  r.federated_bytes = in.param_bytes * in.n_silos * 2.0 * static_cast<double>(in.rounds);
  if (!(r.centralized_bytes > 0.0)) throw DataError("communication cost reduction undefined: centralized cost is zero");
  r.reduction_fraction = 1.0 - r.federated_bytes / r.centralized_bytes;
  return r;
}

nlohmann::json to_json(const CommCostReport& r) {
  return {{"centralized_bytes", r.centralized_bytes},
          {"federated_bytes", r.federated_bytes},
          {"centralized_gb", r.centralized_bytes / kGiB},
          {"federated_gb", r.federated_bytes / kGiB},
          {"reduction_fraction", r.reduction_fraction},
          {"reduction_percent", 100.0 * r.reduction_fraction}};
}

FedConfig fed_config_from_json(const nlohmann::json& j) {
  FedConfig c;
  try {
    c.rounds = j.value("rounds", c.rounds);
    if (j.contains("mu_prox") && j["mu_prox"].is_number()) c.mu_prox = j["mu_prox"].get<double>();
    c.local_epochs = j.value("local_epochs", c.local_epochs);
    const std::string algo = j.value("algorithm", std::string("fedprox"));
    if (algo == "fedavg") {
      c.algorithm = Algorithm::FedAvg;
    } else if (algo == "fedprox") {
      c.algorithm = Algorithm::FedProx;
    } else {
      throw ConfigError("fed config: unknown algorithm '" + algo + "'");
    }
    c.personalize_epochs = j.value("personalize_epochs", c.personalize_epochs);
    c.personalize_patience = j.value("personalize_patience", c.personalize_patience);
    c.workers = j.value("workers", c.workers);
    if (j.contains("local")) c.local = nn::train_config_from_json(j["local"]);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("fed config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const FedConfig& c) {
  return {{"rounds", c.rounds},
          {"mu_prox", c.mu_prox},
          {"local_epochs", c.local_epochs},
          {"algorithm", c.algorithm == Algorithm::FedAvg ? "fedavg" : "fedprox"},
          {"personalize_epochs", c.personalize_epochs},
          {"personalize_patience", c.personalize_patience},
          {"workers", c.workers},
          {"local", nn::to_json(c.local)}};
}

}  // namespace fedvlf::fed
