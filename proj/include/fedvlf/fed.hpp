#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fedvlf/eval.hpp"
#include "fedvlf/features.hpp"
#include "fedvlf/nn/params.hpp"
#include "fedvlf/nn/trainer.hpp"

namespace fedvlf::fed {

using Params = nn::ModelParams<float>;

enum class Algorithm { FedAvg, FedProx };

inline constexpr double kMuProxGrid[] = {1e-4, 1e-3, 1e-2, 1e-1, 1.0};

struct FedConfig {
  int rounds = 70;
  double mu_prox = 1e-3;
  int local_epochs = 1;
  Algorithm algorithm = Algorithm::FedProx;
  int personalize_epochs = 10;
  int personalize_patience = 3;
  // Silo workers running concurrently; 0 means one per silo.
  int workers = 0;
  // Local optimizer settings; max_epochs/patience are overridden per call.
  nn::TrainConfig local;

  // FedAvg is FedProx with mu = 0.
  double effective_mu() const { return algorithm == Algorithm::FedAvg ? 0.0 : mu_prox; }
  void validate() const;
};

struct LocalUpdate {
  Params params;
  std::size_t sample_count = 0;
  nn::TrainHistory history;
};

// One organization's data and its private copy of the model. The coordinator
// only ever hands it serialized parameters and gets parameters or scalar
// losses back; the windows never leave the object.
class Silo {
 public:
  // raw: unstandardized temporal split. standardizer: the federation-wide one.
  Silo(int id, const features::TemporalSplit& raw, const features::Standardizer& standardizer, std::uint64_t seed);

  int id() const { return id_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t sample_count() const { return train_.size(); }
  std::size_t val_count() const { return val_.size(); }
  std::size_t test_count() const { return test_raw_.size(); }
  const features::Standardizer& standardizer() const { return standardizer_; }

  // Summary statistics of a raw training split, for building the shared standardizer.
  static features::FeatureMoments train_moments(std::span<const features::TrainingWindow> raw_train);

  LocalUpdate local_train(const Params& global, int epochs, double mu_prox, const nn::TrainConfig& cfg) const;
  double validation_loss(const Params& params) const;
  nn::FitResult<float> personalize(const Params& global, int epochs, int patience, const nn::TrainConfig& cfg) const;
  eval::FdeBucketTable test_fde(const Params& params, double na_from_s = eval::kMaxHorizonS) const;

 private:
  int id_;
  std::uint64_t seed_;
  features::Standardizer standardizer_;
  std::vector<features::TrainingWindow> train_, val_, test_raw_;
};

// FedProx client step: fit from the global parameters for `epochs` epochs
// with mu * (w - w_global) added to the gradient. mu = 0 is the FedAvg step.
LocalUpdate local_train(const Silo& silo, const Params& global, int epochs, double mu_prox, const nn::TrainConfig& cfg);

// Sample-count-weighted mean, sum(n_i * w_i) / sum(n_i), accumulated in
// double. Each coordinate's terms are summed in sorted order, so the result
// does not depend on the order of the updates.
Params aggregate(std::span<const std::pair<const Params*, std::size_t>> updates);

struct SiloRoundStats {
  int silo_id = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double drift = 0.0;  // ||w_local - w_global|| against the broadcast model
  bool diverged = false;
};

struct RoundLog {
  int round = 0;
  std::vector<SiloRoundStats> silos;
  double aggregate_val_loss = 0.0;  // new global model, val-count weighted over silos
  std::uint64_t bytes_sent = 0;      // cumulative coordinator -> silos
  std::uint64_t bytes_received = 0;  // cumulative silos -> coordinator
};

struct FederationResult {
  Params global;
  std::vector<RoundLog> rounds;
};

// Seeds of the local fits: silo seed mixed with the round index.
std::uint64_t local_seed(const Silo& silo, int round);

FederationResult run_federation(std::span<const Silo> silos, const FedConfig& cfg, const nn::ModelDims& dims,
                                std::uint64_t seed);

// Same loop, starting from the given global parameters.
FederationResult run_federation(std::span<const Silo> silos, const FedConfig& cfg, const Params& initial);

// Fine-tune the global model on one silo, early-stopped on its validation
// split. The untouched global model counts as epoch 0.
Params personalize(const Params& global, const Silo& silo, int epochs = 10, int patience = 3,
                   const nn::TrainConfig& cfg = {});

// One row per silo per round, plus an "aggregate" row per round.
void write_round_log_csv(std::ostream& out, std::span<const RoundLog> rounds);

struct CommCostInputs {
  double dataset_bytes = 0.0;
  double model_msg_bytes = 0.0;
  double param_bytes = 0.0;
  int n_silos = 0;
  int rounds = 0;  // FL rounds, and the epoch count of the centralized run
};

struct CommCostReport {
  double centralized_bytes = 0.0;
  double federated_bytes = 0.0;
  double reduction_fraction = 0.0;
};

inline constexpr double kMiB = 1024.0 * 1024.0;
inline constexpr double kGiB = 1024.0 * kMiB;

// centralized = data + msg * silos * rounds; federated = params * silos * 2 * rounds.
CommCostReport comm_cost(const CommCostInputs& in);

nlohmann::json to_json(const CommCostReport& r);
FedConfig fed_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FedConfig& cfg);

}  // namespace fedvlf::fed
