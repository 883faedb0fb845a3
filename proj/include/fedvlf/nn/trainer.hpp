#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedvlf/error.hpp"
#include "fedvlf/features.hpp"
#include "fedvlf/nn/adam.hpp"
#include "fedvlf/nn/model.hpp"
#include "fedvlf/nn/params.hpp"
#include "fedvlf/rng.hpp"

namespace fedvlf::nn {

struct TrainConfig {
  double lr = 1e-4;
  int max_epochs = 100;
  int patience = 10;
  int batch_size = 512;
  double dropout_p = 0.25;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("train config: lr must be positive");
    if (max_epochs < 1) throw ConfigError("train config: max_epochs must be at least 1");
    if (patience < 1 || patience > max_epochs) throw ConfigError("train config: patience must be in [1, max_epochs]");
    if (batch_size < 1) throw ConfigError("train config: batch_size must be positive");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("train config: dropout_p must be in [0, 1)");
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

// FedProx anchor: adds mu * (w - anchor) to every gradient. Inactive when
// anchor is null or mu == 0.
template <class Scalar>
struct ProximalTerm {
  const ModelParams<Scalar>* anchor = nullptr;
  double mu = 0.0;

  bool active() const { return anchor != nullptr && mu != 0.0; }
};

template <class Scalar>
struct FitOptions {
  // Score the starting parameters as epoch 0 so an unhelpful run returns them.
  bool baseline_epoch = false;
  bool early_stopping = true;
  // Return the best-validation snapshot rather than the last iterate.
  bool restore_best = true;
  ProximalTerm<Scalar> proximal{};
};

template <class Scalar>
struct FitResult {
  ModelParams<Scalar> params;
  TrainHistory history;
};

using BatchPlan = std::vector<std::vector<const features::TrainingWindow*>>;

// Buckets windows by length (no padding) and chunks each bucket. With an rng
// both the bucket contents and the batch order are shuffled.
inline BatchPlan plan_batches(std::span<const features::TrainingWindow> windows, int batch_size, Rng* rng) {
  std::map<Eigen::Index, std::vector<const features::TrainingWindow*>> buckets;
  for (const auto& w : windows) buckets[w.length()].push_back(&w);
  BatchPlan plan;
  for (auto& [len, members] : buckets) {
    if (rng) rng->shuffle(std::span(members));
    for (std::size_t start = 0; start < members.size(); start += static_cast<std::size_t>(batch_size)) {
      const std::size_t end = std::min(members.size(), start + static_cast<std::size_t>(batch_size));
      plan.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(start), members.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  if (rng) rng->shuffle(std::span(plan));
  return plan;
}

// Loss and gradients for one batch.
template <class Scalar>
double loss_and_gradients(const Batch<Scalar>& batch, const ModelParams<Scalar>& params, double dropout_p, Rng* rng,
                          Gradients<Scalar>& grads) {
  ForwardCache<Scalar> cache;
  const Matrix<Scalar> pred = model_forward(batch, params, Mode::Train, dropout_p, rng, &cache);
  const double loss = rmse_loss<Scalar>(pred, batch.labels);
  backward(batch, params, cache, rmse_grad<Scalar>(pred, batch.labels), grads);
  return loss;
}

// Adds the proximal pull (when active) to grads, then takes one Adam step.
template <class Scalar>
void apply_update(ModelParams<Scalar>& params, Gradients<Scalar>& grads, AdamState<Scalar>& adam, double lr,
                  const ProximalTerm<Scalar>& prox = {}) {
  if (prox.active()) {
    check_same_shape(params, *prox.anchor, "proximal anchor");
    grads.flat() += static_cast<Scalar>(prox.mu) * (params.flat() - prox.anchor->flat());
  }
  adam_step(params, grads, adam, lr);
}

// One pass of mini-batch Adam. Returns the sample-weighted mean batch RMSE.
template <class Scalar>
double train_epoch(ModelParams<Scalar>& params, AdamState<Scalar>& adam, std::span<const features::TrainingWindow> train,
                   const TrainConfig& cfg, Rng& rng, const ProximalTerm<Scalar>& prox = {}) {
  if (prox.active()) check_same_shape(params, *prox.anchor, "proximal anchor");
  Gradients<Scalar> grads(params.dims());
  double weighted = 0.0;
  double count = 0.0;
  for (const auto& members : plan_batches(train, cfg.batch_size, &rng)) {
    const Batch<Scalar> batch = make_batch<Scalar>(members);
    const double loss = loss_and_gradients(batch, params, cfg.dropout_p, &rng, grads);
    if (!std::isfinite(loss)) return loss;
    apply_update(params, grads, adam, cfg.lr, prox);
    weighted += loss * static_cast<double>(batch.size());
    count += static_cast<double>(batch.size());
  }
  return weighted / count;
}

// Predictions for every window, in input order (output_dim x N).
template <class Scalar>
Matrix<Scalar> predict(const ModelParams<Scalar>& params, std::span<const features::TrainingWindow> windows,
                       int batch_size = 1024) {
  Matrix<Scalar> out(params.dims().output, static_cast<Eigen::Index>(windows.size()));
  for (const auto& members : plan_batches(windows, batch_size, nullptr)) {
    const Batch<Scalar> batch = make_batch<Scalar>(members);
    const Matrix<Scalar> pred = model_forward(batch, params, Mode::Eval, 0.0, nullptr);
    for (std::size_t k = 0; k < members.size(); ++k) out.col(members[k] - windows.data()) = pred.col(static_cast<Eigen::Index>(k));
  }
  return out;
}

// Eval-mode RMSE over the whole set.
template <class Scalar>
double evaluate_loss(const ModelParams<Scalar>& params, std::span<const features::TrainingWindow> windows,
                     int batch_size = 1024) {
  if (windows.empty()) throw DataError("cannot evaluate on an empty window set");
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto& members : plan_batches(windows, batch_size, nullptr)) {
    const Batch<Scalar> batch = make_batch<Scalar>(members);
    const Matrix<Scalar> pred = model_forward(batch, params, Mode::Eval, 0.0, nullptr);
    sq += (pred.template cast<double>() - batch.labels.template cast<double>()).squaredNorm();
    n += static_cast<std::size_t>(pred.size());
  }
  return std::sqrt(sq / static_cast<double>(n));
}

// Epoch loop with seeded shuffling, per-epoch validation and early stopping.
template <class Scalar>
FitResult<Scalar> fit(const ModelParams<Scalar>& initial, std::span<const features::TrainingWindow> train,
                      std::span<const features::TrainingWindow> val, const TrainConfig& cfg,
                      const FitOptions<Scalar>& opts = {}) {
  cfg.validate();
  if (train.empty() || val.empty()) throw DataError("fit needs nonempty train and validation sets");
  Rng rng(cfg.seed);
  ModelParams<Scalar> params = initial;
  AdamState<Scalar> adam(params.dims());
  FitResult<Scalar> result{params, {}};
  TrainHistory& hist = result.history;
  int since_best = 0;

  auto record = [&](int epoch, double train_loss, double val_loss) {
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)");
    }
    hist.epochs.push_back({epoch, train_loss, val_loss});
    if (val_loss < hist.best_val_loss) {
      hist.best_val_loss = val_loss;
      hist.best_epoch = epoch;
      if (opts.restore_best) result.params = params;
      since_best = 0;
    } else {
      ++since_best;
    }
  };

  if (opts.baseline_epoch) record(0, evaluate_loss(params, train), evaluate_loss(params, val));
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double train_loss = train_epoch(params, adam, train, cfg, rng, opts.proximal);
    const double val_loss = std::isfinite(train_loss) ? evaluate_loss(params, val) : train_loss;
    record(epoch, train_loss, val_loss);
    if (opts.early_stopping && since_best >= cfg.patience) {
      hist.early_stopped = epoch < cfg.max_epochs;
      break;
    }
  }
  if (!opts.restore_best) result.params = params;
  return result;
}

void write_history_csv(std::ostream& out, const TrainHistory& history);

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelDims& dims);
ModelDims dims_from_json(const nlohmann::json& j);

}  // namespace fedvlf::nn
