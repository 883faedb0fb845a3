#include "fedvlf/nn/trainer.hpp"

#include <iomanip>
#include <ostream>

namespace fedvlf::nn {

void write_history_csv(std::ostream& out, const TrainHistory& history) {
  out << "epoch,train_loss,val_loss\n" << std::setprecision(17);
  for (const auto& e : history.epochs) out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << '\n';
  if (!out) throw IoError("failed writing training history");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"batch_size", c.batch_size},
          {"dropout_p", c.dropout_p},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.dropout_p = j.value("dropout_p", c.dropout_p);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const ModelDims& d) {
  return {{"input", d.input}, {"hidden", d.hidden}, {"embed", d.embed},
          {"dense", d.dense}, {"output", d.output}, {"vocab", d.vocab}};
}

ModelDims dims_from_json(const nlohmann::json& j) {
  ModelDims d;
  try {
    d.input = j.value("input", d.input);
    d.hidden = j.value("hidden", d.hidden);
    d.embed = j.value("embed", d.embed);
    d.dense = j.value("dense", d.dense);
    d.output = j.value("output", d.output);
    d.vocab = j.value("vocab", d.vocab);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  d.validate();
  if (d.input != features::kInputDim || d.output != features::kLabelDim) {
    throw ConfigError("model input/output widths must match the 6 transition features and 2 labels");
  }
  return d;
}

}  // namespace fedvlf::nn
