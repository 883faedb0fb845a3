#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

#include "fedvlf/error.hpp"
#include "fedvlf/features.hpp"
#include "fedvlf/nn/params.hpp"
#include "fedvlf/rng.hpp"

namespace fedvlf::nn {

enum class Mode { Train, Eval };

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
Scalar sigmoid(Scalar z) {
  return Scalar(1) / (Scalar(1) + std::exp(-z));
}

// Hidden and cell state, one column per batch sample.
template <class Scalar>
struct LstmState {
  Matrix<Scalar> h;
  Matrix<Scalar> c;

  static LstmState zeros(int hidden, Eigen::Index batch) {
    return {Matrix<Scalar>::Zero(hidden, batch), Matrix<Scalar>::Zero(hidden, batch)};
  }
};

// Post-activation gate values stacked forget, input, output, candidate.
template <class Scalar>
struct GateRecord {
  Matrix<Scalar> gates;  // 4H x B
};

inline void check_finite_input(const auto& x) {
  if (!x.allFinite()) throw NumericError("non-finite LSTM input");
}

// One LSTM step over a batch of input columns:
//   f, i, o = sigmoid(W x + R h + b),  c~ = tanh(W_c x + R_c h + b_c)
//   c = f * c_prev + i * c~,           h = o * tanh(c)
template <class Scalar>
std::pair<LstmState<Scalar>, GateRecord<Scalar>> lstm_cell_forward(const Eigen::Ref<const Matrix<Scalar>>& x,
                                                                   const LstmState<Scalar>& prev,
                                                                   const ModelParams<Scalar>& params) {
  check_finite_input(x);
  const int hd = params.dims().hidden;
  GateRecord<Scalar> rec;
  rec.gates.noalias() = params.input_weights() * x;
  rec.gates.noalias() += params.recurrent_weights() * prev.h;
  rec.gates.colwise() += params.gate_bias().col(0);
  rec.gates.topRows(3 * hd) = rec.gates.topRows(3 * hd).unaryExpr([](Scalar z) { return sigmoid(z); });
  rec.gates.bottomRows(hd) = rec.gates.bottomRows(hd).array().tanh();

  LstmState<Scalar> next;
  next.c = rec.gates.middleRows(0, hd).cwiseProduct(prev.c) + rec.gates.middleRows(hd, hd).cwiseProduct(rec.gates.bottomRows(hd));
  next.h = rec.gates.middleRows(2 * hd, hd).cwiseProduct(next.c.array().tanh().matrix());
  return {std::move(next), std::move(rec)};
}

// Same-length windows packed as per-timestep column blocks.
template <class Scalar>
struct Batch {
  std::vector<Matrix<Scalar>> inputs;  // L entries, each input x B
  std::vector<int> vessel_types;
  Matrix<Scalar> labels;  // output x B

  Eigen::Index size() const { return static_cast<Eigen::Index>(vessel_types.size()); }
  Eigen::Index length() const { return static_cast<Eigen::Index>(inputs.size()); }
};

template <class Scalar>
Batch<Scalar> make_batch(std::span<const features::TrainingWindow* const> windows) {
  if (windows.empty()) throw DataError("cannot build an empty batch");
  const Eigen::Index len = windows.front()->length();
  const auto batch = static_cast<Eigen::Index>(windows.size());
  Batch<Scalar> out;
  out.inputs.assign(static_cast<std::size_t>(len), Matrix<Scalar>(features::kInputDim, batch));
  out.labels.resize(features::kLabelDim, batch);
  out.vessel_types.reserve(windows.size());
  for (Eigen::Index b = 0; b < batch; ++b) {
    const auto& w = *windows[static_cast<std::size_t>(b)];
    if (w.length() != len) throw DataError("batch windows must share one length");
    for (Eigen::Index t = 0; t < len; ++t) out.inputs[static_cast<std::size_t>(t)].col(b) = w.steps.col(t).template cast<Scalar>();
    out.labels.col(b) = w.label.template cast<Scalar>();
    out.vessel_types.push_back(w.vessel_type);
  }
  return out;
}

template <class Scalar>
Batch<Scalar> make_batch(const features::TrainingWindow& w) {
  const features::TrainingWindow* p = &w;
  return make_batch<Scalar>(std::span<const features::TrainingWindow* const>(&p, 1));
}

template <class Scalar>
struct ForwardCache {
  std::vector<Matrix<Scalar>> gates;   // per step, 4H x B
  std::vector<Matrix<Scalar>> cells;   // c_0 .. c_L (c_0 = 0)
  std::vector<Matrix<Scalar>> hidden;  // h_0 .. h_L (h_0 = 0)
  Matrix<Scalar> concat;               // [h_L; embedding] before dropout
  Matrix<Scalar> mask;                 // scaled keep mask; empty in eval mode
  Matrix<Scalar> dropped;
  Matrix<Scalar> dense_pre;
  Matrix<Scalar> dense_act;
  Matrix<Scalar> output;
  std::vector<int> vessel_types;
  ModelDims dims;
};

// Full forward pass: LSTM over the window, concatenate the final hidden state
// with the vessel-type embedding, dropout (train only, inverted scaling),
// dense + ReLU, linear output in standardized label space.
template <class Scalar>
Matrix<Scalar> model_forward(const Batch<Scalar>& batch, const ModelParams<Scalar>& params, Mode mode, double dropout_p,
                             Rng* rng, ForwardCache<Scalar>* cache = nullptr) {
  const ModelDims& d = params.dims();
  const Eigen::Index bsz = batch.size();
  for (int type : batch.vessel_types) {
    if (type < 0 || type >= d.vocab) {
      throw DataError("vessel type " + std::to_string(type) + " outside embedding vocabulary of " + std::to_string(d.vocab));
    }
  }
  ForwardCache<Scalar> local;
  ForwardCache<Scalar>& fc = cache ? *cache : local;
  fc.dims = d;
  fc.vessel_types = batch.vessel_types;
  fc.gates.clear();
  fc.cells.clear();
  fc.hidden.clear();

  LstmState<Scalar> state = LstmState<Scalar>::zeros(d.hidden, bsz);
  fc.cells.push_back(state.c);
  fc.hidden.push_back(state.h);
  for (const auto& x : batch.inputs) {
    auto [next, rec] = lstm_cell_forward<Scalar>(x, state, params);
    state = std::move(next);
    fc.gates.push_back(std::move(rec.gates));
    fc.cells.push_back(state.c);
    fc.hidden.push_back(state.h);
  }

  fc.concat.resize(d.concat(), bsz);
  fc.concat.topRows(d.hidden) = state.h;
  const auto emb = params.embedding();
  for (Eigen::Index b = 0; b < bsz; ++b) fc.concat.col(b).tail(d.embed) = emb.col(batch.vessel_types[static_cast<std::size_t>(b)]);

  if (mode == Mode::Train && dropout_p > 0.0) {
    if (rng == nullptr) throw ConfigError("train-mode dropout needs a random source");
    const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - dropout_p));
    fc.mask.resize(d.concat(), bsz);
    for (Eigen::Index k = 0; k < fc.mask.size(); ++k) fc.mask.data()[k] = rng->uniform() < dropout_p ? Scalar(0) : keep_scale;
    fc.dropped = fc.concat.cwiseProduct(fc.mask);
  } else {
    fc.mask.resize(0, 0);
    fc.dropped = fc.concat;
  }

  fc.dense_pre.noalias() = params.dense_weights() * fc.dropped;
  fc.dense_pre.colwise() += params.dense_bias().col(0);
  fc.dense_act = fc.dense_pre.cwiseMax(Scalar(0));
  fc.output.noalias() = params.output_weights() * fc.dense_act;
  fc.output.colwise() += params.output_bias().col(0);
  return fc.output;
}

// sqrt of the mean squared error over every sample and output dimension.
template <class Scalar>
double rmse_loss(const Eigen::Ref<const Matrix<Scalar>>& preds, const Eigen::Ref<const Matrix<Scalar>>& labels) {
  if (preds.size() == 0) throw DataError("rmse of an empty batch");
  if (preds.rows() != labels.rows() || preds.cols() != labels.cols()) throw DataError("rmse: prediction/label shape mismatch");
  const double sq = (preds.template cast<double>() - labels.template cast<double>()).squaredNorm();
  return std::sqrt(sq / static_cast<double>(preds.size()));
}

// d rmse / d preds; zero when the loss is exactly zero.
template <class Scalar>
Matrix<Scalar> rmse_grad(const Matrix<Scalar>& preds, const Matrix<Scalar>& labels) {
  const double loss = rmse_loss<Scalar>(preds, labels);
  if (loss == 0.0) return Matrix<Scalar>::Zero(preds.rows(), preds.cols());
  return (preds - labels) * static_cast<Scalar>(1.0 / (static_cast<double>(preds.size()) * loss));
}

// Backpropagation through time from an upstream gradient on the outputs.
// The gradients are written into grads (overwritten, not accumulated).
template <class Scalar>
void backward(const Batch<Scalar>& batch, const ModelParams<Scalar>& params, const ForwardCache<Scalar>& fc,
              const Matrix<Scalar>& d_output, Gradients<Scalar>& grads) {
  const ModelDims& d = params.dims();
  if (!(fc.dims == d) || !(grads.dims() == d)) throw DataError("backward: cache/params/gradient shapes do not match");
  if (fc.gates.size() != batch.inputs.size() || fc.output.cols() != batch.size() || d_output.rows() != fc.output.rows() ||
      d_output.cols() != fc.output.cols()) {
    throw DataError("backward: cache does not belong to this batch");
  }
  grads.set_zero();
  const int hd = d.hidden;

  grads.output_weights().noalias() = d_output * fc.dense_act.transpose();
  grads.output_bias() = d_output.rowwise().sum();

  Matrix<Scalar> d_pre = params.output_weights().transpose() * d_output;
  d_pre = d_pre.cwiseProduct((fc.dense_pre.array() > Scalar(0)).template cast<Scalar>().matrix());
  grads.dense_weights().noalias() = d_pre * fc.dropped.transpose();
  grads.dense_bias() = d_pre.rowwise().sum();

  Matrix<Scalar> d_concat = params.dense_weights().transpose() * d_pre;
  if (fc.mask.size() != 0) d_concat = d_concat.cwiseProduct(fc.mask);

  auto d_emb = grads.embedding();
  for (Eigen::Index b = 0; b < batch.size(); ++b) {
    d_emb.col(fc.vessel_types[static_cast<std::size_t>(b)]) += d_concat.col(b).tail(d.embed);
  }

  Matrix<Scalar> dh = d_concat.topRows(hd);
  Matrix<Scalar> dc = Matrix<Scalar>::Zero(hd, batch.size());
  Matrix<Scalar> dz(4 * hd, batch.size());
  auto d_w = grads.input_weights();
  auto d_r = grads.recurrent_weights();
  auto d_b = grads.gate_bias();
  for (Eigen::Index t = batch.length() - 1; t >= 0; --t) {
    const auto st = static_cast<std::size_t>(t);
    const Matrix<Scalar>& g = fc.gates[st];
    const auto f = g.middleRows(0, hd).array();
    const auto in = g.middleRows(hd, hd).array();
    const auto o = g.middleRows(2 * hd, hd).array();
    const auto cand = g.middleRows(3 * hd, hd).array();
    const auto tanh_c = fc.cells[st + 1].array().tanh();

    dc.array() += dh.array() * o * (Scalar(1) - tanh_c.square());
    dz.middleRows(0, hd).array() = dc.array() * fc.cells[st].array() * f * (Scalar(1) - f);
    dz.middleRows(hd, hd).array() = dc.array() * cand * in * (Scalar(1) - in);
    dz.middleRows(2 * hd, hd).array() = dh.array() * tanh_c * o * (Scalar(1) - o);
    dz.middleRows(3 * hd, hd).array() = dc.array() * in * (Scalar(1) - cand.square());

    d_w.noalias() += dz * batch.inputs[st].transpose();
    d_r.noalias() += dz * fc.hidden[st].transpose();
    d_b += dz.rowwise().sum();

    dh.noalias() = params.recurrent_weights().transpose() * dz;
    dc.array() *= f;
  }
}

}  // namespace fedvlf::nn
