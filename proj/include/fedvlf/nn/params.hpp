#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fedvlf/error.hpp"
#include "fedvlf/rng.hpp"

namespace fedvlf::nn {

// Layer widths. Defaults are the production model: 6 inputs, one LSTM layer
// of 350 units, a 6-wide vessel-type embedding, a 150-unit dense layer and a
// 2-unit output.
struct ModelDims {
  int input = 6;
  int hidden = 350;
  int embed = 6;
  int dense = 150;
  int output = 2;
  int vocab = 10;

  int concat() const { return hidden + embed; }

  std::size_t parameter_count() const {
    const auto i = static_cast<std::size_t>(input), h = static_cast<std::size_t>(hidden);
    const auto e = static_cast<std::size_t>(embed), d = static_cast<std::size_t>(dense);
    const auto o = static_cast<std::size_t>(output), v = static_cast<std::size_t>(vocab);
    return 4 * (h * i + h * h + h) + v * e + (d * (h + e) + d) + (o * d + o);
  }

  void validate() const {
    if (input <= 0 || hidden <= 0 || embed <= 0 || dense <= 0 || output <= 0 || vocab <= 0) {
      throw ConfigError("model dimensions must all be positive");
    }
  }

  bool operator==(const ModelDims&) const = default;
};

// Storage order of the parameter blocks in the flat buffer (and on disk).
// Gate blocks are stacked forget, input, output, candidate.
enum class Block : int { InputWeights = 0, RecurrentWeights, GateBias, Embedding, DenseWeights, DenseBias, OutputWeights, OutputBias };

inline constexpr std::array<const char*, 8> kBlockNames = {"lstm.W", "lstm.R", "lstm.b", "embedding",
                                                           "dense.W", "dense.b", "output.W", "output.b"};

struct BlockLayout {
  Block block;
  std::size_t offset;
  int rows;
  int cols;

  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
  const char* name() const { return kBlockNames[static_cast<int>(block)]; }
};

inline std::array<BlockLayout, 8> block_layout(const ModelDims& d) {
  std::array<std::pair<int, int>, 8> shapes = {{{4 * d.hidden, d.input},
                                                {4 * d.hidden, d.hidden},
                                                {4 * d.hidden, 1},
                                                {d.embed, d.vocab},
                                                {d.dense, d.concat()},
                                                {d.dense, 1},
                                                {d.output, d.dense},
                                                {d.output, 1}}};
  std::array<BlockLayout, 8> out{};
  std::size_t offset = 0;
  for (int k = 0; k < 8; ++k) {
    out[k] = {static_cast<Block>(k), offset, shapes[k].first, shapes[k].second};
    offset += out[k].size();
  }
  return out;
}

// Every learnable parameter of the forecaster in one contiguous buffer, with
// matrix views per block. Embedding columns are vessel types.
template <class Scalar>
class ModelParams {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using MatMap = Eigen::Map<Matrix>;
  using ConstMatMap = Eigen::Map<const Matrix>;

  ModelParams() : ModelParams(ModelDims{}) {}
  explicit ModelParams(const ModelDims& dims)
      : dims_(dims), layout_(block_layout(dims)), data_(Vector::Zero(static_cast<Eigen::Index>(dims.parameter_count()))) {
    dims.validate();
  }

  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per block. The LSTM blocks
  // use the hidden width as fan-in; the embedding draws from [-1, 1].
  static ModelParams random(const ModelDims& dims, Rng& rng) {
    ModelParams p(dims);
    auto fill = [&](Block b, double bound) {
      const auto& l = p.layout(b);
      for (std::size_t k = 0; k < l.size(); ++k) {
        p.data_[static_cast<Eigen::Index>(l.offset + k)] = static_cast<Scalar>(rng.uniform(-bound, bound));
      }
    };
    const double lstm_bound = 1.0 / std::sqrt(static_cast<double>(dims.hidden));
    fill(Block::InputWeights, lstm_bound);
    fill(Block::RecurrentWeights, lstm_bound);
    fill(Block::GateBias, lstm_bound);
    fill(Block::Embedding, 1.0);
    fill(Block::DenseWeights, 1.0 / std::sqrt(static_cast<double>(dims.concat())));
    fill(Block::DenseBias, 1.0 / std::sqrt(static_cast<double>(dims.concat())));
    fill(Block::OutputWeights, 1.0 / std::sqrt(static_cast<double>(dims.dense)));
    fill(Block::OutputBias, 1.0 / std::sqrt(static_cast<double>(dims.dense)));
    return p;
  }

  const ModelDims& dims() const { return dims_; }
  const BlockLayout& layout(Block b) const { return layout_[static_cast<int>(b)]; }
  const std::array<BlockLayout, 8>& layouts() const { return layout_; }
  std::size_t size() const { return static_cast<std::size_t>(data_.size()); }

  Vector& flat() { return data_; }
  const Vector& flat() const { return data_; }

  MatMap block(Block b) {
    const auto& l = layout(b);
    return MatMap(data_.data() + l.offset, l.rows, l.cols);
  }
  ConstMatMap block(Block b) const {
    const auto& l = layout(b);
    return ConstMatMap(data_.data() + l.offset, l.rows, l.cols);
  }

  MatMap input_weights() { return block(Block::InputWeights); }
  MatMap recurrent_weights() { return block(Block::RecurrentWeights); }
  MatMap gate_bias() { return block(Block::GateBias); }
  MatMap embedding() { return block(Block::Embedding); }
  MatMap dense_weights() { return block(Block::DenseWeights); }
  MatMap dense_bias() { return block(Block::DenseBias); }
  MatMap output_weights() { return block(Block::OutputWeights); }
  MatMap output_bias() { return block(Block::OutputBias); }
  ConstMatMap input_weights() const { return block(Block::InputWeights); }
  ConstMatMap recurrent_weights() const { return block(Block::RecurrentWeights); }
  ConstMatMap gate_bias() const { return block(Block::GateBias); }
  ConstMatMap embedding() const { return block(Block::Embedding); }
  ConstMatMap dense_weights() const { return block(Block::DenseWeights); }
  ConstMatMap dense_bias() const { return block(Block::DenseBias); }
  ConstMatMap output_weights() const { return block(Block::OutputWeights); }
  ConstMatMap output_bias() const { return block(Block::OutputBias); }

  template <class Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> out(dims_);
    out.flat() = data_.template cast<Other>();
    return out;
  }

  bool all_finite() const { return data_.allFinite(); }

  void set_zero() { data_.setZero(); }

  bool operator==(const ModelParams& o) const { return dims_ == o.dims_ && data_ == o.data_; }

 private:
  ModelDims dims_;
  std::array<BlockLayout, 8> layout_;
  Vector data_;
};

template <class Scalar>
using Gradients = ModelParams<Scalar>;

template <class Scalar>
void check_same_shape(const ModelParams<Scalar>& a, const ModelParams<Scalar>& b, const char* what) {
  if (!(a.dims() == b.dims())) throw DataError(std::string(what) + ": parameter shapes do not match");
}

// L2 distance between two parameter sets, accumulated in double.
template <class Scalar>
double l2_distance(const ModelParams<Scalar>& a, const ModelParams<Scalar>& b) {
  check_same_shape(a, b, "l2_distance");
  return (a.flat().template cast<double>() - b.flat().template cast<double>()).norm();
}

}  // namespace fedvlf::nn
