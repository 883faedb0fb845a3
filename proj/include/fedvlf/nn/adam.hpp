#pragma once

#include <cmath>
#include <cstdint>

#include "fedvlf/nn/params.hpp"

namespace fedvlf::nn {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class Scalar>
struct AdamState {
  ModelParams<Scalar> m;
  ModelParams<Scalar> v;
  std::int64_t step = 0;

  explicit AdamState(const ModelDims& dims) : m(dims), v(dims) {}
};

// Bias-corrected Adam, in place.
template <class Scalar>
void adam_step(ModelParams<Scalar>& params, const Gradients<Scalar>& grads, AdamState<Scalar>& state, double lr,
               const AdamHyper& hp = {}) {
  check_same_shape(params, grads, "adam_step");
  check_same_shape(params, state.m, "adam_step");
  ++state.step;
  const auto t = static_cast<double>(state.step);
  const auto b1 = static_cast<Scalar>(hp.beta1);
  const auto b2 = static_cast<Scalar>(hp.beta2);
  const auto corr1 = static_cast<Scalar>(1.0 / (1.0 - std::pow(hp.beta1, t)));
  const auto corr2 = static_cast<Scalar>(1.0 / (1.0 - std::pow(hp.beta2, t)));
  const auto step_size = static_cast<Scalar>(lr);
  const auto eps = static_cast<Scalar>(hp.eps);

  auto g = grads.flat().array();
  auto m = state.m.flat().array();
  auto v = state.v.flat().array();
  m = b1 * m + (Scalar(1) - b1) * g;
  v = b2 * v + (Scalar(1) - b2) * g.square();
  params.flat().array() -= step_size * (m * corr1) / ((v * corr2).sqrt() + eps);
}

}  // namespace fedvlf::nn
