#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "voxreg/tape.hpp"
#include "voxreg/tensor.hpp"

namespace voxreg {

/// Named view into a model parameter; the pointer stays owned by the model.
struct NamedParam {
  std::string name;
  Tensor* tensor;
};

/// Adam moments and hyperparameters for one parameter set. Moment buffers are
/// allocated lazily on the first step and keyed by parameter order.
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step = 0;
  std::vector<ArrayXd> m, v;
};

/// One in-place Adam update on a single parameter buffer (bias-corrected).
inline void adam_update(ArrayXd& param, const ArrayXd& grad, ArrayXd& m,
                        ArrayXd& v, long long step, const AdamState& hp) {
  m = hp.beta1 * m + (1.0 - hp.beta1) * grad;
  v = hp.beta2 * v + (1.0 - hp.beta2) * grad.square();
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
  param -= hp.lr * (m / c1) / ((v / c2).sqrt() + hp.eps);
}

/// Applies one Adam step to every parameter. Every parameter must have a
/// gradient in `grads` (watched on the consumed tape).
inline void adam_step(const std::vector<NamedParam>& params,
                      const GradientMap& grads, AdamState& state) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i] = ArrayXd::Zero(params[i].tensor->size());
      state.v[i] = ArrayXd::Zero(params[i].tensor->size());
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: state does not match parameters");
  }
  state.step += 1;
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].tensor;
    if (!grads.contains(p)) {
      throw std::runtime_error("adam_step: missing gradient for parameter " +
                               params[i].name);
    }
    const Tensor& g = grads.at(p);
    if (g.size() != p.size()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch for " +
                                  params[i].name);
    }
    adam_update(p.array_mut(), g.array(), state.m[i], state.v[i], state.step,
                state);
  }
}

}  // namespace voxreg
