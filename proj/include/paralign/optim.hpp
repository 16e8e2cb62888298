#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "paralign/tensor.hpp"

namespace paralign {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

template <class Params>
AdamState adam_init(const Params& p) {
  AdamState s;
  for (const Tensor* t : p.tensors()) {
    s.m.emplace_back(t->size(), 0.0);
    s.v.emplace_back(t->size(), 0.0);
  }
  return s;
}

// One bias-corrected Adam update, in place.
template <class Params>
void adam_step(Params& params, const Params& grads, AdamState& state, const AdamConfig& cfg) {
  check_same_shape(params, grads);
  auto pt = params.tensors();
  auto gt = grads.tensors();
  if (state.m.empty()) state = adam_init(params);
  require(state.m.size() == pt.size(), ErrorKind::ShapeMismatch, "optimizer state does not match parameters");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < pt.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    require(m.size() == pt[i]->size(), ErrorKind::ShapeMismatch, "optimizer state shape mismatch");
    double* x = pt[i]->data.data();
    const double* g = gt[i]->data.data();
    for (std::size_t k = 0; k < m.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      x[k] -= cfg.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
    }
  }
}

}  // namespace paralign
