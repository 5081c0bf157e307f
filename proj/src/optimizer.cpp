#include "xattn/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace xattn {

void adam_step(std::span<NamedParam> params,
               std::span<const std::vector<float>> grads, AdamState& state,
               const AdamConfig& config) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: params and grads are not aligned");
  }
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t p = 0; p < params.size(); ++p) {
      state.m[p].assign(params[p].tensor->data.size(), 0.0f);
      state.v[p].assign(params[p].tensor->data.size(), 0.0f);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: state does not match parameter count");
  }
  for (size_t p = 0; p < params.size(); ++p) {
    if (grads[p].size() != params[p].tensor->data.size()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch for " + params[p].name);
    }
    for (float g : grads[p]) {
      if (!std::isfinite(g)) {
        throw std::runtime_error("adam_step: non-finite gradient in parameter " +
                                 params[p].name);
      }
    }
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (size_t p = 0; p < params.size(); ++p) {
    auto& w = params[p].tensor->data;
    auto& m = state.m[p];
    auto& v = state.v[p];
    const auto& g = grads[p];
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = static_cast<float>(config.beta1 * m[i] + (1.0 - config.beta1) * g[i]);
      v[i] = static_cast<float>(config.beta2 * v[i] +
                                (1.0 - config.beta2) * static_cast<double>(g[i]) * g[i]);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      double x = w[i];
      x -= config.lr * config.weight_decay * x;
      x -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
      w[i] = static_cast<float>(x);
    }
  }
}

double clip_global_norm(std::span<std::vector<float>> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (float x : g) sq += static_cast<double>(x) * x;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (auto& g : grads) {
      for (float& x : g) x = static_cast<float>(x * scale);
    }
  }
  return norm;
}

}  // namespace xattn
