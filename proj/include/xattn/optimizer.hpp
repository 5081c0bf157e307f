#pragma once

#include <span>
#include <string>
#include <vector>

#include "xattn/tensor.hpp"

namespace xattn {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  std::vector<std::vector<float>> m;  // one entry per parameter, aligned
  std::vector<std::vector<float>> v;
  int64_t step = 0;  // number of completed steps
};

struct NamedParam {
  std::string name;
  Tensor* tensor = nullptr;
};

// Bias-corrected Adam with decoupled weight decay. `grads` is aligned with
// `params`; state is initialized on first use. Throws if any gradient is
// non-finite, naming the parameter.
void adam_step(std::span<NamedParam> params,
               std::span<const std::vector<float>> grads, AdamState& state,
               const AdamConfig& config);

// Scales all gradients so the global L2 norm is at most `max_norm`.
// Returns the pre-clip norm.
double clip_global_norm(std::span<std::vector<float>> grads, double max_norm);

}  // namespace xattn
