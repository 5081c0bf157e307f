#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xattn/optimizer.hpp"
#include "xattn/tape.hpp"
#include "xattn/tensor.hpp"

#include <json.hpp>

namespace xattn {

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 128;
  int d_head = 32;
  int d_ff = 512;
  int max_seq_len = 256;
  int vocab_size = 0;
  uint64_t seed = 0;

  void validate() const;  // throws on inconsistent dimensions
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Named parameter tensors in a fixed canonical order.
template <typename S>
struct ParamsT {
  ModelConfig config;
  std::vector<std::pair<std::string, TensorT<S>>> named;

  TensorT<S>& at(std::string_view name);
  const TensorT<S>& at(std::string_view name) const;
  int64_t total_elements() const;
};

using ModelParams = ParamsT<float>;

// Canonical (name, shape) parameter table for a config.
std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& config);

// Deterministic init: weights ~ N(0, 0.02), layernorm gain 1 / bias 0,
// MLP biases 0.
ModelParams init_params(const ModelConfig& config);

// f64 shadow copy for gradient-check reference mode.
ParamsT<double> reference_params(const ModelParams& params);

std::vector<NamedParam> param_view(ModelParams& params);

struct BatchInput {
  int batch = 0;
  int seq_len = 0;
  std::vector<int> tokens;      // batch * seq_len, row-major, PAD-filled
  std::vector<int> valid_lens;  // per row
};

template <typename S>
struct ForwardNodes {
  typename TapeT<S>::Id logits = -1;  // (batch*seq_len, vocab)
  std::vector<std::pair<std::string, typename TapeT<S>::Id>> leaves;
};

// Pre-norm transformer forward over a padded batch. Hooks fire once per
// (layer, head, step) and require batch == 1.
template <typename S>
ForwardNodes<S> forward_batch(TapeT<S>& tape, const ParamsT<S>& params,
                              const BatchInput& input, const HookSet* hooks);

// Single-sequence convenience wrapper; returns (len, vocab) logits.
Tensor forward(const ModelParams& params, std::span<const int> tokens,
               const HookSet* hooks = nullptr);

// Greedy decoding; deterministic, stops at `eos_id` or after `max_new`
// tokens. The returned tokens include the EOS when one is produced.
std::vector<int> generate_greedy(const ModelParams& params,
                                 std::span<const int> prompt,
                                 const HookSet* hooks, int max_new, int eos_id);

int argmax_row(std::span<const float> row);

}  // namespace xattn
