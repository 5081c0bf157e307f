#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xattn/checkpoint.hpp"
#include "xattn/model.hpp"
#include "xattn/worldgen.hpp"

namespace xattn {

struct TrainConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double grad_clip = 1.0;
  int batch_size = 32;
  int steps = 3000;
  int eval_every = 100;
  int checkpoint_every = 0;  // 0 = final checkpoint only
  uint64_t seed = 0;
  // when > 0, training stops after the step where the cumulative supervised
  // token count reaches the budget (equal-budget mixing comparisons)
  int64_t token_budget = 0;
  ModelConfig model;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossPoint {
  int step = 0;
  double train_loss = 0.0;
  double eval_loss = 0.0;
  bool has_eval = false;
};

struct TrainResult {
  ModelParams params;
  AdamState opt_state;
  int steps_run = 0;
  int64_t supervised_tokens = 0;
  std::vector<LossPoint> curve;
};

using ProgressFn = std::function<void(int step, double loss)>;

// Deterministic training: seeded epoch shuffles, fixed batch geometry,
// teacher-forced next-token loss on masked response positions. Aborts with
// the step number if the loss goes non-finite.
TrainResult train(const TrainConfig& config, const MixedCorpus& corpus,
                  const Vocab& vocab, const ProgressFn& progress = nullptr,
                  const std::string& checkpoint_path = "");

// Mean loss of a row batch under fixed geometry; pure in (params, rows).
double batch_loss(const ModelParams& params, std::span<const TrainRow> rows,
                  int pad_token);

std::string loss_curve_csv(std::span<const LossPoint> curve);

}  // namespace xattn
