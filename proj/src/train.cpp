#include "xattn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "xattn/rng.hpp"

namespace xattn {

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"weight_decay", c.weight_decay},
                     {"grad_clip", c.grad_clip},
                     {"batch_size", c.batch_size},
                     {"steps", c.steps},
                     {"eval_every", c.eval_every},
                     {"checkpoint_every", c.checkpoint_every},
                     {"seed", c.seed},
                     {"token_budget", c.token_budget},
                     {"model", c.model}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("lr").get_to(c.lr);
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("grad_clip").get_to(c.grad_clip);
  j.at("batch_size").get_to(c.batch_size);
  j.at("steps").get_to(c.steps);
  j.at("eval_every").get_to(c.eval_every);
  j.at("checkpoint_every").get_to(c.checkpoint_every);
  j.at("seed").get_to(c.seed);
  j.at("token_budget").get_to(c.token_budget);
  j.at("model").get_to(c.model);
}

namespace {

struct PackedBatch {
  BatchInput input;
  std::vector<int> targets;
  std::vector<uint8_t> target_mask;
  int64_t supervised = 0;
};

PackedBatch pack_batch(std::span<const TrainRow* const> rows, int pad_token) {
  PackedBatch batch;
  batch.input.batch = static_cast<int>(rows.size());
  int t_max = 0;
  for (const auto* row : rows) t_max = std::max(t_max, static_cast<int>(row->tokens.size()));
  batch.input.seq_len = t_max;
  batch.input.tokens.assign(static_cast<size_t>(rows.size()) * t_max, pad_token);
  batch.targets.assign(batch.input.tokens.size(), pad_token);
  batch.target_mask.assign(batch.input.tokens.size(), 0);
  for (size_t b = 0; b < rows.size(); ++b) {
    const auto& toks = rows[b]->tokens;
    const auto& mask = rows[b]->loss_mask;
    batch.input.valid_lens.push_back(static_cast<int>(toks.size()));
    for (size_t t = 0; t < toks.size(); ++t) {
      batch.input.tokens[b * t_max + t] = toks[t];
      if (t + 1 < toks.size() && mask[t + 1]) {
        batch.targets[b * t_max + t] = toks[t + 1];
        batch.target_mask[b * t_max + t] = 1;
        ++batch.supervised;
      }
    }
  }
  return batch;
}

double forward_loss(Tape& tape, const ModelParams& params, const PackedBatch& batch) {
  auto nodes = forward_batch(tape, params, batch.input, nullptr);
  auto loss = tape.cross_entropy(nodes.logits, batch.targets, batch.target_mask);
  return static_cast<double>(tape.value(loss)[0]);
}

}  // namespace

double batch_loss(const ModelParams& params, std::span<const TrainRow> rows,
                  int pad_token) {
  std::vector<const TrainRow*> ptrs;
  ptrs.reserve(rows.size());
  for (const auto& row : rows) ptrs.push_back(&row);
  auto batch = pack_batch(ptrs, pad_token);
  Tape tape(false);
  return forward_loss(tape, params, batch);
}

TrainResult train(const TrainConfig& config, const MixedCorpus& corpus,
                  const Vocab& vocab, const ProgressFn& progress,
                  const std::string& checkpoint_path) {
  if (corpus.rows.empty()) throw std::invalid_argument("train: empty corpus");
  if (config.steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (config.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (vocab.size() != config.model.vocab_size) {
    throw std::invalid_argument("train: corpus vocabulary size " + std::to_string(vocab.size()) +
                                " does not match model vocab_size " +
                                std::to_string(config.model.vocab_size));
  }
  if (corpus.max_row_length() > config.model.max_seq_len) {
    throw std::invalid_argument("train: corpus row of length " +
                                std::to_string(corpus.max_row_length()) +
                                " exceeds model max_seq_len " +
                                std::to_string(config.model.max_seq_len));
  }
  for (const auto& row : corpus.rows) {
    if (row.tokens.size() != row.loss_mask.size()) {
      throw std::invalid_argument("train: row " + row.id + " has a malformed loss mask");
    }
  }

  TrainResult result;
  result.params = init_params(config.model);
  AdamConfig adam_cfg;
  adam_cfg.lr = config.lr;
  adam_cfg.beta1 = config.beta1;
  adam_cfg.beta2 = config.beta2;
  adam_cfg.weight_decay = config.weight_decay;

  auto params_view = param_view(result.params);

  // fixed held-out probe batch: leading rows in corpus order
  const size_t eval_n = std::min<size_t>(config.batch_size, corpus.rows.size());
  std::span<const TrainRow> eval_rows(corpus.rows.data(), eval_n);

  auto rng = make_rng(config.seed, "batch-order");
  std::vector<size_t> order(corpus.rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  size_t cursor = 0;

  const int pad = vocab.pad();
  for (int step = 1; step <= config.steps; ++step) {
    std::vector<const TrainRow*> rows;
    rows.reserve(config.batch_size);
    for (int i = 0; i < config.batch_size; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      rows.push_back(&corpus.rows[order[cursor++]]);
    }
    auto batch = pack_batch(rows, pad);

    Tape tape(true);
    auto nodes = forward_batch(tape, result.params, batch.input, nullptr);
    auto loss_id = tape.cross_entropy(nodes.logits, batch.targets, batch.target_mask);
    const double loss = static_cast<double>(tape.value(loss_id)[0]);
    if (!std::isfinite(loss)) {
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
    }
    tape.backward(loss_id);

    std::vector<std::vector<float>> grads;
    grads.reserve(nodes.leaves.size());
    for (const auto& [name, id] : nodes.leaves) {
      auto g = tape.grad(id);
      if (g.empty()) {
        grads.emplace_back(tape.value(id).size(), 0.0f);
      } else {
        grads.emplace_back(g.begin(), g.end());
      }
    }
    if (config.grad_clip > 0.0) clip_global_norm(grads, config.grad_clip);
    adam_step(params_view, grads, result.opt_state, adam_cfg);

    result.supervised_tokens += batch.supervised;
    result.steps_run = step;

    LossPoint point;
    point.step = step;
    point.train_loss = loss;
    const bool eval_now = config.eval_every > 0 &&
                          (step % config.eval_every == 0 || step == config.steps);
    if (eval_now) {
      point.eval_loss = batch_loss(result.params, eval_rows, pad);
      point.has_eval = true;
    }
    result.curve.push_back(point);
    if (progress) progress(step, loss);

    if (!checkpoint_path.empty() && config.checkpoint_every > 0 &&
        step % config.checkpoint_every == 0) {
      save_checkpoint(result.params, step, &result.opt_state, checkpoint_path);
    }
    if (config.token_budget > 0 && result.supervised_tokens >= config.token_budget) break;
  }

  if (!checkpoint_path.empty()) {
    save_checkpoint(result.params, result.steps_run, &result.opt_state, checkpoint_path);
  }
  return result;
}

std::string loss_curve_csv(std::span<const LossPoint> curve) {
  std::ostringstream os;
  os << "step,train_loss,eval_loss\n";
  for (const auto& p : curve) {
    os << p.step << "," << p.train_loss << ",";
    if (p.has_eval) os << p.eval_loss;
    os << "\n";
  }
  return os.str();
}

}  // namespace xattn
