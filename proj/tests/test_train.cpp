#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "xattn/checkpoint.hpp"
#include "xattn/train.hpp"
#include "xattn/worldgen.hpp"

using namespace xattn;

namespace {

struct TrainFixture {
  FactWorld world;
  MixedCorpus corpus;
  TrainConfig config;

  TrainFixture() {
    WorldConfig wc;
    wc.seed = 61;
    wc.n_entities = 12;
    wc.name_tokens = 4;
    wc.n_values = 4;
    wc.eval_fraction = 0.25;
    world = build_world(wc);
    auto a = gen_instruction_corpus(world, Domain::kA, 24, 0.1, 3);
    auto b = gen_instruction_corpus(world, Domain::kB, 24, 0.1, 4);
    corpus = mix_dataset_level(a, b, world.vocab, 5);
    config.model.n_layers = 2;
    config.model.n_heads = 2;
    config.model.d_model = 32;
    config.model.d_head = 16;
    config.model.d_ff = 64;
    config.model.max_seq_len = 64;
    config.model.vocab_size = world.vocab.size();
    config.model.seed = 71;
    config.batch_size = 8;
    config.steps = 5;
    config.eval_every = 5;
    config.seed = 13;
  }
};

}  // namespace

TEST_SUITE("train") {

TEST_CASE("checkpoint round trips bit-exactly, with and without optimizer state") {
  TrainFixture fx;
  auto result = train(fx.config, fx.corpus, fx.world.vocab);
  auto bytes = checkpoint_to_bytes(result.params, result.steps_run, &result.opt_state);
  auto back = checkpoint_from_bytes(bytes);
  CHECK(back.step == result.steps_run);
  REQUIRE(back.opt_state.has_value());
  auto bytes2 = checkpoint_to_bytes(back.params, back.step, &*back.opt_state);
  CHECK(bytes == bytes2);

  auto lean = checkpoint_to_bytes(result.params, 3, nullptr);
  auto lean_back = checkpoint_from_bytes(lean);
  CHECK(!lean_back.opt_state.has_value());
  CHECK(checkpoint_to_bytes(lean_back.params, 3, nullptr) == lean);
}

TEST_CASE("checkpoint loader rejects bad magic, truncation, config mismatch") {
  TrainFixture fx;
  auto params = init_params(fx.config.model);
  auto bytes = checkpoint_to_bytes(params, 0, nullptr);

  auto corrupt = bytes;
  corrupt[0] = 'Y';
  try {
    checkpoint_from_bytes(corrupt);
    FAIL("expected exception");
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    CHECK(msg.find("XATN") != std::string::npos);
    CHECK(msg.find("YATN") != std::string::npos);
  }

  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  CHECK_THROWS_AS(checkpoint_from_bytes(truncated), std::runtime_error);

  ModelConfig other = fx.config.model;
  other.d_ff = 128;
  CHECK_THROWS_AS(check_config(params, other), std::runtime_error);
  check_config(params, fx.config.model);  // no throw
}

TEST_CASE("lr = 0 leaves parameters unchanged and the loss flat") {
  TrainFixture fx;
  fx.config.lr = 0.0;
  fx.config.steps = 4;
  auto result = train(fx.config, fx.corpus, fx.world.vocab);
  auto fresh = init_params(fx.config.model);
  for (size_t i = 0; i < fresh.named.size(); ++i) {
    CHECK(result.params.named[i].second.data == fresh.named[i].second.data);
  }
}

TEST_CASE("identical config and seed give bit-identical checkpoints and curves") {
  TrainFixture fx;
  auto r1 = train(fx.config, fx.corpus, fx.world.vocab);
  auto r2 = train(fx.config, fx.corpus, fx.world.vocab);
  CHECK(checkpoint_to_bytes(r1.params, r1.steps_run, &r1.opt_state) ==
        checkpoint_to_bytes(r2.params, r2.steps_run, &r2.opt_state));
  REQUIRE(r1.curve.size() == r2.curve.size());
  for (size_t i = 0; i < r1.curve.size(); ++i) {
    CHECK(r1.curve[i].train_loss == r2.curve[i].train_loss);
  }
}

TEST_CASE("memorization: a one-item corpus reaches loss < 0.01 within 200 steps") {
  TrainFixture fx;
  MixedCorpus one;
  one.mode = fx.corpus.mode;
  one.rows.push_back(fx.corpus.rows[0]);
  fx.config.steps = 200;
  fx.config.batch_size = 1;
  fx.config.lr = 3e-3;
  fx.config.eval_every = 0;
  auto result = train(fx.config, one, fx.world.vocab);
  CHECK(result.curve.back().train_loss < 0.01);
}

TEST_CASE("vocab mismatch and oversized rows are rejected") {
  TrainFixture fx;
  auto bad = fx.config;
  bad.model.vocab_size = fx.world.vocab.size() + 1;
  CHECK_THROWS_AS(train(bad, fx.corpus, fx.world.vocab), std::invalid_argument);

  auto tight = fx.config;
  tight.model.max_seq_len = 8;
  CHECK_THROWS_AS(train(tight, fx.corpus, fx.world.vocab), std::invalid_argument);
}

TEST_CASE("diverging training aborts with the step number") {
  TrainFixture fx;
  fx.config.lr = 1e18;
  fx.config.grad_clip = 0.0;  // disabled
  fx.config.steps = 50;
  try {
    train(fx.config, fx.corpus, fx.world.vocab);
    FAIL("expected divergence");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("token budget stops training early") {
  TrainFixture fx;
  fx.config.steps = 50;
  fx.config.token_budget = 40;
  auto result = train(fx.config, fx.corpus, fx.world.vocab);
  CHECK(result.steps_run < 50);
  CHECK(result.supervised_tokens >= 40);
  // overshoot bounded by one batch
  CHECK(result.supervised_tokens <= 40 + fx.config.batch_size * 8);
}

TEST_CASE("held-out batch loss is a pure function of checkpoint and batch") {
  TrainFixture fx;
  auto result = train(fx.config, fx.corpus, fx.world.vocab);
  std::span<const TrainRow> rows(fx.corpus.rows.data(), 4);
  const double l1 = batch_loss(result.params, rows, fx.world.vocab.pad());
  const double l2 = batch_loss(result.params, rows, fx.world.vocab.pad());
  CHECK(l1 == l2);
}

TEST_CASE("checkpoint file save/load round trip") {
  TrainFixture fx;
  fx.config.steps = 1;
  const std::string path = "test_ck.xatn";
  auto result = train(fx.config, fx.corpus, fx.world.vocab, nullptr, path);
  auto loaded = load_checkpoint(path);
  CHECK(loaded.step == 1);
  CHECK(checkpoint_to_bytes(loaded.params, loaded.step, &*loaded.opt_state) ==
        checkpoint_to_bytes(result.params, result.steps_run, &result.opt_state));
  std::remove(path.c_str());
}

TEST_CASE("loss curve CSV has one row per step") {
  TrainFixture fx;
  fx.config.steps = 3;
  fx.config.eval_every = 2;
  auto result = train(fx.config, fx.corpus, fx.world.vocab);
  auto csv = loss_curve_csv(result.curve);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 3 rows
  CHECK(csv.rfind("step,train_loss,eval_loss", 0) == 0);
}

}  // TEST_SUITE
