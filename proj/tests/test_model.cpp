#include <doctest.h>

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "xattn/model.hpp"
#include "xattn/vocab.hpp"

using namespace xattn;

namespace {

ModelConfig tiny_config(uint64_t seed = 9) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_head = 8;
  c.d_ff = 32;
  c.max_seq_len = 32;
  c.vocab_size = 31;
  c.seed = seed;
  return c;
}

std::vector<int> some_tokens(int n, int vocab) {
  std::vector<int> t(n);
  for (int i = 0; i < n; ++i) t[i] = (i * 7 + 3) % vocab;
  return t;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("vocab partitions are disjoint and total") {
  Vocab v(4, 5);
  CHECK(v.size() == 13 + 4 + 5 + 5 + 5);
  int conflict_count = 0;
  for (int id = 0; id < v.size(); ++id) {
    (void)v.class_of(id);  // every token classified
    CHECK(v.id(v.symbol(id)) == id);
    if (v.symbol(id) == "<conflict>") ++conflict_count;
  }
  CHECK(conflict_count == 1);
  CHECK(v.class_of(v.conflict()) == TokenClass::kControl);
  CHECK(v.class_of(v.q_name(0)) == TokenClass::kQuestionName);
  CHECK(v.class_of(v.a_name(3)) == TokenClass::kDomainA);
  CHECK(v.class_of(v.a_copula()) == TokenClass::kDomainA);
  CHECK(v.class_of(v.b_name(0)) == TokenClass::kDomainB);
  CHECK(v.class_of(v.value(4)) == TokenClass::kValue);
  CHECK(v.value_index(v.value(2)) == 2);
  CHECK(v.value_index(v.bos()) == -1);
  CHECK(v.name_index(v.a_name(3)) == 3);
  CHECK(v.name_index(v.b_name(3)) == 3);
  CHECK(v.name_index(v.a_copula()) == -1);
}

TEST_CASE("init is deterministic per seed") {
  auto c = tiny_config(42);
  auto p1 = init_params(c);
  auto p2 = init_params(c);
  REQUIRE(p1.named.size() == p2.named.size());
  for (size_t i = 0; i < p1.named.size(); ++i) {
    CHECK(p1.named[i].first == p2.named[i].first);
    CHECK(std::memcmp(p1.named[i].second.data.data(), p2.named[i].second.data.data(),
                      p1.named[i].second.data.size() * sizeof(float)) == 0);
  }
  auto p3 = init_params(tiny_config(43));
  bool any_diff = false;
  for (size_t i = 0; i < p1.named.size() && !any_diff; ++i) {
    any_diff = p1.named[i].second.data != p3.named[i].second.data;
  }
  CHECK(any_diff);
}

TEST_CASE("inconsistent head geometry is rejected") {
  auto c = tiny_config();
  c.d_head = 7;  // 2*7 != 16
  CHECK_THROWS_AS(init_params(c), std::invalid_argument);
}

TEST_CASE("causality: appending a token leaves earlier logits unchanged") {
  auto params = init_params(tiny_config(7));
  auto tokens = some_tokens(10, 31);
  Tensor a = forward(params, std::span<const int>(tokens.data(), 9));
  Tensor b = forward(params, tokens);
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
}

TEST_CASE("forward is a pure function without hooks") {
  auto params = init_params(tiny_config(7));
  auto tokens = some_tokens(12, 31);
  Tensor a = forward(params, tokens);
  Tensor b = forward(params, tokens);
  CHECK(a.data == b.data);
}

TEST_CASE("identity rewriter reproduces the bare run exactly") {
  auto params = init_params(tiny_config(3));
  auto tokens = some_tokens(11, 31);
  Tensor bare = forward(params, tokens);
  HookSet hooks;
  hooks.rewriter = [](int, int, int, std::span<double>) { return false; };
  Tensor hooked = forward(params, tokens, &hooks);
  CHECK(std::memcmp(bare.data.data(), hooked.data.data(), bare.data.size() * sizeof(float)) == 0);
}

TEST_CASE("hooks fire once per (layer, head, step)") {
  auto c = tiny_config(5);
  auto params = init_params(c);
  auto tokens = some_tokens(9, 31);
  std::vector<int> counts(static_cast<size_t>(c.n_layers) * c.n_heads * tokens.size(), 0);
  HookSet hooks;
  hooks.observer = [&](const AttnSite& s) {
    counts[(static_cast<size_t>(s.layer) * c.n_heads + s.head) * tokens.size() + s.step] += 1;
  };
  forward(params, tokens, &hooks);
  for (int n : counts) CHECK(n == 1);
}

TEST_CASE("rewriter forcing one-hot attention yields W_O v_1") {
  auto c = tiny_config(8);
  auto params = init_params(c);
  auto tokens = some_tokens(6, 31);
  HookSet hooks;
  hooks.rewriter = [](int, int, int, std::span<double> row) {
    for (auto& x : row) x = 0.0;
    row[0] = 1.0;
    return true;
  };
  double worst = 0.0;
  hooks.observer = [&](const AttnSite& s) {
    for (int cdim = 0; cdim < s.d_model; ++cdim) {
      double expect = 0.0;
      for (int r = 0; r < s.d_head; ++r) {
        expect += static_cast<double>(s.values[r]) *  // v_0
                  static_cast<double>(s.wo_block[static_cast<size_t>(r) * s.d_model + cdim]);
      }
      worst = std::max(worst, std::abs(expect - s.head_out[cdim]));
    }
  };
  forward(params, tokens, &hooks);
  CHECK(worst < 1e-6);
}

TEST_CASE("decomposition consistency: observer data reconstructs head output") {
  auto params = init_params(tiny_config(21));
  auto tokens = some_tokens(13, 31);
  double worst = 0.0;
  HookSet hooks;
  hooks.observer = [&](const AttnSite& s) {
    for (int cdim = 0; cdim < s.d_model; ++cdim) {
      double acc = 0.0;
      for (int j = 0; j <= s.step; ++j) {
        const float* vj = s.values + static_cast<size_t>(j) * s.value_stride;
        double wv = 0.0;
        for (int r = 0; r < s.d_head; ++r) {
          wv += static_cast<double>(vj[r]) *
                static_cast<double>(s.wo_block[static_cast<size_t>(r) * s.d_model + cdim]);
        }
        acc += s.row[j] * wv;
      }
      worst = std::max(worst, std::abs(acc - s.head_out[cdim]));
    }
  };
  forward(params, tokens, &hooks);
  CHECK(worst < 1e-6);
}

TEST_CASE("overlong sequences are rejected") {
  auto params = init_params(tiny_config(2));
  auto tokens = some_tokens(33, 31);
  CHECK_THROWS_AS(forward(params, tokens), std::invalid_argument);
}

TEST_CASE("generate: max_new = 0 gives empty response, runs are deterministic") {
  auto params = init_params(tiny_config(4));
  auto prompt = some_tokens(5, 31);
  auto none = generate_greedy(params, prompt, nullptr, 0, 2);
  CHECK(none.empty());
  auto g1 = generate_greedy(params, prompt, nullptr, 8, 2);
  auto g2 = generate_greedy(params, prompt, nullptr, 8, 2);
  CHECK(g1 == g2);
  CHECK(static_cast<int>(g1.size()) <= 8);
}

TEST_CASE("generate rejects prompts that cannot fit") {
  auto params = init_params(tiny_config(4));
  auto prompt = some_tokens(30, 31);
  CHECK_THROWS_AS(generate_greedy(params, prompt, nullptr, 10, 2), std::invalid_argument);
}

}  // TEST_SUITE
