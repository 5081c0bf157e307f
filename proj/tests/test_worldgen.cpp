#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "xattn/worldgen.hpp"

using namespace xattn;

namespace {

WorldConfig small_world_config(uint64_t seed = 5) {
  WorldConfig c;
  c.seed = seed;
  c.n_entities = 12;
  c.name_tokens = 4;
  c.n_values = 4;
  c.eval_fraction = 0.25;
  return c;
}

// Collects (entity, value) assertions per domain from a token stream by
// locating copula tokens and parsing the surrounding 4-token window.
std::map<Domain, std::set<std::pair<int, int>>> scan_assertions(
    const std::vector<int>& tokens, const FactWorld& world) {
  std::map<Domain, std::set<std::pair<int, int>>> out;
  for (Domain d : {Domain::kA, Domain::kB}) {
    for (size_t p = 2; p + 1 < tokens.size(); ++p) {
      if (tokens[p] != world.vocab.copula_in(d)) continue;
      std::span<const int> window(tokens.data() + p - 2, 4);
      if (auto parsed = world.parse_span(window, d)) out[d].insert(*parsed);
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("worldgen") {

TEST_CASE("same seed builds an identical world") {
  auto w1 = build_world(small_world_config(7));
  auto w2 = build_world(small_world_config(7));
  CHECK(w1.manifest().dump() == w2.manifest().dump());
  auto w3 = build_world(small_world_config(8));
  CHECK(w1.manifest().dump() != w3.manifest().dump());
}

TEST_CASE("world manifest round trips") {
  auto w = build_world(small_world_config());
  auto back = FactWorld::from_manifest(w.manifest());
  CHECK(back.manifest().dump() == w.manifest().dump());
  CHECK(back.vocab.size() == w.vocab.size());
}

TEST_CASE("render/parse round trip over all entities, domains, values") {
  auto w = build_world(small_world_config());
  for (const auto& e : w.entities) {
    for (Domain d : {Domain::kA, Domain::kB}) {
      for (int v = 0; v < w.config.n_values; ++v) {
        auto span = w.render_span(e.id, v, d);
        auto parsed = w.parse_span(span, d);
        REQUIRE(parsed.has_value());
        CHECK(parsed->first == e.id);
        CHECK(parsed->second == v);
        // wrong-domain parse must fail
        CHECK(!w.parse_span(span, d == Domain::kA ? Domain::kB : Domain::kA).has_value());
      }
    }
  }
}

TEST_CASE("insufficient alphabet is rejected") {
  auto c = small_world_config();
  c.n_entities = 17;  // 4*4 = 16 pairs available
  CHECK_THROWS_AS(build_world(c), std::invalid_argument);
}

TEST_CASE("empty world is accepted but generators refuse it") {
  auto c = small_world_config();
  c.n_entities = 0;
  auto w = build_world(c);
  CHECK(w.entities.empty());
  CHECK_THROWS(gen_eval_set(w, Condition::kCross, 4, 0.5, PromptMode::kStandard, 1));
  CHECK_THROWS(gen_instruction_corpus(w, Domain::kA, 10, 0.1, 1));
}

TEST_CASE("eval set: ratio, counterbalance, determinism") {
  WorldConfig c;
  c.seed = 11;
  c.n_entities = 150;
  c.name_tokens = 14;
  c.n_values = 8;
  c.eval_fraction = 0.8;  // 120 eval entities
  auto w = build_world(c);

  auto small = gen_eval_set(w, Condition::kCross, 4, 0.5, PromptMode::kStandard, 3);
  CHECK(std::count_if(small.begin(), small.end(),
                      [](const auto& i) { return i.conflict; }) == 2);

  auto set = gen_eval_set(w, Condition::kCross, 100, 0.5, PromptMode::kStandard, 3);
  REQUIRE(set.size() == 100);
  int a_first = 0, conflicts = 0;
  std::set<std::string> ids;
  for (const auto& inst : set) {
    if (inst.order == SpanOrder::kAFirst) ++a_first;
    if (inst.conflict) ++conflicts;
    ids.insert(inst.id);
  }
  CHECK(a_first == 50);
  CHECK(conflicts == 50);
  CHECK(ids.size() == 100);

  auto set2 = gen_eval_set(w, Condition::kCross, 100, 0.5, PromptMode::kStandard, 3);
  for (size_t i = 0; i < set.size(); ++i) {
    CHECK(set[i].to_json(w.vocab).dump() == set2[i].to_json(w.vocab).dump());
  }

  CHECK_THROWS(gen_eval_set(w, Condition::kCross, 5, 0.5, PromptMode::kStandard, 3));
  CHECK_THROWS(gen_eval_set(w, Condition::kCross, 200, 0.5, PromptMode::kStandard, 3));
}

TEST_CASE("eval set: conflicting instances parse to (e, A) vs (e, conflicting)") {
  WorldConfig c = small_world_config(13);
  c.n_entities = 16;
  c.eval_fraction = 0.5;
  auto w = build_world(c);
  auto set = gen_eval_set(w, Condition::kCross, 8, 0.5, PromptMode::kStandard, 9);
  for (const auto& inst : set) {
    auto p1 = w.parse_span(inst.span1.tokens, inst.span1.domain);
    auto p2 = w.parse_span(inst.span2.tokens, inst.span2.domain);
    REQUIRE(p1.has_value());
    REQUIRE(p2.has_value());
    CHECK(p1->first == p2->first);  // same entity
    const int answer = w.vocab.value_index(inst.answer_token);
    const int other = w.vocab.value_index(inst.conflicting_token);
    CHECK(answer != other);
    if (inst.conflict) {
      CHECK(((p1->second == answer && p2->second == other) ||
             (p1->second == other && p2->second == answer)));
    } else {
      CHECK(p1->second == answer);
      CHECK(p2->second == answer);
    }
  }
}

TEST_CASE("eval set: condition purity of alphabets") {
  auto w = build_world(small_world_config(17));
  auto check_purity = [&](Condition cond, bool allow_a, bool allow_b) {
    auto set = gen_eval_set(w, cond, 2, 0.5, PromptMode::kStandard, 21);
    for (const auto& inst : set) {
      auto prompt = render_prompt(inst, inst.prompt_mode, w.vocab, 256);
      bool has_a = false, has_b = false;
      for (int t : prompt.tokens) {
        if (w.vocab.class_of(t) == TokenClass::kDomainA) has_a = true;
        if (w.vocab.class_of(t) == TokenClass::kDomainB) has_b = true;
      }
      CHECK(has_a == allow_a);
      CHECK(has_b == allow_b);
    }
  };
  check_purity(Condition::kUniA, true, false);
  check_purity(Condition::kUniB, false, true);
  check_purity(Condition::kCross, true, true);
}

TEST_CASE("instruction corpus: supervision fraction and world-lookup oracle") {
  auto w = build_world(small_world_config(19));
  auto none = gen_instruction_corpus(w, Domain::kA, 50, 0.0, 4);
  CHECK(std::none_of(none.begin(), none.end(), [](const auto& i) { return i.conflict; }));

  auto corpus = gen_instruction_corpus(w, Domain::kA, 100, 0.2, 4);
  int conflicts = 0;
  for (const auto& item : corpus) {
    if (item.conflict) {
      ++conflicts;
      REQUIRE(item.spans.size() == 2);
      CHECK(item.spans[0].domain == Domain::kA);
      CHECK(item.spans[1].domain == Domain::kA);
      auto p1 = w.parse_span(item.spans[0].tokens, Domain::kA);
      auto p2 = w.parse_span(item.spans[1].tokens, Domain::kA);
      REQUIRE((p1 && p2));
      CHECK(p1->first == p2->first);
      CHECK(p1->second != p2->second);
    } else {
      // target equals the world's true value for the queried entity
      auto p = w.parse_span(item.spans[0].tokens, Domain::kA);
      REQUIRE(p.has_value());
      CHECK(w.entities[p->first].true_value == w.vocab.value_index(item.answer_token));
      for (const auto& s : item.spans) {
        auto ps = w.parse_span(s.tokens, Domain::kA);
        REQUIRE(ps.has_value());
        CHECK(ps->second == w.entities[p->first].true_value);
      }
    }
  }
  CHECK(conflicts == 20);
  CHECK_THROWS(gen_instruction_corpus(w, Domain::kA, 10, 0.6, 4));
}

TEST_CASE("dataset-level mixing: union size, purity, reproducibility") {
  auto w = build_world(small_world_config(23));
  auto a = gen_instruction_corpus(w, Domain::kA, 30, 0.1, 5);
  auto b = gen_instruction_corpus(w, Domain::kB, 20, 0.1, 6);
  auto mix = mix_dataset_level(a, b, w.vocab, 7);
  CHECK(mix.rows.size() == 50);
  for (const auto& row : mix.rows) {
    bool has_a = false, has_b = false;
    for (int t : row.tokens) {
      if (w.vocab.class_of(t) == TokenClass::kDomainA) has_a = true;
      if (w.vocab.class_of(t) == TokenClass::kDomainB) has_b = true;
    }
    CHECK(!(has_a && has_b));
    CHECK((has_a || has_b));
  }
  auto mix2 = mix_dataset_level(a, b, w.vocab, 7);
  REQUIRE(mix.rows.size() == mix2.rows.size());
  for (size_t i = 0; i < mix.rows.size(); ++i) CHECK(mix.rows[i].tokens == mix2.rows[i].tokens);
  auto mix3 = mix_dataset_level(a, b, w.vocab, 8);
  bool any_diff = false;
  for (size_t i = 0; i < mix.rows.size() && !any_diff; ++i) {
    any_diff = mix.rows[i].tokens != mix3.rows[i].tokens;
  }
  CHECK(any_diff);
}

TEST_CASE("instance-level mixing: pair count, both domains, mask audit") {
  auto w = build_world(small_world_config(29));
  auto a = gen_instruction_corpus(w, Domain::kA, 25, 0.1, 5);
  auto b = gen_instruction_corpus(w, Domain::kB, 40, 0.1, 6);
  auto mix = mix_instance_level(a, b, w.vocab, 7);
  CHECK(mix.rows.size() == 25);  // min(|A|, |B|), leftovers dropped
  for (const auto& row : mix.rows) {
    bool has_a = false, has_b = false;
    for (int t : row.tokens) {
      if (w.vocab.class_of(t) == TokenClass::kDomainA) has_a = true;
      if (w.vocab.class_of(t) == TokenClass::kDomainB) has_b = true;
    }
    CHECK(has_a);
    CHECK(has_b);
    // loss mask covers exactly the suffix after the <ans> marker
    const auto ans_pos = std::find(row.tokens.begin(), row.tokens.end(), w.vocab.ans()) -
                         row.tokens.begin();
    for (size_t t = 0; t < row.tokens.size(); ++t) {
      CHECK(row.loss_mask[t] == (static_cast<long>(t) > ans_pos ? 1 : 0));
    }
    // response layout: <resp_a> <sep> <resp_b> <eos>
    CHECK(row.tokens.back() == w.vocab.eos());
    int seps_in_response = 0;
    for (size_t t = ans_pos + 1; t < row.tokens.size(); ++t) {
      if (row.tokens[t] == w.vocab.sep()) ++seps_in_response;
    }
    CHECK(seps_in_response == 1);
  }
}

TEST_CASE("training corpora never contain a cross-domain conflict") {
  auto w = build_world(small_world_config(31));
  CHECK(w.pool_a.size() + w.pool_b.size() + w.pool_eval.size() == w.entities.size());
  std::set<int> pa(w.pool_a.begin(), w.pool_a.end());
  for (int e : w.pool_b) CHECK(pa.count(e) == 0);
  for (int e : w.pool_eval) CHECK(pa.count(e) == 0);

  auto a = gen_instruction_corpus(w, Domain::kA, 40, 0.2, 5);
  auto b = gen_instruction_corpus(w, Domain::kB, 40, 0.2, 6);
  for (const auto& mix : {mix_dataset_level(a, b, w.vocab, 7),
                          mix_instance_level(a, b, w.vocab, 7)}) {
    for (const auto& row : mix.rows) {
      auto assertions = scan_assertions(row.tokens, w);
      for (const auto& [ea, va] : assertions[Domain::kA]) {
        for (const auto& [eb, vb] : assertions[Domain::kB]) {
          CHECK(!(ea == eb && va != vb));
        }
      }
    }
  }
}

TEST_CASE("render_prompt: marker arithmetic and span map coverage") {
  auto w = build_world(small_world_config(37));
  auto set = gen_eval_set(w, Condition::kCross, 2, 0.5, PromptMode::kStandard, 41);
  const auto& inst = set[0];
  auto standard = render_prompt(inst, PromptMode::kStandard, w.vocab, 256);
  auto instructed = render_prompt(inst, PromptMode::kInstructed, w.vocab, 256);
  auto explicit_mode = render_prompt(inst, PromptMode::kExplicit, w.vocab, 256);
  CHECK(instructed.tokens.size() == standard.tokens.size() + 1);
  CHECK(explicit_mode.tokens.size() == standard.tokens.size() + 1);
  CHECK(std::count(instructed.tokens.begin(), instructed.tokens.end(), w.vocab.instruct()) == 1);
  CHECK(std::count(explicit_mode.tokens.begin(), explicit_mode.tokens.end(),
                   w.vocab.same_q()) == 1);

  // template arithmetic: bos ctx s1(4) sep s2(4) sep ques q(2) ans = 16
  CHECK(standard.tokens.size() == 16);
  CHECK(standard.span_map.groups.size() == standard.tokens.size());
  int e1 = 0, e2 = 0, q = 0;
  for (auto g : standard.span_map.groups) {
    if (g == SpanGroup::kEvidence1) ++e1;
    if (g == SpanGroup::kEvidence2) ++e2;
    if (g == SpanGroup::kQuestion) ++q;
  }
  CHECK(e1 == 4);
  CHECK(e2 == 4);
  CHECK(q == 2);

  CHECK_THROWS_AS(render_prompt(inst, PromptMode::kStandard, w.vocab, 10),
                  std::invalid_argument);
}

TEST_CASE("eval JSONL round trips byte-identically") {
  auto wc = small_world_config(43);
  wc.eval_fraction = 0.75;
  auto w = build_world(wc);
  auto set = gen_eval_set(w, Condition::kCross, 6, 0.5, PromptMode::kInstructed, 47);
  const std::string path = "test_eval_roundtrip.jsonl";
  write_eval_jsonl(path, set, w.vocab);
  auto back = read_eval_jsonl(path, w.vocab);
  REQUIRE(back.size() == set.size());
  for (size_t i = 0; i < set.size(); ++i) {
    CHECK(back[i].to_json(w.vocab).dump() == set[i].to_json(w.vocab).dump());
  }
  write_eval_jsonl(path + ".2", back, w.vocab);
  std::ifstream f1(path), f2(path + ".2");
  std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(c1 == c2);
  std::remove(path.c_str());
  std::remove((path + ".2").c_str());
}

TEST_CASE("item JSONL round trips") {
  auto w = build_world(small_world_config(53));
  auto corpus = gen_instruction_corpus(w, Domain::kB, 20, 0.2, 5);
  const std::string path = "test_items_roundtrip.jsonl";
  write_items_jsonl(path, corpus, w.vocab);
  auto back = read_items_jsonl(path, w.vocab);
  REQUIRE(back.size() == corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i) {
    CHECK(back[i].to_json(w.vocab).dump() == corpus[i].to_json(w.vocab).dump());
  }
  std::remove(path.c_str());
}

}  // TEST_SUITE
