#include "xattn/worldgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "xattn/rng.hpp"

namespace xattn {

const char* condition_name(Condition c) {
  switch (c) {
    case Condition::kUniA: return "uni-A";
    case Condition::kUniB: return "uni-B";
    case Condition::kCross: return "cross";
  }
  return "?";
}

Condition condition_from_name(std::string_view s) {
  if (s == "uni-A") return Condition::kUniA;
  if (s == "uni-B") return Condition::kUniB;
  if (s == "cross") return Condition::kCross;
  throw std::invalid_argument("unknown condition: " + std::string(s));
}

const char* prompt_mode_name(PromptMode m) {
  switch (m) {
    case PromptMode::kStandard: return "standard";
    case PromptMode::kInstructed: return "instructed";
    case PromptMode::kExplicit: return "explicit";
  }
  return "?";
}

PromptMode prompt_mode_from_name(std::string_view s) {
  if (s == "standard") return PromptMode::kStandard;
  if (s == "instructed") return PromptMode::kInstructed;
  if (s == "explicit") return PromptMode::kExplicit;
  throw std::invalid_argument("unknown prompt mode: " + std::string(s));
}

const char* mix_mode_name(MixMode m) {
  switch (m) {
    case MixMode::kAOnly: return "a-only";
    case MixMode::kBOnly: return "b-only";
    case MixMode::kDatasetLevel: return "dataset";
    case MixMode::kInstanceLevel: return "instance";
  }
  return "?";
}

MixMode mix_mode_from_name(std::string_view s) {
  if (s == "a-only") return MixMode::kAOnly;
  if (s == "b-only") return MixMode::kBOnly;
  if (s == "dataset") return MixMode::kDatasetLevel;
  if (s == "instance") return MixMode::kInstanceLevel;
  throw std::invalid_argument("unknown mix mode: " + std::string(s));
}

void to_json(nlohmann::json& j, const WorldConfig& c) {
  j = nlohmann::json{{"seed", c.seed},
                     {"n_entities", c.n_entities},
                     {"name_tokens", c.name_tokens},
                     {"n_values", c.n_values},
                     {"eval_fraction", c.eval_fraction}};
}

void from_json(const nlohmann::json& j, WorldConfig& c) {
  j.at("seed").get_to(c.seed);
  j.at("n_entities").get_to(c.n_entities);
  j.at("name_tokens").get_to(c.name_tokens);
  j.at("n_values").get_to(c.n_values);
  j.at("eval_fraction").get_to(c.eval_fraction);
}

std::vector<int> FactWorld::render_span(int entity_id, int value_idx, Domain d) const {
  const Entity& e = entities.at(entity_id);
  return {vocab.name_in(d, e.name_i), vocab.name_in(d, e.name_j), vocab.copula_in(d),
          vocab.value(value_idx)};
}

std::optional<std::pair<int, int>> FactWorld::parse_span(std::span<const int> tokens,
                                                         Domain d) const {
  if (tokens.size() != 4) return std::nullopt;
  const TokenClass want = d == Domain::kA ? TokenClass::kDomainA : TokenClass::kDomainB;
  for (int i = 0; i < 2; ++i) {
    if (tokens[i] < 0 || tokens[i] >= vocab.size()) return std::nullopt;
    if (vocab.class_of(tokens[i]) != want) return std::nullopt;
  }
  const int ni = vocab.name_index(tokens[0]);
  const int nj = vocab.name_index(tokens[1]);
  if (ni < 0 || nj < 0) return std::nullopt;
  if (tokens[2] != vocab.copula_in(d)) return std::nullopt;
  const int value = vocab.value_index(tokens[3]);
  if (value < 0) return std::nullopt;
  const int entity = entity_of_pair(ni, nj);
  if (entity < 0) return std::nullopt;
  return std::make_pair(entity, value);
}

std::vector<int> FactWorld::question_tokens(int entity_id) const {
  const Entity& e = entities.at(entity_id);
  return {vocab.q_name(e.name_i), vocab.q_name(e.name_j)};
}

int FactWorld::entity_of_pair(int name_i, int name_j) const {
  for (const auto& e : entities) {
    if (e.name_i == name_i && e.name_j == name_j) return e.id;
  }
  return -1;
}

nlohmann::json FactWorld::manifest() const {
  nlohmann::json ents = nlohmann::json::array();
  for (const auto& e : entities) {
    ents.push_back({{"id", e.id}, {"name_i", e.name_i}, {"name_j", e.name_j},
                    {"value", e.true_value}});
  }
  return nlohmann::json{{"config", config},
                        {"entities", std::move(ents)},
                        {"pools",
                         {{"a", pool_a}, {"b", pool_b}, {"eval", pool_eval}}}};
}

FactWorld FactWorld::from_manifest(const nlohmann::json& j) {
  FactWorld world;
  world.config = j.at("config").get<WorldConfig>();
  world.vocab = Vocab(world.config.name_tokens, world.config.n_values);
  for (const auto& e : j.at("entities")) {
    world.entities.push_back({e.at("id").get<int>(), e.at("name_i").get<int>(),
                              e.at("name_j").get<int>(), e.at("value").get<int>()});
  }
  j.at("pools").at("a").get_to(world.pool_a);
  j.at("pools").at("b").get_to(world.pool_b);
  j.at("pools").at("eval").get_to(world.pool_eval);
  return world;
}

FactWorld build_world(const WorldConfig& config) {
  if (config.n_entities < 0) throw std::invalid_argument("build_world: negative entity count");
  if (config.eval_fraction < 0.0 || config.eval_fraction > 1.0) {
    throw std::invalid_argument("build_world: eval_fraction must lie in [0,1]");
  }
  const int64_t capacity =
      static_cast<int64_t>(config.name_tokens) * config.name_tokens;
  if (config.n_entities > capacity) {
    throw std::invalid_argument("build_world: insufficient alphabet, need " +
                                std::to_string(config.n_entities) + " name pairs but only " +
                                std::to_string(capacity) + " exist");
  }
  FactWorld world;
  world.config = config;
  world.vocab = Vocab(config.name_tokens, config.n_values);

  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(capacity);
  for (int i = 0; i < config.name_tokens; ++i) {
    for (int j = 0; j < config.name_tokens; ++j) pairs.emplace_back(i, j);
  }
  auto name_rng = make_rng(config.seed, "entity-names");
  std::shuffle(pairs.begin(), pairs.end(), name_rng);
  auto value_rng = make_rng(config.seed, "entity-values");
  for (int id = 0; id < config.n_entities; ++id) {
    Entity e;
    e.id = id;
    e.name_i = pairs[id].first;
    e.name_j = pairs[id].second;
    e.true_value = static_cast<int>(value_rng() % config.n_values);
    world.entities.push_back(e);
  }

  std::vector<int> ids(config.n_entities);
  for (int i = 0; i < config.n_entities; ++i) ids[i] = i;
  auto pool_rng = make_rng(config.seed, "pools");
  std::shuffle(ids.begin(), ids.end(), pool_rng);
  const int n_eval = static_cast<int>(std::lround(config.n_entities * config.eval_fraction));
  const int n_train = config.n_entities - n_eval;
  world.pool_eval.assign(ids.begin(), ids.begin() + n_eval);
  world.pool_a.assign(ids.begin() + n_eval, ids.begin() + n_eval + n_train / 2);
  world.pool_b.assign(ids.begin() + n_eval + n_train / 2, ids.end());
  return world;
}

nlohmann::json ConflictInstance::to_json(const Vocab& vocab) const {
  auto span_json = [&](const EvidenceSpan& s) {
    return nlohmann::json{{"domain", domain_name(s.domain)},
                          {"tokens", vocab.to_symbols(s.tokens)}};
  };
  return nlohmann::json{{"id", id},
                        {"condition", condition_name(condition)},
                        {"conflict", conflict},
                        {"order", span_order_name(order)},
                        {"spans", nlohmann::json::array({span_json(span1), span_json(span2)})},
                        {"question", vocab.to_symbols(question)},
                        {"answer", vocab.symbol(answer_token)},
                        {"conflicting_answer", vocab.symbol(conflicting_token)},
                        {"prompt_mode", prompt_mode_name(prompt_mode)}};
}

namespace {

SpanOrder span_order_from_name(std::string_view s) {
  if (s == "A-first") return SpanOrder::kAFirst;
  if (s == "B-first") return SpanOrder::kBFirst;
  if (s == "na") return SpanOrder::kNA;
  throw std::invalid_argument("unknown span order: " + std::string(s));
}

EvidenceSpan span_from_json(const nlohmann::json& j, const Vocab& vocab) {
  EvidenceSpan s;
  s.domain = domain_from_name(j.at("domain").get<std::string>());
  s.tokens = vocab.to_ids(j.at("tokens").get<std::vector<std::string>>());
  return s;
}

}  // namespace

ConflictInstance ConflictInstance::from_json(const nlohmann::json& j, const Vocab& vocab) {
  ConflictInstance inst;
  inst.id = j.at("id").get<std::string>();
  inst.condition = condition_from_name(j.at("condition").get<std::string>());
  inst.conflict = j.at("conflict").get<bool>();
  inst.order = span_order_from_name(j.at("order").get<std::string>());
  const auto& spans = j.at("spans");
  if (spans.size() != 2) throw std::invalid_argument("instance must carry two spans");
  inst.span1 = span_from_json(spans[0], vocab);
  inst.span2 = span_from_json(spans[1], vocab);
  inst.question = vocab.to_ids(j.at("question").get<std::vector<std::string>>());
  inst.answer_token = vocab.id(j.at("answer").get<std::string>());
  inst.conflicting_token = vocab.id(j.at("conflicting_answer").get<std::string>());
  inst.prompt_mode = prompt_mode_from_name(j.at("prompt_mode").get<std::string>());
  return inst;
}

std::vector<ConflictInstance> gen_eval_set(const FactWorld& world, Condition condition,
                                           int n, double conflict_ratio,
                                           PromptMode prompt_mode, uint64_t seed,
                                           bool use_eval_pool) {
  if (n <= 0 || n % 2 != 0) throw std::invalid_argument("gen_eval_set: n must be positive and even");
  if (conflict_ratio < 0.0 || conflict_ratio > 1.0) {
    throw std::invalid_argument("gen_eval_set: conflict_ratio must lie in [0,1]");
  }
  std::vector<int> pool;
  if (use_eval_pool) {
    pool = world.pool_eval;
  } else {
    pool.resize(world.entities.size());
    for (size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<int>(i);
  }
  if (static_cast<int>(pool.size()) < n) {
    throw std::invalid_argument("gen_eval_set: world too small, need " + std::to_string(n) +
                                " distinct entities but the pool has " +
                                std::to_string(pool.size()));
  }
  auto rng = make_rng(seed, "eval-set");
  std::shuffle(pool.begin(), pool.end(), rng);

  const int n_conflict = static_cast<int>(std::lround(n * conflict_ratio));
  const int a_in_conflicts = condition == Condition::kCross ? (n_conflict + 1) / 2 : 0;
  const int a_in_controls = condition == Condition::kCross ? n / 2 - a_in_conflicts : 0;

  std::vector<ConflictInstance> set;
  set.reserve(n);
  int control_index = 0;
  for (int i = 0; i < n; ++i) {
    ConflictInstance inst;
    inst.condition = condition;
    inst.conflict = i < n_conflict;
    inst.prompt_mode = prompt_mode;
    const int entity = pool[i];
    const Entity& e = world.entities.at(entity);
    inst.question = world.question_tokens(entity);
    inst.answer_token = world.vocab.value(e.true_value);
    // a conflicting value distinct from the answer, drawn for every instance
    int other = static_cast<int>(rng() % (world.config.n_values - 1));
    if (other >= e.true_value) ++other;
    inst.conflicting_token = world.vocab.value(other);

    Domain d1, d2;
    if (condition == Condition::kCross) {
      const bool a_first = inst.conflict ? (i % 2 == 0)
                                         : (control_index < a_in_controls);
      if (!inst.conflict) ++control_index;
      inst.order = a_first ? SpanOrder::kAFirst : SpanOrder::kBFirst;
      d1 = a_first ? Domain::kA : Domain::kB;
      d2 = a_first ? Domain::kB : Domain::kA;
    } else {
      inst.order = SpanOrder::kNA;
      d1 = d2 = condition == Condition::kUniA ? Domain::kA : Domain::kB;
    }
    inst.span1.domain = d1;
    inst.span2.domain = d2;
    if (inst.conflict) {
      // which span carries the true value is a coin flip
      const bool first_true = rng() % 2 == 0;
      inst.span1.tokens = world.render_span(entity, first_true ? e.true_value
                                                               : other, d1);
      inst.span2.tokens = world.render_span(entity, first_true ? other
                                                               : e.true_value, d2);
    } else {
      inst.span1.tokens = world.render_span(entity, e.true_value, d1);
      inst.span2.tokens = world.render_span(entity, e.true_value, d2);
    }
    set.push_back(std::move(inst));
  }
  std::shuffle(set.begin(), set.end(), rng);
  for (int i = 0; i < n; ++i) {
    set[i].id = std::string(condition_name(condition)) + "-" +
                prompt_mode_name(prompt_mode) + "-" + std::to_string(i);
  }
  return set;
}

std::vector<int> TrainingItem::response_tokens(const Vocab& vocab) const {
  if (mode == PromptMode::kExplicit) {
    if (conflict) return {vocab.no(), vocab.conflict()};
    return {vocab.yes()};
  }
  if (conflict) return {vocab.conflict()};
  return {answer_token};
}

nlohmann::json TrainingItem::to_json(const Vocab& vocab) const {
  nlohmann::json spans_json = nlohmann::json::array();
  for (const auto& s : spans) {
    spans_json.push_back({{"domain", domain_name(s.domain)},
                          {"tokens", vocab.to_symbols(s.tokens)}});
  }
  return nlohmann::json{{"id", id},
                        {"condition", domain == Domain::kA ? "uni-A" : "uni-B"},
                        {"conflict", conflict},
                        {"order", "na"},
                        {"spans", std::move(spans_json)},
                        {"question", vocab.to_symbols(question)},
                        {"answer", vocab.symbol(answer_token)},
                        {"conflicting_answer", vocab.symbol(conflicting_token)},
                        {"prompt_mode", prompt_mode_name(mode)}};
}

TrainingItem TrainingItem::from_json(const nlohmann::json& j, const Vocab& vocab) {
  TrainingItem item;
  item.id = j.at("id").get<std::string>();
  item.domain = j.at("condition").get<std::string>() == "uni-A" ? Domain::kA : Domain::kB;
  item.conflict = j.at("conflict").get<bool>();
  for (const auto& s : j.at("spans")) item.spans.push_back(span_from_json(s, vocab));
  item.question = vocab.to_ids(j.at("question").get<std::vector<std::string>>());
  item.answer_token = vocab.id(j.at("answer").get<std::string>());
  item.conflicting_token = vocab.id(j.at("conflicting_answer").get<std::string>());
  item.mode = prompt_mode_from_name(j.at("prompt_mode").get<std::string>());
  return item;
}

ItemCorpus gen_instruction_corpus(const FactWorld& world, Domain domain, int n,
                                  double conflict_supervision_fraction,
                                  uint64_t seed) {
  if (n < 0) throw std::invalid_argument("gen_instruction_corpus: negative size");
  if (conflict_supervision_fraction < 0.0 || conflict_supervision_fraction > 0.5) {
    throw std::invalid_argument(
        "gen_instruction_corpus: conflict fraction must lie in [0, 0.5]");
  }
  const auto& pool = domain == Domain::kA ? world.pool_a : world.pool_b;
  if (n > 0 && pool.empty()) {
    throw std::invalid_argument("gen_instruction_corpus: world has no entities for domain " +
                                std::string(domain_name(domain)));
  }
  auto rng = make_rng(seed, domain == Domain::kA ? "corpus-A" : "corpus-B");
  const int n_conflict = static_cast<int>(std::lround(n * conflict_supervision_fraction));
  std::vector<uint8_t> conflict_flags(n, 0);
  std::fill(conflict_flags.begin(), conflict_flags.begin() + n_conflict, 1);
  std::shuffle(conflict_flags.begin(), conflict_flags.end(), rng);

  ItemCorpus corpus;
  corpus.reserve(n);
  for (int i = 0; i < n; ++i) {
    TrainingItem item;
    item.id = std::string("train-") + domain_name(domain) + "-" + std::to_string(i);
    item.domain = domain;
    item.conflict = conflict_flags[i] != 0;
    item.mode = static_cast<PromptMode>(rng() % 3);
    const int entity = pool[rng() % pool.size()];
    const Entity& e = world.entities.at(entity);
    item.question = world.question_tokens(entity);
    item.answer_token = world.vocab.value(e.true_value);
    int other = static_cast<int>(rng() % (world.config.n_values - 1));
    if (other >= e.true_value) ++other;
    item.conflicting_token = world.vocab.value(other);
    if (item.conflict) {
      const bool first_true = rng() % 2 == 0;
      item.spans.push_back({domain, world.render_span(entity, first_true ? e.true_value : other,
                                                      domain)});
      item.spans.push_back({domain, world.render_span(entity, first_true ? other : e.true_value,
                                                      domain)});
    } else if (rng() % 2 == 0) {
      item.spans.push_back({domain, world.render_span(entity, e.true_value, domain)});
    } else {
      item.spans.push_back({domain, world.render_span(entity, e.true_value, domain)});
      item.spans.push_back({domain, world.render_span(entity, e.true_value, domain)});
    }
    corpus.push_back(std::move(item));
  }
  return corpus;
}

int64_t TrainRow::supervised_tokens() const {
  int64_t n = 0;
  for (uint8_t m : loss_mask) n += m;
  return n;
}

int64_t MixedCorpus::total_supervised_tokens() const {
  int64_t n = 0;
  for (const auto& row : rows) n += row.supervised_tokens();
  return n;
}

int MixedCorpus::max_row_length() const {
  int n = 0;
  for (const auto& row : rows) n = std::max(n, static_cast<int>(row.tokens.size()));
  return n;
}

namespace {

// <ctx> span1 [<sep> span2] <sep> [<inst>] <ques> [<same>] q-tokens
std::vector<int> item_fragment(const std::vector<EvidenceSpan>& spans,
                               const std::vector<int>& question, PromptMode mode,
                               const Vocab& vocab) {
  std::vector<int> out;
  out.push_back(vocab.ctx());
  for (size_t i = 0; i < spans.size(); ++i) {
    if (i > 0) out.push_back(vocab.sep());
    out.insert(out.end(), spans[i].tokens.begin(), spans[i].tokens.end());
  }
  out.push_back(vocab.sep());
  if (mode == PromptMode::kInstructed) out.push_back(vocab.instruct());
  out.push_back(vocab.ques());
  if (mode == PromptMode::kExplicit) out.push_back(vocab.same_q());
  out.insert(out.end(), question.begin(), question.end());
  return out;
}

}  // namespace

TrainRow render_single(const TrainingItem& item, const Vocab& vocab) {
  TrainRow row;
  row.id = item.id;
  row.tokens.push_back(vocab.bos());
  auto frag = item_fragment(item.spans, item.question, item.mode, vocab);
  row.tokens.insert(row.tokens.end(), frag.begin(), frag.end());
  row.tokens.push_back(vocab.ans());
  row.loss_mask.assign(row.tokens.size(), 0);
  auto resp = item.response_tokens(vocab);
  resp.push_back(vocab.eos());
  for (int t : resp) {
    row.tokens.push_back(t);
    row.loss_mask.push_back(1);
  }
  return row;
}

TrainRow render_pair(const TrainingItem& a, const TrainingItem& b, const Vocab& vocab) {
  TrainRow row;
  row.id = a.id + "+" + b.id;
  row.tokens.push_back(vocab.bos());
  auto frag_a = item_fragment(a.spans, a.question, a.mode, vocab);
  auto frag_b = item_fragment(b.spans, b.question, b.mode, vocab);
  row.tokens.insert(row.tokens.end(), frag_a.begin(), frag_a.end());
  row.tokens.push_back(vocab.sep());
  row.tokens.insert(row.tokens.end(), frag_b.begin(), frag_b.end());
  row.tokens.push_back(vocab.sep());
  row.tokens.push_back(vocab.reply_both());
  row.tokens.push_back(vocab.ans());
  row.loss_mask.assign(row.tokens.size(), 0);
  auto resp_a = a.response_tokens(vocab);
  auto resp_b = b.response_tokens(vocab);
  std::vector<int> resp;
  resp.insert(resp.end(), resp_a.begin(), resp_a.end());
  resp.push_back(vocab.sep());
  resp.insert(resp.end(), resp_b.begin(), resp_b.end());
  resp.push_back(vocab.eos());
  for (int t : resp) {
    row.tokens.push_back(t);
    row.loss_mask.push_back(1);
  }
  return row;
}

MixedCorpus single_domain_corpus(const ItemCorpus& corpus, const Vocab& vocab,
                                 uint64_t seed) {
  if (corpus.empty()) throw std::invalid_argument("single_domain_corpus: empty corpus");
  MixedCorpus out;
  out.mode = corpus.front().domain == Domain::kA ? MixMode::kAOnly : MixMode::kBOnly;
  for (const auto& item : corpus) out.rows.push_back(render_single(item, vocab));
  auto rng = make_rng(seed, "single-shuffle");
  std::shuffle(out.rows.begin(), out.rows.end(), rng);
  return out;
}

MixedCorpus mix_dataset_level(const ItemCorpus& a, const ItemCorpus& b,
                              const Vocab& vocab, uint64_t seed) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("mix_dataset_level: both corpora must be non-empty");
  }
  MixedCorpus out;
  out.mode = MixMode::kDatasetLevel;
  for (const auto& item : a) out.rows.push_back(render_single(item, vocab));
  for (const auto& item : b) out.rows.push_back(render_single(item, vocab));
  auto rng = make_rng(seed, "dataset-shuffle");
  std::shuffle(out.rows.begin(), out.rows.end(), rng);
  return out;
}

MixedCorpus mix_instance_level(const ItemCorpus& a, const ItemCorpus& b,
                               const Vocab& vocab, uint64_t seed) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("mix_instance_level: both corpora must be non-empty");
  }
  std::vector<size_t> ia(a.size()), ib(b.size());
  for (size_t i = 0; i < ia.size(); ++i) ia[i] = i;
  for (size_t i = 0; i < ib.size(); ++i) ib[i] = i;
  auto rng = make_rng(seed, "instance-pairing");
  std::shuffle(ia.begin(), ia.end(), rng);
  std::shuffle(ib.begin(), ib.end(), rng);
  const size_t n = std::min(a.size(), b.size());  // leftovers dropped
  MixedCorpus out;
  out.mode = MixMode::kInstanceLevel;
  for (size_t i = 0; i < n; ++i) {
    out.rows.push_back(render_pair(a[ia[i]], b[ib[i]], vocab));
  }
  return out;
}

RenderedPrompt render_prompt(const ConflictInstance& instance, PromptMode mode,
                             const Vocab& vocab, int max_seq_len) {
  RenderedPrompt out;
  out.tokens.push_back(vocab.bos());
  out.span_map.groups.push_back(SpanGroup::kOther);
  auto push = [&](int token, SpanGroup group) {
    out.tokens.push_back(token);
    out.span_map.groups.push_back(group);
  };
  push(vocab.ctx(), SpanGroup::kOther);
  for (int t : instance.span1.tokens) push(t, SpanGroup::kEvidence1);
  push(vocab.sep(), SpanGroup::kOther);
  for (int t : instance.span2.tokens) push(t, SpanGroup::kEvidence2);
  push(vocab.sep(), SpanGroup::kOther);
  if (mode == PromptMode::kInstructed) push(vocab.instruct(), SpanGroup::kOther);
  push(vocab.ques(), SpanGroup::kOther);
  if (mode == PromptMode::kExplicit) push(vocab.same_q(), SpanGroup::kOther);
  for (int t : instance.question) push(t, SpanGroup::kQuestion);
  push(vocab.ans(), SpanGroup::kOther);
  out.span_map.span1_domain = instance.span1.domain;
  out.span_map.span2_domain = instance.span2.domain;
  if (static_cast<int>(out.tokens.size()) > max_seq_len) {
    throw std::invalid_argument("render_prompt: instance overflows max_seq_len");
  }
  out.span_map.validate();
  return out;
}

namespace {

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& line : lines) out << line << "\n";
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

}  // namespace

void write_eval_jsonl(const std::string& path, std::span<const ConflictInstance> set,
                      const Vocab& vocab) {
  std::vector<std::string> lines;
  lines.reserve(set.size());
  for (const auto& inst : set) lines.push_back(inst.to_json(vocab).dump());
  write_lines(path, lines);
}

std::vector<ConflictInstance> read_eval_jsonl(const std::string& path, const Vocab& vocab) {
  std::vector<ConflictInstance> set;
  for (const auto& line : read_lines(path)) {
    set.push_back(ConflictInstance::from_json(nlohmann::json::parse(line), vocab));
  }
  return set;
}

void write_items_jsonl(const std::string& path, const ItemCorpus& corpus,
                       const Vocab& vocab) {
  std::vector<std::string> lines;
  lines.reserve(corpus.size());
  for (const auto& item : corpus) lines.push_back(item.to_json(vocab).dump());
  write_lines(path, lines);
}

ItemCorpus read_items_jsonl(const std::string& path, const Vocab& vocab) {
  ItemCorpus corpus;
  for (const auto& line : read_lines(path)) {
    corpus.push_back(TrainingItem::from_json(nlohmann::json::parse(line), vocab));
  }
  return corpus;
}

void write_rows_jsonl(const std::string& path, const MixedCorpus& corpus,
                      const Vocab& vocab) {
  std::vector<std::string> lines;
  lines.reserve(corpus.rows.size());
  for (const auto& row : corpus.rows) {
    lines.push_back(nlohmann::json{{"id", row.id},
                                   {"tokens", vocab.to_symbols(row.tokens)},
                                   {"loss_mask", row.loss_mask}}
                        .dump());
  }
  write_lines(path, lines);
}

}  // namespace xattn
