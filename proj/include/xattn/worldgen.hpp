#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xattn/probe.hpp"
#include "xattn/vocab.hpp"

#include <json.hpp>

namespace xattn {

enum class Condition : uint8_t { kUniA = 0, kUniB, kCross };
const char* condition_name(Condition c);
Condition condition_from_name(std::string_view s);

enum class PromptMode : uint8_t { kStandard = 0, kInstructed, kExplicit };
const char* prompt_mode_name(PromptMode m);
PromptMode prompt_mode_from_name(std::string_view s);

struct WorldConfig {
  uint64_t seed = 0;
  int n_entities = 192;
  int name_tokens = 14;  // per-domain name alphabet size
  int n_values = 16;
  double eval_fraction = 1.0 / 3.0;  // held-out entity share
};

void to_json(nlohmann::json& j, const WorldConfig& c);
void from_json(const nlohmann::json& j, WorldConfig& c);

struct Entity {
  int id = 0;
  int name_i = 0;  // shared index pair realized in each alphabet
  int name_j = 0;
  int true_value = 0;  // index into the value alphabet
};

// Seeded universe of facts. Each entity has one true value and renders as a
// 4-token assertion span in either domain's alphabet; entity pools for
// domain-A training, domain-B training, and held-out evaluation are
// disjoint.
struct FactWorld {
  WorldConfig config;
  Vocab vocab;
  std::vector<Entity> entities;
  std::vector<int> pool_a;
  std::vector<int> pool_b;
  std::vector<int> pool_eval;

  std::vector<int> render_span(int entity_id, int value_idx, Domain d) const;
  // (entity id, value index); nullopt when the tokens are not a well-formed
  // assertion in that domain.
  std::optional<std::pair<int, int>> parse_span(std::span<const int> tokens,
                                                Domain d) const;
  std::vector<int> question_tokens(int entity_id) const;
  int entity_of_pair(int name_i, int name_j) const;  // -1 when absent

  nlohmann::json manifest() const;
  static FactWorld from_manifest(const nlohmann::json& j);
};

FactWorld build_world(const WorldConfig& config);

struct EvidenceSpan {
  Domain domain = Domain::kA;
  std::vector<int> tokens;
};

// One evaluation item in the {(C1, C2, Q, A, conflicting A)} shape.
struct ConflictInstance {
  std::string id;
  Condition condition = Condition::kCross;
  bool conflict = true;
  SpanOrder order = SpanOrder::kNA;
  EvidenceSpan span1;
  EvidenceSpan span2;
  std::vector<int> question;  // shared-alphabet entity reference
  int answer_token = -1;
  int conflicting_token = -1;
  PromptMode prompt_mode = PromptMode::kStandard;

  nlohmann::json to_json(const Vocab& vocab) const;
  static ConflictInstance from_json(const nlohmann::json& j, const Vocab& vocab);
};

std::vector<ConflictInstance> gen_eval_set(const FactWorld& world, Condition condition,
                                           int n, double conflict_ratio,
                                           PromptMode prompt_mode, uint64_t seed,
                                           bool use_eval_pool = true);

// One single-domain instruction item: 1 consistent span or 2 spans
// (consistent, or conflicting with a CONFLICT-token target).
struct TrainingItem {
  std::string id;
  Domain domain = Domain::kA;
  bool conflict = false;
  std::vector<EvidenceSpan> spans;
  std::vector<int> question;
  int answer_token = -1;
  int conflicting_token = -1;
  PromptMode mode = PromptMode::kStandard;

  std::vector<int> response_tokens(const Vocab& vocab) const;
  nlohmann::json to_json(const Vocab& vocab) const;
  static TrainingItem from_json(const nlohmann::json& j, const Vocab& vocab);
};

using ItemCorpus = std::vector<TrainingItem>;

ItemCorpus gen_instruction_corpus(const FactWorld& world, Domain domain, int n,
                                  double conflict_supervision_fraction,
                                  uint64_t seed);

enum class MixMode : uint8_t { kAOnly = 0, kBOnly, kDatasetLevel, kInstanceLevel };
const char* mix_mode_name(MixMode m);
MixMode mix_mode_from_name(std::string_view s);

struct TrainRow {
  std::string id;
  std::vector<int> tokens;
  std::vector<uint8_t> loss_mask;  // 1 on supervised (response) positions

  int64_t supervised_tokens() const;
};

struct MixedCorpus {
  MixMode mode = MixMode::kDatasetLevel;
  std::vector<TrainRow> rows;

  int64_t total_supervised_tokens() const;
  int max_row_length() const;
};

MixedCorpus single_domain_corpus(const ItemCorpus& corpus, const Vocab& vocab,
                                 uint64_t seed);
MixedCorpus mix_dataset_level(const ItemCorpus& a, const ItemCorpus& b,
                              const Vocab& vocab, uint64_t seed);
MixedCorpus mix_instance_level(const ItemCorpus& a, const ItemCorpus& b,
                               const Vocab& vocab, uint64_t seed);

struct RenderedPrompt {
  std::vector<int> tokens;
  SpanMap span_map;
};

RenderedPrompt render_prompt(const ConflictInstance& instance, PromptMode mode,
                             const Vocab& vocab, int max_seq_len);

// Training-row renderers (shared template with render_prompt).
TrainRow render_single(const TrainingItem& item, const Vocab& vocab);
TrainRow render_pair(const TrainingItem& a, const TrainingItem& b, const Vocab& vocab);

// JSONL: one instance per line, tokens as symbol strings.
void write_eval_jsonl(const std::string& path, std::span<const ConflictInstance> set,
                      const Vocab& vocab);
std::vector<ConflictInstance> read_eval_jsonl(const std::string& path, const Vocab& vocab);
void write_items_jsonl(const std::string& path, const ItemCorpus& corpus,
                       const Vocab& vocab);
ItemCorpus read_items_jsonl(const std::string& path, const Vocab& vocab);
void write_rows_jsonl(const std::string& path, const MixedCorpus& corpus,
                      const Vocab& vocab);

}  // namespace xattn
