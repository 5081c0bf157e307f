#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xattn/hooks.hpp"
#include "xattn/model.hpp"
#include "xattn/vocab.hpp"

#include <json.hpp>

namespace xattn {

// Token-position groups within one rendered instance.
enum class SpanGroup : uint8_t { kEvidence1 = 0, kEvidence2, kQuestion, kOther };
inline constexpr int kNumGroups = 4;
const char* span_group_name(SpanGroup g);

enum class SpanOrder : uint8_t { kAFirst = 0, kBFirst, kNA };
const char* span_order_name(SpanOrder o);

// Assignment of prompt positions to groups plus the domain of each evidence
// span. Positions beyond the prompt (generated tokens) count as kOther.
struct SpanMap {
  std::vector<SpanGroup> groups;
  Domain span1_domain = Domain::kA;
  Domain span2_domain = Domain::kB;

  void validate() const;
  std::vector<uint8_t> group_mask(SpanGroup g, size_t len) const;
  std::vector<uint8_t> domain_mask(Domain d, size_t len) const;
  bool has_domain(Domain d) const;
  SpanOrder order() const;
};

// Eq.-2 span contributions at one attention site:
// u_k = sum_{j in C_k} w_{t,j} W_O v_j. Groups must cover positions 0..step.
std::array<std::vector<double>, kNumGroups> decompose_step(
    const AttnSite& site, std::span<const SpanGroup> position_groups);

struct SiteStat {
  int layer = 0;
  int head = 0;
  int step = 0;  // answer-generation step index, 0-based
  SpanGroup group = SpanGroup::kOther;
  double u_norm = 0.0;
  double mean_presoftmax = 0.0;
  double max_presoftmax = 0.0;
  double attn_mass = 0.0;
};

struct ContributionRecord {
  int n_layers = 0;
  int n_heads = 0;
  int n_steps = 0;
  Domain span1_domain = Domain::kA;
  Domain span2_domain = Domain::kB;
  std::string instance_id;
  std::vector<SiteStat> sites;  // ordered by (step, layer, head, group)

  nlohmann::json to_json() const;
};

struct RecordedRun {
  ContributionRecord record;
  std::vector<int> generated;
};

// Greedy generation with the contribution probe attached; one record entry
// per (layer, head, generated step, group). Extra hooks (e.g. a steering
// rewriter) compose with the probe's observer.
RecordedRun record_run(const ModelParams& params, std::span<const int> prompt,
                       const SpanMap& span_map, int max_new, int eos_id,
                       const HookSet* extra = nullptr);

struct AggregationSpec {
  std::vector<int> layers;  // empty = all
  std::vector<int> heads;   // empty = all
};

struct InstanceImbalance {
  std::string instance_id;
  SpanOrder order = SpanOrder::kNA;
  double u_mean_a = 0.0;
  double u_mean_b = 0.0;
  double imbalance = 0.0;  // |ln(u_mean_a / u_mean_b)|
  double u_mean_span1 = 0.0;
  double u_mean_span2 = 0.0;
  double mean_presoftmax_a = 0.0;
  double mean_presoftmax_b = 0.0;
  int n_steps = 0;
};

struct OrderStats {
  int n = 0;
  double mean_imbalance = 0.0;
  double mean_u_a = 0.0;
  double mean_u_b = 0.0;
};

struct ImbalanceReport {
  int n_layers = 0;
  int n_heads = 0;
  std::vector<InstanceImbalance> instances;
  double mean_imbalance = 0.0;
  double mean_u_a = 0.0;
  double mean_u_b = 0.0;
  double mean_presoftmax_a = 0.0;
  double mean_presoftmax_b = 0.0;
  std::vector<double> lh_a;  // n_layers x n_heads mean |u| matrices
  std::vector<double> lh_b;
  OrderStats a_first;
  OrderStats b_first;

  nlohmann::json to_json() const;
  std::string matrix_csv(Domain d) const;  // rows = layers, cols = heads
};

// Domain-keyed imbalance for one record. Requires evidence spans from both
// domains; throws a degenerate-record error when a domain mean is zero.
ImbalanceReport imbalance(const ContributionRecord& record,
                          const AggregationSpec& spec);

ImbalanceReport merge_imbalance(std::span<const ImbalanceReport> parts);

}  // namespace xattn
