#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xattn/checkpoint.hpp"
#include "xattn/probe.hpp"
#include "xattn/steer.hpp"
#include "xattn/train.hpp"
#include "xattn/worldgen.hpp"

namespace xattn {

// Rule-based conflict judge: a response acknowledges a conflict when it
// contains the CONFLICT token or both competing answers.
struct JudgeVerdict {
  enum class Rule : uint8_t { kConflictToken = 0, kBothAnswers, kNone };
  bool detected = false;
  Rule rule = Rule::kNone;
  std::vector<int> extracted;  // answer-alphabet tokens found in the response
};

const char* judge_rule_name(JudgeVerdict::Rule r);

JudgeVerdict judge(std::span<const int> response, const ConflictInstance& instance,
                   const Vocab& vocab);

double detection_rate(std::span<const JudgeVerdict> verdicts);

struct EvalOptions {
  int max_new = 6;
  std::optional<SteerSpec> steer;
  AggregationSpec agg;
  int workers = 1;
};

struct InstanceResult {
  std::string id;
  bool conflict = false;
  SpanOrder order = SpanOrder::kNA;
  Condition condition = Condition::kCross;
  PromptMode mode = PromptMode::kStandard;
  JudgeVerdict verdict;
  bool control_correct = false;
  std::optional<InstanceImbalance> imbalance;  // cross instances only
  double target_mass = 0.0;  // mean steered-group attention mass over sites
  std::vector<int> generated;
};

InstanceResult evaluate_instance(const ModelParams& params, const Vocab& vocab,
                                 const ConflictInstance& instance,
                                 const EvalOptions& options);

struct CellStats {
  int n = 0;
  int n_conflict = 0;
  int n_control = 0;
  double detection_rate = 0.0;
  double false_alarm_rate = 0.0;
  double control_accuracy = 0.0;
  bool has_imbalance = false;
  double mean_imbalance = 0.0;
  double mean_u_a = 0.0;
  double mean_u_b = 0.0;
  double mean_presoftmax_a = 0.0;
  double mean_presoftmax_b = 0.0;
};

struct EvalCell {
  Condition condition = Condition::kCross;
  PromptMode mode = PromptMode::kStandard;
  SpanOrder order = SpanOrder::kNA;  // kNA row aggregates both orders
  CellStats stats;
};

struct RunMeta {
  std::string run_id;
  std::string checkpoint_id;
  std::string config_hash;
  uint64_t seed = 0;
  std::optional<SteerSpec> steer;
};

struct EvalReport {
  RunMeta meta;
  std::vector<EvalCell> cells;

  const EvalCell* find(Condition c, PromptMode m, SpanOrder o) const;
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  std::string to_csv() const;
};

// Evaluates every instance of every set and aggregates per
// (condition, prompt mode, order); order-kNA rows carry the full cells.
EvalReport run_condition_grid(const ModelParams& params, const Vocab& vocab,
                              std::span<const std::vector<ConflictInstance>> eval_sets,
                              const EvalOptions& options);

struct SweepPoint {
  double epsilon = 0.0;
  double detection_rate = 0.0;
  double false_alarm_rate = 0.0;
  double mean_target_mass = 0.0;
};

struct SweepResult {
  std::vector<double> grid;
  std::vector<SweepPoint> points;
  RunMeta meta;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

std::vector<double> default_epsilon_grid();  // -1 to 1 in 0.25 steps

// Per instance, an unsteered probe pass picks the lower-|u| domain as the
// steering target; the grid is then evaluated with the bias attached.
SweepResult run_epsilon_sweep(const ModelParams& params, const Vocab& vocab,
                              std::span<const ConflictInstance> cross_set,
                              std::vector<double> grid, const EvalOptions& base);

Domain lower_u_domain(const ContributionRecord& record,
                      const AggregationSpec& spec);

struct ArmResult {
  MixMode mode = MixMode::kDatasetLevel;
  int steps_run = 0;
  int64_t supervised_tokens = 0;
  std::string checkpoint_id;
  EvalReport report;
  double cross_detection = 0.0;
  double cross_false_alarm = 0.0;
  double cross_imbalance = 0.0;
  double uni_a_detection = 0.0;
  double uni_b_detection = 0.0;
};

struct SeedComparison {
  uint64_t seed = 0;
  ArmResult dataset;
  ArmResult instance;
};

struct ComparisonSummary {
  int n_seeds = 0;
  double mean_detection_dataset = 0.0;
  double mean_detection_instance = 0.0;
  double mean_imbalance_dataset = 0.0;
  double mean_imbalance_instance = 0.0;
  int detection_wins_instance = 0;  // seeds with instance > dataset
  int imbalance_wins_instance = 0;  // seeds with instance < dataset
};

struct ComparisonResult {
  std::vector<SeedComparison> per_seed;
  ComparisonSummary summary;
  // aligned with per_seed when retention was requested
  std::vector<std::pair<ModelParams, ModelParams>> checkpoints;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

struct ComparisonOptions {
  EvalOptions eval;
  bool keep_checkpoints = false;
  ProgressFn progress;
};

// Trains dataset-level and instance-level arms under equal supervised-token
// budgets for each seed and evaluates both on the same eval sets.
ComparisonResult run_mixing_comparison(const ItemCorpus& a, const ItemCorpus& b,
                                       std::span<const std::vector<ConflictInstance>> eval_sets,
                                       const TrainConfig& base,
                                       std::span<const uint64_t> seeds,
                                       const Vocab& vocab,
                                       const ComparisonOptions& options);

}  // namespace xattn
