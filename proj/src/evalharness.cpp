#include "xattn/evalharness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "xattn/rng.hpp"

namespace xattn {

namespace {

bool contains(std::span<const int> tokens, int token) {
  return std::find(tokens.begin(), tokens.end(), token) != tokens.end();
}

// Deterministic worker pool: results land in caller-indexed slots.
void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::string hex64(uint64_t h) {
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace

const char* judge_rule_name(JudgeVerdict::Rule r) {
  switch (r) {
    case JudgeVerdict::Rule::kConflictToken: return "conflict-token";
    case JudgeVerdict::Rule::kBothAnswers: return "both-answers";
    case JudgeVerdict::Rule::kNone: return "none";
  }
  return "?";
}

JudgeVerdict judge(std::span<const int> response, const ConflictInstance& instance,
                   const Vocab& vocab) {
  JudgeVerdict verdict;
  for (int t : response) {
    if (vocab.value_index(t) >= 0) verdict.extracted.push_back(t);
  }
  if (contains(response, vocab.conflict())) {
    verdict.detected = true;
    verdict.rule = JudgeVerdict::Rule::kConflictToken;
  } else if (contains(response, instance.answer_token) &&
             contains(response, instance.conflicting_token)) {
    verdict.detected = true;
    verdict.rule = JudgeVerdict::Rule::kBothAnswers;
  }
  return verdict;
}

double detection_rate(std::span<const JudgeVerdict> verdicts) {
  if (verdicts.empty()) throw std::invalid_argument("detection_rate: empty verdict set");
  int detected = 0;
  for (const auto& v : verdicts) detected += v.detected ? 1 : 0;
  return static_cast<double>(detected) / static_cast<double>(verdicts.size());
}

namespace {

bool control_answer_correct(const InstanceResult& result, const ConflictInstance& inst,
                            const Vocab& vocab) {
  if (inst.prompt_mode == PromptMode::kExplicit) {
    for (int t : result.generated) {
      if (t == vocab.yes()) return true;
      if (t == vocab.no()) return false;
    }
    return false;
  }
  for (int t : result.generated) {
    if (vocab.value_index(t) >= 0) return t == inst.answer_token;
  }
  return false;
}

double mean_group_mass(const ContributionRecord& record, const SpanMap& map,
                       SteerTarget target) {
  std::vector<SpanGroup> wanted;
  switch (target) {
    case SteerTarget::kEvidence1:
      wanted = {SpanGroup::kEvidence1};
      break;
    case SteerTarget::kEvidence2:
      wanted = {SpanGroup::kEvidence2};
      break;
    case SteerTarget::kDomainA:
    case SteerTarget::kDomainB: {
      const Domain d = target == SteerTarget::kDomainA ? Domain::kA : Domain::kB;
      if (map.span1_domain == d) wanted.push_back(SpanGroup::kEvidence1);
      if (map.span2_domain == d) wanted.push_back(SpanGroup::kEvidence2);
      break;
    }
  }
  double total = 0.0;
  int64_t n = 0;
  for (const auto& s : record.sites) {
    if (std::find(wanted.begin(), wanted.end(), s.group) == wanted.end()) continue;
    total += s.attn_mass;
    ++n;
  }
  // sites per group share a (layer, head, step) lattice, so dividing by the
  // per-group site count averages the summed group mass over sites
  const int64_t lattice = n / std::max<int64_t>(1, static_cast<int64_t>(wanted.size()));
  return lattice > 0 ? total / lattice : 0.0;
}

}  // namespace

InstanceResult evaluate_instance(const ModelParams& params, const Vocab& vocab,
                                 const ConflictInstance& instance,
                                 const EvalOptions& options) {
  InstanceResult result;
  result.id = instance.id;
  result.conflict = instance.conflict;
  result.order = instance.order;
  result.condition = instance.condition;
  result.mode = instance.prompt_mode;

  auto rendered = render_prompt(instance, instance.prompt_mode, vocab,
                                params.config.max_seq_len - options.max_new);
  HookSet steer_hooks;
  const HookSet* extra = nullptr;
  if (options.steer) {
    steer_hooks = attach(*options.steer, rendered.span_map);
    extra = &steer_hooks;
  }
  auto run = record_run(params, rendered.tokens, rendered.span_map, options.max_new,
                        vocab.eos(), extra);
  result.generated = run.generated;
  run.record.instance_id = instance.id;
  result.verdict = judge(run.generated, instance, vocab);
  if (!instance.conflict) {
    result.control_correct = control_answer_correct(result, instance, vocab);
  }
  if (instance.condition == Condition::kCross) {
    try {
      auto rep = imbalance(run.record, options.agg);
      result.imbalance = rep.instances.front();
    } catch (const std::exception&) {
      // degenerate record (all-zero norms); leave imbalance unset
    }
  }
  if (options.steer) {
    result.target_mass = mean_group_mass(run.record, rendered.span_map,
                                         options.steer->target);
  }
  return result;
}

namespace {

CellStats cell_from_results(std::span<const InstanceResult* const> results) {
  CellStats stats;
  stats.n = static_cast<int>(results.size());
  double imb = 0.0, ua = 0.0, ub = 0.0, pa = 0.0, pb = 0.0;
  int n_imb = 0;
  int detected = 0, false_alarms = 0, correct = 0;
  for (const auto* r : results) {
    if (r->conflict) {
      ++stats.n_conflict;
      detected += r->verdict.detected ? 1 : 0;
    } else {
      ++stats.n_control;
      false_alarms += r->verdict.detected ? 1 : 0;
      correct += r->control_correct ? 1 : 0;
    }
    if (r->imbalance) {
      ++n_imb;
      imb += r->imbalance->imbalance;
      ua += r->imbalance->u_mean_a;
      ub += r->imbalance->u_mean_b;
      pa += r->imbalance->mean_presoftmax_a;
      pb += r->imbalance->mean_presoftmax_b;
    }
  }
  if (stats.n_conflict > 0) {
    stats.detection_rate = static_cast<double>(detected) / stats.n_conflict;
  }
  if (stats.n_control > 0) {
    stats.false_alarm_rate = static_cast<double>(false_alarms) / stats.n_control;
    stats.control_accuracy = static_cast<double>(correct) / stats.n_control;
  }
  if (n_imb > 0) {
    stats.has_imbalance = true;
    stats.mean_imbalance = imb / n_imb;
    stats.mean_u_a = ua / n_imb;
    stats.mean_u_b = ub / n_imb;
    stats.mean_presoftmax_a = pa / n_imb;
    stats.mean_presoftmax_b = pb / n_imb;
  }
  return stats;
}

}  // namespace

const EvalCell* EvalReport::find(Condition c, PromptMode m, SpanOrder o) const {
  for (const auto& cell : cells) {
    if (cell.condition == c && cell.mode == m && cell.order == o) return &cell;
  }
  return nullptr;
}

EvalReport run_condition_grid(const ModelParams& params, const Vocab& vocab,
                              std::span<const std::vector<ConflictInstance>> eval_sets,
                              const EvalOptions& options) {
  std::vector<const ConflictInstance*> instances;
  for (const auto& set : eval_sets) {
    for (const auto& inst : set) instances.push_back(&inst);
  }
  if (instances.empty()) throw std::invalid_argument("run_condition_grid: no instances");

  std::vector<InstanceResult> results(instances.size());
  parallel_for(static_cast<int>(instances.size()), options.workers, [&](int i) {
    results[i] = evaluate_instance(params, vocab, *instances[i], options);
  });

  EvalReport report;
  report.meta.checkpoint_id = checkpoint_id(params, 0);
  report.meta.steer = options.steer;
  nlohmann::json options_json{{"max_new", options.max_new}};
  if (options.steer) options_json["steer"] = options.steer->to_json();
  report.meta.config_hash = hex64(fnv1a64(options_json.dump()));
  report.meta.run_id =
      hex64(fnv1a64(report.meta.checkpoint_id + ":" + options_json.dump()));

  for (int c = 0; c < 3; ++c) {
    for (int m = 0; m < 3; ++m) {
      std::vector<const InstanceResult*> in_cell;
      for (const auto& r : results) {
        if (static_cast<int>(r.condition) == c && static_cast<int>(r.mode) == m) {
          in_cell.push_back(&r);
        }
      }
      if (in_cell.empty()) continue;
      EvalCell all;
      all.condition = static_cast<Condition>(c);
      all.mode = static_cast<PromptMode>(m);
      all.order = SpanOrder::kNA;
      all.stats = cell_from_results(in_cell);
      report.cells.push_back(all);
      if (all.condition == Condition::kCross) {
        for (SpanOrder o : {SpanOrder::kAFirst, SpanOrder::kBFirst}) {
          std::vector<const InstanceResult*> sub;
          for (const auto* r : in_cell) {
            if (r->order == o) sub.push_back(r);
          }
          if (sub.empty()) continue;
          EvalCell cell;
          cell.condition = all.condition;
          cell.mode = all.mode;
          cell.order = o;
          cell.stats = cell_from_results(sub);
          report.cells.push_back(cell);
        }
      }
    }
  }
  return report;
}

namespace {

nlohmann::json stats_to_json(const CellStats& s) {
  return nlohmann::json{{"n", s.n},
                        {"n_conflict", s.n_conflict},
                        {"n_control", s.n_control},
                        {"detection_rate", s.detection_rate},
                        {"false_alarm_rate", s.false_alarm_rate},
                        {"control_accuracy", s.control_accuracy},
                        {"has_imbalance", s.has_imbalance},
                        {"mean_imbalance", s.mean_imbalance},
                        {"mean_u_a", s.mean_u_a},
                        {"mean_u_b", s.mean_u_b},
                        {"mean_presoftmax_a", s.mean_presoftmax_a},
                        {"mean_presoftmax_b", s.mean_presoftmax_b}};
}

CellStats stats_from_json(const nlohmann::json& j) {
  CellStats s;
  j.at("n").get_to(s.n);
  j.at("n_conflict").get_to(s.n_conflict);
  j.at("n_control").get_to(s.n_control);
  j.at("detection_rate").get_to(s.detection_rate);
  j.at("false_alarm_rate").get_to(s.false_alarm_rate);
  j.at("control_accuracy").get_to(s.control_accuracy);
  j.at("has_imbalance").get_to(s.has_imbalance);
  j.at("mean_imbalance").get_to(s.mean_imbalance);
  j.at("mean_u_a").get_to(s.mean_u_a);
  j.at("mean_u_b").get_to(s.mean_u_b);
  j.at("mean_presoftmax_a").get_to(s.mean_presoftmax_a);
  j.at("mean_presoftmax_b").get_to(s.mean_presoftmax_b);
  return s;
}

nlohmann::json meta_to_json(const RunMeta& m) {
  nlohmann::json j{{"run_id", m.run_id},
                   {"checkpoint_id", m.checkpoint_id},
                   {"config_hash", m.config_hash},
                   {"seed", m.seed}};
  if (m.steer) j["steer"] = m.steer->to_json();
  return j;
}

RunMeta meta_from_json(const nlohmann::json& j) {
  RunMeta m;
  j.at("run_id").get_to(m.run_id);
  j.at("checkpoint_id").get_to(m.checkpoint_id);
  j.at("config_hash").get_to(m.config_hash);
  j.at("seed").get_to(m.seed);
  if (j.contains("steer")) m.steer = SteerSpec::from_json(j.at("steer"));
  return m;
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  nlohmann::json cells_json = nlohmann::json::array();
  for (const auto& cell : cells) {
    cells_json.push_back({{"condition", condition_name(cell.condition)},
                          {"prompt_mode", prompt_mode_name(cell.mode)},
                          {"order", span_order_name(cell.order)},
                          {"stats", stats_to_json(cell.stats)}});
  }
  return nlohmann::json{{"meta", meta_to_json(meta)}, {"cells", std::move(cells_json)}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport report;
  report.meta = meta_from_json(j.at("meta"));
  for (const auto& cj : j.at("cells")) {
    EvalCell cell;
    cell.condition = condition_from_name(cj.at("condition").get<std::string>());
    cell.mode = prompt_mode_from_name(cj.at("prompt_mode").get<std::string>());
    const std::string order = cj.at("order").get<std::string>();
    cell.order = order == "A-first" ? SpanOrder::kAFirst
                 : order == "B-first" ? SpanOrder::kBFirst
                                      : SpanOrder::kNA;
    cell.stats = stats_from_json(cj.at("stats"));
    report.cells.push_back(cell);
  }
  return report;
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "condition,prompt_mode,order,n,n_conflict,n_control,detection_rate,"
        "false_alarm_rate,control_accuracy,mean_imbalance,mean_u_a,mean_u_b,"
        "mean_presoftmax_a,mean_presoftmax_b\n";
  for (const auto& cell : cells) {
    const auto& s = cell.stats;
    os << condition_name(cell.condition) << "," << prompt_mode_name(cell.mode) << ","
       << span_order_name(cell.order) << "," << s.n << "," << s.n_conflict << ","
       << s.n_control << "," << s.detection_rate << "," << s.false_alarm_rate << ","
       << s.control_accuracy << "," << s.mean_imbalance << "," << s.mean_u_a << ","
       << s.mean_u_b << "," << s.mean_presoftmax_a << "," << s.mean_presoftmax_b << "\n";
  }
  return os.str();
}

std::vector<double> default_epsilon_grid() {
  std::vector<double> grid;
  for (int i = -4; i <= 4; ++i) grid.push_back(i * 0.25);
  return grid;
}

Domain lower_u_domain(const ContributionRecord& record, const AggregationSpec& spec) {
  const SpanGroup group_a = record.span1_domain == Domain::kA ? SpanGroup::kEvidence1
                                                              : SpanGroup::kEvidence2;
  double sum_a = 0.0, sum_b = 0.0;
  auto included = [](const std::vector<int>& filter, int x) {
    return filter.empty() || std::find(filter.begin(), filter.end(), x) != filter.end();
  };
  for (const auto& s : record.sites) {
    if (s.group != SpanGroup::kEvidence1 && s.group != SpanGroup::kEvidence2) continue;
    if (!included(spec.layers, s.layer) || !included(spec.heads, s.head)) continue;
    if (s.group == group_a) sum_a += s.u_norm;
    else sum_b += s.u_norm;
  }
  return sum_a <= sum_b ? Domain::kA : Domain::kB;
}

SweepResult run_epsilon_sweep(const ModelParams& params, const Vocab& vocab,
                              std::span<const ConflictInstance> cross_set,
                              std::vector<double> grid, const EvalOptions& base) {
  if (cross_set.empty()) throw std::invalid_argument("run_epsilon_sweep: empty eval set");
  for (size_t i = 1; i < grid.size(); ++i) {
    if (grid[i] <= grid[i - 1]) {
      throw std::invalid_argument("run_epsilon_sweep: grid must be strictly increasing");
    }
  }
  if (std::find(grid.begin(), grid.end(), 0.0) == grid.end()) {
    throw std::invalid_argument("run_epsilon_sweep: grid must include epsilon = 0");
  }
  for (const auto& inst : cross_set) {
    if (inst.condition != Condition::kCross) {
      throw std::invalid_argument("run_epsilon_sweep: eval set must be cross-condition");
    }
  }

  const int n = static_cast<int>(cross_set.size());
  const int k = static_cast<int>(grid.size());

  // per-instance steering target from an unsteered probe pass
  std::vector<Domain> targets(n, Domain::kA);
  {
    EvalOptions probe_opts = base;
    probe_opts.steer.reset();
    parallel_for(n, base.workers, [&](int i) {
      auto rendered = render_prompt(cross_set[i], cross_set[i].prompt_mode, vocab,
                                    params.config.max_seq_len - base.max_new);
      auto run = record_run(params, rendered.tokens, rendered.span_map, base.max_new,
                            vocab.eos(), nullptr);
      targets[i] = lower_u_domain(run.record, base.agg);
    });
  }

  std::vector<std::vector<InstanceResult>> per_eps(k,
                                                   std::vector<InstanceResult>(n));
  parallel_for(n, base.workers, [&](int i) {
    for (int e = 0; e < k; ++e) {
      EvalOptions opts = base;
      SteerSpec spec;
      spec.target = targets[i] == Domain::kA ? SteerTarget::kDomainA
                                             : SteerTarget::kDomainB;
      spec.epsilon = grid[e];
      opts.steer = spec;
      per_eps[e][i] = evaluate_instance(params, vocab, cross_set[i], opts);
    }
  });

  SweepResult result;
  result.grid = grid;
  result.meta.checkpoint_id = checkpoint_id(params, 0);
  result.meta.run_id = hex64(
      fnv1a64(result.meta.checkpoint_id + ":sweep:" + std::to_string(grid.size())));
  result.meta.config_hash = hex64(fnv1a64(nlohmann::json(grid).dump()));
  for (int e = 0; e < k; ++e) {
    SweepPoint point;
    point.epsilon = grid[e];
    std::vector<JudgeVerdict> conflicts, controls;
    double mass = 0.0;
    for (const auto& r : per_eps[e]) {
      (r.conflict ? conflicts : controls).push_back(r.verdict);
      mass += r.target_mass;
    }
    point.mean_target_mass = mass / n;
    if (!conflicts.empty()) point.detection_rate = detection_rate(conflicts);
    if (!controls.empty()) {
      int fa = 0;
      for (const auto& v : controls) fa += v.detected ? 1 : 0;
      point.false_alarm_rate = static_cast<double>(fa) / controls.size();
    }
    result.points.push_back(point);
  }
  return result;
}

nlohmann::json SweepResult::to_json() const {
  nlohmann::json points_json = nlohmann::json::array();
  for (const auto& p : points) {
    points_json.push_back({{"epsilon", p.epsilon},
                           {"detection_rate", p.detection_rate},
                           {"false_alarm_rate", p.false_alarm_rate},
                           {"mean_target_mass", p.mean_target_mass}});
  }
  return nlohmann::json{{"meta", meta_to_json(meta)},
                        {"grid", grid},
                        {"points", std::move(points_json)}};
}

std::string SweepResult::to_csv() const {
  std::ostringstream os;
  os << "epsilon,detection_rate,false_alarm_rate,mean_target_mass\n";
  for (const auto& p : points) {
    os << p.epsilon << "," << p.detection_rate << "," << p.false_alarm_rate << ","
       << p.mean_target_mass << "\n";
  }
  return os.str();
}

namespace {

ArmResult evaluate_arm(MixMode mode, const TrainResult& trained,
                       std::span<const std::vector<ConflictInstance>> eval_sets,
                       const Vocab& vocab, const EvalOptions& eval_opts) {
  ArmResult arm;
  arm.mode = mode;
  arm.steps_run = trained.steps_run;
  arm.supervised_tokens = trained.supervised_tokens;
  arm.checkpoint_id = checkpoint_id(trained.params, trained.steps_run);
  arm.report = run_condition_grid(trained.params, vocab, eval_sets, eval_opts);
  auto pick = [&](Condition c) -> const EvalCell* {
    const EvalCell* cell = arm.report.find(c, PromptMode::kStandard, SpanOrder::kNA);
    if (cell) return cell;
    for (const auto& candidate : arm.report.cells) {
      if (candidate.condition == c && candidate.order == SpanOrder::kNA) return &candidate;
    }
    return nullptr;
  };
  if (const auto* cross = pick(Condition::kCross)) {
    arm.cross_detection = cross->stats.detection_rate;
    arm.cross_false_alarm = cross->stats.false_alarm_rate;
    arm.cross_imbalance = cross->stats.mean_imbalance;
  }
  if (const auto* ua = pick(Condition::kUniA)) arm.uni_a_detection = ua->stats.detection_rate;
  if (const auto* ub = pick(Condition::kUniB)) arm.uni_b_detection = ub->stats.detection_rate;
  return arm;
}

}  // namespace

ComparisonResult run_mixing_comparison(const ItemCorpus& a, const ItemCorpus& b,
                                       std::span<const std::vector<ConflictInstance>> eval_sets,
                                       const TrainConfig& base,
                                       std::span<const uint64_t> seeds,
                                       const Vocab& vocab,
                                       const ComparisonOptions& options) {
  if (seeds.size() < 3) {
    throw std::invalid_argument("run_mixing_comparison: at least 3 seeds required");
  }
  ComparisonResult result;
  for (uint64_t seed : seeds) {
    SeedComparison row;
    row.seed = seed;

    TrainConfig cfg = base;
    cfg.seed = mix_seed(seed, "train");
    cfg.model.seed = mix_seed(seed, "model");
    cfg.token_budget = 0;

    auto dataset_mix = mix_dataset_level(a, b, vocab, mix_seed(seed, "mix"));
    if (options.progress) options.progress(0, static_cast<double>(seed));
    auto dataset_trained = train(cfg, dataset_mix, vocab, options.progress);

    TrainConfig instance_cfg = cfg;
    instance_cfg.token_budget = dataset_trained.supervised_tokens;
    auto instance_mix = mix_instance_level(a, b, vocab, mix_seed(seed, "mix"));
    auto instance_trained = train(instance_cfg, instance_mix, vocab, options.progress);

    row.dataset = evaluate_arm(MixMode::kDatasetLevel, dataset_trained, eval_sets, vocab,
                               options.eval);
    row.instance = evaluate_arm(MixMode::kInstanceLevel, instance_trained, eval_sets,
                                vocab, options.eval);
    row.dataset.report.meta.seed = seed;
    row.instance.report.meta.seed = seed;
    if (options.keep_checkpoints) {
      result.checkpoints.emplace_back(std::move(dataset_trained.params),
                                      std::move(instance_trained.params));
    }
    result.per_seed.push_back(std::move(row));
  }

  auto& s = result.summary;
  s.n_seeds = static_cast<int>(result.per_seed.size());
  for (const auto& row : result.per_seed) {
    s.mean_detection_dataset += row.dataset.cross_detection;
    s.mean_detection_instance += row.instance.cross_detection;
    s.mean_imbalance_dataset += row.dataset.cross_imbalance;
    s.mean_imbalance_instance += row.instance.cross_imbalance;
    if (row.instance.cross_detection > row.dataset.cross_detection) {
      ++s.detection_wins_instance;
    }
    if (row.instance.cross_imbalance < row.dataset.cross_imbalance) {
      ++s.imbalance_wins_instance;
    }
  }
  s.mean_detection_dataset /= s.n_seeds;
  s.mean_detection_instance /= s.n_seeds;
  s.mean_imbalance_dataset /= s.n_seeds;
  s.mean_imbalance_instance /= s.n_seeds;
  return result;
}

namespace {

nlohmann::json arm_to_json(const ArmResult& arm) {
  return nlohmann::json{{"mode", mix_mode_name(arm.mode)},
                        {"steps_run", arm.steps_run},
                        {"supervised_tokens", arm.supervised_tokens},
                        {"checkpoint_id", arm.checkpoint_id},
                        {"cross_detection", arm.cross_detection},
                        {"cross_false_alarm", arm.cross_false_alarm},
                        {"cross_imbalance", arm.cross_imbalance},
                        {"uni_a_detection", arm.uni_a_detection},
                        {"uni_b_detection", arm.uni_b_detection},
                        {"report", arm.report.to_json()}};
}

}  // namespace

nlohmann::json ComparisonResult::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : per_seed) {
    rows.push_back({{"seed", row.seed},
                    {"dataset", arm_to_json(row.dataset)},
                    {"instance", arm_to_json(row.instance)}});
  }
  return nlohmann::json{
      {"per_seed", std::move(rows)},
      {"summary",
       {{"n_seeds", summary.n_seeds},
        {"mean_detection_dataset", summary.mean_detection_dataset},
        {"mean_detection_instance", summary.mean_detection_instance},
        {"mean_imbalance_dataset", summary.mean_imbalance_dataset},
        {"mean_imbalance_instance", summary.mean_imbalance_instance},
        {"detection_wins_instance", summary.detection_wins_instance},
        {"imbalance_wins_instance", summary.imbalance_wins_instance}}}};
}

std::string ComparisonResult::to_csv() const {
  std::ostringstream os;
  os << "seed,arm,steps_run,supervised_tokens,cross_detection,cross_false_alarm,"
        "cross_imbalance,uni_a_detection,uni_b_detection\n";
  for (const auto& row : per_seed) {
    for (const ArmResult* arm : {&row.dataset, &row.instance}) {
      os << row.seed << "," << mix_mode_name(arm->mode) << "," << arm->steps_run << ","
         << arm->supervised_tokens << "," << arm->cross_detection << ","
         << arm->cross_false_alarm << "," << arm->cross_imbalance << ","
         << arm->uni_a_detection << "," << arm->uni_b_detection << "\n";
    }
  }
  os << "summary,instance-mean-vs-dataset-mean," << summary.n_seeds << ",,"
     << summary.mean_detection_instance - summary.mean_detection_dataset << ",,"
     << summary.mean_imbalance_instance - summary.mean_imbalance_dataset << ",,\n";
  return os.str();
}

}  // namespace xattn
