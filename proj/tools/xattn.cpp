// xattn: conflict-detection laboratory for toy transformers.
// Subcommands: gen | train | eval | probe | sweep | compare | report

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xattn/evalharness.hpp"
#include "xattn/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xattn;

namespace {

// Applies a JSON config file underneath command-line flags: flags win,
// unknown keys are errors naming the key.
class ConfigBinder {
 public:
  explicit ConfigBinder(CLI::App* cmd) : cmd_(cmd) {}

  template <typename T>
  void bind(const std::string& key, T& field) {
    setters_[key] = [&field, key](const json& v) {
      try {
        field = v.get<T>();
      } catch (const std::exception& e) {
        throw std::invalid_argument("config: bad value for key \"" + key + "\": " + e.what());
      }
    };
  }

  void apply_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw std::invalid_argument("config: " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
    for (const auto& [key, value] : j.items()) {
      auto it = setters_.find(key);
      if (it == setters_.end()) {
        throw std::invalid_argument("config: unknown key \"" + key + "\" for command " +
                                    cmd_->get_name());
      }
      if (cmd_->count("--" + key) > 0) continue;  // flags override file values
      it->second(value);
    }
  }

 private:
  CLI::App* cmd_;
  std::map<std::string, std::function<void(const json&)>> setters_;
};

std::string out_dir_resolve(CLI::App* cmd, std::string out, const std::string& fallback) {
  if (cmd->count("--out") == 0) {
    if (const char* env = std::getenv("XATTN_OUT")) return env;
    if (out.empty()) return fallback;
  }
  return out.empty() ? fallback : out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_resolved(const fs::path& dir, const std::string& cmd, const json& resolved) {
  json j = resolved;
  j["command"] = cmd;
  j["config_hash"] = [&] {
    std::ostringstream os;
    os << std::hex << fnv1a64(resolved.dump());
    return os.str();
  }();
  write_text(dir / (cmd + ".resolved.json"), j.dump(2) + "\n");
}

FactWorld load_world(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open world manifest: " + path);
  json j;
  in >> j;
  return FactWorld::from_manifest(j);
}

std::optional<std::vector<int>> parse_site_list(const std::string& s) {
  if (s.empty() || s == "all") return std::nullopt;
  if (s == "none") return std::vector<int>{};
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

// ---------------------------------------------------------------- gen ----

struct GenOpts {
  uint64_t seed = 0;
  int entities = 192;
  int name_tokens = 14;
  int values = 16;
  double eval_fraction = 1.0 / 3.0;
  int eval_n = 48;
  double conflict_ratio = 0.5;
  int corpus_n = 4000;
  double conflict_fraction = 0.1;
  std::vector<std::string> conditions{"uni-A", "uni-B", "cross"};
  std::vector<std::string> modes{"standard"};
  bool force = false;
  std::string out;
};

json gen_resolved(const GenOpts& o) {
  return json{{"seed", o.seed},
              {"entities", o.entities},
              {"name-tokens", o.name_tokens},
              {"values", o.values},
              {"eval-fraction", o.eval_fraction},
              {"eval-n", o.eval_n},
              {"conflict-ratio", o.conflict_ratio},
              {"corpus-n", o.corpus_n},
              {"conflict-fraction", o.conflict_fraction},
              {"conditions", o.conditions},
              {"modes", o.modes},
              {"out", o.out}};
}

int run_gen(const GenOpts& o) {
  fs::create_directories(o.out);
  const fs::path dir(o.out);
  if (fs::exists(dir / "world.json") && !o.force) {
    throw std::runtime_error("refusing to overwrite existing outputs in " + o.out +
                             " (use --force)");
  }
  WorldConfig wc;
  wc.seed = o.seed;
  wc.n_entities = o.entities;
  wc.name_tokens = o.name_tokens;
  wc.n_values = o.values;
  wc.eval_fraction = o.eval_fraction;
  auto world = build_world(wc);
  write_text(dir / "world.json", world.manifest().dump(2) + "\n");

  int files = 0;
  for (const auto& cond_name : o.conditions) {
    const Condition cond = condition_from_name(cond_name);
    for (const auto& mode_name : o.modes) {
      const PromptMode mode = prompt_mode_from_name(mode_name);
      auto set = gen_eval_set(world, cond, o.eval_n, o.conflict_ratio, mode,
                              mix_seed(o.seed, "eval-" + cond_name + "-" + mode_name));
      const std::string name = "eval_" + cond_name + "_" + mode_name + ".jsonl";
      write_eval_jsonl((dir / name).string(), set, world.vocab);
      std::cout << name << ": " << set.size() << " instances\n";
      ++files;
    }
  }
  auto corpus_a = gen_instruction_corpus(world, Domain::kA, o.corpus_n,
                                         o.conflict_fraction, o.seed);
  auto corpus_b = gen_instruction_corpus(world, Domain::kB, o.corpus_n,
                                         o.conflict_fraction, o.seed);
  write_items_jsonl((dir / "corpus_a.jsonl").string(), corpus_a, world.vocab);
  write_items_jsonl((dir / "corpus_b.jsonl").string(), corpus_b, world.vocab);
  std::cout << "corpus_a.jsonl: " << corpus_a.size() << " items\n";
  std::cout << "corpus_b.jsonl: " << corpus_b.size() << " items\n";
  std::cout << "world.json: " << world.entities.size() << " entities, vocab "
            << world.vocab.size() << ", " << files << " eval files\n";
  write_resolved(dir, "gen", gen_resolved(o));
  return 0;
}

// -------------------------------------------------------------- train ----

struct TrainOpts {
  std::string world;
  std::string corpus_a;
  std::string corpus_b;
  std::string mix = "dataset";
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double clip = 1.0;
  int batch = 32;
  int steps = 3000;
  int eval_every = 100;
  int checkpoint_every = 0;
  uint64_t seed = 0;
  int64_t token_budget = 0;
  int layers = 4, heads = 4, d_model = 128, d_head = 32, d_ff = 512, max_seq = 256;
  std::string out;
  bool quiet = false;
};

json train_resolved(const TrainOpts& o) {
  return json{{"world", o.world},       {"corpus-a", o.corpus_a},
              {"corpus-b", o.corpus_b}, {"mix", o.mix},
              {"lr", o.lr},             {"beta1", o.beta1},
              {"beta2", o.beta2},       {"weight-decay", o.weight_decay},
              {"clip", o.clip},         {"batch", o.batch},
              {"steps", o.steps},       {"eval-every", o.eval_every},
              {"checkpoint-every", o.checkpoint_every},
              {"seed", o.seed},         {"token-budget", o.token_budget},
              {"layers", o.layers},     {"heads", o.heads},
              {"d-model", o.d_model},   {"d-head", o.d_head},
              {"d-ff", o.d_ff},         {"max-seq", o.max_seq},
              {"out", o.out}};
}

MixedCorpus build_mix(const TrainOpts& o, const FactWorld& world) {
  const MixMode mode = mix_mode_from_name(o.mix);
  const bool need_a = mode != MixMode::kBOnly;
  const bool need_b = mode != MixMode::kAOnly;
  ItemCorpus a, b;
  if (need_a) {
    if (o.corpus_a.empty()) throw std::invalid_argument("--corpus-a is required for mix " + o.mix);
    a = read_items_jsonl(o.corpus_a, world.vocab);
  }
  if (need_b) {
    if (o.corpus_b.empty()) throw std::invalid_argument("--corpus-b is required for mix " + o.mix);
    b = read_items_jsonl(o.corpus_b, world.vocab);
  }
  switch (mode) {
    case MixMode::kAOnly: return single_domain_corpus(a, world.vocab, mix_seed(o.seed, "mix"));
    case MixMode::kBOnly: return single_domain_corpus(b, world.vocab, mix_seed(o.seed, "mix"));
    case MixMode::kDatasetLevel: return mix_dataset_level(a, b, world.vocab, mix_seed(o.seed, "mix"));
    case MixMode::kInstanceLevel: return mix_instance_level(a, b, world.vocab, mix_seed(o.seed, "mix"));
  }
  throw std::logic_error("unreachable");
}

int run_train(const TrainOpts& o) {
  auto world = load_world(o.world);
  auto corpus = build_mix(o, world);
  TrainConfig cfg;
  cfg.lr = o.lr;
  cfg.beta1 = o.beta1;
  cfg.beta2 = o.beta2;
  cfg.weight_decay = o.weight_decay;
  cfg.grad_clip = o.clip;
  cfg.batch_size = o.batch;
  cfg.steps = o.steps;
  cfg.eval_every = o.eval_every;
  cfg.checkpoint_every = o.checkpoint_every;
  cfg.seed = mix_seed(o.seed, "train");
  cfg.token_budget = o.token_budget;
  cfg.model.n_layers = o.layers;
  cfg.model.n_heads = o.heads;
  cfg.model.d_model = o.d_model;
  cfg.model.d_head = o.d_head;
  cfg.model.d_ff = o.d_ff;
  cfg.model.max_seq_len = o.max_seq;
  cfg.model.vocab_size = world.vocab.size();
  cfg.model.seed = mix_seed(o.seed, "model");

  fs::create_directories(o.out);
  const fs::path dir(o.out);
  ProgressFn progress;
  if (!o.quiet) {
    progress = [&](int step, double loss) {
      if (step % 100 == 0 || step == 1) {
        std::cout << "step " << step << " loss " << loss << "\n";
      }
    };
  }
  auto result = train(cfg, corpus, world.vocab, progress, (dir / "checkpoint.xatn").string());
  write_text(dir / "loss_curve.csv", loss_curve_csv(result.curve));
  write_resolved(dir, "train", train_resolved(o));
  std::cout << "trained " << result.steps_run << " steps, " << result.supervised_tokens
            << " supervised tokens, final loss " << result.curve.back().train_loss << "\n"
            << "checkpoint: " << (dir / "checkpoint.xatn").string() << "\n";
  return 0;
}

// --------------------------------------------------------------- eval ----

struct EvalOpts {
  std::string checkpoint;
  std::string world;
  std::vector<std::string> eval_sets;
  std::string steer_group;
  double epsilon = 0.0;
  std::string layers = "all";
  std::string heads = "all";
  int max_new = 6;
  int workers = 1;
  uint64_t seed = 0;
  std::string out;
};

json eval_resolved(const EvalOpts& o) {
  return json{{"checkpoint", o.checkpoint}, {"world", o.world},
              {"eval-set", o.eval_sets},    {"steer-group", o.steer_group},
              {"epsilon", o.epsilon},       {"layers", o.layers},
              {"heads", o.heads},           {"max-new", o.max_new},
              {"workers", o.workers},       {"seed", o.seed},
              {"out", o.out}};
}

int run_eval(const EvalOpts& o) {
  auto world = load_world(o.world);
  auto ck = load_checkpoint(o.checkpoint);
  if (ck.params.config.vocab_size != world.vocab.size()) {
    throw std::runtime_error("checkpoint vocab_size " +
                             std::to_string(ck.params.config.vocab_size) +
                             " does not match world vocabulary " +
                             std::to_string(world.vocab.size()));
  }
  std::vector<std::vector<ConflictInstance>> sets;
  for (const auto& path : o.eval_sets) sets.push_back(read_eval_jsonl(path, world.vocab));
  if (sets.empty()) throw std::invalid_argument("at least one --eval-set is required");

  EvalOptions opts;
  opts.max_new = o.max_new;
  opts.workers = o.workers;
  if (!o.steer_group.empty()) {
    SteerSpec spec;
    spec.target = steer_target_from_name(o.steer_group);
    spec.epsilon = o.epsilon;
    spec.layers = parse_site_list(o.layers);
    spec.heads = parse_site_list(o.heads);
    opts.steer = spec;
  }
  auto report = run_condition_grid(ck.params, world.vocab, sets, opts);
  report.meta.seed = o.seed;
  fs::create_directories(o.out);
  const fs::path dir(o.out);
  write_text(dir / "eval_report.json", report.to_json().dump(2) + "\n");
  write_text(dir / "eval_report.csv", report.to_csv());
  write_resolved(dir, "eval", eval_resolved(o));
  std::cout << report.to_csv();
  return 0;
}

// -------------------------------------------------------------- probe ----

struct ProbeOpts {
  std::string checkpoint;
  std::string world;
  std::string eval_set;
  int max_new = 6;
  int workers = 1;
  std::string layers = "all";
  std::string heads = "all";
  std::string out;
};

json probe_resolved(const ProbeOpts& o) {
  return json{{"checkpoint", o.checkpoint}, {"world", o.world}, {"eval-set", o.eval_set},
              {"max-new", o.max_new},       {"workers", o.workers},
              {"layers", o.layers},         {"heads", o.heads},
              {"out", o.out}};
}

int run_probe(const ProbeOpts& o) {
  auto world = load_world(o.world);
  auto ck = load_checkpoint(o.checkpoint);
  auto set = read_eval_jsonl(o.eval_set, world.vocab);
  if (set.empty()) throw std::invalid_argument("probe: empty eval set");

  AggregationSpec agg;
  if (auto l = parse_site_list(o.layers)) agg.layers = *l;
  if (auto h = parse_site_list(o.heads)) agg.heads = *h;

  fs::create_directories(o.out);
  const fs::path dir(o.out);
  std::ofstream records(dir / "probe_records.jsonl", std::ios::binary);
  std::vector<ImbalanceReport> reports;
  for (const auto& inst : set) {
    auto rendered = render_prompt(inst, inst.prompt_mode, world.vocab,
                                  ck.params.config.max_seq_len - o.max_new);
    auto run = record_run(ck.params, rendered.tokens, rendered.span_map, o.max_new,
                          world.vocab.eos());
    run.record.instance_id = inst.id;
    records << run.record.to_json().dump() << "\n";
    if (inst.condition == Condition::kCross) {
      try {
        reports.push_back(imbalance(run.record, agg));
      } catch (const std::exception&) {
        // degenerate record; skip
      }
    }
  }
  if (reports.empty()) {
    throw std::runtime_error("probe: no cross-condition instances with a usable record");
  }
  auto merged = merge_imbalance(reports);
  write_text(dir / "probe_report.json", merged.to_json().dump(2) + "\n");
  write_text(dir / "probe_u_a.csv", merged.matrix_csv(Domain::kA));
  write_text(dir / "probe_u_b.csv", merged.matrix_csv(Domain::kB));
  write_resolved(dir, "probe", probe_resolved(o));
  std::cout << "probed " << set.size() << " instances (" << merged.instances.size()
            << " cross); mean imbalance " << merged.mean_imbalance << ", mean |u| A "
            << merged.mean_u_a << " vs B " << merged.mean_u_b << "\n";
  return 0;
}

// -------------------------------------------------------------- sweep ----

struct SweepOpts {
  std::string checkpoint;
  std::string world;
  std::string eval_set;
  std::string grid;  // comma list; empty = default -1..1 by 0.25
  int max_new = 6;
  int workers = 1;
  std::string out;
};

json sweep_resolved(const SweepOpts& o) {
  return json{{"checkpoint", o.checkpoint}, {"world", o.world}, {"eval-set", o.eval_set},
              {"grid", o.grid},             {"max-new", o.max_new},
              {"workers", o.workers},       {"out", o.out}};
}

int run_sweep(const SweepOpts& o) {
  auto world = load_world(o.world);
  auto ck = load_checkpoint(o.checkpoint);
  auto set = read_eval_jsonl(o.eval_set, world.vocab);
  std::vector<double> grid;
  if (o.grid.empty()) {
    grid = default_epsilon_grid();
  } else {
    std::stringstream ss(o.grid);
    std::string tok;
    while (std::getline(ss, tok, ',')) grid.push_back(std::stod(tok));
  }
  EvalOptions opts;
  opts.max_new = o.max_new;
  opts.workers = o.workers;
  auto sweep = run_epsilon_sweep(ck.params, world.vocab, set, grid, opts);
  fs::create_directories(o.out);
  const fs::path dir(o.out);
  write_text(dir / "sweep.json", sweep.to_json().dump(2) + "\n");
  write_text(dir / "sweep.csv", sweep.to_csv());
  write_resolved(dir, "sweep", sweep_resolved(o));
  std::cout << sweep.to_csv();
  return 0;
}

// ------------------------------------------------------------ compare ----

struct CompareOpts {
  std::string world;
  std::string corpus_a;
  std::string corpus_b;
  std::vector<std::string> eval_sets;
  std::vector<uint64_t> seeds{1, 2, 3};
  double lr = 3e-4;
  int batch = 32;
  int steps = 3000;
  int layers = 4, heads = 4, d_model = 128, d_head = 32, d_ff = 512, max_seq = 256;
  int max_new = 6;
  int workers = 1;
  bool save_checkpoints = false;
  bool quiet = false;
  std::string out;
};

json compare_resolved(const CompareOpts& o) {
  return json{{"world", o.world},     {"corpus-a", o.corpus_a},
              {"corpus-b", o.corpus_b}, {"eval-set", o.eval_sets},
              {"seeds", o.seeds},     {"lr", o.lr},
              {"batch", o.batch},     {"steps", o.steps},
              {"layers", o.layers},   {"heads", o.heads},
              {"d-model", o.d_model}, {"d-head", o.d_head},
              {"d-ff", o.d_ff},       {"max-seq", o.max_seq},
              {"max-new", o.max_new}, {"workers", o.workers},
              {"save-checkpoints", o.save_checkpoints},
              {"out", o.out}};
}

int run_compare(const CompareOpts& o) {
  auto world = load_world(o.world);
  auto a = read_items_jsonl(o.corpus_a, world.vocab);
  auto b = read_items_jsonl(o.corpus_b, world.vocab);
  std::vector<std::vector<ConflictInstance>> sets;
  for (const auto& path : o.eval_sets) sets.push_back(read_eval_jsonl(path, world.vocab));
  if (sets.empty()) throw std::invalid_argument("at least one --eval-set is required");

  TrainConfig base;
  base.lr = o.lr;
  base.batch_size = o.batch;
  base.steps = o.steps;
  base.eval_every = 0;
  base.model.n_layers = o.layers;
  base.model.n_heads = o.heads;
  base.model.d_model = o.d_model;
  base.model.d_head = o.d_head;
  base.model.d_ff = o.d_ff;
  base.model.max_seq_len = o.max_seq;
  base.model.vocab_size = world.vocab.size();

  ComparisonOptions copts;
  copts.eval.max_new = o.max_new;
  copts.eval.workers = o.workers;
  copts.keep_checkpoints = o.save_checkpoints;
  if (!o.quiet) {
    copts.progress = [](int step, double loss) {
      if (step > 0 && step % 200 == 0) {
        std::cout << "  step " << step << " loss " << loss << "\n";
      }
    };
  }
  auto result = run_mixing_comparison(a, b, sets, base, o.seeds, world.vocab, copts);
  fs::create_directories(o.out);
  const fs::path dir(o.out);
  write_text(dir / "compare.json", result.to_json().dump(2) + "\n");
  write_text(dir / "compare.csv", result.to_csv());
  if (o.save_checkpoints) {
    for (size_t i = 0; i < result.checkpoints.size(); ++i) {
      const auto seed = result.per_seed[i].seed;
      save_checkpoint(result.checkpoints[i].first, result.per_seed[i].dataset.steps_run,
                      nullptr,
                      (dir / ("seed" + std::to_string(seed) + "_dataset.xatn")).string());
      save_checkpoint(result.checkpoints[i].second, result.per_seed[i].instance.steps_run,
                      nullptr,
                      (dir / ("seed" + std::to_string(seed) + "_instance.xatn")).string());
    }
  }
  write_resolved(dir, "compare", compare_resolved(o));
  std::cout << result.to_csv();
  return 0;
}

// ------------------------------------------------------------- report ----

struct ReportOpts {
  std::string run_dir;
};

int run_report(const ReportOpts& o) {
  const fs::path dir(o.run_dir);
  bool found = false;
  for (const char* name : {"eval_report.json", "sweep.json", "compare.json",
                           "probe_report.json"}) {
    const fs::path path = dir / name;
    if (!fs::exists(path)) continue;
    found = true;
    std::ifstream in(path);
    json j;
    in >> j;
    std::cout << "== " << name << " ==\n";
    if (std::string(name) == "eval_report.json") {
      std::cout << EvalReport::from_json(j).to_csv();
    } else if (std::string(name) == "sweep.json") {
      std::cout << "epsilon,detection_rate,false_alarm_rate,mean_target_mass\n";
      for (const auto& p : j.at("points")) {
        std::cout << p.at("epsilon").get<double>() << ","
                  << p.at("detection_rate").get<double>() << ","
                  << p.at("false_alarm_rate").get<double>() << ","
                  << p.at("mean_target_mass").get<double>() << "\n";
      }
    } else if (std::string(name) == "compare.json") {
      const auto& s = j.at("summary");
      std::cout << "seeds: " << s.at("n_seeds").get<int>() << "\n"
                << "cross detection dataset vs instance: "
                << s.at("mean_detection_dataset").get<double>() << " vs "
                << s.at("mean_detection_instance").get<double>() << "\n"
                << "cross imbalance dataset vs instance: "
                << s.at("mean_imbalance_dataset").get<double>() << " vs "
                << s.at("mean_imbalance_instance").get<double>() << "\n"
                << "instance wins (detection/imbalance): "
                << s.at("detection_wins_instance").get<int>() << "/"
                << s.at("imbalance_wins_instance").get<int>() << "\n";
    } else {
      std::cout << "mean imbalance " << j.at("mean_imbalance").get<double>()
                << ", mean |u| A " << j.at("mean_u_a").get<double>() << " vs B "
                << j.at("mean_u_b").get<double>() << "\n";
    }
  }
  if (!found) {
    throw std::runtime_error("no report files found in " + o.run_dir);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attention-imbalance laboratory for toy transformers"};
  app.require_subcommand(1);

  GenOpts gen_opts;
  TrainOpts train_opts;
  EvalOpts eval_opts;
  ProbeOpts probe_opts;
  SweepOpts sweep_opts;
  CompareOpts compare_opts;
  ReportOpts report_opts;
  std::string config_path;

  auto* gen = app.add_subcommand("gen", "generate world, eval sets, and corpora");
  ConfigBinder gen_binder(gen);
  gen->add_option("--config", config_path, "JSON config file");
  gen->add_option("--seed", gen_opts.seed)->description("world seed");
  gen->add_option("--entities", gen_opts.entities);
  gen->add_option("--name-tokens", gen_opts.name_tokens);
  gen->add_option("--values", gen_opts.values);
  gen->add_option("--eval-fraction", gen_opts.eval_fraction);
  gen->add_option("--eval-n", gen_opts.eval_n);
  gen->add_option("--conflict-ratio", gen_opts.conflict_ratio);
  gen->add_option("--corpus-n", gen_opts.corpus_n);
  gen->add_option("--conflict-fraction", gen_opts.conflict_fraction);
  gen->add_option("--conditions", gen_opts.conditions)->delimiter(',');
  gen->add_option("--modes", gen_opts.modes)->delimiter(',');
  gen->add_flag("--force", gen_opts.force);
  gen->add_option("--out", gen_opts.out);
  gen_binder.bind("seed", gen_opts.seed);
  gen_binder.bind("entities", gen_opts.entities);
  gen_binder.bind("name-tokens", gen_opts.name_tokens);
  gen_binder.bind("values", gen_opts.values);
  gen_binder.bind("eval-fraction", gen_opts.eval_fraction);
  gen_binder.bind("eval-n", gen_opts.eval_n);
  gen_binder.bind("conflict-ratio", gen_opts.conflict_ratio);
  gen_binder.bind("corpus-n", gen_opts.corpus_n);
  gen_binder.bind("conflict-fraction", gen_opts.conflict_fraction);
  gen_binder.bind("conditions", gen_opts.conditions);
  gen_binder.bind("modes", gen_opts.modes);
  gen_binder.bind("out", gen_opts.out);

  auto* train_cmd = app.add_subcommand("train", "train a model on mixed corpora");
  ConfigBinder train_binder(train_cmd);
  train_cmd->add_option("--config", config_path);
  train_cmd->add_option("--world", train_opts.world);
  train_cmd->add_option("--corpus-a", train_opts.corpus_a);
  train_cmd->add_option("--corpus-b", train_opts.corpus_b);
  train_cmd->add_option("--mix", train_opts.mix)
      ->check(CLI::IsMember({"dataset", "instance", "a-only", "b-only"}));
  train_cmd->add_option("--lr", train_opts.lr);
  train_cmd->add_option("--beta1", train_opts.beta1);
  train_cmd->add_option("--beta2", train_opts.beta2);
  train_cmd->add_option("--weight-decay", train_opts.weight_decay);
  train_cmd->add_option("--clip", train_opts.clip);
  train_cmd->add_option("--batch", train_opts.batch);
  train_cmd->add_option("--steps", train_opts.steps);
  train_cmd->add_option("--eval-every", train_opts.eval_every);
  train_cmd->add_option("--checkpoint-every", train_opts.checkpoint_every);
  train_cmd->add_option("--seed", train_opts.seed);
  train_cmd->add_option("--token-budget", train_opts.token_budget);
  train_cmd->add_option("--layers", train_opts.layers);
  train_cmd->add_option("--heads", train_opts.heads);
  train_cmd->add_option("--d-model", train_opts.d_model);
  train_cmd->add_option("--d-head", train_opts.d_head);
  train_cmd->add_option("--d-ff", train_opts.d_ff);
  train_cmd->add_option("--max-seq", train_opts.max_seq);
  train_cmd->add_option("--out", train_opts.out);
  train_cmd->add_flag("--quiet", train_opts.quiet);
  train_binder.bind("world", train_opts.world);
  train_binder.bind("corpus-a", train_opts.corpus_a);
  train_binder.bind("corpus-b", train_opts.corpus_b);
  train_binder.bind("mix", train_opts.mix);
  train_binder.bind("lr", train_opts.lr);
  train_binder.bind("beta1", train_opts.beta1);
  train_binder.bind("beta2", train_opts.beta2);
  train_binder.bind("weight-decay", train_opts.weight_decay);
  train_binder.bind("clip", train_opts.clip);
  train_binder.bind("batch", train_opts.batch);
  train_binder.bind("steps", train_opts.steps);
  train_binder.bind("eval-every", train_opts.eval_every);
  train_binder.bind("checkpoint-every", train_opts.checkpoint_every);
  train_binder.bind("seed", train_opts.seed);
  train_binder.bind("token-budget", train_opts.token_budget);
  train_binder.bind("layers", train_opts.layers);
  train_binder.bind("heads", train_opts.heads);
  train_binder.bind("d-model", train_opts.d_model);
  train_binder.bind("d-head", train_opts.d_head);
  train_binder.bind("d-ff", train_opts.d_ff);
  train_binder.bind("max-seq", train_opts.max_seq);
  train_binder.bind("out", train_opts.out);

  auto* eval_cmd = app.add_subcommand("eval", "condition-grid evaluation of a checkpoint");
  ConfigBinder eval_binder(eval_cmd);
  eval_cmd->add_option("--config", config_path);
  eval_cmd->add_option("--checkpoint", eval_opts.checkpoint);
  eval_cmd->add_option("--world", eval_opts.world);
  eval_cmd->add_option("--eval-set", eval_opts.eval_sets);
  eval_cmd->add_option("--steer-group", eval_opts.steer_group)
      ->check(CLI::IsMember({"evidence-1", "evidence-2", "domain-A", "domain-B", ""}));
  eval_cmd->add_option("--epsilon", eval_opts.epsilon);
  eval_cmd->add_option("--layers", eval_opts.layers);
  eval_cmd->add_option("--heads", eval_opts.heads);
  eval_cmd->add_option("--max-new", eval_opts.max_new);
  eval_cmd->add_option("--workers", eval_opts.workers);
  eval_cmd->add_option("--seed", eval_opts.seed);
  eval_cmd->add_option("--out", eval_opts.out);
  eval_binder.bind("checkpoint", eval_opts.checkpoint);
  eval_binder.bind("world", eval_opts.world);
  eval_binder.bind("eval-set", eval_opts.eval_sets);
  eval_binder.bind("steer-group", eval_opts.steer_group);
  eval_binder.bind("epsilon", eval_opts.epsilon);
  eval_binder.bind("layers", eval_opts.layers);
  eval_binder.bind("heads", eval_opts.heads);
  eval_binder.bind("max-new", eval_opts.max_new);
  eval_binder.bind("workers", eval_opts.workers);
  eval_binder.bind("seed", eval_opts.seed);
  eval_binder.bind("out", eval_opts.out);

  auto* probe_cmd = app.add_subcommand("probe", "contribution records and imbalance matrices");
  ConfigBinder probe_binder(probe_cmd);
  probe_cmd->add_option("--config", config_path);
  probe_cmd->add_option("--checkpoint", probe_opts.checkpoint);
  probe_cmd->add_option("--world", probe_opts.world);
  probe_cmd->add_option("--eval-set", probe_opts.eval_set);
  probe_cmd->add_option("--max-new", probe_opts.max_new);
  probe_cmd->add_option("--workers", probe_opts.workers);
  probe_cmd->add_option("--layers", probe_opts.layers);
  probe_cmd->add_option("--heads", probe_opts.heads);
  probe_cmd->add_option("--out", probe_opts.out);
  probe_binder.bind("checkpoint", probe_opts.checkpoint);
  probe_binder.bind("world", probe_opts.world);
  probe_binder.bind("eval-set", probe_opts.eval_set);
  probe_binder.bind("max-new", probe_opts.max_new);
  probe_binder.bind("workers", probe_opts.workers);
  probe_binder.bind("layers", probe_opts.layers);
  probe_binder.bind("heads", probe_opts.heads);
  probe_binder.bind("out", probe_opts.out);

  auto* sweep_cmd = app.add_subcommand("sweep", "epsilon sweep with lower-|u| targeting");
  ConfigBinder sweep_binder(sweep_cmd);
  sweep_cmd->add_option("--config", config_path);
  sweep_cmd->add_option("--checkpoint", sweep_opts.checkpoint);
  sweep_cmd->add_option("--world", sweep_opts.world);
  sweep_cmd->add_option("--eval-set", sweep_opts.eval_set);
  sweep_cmd->add_option("--grid", sweep_opts.grid);
  sweep_cmd->add_option("--max-new", sweep_opts.max_new);
  sweep_cmd->add_option("--workers", sweep_opts.workers);
  sweep_cmd->add_option("--out", sweep_opts.out);
  sweep_binder.bind("checkpoint", sweep_opts.checkpoint);
  sweep_binder.bind("world", sweep_opts.world);
  sweep_binder.bind("eval-set", sweep_opts.eval_set);
  sweep_binder.bind("grid", sweep_opts.grid);
  sweep_binder.bind("max-new", sweep_opts.max_new);
  sweep_binder.bind("workers", sweep_opts.workers);
  sweep_binder.bind("out", sweep_opts.out);

  auto* compare_cmd = app.add_subcommand("compare", "dataset- vs instance-level mixing arms");
  ConfigBinder compare_binder(compare_cmd);
  compare_cmd->add_option("--config", config_path);
  compare_cmd->add_option("--world", compare_opts.world);
  compare_cmd->add_option("--corpus-a", compare_opts.corpus_a);
  compare_cmd->add_option("--corpus-b", compare_opts.corpus_b);
  compare_cmd->add_option("--eval-set", compare_opts.eval_sets);
  compare_cmd->add_option("--seeds", compare_opts.seeds)->delimiter(',');
  compare_cmd->add_option("--lr", compare_opts.lr);
  compare_cmd->add_option("--batch", compare_opts.batch);
  compare_cmd->add_option("--steps", compare_opts.steps);
  compare_cmd->add_option("--layers", compare_opts.layers);
  compare_cmd->add_option("--heads", compare_opts.heads);
  compare_cmd->add_option("--d-model", compare_opts.d_model);
  compare_cmd->add_option("--d-head", compare_opts.d_head);
  compare_cmd->add_option("--d-ff", compare_opts.d_ff);
  compare_cmd->add_option("--max-seq", compare_opts.max_seq);
  compare_cmd->add_option("--max-new", compare_opts.max_new);
  compare_cmd->add_option("--workers", compare_opts.workers);
  compare_cmd->add_flag("--save-checkpoints", compare_opts.save_checkpoints);
  compare_cmd->add_flag("--quiet", compare_opts.quiet);
  compare_cmd->add_option("--out", compare_opts.out);
  compare_binder.bind("world", compare_opts.world);
  compare_binder.bind("corpus-a", compare_opts.corpus_a);
  compare_binder.bind("corpus-b", compare_opts.corpus_b);
  compare_binder.bind("eval-set", compare_opts.eval_sets);
  compare_binder.bind("seeds", compare_opts.seeds);
  compare_binder.bind("lr", compare_opts.lr);
  compare_binder.bind("batch", compare_opts.batch);
  compare_binder.bind("steps", compare_opts.steps);
  compare_binder.bind("layers", compare_opts.layers);
  compare_binder.bind("heads", compare_opts.heads);
  compare_binder.bind("d-model", compare_opts.d_model);
  compare_binder.bind("d-head", compare_opts.d_head);
  compare_binder.bind("d-ff", compare_opts.d_ff);
  compare_binder.bind("max-seq", compare_opts.max_seq);
  compare_binder.bind("max-new", compare_opts.max_new);
  compare_binder.bind("workers", compare_opts.workers);
  compare_binder.bind("out", compare_opts.out);

  auto* report_cmd = app.add_subcommand("report", "summarize report files in a run directory");
  report_cmd->add_option("--run-dir", report_opts.run_dir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      if (!config_path.empty()) gen_binder.apply_file(config_path);
      gen_opts.out = out_dir_resolve(gen, gen_opts.out, "runs/gen");
      return run_gen(gen_opts);
    }
    if (train_cmd->parsed()) {
      if (!config_path.empty()) train_binder.apply_file(config_path);
      train_opts.out = out_dir_resolve(train_cmd, train_opts.out, "runs/train");
      if (train_opts.world.empty()) throw std::invalid_argument("--world is required");
      return run_train(train_opts);
    }
    if (eval_cmd->parsed()) {
      if (!config_path.empty()) eval_binder.apply_file(config_path);
      eval_opts.out = out_dir_resolve(eval_cmd, eval_opts.out, "runs/eval");
      return run_eval(eval_opts);
    }
    if (probe_cmd->parsed()) {
      if (!config_path.empty()) probe_binder.apply_file(config_path);
      probe_opts.out = out_dir_resolve(probe_cmd, probe_opts.out, "runs/probe");
      return run_probe(probe_opts);
    }
    if (sweep_cmd->parsed()) {
      if (!config_path.empty()) sweep_binder.apply_file(config_path);
      sweep_opts.out = out_dir_resolve(sweep_cmd, sweep_opts.out, "runs/sweep");
      return run_sweep(sweep_opts);
    }
    if (compare_cmd->parsed()) {
      if (!config_path.empty()) compare_binder.apply_file(config_path);
      compare_opts.out = out_dir_resolve(compare_cmd, compare_opts.out, "runs/compare");
      return run_compare(compare_opts);
    }
    if (report_cmd->parsed()) return run_report(report_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
