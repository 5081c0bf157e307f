#include "xattn/model.hpp"

#include <random>
#include <stdexcept>

#include "xattn/rng.hpp"

namespace xattn {

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_head < 1 || d_ff < 1) {
    throw std::invalid_argument("model config: all dimensions must be positive");
  }
  if (d_model != n_heads * d_head) {
    throw std::invalid_argument("model config: d_model (" + std::to_string(d_model) +
                                ") must equal n_heads*d_head (" +
                                std::to_string(n_heads * d_head) + ")");
  }
  if (max_seq_len < 1) throw std::invalid_argument("model config: max_seq_len must be positive");
  if (vocab_size < 2) throw std::invalid_argument("model config: vocab_size must be at least 2");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers},       {"n_heads", c.n_heads},
                     {"d_model", c.d_model},         {"d_head", c.d_head},
                     {"d_ff", c.d_ff},               {"max_seq_len", c.max_seq_len},
                     {"vocab_size", c.vocab_size},   {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("n_layers").get_to(c.n_layers);
  j.at("n_heads").get_to(c.n_heads);
  j.at("d_model").get_to(c.d_model);
  j.at("d_head").get_to(c.d_head);
  j.at("d_ff").get_to(c.d_ff);
  j.at("max_seq_len").get_to(c.max_seq_len);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("seed").get_to(c.seed);
}

template <typename S>
TensorT<S>& ParamsT<S>::at(std::string_view name) {
  for (auto& [n, t] : named) {
    if (n == name) return t;
  }
  throw std::out_of_range("unknown parameter: " + std::string(name));
}

template <typename S>
const TensorT<S>& ParamsT<S>::at(std::string_view name) const {
  for (const auto& [n, t] : named) {
    if (n == name) return t;
  }
  throw std::out_of_range("unknown parameter: " + std::string(name));
}

template <typename S>
int64_t ParamsT<S>::total_elements() const {
  int64_t n = 0;
  for (const auto& [name, t] : named) n += t.numel();
  return n;
}

template struct ParamsT<float>;
template struct ParamsT<double>;

namespace {

enum class Init { kNormal, kOnes, kZeros };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init;
};

std::vector<ParamSpec> param_specs(const ModelConfig& c) {
  std::vector<ParamSpec> specs;
  specs.push_back({"tok_emb", {c.vocab_size, c.d_model}, Init::kNormal});
  specs.push_back({"pos_emb", {c.max_seq_len, c.d_model}, Init::kNormal});
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    specs.push_back({p + "ln1.gain", {c.d_model}, Init::kOnes});
    specs.push_back({p + "ln1.bias", {c.d_model}, Init::kZeros});
    specs.push_back({p + "wq", {c.d_model, c.d_model}, Init::kNormal});
    specs.push_back({p + "wk", {c.d_model, c.d_model}, Init::kNormal});
    specs.push_back({p + "wv", {c.d_model, c.d_model}, Init::kNormal});
    specs.push_back({p + "wo", {c.d_model, c.d_model}, Init::kNormal});
    specs.push_back({p + "ln2.gain", {c.d_model}, Init::kOnes});
    specs.push_back({p + "ln2.bias", {c.d_model}, Init::kZeros});
    specs.push_back({p + "mlp.w1", {c.d_model, c.d_ff}, Init::kNormal});
    specs.push_back({p + "mlp.b1", {c.d_ff}, Init::kZeros});
    specs.push_back({p + "mlp.w2", {c.d_ff, c.d_model}, Init::kNormal});
    specs.push_back({p + "mlp.b2", {c.d_model}, Init::kZeros});
  }
  specs.push_back({"ln_f.gain", {c.d_model}, Init::kOnes});
  specs.push_back({"ln_f.bias", {c.d_model}, Init::kZeros});
  specs.push_back({"head", {c.d_model, c.vocab_size}, Init::kNormal});
  return specs;
}

}  // namespace

std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& config) {
  config.validate();
  std::vector<std::pair<std::string, Shape>> out;
  for (const auto& spec : param_specs(config)) out.emplace_back(spec.name, spec.shape);
  return out;
}

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  auto rng = make_rng(config.seed, "model-init");
  std::normal_distribution<float> normal(0.0f, 0.02f);
  ModelParams params;
  params.config = config;
  for (const auto& spec : param_specs(config)) {
    Tensor t = Tensor::zeros(spec.shape, /*rg=*/true);
    switch (spec.init) {
      case Init::kNormal:
        for (auto& v : t.data) v = normal(rng);
        break;
      case Init::kOnes:
        for (auto& v : t.data) v = 1.0f;
        break;
      case Init::kZeros:
        break;
    }
    params.named.emplace_back(spec.name, std::move(t));
  }
  return params;
}

ParamsT<double> reference_params(const ModelParams& params) {
  ParamsT<double> out;
  out.config = params.config;
  for (const auto& [name, t] : params.named) {
    out.named.emplace_back(name, tensor_cast<double>(t));
  }
  return out;
}

std::vector<NamedParam> param_view(ModelParams& params) {
  std::vector<NamedParam> view;
  view.reserve(params.named.size());
  for (auto& [name, t] : params.named) view.push_back({name, &t});
  return view;
}

template <typename S>
ForwardNodes<S> forward_batch(TapeT<S>& tape, const ParamsT<S>& params,
                              const BatchInput& input, const HookSet* hooks) {
  const ModelConfig& c = params.config;
  if (input.batch < 1 || input.seq_len < 1) {
    throw std::invalid_argument("forward: empty batch");
  }
  if (input.seq_len > c.max_seq_len) {
    throw std::invalid_argument("forward: sequence length " + std::to_string(input.seq_len) +
                                " exceeds max_seq_len " + std::to_string(c.max_seq_len));
  }
  if (static_cast<int>(input.tokens.size()) != input.batch * input.seq_len) {
    throw std::invalid_argument("forward: token buffer does not match batch geometry");
  }
  for (int tok : input.tokens) {
    if (tok < 0 || tok >= c.vocab_size) {
      throw std::invalid_argument("forward: token id " + std::to_string(tok) +
                                  " outside vocabulary of size " + std::to_string(c.vocab_size));
    }
  }

  ForwardNodes<S> nodes;
  nodes.leaves.reserve(params.named.size());
  for (const auto& [name, t] : params.named) {
    nodes.leaves.emplace_back(name, tape.leaf(t));
  }
  auto leaf = [&](std::string_view name) -> typename TapeT<S>::Id {
    for (const auto& [n, id] : nodes.leaves) {
      if (n == name) return id;
    }
    throw std::out_of_range("forward: missing parameter " + std::string(name));
  };

  std::vector<int> pos_ids(input.tokens.size());
  for (size_t i = 0; i < pos_ids.size(); ++i) pos_ids[i] = static_cast<int>(i % input.seq_len);

  auto x = tape.add(tape.embedding(leaf("tok_emb"), input.tokens),
                    tape.embedding(leaf("pos_emb"), pos_ids));

  for (int l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    auto h = tape.layer_norm(x, leaf(p + "ln1.gain"), leaf(p + "ln1.bias"));
    auto q = tape.matmul(h, leaf(p + "wq"));
    auto k = tape.matmul(h, leaf(p + "wk"));
    auto v = tape.matmul(h, leaf(p + "wv"));
    AttentionSpec spec;
    spec.batch = input.batch;
    spec.seq_len = input.seq_len;
    spec.n_heads = c.n_heads;
    spec.d_head = c.d_head;
    spec.d_model = c.d_model;
    spec.layer = l;
    spec.valid_lens = input.valid_lens;
    spec.hooks = hooks;
    auto attn = tape.multi_head_attention(q, k, v, leaf(p + "wo"), spec);
    x = tape.add(x, attn);
    auto h2 = tape.layer_norm(x, leaf(p + "ln2.gain"), leaf(p + "ln2.bias"));
    auto m1 = tape.gelu(tape.add_row_broadcast(tape.matmul(h2, leaf(p + "mlp.w1")),
                                               leaf(p + "mlp.b1")));
    auto m2 = tape.add_row_broadcast(tape.matmul(m1, leaf(p + "mlp.w2")), leaf(p + "mlp.b2"));
    x = tape.add(x, m2);
  }
  auto xf = tape.layer_norm(x, leaf("ln_f.gain"), leaf("ln_f.bias"));
  nodes.logits = tape.matmul(xf, leaf("head"));
  return nodes;
}

template ForwardNodes<float> forward_batch<float>(TapeT<float>&, const ParamsT<float>&,
                                                  const BatchInput&, const HookSet*);
template ForwardNodes<double> forward_batch<double>(TapeT<double>&, const ParamsT<double>&,
                                                    const BatchInput&, const HookSet*);

Tensor forward(const ModelParams& params, std::span<const int> tokens,
               const HookSet* hooks) {
  if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
  Tape tape(false);
  BatchInput input;
  input.batch = 1;
  input.seq_len = static_cast<int>(tokens.size());
  input.tokens.assign(tokens.begin(), tokens.end());
  input.valid_lens = {input.seq_len};
  auto nodes = forward_batch(tape, params, input, hooks);
  auto vals = tape.value(nodes.logits);
  return Tensor({input.seq_len, params.config.vocab_size},
                std::vector<float>(vals.begin(), vals.end()));
}

int argmax_row(std::span<const float> row) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(row.size()); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return best;
}

std::vector<int> generate_greedy(const ModelParams& params,
                                 std::span<const int> prompt,
                                 const HookSet* hooks, int max_new, int eos_id) {
  if (prompt.empty()) throw std::invalid_argument("generate: empty prompt");
  if (static_cast<int>(prompt.size()) + max_new > params.config.max_seq_len) {
    throw std::invalid_argument("generate: prompt plus max_new exceeds max_seq_len");
  }
  std::vector<int> tokens(prompt.begin(), prompt.end());
  std::vector<int> generated;
  for (int step = 0; step < max_new; ++step) {
    Tensor logits = forward(params, tokens, hooks);
    const int vocab = params.config.vocab_size;
    std::span<const float> last(logits.data.data() +
                                    static_cast<size_t>(tokens.size() - 1) * vocab,
                                static_cast<size_t>(vocab));
    const int next = argmax_row(last);
    generated.push_back(next);
    tokens.push_back(next);
    if (next == eos_id) break;
  }
  return generated;
}

}  // namespace xattn
