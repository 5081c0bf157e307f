#include "xattn/probe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace xattn {

const char* span_group_name(SpanGroup g) {
  switch (g) {
    case SpanGroup::kEvidence1: return "evidence-1";
    case SpanGroup::kEvidence2: return "evidence-2";
    case SpanGroup::kQuestion: return "question";
    case SpanGroup::kOther: return "other";
  }
  return "?";
}

const char* span_order_name(SpanOrder o) {
  switch (o) {
    case SpanOrder::kAFirst: return "A-first";
    case SpanOrder::kBFirst: return "B-first";
    case SpanOrder::kNA: return "na";
  }
  return "?";
}

void SpanMap::validate() const {
  if (groups.empty()) throw std::invalid_argument("span map: empty");
  size_t e1 = 0, e2 = 0;
  for (auto g : groups) {
    if (g == SpanGroup::kEvidence1) ++e1;
    if (g == SpanGroup::kEvidence2) ++e2;
  }
  if (e1 == 0 || e2 == 0) {
    throw std::invalid_argument("span map: evidence spans must be non-empty");
  }
}

std::vector<uint8_t> SpanMap::group_mask(SpanGroup g, size_t len) const {
  std::vector<uint8_t> mask(len, 0);
  const size_t n = std::min(len, groups.size());
  for (size_t i = 0; i < n; ++i) mask[i] = (groups[i] == g) ? 1 : 0;
  if (g == SpanGroup::kOther) {
    for (size_t i = groups.size(); i < len; ++i) mask[i] = 1;  // generated tokens
  }
  return mask;
}

std::vector<uint8_t> SpanMap::domain_mask(Domain d, size_t len) const {
  std::vector<uint8_t> mask(len, 0);
  const size_t n = std::min(len, groups.size());
  for (size_t i = 0; i < n; ++i) {
    const bool in1 = groups[i] == SpanGroup::kEvidence1 && span1_domain == d;
    const bool in2 = groups[i] == SpanGroup::kEvidence2 && span2_domain == d;
    mask[i] = (in1 || in2) ? 1 : 0;
  }
  return mask;
}

bool SpanMap::has_domain(Domain d) const {
  return span1_domain == d || span2_domain == d;
}

SpanOrder SpanMap::order() const {
  if (span1_domain == span2_domain) return SpanOrder::kNA;
  return span1_domain == Domain::kA ? SpanOrder::kAFirst : SpanOrder::kBFirst;
}

std::array<std::vector<double>, kNumGroups> decompose_step(
    const AttnSite& site, std::span<const SpanGroup> position_groups) {
  const int len = site.step + 1;
  if (static_cast<int>(position_groups.size()) < len) {
    throw std::invalid_argument("decompose_step: span map covers " +
                                std::to_string(position_groups.size()) +
                                " positions but the row has " + std::to_string(len));
  }
  std::array<std::vector<double>, kNumGroups> u;
  for (auto& v : u) v.assign(site.d_model, 0.0);
  std::vector<double> wo_v(site.d_model);
  for (int j = 0; j < len; ++j) {
    const float* vj = site.values + static_cast<size_t>(j) * site.value_stride;
    for (int c = 0; c < site.d_model; ++c) wo_v[c] = 0.0;
    for (int r = 0; r < site.d_head; ++r) {
      const double x = vj[r];
      const float* wrow = site.wo_block + static_cast<size_t>(r) * site.d_model;
      for (int c = 0; c < site.d_model; ++c) wo_v[c] += x * static_cast<double>(wrow[c]);
    }
    auto& dst = u[static_cast<int>(position_groups[j])];
    const double w = site.row[j];
    for (int c = 0; c < site.d_model; ++c) dst[c] += w * wo_v[c];
  }
  return u;
}

namespace {

double l2_norm(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  return std::sqrt(sq);
}

}  // namespace

RecordedRun record_run(const ModelParams& params, std::span<const int> prompt,
                       const SpanMap& span_map, int max_new, int eos_id,
                       const HookSet* extra) {
  span_map.validate();
  if (span_map.groups.size() != prompt.size()) {
    throw std::invalid_argument("record_run: span map length " +
                                std::to_string(span_map.groups.size()) +
                                " does not match prompt length " + std::to_string(prompt.size()));
  }
  RecordedRun run;
  run.record.n_layers = params.config.n_layers;
  run.record.n_heads = params.config.n_heads;
  run.record.span1_domain = span_map.span1_domain;
  run.record.span2_domain = span_map.span2_domain;

  std::vector<int> tokens(prompt.begin(), prompt.end());
  std::vector<SpanGroup> groups(span_map.groups);

  int record_step = 0;   // current generated-token index
  size_t record_at = 0;  // query position whose row we record

  HookSet hooks;
  if (extra && extra->rewriter) hooks.rewriter = extra->rewriter;
  hooks.observer = [&](const AttnSite& site) {
    if (extra && extra->observer) extra->observer(site);
    if (static_cast<size_t>(site.step) != record_at) return;
    auto u = decompose_step(site, groups);
    for (int g = 0; g < kNumGroups; ++g) {
      SiteStat stat;
      stat.layer = site.layer;
      stat.head = site.head;
      stat.step = record_step;
      stat.group = static_cast<SpanGroup>(g);
      stat.u_norm = l2_norm(u[g]);
      double mass = 0.0;
      double mean_l = 0.0;
      double max_l = -std::numeric_limits<double>::infinity();
      int count = 0;
      for (int j = 0; j <= site.step; ++j) {
        if (static_cast<int>(groups[j]) != g) continue;
        mass += site.row[j];
        mean_l += site.presoftmax[j];
        max_l = std::max(max_l, site.presoftmax[j]);
        ++count;
      }
      stat.attn_mass = mass;
      stat.mean_presoftmax = count ? mean_l / count : 0.0;
      stat.max_presoftmax = count ? max_l : 0.0;
      run.record.sites.push_back(stat);
    }
  };

  const int vocab = params.config.vocab_size;
  for (int step = 0; step < max_new; ++step) {
    if (static_cast<int>(tokens.size()) >= params.config.max_seq_len) break;
    record_step = step;
    record_at = tokens.size() - 1;
    Tensor logits = forward(params, tokens, &hooks);
    std::span<const float> last(
        logits.data.data() + static_cast<size_t>(tokens.size() - 1) * vocab,
        static_cast<size_t>(vocab));
    const int next = argmax_row(last);
    run.generated.push_back(next);
    tokens.push_back(next);
    groups.push_back(SpanGroup::kOther);
    run.record.n_steps = step + 1;
    if (next == eos_id) break;
  }
  return run;
}

nlohmann::json ContributionRecord::to_json() const {
  nlohmann::json sites_json = nlohmann::json::array();
  for (const auto& s : sites) {
    sites_json.push_back({{"layer", s.layer},
                          {"head", s.head},
                          {"step", s.step},
                          {"group", span_group_name(s.group)},
                          {"u_norm", s.u_norm},
                          {"mean_presoftmax", s.mean_presoftmax},
                          {"max_presoftmax", s.max_presoftmax},
                          {"attn_mass", s.attn_mass}});
  }
  return nlohmann::json{{"n_layers", n_layers},
                        {"n_heads", n_heads},
                        {"n_steps", n_steps},
                        {"span1_domain", domain_name(span1_domain)},
                        {"span2_domain", domain_name(span2_domain)},
                        {"instance_id", instance_id},
                        {"sites", std::move(sites_json)}};
}

namespace {

bool included(const std::vector<int>& filter, int x) {
  return filter.empty() || std::find(filter.begin(), filter.end(), x) != filter.end();
}

}  // namespace

ImbalanceReport imbalance(const ContributionRecord& record,
                          const AggregationSpec& spec) {
  if (record.span1_domain == record.span2_domain) {
    throw std::invalid_argument(
        "imbalance: record does not contain evidence from both domains");
  }
  if (record.n_steps == 0 || record.sites.empty()) {
    throw std::invalid_argument("imbalance: empty record");
  }
  const SpanGroup group_a = record.span1_domain == Domain::kA ? SpanGroup::kEvidence1
                                                              : SpanGroup::kEvidence2;
  const SpanGroup group_b = group_a == SpanGroup::kEvidence1 ? SpanGroup::kEvidence2
                                                             : SpanGroup::kEvidence1;

  ImbalanceReport report;
  report.n_layers = record.n_layers;
  report.n_heads = record.n_heads;
  report.lh_a.assign(static_cast<size_t>(record.n_layers) * record.n_heads, 0.0);
  report.lh_b.assign(report.lh_a.size(), 0.0);
  std::vector<int> lh_count(report.lh_a.size(), 0);

  InstanceImbalance inst;
  inst.instance_id = record.instance_id;
  inst.order = record.span1_domain == Domain::kA ? SpanOrder::kAFirst : SpanOrder::kBFirst;
  inst.n_steps = record.n_steps;

  double sum_a = 0.0, sum_b = 0.0, sum_s1 = 0.0, sum_s2 = 0.0;
  double sum_pa = 0.0, sum_pb = 0.0;
  int64_t n_a = 0, n_b = 0;
  for (const auto& s : record.sites) {
    if (!included(spec.layers, s.layer) || !included(spec.heads, s.head)) continue;
    const size_t lh = static_cast<size_t>(s.layer) * record.n_heads + s.head;
    if (s.group == group_a) {
      sum_a += s.u_norm;
      sum_pa += s.mean_presoftmax;
      report.lh_a[lh] += s.u_norm;
      lh_count[lh] += 1;
      ++n_a;
    } else if (s.group == group_b) {
      sum_b += s.u_norm;
      sum_pb += s.mean_presoftmax;
      report.lh_b[lh] += s.u_norm;
      ++n_b;
    }
    if (s.group == SpanGroup::kEvidence1) sum_s1 += s.u_norm;
    if (s.group == SpanGroup::kEvidence2) sum_s2 += s.u_norm;
  }
  if (n_a == 0 || n_b == 0) {
    throw std::invalid_argument("imbalance: aggregation selects no evidence sites");
  }
  inst.u_mean_a = sum_a / n_a;
  inst.u_mean_b = sum_b / n_b;
  inst.u_mean_span1 = sum_s1 / n_a;
  inst.u_mean_span2 = sum_s2 / n_b;
  inst.mean_presoftmax_a = sum_pa / n_a;
  inst.mean_presoftmax_b = sum_pb / n_b;
  if (inst.u_mean_a == 0.0 || inst.u_mean_b == 0.0) {
    throw std::runtime_error("imbalance: degenerate record, a domain mean norm is zero");
  }
  inst.imbalance = std::abs(std::log(inst.u_mean_a / inst.u_mean_b));

  for (size_t i = 0; i < report.lh_a.size(); ++i) {
    if (lh_count[i] > 0) {
      report.lh_a[i] /= lh_count[i];
      report.lh_b[i] /= lh_count[i];
    }
  }
  report.instances.push_back(inst);
  report.mean_imbalance = inst.imbalance;
  report.mean_u_a = inst.u_mean_a;
  report.mean_u_b = inst.u_mean_b;
  report.mean_presoftmax_a = inst.mean_presoftmax_a;
  report.mean_presoftmax_b = inst.mean_presoftmax_b;
  auto& order_stats = inst.order == SpanOrder::kAFirst ? report.a_first : report.b_first;
  order_stats.n = 1;
  order_stats.mean_imbalance = inst.imbalance;
  order_stats.mean_u_a = inst.u_mean_a;
  order_stats.mean_u_b = inst.u_mean_b;
  return report;
}

ImbalanceReport merge_imbalance(std::span<const ImbalanceReport> parts) {
  if (parts.empty()) throw std::invalid_argument("merge_imbalance: no reports");
  ImbalanceReport out;
  out.n_layers = parts[0].n_layers;
  out.n_heads = parts[0].n_heads;
  out.lh_a.assign(static_cast<size_t>(out.n_layers) * out.n_heads, 0.0);
  out.lh_b.assign(out.lh_a.size(), 0.0);
  int64_t total = 0;
  for (const auto& part : parts) {
    if (part.n_layers != out.n_layers || part.n_heads != out.n_heads) {
      throw std::invalid_argument("merge_imbalance: mismatched geometries");
    }
    for (const auto& inst : part.instances) {
      out.instances.push_back(inst);
      out.mean_imbalance += inst.imbalance;
      out.mean_u_a += inst.u_mean_a;
      out.mean_u_b += inst.u_mean_b;
      out.mean_presoftmax_a += inst.mean_presoftmax_a;
      out.mean_presoftmax_b += inst.mean_presoftmax_b;
      auto& order_stats = inst.order == SpanOrder::kAFirst ? out.a_first : out.b_first;
      order_stats.n += 1;
      order_stats.mean_imbalance += inst.imbalance;
      order_stats.mean_u_a += inst.u_mean_a;
      order_stats.mean_u_b += inst.u_mean_b;
      ++total;
    }
    for (size_t i = 0; i < out.lh_a.size(); ++i) {
      out.lh_a[i] += part.lh_a[i] * part.instances.size();
      out.lh_b[i] += part.lh_b[i] * part.instances.size();
    }
  }
  if (total == 0) throw std::invalid_argument("merge_imbalance: no instances");
  out.mean_imbalance /= total;
  out.mean_u_a /= total;
  out.mean_u_b /= total;
  out.mean_presoftmax_a /= total;
  out.mean_presoftmax_b /= total;
  for (size_t i = 0; i < out.lh_a.size(); ++i) {
    out.lh_a[i] /= total;
    out.lh_b[i] /= total;
  }
  for (OrderStats* s : {&out.a_first, &out.b_first}) {
    if (s->n > 0) {
      s->mean_imbalance /= s->n;
      s->mean_u_a /= s->n;
      s->mean_u_b /= s->n;
    }
  }
  return out;
}

nlohmann::json ImbalanceReport::to_json() const {
  nlohmann::json inst_json = nlohmann::json::array();
  for (const auto& i : instances) {
    inst_json.push_back({{"id", i.instance_id},
                         {"order", span_order_name(i.order)},
                         {"u_mean_a", i.u_mean_a},
                         {"u_mean_b", i.u_mean_b},
                         {"imbalance", i.imbalance},
                         {"u_mean_span1", i.u_mean_span1},
                         {"u_mean_span2", i.u_mean_span2},
                         {"mean_presoftmax_a", i.mean_presoftmax_a},
                         {"mean_presoftmax_b", i.mean_presoftmax_b},
                         {"n_steps", i.n_steps}});
  }
  auto order_json = [](const OrderStats& s) {
    return nlohmann::json{{"n", s.n},
                          {"mean_imbalance", s.mean_imbalance},
                          {"mean_u_a", s.mean_u_a},
                          {"mean_u_b", s.mean_u_b}};
  };
  return nlohmann::json{{"n_layers", n_layers},
                        {"n_heads", n_heads},
                        {"mean_imbalance", mean_imbalance},
                        {"mean_u_a", mean_u_a},
                        {"mean_u_b", mean_u_b},
                        {"mean_presoftmax_a", mean_presoftmax_a},
                        {"mean_presoftmax_b", mean_presoftmax_b},
                        {"lh_a", lh_a},
                        {"lh_b", lh_b},
                        {"order_a_first", order_json(a_first)},
                        {"order_b_first", order_json(b_first)},
                        {"instances", std::move(inst_json)}};
}

std::string ImbalanceReport::matrix_csv(Domain d) const {
  const auto& m = d == Domain::kA ? lh_a : lh_b;
  std::ostringstream os;
  os << "layer";
  for (int h = 0; h < n_heads; ++h) os << ",head" << h;
  os << "\n";
  for (int l = 0; l < n_layers; ++l) {
    os << l;
    for (int h = 0; h < n_heads; ++h) {
      os << "," << m[static_cast<size_t>(l) * n_heads + h];
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace xattn
