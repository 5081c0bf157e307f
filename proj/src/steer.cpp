#include "xattn/steer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xattn {

const char* steer_target_name(SteerTarget t) {
  switch (t) {
    case SteerTarget::kEvidence1: return "evidence-1";
    case SteerTarget::kEvidence2: return "evidence-2";
    case SteerTarget::kDomainA: return "domain-A";
    case SteerTarget::kDomainB: return "domain-B";
  }
  return "?";
}

SteerTarget steer_target_from_name(std::string_view s) {
  if (s == "evidence-1") return SteerTarget::kEvidence1;
  if (s == "evidence-2") return SteerTarget::kEvidence2;
  if (s == "domain-A") return SteerTarget::kDomainA;
  if (s == "domain-B") return SteerTarget::kDomainB;
  throw std::invalid_argument("unknown steer target: " + std::string(s));
}

nlohmann::json SteerSpec::to_json() const {
  nlohmann::json j{{"target", steer_target_name(target)}, {"epsilon", epsilon}};
  if (layers) j["layers"] = *layers;
  if (heads) j["heads"] = *heads;
  return j;
}

SteerSpec SteerSpec::from_json(const nlohmann::json& j) {
  SteerSpec spec;
  spec.target = steer_target_from_name(j.at("target").get<std::string>());
  spec.epsilon = j.at("epsilon").get<double>();
  if (j.contains("layers")) spec.layers = j.at("layers").get<std::vector<int>>();
  if (j.contains("heads")) spec.heads = j.at("heads").get<std::vector<int>>();
  return spec;
}

std::vector<double> manipulate_row(std::span<const double> row,
                                   std::span<const uint8_t> group_mask,
                                   double eps) {
  if (group_mask.size() != row.size()) {
    throw std::invalid_argument("manipulate_row: mask length " +
                                std::to_string(group_mask.size()) +
                                " does not match row length " + std::to_string(row.size()));
  }
  if (!std::isfinite(eps)) throw std::invalid_argument("manipulate_row: epsilon must be finite");
  double sum = 0.0;
  for (double w : row) {
    if (!std::isfinite(w) || w < 0.0) {
      throw std::invalid_argument("manipulate_row: row is not a distribution (negative or non-finite entry)");
    }
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw std::invalid_argument("manipulate_row: row is not normalized (sum = " +
                                std::to_string(sum) + ")");
  }
  std::vector<double> out(row.begin(), row.end());
  if (eps == 0.0) return out;  // exact identity; softmax(log w) == w for a distribution
  const double boost = std::exp(eps);
  double z = 0.0;
  for (size_t i = 0; i < out.size(); ++i) {
    if (group_mask[i]) out[i] *= boost;  // zero entries stay exactly zero
    z += out[i];
  }
  for (auto& w : out) w /= z;
  return out;
}

HookSet attach(const SteerSpec& spec, const SpanMap& span_map) {
  span_map.validate();
  std::vector<uint8_t> mask;
  switch (spec.target) {
    case SteerTarget::kEvidence1:
      mask = span_map.group_mask(SpanGroup::kEvidence1, span_map.groups.size());
      break;
    case SteerTarget::kEvidence2:
      mask = span_map.group_mask(SpanGroup::kEvidence2, span_map.groups.size());
      break;
    case SteerTarget::kDomainA:
      mask = span_map.domain_mask(Domain::kA, span_map.groups.size());
      break;
    case SteerTarget::kDomainB:
      mask = span_map.domain_mask(Domain::kB, span_map.groups.size());
      break;
  }
  if (std::find(mask.begin(), mask.end(), 1) == mask.end()) {
    throw std::invalid_argument(std::string("steer: target group ") +
                                steer_target_name(spec.target) +
                                " is absent from the instance");
  }
  HookSet hooks;
  hooks.rewriter = [spec, mask](int layer, int head, int /*step*/,
                                std::span<double> row) {
    if (spec.layers && std::find(spec.layers->begin(), spec.layers->end(), layer) ==
                           spec.layers->end()) {
      return false;
    }
    if (spec.heads &&
        std::find(spec.heads->begin(), spec.heads->end(), head) == spec.heads->end()) {
      return false;
    }
    std::vector<uint8_t> m(row.size(), 0);
    const size_t n = std::min(row.size(), mask.size());
    for (size_t i = 0; i < n; ++i) m[i] = mask[i];
    auto out = manipulate_row(std::span<const double>(row.data(), row.size()), m,
                              spec.epsilon);
    std::copy(out.begin(), out.end(), row.begin());
    return true;
  };
  return hooks;
}

}  // namespace xattn
