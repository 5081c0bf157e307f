#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xattn/hooks.hpp"
#include "xattn/probe.hpp"

#include <json.hpp>

namespace xattn {

enum class SteerTarget : uint8_t { kEvidence1 = 0, kEvidence2, kDomainA, kDomainB };
const char* steer_target_name(SteerTarget t);
SteerTarget steer_target_from_name(std::string_view s);

// Which span group receives the attention bias and at which sites.
// A missing layer/head set means "all"; an empty set means "none".
struct SteerSpec {
  SteerTarget target = SteerTarget::kDomainB;
  double epsilon = 0.0;
  std::optional<std::vector<int>> layers;
  std::optional<std::vector<int>> heads;

  nlohmann::json to_json() const;
  static SteerSpec from_json(const nlohmann::json& j);
};

// softmax(log w + eps * mask): biases the row toward masked positions while
// keeping exact zeros exactly zero. eps == 0 returns the input unchanged.
std::vector<double> manipulate_row(std::span<const double> row,
                                   std::span<const uint8_t> group_mask,
                                   double eps);

// Builds the rewriter realizing `spec` against one instance's span map.
// Throws if the target group is absent from the instance.
HookSet attach(const SteerSpec& spec, const SpanMap& span_map);

}  // namespace xattn
