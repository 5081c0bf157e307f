#pragma once

#include <functional>
#include <span>

namespace xattn {

// One probed attention site: query step `step` of `head` in `layer`.
// Rows are double precision regardless of the model scalar type; spans are
// only valid for the duration of the callback.
struct AttnSite {
  int layer = 0;
  int head = 0;
  int step = 0;                        // query position t (0-based)
  std::span<const double> presoftmax;  // scaled q.k logits, length step+1
  std::span<const double> row;         // attention row in use, length step+1
  const float* values = nullptr;       // v_j = values + j*value_stride
  int value_stride = 0;
  const float* wo_block = nullptr;     // d_head x d_model, row-major
  std::span<const double> head_out;    // W_O-mapped head output, length d_model
  int d_head = 0;
  int d_model = 0;
};

using AttnObserver = std::function<void(const AttnSite&)>;

// May rewrite the attention row in place before it is used; returns true if
// the row was modified. Rewritten rows must be valid distributions:
// non-negative, summing to 1 within 1e-9, exact zeros kept on masked
// positions.
using AttnRewriter =
    std::function<bool(int layer, int head, int step, std::span<double> row)>;

struct HookSet {
  AttnObserver observer;
  AttnRewriter rewriter;

  bool empty() const { return !observer && !rewriter; }
};

}  // namespace xattn
