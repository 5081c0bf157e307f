#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "xattn/hooks.hpp"
#include "xattn/tensor.hpp"

namespace xattn {

// Geometry and hook wiring for one fused attention call.
struct AttentionSpec {
  int batch = 1;
  int seq_len = 0;
  int n_heads = 0;
  int d_head = 0;
  int d_model = 0;
  int layer = 0;                // reported to hooks
  std::vector<int> valid_lens;  // per sequence; empty means all = seq_len
  const HookSet* hooks = nullptr;  // batch == 1 only
};

// Reverse-mode tape. Nodes are recorded in creation order, which is a valid
// topological order; backward() walks it once in reverse.
template <typename S>
class TapeT {
 public:
  using Id = int32_t;

  explicit TapeT(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  // Lifts a tensor onto the tape (copies the data).
  Id leaf(const TensorT<S>& t);
  Id constant(Shape shape, std::vector<S> values);

  Id matmul(Id a, Id b);
  Id add(Id a, Id b);                   // same shape
  Id add_row_broadcast(Id a, Id bias);  // (m,n) + (n)
  Id mul(Id a, Id b);                   // elementwise
  Id scale(Id a, S c);
  Id sum(Id a);  // -> scalar
  Id gelu(Id a);
  Id layer_norm(Id x, Id gain, Id bias);  // rows of x normalized
  Id embedding(Id table, std::vector<int> ids);
  Id multi_head_attention(Id q, Id k, Id v, Id wo, const AttentionSpec& spec);
  Id cross_entropy(Id logits, std::vector<int> targets,
                   std::vector<uint8_t> target_mask);

  // Seeds d(root)/d(root) = 1 and accumulates gradients into every node that
  // requires grad. Root must be scalar.
  void backward(Id root);

  std::span<const S> value(Id id) const { return nodes_[id].val; }
  std::span<const S> grad(Id id) const { return nodes_[id].grad; }
  const Shape& shape(Id id) const { return nodes_[id].shape; }
  bool requires_grad(Id id) const { return nodes_[id].requires_grad; }
  bool grad_enabled() const { return grad_enabled_; }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    std::vector<S> val;
    std::vector<S> grad;  // allocated lazily
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Id push(Shape shape, std::vector<S> val, bool rg,
          std::function<void()> bwd);
  std::vector<S>& grad_buf(Id id);
  void check_same_shape(Id a, Id b, const char* op) const;

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

using Tape = TapeT<float>;
using TapeD = TapeT<double>;

// Numerically-stable masked softmax. `masked[i] != 0` excludes position i:
// it is treated as a -1e30 logit sentinel and forced to exactly 0 in the
// output. Throws if every position is masked. An empty mask means no
// position is masked.
template <typename S>
std::vector<S> masked_softmax(std::span<const S> logits,
                              std::span<const uint8_t> masked);

inline constexpr double kMaskSentinel = -1e30;

}  // namespace xattn
