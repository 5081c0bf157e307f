#include "xattn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace xattn {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;

template <typename S>
double dot_d(const S* a, const S* b, int n) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

// In-place softmax of a double row; no masked positions.
void softmax_row(double* x, int n) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  for (int i = 0; i < n; ++i) x[i] /= sum;
}

void validate_rewritten_row(std::span<const double> row, int layer, int head,
                            int step) {
  double sum = 0.0;
  for (double v : row) {
    if (v < 0.0 || !std::isfinite(v)) {
      throw std::runtime_error("attention rewriter produced an invalid entry at layer " +
                               std::to_string(layer) + " head " + std::to_string(head) +
                               " step " + std::to_string(step));
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::runtime_error("attention rewriter output does not sum to 1 (got " +
                             std::to_string(sum) + ") at layer " + std::to_string(layer) +
                             " head " + std::to_string(head) + " step " + std::to_string(step));
  }
}

}  // namespace

template <typename S>
std::vector<S> masked_softmax(std::span<const S> logits,
                              std::span<const uint8_t> masked) {
  if (!masked.empty() && masked.size() != logits.size()) {
    throw std::invalid_argument("softmax mask length " + std::to_string(masked.size()) +
                                " does not match logits length " + std::to_string(logits.size()));
  }
  const size_t n = logits.size();
  auto is_masked = [&](size_t i) { return !masked.empty() && masked[i] != 0; };

  double mx = kMaskSentinel;
  bool any = false;
  for (size_t i = 0; i < n; ++i) {
    if (is_masked(i)) continue;
    any = true;
    mx = std::max(mx, static_cast<double>(logits[i]));
  }
  if (!any) throw std::invalid_argument("softmax: every position is masked (degenerate row)");

  std::vector<double> e(n, 0.0);
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (is_masked(i)) continue;
    e[i] = std::exp(static_cast<double>(logits[i]) - mx);
    sum += e[i];
  }
  std::vector<S> out(n, S(0));
  for (size_t i = 0; i < n; ++i) {
    if (is_masked(i)) continue;  // exact zero
    out[i] = static_cast<S>(e[i] / sum);
  }
  return out;
}

template std::vector<float> masked_softmax<float>(std::span<const float>,
                                                  std::span<const uint8_t>);
template std::vector<double> masked_softmax<double>(std::span<const double>,
                                                    std::span<const uint8_t>);

template <typename S>
typename TapeT<S>::Id TapeT<S>::push(Shape shape, std::vector<S> val, bool rg,
                                     std::function<void()> bwd) {
  Node node;
  node.shape = std::move(shape);
  node.val = std::move(val);
  node.requires_grad = rg && grad_enabled_;
  if (node.requires_grad) node.backward = std::move(bwd);
  nodes_.push_back(std::move(node));
  return static_cast<Id>(nodes_.size() - 1);
}

template <typename S>
std::vector<S>& TapeT<S>::grad_buf(Id id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.val.size(), S(0));
  return n.grad;
}

template <typename S>
void TapeT<S>::check_same_shape(Id a, Id b, const char* op) const {
  if (nodes_[a].shape != nodes_[b].shape) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(nodes_[a].shape) + " vs " + shape_str(nodes_[b].shape));
  }
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::leaf(const TensorT<S>& t) {
  return push(t.shape, t.data, t.requires_grad, nullptr);
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::constant(Shape shape, std::vector<S> values) {
  TensorT<S> t(std::move(shape), std::move(values), false);
  return push(t.shape, std::move(t.data), false, nullptr);
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::matmul(Id a, Id b) {
  const Shape& sa = nodes_[a].shape;
  const Shape& sb = nodes_[b].shape;
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(sa) +
                                " vs " + shape_str(sb));
  }
  const int m = sa[0], k = sa[1], n = sb[1];
  std::vector<S> out(static_cast<size_t>(m) * n, S(0));
  const S* av = nodes_[a].val.data();
  const S* bv = nodes_[b].val.data();
  S* cv = out.data();
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(m) * n * k > 32768)
  for (int i = 0; i < m; ++i) {
    const S* arow = av + static_cast<size_t>(i) * k;
    S* crow = cv + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const S x = arow[kk];
      const S* brow = bv + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += x * brow[j];
    }
  }
  const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Id out_id = push({m, n}, std::move(out), rg, nullptr);
  if (nodes_[out_id].requires_grad) {
    nodes_[out_id].backward = [this, a, b, out_id, m, k, n]() {
      const S* g = nodes_[out_id].grad.data();
      const S* av2 = nodes_[a].val.data();
      const S* bv2 = nodes_[b].val.data();
      if (nodes_[a].requires_grad) {
        // dA = dC B^T, written j-outer so the inner loop vectorizes; the
        // per-element accumulation order over j is unchanged
        std::vector<S> bt(static_cast<size_t>(n) * k);
        for (int kk = 0; kk < k; ++kk) {
          for (int j = 0; j < n; ++j) {
            bt[static_cast<size_t>(j) * k + kk] = bv2[static_cast<size_t>(kk) * n + j];
          }
        }
        S* da = grad_buf(a).data();
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(m) * n * k > 32768)
        for (int i = 0; i < m; ++i) {
          const S* grow = g + static_cast<size_t>(i) * n;
          S* darow = da + static_cast<size_t>(i) * k;
          for (int j = 0; j < n; ++j) {
            const S x = grow[j];
            const S* btrow = bt.data() + static_cast<size_t>(j) * k;
            for (int kk = 0; kk < k; ++kk) darow[kk] += x * btrow[kk];
          }
        }
      }
      if (nodes_[b].requires_grad) {
        S* db = grad_buf(b).data();
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(m) * n * k > 32768)
        for (int kk = 0; kk < k; ++kk) {
          S* dbrow = db + static_cast<size_t>(kk) * n;
          for (int i = 0; i < m; ++i) {
            const S x = av2[static_cast<size_t>(i) * k + kk];
            const S* grow = g + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) dbrow[j] += x * grow[j];
          }
        }
      }
    };
  }
  return out_id;
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::add(Id a, Id b) {
  check_same_shape(a, b, "add");
  const size_t n = nodes_[a].val.size();
  std::vector<S> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = nodes_[a].val[i] + nodes_[b].val[i];
  const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Id out_id = push(nodes_[a].shape, std::move(out), rg, nullptr);
  if (nodes_[out_id].requires_grad) {
    nodes_[out_id].backward = [this, a, b, out_id, n]() {
      const S* g = nodes_[out_id].grad.data();
      if (nodes_[a].requires_grad) {
        S* da = grad_buf(a).data();
        for (size_t i = 0; i < n; ++i) da[i] += g[i];
      }
      if (nodes_[b].requires_grad) {
        S* db = grad_buf(b).data();
        for (size_t i = 0; i < n; ++i) db[i] += g[i];
      }
    };
  }
  return out_id;
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::add_row_broadcast(Id a, Id bias) {
  const Shape& sa = nodes_[a].shape;
  const Shape& sb = nodes_[bias].shape;
  if (sa.size() != 2 || sb.size() != 1 || sb[0] != sa[1]) {
    throw std::invalid_argument("add_row_broadcast: incompatible shapes " + shape_str(sa) +
                                " and " + shape_str(sb));
  }
  const int m = sa[0], n = sa[1];
  std::vector<S> out(static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<size_t>(i) * n + j] =
          nodes_[a].val[static_cast<size_t>(i) * n + j] + nodes_[bias].val[j];
  const bool rg = nodes_[a].requires_grad || nodes_[bias].requires_grad;
  Id out_id = push(sa, std::move(out), rg, nullptr);
  if (nodes_[out_id].requires_grad) {
    nodes_[out_id].backward = [this, a, bias, out_id, m, n]() {
      const S* g = nodes_[out_id].grad.data();
      if (nodes_[a].requires_grad) {
        S* da = grad_buf(a).data();
        for (size_t i = 0; i < static_cast<size_t>(m) * n; ++i) da[i] += g[i];
      }
      if (nodes_[bias].requires_grad) {
        S* db = grad_buf(bias).data();
        for (int j = 0; j < n; ++j) {
          S acc = S(0);
          for (int i = 0; i < m; ++i) acc += g[static_cast<size_t>(i) * n + j];
          db[j] += acc;
        }
      }
    };
  }
  return out_id;
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::mul(Id a, Id b) {
  check_same_shape(a, b, "mul");
  const size_t n = nodes_[a].val.size();
  std::vector<S> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = nodes_[a].val[i] * nodes_[b].val[i];
  const bool rg = nodes_[a].requires_grad || nodes_[b].requires_grad;
  Id out_id = push(nodes_[a].shape, std::move(out), rg, nullptr);
  if (nodes_[out_id].requires_grad) {
    nodes_[out_id].backward = [this, a, b, out_id, n]() {
      const S* g = nodes_[out_id].grad.data();
      if (nodes_[a].requires_grad) {
        S* da = grad_buf(a).data();
        for (size_t i = 0; i < n; ++i) da[i] += g[i] * nodes_[b].val[i];
      }
      if (nodes_[b].requires_grad) {
        S* db = grad_buf(b).data();
        for (size_t i = 0; i < n; ++i) db[i] += g[i] * nodes_[a].val[i];
      }
    };
  }
  return out_id;
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::scale(Id a, S c) {
  const size_t n = nodes_[a].val.size();
  std::vector<S> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = nodes_[a].val[i] * c;
  Id out_id = push(nodes_[a].shape, std::move(out), nodes_[a].requires_grad, nullptr);
  if (nodes_[out_id].requires_grad) {
    nodes_[out_id].backward = [this, a, out_id, c, n]() {
      const S* g = nodes_[out_id].grad.data();
      S* da = grad_buf(a).data();
      for (size_t i = 0; i < n; ++i) da[i] += g[i] * c;
    };
  }
  return out_id;
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::sum(Id a) {
  double acc = 0.0;
  for (S v : nodes_[a].val) acc += static_cast<double>(v);
  Id out_id = push({1}, {static_cast<S>(acc)}, nodes_[a].requires_grad, nullptr);
  if (nodes_[out_id].requires_grad) {
    nodes_[out_id].backward = [this, a, out_id]() {
      const S g = nodes_[out_id].grad[0];
      S* da = grad_buf(a).data();
      for (size_t i = 0; i < nodes_[a].val.size(); ++i) da[i] += g;
    };
  }
  return out_id;
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::gelu(Id a) {
  const size_t n = nodes_[a].val.size();
  std::vector<S> out(n);
  for (size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(nodes_[a].val[i]);
    out[i] = static_cast<S>(0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)));
  }
  Id out_id = push(nodes_[a].shape, std::move(out), nodes_[a].requires_grad, nullptr);
  if (nodes_[out_id].requires_grad) {
    nodes_[out_id].backward = [this, a, out_id, n]() {
      const S* g = nodes_[out_id].grad.data();
      S* da = grad_buf(a).data();
      for (size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(nodes_[a].val[i]);
        const double d =
            0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
        da[i] += g[i] * static_cast<S>(d);
      }
    };
  }
  return out_id;
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::layer_norm(Id x, Id gain, Id bias) {
  const Shape& sx = nodes_[x].shape;
  if (sx.size() != 2 || nodes_[gain].shape != Shape{sx[1]} ||
      nodes_[bias].shape != Shape{sx[1]}) {
    throw std::invalid_argument("layer_norm: incompatible shapes " + shape_str(sx) + ", " +
                                shape_str(nodes_[gain].shape) + ", " +
                                shape_str(nodes_[bias].shape));
  }
  constexpr double kEps = 1e-5;
  const int m = sx[0], n = sx[1];
  std::vector<S> out(static_cast<size_t>(m) * n);
  auto xhat = std::make_shared<std::vector<S>>(static_cast<size_t>(m) * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  const S* xv = nodes_[x].val.data();
  const S* gv = nodes_[gain].val.data();
  const S* bv = nodes_[bias].val.data();
  for (int i = 0; i < m; ++i) {
    const S* row = xv + static_cast<size_t>(i) * n;
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += row[j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kEps);
    (*inv_std)[i] = inv;
    for (int j = 0; j < n; ++j) {
      const double xh = (row[j] - mean) * inv;
      (*xhat)[static_cast<size_t>(i) * n + j] = static_cast<S>(xh);
      out[static_cast<size_t>(i) * n + j] = static_cast<S>(xh * gv[j] + bv[j]);
    }
  }
  const bool rg =
      nodes_[x].requires_grad || nodes_[gain].requires_grad || nodes_[bias].requires_grad;
  Id out_id = push(sx, std::move(out), rg, nullptr);
  if (nodes_[out_id].requires_grad) {
    nodes_[out_id].backward = [this, x, gain, bias, out_id, m, n, xhat, inv_std]() {
      const S* g = nodes_[out_id].grad.data();
      const S* gv2 = nodes_[gain].val.data();
      if (nodes_[gain].requires_grad) {
        S* dg = grad_buf(gain).data();
        for (int j = 0; j < n; ++j) {
          double acc = 0.0;
          for (int i = 0; i < m; ++i)
            acc += static_cast<double>(g[static_cast<size_t>(i) * n + j]) *
                   static_cast<double>((*xhat)[static_cast<size_t>(i) * n + j]);
          dg[j] += static_cast<S>(acc);
        }
      }
      if (nodes_[bias].requires_grad) {
        S* db = grad_buf(bias).data();
        for (int j = 0; j < n; ++j) {
          double acc = 0.0;
          for (int i = 0; i < m; ++i) acc += g[static_cast<size_t>(i) * n + j];
          db[j] += static_cast<S>(acc);
        }
      }
      if (nodes_[x].requires_grad) {
        S* dx = grad_buf(x).data();
        for (int i = 0; i < m; ++i) {
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (int j = 0; j < n; ++j) {
            const size_t idx = static_cast<size_t>(i) * n + j;
            const double dxh = static_cast<double>(g[idx]) * gv2[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * (*xhat)[idx];
          }
          mean_dxh /= n;
          mean_dxh_xh /= n;
          const double inv = (*inv_std)[i];
          for (int j = 0; j < n; ++j) {
            const size_t idx = static_cast<size_t>(i) * n + j;
            const double dxh = static_cast<double>(g[idx]) * gv2[j];
            dx[idx] += static_cast<S>(inv * (dxh - mean_dxh - (*xhat)[idx] * mean_dxh_xh));
          }
        }
      }
    };
  }
  return out_id;
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::embedding(Id table, std::vector<int> ids) {
  const Shape& st = nodes_[table].shape;
  if (st.size() != 2) throw std::invalid_argument("embedding: table must be 2-d, got " + shape_str(st));
  const int v = st[0], d = st[1];
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw std::out_of_range("embedding: id " + std::to_string(id) +
                              " outside table of size " + std::to_string(v));
    }
  }
  const int n = static_cast<int>(ids.size());
  std::vector<S> out(static_cast<size_t>(n) * d);
  const S* tv = nodes_[table].val.data();
  for (int i = 0; i < n; ++i) {
    const S* src = tv + static_cast<size_t>(ids[i]) * d;
    std::copy(src, src + d, out.begin() + static_cast<size_t>(i) * d);
  }
  auto ids_ptr = std::make_shared<std::vector<int>>(std::move(ids));
  Id out_id = push({n, d}, std::move(out), nodes_[table].requires_grad, nullptr);
  if (nodes_[out_id].requires_grad) {
    nodes_[out_id].backward = [this, table, out_id, ids_ptr, n, d]() {
      const S* g = nodes_[out_id].grad.data();
      S* dt = grad_buf(table).data();
      for (int i = 0; i < n; ++i) {
        S* dst = dt + static_cast<size_t>((*ids_ptr)[i]) * d;
        const S* src = g + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
  }
  return out_id;
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::cross_entropy(Id logits, std::vector<int> targets,
                                              std::vector<uint8_t> target_mask) {
  const Shape& sl = nodes_[logits].shape;
  if (sl.size() != 2) throw std::invalid_argument("cross_entropy: logits must be 2-d, got " + shape_str(sl));
  const int m = sl[0], vocab = sl[1];
  if (static_cast<int>(targets.size()) != m || static_cast<int>(target_mask.size()) != m) {
    throw std::invalid_argument("cross_entropy: targets/mask length must match logits rows");
  }
  int n_active = 0;
  for (int i = 0; i < m; ++i) {
    if (!target_mask[i]) continue;
    ++n_active;
    if (targets[i] < 0 || targets[i] >= vocab) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) +
                              " outside vocabulary of size " + std::to_string(vocab));
    }
  }
  if (n_active == 0) throw std::invalid_argument("cross_entropy: loss mask selects no positions");

  const S* lv = nodes_[logits].val.data();
  auto lse = std::make_shared<std::vector<double>>(m, 0.0);
  double loss = 0.0;
  for (int i = 0; i < m; ++i) {
    if (!target_mask[i]) continue;
    const S* row = lv + static_cast<size_t>(i) * vocab;
    double mx = row[0];
    for (int j = 1; j < vocab; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0.0;
    for (int j = 0; j < vocab; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    const double l = mx + std::log(sum);
    (*lse)[i] = l;
    loss += l - static_cast<double>(row[targets[i]]);
  }
  loss /= n_active;

  auto targets_ptr = std::make_shared<std::vector<int>>(std::move(targets));
  auto mask_ptr = std::make_shared<std::vector<uint8_t>>(std::move(target_mask));
  Id out_id = push({1}, {static_cast<S>(loss)}, nodes_[logits].requires_grad, nullptr);
  if (nodes_[out_id].requires_grad) {
    nodes_[out_id].backward = [this, logits, out_id, targets_ptr, mask_ptr, lse, m, vocab,
                               n_active]() {
      const double g = static_cast<double>(nodes_[out_id].grad[0]) / n_active;
      const S* lv2 = nodes_[logits].val.data();
      S* dl = grad_buf(logits).data();
      for (int i = 0; i < m; ++i) {
        if (!(*mask_ptr)[i]) continue;
        const S* row = lv2 + static_cast<size_t>(i) * vocab;
        S* drow = dl + static_cast<size_t>(i) * vocab;
        const double l = (*lse)[i];
        for (int j = 0; j < vocab; ++j) {
          const double p = std::exp(static_cast<double>(row[j]) - l);
          const double delta = (j == (*targets_ptr)[i]) ? 1.0 : 0.0;
          drow[j] += static_cast<S>(g * (p - delta));
        }
      }
    };
  }
  return out_id;
}

template <typename S>
typename TapeT<S>::Id TapeT<S>::multi_head_attention(Id q, Id k, Id v, Id wo,
                                                     const AttentionSpec& spec) {
  const int b_count = spec.batch, t_count = spec.seq_len;
  const int heads = spec.n_heads, dh = spec.d_head, dm = spec.d_model;
  if (heads * dh != dm) throw std::invalid_argument("attention: n_heads*d_head must equal d_model");
  const Shape expect{b_count * t_count, dm};
  for (Id id : {q, k, v}) {
    if (nodes_[id].shape != expect) {
      throw std::invalid_argument("attention: expected input shape " + shape_str(expect) +
                                  ", got " + shape_str(nodes_[id].shape));
    }
  }
  if (nodes_[wo].shape != Shape{dm, dm}) {
    throw std::invalid_argument("attention: W_O must be " + shape_str({dm, dm}) + ", got " +
                                shape_str(nodes_[wo].shape));
  }
  std::vector<int> valid = spec.valid_lens;
  if (valid.empty()) valid.assign(b_count, t_count);
  if (static_cast<int>(valid.size()) != b_count) {
    throw std::invalid_argument("attention: valid_lens size must equal batch");
  }
  for (int len : valid) {
    if (len < 1 || len > t_count) throw std::invalid_argument("attention: invalid sequence length");
  }
  const HookSet* hooks = spec.hooks;
  if (hooks && hooks->empty()) hooks = nullptr;
  if (hooks && b_count != 1) {
    throw std::invalid_argument("attention: hooks are only supported for batch size 1");
  }
  if (hooks && hooks->rewriter && grad_enabled_) {
    throw std::invalid_argument("attention: rewriter hooks require a grad-disabled tape");
  }
  if constexpr (!std::is_same_v<S, float>) {
    if (hooks) throw std::invalid_argument("attention: hooks are only supported in f32 mode");
  }

  const bool rg = grad_enabled_ && (nodes_[q].requires_grad || nodes_[k].requires_grad ||
                                    nodes_[v].requires_grad || nodes_[wo].requires_grad);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // Row storage for backward: site s = ((b*T + t)*H + h), length t+1.
  auto row_store = std::make_shared<std::vector<double>>();
  auto row_off = std::make_shared<std::vector<size_t>>();
  if (rg) {
    row_off->assign(static_cast<size_t>(b_count) * t_count * heads + 1, 0);
    size_t total = 0;
    for (int b = 0; b < b_count; ++b) {
      for (int t = 0; t < t_count; ++t) {
        for (int h = 0; h < heads; ++h) {
          const size_t s = (static_cast<size_t>(b) * t_count + t) * heads + h;
          (*row_off)[s] = total;
          if (t < valid[b]) total += static_cast<size_t>(t) + 1;
        }
      }
    }
    (*row_off)[row_off->size() - 1] = total;
    row_store->assign(total, 0.0);
  }

  std::vector<S> out(static_cast<size_t>(b_count) * t_count * dm, S(0));
  const S* qv = nodes_[q].val.data();
  const S* kv = nodes_[k].val.data();
  const S* vv = nodes_[v].val.data();
  const S* wv = nodes_[wo].val.data();

  for (int b = 0; b < b_count; ++b) {
    const int len = valid[b];
#pragma omp parallel for schedule(static) if (!hooks && len > 8)
    for (int t = 0; t < len; ++t) {
      std::vector<double> logits(t + 1), row(t + 1);
      std::vector<double> head_dh(dh), head_out(dm), acc(dm, 0.0);
      for (int h = 0; h < heads; ++h) {
        const S* qp = qv + (static_cast<size_t>(b) * t_count + t) * dm + h * dh;
        for (int j = 0; j <= t; ++j) {
          logits[j] = dot_d(qp, kv + (static_cast<size_t>(b) * t_count + j) * dm + h * dh, dh) *
                      inv_sqrt;
        }
        std::copy(logits.begin(), logits.end(), row.begin());
        softmax_row(row.data(), t + 1);
        if constexpr (std::is_same_v<S, float>) {
          if (hooks && hooks->rewriter) {
            const bool modified = hooks->rewriter(spec.layer, h, t, std::span<double>(row));
            if (modified) validate_rewritten_row(row, spec.layer, h, t);
          }
        }
        for (int r = 0; r < dh; ++r) head_dh[r] = 0.0;
        for (int j = 0; j <= t; ++j) {
          const double w = row[j];
          const S* vrow = vv + (static_cast<size_t>(b) * t_count + j) * dm + h * dh;
          for (int r = 0; r < dh; ++r) head_dh[r] += w * static_cast<double>(vrow[r]);
        }
        for (int c = 0; c < dm; ++c) head_out[c] = 0.0;
        for (int r = 0; r < dh; ++r) {
          const double x = head_dh[r];
          const S* worow = wv + (static_cast<size_t>(h) * dh + r) * dm;
          for (int c = 0; c < dm; ++c) head_out[c] += x * static_cast<double>(worow[c]);
        }
        if constexpr (std::is_same_v<S, float>) {
          if (hooks && hooks->observer) {
            AttnSite site;
            site.layer = spec.layer;
            site.head = h;
            site.step = t;
            site.presoftmax = std::span<const double>(logits);
            site.row = std::span<const double>(row);
            site.values = vv + static_cast<size_t>(b) * t_count * dm + h * dh;
            site.value_stride = dm;
            site.wo_block = wv + static_cast<size_t>(h) * dh * dm;
            site.head_out = std::span<const double>(head_out);
            site.d_head = dh;
            site.d_model = dm;
            hooks->observer(site);
          }
        }
        for (int c = 0; c < dm; ++c) acc[c] += head_out[c];
        if (rg) {
          const size_t s = (static_cast<size_t>(b) * t_count + t) * heads + h;
          std::copy(row.begin(), row.end(), row_store->begin() + (*row_off)[s]);
        }
      }
      S* orow = out.data() + (static_cast<size_t>(b) * t_count + t) * dm;
      for (int c = 0; c < dm; ++c) orow[c] = static_cast<S>(acc[c]);
    }
  }

  auto valid_ptr = std::make_shared<std::vector<int>>(std::move(valid));
  Id out_id = push(expect, std::move(out), rg, nullptr);
  if (nodes_[out_id].requires_grad) {
    nodes_[out_id].backward = [this, q, k, v, wo, out_id, b_count, t_count, heads, dh, dm,
                               inv_sqrt, row_store, row_off, valid_ptr]() {
      const S* g = nodes_[out_id].grad.data();
      const S* qv2 = nodes_[q].val.data();
      const S* kv2 = nodes_[k].val.data();
      const S* vv2 = nodes_[v].val.data();
      const S* wv2 = nodes_[wo].val.data();
      S* dq = nodes_[q].requires_grad ? grad_buf(q).data() : nullptr;
      S* dk = nodes_[k].requires_grad ? grad_buf(k).data() : nullptr;
      S* dv = nodes_[v].requires_grad ? grad_buf(v).data() : nullptr;
      S* dwo = nodes_[wo].requires_grad ? grad_buf(wo).data() : nullptr;
      // W_O transposed per head so dhead accumulates elementwise over r
      std::vector<S> wot(static_cast<size_t>(dm) * dm);
      for (int h = 0; h < heads; ++h) {
        for (int r = 0; r < dh; ++r) {
          for (int c = 0; c < dm; ++c) {
            wot[(static_cast<size_t>(h) * dm + c) * dh + r] =
                wv2[(static_cast<size_t>(h) * dh + r) * dm + c];
          }
        }
      }
      std::vector<double> head_dh(dh), dhead(dh), dw, ds;
      for (int b = 0; b < b_count; ++b) {
        const int len = (*valid_ptr)[b];
        for (int h = 0; h < heads; ++h) {
          for (int t = 0; t < len; ++t) {
            const size_t s = (static_cast<size_t>(b) * t_count + t) * heads + h;
            const double* row = row_store->data() + (*row_off)[s];
            const S* grow = g + (static_cast<size_t>(b) * t_count + t) * dm;
            // recompute head_dh = sum_j row_j v_j
            for (int r = 0; r < dh; ++r) head_dh[r] = 0.0;
            for (int j = 0; j <= t; ++j) {
              const double w = row[j];
              const S* vrow = vv2 + (static_cast<size_t>(b) * t_count + j) * dm + h * dh;
              for (int r = 0; r < dh; ++r) head_dh[r] += w * static_cast<double>(vrow[r]);
            }
            for (int r = 0; r < dh; ++r) dhead[r] = 0.0;
            for (int c = 0; c < dm; ++c) {
              const double x = grow[c];
              const S* wtrow = wot.data() + (static_cast<size_t>(h) * dm + c) * dh;
              for (int r = 0; r < dh; ++r) dhead[r] += x * static_cast<double>(wtrow[r]);
            }
            if (dwo) {
              for (int r = 0; r < dh; ++r) {
                S* dworow = dwo + (static_cast<size_t>(h) * dh + r) * dm;
                const double x = head_dh[r];
                for (int c = 0; c < dm; ++c) dworow[c] += static_cast<S>(x * grow[c]);
              }
            }
            dw.assign(t + 1, 0.0);
            for (int j = 0; j <= t; ++j) {
              const S* vrow = vv2 + (static_cast<size_t>(b) * t_count + j) * dm + h * dh;
              double a = 0.0;
              for (int r = 0; r < dh; ++r) a += static_cast<double>(vrow[r]) * dhead[r];
              dw[j] = a;
              if (dv) {
                S* dvrow = dv + (static_cast<size_t>(b) * t_count + j) * dm + h * dh;
                for (int r = 0; r < dh; ++r) dvrow[r] += static_cast<S>(row[j] * dhead[r]);
              }
            }
            // softmax backward
            double dot = 0.0;
            for (int j = 0; j <= t; ++j) dot += row[j] * dw[j];
            ds.assign(t + 1, 0.0);
            for (int j = 0; j <= t; ++j) ds[j] = row[j] * (dw[j] - dot);
            const S* qrow = qv2 + (static_cast<size_t>(b) * t_count + t) * dm + h * dh;
            for (int j = 0; j <= t; ++j) {
              const double dsj = ds[j] * inv_sqrt;
              const S* krow = kv2 + (static_cast<size_t>(b) * t_count + j) * dm + h * dh;
              if (dq) {
                S* dqrow = dq + (static_cast<size_t>(b) * t_count + t) * dm + h * dh;
                for (int r = 0; r < dh; ++r) dqrow[r] += static_cast<S>(dsj * krow[r]);
              }
              if (dk) {
                S* dkrow = dk + (static_cast<size_t>(b) * t_count + j) * dm + h * dh;
                for (int r = 0; r < dh; ++r) dkrow[r] += static_cast<S>(dsj * qrow[r]);
              }
            }
          }
        }
      }
    };
  }
  return out_id;
}

template <typename S>
void TapeT<S>::backward(Id root) {
  if (root < 0 || root >= static_cast<Id>(nodes_.size())) {
    throw std::out_of_range("backward: root id out of range");
  }
  if (nodes_[root].val.size() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got shape " +
                                shape_str(nodes_[root].shape));
  }
  grad_buf(root)[0] = S(1);
  for (Id id = root; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.requires_grad && !n.grad.empty() && n.backward) n.backward();
  }
}

template class TapeT<float>;
template class TapeT<double>;

}  // namespace xattn
