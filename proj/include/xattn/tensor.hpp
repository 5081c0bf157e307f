#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace xattn {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor. Training storage is f32; the double instantiation
// exists as a reference mode for gradient checks.
template <typename S>
struct TensorT {
  Shape shape;
  std::vector<S> data;
  bool requires_grad = false;

  TensorT() = default;
  TensorT(Shape sh, std::vector<S> values, bool rg = false);

  static TensorT zeros(Shape sh, bool rg = false);
  static TensorT full(Shape sh, S value, bool rg = false);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  S& at(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
  S at(int i, int j) const { return data[static_cast<size_t>(i) * cols() + j]; }

  bool all_finite() const;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename To, typename From>
TensorT<To> tensor_cast(const TensorT<From>& t) {
  TensorT<To> out;
  out.shape = t.shape;
  out.requires_grad = t.requires_grad;
  out.data.assign(t.data.begin(), t.data.end());
  return out;
}

}  // namespace xattn
