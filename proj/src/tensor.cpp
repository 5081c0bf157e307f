#include "xattn/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace xattn {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

template <typename S>
TensorT<S>::TensorT(Shape sh, std::vector<S> values, bool rg)
    : shape(std::move(sh)), data(std::move(values)), requires_grad(rg) {
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimension must be positive, got shape " + shape_str(shape));
  }
  if (static_cast<int64_t>(data.size()) != shape_numel(shape)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
}

template <typename S>
TensorT<S> TensorT<S>::zeros(Shape sh, bool rg) {
  std::vector<S> data(shape_numel(sh), S(0));
  return TensorT(std::move(sh), std::move(data), rg);
}

template <typename S>
TensorT<S> TensorT<S>::full(Shape sh, S value, bool rg) {
  return TensorT(sh, std::vector<S>(shape_numel(sh), value), rg);
}

template <typename S>
bool TensorT<S>::all_finite() const {
  for (S v : data) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

template struct TensorT<float>;
template struct TensorT<double>;

}  // namespace xattn
