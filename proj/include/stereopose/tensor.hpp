#pragma once

#include <string>
#include <vector>

#include "stereopose/errors.hpp"

namespace stereopose {

// Dense N-d array holding values and an optional gradient buffer of the same
// shape. The scalar type is float in production and double in gradient-check
// mode.
template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> v;
  std::vector<T> g;

  TensorT() = default;
  explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
    v.assign(numel_of(shape), T(0));
  }

  static size_t numel_of(const std::vector<int>& s) {
    size_t n = 1;
    for (int e : s) {
      if (e <= 0) throw ShapeMismatch("non-positive extent in tensor shape");
      n *= static_cast<size_t>(e);
    }
    return n;
  }

  size_t numel() const { return v.size(); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), T(0));
  }
  void zero_grad() {
    ensure_grad();
    std::fill(g.begin(), g.end(), T(0));
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

using Tensor = TensorT<float>;

}  // namespace stereopose
