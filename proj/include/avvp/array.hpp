#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avvp/error.hpp"

namespace avvp {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Dense row-major array of doubles. Plain storage with no autodiff attached;
/// parameters, features and probabilities live in Arrays, while differentiable
/// computation happens on Tensor handles bound to a Tape.
struct Array {
  Shape shape;
  std::vector<double> data;

  Array() = default;
  explicit Array(Shape s);
  Array(Shape s, std::vector<double> d);

  static Array scalar(double v);
  static Array full(Shape s, double v);

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }

  // rank-2 accessors
  int64_t rows() const;
  int64_t cols() const;
  double& at(int64_t r, int64_t c);
  double at(int64_t r, int64_t c) const;

  bool all_finite() const;
};

bool same_shape(const Shape& a, const Shape& b);

}  // namespace avvp
