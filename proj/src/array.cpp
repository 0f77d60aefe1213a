#include "avvp/array.hpp"

#include <cmath>
#include <sstream>

namespace avvp {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d < 1) throw DimensionError("shape " + shape_str(s) + " has a non-positive dimension");
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Array::Array(Shape s) : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), 0.0) {}

Array::Array(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (static_cast<int64_t>(data.size()) != shape_numel(shape)) {
    throw DimensionError("value count " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
}

Array Array::scalar(double v) { return Array(Shape{}, {v}); }

Array Array::full(Shape s, double v) {
  Array a(std::move(s));
  std::fill(a.data.begin(), a.data.end(), v);
  return a;
}

int64_t Array::rows() const {
  if (shape.size() != 2) throw DimensionError("rows(): array is not rank-2, shape " + shape_str(shape));
  return shape[0];
}

int64_t Array::cols() const {
  if (shape.size() != 2) throw DimensionError("cols(): array is not rank-2, shape " + shape_str(shape));
  return shape[1];
}

double& Array::at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }

double Array::at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

bool Array::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

}  // namespace avvp
