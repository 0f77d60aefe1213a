#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "avvp/array.hpp"

namespace avvp {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const;
  int32_t id() const { return id_; }

  const Shape& shape() const;
  int64_t size() const;
  int64_t rank() const;
  bool requires_grad() const;

  const std::vector<double>& values() const;
  Array value() const;

  /// Gradient of the last backward pass. Throws if none was computed.
  Array grad() const;

 private:
  friend class Tape;
  Tensor(Tape* tape, int32_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int32_t id_ = -1;
};

/// Wengert-list reverse-mode tape. Nodes are appended in execution order, so
/// parents always precede children; backward walks ids in reverse. Every
/// forward op checks its output for non-finite values and throws NumericError.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Array value, bool requires_grad = false);
  Tensor constant(Array value) { return leaf(std::move(value), false); }
  Tensor constant_scalar(double v) { return leaf(Array::scalar(v), false); }

  /// Backpropagate from a scalar loss. Resets all gradients first, so two
  /// passes over the same tape produce bit-identical results.
  void backward(const Tensor& loss);

  size_t num_nodes() const { return nodes_.size(); }

  /// Debug hook: corrupt the backward rule of the named op so gradient checks
  /// fail. Used as the negative control of the verification suite.
  static void inject_backward_fault(const std::string& op_name);
  static void clear_backward_fault();

  using BackwardFn = std::function<void(Tape&, int32_t)>;

  struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // sized on demand during backward
    std::vector<int32_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
    const char* op = "leaf";
  };

  Node& node(int32_t id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }

  /// Append an op node. Output values must already be computed; throws
  /// NumericError if they contain NaN/Inf.
  Tensor emit(const char* op, Shape shape, std::vector<double> values,
              std::vector<int32_t> parents, BackwardFn backward);

 private:
  // deque: appending never invalidates references handed out via values()
  std::deque<Node> nodes_;
};

// ---- primitive ops ---------------------------------------------------------

/// Matrix product. Supports [m,k]x[k,n], [B,m,k]x[B,k,n] and [B,m,k]x[k,n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Swap the last two dims (rank 2 or 3).
Tensor transpose_last2(const Tensor& x);

/// Softmax over the last dimension, stabilized by max subtraction.
Tensor softmax_lastdim(const Tensor& x);

/// Layer normalization over the last dimension with affine gamma/beta.
/// Population variance; eps added inside the square root.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);  // subgradient 0 at 0
Tensor log(const Tensor& x);

/// Elementwise clamp to [lo, hi]; gradient passes through inside the range.
Tensor clamp(const Tensor& x, double lo, double hi);

/// Elementwise a*x + b.
Tensor affine(const Tensor& x, double a, double b);
Tensor scale(const Tensor& x, double s);

// Binary elementwise ops. Shapes must be equal, or b may be rank-1 matching
// the last dimension of a (broadcast across leading dims).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// Split T rows into n contiguous chunks (earlier chunks one longer when
/// T % n != 0) and average each chunk. [T,d] -> [n,d].
Tensor mean_pool_segments(const Tensor& x, int64_t n);

/// Column slice [r, c0:c1) of a rank-2 tensor.
Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1);

/// Concatenate rank-2 tensors along columns.
Tensor concat_cols(const std::vector<Tensor>& xs);

Tensor sum_all(const Tensor& x);   // -> scalar (rank 0)
Tensor mean_all(const Tensor& x);  // -> scalar (rank 0)

/// Sum a rank-2 tensor over rows: [m,n] -> [n].
Tensor sum_dim0(const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

// ---- gradient checking -----------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  int worst_input = -1;
  int64_t worst_elem = -1;
};

/// Builds a scalar loss from leaves and compares tape gradients against
/// central finite differences. Relative error uses the guarded denominator
/// max(1, |analytic|, |numeric|). Throws NumericError if the function is
/// non-finite at a perturbed point.
using TapeFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

GradCheckReport grad_check(const TapeFn& f, const std::vector<Array>& point,
                           double h = 1e-5, double tol = 1e-4);

}  // namespace avvp
