#include "avvp/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace avvp {

namespace {

std::string& fault_op() {
  static std::string op;
  return op;
}

void check_finite(const char* op, const std::vector<double>& vals) {
  for (double v : vals) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value in output");
    }
  }
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tape& Tensor::tape() const {
  if (!tape_) throw Error("tensor handle is not bound to a tape");
  return *tape_;
}

const Shape& Tensor::shape() const { return tape().node(id_).shape; }

int64_t Tensor::size() const { return static_cast<int64_t>(tape().node(id_).values.size()); }

int64_t Tensor::rank() const { return static_cast<int64_t>(shape().size()); }

bool Tensor::requires_grad() const { return tape().node(id_).requires_grad; }

const std::vector<double>& Tensor::values() const { return tape().node(id_).values; }

Array Tensor::value() const {
  const Tape::Node& n = tape().node(id_);
  return Array(n.shape, n.values);
}

Array Tensor::grad() const {
  const Tape::Node& n = tape().node(id_);
  if (n.grad.empty()) throw Error("no gradient stored; run Tape::backward first");
  return Array(n.shape, n.grad);
}

// ---- Tape ------------------------------------------------------------------

Tensor Tape::leaf(Array value, bool requires_grad) {
  check_finite("leaf", value.data);
  Node n;
  n.shape = std::move(value.shape);
  n.values = std::move(value.data);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int32_t>(nodes_.size() - 1));
}

Tensor Tape::emit(const char* op, Shape shape, std::vector<double> values,
                  std::vector<int32_t> parents, BackwardFn backward) {
  check_finite(op, values);
  Node n;
  n.shape = std::move(shape);
  n.values = std::move(values);
  n.parents = std::move(parents);
  n.op = op;
  for (int32_t p : n.parents) {
    if (node(p).requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int32_t>(nodes_.size() - 1));
}

void Tape::inject_backward_fault(const std::string& op_name) { fault_op() = op_name; }

void Tape::clear_backward_fault() { fault_op().clear(); }

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw ArgumentError("backward: loss must be a scalar");
  const int32_t root = loss.id();

  // reset so repeated passes are bit-identical
  for (Node& n : nodes_) n.grad.clear();

  // reachability from the loss through grad-requiring nodes
  std::vector<char> reach(nodes_.size(), 0);
  if (!nodes_[static_cast<size_t>(root)].requires_grad) {
    // nothing depends on a parameter; leave requires_grad leaves with zeros
    for (Node& n : nodes_) {
      if (n.requires_grad) n.grad.assign(n.values.size(), 0.0);
    }
    return;
  }
  reach[static_cast<size_t>(root)] = 1;
  for (int32_t id = root; id >= 0; --id) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (!reach[static_cast<size_t>(id)] || !n.requires_grad) continue;
    for (int32_t p : n.parents) {
      if (node(p).requires_grad) reach[static_cast<size_t>(p)] = 1;
    }
  }
  for (size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.requires_grad && (reach[i] || n.parents.empty())) {
      n.grad.assign(n.values.size(), 0.0);
    }
  }

  nodes_[static_cast<size_t>(root)].grad[0] = 1.0;
  const std::string& fault = fault_op();
  for (int32_t id = root; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!reach[static_cast<size_t>(id)] || !n.requires_grad || !n.backward) continue;
    if (!fault.empty() && fault == n.op) {
      for (double& g : n.grad) g *= 1.5;
    }
    n.backward(*this, id);
  }
}

namespace {

// accumulate into a parent's grad if it participates in this pass
inline std::vector<double>* grad_of(Tape& t, int32_t id) {
  Tape::Node& n = t.node(id);
  if (!n.requires_grad || n.grad.empty()) return nullptr;
  return &n.grad;
}

}  // namespace

// ---- matmul ----------------------------------------------------------------

namespace {

struct MatmulDims {
  int64_t batch, m, k, n;
  bool a_batched, b_batched;
};

MatmulDims matmul_dims(const Shape& sa, const Shape& sb) {
  MatmulDims d{};
  if (sa.size() == 2 && sb.size() == 2) {
    d = {1, sa[0], sa[1], sb[1], false, false};
    if (sa[1] != sb[0]) {
      throw DimensionError("matmul: inner dimensions disagree, " + shape_str(sa) + " x " + shape_str(sb));
    }
  } else if (sa.size() == 3 && sb.size() == 3) {
    if (sa[0] != sb[0] || sa[2] != sb[1]) {
      throw DimensionError("matmul: incompatible shapes " + shape_str(sa) + " x " + shape_str(sb));
    }
    d = {sa[0], sa[1], sa[2], sb[2], true, true};
  } else if (sa.size() == 3 && sb.size() == 2) {
    if (sa[2] != sb[0]) {
      throw DimensionError("matmul: inner dimensions disagree, " + shape_str(sa) + " x " + shape_str(sb));
    }
    d = {sa[0], sa[1], sa[2], sb[1], true, false};
  } else {
    throw DimensionError("matmul: unsupported ranks " + shape_str(sa) + " x " + shape_str(sb));
  }
  return d;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& t = a.tape();
  const MatmulDims d = matmul_dims(a.shape(), b.shape());
  const std::vector<double>& av = a.values();
  const std::vector<double>& bv = b.values();

  Shape out_shape = d.a_batched ? Shape{d.batch, d.m, d.n} : Shape{d.m, d.n};
  std::vector<double> out(static_cast<size_t>(d.batch * d.m * d.n), 0.0);
  const int64_t a_stride = d.m * d.k;
  const int64_t b_stride = d.b_batched ? d.k * d.n : 0;
  const int64_t c_stride = d.m * d.n;
  for (int64_t bi = 0; bi < d.batch; ++bi) {
    const double* A = av.data() + bi * a_stride;
    const double* B = bv.data() + bi * b_stride;
    double* C = out.data() + bi * c_stride;
    for (int64_t i = 0; i < d.m; ++i) {
      for (int64_t kk = 0; kk < d.k; ++kk) {
        const double aik = A[i * d.k + kk];
        const double* Brow = B + kk * d.n;
        double* Crow = C + i * d.n;
        for (int64_t j = 0; j < d.n; ++j) Crow[j] += aik * Brow[j];
      }
    }
  }

  const int32_t pa = a.id(), pb = b.id();
  return t.emit("matmul", std::move(out_shape), std::move(out), {pa, pb},
                [pa, pb, d, a_stride, b_stride, c_stride](Tape& tt, int32_t self) {
                  const std::vector<double>& g = tt.node(self).grad;
                  const std::vector<double>& A = tt.node(pa).values;
                  const std::vector<double>& B = tt.node(pb).values;
                  std::vector<double>* ga = grad_of(tt, pa);
                  std::vector<double>* gb = grad_of(tt, pb);
                  for (int64_t bi = 0; bi < d.batch; ++bi) {
                    const double* G = g.data() + bi * c_stride;
                    const double* Ab = A.data() + bi * a_stride;
                    const double* Bb = B.data() + bi * b_stride;
                    if (ga) {
                      double* GA = ga->data() + bi * a_stride;
                      // dA = dC * B^T
                      for (int64_t i = 0; i < d.m; ++i) {
                        for (int64_t kk = 0; kk < d.k; ++kk) {
                          double acc = 0.0;
                          const double* Grow = G + i * d.n;
                          const double* Brow = Bb + kk * d.n;
                          for (int64_t j = 0; j < d.n; ++j) acc += Grow[j] * Brow[j];
                          GA[i * d.k + kk] += acc;
                        }
                      }
                    }
                    if (gb) {
                      double* GB = gb->data() + bi * b_stride;
                      // dB = A^T * dC
                      for (int64_t i = 0; i < d.m; ++i) {
                        const double* Arow = Ab + i * d.k;
                        const double* Grow = G + i * d.n;
                        for (int64_t kk = 0; kk < d.k; ++kk) {
                          const double aik = Arow[kk];
                          double* GBrow = GB + kk * d.n;
                          for (int64_t j = 0; j < d.n; ++j) GBrow[j] += aik * Grow[j];
                        }
                      }
                    }
                  }
                });
}

// ---- transpose -------------------------------------------------------------

Tensor transpose_last2(const Tensor& x) {
  Tape& t = x.tape();
  const Shape& s = x.shape();
  if (s.size() != 2 && s.size() != 3) {
    throw DimensionError("transpose_last2: need rank 2 or 3, got " + shape_str(s));
  }
  const int64_t batch = s.size() == 3 ? s[0] : 1;
  const int64_t m = s[s.size() - 2], n = s[s.size() - 1];
  Shape out_shape = s;
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);

  const std::vector<double>& xv = x.values();
  std::vector<double> out(xv.size());
  for (int64_t bi = 0; bi < batch; ++bi) {
    const double* X = xv.data() + bi * m * n;
    double* Y = out.data() + bi * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) Y[j * m + i] = X[i * n + j];
  }

  const int32_t px = x.id();
  return t.emit("transpose_last2", std::move(out_shape), std::move(out), {px},
                [px, batch, m, n](Tape& tt, int32_t self) {
                  std::vector<double>* gx = grad_of(tt, px);
                  if (!gx) return;
                  const std::vector<double>& g = tt.node(self).grad;
                  for (int64_t bi = 0; bi < batch; ++bi) {
                    const double* G = g.data() + bi * m * n;
                    double* GX = gx->data() + bi * m * n;
                    for (int64_t j = 0; j < n; ++j)
                      for (int64_t i = 0; i < m; ++i) GX[i * n + j] += G[j * m + i];
                  }
                });
}

// ---- softmax ----------------------------------------------------------------

Tensor softmax_lastdim(const Tensor& x) {
  Tape& t = x.tape();
  const Shape& s = x.shape();
  if (s.empty()) throw DimensionError("softmax_lastdim: scalar input has no last dimension");
  const int64_t n = s.back();
  const int64_t slices = x.size() / n;

  const std::vector<double>& xv = x.values();
  std::vector<double> out(xv.size());
  for (int64_t sl = 0; sl < slices; ++sl) {
    const double* X = xv.data() + sl * n;
    double* Y = out.data() + sl * n;
    double mx = X[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, X[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      Y[j] = std::exp(X[j] - mx);
      sum += Y[j];
    }
    for (int64_t j = 0; j < n; ++j) Y[j] /= sum;
  }

  const int32_t px = x.id();
  return t.emit("softmax_lastdim", s, std::move(out), {px},
                [px, n, slices](Tape& tt, int32_t self) {
                  std::vector<double>* gx = grad_of(tt, px);
                  if (!gx) return;
                  const std::vector<double>& g = tt.node(self).grad;
                  const std::vector<double>& y = tt.node(self).values;
                  for (int64_t sl = 0; sl < slices; ++sl) {
                    const double* G = g.data() + sl * n;
                    const double* Y = y.data() + sl * n;
                    double* GX = gx->data() + sl * n;
                    double dot = 0.0;
                    for (int64_t j = 0; j < n; ++j) dot += G[j] * Y[j];
                    for (int64_t j = 0; j < n; ++j) GX[j] += Y[j] * (G[j] - dot);
                  }
                });
}

// ---- layer norm --------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  Tape& t = x.tape();
  if (eps <= 0) throw ArgumentError("layer_norm: eps must be positive");
  const Shape& s = x.shape();
  if (s.empty()) throw DimensionError("layer_norm: scalar input has no feature dimension");
  const int64_t d = s.back();
  if (gamma.rank() != 1 || gamma.shape()[0] != d || beta.rank() != 1 || beta.shape()[0] != d) {
    throw DimensionError("layer_norm: gamma/beta must be rank-1 of size " + std::to_string(d));
  }
  const int64_t slices = x.size() / d;

  const std::vector<double>& xv = x.values();
  const std::vector<double>& gv = gamma.values();
  const std::vector<double>& bv = beta.values();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv(static_cast<size_t>(slices));
  for (int64_t sl = 0; sl < slices; ++sl) {
    const double* X = xv.data() + sl * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += X[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = X[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double iv = 1.0 / std::sqrt(var + eps);
    inv[static_cast<size_t>(sl)] = iv;
    double* XH = xhat.data() + sl * d;
    double* Y = out.data() + sl * d;
    for (int64_t j = 0; j < d; ++j) {
      XH[j] = (X[j] - mu) * iv;
      Y[j] = XH[j] * gv[static_cast<size_t>(j)] + bv[static_cast<size_t>(j)];
    }
  }

  const int32_t px = x.id(), pg = gamma.id(), pb = beta.id();
  return t.emit("layer_norm", s, std::move(out), {px, pg, pb},
                [px, pg, pb, d, slices, xhat = std::move(xhat),
                 inv = std::move(inv)](Tape& tt, int32_t self) {
                  const std::vector<double>& g = tt.node(self).grad;
                  const std::vector<double>& gv = tt.node(pg).values;
                  std::vector<double>* gx = grad_of(tt, px);
                  std::vector<double>* gg = grad_of(tt, pg);
                  std::vector<double>* gb = grad_of(tt, pb);
                  for (int64_t sl = 0; sl < slices; ++sl) {
                    const double* G = g.data() + sl * d;
                    const double* XH = xhat.data() + sl * d;
                    if (gg || gb) {
                      for (int64_t j = 0; j < d; ++j) {
                        if (gg) (*gg)[static_cast<size_t>(j)] += G[j] * XH[j];
                        if (gb) (*gb)[static_cast<size_t>(j)] += G[j];
                      }
                    }
                    if (gx) {
                      double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                      for (int64_t j = 0; j < d; ++j) {
                        const double dxh = G[j] * gv[static_cast<size_t>(j)];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * XH[j];
                      }
                      mean_dxh /= static_cast<double>(d);
                      mean_dxh_xh /= static_cast<double>(d);
                      const double iv = inv[static_cast<size_t>(sl)];
                      double* GX = gx->data() + sl * d;
                      for (int64_t j = 0; j < d; ++j) {
                        const double dxh = G[j] * gv[static_cast<size_t>(j)];
                        GX[j] += iv * (dxh - mean_dxh - XH[j] * mean_dxh_xh);
                      }
                    }
                  }
                });
}

// ---- unary elementwise -------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* name, const Tensor& x, Fwd fwd, Bwd bwd) {
  Tape& t = x.tape();
  const std::vector<double>& xv = x.values();
  std::vector<double> out(xv.size());
  for (size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  const int32_t px = x.id();
  return t.emit(name, x.shape(), std::move(out), {px}, [px, bwd](Tape& tt, int32_t self) {
    std::vector<double>* gx = grad_of(tt, px);
    if (!gx) return;
    const std::vector<double>& g = tt.node(self).grad;
    const std::vector<double>& y = tt.node(self).values;
    const std::vector<double>& xin = tt.node(px).values;
    for (size_t i = 0; i < g.size(); ++i) (*gx)[i] += bwd(g[i], xin[i], y[i]);
  });
}

}  // namespace

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      "sigmoid", x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double g, double, double y) { return g * y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double g, double, double y) { return g * (1.0 - y * y); });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      "relu", x, [](double v) { return v > 0 ? v : 0.0; },
      [](double g, double xin, double) { return xin > 0 ? g : 0.0; });
}

Tensor log(const Tensor& x) {
  return unary_op(
      "log", x, [](double v) { return std::log(v); },
      [](double g, double xin, double) { return g / xin; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw ArgumentError("clamp: lo > hi");
  return unary_op(
      "clamp", x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](double g, double xin, double) { return (xin >= lo && xin <= hi) ? g : 0.0; });
}

Tensor affine(const Tensor& x, double a, double b) {
  return unary_op(
      "affine", x, [a, b](double v) { return a * v + b; },
      [a](double g, double, double) { return g * a; });
}

Tensor scale(const Tensor& x, double s) { return affine(x, s, 0.0); }

// ---- binary elementwise -------------------------------------------------------

namespace {

enum class BroadcastKind { same, row_vector };

BroadcastKind binary_broadcast(const char* name, const Shape& a, const Shape& b) {
  if (same_shape(a, b)) return BroadcastKind::same;
  if (b.size() == 1 && !a.empty() && a.back() == b[0]) return BroadcastKind::row_vector;
  throw DimensionError(std::string(name) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                       " do not broadcast");
}

template <typename Fwd>
std::vector<double> binary_forward(const std::vector<double>& a, const std::vector<double>& b,
                                   BroadcastKind kind, Fwd f) {
  std::vector<double> out(a.size());
  if (kind == BroadcastKind::same) {
    for (size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  } else {
    const size_t n = b.size();
    for (size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i % n]);
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Tape& t = a.tape();
  const BroadcastKind kind = binary_broadcast("add", a.shape(), b.shape());
  std::vector<double> out =
      binary_forward(a.values(), b.values(), kind, [](double x, double y) { return x + y; });
  const int32_t pa = a.id(), pb = b.id();
  return t.emit("add", a.shape(), std::move(out), {pa, pb}, [pa, pb, kind](Tape& tt, int32_t self) {
    const std::vector<double>& g = tt.node(self).grad;
    if (std::vector<double>* ga = grad_of(tt, pa)) {
      for (size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (std::vector<double>* gb = grad_of(tt, pb)) {
      if (kind == BroadcastKind::same) {
        for (size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
      } else {
        const size_t n = gb->size();
        for (size_t i = 0; i < g.size(); ++i) (*gb)[i % n] += g[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tape& t = a.tape();
  const BroadcastKind kind = binary_broadcast("sub", a.shape(), b.shape());
  std::vector<double> out =
      binary_forward(a.values(), b.values(), kind, [](double x, double y) { return x - y; });
  const int32_t pa = a.id(), pb = b.id();
  return t.emit("sub", a.shape(), std::move(out), {pa, pb}, [pa, pb, kind](Tape& tt, int32_t self) {
    const std::vector<double>& g = tt.node(self).grad;
    if (std::vector<double>* ga = grad_of(tt, pa)) {
      for (size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (std::vector<double>* gb = grad_of(tt, pb)) {
      if (kind == BroadcastKind::same) {
        for (size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
      } else {
        const size_t n = gb->size();
        for (size_t i = 0; i < g.size(); ++i) (*gb)[i % n] -= g[i];
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tape& t = a.tape();
  const BroadcastKind kind = binary_broadcast("mul", a.shape(), b.shape());
  std::vector<double> out =
      binary_forward(a.values(), b.values(), kind, [](double x, double y) { return x * y; });
  const int32_t pa = a.id(), pb = b.id();
  return t.emit("mul", a.shape(), std::move(out), {pa, pb}, [pa, pb, kind](Tape& tt, int32_t self) {
    const std::vector<double>& g = tt.node(self).grad;
    const std::vector<double>& av = tt.node(pa).values;
    const std::vector<double>& bv = tt.node(pb).values;
    if (std::vector<double>* ga = grad_of(tt, pa)) {
      if (kind == BroadcastKind::same) {
        for (size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
      } else {
        const size_t n = bv.size();
        for (size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i % n];
      }
    }
    if (std::vector<double>* gb = grad_of(tt, pb)) {
      if (kind == BroadcastKind::same) {
        for (size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
      } else {
        const size_t n = gb->size();
        for (size_t i = 0; i < g.size(); ++i) (*gb)[i % n] += g[i] * av[i];
      }
    }
  });
}

// ---- pooling / reshaping ------------------------------------------------------

Tensor mean_pool_segments(const Tensor& x, int64_t n) {
  Tape& t = x.tape();
  if (x.rank() != 2) throw DimensionError("mean_pool_segments: need rank-2 input, got " + shape_str(x.shape()));
  const int64_t T = x.shape()[0], d = x.shape()[1];
  if (n < 1 || n > T) {
    throw ArgumentError("mean_pool_segments: target length " + std::to_string(n) +
                        " outside [1, " + std::to_string(T) + "]");
  }
  // first (T % n) chunks are one row longer
  const int64_t base = T / n, rem = T % n;
  const std::vector<double>& xv = x.values();
  std::vector<double> out(static_cast<size_t>(n * d), 0.0);
  std::vector<int64_t> starts(static_cast<size_t>(n + 1), 0);
  for (int64_t c = 0; c < n; ++c) {
    starts[static_cast<size_t>(c + 1)] = starts[static_cast<size_t>(c)] + base + (c < rem ? 1 : 0);
  }
  for (int64_t c = 0; c < n; ++c) {
    const int64_t s0 = starts[static_cast<size_t>(c)], s1 = starts[static_cast<size_t>(c + 1)];
    const double invlen = 1.0 / static_cast<double>(s1 - s0);
    for (int64_t r = s0; r < s1; ++r) {
      const double* X = xv.data() + r * d;
      double* Y = out.data() + c * d;
      for (int64_t j = 0; j < d; ++j) Y[j] += X[j] * invlen;
    }
  }

  const int32_t px = x.id();
  return t.emit("mean_pool_segments", Shape{n, d}, std::move(out), {px},
                [px, d, n, starts = std::move(starts)](Tape& tt, int32_t self) {
                  std::vector<double>* gx = grad_of(tt, px);
                  if (!gx) return;
                  const std::vector<double>& g = tt.node(self).grad;
                  for (int64_t c = 0; c < n; ++c) {
                    const int64_t s0 = starts[static_cast<size_t>(c)], s1 = starts[static_cast<size_t>(c + 1)];
                    const double invlen = 1.0 / static_cast<double>(s1 - s0);
                    const double* G = g.data() + c * d;
                    for (int64_t r = s0; r < s1; ++r) {
                      double* GX = gx->data() + r * d;
                      for (int64_t j = 0; j < d; ++j) GX[j] += G[j] * invlen;
                    }
                  }
                });
}

Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1) {
  Tape& t = x.tape();
  if (x.rank() != 2) throw DimensionError("slice_cols: need rank-2 input, got " + shape_str(x.shape()));
  const int64_t m = x.shape()[0], n = x.shape()[1];
  if (c0 < 0 || c1 > n || c0 >= c1) throw ArgumentError("slice_cols: bad column range");
  const int64_t w = c1 - c0;
  const std::vector<double>& xv = x.values();
  std::vector<double> out(static_cast<size_t>(m * w));
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < w; ++j) out[static_cast<size_t>(i * w + j)] = xv[static_cast<size_t>(i * n + c0 + j)];

  const int32_t px = x.id();
  return t.emit("slice_cols", Shape{m, w}, std::move(out), {px},
                [px, m, n, w, c0](Tape& tt, int32_t self) {
                  std::vector<double>* gx = grad_of(tt, px);
                  if (!gx) return;
                  const std::vector<double>& g = tt.node(self).grad;
                  for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < w; ++j)
                      (*gx)[static_cast<size_t>(i * n + c0 + j)] += g[static_cast<size_t>(i * w + j)];
                });
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ArgumentError("concat_cols: empty input list");
  Tape& t = xs[0].tape();
  const int64_t m = xs[0].shape().size() == 2 ? xs[0].shape()[0] : -1;
  if (m < 0) throw DimensionError("concat_cols: need rank-2 inputs");
  int64_t total = 0;
  std::vector<int32_t> parents;
  std::vector<int64_t> widths;
  for (const Tensor& x : xs) {
    if (x.rank() != 2 || x.shape()[0] != m) {
      throw DimensionError("concat_cols: row counts disagree");
    }
    widths.push_back(x.shape()[1]);
    total += x.shape()[1];
    parents.push_back(x.id());
  }
  std::vector<double> out(static_cast<size_t>(m * total));
  int64_t off = 0;
  for (size_t p = 0; p < xs.size(); ++p) {
    const std::vector<double>& xv = xs[p].values();
    const int64_t w = widths[p];
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < w; ++j)
        out[static_cast<size_t>(i * total + off + j)] = xv[static_cast<size_t>(i * w + j)];
    off += w;
  }

  return t.emit("concat_cols", Shape{m, total}, std::move(out), parents,
                [parents, widths, m, total](Tape& tt, int32_t self) {
                  const std::vector<double>& g = tt.node(self).grad;
                  int64_t off = 0;
                  for (size_t p = 0; p < parents.size(); ++p) {
                    const int64_t w = widths[p];
                    if (std::vector<double>* gp = grad_of(tt, parents[p])) {
                      for (int64_t i = 0; i < m; ++i)
                        for (int64_t j = 0; j < w; ++j)
                          (*gp)[static_cast<size_t>(i * w + j)] += g[static_cast<size_t>(i * total + off + j)];
                    }
                    off += w;
                  }
                });
}

Tensor sum_all(const Tensor& x) {
  Tape& t = x.tape();
  const std::vector<double>& xv = x.values();
  double s = 0.0;
  for (double v : xv) s += v;
  const int32_t px = x.id();
  return t.emit("sum_all", Shape{}, {s}, {px}, [px](Tape& tt, int32_t self) {
    std::vector<double>* gx = grad_of(tt, px);
    if (!gx) return;
    const double g = tt.node(self).grad[0];
    for (double& v : *gx) v += g;
  });
}

Tensor mean_all(const Tensor& x) {
  Tape& t = x.tape();
  const std::vector<double>& xv = x.values();
  const double inv = 1.0 / static_cast<double>(xv.size());
  double s = 0.0;
  for (double v : xv) s += v;
  s *= inv;
  const int32_t px = x.id();
  return t.emit("mean_all", Shape{}, {s}, {px}, [px, inv](Tape& tt, int32_t self) {
    std::vector<double>* gx = grad_of(tt, px);
    if (!gx) return;
    const double g = tt.node(self).grad[0] * inv;
    for (double& v : *gx) v += g;
  });
}

Tensor sum_dim0(const Tensor& x) {
  Tape& t = x.tape();
  if (x.rank() != 2) throw DimensionError("sum_dim0: need rank-2 input, got " + shape_str(x.shape()));
  const int64_t m = x.shape()[0], n = x.shape()[1];
  const std::vector<double>& xv = x.values();
  std::vector<double> out(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(j)] += xv[static_cast<size_t>(i * n + j)];
  const int32_t px = x.id();
  return t.emit("sum_dim0", Shape{n}, std::move(out), {px}, [px, m, n](Tape& tt, int32_t self) {
    std::vector<double>* gx = grad_of(tt, px);
    if (!gx) return;
    const std::vector<double>& g = tt.node(self).grad;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) (*gx)[static_cast<size_t>(i * n + j)] += g[static_cast<size_t>(j)];
  });
}

// ---- gradient checking ---------------------------------------------------------

GradCheckReport grad_check(const TapeFn& f, const std::vector<Array>& point, double h, double tol) {
  Tape tape;
  std::vector<Tensor> leaves;
  leaves.reserve(point.size());
  for (const Array& a : point) leaves.push_back(tape.leaf(a, true));
  Tensor loss = f(tape, leaves);
  if (loss.size() != 1) throw ArgumentError("grad_check: function must produce a scalar");
  tape.backward(loss);
  std::vector<Array> analytic;
  analytic.reserve(leaves.size());
  for (const Tensor& l : leaves) analytic.push_back(l.grad());

  std::vector<Array> work = point;
  auto eval = [&f, &work]() {
    Tape t2;
    std::vector<Tensor> ls;
    ls.reserve(work.size());
    for (const Array& a : work) ls.push_back(t2.leaf(a, false));
    const double v = f(t2, ls).values()[0];
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite value at perturbed point");
    return v;
  };

  GradCheckReport report;
  for (size_t i = 0; i < work.size(); ++i) {
    for (size_t e = 0; e < work[i].data.size(); ++e) {
      const double orig = work[i].data[e];
      work[i].data[e] = orig + h;
      const double fp = eval();
      work[i].data[e] = orig - h;
      const double fm = eval();
      work[i].data[e] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic[i].data[e];
      const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
      const double rel = std::abs(fd - an) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_input = static_cast<int>(i);
        report.worst_elem = static_cast<int64_t>(e);
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace avvp
