#pragma once

// Dense tensor numerics with reverse-mode automatic differentiation.
//
// Tensors are immutable values once written (gradient accumulation is the
// one exception); ops record a tape node when gradients are enabled and any
// input is trainable. Reductions run in a fixed sequential order so a seeded
// run is bit-reproducible. Training uses float32; gradient-check tests
// instantiate the same templates with double (the 64-bit verification mode).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "priorlens/common.hpp"

namespace priorlens {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

// --- grad mode ---------------------------------------------------------

namespace detail {
inline thread_local int no_grad_depth = 0;
}

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

// RAII guard: ops inside the scope do not record tape nodes.
struct NoGradGuard {
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// --- tensor ------------------------------------------------------------

template <typename S>
class TensorT {
 public:
  struct Node {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;  // propagates node.grad to parents

    void ensure_grad() {
      if (grad.empty()) grad.assign(value.size(), S(0));
    }
  };

  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), S(0), requires_grad);
  }

  static TensorT filled(Shape shape, S fill, bool requires_grad = false) {
    TensorT t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(static_cast<size_t>(shape_numel(t.node_->shape)), fill);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static TensorT from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
      throw ShapeError(cat("data length ", data.size(), " does not match shape ", shape_str(shape)));
    TensorT t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static TensorT scalar(S v) { return from_data({1}, {v}); }

  // Gaussian init, seeded; used for parameter initialization.
  static TensorT randn(Shape shape, std::mt19937_64& rng, S stdev, bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    std::normal_distribution<double> d(0.0, static_cast<double>(stdev));
    for (S& x : t.node_->value) x = static_cast<S>(d(rng));
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }
  int64_t dim(size_t i) const { return node_->shape.at(i); }
  size_t rank() const { return node_->shape.size(); }

  std::span<const S> data() const { return node_->value; }
  std::span<S> mutable_data() { return node_->value; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const S> grad() const { return node_->grad; }

  S item() const {
    if (numel() != 1) throw ShapeError(cat("item() on tensor of shape ", shape_str(shape())));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  TensorT& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  void zero_grad() { node_->grad.clear(); }

  // Detached copy of the values (no tape history, never trainable).
  TensorT detached() const {
    TensorT t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = node_->shape;
    t.node_->value = node_->value;
    return t;
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using Tensor = TensorT<float>;

// --- kernels ------------------------------------------------------------
// Row-major GEMMs. The inner (vectorizable) loop runs over independent
// output elements; the reduction over k is always sequential per element,
// which keeps results bit-stable regardless of vector width.

namespace kern {

// C[M,N] (+)= A[M,K] * B[K,N]
template <typename S>
void gemm(bool accum, const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
  if (!accum) std::fill(c, c + m * n, S(0));
  for (int64_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    S* crow = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const S av = arow[p];
      const S* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,N] (+)= A[M,K] * B[N,K]^T  (B transposed via a packed scratch copy)
template <typename S>
void gemm_nt(bool accum, const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
  std::vector<S> bt(static_cast<size_t>(k * n));
  for (int64_t j = 0; j < n; ++j)
    for (int64_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm(accum, a, bt.data(), c, m, k, n);
}

// C[M,N] (+)= A[K,M]^T * B[K,N]
template <typename S>
void gemm_tn(bool accum, const S* a, const S* b, S* c, int64_t m, int64_t k, int64_t n) {
  if (!accum) std::fill(c, c + m * n, S(0));
  for (int64_t p = 0; p < k; ++p) {
    const S* arow = a + p * m;
    const S* brow = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const S av = arow[i];
      S* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace kern

// --- op helpers ---------------------------------------------------------

namespace detail {

template <typename S>
using NodePtr = std::shared_ptr<typename TensorT<S>::Node>;

template <typename S>
bool track(std::initializer_list<const TensorT<S>*> inputs) {
  if (!grad_enabled()) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

template <typename S>
TensorT<S> make_result(Shape shape) {
  return TensorT<S>::zeros(std::move(shape));
}

// Wires the result into the tape: records parents, marks requires_grad, and
// installs the backward closure.
template <typename S, typename Fn>
void attach(TensorT<S>& result, std::initializer_list<const TensorT<S>*> inputs, Fn&& backward) {
  if (!track<S>(inputs)) return;
  auto node = result.node();
  node->requires_grad = true;
  for (const auto* t : inputs) node->parents.push_back(t->node());
  node->backward = std::forward<Fn>(backward);
}

}  // namespace detail

// --- elementwise and broadcast ops ---------------------------------------

// b must match a trailing suffix of a's shape (or the full shape).
template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size() ||
      !std::equal(sb.rbegin(), sb.rend(), sa.rbegin()))
    throw ShapeError(cat("add: shape ", shape_str(sb), " does not broadcast onto ", shape_str(sa)));

  auto out = detail::make_result<S>(sa);
  const int64_t nb = b.numel();
  const int64_t reps = a.numel() / std::max<int64_t>(nb, 1);
  {
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    S* po = out.mutable_data().data();
    for (int64_t r = 0; r < reps; ++r)
      for (int64_t j = 0; j < nb; ++j) po[r * nb + j] = pa[r * nb + j] + pb[j];
  }
  auto an = a.node();
  auto bn = b.node();
  detail::attach(out, {&a, &b}, [an, bn, nb, reps](typename TensorT<S>::Node& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int64_t r = 0; r < reps; ++r)
        for (int64_t j = 0; j < nb; ++j) bn->grad[j] += n.grad[r * nb + j];
    }
  });
  return out;
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(cat("mul: shapes ", shape_str(a.shape()), " and ", shape_str(b.shape()), " differ"));
  auto out = detail::make_result<S>(a.shape());
  {
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    S* po = out.mutable_data().data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i];
  }
  auto an = a.node();
  auto bn = b.node();
  detail::attach(out, {&a, &b}, [an, bn](typename TensorT<S>::Node& n) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i] * an->value[i];
    }
  });
  return out;
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S c) {
  auto out = detail::make_result<S>(a.shape());
  {
    const S* pa = a.data().data();
    S* po = out.mutable_data().data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * c;
  }
  auto an = a.node();
  detail::attach(out, {&a}, [an, c](typename TensorT<S>::Node& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * c;
  });
  return out;
}

template <typename S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  return add(a, scale(b, S(-1)));
}

// Copy-reshape; the new value shares the flat data semantics of the input.
template <typename S>
TensorT<S> reshape(const TensorT<S>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError(cat("reshape: ", shape_str(a.shape()), " has ", a.numel(),
                         " elements, target ", shape_str(shape), " has ", shape_numel(shape)));
  auto out = TensorT<S>::from_data(std::move(shape),
                                   std::vector<S>(a.data().begin(), a.data().end()));
  auto an = a.node();
  detail::attach(out, {&a}, [an](typename TensorT<S>::Node& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
  });
  return out;
}

// --- matmul --------------------------------------------------------------

namespace detail {

template <typename S>
struct MatmulDims {
  int64_t batch, m, k, n;
  bool a_batched, b_batched;
};

template <typename S>
MatmulDims<S> matmul_dims(const TensorT<S>& a, const TensorT<S>& b, int64_t b_inner,
                          int64_t b_outer, const char* opname) {
  if (a.rank() < 2 || a.rank() > 3 || b.rank() < 2 || b.rank() > 3)
    throw ShapeError(cat(opname, ": operands must be rank 2 or 3, got ",
                         shape_str(a.shape()), " and ", shape_str(b.shape())));
  MatmulDims<S> d{};
  d.a_batched = a.rank() == 3;
  d.b_batched = b.rank() == 3;
  d.batch = d.a_batched ? a.dim(0) : (d.b_batched ? b.dim(0) : 1);
  d.m = a.dim(a.rank() - 2);
  d.k = a.dim(a.rank() - 1);
  d.n = b_outer;
  if (b_inner != d.k)
    throw ShapeError(cat(opname, ": inner dimensions disagree: ",
                         shape_str(a.shape()), " vs ", shape_str(b.shape())));
  if (d.a_batched && d.b_batched && a.dim(0) != b.dim(0))
    throw ShapeError(cat(opname, ": batch dimensions disagree: ",
                         shape_str(a.shape()), " vs ", shape_str(b.shape())));
  return d;
}

}  // namespace detail

// Standard matrix product; rank-3 operands are treated as batches and a
// rank-2 operand broadcasts across the batch.
template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  auto d = detail::matmul_dims(a, b, b.dim(b.rank() - 2), b.dim(b.rank() - 1), "matmul");
  Shape out_shape = (d.a_batched || d.b_batched) ? Shape{d.batch, d.m, d.n} : Shape{d.m, d.n};
  auto out = detail::make_result<S>(std::move(out_shape));

  const S* pa = a.data().data();
  const S* pb = b.data().data();
  S* po = out.mutable_data().data();
  for (int64_t g = 0; g < d.batch; ++g) {
    const S* ag = pa + (d.a_batched ? g * d.m * d.k : 0);
    const S* bg = pb + (d.b_batched ? g * d.k * d.n : 0);
    kern::gemm(false, ag, bg, po + g * d.m * d.n, d.m, d.k, d.n);
  }

  auto an = a.node();
  auto bn = b.node();
  detail::attach(out, {&a, &b}, [an, bn, d](typename TensorT<S>::Node& n) {
    const S* pg = n.grad.data();
    if (an->requires_grad) {
      an->ensure_grad();
      for (int64_t g = 0; g < d.batch; ++g) {
        const S* gg = pg + g * d.m * d.n;
        const S* bg = bn->value.data() + (d.b_batched ? g * d.k * d.n : 0);
        // dA += dC * B^T
        kern::gemm_nt(true, gg, bg, an->grad.data() + (d.a_batched ? g * d.m * d.k : 0),
                      d.m, d.n, d.k);
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int64_t g = 0; g < d.batch; ++g) {
        const S* gg = pg + g * d.m * d.n;
        const S* ag = an->value.data() + (d.a_batched ? g * d.m * d.k : 0);
        // dB += A^T * dC
        kern::gemm_tn(true, ag, gg, bn->grad.data() + (d.b_batched ? g * d.k * d.n : 0),
                      d.k, d.m, d.n);
      }
    }
  });
  return out;
}

// a * b^T with b of shape (N, K) (or (B, N, K)); used for attention scores
// and low-rank adapter factors stored row-major per their natural layout.
template <typename S>
TensorT<S> matmul_nt(const TensorT<S>& a, const TensorT<S>& b) {
  auto d = detail::matmul_dims(a, b, b.dim(b.rank() - 1), b.dim(b.rank() - 2), "matmul_nt");
  Shape out_shape = (d.a_batched || d.b_batched) ? Shape{d.batch, d.m, d.n} : Shape{d.m, d.n};
  auto out = detail::make_result<S>(std::move(out_shape));

  const S* pa = a.data().data();
  const S* pb = b.data().data();
  S* po = out.mutable_data().data();
  for (int64_t g = 0; g < d.batch; ++g) {
    const S* ag = pa + (d.a_batched ? g * d.m * d.k : 0);
    const S* bg = pb + (d.b_batched ? g * d.n * d.k : 0);
    kern::gemm_nt(false, ag, bg, po + g * d.m * d.n, d.m, d.k, d.n);
  }

  auto an = a.node();
  auto bn = b.node();
  detail::attach(out, {&a, &b}, [an, bn, d](typename TensorT<S>::Node& n) {
    const S* pg = n.grad.data();
    if (an->requires_grad) {
      an->ensure_grad();
      for (int64_t g = 0; g < d.batch; ++g) {
        const S* gg = pg + g * d.m * d.n;
        const S* bg = bn->value.data() + (d.b_batched ? g * d.n * d.k : 0);
        // dA += dC * B   (B is (N,K))
        kern::gemm(true, gg, bg, an->grad.data() + (d.a_batched ? g * d.m * d.k : 0),
                   d.m, d.n, d.k);
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int64_t g = 0; g < d.batch; ++g) {
        const S* gg = pg + g * d.m * d.n;
        const S* ag = an->value.data() + (d.a_batched ? g * d.m * d.k : 0);
        // dB += dC^T * A  (result (N,K))
        kern::gemm_tn(true, gg, ag, bn->grad.data() + (d.b_batched ? g * d.n * d.k : 0),
                      d.n, d.m, d.k);
      }
    }
  });
  return out;
}

// --- softmax -------------------------------------------------------------

namespace detail {

struct AxisSpan {
  int64_t outer, axis, inner;
};

inline AxisSpan axis_span(const Shape& shape, int axis) {
  if (axis < 0) axis += static_cast<int>(shape.size());
  if (axis < 0 || axis >= static_cast<int>(shape.size()))
    throw IndexError(cat("axis ", axis, " invalid for shape ", shape_str(shape)));
  AxisSpan sp{1, shape[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) sp.outer *= shape[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) sp.inner *= shape[i];
  return sp;
}

}  // namespace detail

// Numerically stabilized softmax along `axis`; each slice sums to 1.
template <typename S>
TensorT<S> softmax(const TensorT<S>& a, int axis = -1) {
  auto sp = detail::axis_span(a.shape(), axis);
  auto out = detail::make_result<S>(a.shape());
  const S* pa = a.data().data();
  S* po = out.mutable_data().data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t in = 0; in < sp.inner; ++in) {
      const int64_t base = o * sp.axis * sp.inner + in;
      S mx = pa[base];
      for (int64_t j = 1; j < sp.axis; ++j) mx = std::max(mx, pa[base + j * sp.inner]);
      if (!std::isfinite(static_cast<double>(mx)))
        throw NumericError("softmax: non-finite input");
      S sum = S(0);
      for (int64_t j = 0; j < sp.axis; ++j) {
        const S e = std::exp(pa[base + j * sp.inner] - mx);
        po[base + j * sp.inner] = e;
        sum += e;
      }
      const S inv = S(1) / sum;
      for (int64_t j = 0; j < sp.axis; ++j) po[base + j * sp.inner] *= inv;
    }

  auto an = a.node();
  detail::attach(out, {&a}, [an, sp](typename TensorT<S>::Node& n) {
    an->ensure_grad();
    const S* y = n.value.data();  // n is the softmax output itself
    const S* gy = n.grad.data();
    for (int64_t o = 0; o < sp.outer; ++o)
      for (int64_t in = 0; in < sp.inner; ++in) {
        const int64_t base = o * sp.axis * sp.inner + in;
        S dot = S(0);
        for (int64_t j = 0; j < sp.axis; ++j)
          dot += gy[base + j * sp.inner] * y[base + j * sp.inner];
        for (int64_t j = 0; j < sp.axis; ++j) {
          const int64_t ix = base + j * sp.inner;
          an->grad[ix] += y[ix] * (gy[ix] - dot);
        }
      }
  });
  return out;
}

// --- activations -----------------------------------------------------------

// GELU, tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
template <typename S>
TensorT<S> gelu(const TensorT<S>& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  auto out = detail::make_result<S>(a.shape());
  const S* pa = a.data().data();
  S* po = out.mutable_data().data();
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double x = static_cast<double>(pa[i]);
    po[i] = static_cast<S>(0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x))));
  }
  auto an = a.node();
  detail::attach(out, {&a}, [an](typename TensorT<S>::Node& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i) {
      const double x = static_cast<double>(an->value[i]);
      const double u = kC * (x + kA * x * x * x);
      const double t = std::tanh(u);
      const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * x * x);
      an->grad[i] += n.grad[i] * static_cast<S>(d);
    }
  });
  return out;
}

template <typename S>
TensorT<S> relu(const TensorT<S>& a) {
  auto out = detail::make_result<S>(a.shape());
  const S* pa = a.data().data();
  S* po = out.mutable_data().data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] > S(0) ? pa[i] : S(0);
  auto an = a.node();
  detail::attach(out, {&a}, [an](typename TensorT<S>::Node& n) {
    an->ensure_grad();
    for (size_t i = 0; i < n.grad.size(); ++i)
      if (an->value[i] > S(0)) an->grad[i] += n.grad[i];
  });
  return out;
}

// RMS normalization over the last dimension with a learned gain.
template <typename S>
TensorT<S> rmsnorm(const TensorT<S>& a, const TensorT<S>& gain, S eps = S(1e-5)) {
  const int64_t d = a.dim(a.rank() - 1);
  if (gain.rank() != 1 || gain.dim(0) != d)
    throw ShapeError(cat("rmsnorm: gain shape ", shape_str(gain.shape()),
                         " does not match feature dim ", d));
  const int64_t rows = a.numel() / d;
  auto out = detail::make_result<S>(a.shape());
  std::vector<S> inv_rms(static_cast<size_t>(rows));
  {
    const S* pa = a.data().data();
    const S* pg = gain.data().data();
    S* po = out.mutable_data().data();
    for (int64_t r = 0; r < rows; ++r) {
      const S* x = pa + r * d;
      S ms = S(0);
      for (int64_t j = 0; j < d; ++j) ms += x[j] * x[j];
      const S inv = S(1) / std::sqrt(ms / static_cast<S>(d) + eps);
      inv_rms[static_cast<size_t>(r)] = inv;
      for (int64_t j = 0; j < d; ++j) po[r * d + j] = x[j] * inv * pg[j];
    }
  }
  auto an = a.node();
  auto gn = gain.node();
  detail::attach(out, {&a, &gain},
                 [an, gn, d, rows, inv_rms = std::move(inv_rms)](typename TensorT<S>::Node& n) {
    const S* gy = n.grad.data();
    for (int64_t r = 0; r < rows; ++r) {
      const S* x = an->value.data() + r * d;
      const S* g = gn->value.data();
      const S inv = inv_rms[static_cast<size_t>(r)];
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (int64_t j = 0; j < d; ++j) gn->grad[j] += gy[r * d + j] * x[j] * inv;
      }
      if (an->requires_grad) {
        an->ensure_grad();
        S dot = S(0);
        for (int64_t j = 0; j < d; ++j) dot += gy[r * d + j] * g[j] * x[j];
        const S c = dot * inv * inv * inv / static_cast<S>(d);
        for (int64_t j = 0; j < d; ++j)
          an->grad[r * d + j] += gy[r * d + j] * g[j] * inv - x[j] * c;
      }
    }
  });
  return out;
}

// --- embedding lookup ------------------------------------------------------

// table is (V, D); ids index rows. Output shape is ids_shape + [D].
template <typename S>
TensorT<S> embedding(const TensorT<S>& table, const std::vector<int32_t>& ids, Shape ids_shape) {
  if (shape_numel(ids_shape) != static_cast<int64_t>(ids.size()))
    throw ShapeError("embedding: ids length does not match ids shape");
  const int64_t v = table.dim(0);
  const int64_t d = table.dim(1);
  for (int32_t id : ids)
    if (id < 0 || id >= v) throw IndexError(cat("embedding: id ", id, " out of range [0,", v, ")"));
  Shape out_shape = ids_shape;
  out_shape.push_back(d);
  auto out = detail::make_result<S>(std::move(out_shape));
  {
    const S* pt = table.data().data();
    S* po = out.mutable_data().data();
    for (size_t i = 0; i < ids.size(); ++i)
      std::copy_n(pt + static_cast<int64_t>(ids[i]) * d, d, po + static_cast<int64_t>(i) * d);
  }
  auto tn = table.node();
  detail::attach(out, {&table}, [tn, ids, d](typename TensorT<S>::Node& n) {
    tn->ensure_grad();
    for (size_t i = 0; i < ids.size(); ++i) {
      S* dst = tn->grad.data() + static_cast<int64_t>(ids[i]) * d;
      const S* src = n.grad.data() + static_cast<int64_t>(i) * d;
      for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
  return out;
}

// --- cross entropy -----------------------------------------------------------

inline constexpr int32_t kIgnoreIndex = -1;

// Mean negative log-probability of targets; rows with target == kIgnoreIndex
// are excluded from the mean. logits must be rank 2 (rows, classes).
template <typename S>
TensorT<S> cross_entropy(const TensorT<S>& logits, const std::vector<int32_t>& targets) {
  if (logits.rank() != 2)
    throw ShapeError(cat("cross_entropy: logits must be rank 2, got ", shape_str(logits.shape())));
  const int64_t rows = logits.dim(0);
  const int64_t v = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != rows)
    throw ShapeError(cat("cross_entropy: ", targets.size(), " targets for ", rows, " rows"));
  int64_t active = 0;
  for (int32_t t : targets) {
    if (t == kIgnoreIndex) continue;
    if (t < 0 || t >= v) throw IndexError(cat("cross_entropy: target ", t, " out of range [0,", v, ")"));
    ++active;
  }
  if (active == 0) throw UsageError("cross_entropy: all targets ignored");

  // Cache probabilities for the backward pass.
  auto probs = std::make_shared<std::vector<S>>(static_cast<size_t>(rows * v));
  double loss = 0.0;
  {
    const S* pl = logits.data().data();
    for (int64_t r = 0; r < rows; ++r) {
      const S* row = pl + r * v;
      S mx = row[0];
      for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (int64_t j = 0; j < v; ++j) {
        const double e = std::exp(static_cast<double>(row[j] - mx));
        (*probs)[static_cast<size_t>(r * v + j)] = static_cast<S>(e);
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (int64_t j = 0; j < v; ++j) (*probs)[static_cast<size_t>(r * v + j)] *= static_cast<S>(inv);
      if (targets[static_cast<size_t>(r)] != kIgnoreIndex) {
        const double logp = static_cast<double>(row[targets[static_cast<size_t>(r)]] - mx) - std::log(sum);
        loss -= logp;
      }
    }
  }
  auto out = TensorT<S>::scalar(static_cast<S>(loss / static_cast<double>(active)));
  auto ln = logits.node();
  detail::attach(out, {&logits}, [ln, probs, targets, rows, v, active](typename TensorT<S>::Node& n) {
    ln->ensure_grad();
    const S g = n.grad[0] / static_cast<S>(active);
    for (int64_t r = 0; r < rows; ++r) {
      const int32_t t = targets[static_cast<size_t>(r)];
      if (t == kIgnoreIndex) continue;
      S* dst = ln->grad.data() + r * v;
      const S* p = probs->data() + r * v;
      for (int64_t j = 0; j < v; ++j) dst[j] += g * p[j];
      dst[t] -= g;
    }
  });
  return out;
}

// --- reductions -----------------------------------------------------------

template <typename S>
TensorT<S> sum(const TensorT<S>& a) {
  S s = S(0);
  for (S x : a.data()) s += x;
  auto out = TensorT<S>::scalar(s);
  auto an = a.node();
  detail::attach(out, {&a}, [an](typename TensorT<S>::Node& n) {
    an->ensure_grad();
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += n.grad[0];
  });
  return out;
}

template <typename S>
TensorT<S> mean(const TensorT<S>& a) {
  auto s = sum(a);
  return scale(s, S(1) / static_cast<S>(a.numel()));
}

// --- head split/merge -------------------------------------------------------

// (B, T, D) -> (B*H, T, D/H); also accepts (T, D) as batch 1.
template <typename S>
TensorT<S> split_heads(const TensorT<S>& a, int64_t heads) {
  const bool batched = a.rank() == 3;
  if (!batched && a.rank() != 2)
    throw ShapeError(cat("split_heads: expected rank 2 or 3, got ", shape_str(a.shape())));
  const int64_t b = batched ? a.dim(0) : 1;
  const int64_t t = a.dim(a.rank() - 2);
  const int64_t d = a.dim(a.rank() - 1);
  if (d % heads != 0)
    throw ShapeError(cat("split_heads: dim ", d, " not divisible by ", heads, " heads"));
  const int64_t hd = d / heads;
  auto out = detail::make_result<S>({b * heads, t, hd});
  {
    const S* pa = a.data().data();
    S* po = out.mutable_data().data();
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t ti = 0; ti < t; ++ti)
          std::copy_n(pa + (bi * t + ti) * d + h * hd, hd,
                      po + ((bi * heads + h) * t + ti) * hd);
  }
  auto an = a.node();
  detail::attach(out, {&a}, [an, b, heads, t, hd, d](typename TensorT<S>::Node& n) {
    an->ensure_grad();
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t ti = 0; ti < t; ++ti) {
          const S* src = n.grad.data() + ((bi * heads + h) * t + ti) * hd;
          S* dst = an->grad.data() + (bi * t + ti) * d + h * hd;
          for (int64_t j = 0; j < hd; ++j) dst[j] += src[j];
        }
  });
  return out;
}

// (B*H, T, D/H) -> (B, T, D), inverse of split_heads.
template <typename S>
TensorT<S> merge_heads(const TensorT<S>& a, int64_t heads) {
  if (a.rank() != 3 || a.dim(0) % heads != 0)
    throw ShapeError(cat("merge_heads: bad shape ", shape_str(a.shape()), " for ", heads, " heads"));
  const int64_t b = a.dim(0) / heads;
  const int64_t t = a.dim(1);
  const int64_t hd = a.dim(2);
  const int64_t d = hd * heads;
  auto out = detail::make_result<S>({b, t, d});
  {
    const S* pa = a.data().data();
    S* po = out.mutable_data().data();
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t ti = 0; ti < t; ++ti)
          std::copy_n(pa + ((bi * heads + h) * t + ti) * hd, hd,
                      po + (bi * t + ti) * d + h * hd);
  }
  auto an = a.node();
  detail::attach(out, {&a}, [an, b, heads, t, hd, d](typename TensorT<S>::Node& n) {
    an->ensure_grad();
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t ti = 0; ti < t; ++ti) {
          const S* src = n.grad.data() + (bi * t + ti) * d + h * hd;
          S* dst = an->grad.data() + ((bi * heads + h) * t + ti) * hd;
          for (int64_t j = 0; j < hd; ++j) dst[j] += src[j];
        }
  });
  return out;
}

// --- backward ---------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Gradients accumulate into the grad
// slots of every trainable tensor reachable from the loss; repeated calls
// without zero_grad keep accumulating.
template <typename S>
void backward(const TensorT<S>& loss) {
  using Node = typename TensorT<S>::Node;
  if (loss.numel() != 1)
    throw UsageError(cat("backward: loss must be scalar, got shape ", shape_str(loss.shape())));
  auto root = loss.node();
  if (!root->requires_grad || (!root->backward && root->parents.empty()))
    throw UsageError("backward: loss is not on the tape (no recorded computation)");

  // Iterative post-order topological sort.
  std::vector<Node*> order;
  std::vector<std::pair<Node*, size_t>> stack;
  std::vector<Node*> seen;
  auto mark_seen = [&seen](Node* n) {
    seen.push_back(n);
  };
  auto is_seen = [&seen](Node* n) {
    return std::find(seen.begin(), seen.end(), n) != seen.end();
  };
  stack.emplace_back(root.get(), 0);
  mark_seen(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && !is_seen(p)) {
        mark_seen(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Leaf gradients accumulate across backward calls; intermediate buffers
  // are scratch and reset on every sweep.
  for (Node* n : order)
    if (n->backward) n->grad.assign(n->value.size(), S(0));
  root->ensure_grad();
  root->grad[0] = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

}  // namespace priorlens
