#pragma once
// Dense row-major tensors plus a minimal reverse-mode tape.
//
// The tape is an append-only list of nodes; each node owns a closure that
// routes the node's output gradient to the gradients of its inputs.  backward()
// walks the nodes in strict reverse append order, accumulating contributions
// additively, then clears the tape.  Tensors are cheap handles: copies share
// the underlying data buffer, so a parameter registered with Tape::watch keeps
// receiving gradients through any alias.
//
// Everything is templated on the scalar type: training runs float, numerical
// verification (finite differences etc.) runs the same code in double.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "uwformer/common.hpp"

namespace uwf {

template <typename T>
class Tape;

template <typename T>
struct Tensor {
  std::vector<i64> shape;
  std::shared_ptr<std::vector<T>> data;
  std::shared_ptr<std::vector<T>> grad;  // allocated by Tape::watch
  bool requires_grad = false;
  Tape<T>* tape = nullptr;
  int node = -1;
  int gen = -1;  // tape generation at record time; stale entries are ignored

  Tensor() = default;

  i64 numel() const {
    i64 n = 1;
    for (i64 d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }
  i64 dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(shape.size()); }

  std::vector<T>& vals() { return *data; }
  const std::vector<T>& vals() const { return *data; }
  T* ptr() { return data->data(); }
  const T* ptr() const { return data->data(); }

  bool tracked() const;

  // Same data, no tape membership.
  Tensor detached() const {
    Tensor t;
    t.shape = shape;
    t.data = data;
    return t;
  }

  // Fresh buffer with the same values.
  Tensor copy() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<T>>(*data);
    return t;
  }

  static Tensor zeros(std::vector<i64> shape) {
    return full(std::move(shape), T(0));
  }

  static Tensor full(std::vector<i64> shape, T v) {
    Tensor t;
    t.shape = std::move(shape);
    i64 n = 1;
    for (i64 d : t.shape) {
      check(d > 0, "tensor: dimensions must be positive");
      n *= d;
    }
    check(!t.shape.empty(), "tensor: rank must be at least 1");
    t.data = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n), v);
    return t;
  }

  static Tensor from(std::vector<T> values, std::vector<i64> shape) {
    Tensor t;
    t.shape = std::move(shape);
    i64 n = 1;
    for (i64 d : t.shape) n *= d;
    check(!t.shape.empty() && n == static_cast<i64>(values.size()),
          "tensor: value count does not match shape");
    t.data = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  static Tensor randn(std::vector<i64> shape, std::mt19937_64& rng, T stddev = T(1)) {
    Tensor t = zeros(std::move(shape));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : *t.data) v = static_cast<T>(dist(rng)) * stddev;
    return t;
  }
};

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  int generation() const { return gen_; }

  // Registers `leaf` as a differentiated input and allocates its grad buffer.
  // backward() adds this tape's accumulated gradient into that buffer.
  void watch(Tensor<T>& leaf) {
    check(leaf.data != nullptr, "watch: tensor has no data");
    leaf.requires_grad = true;
    if (!leaf.grad || static_cast<i64>(leaf.grad->size()) != leaf.numel()) {
      leaf.grad = std::make_shared<std::vector<T>>(static_cast<std::size_t>(leaf.numel()), T(0));
    }
    auto g = leaf.grad;
    leaf.tape = this;
    leaf.gen = gen_;
    leaf.node = push(leaf.numel(), [g](Tape&, const std::vector<T>& go) {
      for (std::size_t i = 0; i < go.size(); ++i) (*g)[i] += go[i];
    });
  }

  // Reverse sweep from a scalar loss. Consumes the tape.
  void backward(const Tensor<T>& loss) {
    check(!nodes_.empty(), "backward: tape is empty");
    check(loss.numel() == 1, "backward: loss must be a scalar");
    check(loss.tracked() && loss.tape == this, "backward: loss was not recorded on this tape");
    grad_buf(loss.node, 1)[0] += T(1);
    for (i64 i = static_cast<i64>(nodes_.size()) - 1; i >= 0; --i) {
      auto& slot = grads_[static_cast<std::size_t>(i)];
      if (slot) nodes_[static_cast<std::size_t>(i)].vjp(*this, *slot);
    }
    clear();
  }

  void clear() {
    nodes_.clear();
    grads_.clear();
    ++gen_;
  }

  // Recording interface used by the ops below.
  int push(i64 out_numel, std::function<void(Tape&, const std::vector<T>&)> vjp) {
    nodes_.push_back(Node{out_numel, std::move(vjp)});
    grads_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<T>& grad_buf(int id, i64 numel) {
    auto& slot = grads_[static_cast<std::size_t>(id)];
    if (!slot) slot = std::make_unique<std::vector<T>>(static_cast<std::size_t>(numel), T(0));
    return *slot;
  }

 private:
  struct Node {
    i64 numel;
    std::function<void(Tape&, const std::vector<T>&)> vjp;
  };
  std::vector<Node> nodes_;
  std::vector<std::unique_ptr<std::vector<T>>> grads_;
  int gen_ = 0;
};

template <typename T>
bool Tensor<T>::tracked() const {
  return tape != nullptr && node >= 0 && gen == tape->generation();
}

namespace detail {

template <typename T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> ts) {
  Tape<T>* tp = nullptr;
  for (const Tensor<T>* t : ts) {
    if (!t->tracked()) continue;
    if (tp != nullptr && tp != t->tape) throw ContractError("op: inputs live on different tapes");
    tp = t->tape;
  }
  return tp;
}

template <typename T>
int node_of(const Tensor<T>& t) {
  return t.tracked() ? t.node : -1;
}

template <typename T, typename F>
void attach(Tensor<T>& out, Tape<T>* tp, F&& vjp) {
  if (tp == nullptr) return;
  out.tape = tp;
  out.gen = tp->generation();
  out.requires_grad = true;
  out.node = tp->push(out.numel(), std::forward<F>(vjp));
}

inline i64 prod(const std::vector<i64>& v, std::size_t from, std::size_t to) {
  i64 p = 1;
  for (std::size_t i = from; i < to; ++i) p *= v[i];
  return p;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape == b.shape, "add: shape mismatch");
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  const i64 n = out.numel();
  for (i64 i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  Tape<T>* tp = detail::common_tape<T>({&a, &b});
  if (tp) {
    const int ia = detail::node_of(a), ib = detail::node_of(b);
    detail::attach(out, tp, [ia, ib, n](Tape<T>& t, const std::vector<T>& go) {
      if (ia >= 0) {
        auto& ga = t.grad_buf(ia, n);
        for (i64 i = 0; i < n; ++i) ga[static_cast<std::size_t>(i)] += go[static_cast<std::size_t>(i)];
      }
      if (ib >= 0) {
        auto& gb = t.grad_buf(ib, n);
        for (i64 i = 0; i < n; ++i) gb[static_cast<std::size_t>(i)] += go[static_cast<std::size_t>(i)];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape == b.shape, "sub: shape mismatch");
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  const i64 n = out.numel();
  for (i64 i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  Tape<T>* tp = detail::common_tape<T>({&a, &b});
  if (tp) {
    const int ia = detail::node_of(a), ib = detail::node_of(b);
    detail::attach(out, tp, [ia, ib, n](Tape<T>& t, const std::vector<T>& go) {
      if (ia >= 0) {
        auto& ga = t.grad_buf(ia, n);
        for (i64 i = 0; i < n; ++i) ga[static_cast<std::size_t>(i)] += go[static_cast<std::size_t>(i)];
      }
      if (ib >= 0) {
        auto& gb = t.grad_buf(ib, n);
        for (i64 i = 0; i < n; ++i) gb[static_cast<std::size_t>(i)] -= go[static_cast<std::size_t>(i)];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape == b.shape, "mul: shape mismatch");
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  const i64 n = out.numel();
  for (i64 i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  Tape<T>* tp = detail::common_tape<T>({&a, &b});
  if (tp) {
    const int ia = detail::node_of(a), ib = detail::node_of(b);
    auto ad = a.data, bd = b.data;
    detail::attach(out, tp, [ia, ib, n, ad, bd](Tape<T>& t, const std::vector<T>& go) {
      if (ia >= 0) {
        auto& ga = t.grad_buf(ia, n);
        for (i64 i = 0; i < n; ++i)
          ga[static_cast<std::size_t>(i)] += go[static_cast<std::size_t>(i)] * (*bd)[static_cast<std::size_t>(i)];
      }
      if (ib >= 0) {
        auto& gb = t.grad_buf(ib, n);
        for (i64 i = 0; i < n; ++i)
          gb[static_cast<std::size_t>(i)] += go[static_cast<std::size_t>(i)] * (*ad)[static_cast<std::size_t>(i)];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const T* pa = a.ptr();
  T* po = out.ptr();
  const i64 n = out.numel();
  for (i64 i = 0; i < n; ++i) po[i] = pa[i] * c;
  Tape<T>* tp = detail::common_tape<T>({&a});
  if (tp) {
    const int ia = a.node;
    detail::attach(out, tp, [ia, c, n](Tape<T>& t, const std::vector<T>& go) {
      auto& ga = t.grad_buf(ia, n);
      for (i64 i = 0; i < n; ++i) ga[static_cast<std::size_t>(i)] += go[static_cast<std::size_t>(i)] * c;
    });
  }
  return out;
}

// Exact erf-based GeLU: x * Phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const T* pa = a.ptr();
  T* po = out.ptr();
  const i64 n = out.numel();
  const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
  for (i64 i = 0; i < n; ++i) {
    const T x = pa[i];
    po[i] = static_cast<T>(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
  }
  Tape<T>* tp = detail::common_tape<T>({&a});
  if (tp) {
    const int ia = a.node;
    auto ad = a.data;
    detail::attach(out, tp, [ia, n, ad](Tape<T>& t, const std::vector<T>& go) {
      auto& ga = t.grad_buf(ia, n);
      const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
      const T inv_sqrt2pi = static_cast<T>(0.39894228040143267794);
      for (i64 i = 0; i < n; ++i) {
        const T x = (*ad)[static_cast<std::size_t>(i)];
        const T phi = static_cast<T>(0.5) * (T(1) + std::erf(x * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(static_cast<T>(-0.5) * x * x);
        ga[static_cast<std::size_t>(i)] += go[static_cast<std::size_t>(i)] * (phi + x * pdf);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const T* pa = a.ptr();
  T* po = out.ptr();
  const i64 n = out.numel();
  for (i64 i = 0; i < n; ++i) po[i] = std::abs(pa[i]);
  Tape<T>* tp = detail::common_tape<T>({&a});
  if (tp) {
    const int ia = a.node;
    auto ad = a.data;
    detail::attach(out, tp, [ia, n, ad](Tape<T>& t, const std::vector<T>& go) {
      auto& ga = t.grad_buf(ia, n);
      for (i64 i = 0; i < n; ++i) {
        const T x = (*ad)[static_cast<std::size_t>(i)];
        const T s = x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
        ga[static_cast<std::size_t>(i)] += go[static_cast<std::size_t>(i)] * s;
      }
    });
  }
  return out;
}

// Clamp to [0, 1]. Inference-time op; the result is never tape-tracked.
template <typename T>
Tensor<T> clamp01(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const T* pa = a.ptr();
  T* po = out.ptr();
  const i64 n = out.numel();
  for (i64 i = 0; i < n; ++i) po[i] = std::min(T(1), std::max(T(0), pa[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros({1});
  const T* pa = a.ptr();
  const i64 n = a.numel();
  T acc = T(0);
  for (i64 i = 0; i < n; ++i) acc += pa[i];
  out.ptr()[0] = acc;
  Tape<T>* tp = detail::common_tape<T>({&a});
  if (tp) {
    const int ia = a.node;
    detail::attach(out, tp, [ia, n](Tape<T>& t, const std::vector<T>& go) {
      auto& ga = t.grad_buf(ia, n);
      for (i64 i = 0; i < n; ++i) ga[static_cast<std::size_t>(i)] += go[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  const i64 n = a.numel();
  check(n > 0, "mean: empty tensor");
  Tensor<T> out = Tensor<T>::zeros({1});
  const T* pa = a.ptr();
  T acc = T(0);
  for (i64 i = 0; i < n; ++i) acc += pa[i];
  out.ptr()[0] = acc / static_cast<T>(n);
  Tape<T>* tp = detail::common_tape<T>({&a});
  if (tp) {
    const int ia = a.node;
    detail::attach(out, tp, [ia, n](Tape<T>& t, const std::vector<T>& go) {
      auto& ga = t.grad_buf(ia, n);
      const T g = go[0] / static_cast<T>(n);
      for (i64 i = 0; i < n; ++i) ga[static_cast<std::size_t>(i)] += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  if (axis < 0) axis += a.rank();
  check(axis >= 0 && axis < a.rank(), "softmax: axis out of range");
  const i64 outer = detail::prod(a.shape, 0, static_cast<std::size_t>(axis));
  const i64 len = a.shape[static_cast<std::size_t>(axis)];
  const i64 inner = detail::prod(a.shape, static_cast<std::size_t>(axis) + 1, a.shape.size());
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const T* pa = a.ptr();
  T* po = out.ptr();
  for (i64 o = 0; o < outer; ++o) {
    for (i64 in = 0; in < inner; ++in) {
      const i64 base = o * len * inner + in;
      T m = pa[base];
      for (i64 k = 1; k < len; ++k) m = std::max(m, pa[base + k * inner]);
      T s = T(0);
      for (i64 k = 0; k < len; ++k) {
        const T e = std::exp(pa[base + k * inner] - m);
        po[base + k * inner] = e;
        s += e;
      }
      const T invs = T(1) / s;
      for (i64 k = 0; k < len; ++k) po[base + k * inner] *= invs;
    }
  }
  Tape<T>* tp = detail::common_tape<T>({&a});
  if (tp) {
    const int ia = a.node;
    auto yd = out.data;  // saved softmax output
    const i64 n = out.numel();
    detail::attach(out, tp, [ia, yd, outer, len, inner, n](Tape<T>& t, const std::vector<T>& go) {
      auto& ga = t.grad_buf(ia, n);
      for (i64 o = 0; o < outer; ++o) {
        for (i64 in = 0; in < inner; ++in) {
          const i64 base = o * len * inner + in;
          T dot = T(0);
          for (i64 k = 0; k < len; ++k) {
            const i64 idx = base + k * inner;
            dot += go[static_cast<std::size_t>(idx)] * (*yd)[static_cast<std::size_t>(idx)];
          }
          for (i64 k = 0; k < len; ++k) {
            const i64 idx = base + k * inner;
            ga[static_cast<std::size_t>(idx)] += (*yd)[static_cast<std::size_t>(idx)] *
                                                 (go[static_cast<std::size_t>(idx)] - dot);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<i64> shape) {
  i64 n = 1;
  for (i64 d : shape) {
    check(d > 0, "reshape: dimensions must be positive");
    n *= d;
  }
  check(!shape.empty() && n == a.numel(), "reshape: element count mismatch");
  Tensor<T> out;
  out.shape = std::move(shape);
  out.data = a.data;  // view: same buffer
  Tape<T>* tp = detail::common_tape<T>({&a});
  if (tp) {
    const int ia = a.node;
    detail::attach(out, tp, [ia, n](Tape<T>& t, const std::vector<T>& go) {
      auto& ga = t.grad_buf(ia, n);
      for (i64 i = 0; i < n; ++i) ga[static_cast<std::size_t>(i)] += go[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
  check(!xs.empty(), "concat: no inputs");
  const int rank = xs[0].rank();
  if (axis < 0) axis += rank;
  check(axis >= 0 && axis < rank, "concat: axis out of range");
  i64 total = 0;
  for (const auto& x : xs) {
    check(x.rank() == rank, "concat: rank mismatch");
    for (int d = 0; d < rank; ++d) {
      if (d == axis) continue;
      check(x.shape[static_cast<std::size_t>(d)] == xs[0].shape[static_cast<std::size_t>(d)],
            "concat: non-axis dimension mismatch");
    }
    total += x.shape[static_cast<std::size_t>(axis)];
  }
  std::vector<i64> oshape = xs[0].shape;
  oshape[static_cast<std::size_t>(axis)] = total;
  Tensor<T> out = Tensor<T>::zeros(oshape);

  const i64 outer = detail::prod(oshape, 0, static_cast<std::size_t>(axis));
  const i64 inner = detail::prod(oshape, static_cast<std::size_t>(axis) + 1, oshape.size());
  T* po = out.ptr();
  i64 off = 0;  // element offset along axis
  struct Piece {
    int node;
    i64 axis_len;
    i64 offset;
    i64 numel;
  };
  std::vector<Piece> pieces;
  pieces.reserve(xs.size());
  for (const auto& x : xs) {
    const i64 alen = x.shape[static_cast<std::size_t>(axis)];
    const T* px = x.ptr();
    for (i64 o = 0; o < outer; ++o) {
      std::memcpy(po + (o * total + off) * inner, px + o * alen * inner,
                  static_cast<std::size_t>(alen * inner) * sizeof(T));
    }
    pieces.push_back(Piece{detail::node_of(x), alen, off, x.numel()});
    off += alen;
  }
  std::vector<const Tensor<T>*> refs;
  refs.reserve(xs.size());
  for (const auto& x : xs) refs.push_back(&x);
  Tape<T>* tp = nullptr;
  for (const auto* r : refs) {
    if (!r->tracked()) continue;
    check(tp == nullptr || tp == r->tape, "concat: inputs live on different tapes");
    tp = r->tape;
  }
  if (tp) {
    detail::attach(out, tp, [pieces, outer, inner, total](Tape<T>& t, const std::vector<T>& go) {
      for (const Piece& p : pieces) {
        if (p.node < 0) continue;
        auto& gx = t.grad_buf(p.node, p.numel);
        for (i64 o = 0; o < outer; ++o) {
          const i64 src = (o * total + p.offset) * inner;
          const i64 dst = o * p.axis_len * inner;
          for (i64 k = 0; k < p.axis_len * inner; ++k)
            gx[static_cast<std::size_t>(dst + k)] += go[static_cast<std::size_t>(src + k)];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(std::initializer_list<Tensor<T>> xs, int axis) {
  return concat(std::vector<Tensor<T>>(xs), axis);
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& a, int axis, const std::vector<i64>& sizes) {
  const int rank = a.rank();
  if (axis < 0) axis += rank;
  check(axis >= 0 && axis < rank, "split: axis out of range");
  i64 total = 0;
  for (i64 s : sizes) {
    check(s > 0, "split: piece sizes must be positive");
    total += s;
  }
  check(total == a.shape[static_cast<std::size_t>(axis)], "split: sizes do not sum to the axis length");

  const i64 outer = detail::prod(a.shape, 0, static_cast<std::size_t>(axis));
  const i64 inner = detail::prod(a.shape, static_cast<std::size_t>(axis) + 1, a.shape.size());
  Tape<T>* tp = detail::common_tape<T>({&a});
  const int ia = detail::node_of(a);
  const i64 a_numel = a.numel();

  std::vector<Tensor<T>> outs;
  outs.reserve(sizes.size());
  i64 off = 0;
  for (i64 s : sizes) {
    std::vector<i64> oshape = a.shape;
    oshape[static_cast<std::size_t>(axis)] = s;
    Tensor<T> piece = Tensor<T>::zeros(oshape);
    T* pp = piece.ptr();
    const T* pa = a.ptr();
    for (i64 o = 0; o < outer; ++o) {
      std::memcpy(pp + o * s * inner, pa + (o * total + off) * inner,
                  static_cast<std::size_t>(s * inner) * sizeof(T));
    }
    if (tp && ia >= 0) {
      const i64 piece_off = off;
      detail::attach(piece, tp,
                     [ia, a_numel, piece_off, s, outer, inner, total](Tape<T>& t, const std::vector<T>& go) {
        auto& ga = t.grad_buf(ia, a_numel);
        for (i64 o = 0; o < outer; ++o) {
          const i64 dst = (o * total + piece_off) * inner;
          const i64 src = o * s * inner;
          for (i64 k = 0; k < s * inner; ++k)
            ga[static_cast<std::size_t>(dst + k)] += go[static_cast<std::size_t>(src + k)];
        }
      });
    }
    outs.push_back(std::move(piece));
    off += s;
  }
  return outs;
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
  check(a.rank() >= 2, "transpose_last2: rank must be at least 2");
  const i64 rows = a.shape[a.shape.size() - 2];
  const i64 cols = a.shape[a.shape.size() - 1];
  const i64 batch = detail::prod(a.shape, 0, a.shape.size() - 2);
  std::vector<i64> oshape = a.shape;
  std::swap(oshape[oshape.size() - 2], oshape[oshape.size() - 1]);
  Tensor<T> out = Tensor<T>::zeros(oshape);
  const T* pa = a.ptr();
  T* po = out.ptr();
  for (i64 b = 0; b < batch; ++b) {
    const T* src = pa + b * rows * cols;
    T* dst = po + b * rows * cols;
    for (i64 r = 0; r < rows; ++r)
      for (i64 c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
  Tape<T>* tp = detail::common_tape<T>({&a});
  if (tp) {
    const int ia = a.node;
    const i64 n = a.numel();
    detail::attach(out, tp, [ia, n, batch, rows, cols](Tape<T>& t, const std::vector<T>& go) {
      auto& ga = t.grad_buf(ia, n);
      for (i64 b = 0; b < batch; ++b) {
        const T* src = go.data() + b * rows * cols;
        T* dst = ga.data() + b * rows * cols;
        for (i64 r = 0; r < rows; ++r)
          for (i64 c = 0; c < cols; ++c) dst[r * cols + c] += src[c * rows + r];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matmul (batched; an operand without batch dims broadcasts)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void mm_accum(const T* a, const T* b, T* c, i64 m, i64 k, i64 n) {
  // c[m,n] += a[m,k] * b[k,n]
  for (i64 i = 0; i < m; ++i) {
    for (i64 l = 0; l < k; ++l) {
      const T av = a[i * k + l];
      if (av == T(0)) continue;
      const T* brow = b + l * n;
      T* crow = c + i * n;
      for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void mm_accum_at_b(const T* a, const T* g, T* gb, i64 m, i64 k, i64 n) {
  // gb[k,n] += a^T[k,m] * g[m,n]
  for (i64 i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* grow = g + i * n;
    for (i64 l = 0; l < k; ++l) {
      const T av = arow[l];
      if (av == T(0)) continue;
      T* brow = gb + l * n;
      for (i64 j = 0; j < n; ++j) brow[j] += av * grow[j];
    }
  }
}

template <typename T>
void mm_accum_g_bt(const T* g, const T* b, T* ga, i64 m, i64 k, i64 n) {
  // ga[m,k] += g[m,n] * b^T[n,k]
  for (i64 i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    T* garow = ga + i * k;
    for (i64 l = 0; l < k; ++l) {
      const T* brow = b + l * n;
      T acc = T(0);
      for (i64 j = 0; j < n; ++j) acc += grow[j] * brow[j];
      garow[l] += acc;
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.rank() >= 2 && b.rank() >= 2, "matmul: operands must have rank >= 2");
  const i64 m = a.shape[a.shape.size() - 2];
  const i64 k = a.shape[a.shape.size() - 1];
  const i64 kb = b.shape[b.shape.size() - 2];
  const i64 n = b.shape[b.shape.size() - 1];
  check(k == kb, "matmul: inner dimensions disagree");
  std::vector<i64> abatch(a.shape.begin(), a.shape.end() - 2);
  std::vector<i64> bbatch(b.shape.begin(), b.shape.end() - 2);
  const bool a_bcast = abatch.empty() && !bbatch.empty();
  const bool b_bcast = bbatch.empty() && !abatch.empty();
  check(a_bcast || b_bcast || abatch == bbatch, "matmul: leading batch dimensions disagree");
  const std::vector<i64>& batch_shape = a_bcast ? bbatch : abatch;
  const i64 batch = detail::prod(batch_shape, 0, batch_shape.size());

  std::vector<i64> oshape = batch_shape;
  oshape.push_back(m);
  oshape.push_back(n);
  Tensor<T> out = Tensor<T>::zeros(oshape);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (i64 bi = 0; bi < batch; ++bi) {
    const T* ab = pa + (a_bcast ? 0 : bi * m * k);
    const T* bb = pb + (b_bcast ? 0 : bi * k * n);
    detail::mm_accum(ab, bb, po + bi * m * n, m, k, n);
  }
  Tape<T>* tp = detail::common_tape<T>({&a, &b});
  if (tp) {
    const int ia = detail::node_of(a), ib = detail::node_of(b);
    auto ad = a.data, bd = b.data;
    const i64 na = a.numel(), nb = b.numel();
    detail::attach(out, tp,
                   [ia, ib, ad, bd, na, nb, batch, m, k, n, a_bcast, b_bcast](Tape<T>& t,
                                                                              const std::vector<T>& go) {
      if (ia >= 0) {
        auto& ga = t.grad_buf(ia, na);
        for (i64 bi = 0; bi < batch; ++bi) {
          const T* g = go.data() + bi * m * n;
          const T* bb = bd->data() + (b_bcast ? 0 : bi * k * n);
          T* gab = ga.data() + (a_bcast ? 0 : bi * m * k);
          detail::mm_accum_g_bt(g, bb, gab, m, k, n);
        }
      }
      if (ib >= 0) {
        auto& gb = t.grad_buf(ib, nb);
        for (i64 bi = 0; bi < batch; ++bi) {
          const T* g = go.data() + bi * m * n;
          const T* ab = ad->data() + (a_bcast ? 0 : bi * m * k);
          T* gbb = gb.data() + (b_bcast ? 0 : bi * k * n);
          detail::mm_accum_at_b(ab, g, gbb, m, k, n);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

// Cross-correlation with square kernel. x:[N,Cin,H,W] w:[Cout,Cin,k,k]
// b:[Cout]. Output spatial size floor((H + 2*padding - k)/stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, i64 stride, i64 padding) {
  check(x.rank() == 4, "conv2d: input must be [N,C,H,W]");
  check(w.rank() == 4 && w.shape[2] == w.shape[3], "conv2d: weight must be [Cout,Cin,k,k]");
  check(stride >= 1, "conv2d: stride must be >= 1");
  check(padding >= 0, "conv2d: padding must be >= 0");
  const i64 N = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3];
  const i64 Cout = w.shape[0], k = w.shape[2];
  check(w.shape[1] == Cin, "conv2d: channel mismatch between input and weight");
  check(b.rank() == 1 && b.shape[0] == Cout, "conv2d: bias must be [Cout]");
  const i64 Ho = (H + 2 * padding - k) / stride + 1;
  const i64 Wo = (W + 2 * padding - k) / stride + 1;
  check(Ho >= 1 && Wo >= 1, "conv2d: kernel larger than padded input");

  Tensor<T> out = Tensor<T>::zeros({N, Cout, Ho, Wo});
  const T* px = x.ptr();
  const T* pw = w.ptr();
  const T* pbias = b.ptr();
  T* po = out.ptr();
  for (i64 n = 0; n < N; ++n) {
    for (i64 co = 0; co < Cout; ++co) {
      T* oplane = po + (n * Cout + co) * Ho * Wo;
      for (i64 ho = 0; ho < Ho; ++ho) {
        T* orow = oplane + ho * Wo;
        for (i64 wo = 0; wo < Wo; ++wo) orow[wo] = pbias[co];
        for (i64 ci = 0; ci < Cin; ++ci) {
          const T* xplane = px + (n * Cin + ci) * H * W;
          const T* wplane = pw + (co * Cin + ci) * k * k;
          for (i64 kh = 0; kh < k; ++kh) {
            const i64 hi = ho * stride - padding + kh;
            if (hi < 0 || hi >= H) continue;
            const T* xrow = xplane + hi * W;
            const T* wrow = wplane + kh * k;
            for (i64 kw = 0; kw < k; ++kw) {
              const T wv = wrow[kw];
              if (wv == T(0)) continue;
              const i64 wi0 = -padding + kw;
              // valid wo range: 0 <= wi0 + wo*stride < W
              i64 lo = 0;
              if (wi0 < 0) lo = (-wi0 + stride - 1) / stride;
              i64 hi_wo = Wo;
              if (wi0 + (Wo - 1) * stride >= W) hi_wo = (W - wi0 + stride - 1) / stride;
              for (i64 wo = lo; wo < hi_wo; ++wo) orow[wo] += wv * xrow[wo * stride + wi0];
            }
          }
        }
      }
    }
  }

  Tape<T>* tp = detail::common_tape<T>({&x, &w, &b});
  if (tp) {
    const int ix = detail::node_of(x), iw = detail::node_of(w), ibias = detail::node_of(b);
    auto xd = x.data, wd = w.data;
    const i64 nx = x.numel(), nw = w.numel();
    detail::attach(out, tp,
                   [=](Tape<T>& t, const std::vector<T>& go) {
      const T* g = go.data();
      if (ix >= 0) {
        auto& gx = t.grad_buf(ix, nx);
        for (i64 n = 0; n < N; ++n) {
          for (i64 co = 0; co < Cout; ++co) {
            const T* gplane = g + (n * Cout + co) * Ho * Wo;
            for (i64 ci = 0; ci < Cin; ++ci) {
              T* gxplane = gx.data() + (n * Cin + ci) * H * W;
              const T* wplane = wd->data() + (co * Cin + ci) * k * k;
              for (i64 ho = 0; ho < Ho; ++ho) {
                const T* grow = gplane + ho * Wo;
                for (i64 kh = 0; kh < k; ++kh) {
                  const i64 hi = ho * stride - padding + kh;
                  if (hi < 0 || hi >= H) continue;
                  T* gxrow = gxplane + hi * W;
                  const T* wrow = wplane + kh * k;
                  for (i64 wo = 0; wo < Wo; ++wo) {
                    const T gv = grow[wo];
                    if (gv == T(0)) continue;
                    const i64 wbase = wo * stride - padding;
                    for (i64 kw = 0; kw < k; ++kw) {
                      const i64 wi = wbase + kw;
                      if (wi < 0 || wi >= W) continue;
                      gxrow[wi] += gv * wrow[kw];
                    }
                  }
                }
              }
            }
          }
        }
      }
      if (iw >= 0) {
        auto& gw = t.grad_buf(iw, nw);
        for (i64 co = 0; co < Cout; ++co) {
          for (i64 ci = 0; ci < Cin; ++ci) {
            T* gwplane = gw.data() + (co * Cin + ci) * k * k;
            for (i64 n = 0; n < N; ++n) {
              const T* gplane = g + (n * Cout + co) * Ho * Wo;
              const T* xplane = xd->data() + (n * Cin + ci) * H * W;
              for (i64 ho = 0; ho < Ho; ++ho) {
                const T* grow = gplane + ho * Wo;
                for (i64 kh = 0; kh < k; ++kh) {
                  const i64 hi = ho * stride - padding + kh;
                  if (hi < 0 || hi >= H) continue;
                  const T* xrow = xplane + hi * W;
                  for (i64 kw = 0; kw < k; ++kw) {
                    const i64 wi0 = -padding + kw;
                    T acc = T(0);
                    for (i64 wo = 0; wo < Wo; ++wo) {
                      const i64 wi = wi0 + wo * stride;
                      if (wi < 0 || wi >= W) continue;
                      acc += grow[wo] * xrow[wi];
                    }
                    gwplane[kh * k + kw] += acc;
                  }
                }
              }
            }
          }
        }
      }
      if (ibias >= 0) {
        auto& gb = t.grad_buf(ibias, Cout);
        for (i64 n = 0; n < N; ++n) {
          for (i64 co = 0; co < Cout; ++co) {
            const T* gplane = g + (n * Cout + co) * Ho * Wo;
            T acc = T(0);
            for (i64 i = 0; i < Ho * Wo; ++i) acc += gplane[i];
            gb[static_cast<std::size_t>(co)] += acc;
          }
        }
      }
    });
  }
  return out;
}

// Depthwise cross-correlation. x:[N,C,H,W] w:[C,1,k,k] b:[C], k in {3,5},
// padding (k-1)/2 so the spatial size is preserved.
template <typename T>
Tensor<T> dwconv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, i64 padding) {
  check(x.rank() == 4, "dwconv2d: input must be [N,C,H,W]");
  check(w.rank() == 4 && w.shape[1] == 1 && w.shape[2] == w.shape[3], "dwconv2d: weight must be [C,1,k,k]");
  const i64 k = w.shape[2];
  check(k % 2 == 1, "dwconv2d: kernel size must be odd");
  check(k == 3 || k == 5, "dwconv2d: kernel size must be 3 or 5");
  check(padding == (k - 1) / 2, "dwconv2d: padding must be (k-1)/2");
  const i64 N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  check(w.shape[0] == C, "dwconv2d: channel mismatch between input and weight");
  check(b.rank() == 1 && b.shape[0] == C, "dwconv2d: bias must be [C]");

  Tensor<T> out = Tensor<T>::zeros({N, C, H, W});
  const T* px = x.ptr();
  const T* pw = w.ptr();
  const T* pbias = b.ptr();
  T* po = out.ptr();
  for (i64 n = 0; n < N; ++n) {
    for (i64 c = 0; c < C; ++c) {
      const T* xplane = px + (n * C + c) * H * W;
      const T* wk = pw + c * k * k;
      T* oplane = po + (n * C + c) * H * W;
      for (i64 ho = 0; ho < H; ++ho) {
        T* orow = oplane + ho * W;
        for (i64 wo = 0; wo < W; ++wo) orow[wo] = pbias[c];
        for (i64 kh = 0; kh < k; ++kh) {
          const i64 hi = ho - padding + kh;
          if (hi < 0 || hi >= H) continue;
          const T* xrow = xplane + hi * W;
          for (i64 kw = 0; kw < k; ++kw) {
            const T wv = wk[kh * k + kw];
            if (wv == T(0)) continue;
            const i64 wi0 = -padding + kw;
            const i64 lo = std::max<i64>(0, -wi0);
            const i64 hi_wo = std::min<i64>(W, W - wi0);
            for (i64 wo = lo; wo < hi_wo; ++wo) orow[wo] += wv * xrow[wo + wi0];
          }
        }
      }
    }
  }

  Tape<T>* tp = detail::common_tape<T>({&x, &w, &b});
  if (tp) {
    const int ix = detail::node_of(x), iw = detail::node_of(w), ibias = detail::node_of(b);
    auto xd = x.data, wd = w.data;
    const i64 nx = x.numel(), nw = w.numel();
    detail::attach(out, tp, [=](Tape<T>& t, const std::vector<T>& go) {
      const T* g = go.data();
      if (ix >= 0) {
        auto& gx = t.grad_buf(ix, nx);
        for (i64 n = 0; n < N; ++n) {
          for (i64 c = 0; c < C; ++c) {
            const T* gplane = g + (n * C + c) * H * W;
            T* gxplane = gx.data() + (n * C + c) * H * W;
            const T* wk = wd->data() + c * k * k;
            for (i64 ho = 0; ho < H; ++ho) {
              const T* grow = gplane + ho * W;
              for (i64 kh = 0; kh < k; ++kh) {
                const i64 hi = ho - padding + kh;
                if (hi < 0 || hi >= H) continue;
                T* gxrow = gxplane + hi * W;
                for (i64 kw = 0; kw < k; ++kw) {
                  const T wv = wk[kh * k + kw];
                  if (wv == T(0)) continue;
                  const i64 wi0 = -padding + kw;
                  const i64 lo = std::max<i64>(0, -wi0);
                  const i64 hi_wo = std::min<i64>(W, W - wi0);
                  for (i64 wo = lo; wo < hi_wo; ++wo) gxrow[wo + wi0] += grow[wo] * wv;
                }
              }
            }
          }
        }
      }
      if (iw >= 0) {
        auto& gw = t.grad_buf(iw, nw);
        for (i64 c = 0; c < C; ++c) {
          T* gwk = gw.data() + c * k * k;
          for (i64 n = 0; n < N; ++n) {
            const T* gplane = g + (n * C + c) * H * W;
            const T* xplane = xd->data() + (n * C + c) * H * W;
            for (i64 ho = 0; ho < H; ++ho) {
              const T* grow = gplane + ho * W;
              for (i64 kh = 0; kh < k; ++kh) {
                const i64 hi = ho - padding + kh;
                if (hi < 0 || hi >= H) continue;
                const T* xrow = xplane + hi * W;
                for (i64 kw = 0; kw < k; ++kw) {
                  const i64 wi0 = -padding + kw;
                  const i64 lo = std::max<i64>(0, -wi0);
                  const i64 hi_wo = std::min<i64>(W, W - wi0);
                  T acc = T(0);
                  for (i64 wo = lo; wo < hi_wo; ++wo) acc += grow[wo] * xrow[wo + wi0];
                  gwk[kh * k + kw] += acc;
                }
              }
            }
          }
        }
      }
      if (ibias >= 0) {
        auto& gb = t.grad_buf(ibias, C);
        for (i64 n = 0; n < N; ++n) {
          for (i64 c = 0; c < C; ++c) {
            const T* gplane = g + (n * C + c) * H * W;
            T acc = T(0);
            for (i64 i = 0; i < H * W; ++i) acc += gplane[i];
            gb[static_cast<std::size_t>(c)] += acc;
          }
        }
      }
    });
  }
  return out;
}

// Transposed convolution (stride-s upsampling). x:[N,Cin,H,W]
// w:[Cin,Cout,k,k] b:[Cout]. Output spatial size (H-1)*stride + k.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, i64 stride) {
  check(x.rank() == 4, "conv_transpose2d: input must be [N,C,H,W]");
  check(w.rank() == 4 && w.shape[2] == w.shape[3], "conv_transpose2d: weight must be [Cin,Cout,k,k]");
  check(stride >= 1, "conv_transpose2d: stride must be >= 1");
  const i64 N = x.shape[0], Cin = x.shape[1], H = x.shape[2], W = x.shape[3];
  const i64 Cout = w.shape[1], k = w.shape[2];
  check(w.shape[0] == Cin, "conv_transpose2d: channel mismatch between input and weight");
  check(b.rank() == 1 && b.shape[0] == Cout, "conv_transpose2d: bias must be [Cout]");
  const i64 Ho = (H - 1) * stride + k;
  const i64 Wo = (W - 1) * stride + k;

  Tensor<T> out = Tensor<T>::zeros({N, Cout, Ho, Wo});
  const T* px = x.ptr();
  const T* pw = w.ptr();
  const T* pbias = b.ptr();
  T* po = out.ptr();
  for (i64 n = 0; n < N; ++n) {
    for (i64 co = 0; co < Cout; ++co) {
      T* oplane = po + (n * Cout + co) * Ho * Wo;
      for (i64 i = 0; i < Ho * Wo; ++i) oplane[i] = pbias[co];
      for (i64 ci = 0; ci < Cin; ++ci) {
        const T* xplane = px + (n * Cin + ci) * H * W;
        const T* wplane = pw + (ci * Cout + co) * k * k;
        for (i64 h = 0; h < H; ++h) {
          const T* xrow = xplane + h * W;
          for (i64 kh = 0; kh < k; ++kh) {
            T* orow = oplane + (h * stride + kh) * Wo;
            const T* wrow = wplane + kh * k;
            for (i64 ww = 0; ww < W; ++ww) {
              const T xv = xrow[ww];
              if (xv == T(0)) continue;
              T* od = orow + ww * stride;
              for (i64 kw = 0; kw < k; ++kw) od[kw] += xv * wrow[kw];
            }
          }
        }
      }
    }
  }

  Tape<T>* tp = detail::common_tape<T>({&x, &w, &b});
  if (tp) {
    const int ix = detail::node_of(x), iw = detail::node_of(w), ibias = detail::node_of(b);
    auto xd = x.data, wd = w.data;
    const i64 nx = x.numel(), nw = w.numel();
    detail::attach(out, tp, [=](Tape<T>& t, const std::vector<T>& go) {
      const T* g = go.data();
      if (ix >= 0) {
        auto& gx = t.grad_buf(ix, nx);
        for (i64 n = 0; n < N; ++n) {
          for (i64 ci = 0; ci < Cin; ++ci) {
            T* gxplane = gx.data() + (n * Cin + ci) * H * W;
            for (i64 co = 0; co < Cout; ++co) {
              const T* gplane = g + (n * Cout + co) * Ho * Wo;
              const T* wplane = wd->data() + (ci * Cout + co) * k * k;
              for (i64 h = 0; h < H; ++h) {
                T* gxrow = gxplane + h * W;
                for (i64 kh = 0; kh < k; ++kh) {
                  const T* grow = gplane + (h * stride + kh) * Wo;
                  const T* wrow = wplane + kh * k;
                  for (i64 ww = 0; ww < W; ++ww) {
                    const T* gd = grow + ww * stride;
                    T acc = T(0);
                    for (i64 kw = 0; kw < k; ++kw) acc += gd[kw] * wrow[kw];
                    gxrow[ww] += acc;
                  }
                }
              }
            }
          }
        }
      }
      if (iw >= 0) {
        auto& gw = t.grad_buf(iw, nw);
        for (i64 ci = 0; ci < Cin; ++ci) {
          for (i64 co = 0; co < Cout; ++co) {
            T* gwplane = gw.data() + (ci * Cout + co) * k * k;
            for (i64 n = 0; n < N; ++n) {
              const T* gplane = g + (n * Cout + co) * Ho * Wo;
              const T* xplane = xd->data() + (n * Cin + ci) * H * W;
              for (i64 h = 0; h < H; ++h) {
                const T* xrow = xplane + h * W;
                for (i64 kh = 0; kh < k; ++kh) {
                  const T* grow = gplane + (h * stride + kh) * Wo;
                  for (i64 kw = 0; kw < k; ++kw) {
                    T acc = T(0);
                    const T* gd = grow + kw;
                    for (i64 ww = 0; ww < W; ++ww) acc += xrow[ww] * gd[ww * stride];
                    gwplane[kh * k + kw] += acc;
                  }
                }
              }
            }
          }
        }
      }
      if (ibias >= 0) {
        auto& gb = t.grad_buf(ibias, Cout);
        for (i64 n = 0; n < N; ++n) {
          for (i64 co = 0; co < Cout; ++co) {
            const T* gplane = g + (n * Cout + co) * Ho * Wo;
            T acc = T(0);
            for (i64 i = 0; i < Ho * Wo; ++i) acc += gplane[i];
            gb[static_cast<std::size_t>(co)] += acc;
          }
        }
      }
    });
  }
  return out;
}

// 2x2 average pooling with stride 2.
template <typename T>
Tensor<T> avgpool2(const Tensor<T>& x) {
  check(x.rank() == 4, "avgpool2: input must be [N,C,H,W]");
  const i64 N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  check(H % 2 == 0 && W % 2 == 0, "avgpool2: spatial dimensions must be even");
  const i64 Ho = H / 2, Wo = W / 2;
  Tensor<T> out = Tensor<T>::zeros({N, C, Ho, Wo});
  const T* px = x.ptr();
  T* po = out.ptr();
  for (i64 nc = 0; nc < N * C; ++nc) {
    const T* xplane = px + nc * H * W;
    T* oplane = po + nc * Ho * Wo;
    for (i64 i = 0; i < Ho; ++i) {
      const T* r0 = xplane + 2 * i * W;
      const T* r1 = r0 + W;
      T* orow = oplane + i * Wo;
      for (i64 j = 0; j < Wo; ++j)
        orow[j] = (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]) * static_cast<T>(0.25);
    }
  }
  Tape<T>* tp = detail::common_tape<T>({&x});
  if (tp) {
    const int ix = x.node;
    const i64 nx = x.numel();
    detail::attach(out, tp, [ix, nx, N, C, H, W, Ho, Wo](Tape<T>& t, const std::vector<T>& go) {
      auto& gx = t.grad_buf(ix, nx);
      for (i64 nc = 0; nc < N * C; ++nc) {
        const T* gplane = go.data() + nc * Ho * Wo;
        T* gxplane = gx.data() + nc * H * W;
        for (i64 i = 0; i < Ho; ++i) {
          T* r0 = gxplane + 2 * i * W;
          T* r1 = r0 + W;
          const T* grow = gplane + i * Wo;
          for (i64 j = 0; j < Wo; ++j) {
            const T g = grow[j] * static_cast<T>(0.25);
            r0[2 * j] += g;
            r0[2 * j + 1] += g;
            r1[2 * j] += g;
            r1[2 * j + 1] += g;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layer norm over the channel axis, independently at each spatial position.
// x:[N,C,H,W], gamma/beta:[C].
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layernorm_channels(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             T eps = static_cast<T>(1e-5)) {
  check(x.rank() == 4, "layernorm_channels: input must be [N,C,H,W]");
  const i64 N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  check(gamma.rank() == 1 && gamma.shape[0] == C, "layernorm_channels: gamma must be [C]");
  check(beta.rank() == 1 && beta.shape[0] == C, "layernorm_channels: beta must be [C]");
  const i64 HW = H * W;
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  auto mu = std::make_shared<std::vector<T>>(static_cast<std::size_t>(N * HW));
  auto invstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(N * HW));
  const T* px = x.ptr();
  const T* pg = gamma.ptr();
  const T* pb = beta.ptr();
  T* po = out.ptr();
  for (i64 n = 0; n < N; ++n) {
    for (i64 s = 0; s < HW; ++s) {
      T m = T(0);
      for (i64 c = 0; c < C; ++c) m += px[(n * C + c) * HW + s];
      m /= static_cast<T>(C);
      T var = T(0);
      for (i64 c = 0; c < C; ++c) {
        const T d = px[(n * C + c) * HW + s] - m;
        var += d * d;
      }
      var /= static_cast<T>(C);
      const T is = T(1) / std::sqrt(var + eps);
      (*mu)[static_cast<std::size_t>(n * HW + s)] = m;
      (*invstd)[static_cast<std::size_t>(n * HW + s)] = is;
      for (i64 c = 0; c < C; ++c) {
        const i64 idx = (n * C + c) * HW + s;
        po[idx] = pg[c] * (px[idx] - m) * is + pb[c];
      }
    }
  }
  Tape<T>* tp = detail::common_tape<T>({&x, &gamma, &beta});
  if (tp) {
    const int ix = detail::node_of(x), ig = detail::node_of(gamma), ib = detail::node_of(beta);
    auto xd = x.data, gd = gamma.data;
    const i64 nx = x.numel();
    detail::attach(out, tp, [=](Tape<T>& t, const std::vector<T>& go) {
      std::vector<T>* gx = ix >= 0 ? &t.grad_buf(ix, nx) : nullptr;
      std::vector<T>* gg = ig >= 0 ? &t.grad_buf(ig, C) : nullptr;
      std::vector<T>* gb = ib >= 0 ? &t.grad_buf(ib, C) : nullptr;
      for (i64 n = 0; n < N; ++n) {
        for (i64 s = 0; s < HW; ++s) {
          const T m = (*mu)[static_cast<std::size_t>(n * HW + s)];
          const T is = (*invstd)[static_cast<std::size_t>(n * HW + s)];
          T mean_g = T(0), mean_gx = T(0);
          for (i64 c = 0; c < C; ++c) {
            const i64 idx = (n * C + c) * HW + s;
            const T xh = ((*xd)[static_cast<std::size_t>(idx)] - m) * is;
            const T g = go[static_cast<std::size_t>(idx)] * (*gd)[static_cast<std::size_t>(c)];
            mean_g += g;
            mean_gx += g * xh;
            if (gg) (*gg)[static_cast<std::size_t>(c)] += go[static_cast<std::size_t>(idx)] * xh;
            if (gb) (*gb)[static_cast<std::size_t>(c)] += go[static_cast<std::size_t>(idx)];
          }
          mean_g /= static_cast<T>(C);
          mean_gx /= static_cast<T>(C);
          if (gx) {
            for (i64 c = 0; c < C; ++c) {
              const i64 idx = (n * C + c) * HW + s;
              const T xh = ((*xd)[static_cast<std::size_t>(idx)] - m) * is;
              const T g = go[static_cast<std::size_t>(idx)] * (*gd)[static_cast<std::size_t>(c)];
              (*gx)[static_cast<std::size_t>(idx)] += is * (g - mean_g - xh * mean_gx);
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

template <typename U, typename T>
Tensor<U> cast(const Tensor<T>& a) {
  Tensor<U> out = Tensor<U>::zeros(a.shape);
  for (i64 i = 0; i < a.numel(); ++i)
    out.ptr()[i] = static_cast<U>(a.ptr()[i]);
  return out;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  check(a.shape == b.shape, "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (i64 i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.ptr()[i]) - static_cast<double>(b.ptr()[i])));
  return m;
}

}  // namespace uwf
