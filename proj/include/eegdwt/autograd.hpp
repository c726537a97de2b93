#pragma once

// Reverse-mode automatic differentiation on Tensor. A Var wraps a graph node;
// free functions build new nodes with their backward closures. backward()
// walks the graph once in reverse topological order and accumulates gradients
// into every reachable node that requires them.
//
// Everything is double precision. Graphs are ephemeral: parameters are
// long-lived Vars, intermediate nodes are freed when the loss Var goes out
// of scope.

#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "eegdwt/errors.hpp"
#include "eegdwt/tensor.hpp"

namespace eegdwt::ag {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backprop;  // accumulates into inputs' grads
};

namespace detail {
inline thread_local int nograd_depth = 0;
}

inline bool grad_enabled() { return detail::nograd_depth == 0; }

// Disables graph construction in scope (inference / plain evaluation).
struct NoGradGuard {
  NoGradGuard() { ++detail::nograd_depth; }
  ~NoGradGuard() { --detail::nograd_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false)
      : n_(std::make_shared<Node>()) {
    n_->value = std::move(value);
    n_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  bool defined() const { return n_ != nullptr; }
  const Tensor& value() const { return n_->value; }
  Tensor& mutable_value() { return n_->value; }
  const Tensor& grad() const { return n_->grad; }
  bool has_grad() const { return n_->grad.defined(); }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  void zero_grad() { n_->grad = Tensor(); }
  const std::shared_ptr<Node>& node() const { return n_; }

  const Shape& shape() const { return n_->value.shape(); }
  std::int64_t dim(std::int64_t i) const { return n_->value.dim(i); }
  std::int64_t rank() const { return n_->value.rank(); }

 private:
  std::shared_ptr<Node> n_;
};

inline Var constant(Tensor t) { return Var(std::move(t), false); }
inline Var parameter(Tensor t) { return Var(std::move(t), true); }

namespace detail {

inline void accum(const std::shared_ptr<Node>& in, const Tensor& delta) {
  if (!in->requires_grad) return;
  if (!in->grad.defined()) {
    in->grad = delta;
    return;
  }
  double* g = in->grad.data();
  const double* d = delta.data();
  const std::int64_t n = in->grad.numel();
  for (std::int64_t i = 0; i < n; ++i) g[i] += d[i];
}

inline Var make_op(Tensor value, std::vector<Var> inputs,
                   std::function<void(Node&)> backprop) {
  bool rg = false;
  if (grad_enabled()) {
    for (const auto& v : inputs) rg = rg || v.requires_grad();
  }
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = rg;
  if (rg) {
    n->inputs.reserve(inputs.size());
    for (auto& v : inputs) n->inputs.push_back(v.node());
    n->backprop = std::move(backprop);
  }
  return Var(std::move(n));
}

}  // namespace detail

inline void backward(const Var& root) {
  if (!root.defined()) throw ArgumentError("backward on undefined Var");
  if (root.value().numel() != 1) {
    throw ArgumentError(detail::str("backward root must be scalar, got shape ",
                                    shape_str(root.shape())));
  }
  Node* r = root.node().get();
  if (!r->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(r, 0);
  visited.insert(r);
  while (!stack.empty()) {
    auto [n, i] = stack.back();
    if (i < n->inputs.size()) {
      ++stack.back().second;
      Node* c = n->inputs[i].get();
      if (c->requires_grad && !visited.count(c)) {
        visited.insert(c);
        stack.emplace_back(c, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  r->grad = Tensor::ones(r->value.shape());
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.defined()) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// arithmetic (broadcasting, NumPy right-aligned)

inline Var add(const Var& a, const Var& b) {
  return detail::make_op(eegdwt::add(a.value(), b.value()), {a, b}, [](Node& n) {
    detail::accum(n.inputs[0], reduce_to(n.grad, n.inputs[0]->value.shape()));
    detail::accum(n.inputs[1], reduce_to(n.grad, n.inputs[1]->value.shape()));
  });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::make_op(eegdwt::sub(a.value(), b.value()), {a, b}, [](Node& n) {
    detail::accum(n.inputs[0], reduce_to(n.grad, n.inputs[0]->value.shape()));
    detail::accum(n.inputs[1],
                  reduce_to(eegdwt::scale(n.grad, -1.0), n.inputs[1]->value.shape()));
  });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::make_op(eegdwt::mul(a.value(), b.value()), {a, b}, [](Node& n) {
    detail::accum(n.inputs[0],
                  reduce_to(eegdwt::mul(n.grad, n.inputs[1]->value),
                            n.inputs[0]->value.shape()));
    detail::accum(n.inputs[1],
                  reduce_to(eegdwt::mul(n.grad, n.inputs[0]->value),
                            n.inputs[1]->value.shape()));
  });
}

inline Var div(const Var& a, const Var& b) {
  return detail::make_op(eegdwt::div(a.value(), b.value()), {a, b}, [](Node& n) {
    detail::accum(n.inputs[0],
                  reduce_to(eegdwt::div(n.grad, n.inputs[1]->value),
                            n.inputs[0]->value.shape()));
    // d/db (a/b) = -a/b^2 = -out/b
    Tensor t = eegdwt::mul(n.grad, eegdwt::div(n.value, n.inputs[1]->value));
    detail::accum(n.inputs[1],
                  reduce_to(eegdwt::scale(t, -1.0), n.inputs[1]->value.shape()));
  });
}

inline Var scale(const Var& a, double c) {
  return detail::make_op(eegdwt::scale(a.value(), c), {a}, [c](Node& n) {
    detail::accum(n.inputs[0], eegdwt::scale(n.grad, c));
  });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var add_scalar(const Var& a, double c) {
  Tensor out = a.value();
  for (auto& v : out.raw()) v += c;
  return detail::make_op(std::move(out), {a},
                         [](Node& n) { detail::accum(n.inputs[0], n.grad); });
}

// ---------------------------------------------------------------------------
// shape ops

inline Var reshape(const Var& a, Shape shape) {
  return detail::make_op(a.value().reshaped(std::move(shape)), {a}, [](Node& n) {
    detail::accum(n.inputs[0], n.grad.reshaped(n.inputs[0]->value.shape()));
  });
}

namespace detail {

inline Tensor permute_tensor(const Tensor& t, const std::vector<std::int64_t>& axes) {
  const std::size_t r = t.shape().size();
  if (axes.size() != r) throw ArgumentError("permute axes rank mismatch");
  Shape os(r);
  for (std::size_t i = 0; i < r; ++i) os[i] = t.dim(axes[i]);
  std::vector<std::int64_t> in_strides(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * t.dim(static_cast<std::int64_t>(i) + 1);
  std::vector<std::int64_t> step(r);
  for (std::size_t i = 0; i < r; ++i) step[i] = in_strides[static_cast<std::size_t>(axes[i])];
  Tensor out(os);
  std::vector<std::int64_t> idx(r, 0);
  const double* pi = t.data();
  double* po = out.data();
  std::int64_t off = 0;
  const std::int64_t n = t.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    po[i] = pi[off];
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      off += step[ax];
      if (idx[ax] < os[ax]) break;
      off -= step[ax] * os[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

}  // namespace detail

inline Var permute(const Var& a, std::vector<std::int64_t> axes) {
  std::vector<std::int64_t> inverse(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i)
    inverse[static_cast<std::size_t>(axes[i])] = static_cast<std::int64_t>(i);
  return detail::make_op(detail::permute_tensor(a.value(), axes), {a},
                         [inverse](Node& n) {
                           detail::accum(n.inputs[0],
                                         detail::permute_tensor(n.grad, inverse));
                         });
}

namespace detail {

inline std::pair<std::int64_t, std::int64_t> outer_inner(const Shape& s,
                                                         std::int64_t axis) {
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
  return {outer, inner};
}

}  // namespace detail

inline Var concat(const std::vector<Var>& parts, std::int64_t axis) {
  if (parts.empty()) throw ArgumentError("concat of zero tensors");
  Shape os = parts[0].shape();
  if (axis < 0) axis += static_cast<std::int64_t>(os.size());
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<std::int64_t>(os.size()))
      throw ArgumentError("concat rank mismatch");
    for (std::int64_t d = 0; d < p.rank(); ++d) {
      if (d != axis && p.dim(d) != os[static_cast<std::size_t>(d)])
        throw ArgumentError(detail::str("concat shape mismatch at axis ", d));
    }
    total += p.dim(axis);
  }
  os[static_cast<std::size_t>(axis)] = total;
  Tensor out(os);
  const auto [outer, inner] = detail::outer_inner(os, axis);
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t w = p.dim(axis) * inner;
    const double* src = p.value().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy(src + o * w, src + (o + 1) * w,
                out.data() + o * total * inner + off);
    }
    off += w;
  }
  std::vector<Var> inputs = parts;
  return detail::make_op(std::move(out), std::move(inputs), [axis](Node& n) {
    const Shape& os2 = n.value.shape();
    const auto [outer2, inner2] = detail::outer_inner(os2, axis);
    const std::int64_t total2 = os2[static_cast<std::size_t>(axis)] * inner2;
    std::int64_t off2 = 0;
    for (auto& in : n.inputs) {
      const std::int64_t w = in->value.dim(axis) * inner2;
      if (in->requires_grad) {
        Tensor g(in->value.shape());
        for (std::int64_t o = 0; o < outer2; ++o) {
          std::copy(n.grad.data() + o * total2 + off2,
                    n.grad.data() + o * total2 + off2 + w, g.data() + o * w);
        }
        detail::accum(in, g);
      }
      off2 += w;
    }
  });
}

inline Var slice(const Var& a, std::int64_t axis, std::int64_t start,
                 std::int64_t len) {
  if (axis < 0) axis += a.rank();
  if (start < 0 || len < 1 || start + len > a.dim(axis)) {
    throw ArgumentError(detail::str("slice [", start, ",", start + len,
                                    ") out of range for axis ", axis, " of ",
                                    shape_str(a.shape())));
  }
  Shape os = a.shape();
  os[static_cast<std::size_t>(axis)] = len;
  Tensor out(os);
  const auto [outer, inner] = detail::outer_inner(a.shape(), axis);
  const std::int64_t in_w = a.dim(axis) * inner;
  const std::int64_t out_w = len * inner;
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy(a.value().data() + o * in_w + start * inner,
              a.value().data() + o * in_w + start * inner + out_w,
              out.data() + o * out_w);
  }
  return detail::make_op(std::move(out), {a}, [axis, start](Node& n) {
    const auto& in = n.inputs[0];
    if (!in->requires_grad) return;
    Tensor g(in->value.shape());
    const auto [outer2, inner2] = detail::outer_inner(in->value.shape(), axis);
    const std::int64_t in_w = in->value.dim(axis) * inner2;
    const std::int64_t out_w = n.value.dim(axis) * inner2;
    for (std::int64_t o = 0; o < outer2; ++o) {
      std::copy(n.grad.data() + o * out_w, n.grad.data() + (o + 1) * out_w,
                g.data() + o * in_w + start * inner2);
    }
    detail::accum(in, g);
  });
}

inline Var detach(const Var& a) { return constant(a.value()); }

// ---------------------------------------------------------------------------
// reductions

inline Var sum_all(const Var& a) {
  return detail::make_op(Tensor::scalar(a.value().sum()), {a}, [](Node& n) {
    detail::accum(n.inputs[0],
                  Tensor::full(n.inputs[0]->value.shape(), n.grad[0]));
  });
}

inline Var mean_all(const Var& a) {
  const double inv = 1.0 / static_cast<double>(a.value().numel());
  return scale(sum_all(a), inv);
}

// Sum along one axis, keeping it as size 1.
inline Var sum_axis(const Var& a, std::int64_t axis) {
  if (axis < 0) axis += a.rank();
  Shape os = a.shape();
  const std::int64_t d = os[static_cast<std::size_t>(axis)];
  os[static_cast<std::size_t>(axis)] = 1;
  Tensor out(os);
  const auto [outer, inner] = detail::outer_inner(a.shape(), axis);
  const double* src = a.value().data();
  double* dst = out.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t j = 0; j < d; ++j)
      for (std::int64_t i = 0; i < inner; ++i)
        dst[o * inner + i] += src[(o * d + j) * inner + i];
  return detail::make_op(std::move(out), {a}, [](Node& n) {
    // broadcast the kept-axis gradient back over the reduced axis
    detail::accum(n.inputs[0],
                  eegdwt::add(n.grad, Tensor::zeros(n.inputs[0]->value.shape())));
  });
}

inline Var mean_axis(const Var& a, std::int64_t axis) {
  if (axis < 0) axis += a.rank();
  return scale(sum_axis(a, axis), 1.0 / static_cast<double>(a.dim(axis)));
}

// ---------------------------------------------------------------------------
// elementwise nonlinearities

namespace detail {

template <typename F, typename DF>
Var unary(const Var& a, F&& f, DF&& dfdx) {
  Tensor out = a.value();
  for (auto& v : out.raw()) v = f(v);
  return make_op(std::move(out), {a}, [dfdx](Node& n) {
    const Tensor& x = n.inputs[0]->value;
    Tensor g = n.grad;
    double* pg = g.data();
    const double* px = x.data();
    const double* py = n.value.data();
    const std::int64_t m = g.numel();
    for (std::int64_t i = 0; i < m; ++i) pg[i] *= dfdx(px[i], py[i]);
    accum(n.inputs[0], g);
  });
}

}  // namespace detail

inline Var relu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var elu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a,
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                        : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh_(const Var& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var exp_(const Var& a) {
  return detail::unary(a, [](double x) { return std::exp(x); },
                       [](double, double y) { return y; });
}

inline Var log_(const Var& a) {
  return detail::unary(a, [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}

inline Var sqrt_(const Var& a) {
  return detail::unary(a, [](double x) { return std::sqrt(x); },
                       [](double, double y) { return 0.5 / y; });
}

inline Var square(const Var& a) { return mul(a, a); }

// ---------------------------------------------------------------------------
// matrix products

inline Var matmul(const Var& a, const Var& b) {
  return detail::make_op(eegdwt::matmul(a.value(), b.value()), {a, b}, [](Node& n) {
    const Tensor& av = n.inputs[0]->value;
    const Tensor& bv = n.inputs[1]->value;
    if (n.inputs[0]->requires_grad)
      detail::accum(n.inputs[0], eegdwt::matmul(n.grad, transpose2d(bv)));
    if (n.inputs[1]->requires_grad)
      detail::accum(n.inputs[1], eegdwt::matmul(transpose2d(av), n.grad));
  });
}

namespace detail {

// batched matmul kernel on flattened leading dims
inline Tensor bmm_tensor(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  if (a.rank() < 2 || a.rank() != b.rank())
    throw ArgumentError("bmm expects equal-rank tensors of rank >= 2");
  std::int64_t batch = 1;
  for (std::int64_t i = 0; i < a.rank() - 2; ++i) {
    if (a.dim(i) != b.dim(i)) throw ArgumentError("bmm leading dims mismatch");
    batch *= a.dim(i);
  }
  const std::int64_t am = a.dim(-2), an = a.dim(-1);
  const std::int64_t bm = b.dim(-2), bn = b.dim(-1);
  const std::int64_t m = ta ? an : am;
  const std::int64_t k = ta ? am : an;
  const std::int64_t k2 = tb ? bn : bm;
  const std::int64_t n = tb ? bm : bn;
  if (k != k2)
    throw ArgumentError(detail::str("bmm inner dims mismatch: ",
                                    shape_str(a.shape()), " x ",
                                    shape_str(b.shape())));
  Shape os(a.shape().begin(), a.shape().end() - 2);
  os.push_back(m);
  os.push_back(n);
  Tensor out(os);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::int64_t as = am * an, bs = bm * bn, ds = m * n;
  for (std::int64_t t = 0; t < batch; ++t) {
    const double* A = pa + t * as;
    const double* B = pb + t * bs;
    double* D = po + t * ds;
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t kk = 0; kk < k; ++kk) {
        const double av = ta ? A[kk * an + i] : A[i * an + kk];
        if (av == 0.0) continue;
        if (tb) {
          for (std::int64_t j = 0; j < n; ++j) D[i * n + j] += av * B[j * bn + kk];
        } else {
          const double* Brow = B + kk * bn;
          for (std::int64_t j = 0; j < n; ++j) D[i * n + j] += av * Brow[j];
        }
      }
    }
  }
  return out;
}

}  // namespace detail

// a (..., m, k) x b (..., k, n) -> (..., m, n); leading dims must match.
inline Var bmm(const Var& a, const Var& b) {
  return detail::make_op(
      detail::bmm_tensor(a.value(), b.value(), false, false), {a, b},
      [](Node& n) {
        const Tensor& av = n.inputs[0]->value;
        const Tensor& bv = n.inputs[1]->value;
        if (n.inputs[0]->requires_grad)
          detail::accum(n.inputs[0], detail::bmm_tensor(n.grad, bv, false, true));
        if (n.inputs[1]->requires_grad)
          detail::accum(n.inputs[1], detail::bmm_tensor(av, n.grad, true, false));
      });
}

// x (..., in) x w (in, out) + b(out)
inline Var linear(const Var& x, const Var& w, const Var& b = Var()) {
  const std::int64_t in = w.dim(0);
  const std::int64_t out = w.dim(1);
  if (x.dim(-1) != in) {
    throw ArgumentError(detail::str("linear: input width ", x.dim(-1),
                                    " vs weight ", shape_str(w.shape())));
  }
  Shape os = x.shape();
  os.back() = out;
  const std::int64_t rows = x.value().numel() / in;
  Var flat = reshape(x, {rows, in});
  Var y = matmul(flat, w);
  if (b.defined()) y = add(y, b);
  return reshape(y, std::move(os));
}

// ---------------------------------------------------------------------------
// softmax family (last axis, numerically shifted)

inline Var softmax_last(const Var& a) {
  const std::int64_t d = a.dim(-1);
  const std::int64_t rows = a.value().numel() / d;
  Tensor out = a.value();
  double* p = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double* row = p + r * d;
    double mx = row[0];
    for (std::int64_t i = 1; i < d; ++i) mx = std::max(mx, row[i]);
    double s = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
      row[i] = std::exp(row[i] - mx);
      s += row[i];
    }
    for (std::int64_t i = 0; i < d; ++i) row[i] /= s;
  }
  return detail::make_op(std::move(out), {a}, [d](Node& n) {
    const std::int64_t rows2 = n.value.numel() / d;
    Tensor g(n.value.shape());
    const double* py = n.value.data();
    const double* pg = n.grad.data();
    double* po = g.data();
    for (std::int64_t r = 0; r < rows2; ++r) {
      const double* y = py + r * d;
      const double* gr = pg + r * d;
      double dot = 0.0;
      for (std::int64_t i = 0; i < d; ++i) dot += gr[i] * y[i];
      double* o = po + r * d;
      for (std::int64_t i = 0; i < d; ++i) o[i] = y[i] * (gr[i] - dot);
    }
    detail::accum(n.inputs[0], g);
  });
}

inline Var log_softmax_last(const Var& a) {
  const std::int64_t d = a.dim(-1);
  const std::int64_t rows = a.value().numel() / d;
  Tensor out = a.value();
  double* p = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double* row = p + r * d;
    double mx = row[0];
    for (std::int64_t i = 1; i < d; ++i) mx = std::max(mx, row[i]);
    double s = 0.0;
    for (std::int64_t i = 0; i < d; ++i) s += std::exp(row[i] - mx);
    const double lse = mx + std::log(s);
    for (std::int64_t i = 0; i < d; ++i) row[i] -= lse;
  }
  return detail::make_op(std::move(out), {a}, [d](Node& n) {
    const std::int64_t rows2 = n.value.numel() / d;
    Tensor g(n.value.shape());
    const double* py = n.value.data();  // log-probs
    const double* pg = n.grad.data();
    double* po = g.data();
    for (std::int64_t r = 0; r < rows2; ++r) {
      const double* y = py + r * d;
      const double* gr = pg + r * d;
      double gsum = 0.0;
      for (std::int64_t i = 0; i < d; ++i) gsum += gr[i];
      double* o = po + r * d;
      for (std::int64_t i = 0; i < d; ++i) o[i] = gr[i] - std::exp(y[i]) * gsum;
    }
    detail::accum(n.inputs[0], g);
  });
}

// ---------------------------------------------------------------------------
// 1-D convolutions along the last axis (zero padding)

namespace detail {

inline std::int64_t conv_out_len(std::int64_t L, std::int64_t k, std::int64_t s,
                                 std::int64_t p) {
  const std::int64_t lo = (L + 2 * p - k) / s + 1;
  if (k < 1 || s < 1 || p < 0 || lo < 1) {
    throw ArgumentError(detail::str("invalid conv geometry: L=", L, " k=", k,
                                    " stride=", s, " pad=", p));
  }
  return lo;
}

}  // namespace detail

// x (B,C,L), w (C,K), b (C) optional; each channel has its own filter.
inline Var conv1d_depthwise(const Var& x, const Var& w, const Var& b,
                            std::int64_t stride, std::int64_t pad) {
  if (x.rank() != 3 || w.rank() != 2 || x.dim(1) != w.dim(0)) {
    throw ArgumentError(detail::str("conv1d_depthwise: x ", shape_str(x.shape()),
                                    " w ", shape_str(w.shape())));
  }
  const std::int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2), K = w.dim(1);
  const std::int64_t Lo = detail::conv_out_len(L, K, stride, pad);
  Tensor out({B, C, Lo});
  const double* px = x.value().data();
  const double* pw = w.value().data();
  const double* pb = b.defined() ? b.value().data() : nullptr;
  double* po = out.data();
  for (std::int64_t bi = 0; bi < B; ++bi)
    for (std::int64_t c = 0; c < C; ++c) {
      const double* xr = px + (bi * C + c) * L;
      const double* wr = pw + c * K;
      double* orow = po + (bi * C + c) * Lo;
      const double bias = pb ? pb[c] : 0.0;
      for (std::int64_t o = 0; o < Lo; ++o) {
        double acc = bias;
        const std::int64_t base = o * stride - pad;
        for (std::int64_t k = 0; k < K; ++k) {
          const std::int64_t i = base + k;
          if (i >= 0 && i < L) acc += wr[k] * xr[i];
        }
        orow[o] = acc;
      }
    }
  std::vector<Var> inputs = b.defined() ? std::vector<Var>{x, w, b}
                                        : std::vector<Var>{x, w};
  return detail::make_op(std::move(out), std::move(inputs),
                         [stride, pad](Node& n) {
    const auto& xin = n.inputs[0];
    const auto& win = n.inputs[1];
    const std::int64_t B = xin->value.dim(0), C = xin->value.dim(1),
                       L = xin->value.dim(2), K = win->value.dim(1),
                       Lo = n.value.dim(2);
    const double* pg = n.grad.data();
    const double* px = xin->value.data();
    const double* pw = win->value.data();
    Tensor gx = xin->requires_grad ? Tensor(xin->value.shape()) : Tensor();
    Tensor gw = win->requires_grad ? Tensor(win->value.shape()) : Tensor();
    for (std::int64_t bi = 0; bi < B; ++bi)
      for (std::int64_t c = 0; c < C; ++c) {
        const double* grow = pg + (bi * C + c) * Lo;
        const double* xr = px + (bi * C + c) * L;
        const double* wr = pw + c * K;
        for (std::int64_t o = 0; o < Lo; ++o) {
          const double g = grow[o];
          if (g == 0.0) continue;
          const std::int64_t base = o * stride - pad;
          for (std::int64_t k = 0; k < K; ++k) {
            const std::int64_t i = base + k;
            if (i < 0 || i >= L) continue;
            if (gx.defined()) gx.data()[(bi * C + c) * L + i] += g * wr[k];
            if (gw.defined()) gw.data()[c * K + k] += g * xr[i];
          }
        }
      }
    if (gx.defined()) detail::accum(xin, gx);
    if (gw.defined()) detail::accum(win, gw);
    if (n.inputs.size() > 2 && n.inputs[2]->requires_grad) {
      Tensor gb(n.inputs[2]->value.shape());
      for (std::int64_t bi = 0; bi < B; ++bi)
        for (std::int64_t c = 0; c < C; ++c) {
          const double* grow = pg + (bi * C + c) * Lo;
          double s = 0.0;
          for (std::int64_t o = 0; o < Lo; ++o) s += grow[o];
          gb.data()[c] += s;
        }
      detail::accum(n.inputs[2], gb);
    }
  });
}

// x (B,Cin,L), w (Cout,Cin,K), b (Cout) optional.
inline Var conv1d(const Var& x, const Var& w, const Var& b, std::int64_t stride,
                  std::int64_t pad) {
  if (x.rank() != 3 || w.rank() != 3 || x.dim(1) != w.dim(1)) {
    throw ArgumentError(detail::str("conv1d: x ", shape_str(x.shape()), " w ",
                                    shape_str(w.shape())));
  }
  const std::int64_t B = x.dim(0), Ci = x.dim(1), L = x.dim(2);
  const std::int64_t Co = w.dim(0), K = w.dim(2);
  const std::int64_t Lo = detail::conv_out_len(L, K, stride, pad);
  Tensor out({B, Co, Lo});
  const double* px = x.value().data();
  const double* pw = w.value().data();
  const double* pb = b.defined() ? b.value().data() : nullptr;
  double* po = out.data();
  for (std::int64_t bi = 0; bi < B; ++bi)
    for (std::int64_t co = 0; co < Co; ++co) {
      double* orow = po + (bi * Co + co) * Lo;
      if (pb) {
        for (std::int64_t o = 0; o < Lo; ++o) orow[o] = pb[co];
      }
      for (std::int64_t ci = 0; ci < Ci; ++ci) {
        const double* xr = px + (bi * Ci + ci) * L;
        const double* wr = pw + (co * Ci + ci) * K;
        for (std::int64_t o = 0; o < Lo; ++o) {
          double acc = 0.0;
          const std::int64_t base = o * stride - pad;
          for (std::int64_t k = 0; k < K; ++k) {
            const std::int64_t i = base + k;
            if (i >= 0 && i < L) acc += wr[k] * xr[i];
          }
          orow[o] += acc;
        }
      }
    }
  std::vector<Var> inputs = b.defined() ? std::vector<Var>{x, w, b}
                                        : std::vector<Var>{x, w};
  return detail::make_op(std::move(out), std::move(inputs),
                         [stride, pad](Node& n) {
    const auto& xin = n.inputs[0];
    const auto& win = n.inputs[1];
    const std::int64_t B = xin->value.dim(0), Ci = xin->value.dim(1),
                       L = xin->value.dim(2), Co = win->value.dim(0),
                       K = win->value.dim(2), Lo = n.value.dim(2);
    const double* pg = n.grad.data();
    const double* px = xin->value.data();
    const double* pw = win->value.data();
    Tensor gx = xin->requires_grad ? Tensor(xin->value.shape()) : Tensor();
    Tensor gw = win->requires_grad ? Tensor(win->value.shape()) : Tensor();
    for (std::int64_t bi = 0; bi < B; ++bi)
      for (std::int64_t co = 0; co < Co; ++co) {
        const double* grow = pg + (bi * Co + co) * Lo;
        for (std::int64_t ci = 0; ci < Ci; ++ci) {
          const double* xr = px + (bi * Ci + ci) * L;
          const double* wr = pw + (co * Ci + ci) * K;
          for (std::int64_t o = 0; o < Lo; ++o) {
            const double g = grow[o];
            if (g == 0.0) continue;
            const std::int64_t base = o * stride - pad;
            for (std::int64_t k = 0; k < K; ++k) {
              const std::int64_t i = base + k;
              if (i < 0 || i >= L) continue;
              if (gx.defined()) gx.data()[(bi * Ci + ci) * L + i] += g * wr[k];
              if (gw.defined()) gw.data()[(co * Ci + ci) * K + k] += g * xr[i];
            }
          }
        }
      }
    if (gx.defined()) detail::accum(xin, gx);
    if (gw.defined()) detail::accum(win, gw);
    if (n.inputs.size() > 2 && n.inputs[2]->requires_grad) {
      Tensor gb(n.inputs[2]->value.shape());
      for (std::int64_t bi = 0; bi < B; ++bi)
        for (std::int64_t co = 0; co < Co; ++co) {
          const double* grow = pg + (bi * Co + co) * Lo;
          double s = 0.0;
          for (std::int64_t o = 0; o < Lo; ++o) s += grow[o];
          gb.data()[co] += s;
        }
      detail::accum(n.inputs[2], gb);
    }
  });
}

// Convolution along the channel axis (axis 1 of B,C,L) with one shared
// length-k filter, same padding; electrode-neighborhood mixing.
inline Var conv_channel_axis(const Var& x, const Var& w, const Var& b) {
  if (x.rank() != 3 || w.rank() != 1)
    throw ArgumentError("conv_channel_axis: expects x (B,C,L), w (K)");
  const std::int64_t K = w.dim(0);
  if (K % 2 == 0) throw ArgumentError("conv_channel_axis: kernel must be odd");
  const std::int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  // reshape channel axis into the conv axis: (B,C,L) -> (B*L, 1, C)
  Var t = permute(x, {0, 2, 1});          // (B,L,C)
  t = reshape(t, {B * L, 1, C});
  Var w3 = reshape(w, {1, 1, K});
  Var y = conv1d(t, w3, b, 1, (K - 1) / 2);  // (B*L,1,C)
  y = reshape(y, {B, L, C});
  return permute(y, {0, 2, 1});
}

// ---------------------------------------------------------------------------
// pooling along the last axis

inline Var avg_pool1d(const Var& x, std::int64_t k, std::int64_t stride) {
  if (x.rank() != 3) throw ArgumentError("avg_pool1d expects (B,C,L)");
  const std::int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  const std::int64_t Lo = detail::conv_out_len(L, k, stride, 0);
  Tensor out({B, C, Lo});
  const double* px = x.value().data();
  double* po = out.data();
  const double inv = 1.0 / static_cast<double>(k);
  for (std::int64_t r = 0; r < B * C; ++r)
    for (std::int64_t o = 0; o < Lo; ++o) {
      double s = 0.0;
      for (std::int64_t j = 0; j < k; ++j) s += px[r * L + o * stride + j];
      po[r * Lo + o] = s * inv;
    }
  return detail::make_op(std::move(out), {x}, [k, stride](Node& n) {
    const auto& xin = n.inputs[0];
    const std::int64_t L = xin->value.dim(2), Lo = n.value.dim(2);
    const std::int64_t rows = n.value.dim(0) * n.value.dim(1);
    Tensor g(xin->value.shape());
    const double inv = 1.0 / static_cast<double>(k);
    const double* pg = n.grad.data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t o = 0; o < Lo; ++o) {
        const double gv = pg[r * Lo + o] * inv;
        for (std::int64_t j = 0; j < k; ++j) g.data()[r * L + o * stride + j] += gv;
      }
    detail::accum(xin, g);
  });
}

// Adaptive average pooling to a fixed output width (bins may overlap when
// upsampling, matching the usual floor/ceil bin rule).
inline Var adaptive_avg_pool1d(const Var& x, std::int64_t out_w) {
  if (x.rank() != 3) throw ArgumentError("adaptive_avg_pool1d expects (B,C,L)");
  if (out_w < 1) throw ArgumentError("adaptive_avg_pool1d: out_w < 1");
  const std::int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  Tensor out({B, C, out_w});
  const double* px = x.value().data();
  double* po = out.data();
  for (std::int64_t r = 0; r < B * C; ++r)
    for (std::int64_t o = 0; o < out_w; ++o) {
      const std::int64_t s = (o * L) / out_w;
      const std::int64_t e = ((o + 1) * L + out_w - 1) / out_w;
      double acc = 0.0;
      for (std::int64_t i = s; i < e; ++i) acc += px[r * L + i];
      po[r * out_w + o] = acc / static_cast<double>(e - s);
    }
  return detail::make_op(std::move(out), {x}, [out_w](Node& n) {
    const auto& xin = n.inputs[0];
    const std::int64_t L = xin->value.dim(2);
    const std::int64_t rows = n.value.dim(0) * n.value.dim(1);
    Tensor g(xin->value.shape());
    const double* pg = n.grad.data();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t o = 0; o < out_w; ++o) {
        const std::int64_t s = (o * L) / out_w;
        const std::int64_t e = ((o + 1) * L + out_w - 1) / out_w;
        const double gv = pg[r * out_w + o] / static_cast<double>(e - s);
        for (std::int64_t i = s; i < e; ++i) g.data()[r * L + i] += gv;
      }
    detail::accum(xin, g);
  });
}

// ---------------------------------------------------------------------------
// composites

// Row-wise L2 normalization over the last axis.
inline Var l2_normalize(const Var& x, double eps = 1e-12) {
  Var sq = sum_axis(mul(x, x), -1);
  Var norm = sqrt_(add_scalar(sq, eps * eps));
  return div(x, norm);
}

inline Var mean_squared_error(const Var& a, const Var& b) {
  return mean_all(square(sub(a, b)));
}

}  // namespace eegdwt::ag
