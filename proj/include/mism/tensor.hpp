#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace mism {

[[noreturn]] inline void fail(const std::string& msg) { throw std::runtime_error(msg); }

#define MISM_CHECK(cond, msg)                                  \
  do {                                                         \
    if (!(cond)) ::mism::fail(std::string("mism: ") + (msg));  \
  } while (0)

using Index = Eigen::Index;

/// Dense row-major shape, rank <= 5, last dimension fastest.
class Shape {
 public:
  static constexpr int kMaxRank = 5;

  Shape() = default;
  Shape(std::initializer_list<Index> d) {
    MISM_CHECK(static_cast<int>(d.size()) <= kMaxRank, "shape rank > 5");
    for (Index v : d) dims_[rank_++] = v;
  }

  int rank() const { return rank_; }
  Index operator[](int i) const { return dims_[static_cast<size_t>(i)]; }
  Index numel() const {
    Index n = 1;
    for (int i = 0; i < rank_; ++i) n *= dims_[static_cast<size_t>(i)];
    return n;
  }
  bool operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    for (int i = 0; i < rank_; ++i)
      if (dims_[static_cast<size_t>(i)] != o.dims_[static_cast<size_t>(i)]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::ostringstream os;
    os << "(";
    for (int i = 0; i < rank_; ++i) os << dims_[static_cast<size_t>(i)] << (i + 1 < rank_ ? "," : "");
    os << ")";
    return os.str();
  }

 private:
  std::array<Index, kMaxRank> dims_{};
  int rank_ = 0;
};

template <typename S>
using Vec = Eigen::Array<S, Eigen::Dynamic, 1>;

template <typename S>
struct TensorNode {
  Shape shape;
  Vec<S> values;
  Vec<S> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<S>>> parents;
  std::function<void(TensorNode<S>&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != values.size()) grad = Vec<S>::Zero(values.size());
  }
};

/// Reverse-mode autodiff tensor. Copy is shallow (shares the node);
/// ops build a DAG, backward() runs the tape in reverse topological order.
template <typename S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<S>> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape s) { return filled(s, S(0)); }
  static Tensor ones(Shape s) { return filled(s, S(1)); }
  static Tensor filled(Shape s, S v) {
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = s;
    n->values = Vec<S>::Constant(s.numel(), v);
    return Tensor(std::move(n));
  }
  static Tensor from(Shape s, std::initializer_list<S> v) {
    return from(s, std::vector<S>(v));
  }
  static Tensor from(Shape s, const std::vector<S>& v) {
    MISM_CHECK(static_cast<Index>(v.size()) == s.numel(), "from(): size mismatch " + s.str());
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = s;
    n->values = Eigen::Map<const Vec<S>>(v.data(), static_cast<Index>(v.size()));
    return Tensor(std::move(n));
  }
  static Tensor from(Shape s, Vec<S> v) {
    MISM_CHECK(v.size() == s.numel(), "from(): size mismatch " + s.str());
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = s;
    n->values = std::move(v);
    return Tensor(std::move(n));
  }
  static Tensor scalar(S v) { return filled(Shape{1}, v); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index numel() const { return node_->values.size(); }
  int rank() const { return node_->shape.rank(); }
  Index dim(int i) const { return node_->shape[i]; }

  const Vec<S>& values() const { return node_->values; }
  /// Mutable access; only meaningful on leaves (parameters, buffers).
  Vec<S>& values() { return node_->values; }

  S value() const {
    MISM_CHECK(numel() == 1, "value(): tensor is not scalar");
    return node_->values[0];
  }
  S at(Index i) const { return node_->values[i]; }
  S at(Index i, Index j) const { return node_->values[i * shape()[1] + j]; }
  S at(Index i, Index j, Index k) const {
    return node_->values[(i * shape()[1] + j) * shape()[2] + k];
  }
  S at(Index i, Index j, Index k, Index l) const {
    return node_->values[((i * shape()[1] + j) * shape()[2] + k) * shape()[3] + l];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b = true) {
    node_->requires_grad = b;
    return *this;
  }
  const Vec<S>& grad() const { return node_->grad; }
  void zero_grad() {
    if (node_->grad.size()) node_->grad.setZero();
  }

  /// Value copy cut off from the graph.
  Tensor detach() const {
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = node_->shape;
    n->values = node_->values;
    return Tensor(std::move(n));
  }

  std::shared_ptr<TensorNode<S>> node() const { return node_; }

  /// Backpropagate from this tensor. Seed is 1 for scalars, ones otherwise.
  void backward() const {
    node_->ensure_grad();
    node_->grad.setOnes();
    std::vector<TensorNode<S>*> order;
    topo_sort(node_.get(), order);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorNode<S>* n = *it;
      if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
    }
  }

 private:
  static void topo_sort(TensorNode<S>* root, std::vector<TensorNode<S>*>& out) {
    std::unordered_set<TensorNode<S>*> seen;
    // iterative post-order DFS; graph depth can exceed stack limits
    std::vector<std::pair<TensorNode<S>*, size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        TensorNode<S>* p = n->parents[idx++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        out.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<TensorNode<S>> node_;
};

namespace detail {

template <typename S>
std::shared_ptr<TensorNode<S>> make_node(Shape s, const std::vector<Tensor<S>>& parents) {
  auto n = std::make_shared<TensorNode<S>>();
  n->shape = s;
  n->values.resize(s.numel());
  for (const auto& p : parents) {
    n->parents.push_back(p.node());
    n->requires_grad = n->requires_grad || p.requires_grad();
  }
  return n;
}

template <typename S>
void accum(TensorNode<S>& n, const Vec<S>& g) {
  n.ensure_grad();
  n.grad += g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops with numpy-style broadcasting (equal rank; any dim may be 1
// on either side). The same-shape fast path stays fully vectorized.
// ---------------------------------------------------------------------------

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  MISM_CHECK(a.rank() == b.rank(), "broadcast: rank mismatch " + a.str() + " vs " + b.str());
  Shape out;
  std::initializer_list<Index> dummy{};
  (void)dummy;
  std::array<Index, Shape::kMaxRank> d{};
  for (int i = 0; i < a.rank(); ++i) {
    MISM_CHECK(a[i] == b[i] || a[i] == 1 || b[i] == 1,
               "broadcast: incompatible " + a.str() + " vs " + b.str());
    d[static_cast<size_t>(i)] = std::max(a[i], b[i]);
  }
  switch (a.rank()) {
    case 0: return Shape{};
    case 1: return Shape{d[0]};
    case 2: return Shape{d[0], d[1]};
    case 3: return Shape{d[0], d[1], d[2]};
    case 4: return Shape{d[0], d[1], d[2], d[3]};
    default: return Shape{d[0], d[1], d[2], d[3], d[4]};
  }
}

// strides for iterating `s` as broadcast against `out` (0 on broadcast axes)
inline std::array<Index, Shape::kMaxRank> broadcast_strides(const Shape& s, const Shape& out) {
  std::array<Index, Shape::kMaxRank> st{};
  Index acc = 1;
  for (int i = s.rank() - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = (s[i] == 1 && out[i] != 1) ? 0 : acc;
    acc *= s[i];
  }
  return st;
}

template <typename S, typename F>
void broadcast_apply(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
  auto st_a = broadcast_strides(sa, out);
  auto stb = broadcast_strides(sb, out);
  std::array<Index, Shape::kMaxRank> dim{};
  int r = out.rank();
  for (int i = 0; i < r; ++i) dim[static_cast<size_t>(i)] = out[i];
  for (int i = r; i < Shape::kMaxRank; ++i) dim[static_cast<size_t>(i)] = 1;
  // pad missing leading dims with extent 1 so we can always loop rank 5
  std::array<Index, Shape::kMaxRank> pa{}, pb{}, pd{};
  for (int i = 0; i < Shape::kMaxRank; ++i) {
    pa[static_cast<size_t>(i)] = (i < r) ? st_a[static_cast<size_t>(i)] : 0;
    pb[static_cast<size_t>(i)] = (i < r) ? stb[static_cast<size_t>(i)] : 0;
    pd[static_cast<size_t>(i)] = dim[static_cast<size_t>(i)];
  }
  Index o = 0;
  for (Index i0 = 0; i0 < pd[0]; ++i0)
    for (Index i1 = 0; i1 < pd[1]; ++i1)
      for (Index i2 = 0; i2 < pd[2]; ++i2)
        for (Index i3 = 0; i3 < pd[3]; ++i3)
          for (Index i4 = 0; i4 < pd[4]; ++i4) {
            Index ia = i0 * pa[0] + i1 * pa[1] + i2 * pa[2] + i3 * pa[3] + i4 * pa[4];
            Index ib = i0 * pb[0] + i1 * pb[1] + i2 * pb[2] + i3 * pb[3] + i4 * pb[4];
            f(o++, ia, ib);
          }
}

// reduce `g` (laid out as `out`) into a buffer shaped `s`
template <typename S>
Vec<S> reduce_to(const Vec<S>& g, const Shape& out, const Shape& s) {
  if (s == out) return g;
  Vec<S> r = Vec<S>::Zero(s.numel());
  broadcast_apply<S>(out, s, s, [&](Index o, Index ia, Index) { r[ia] += g[o]; });
  return r;
}

template <typename S, typename FwdSame, typename FwdBcast, typename Bwd>
Tensor<S> binary_op(const Tensor<S>& a, const Tensor<S>& b, FwdSame&& fwd_same,
                    FwdBcast&& fwd_bcast, Bwd&& bwd) {
  const bool same = a.shape() == b.shape();
  Shape out_shape = same ? a.shape() : broadcast_shape(a.shape(), b.shape());
  auto n = make_node<S>(out_shape, {a, b});
  if (same) {
    fwd_same(n->values, a.values(), b.values());
  } else {
    broadcast_apply<S>(out_shape, a.shape(), b.shape(),
                       [&](Index o, Index ia, Index ib) { n->values[o] = fwd_bcast(a.values()[ia], b.values()[ib]); });
  }
  if (n->requires_grad) {
    auto an = a.node(), bn = b.node();
    Shape os = out_shape, as = a.shape(), bs = b.shape();
    n->backward_fn = [an, bn, os, as, bs, bwd](TensorNode<S>& self) {
      Vec<S> ga = Vec<S>::Zero(os.numel());
      Vec<S> gb = Vec<S>::Zero(os.numel());
      if (as == bs) {
        for (Index i = 0; i < self.grad.size(); ++i)
          bwd(self.grad[i], an->values[i], bn->values[i], self.values[i], ga[i], gb[i]);
      } else {
        broadcast_apply<S>(os, as, bs, [&](Index o, Index ia, Index ib) {
          S da = 0, db = 0;
          bwd(self.grad[o], an->values[ia], bn->values[ib], self.values[o], da, db);
          ga[o] = da;
          gb[o] = db;
        });
      }
      if (an->requires_grad) accum(*an, reduce_to<S>(ga, os, as));
      if (bn->requires_grad) accum(*bn, reduce_to<S>(gb, os, bs));
    };
  }
  return Tensor<S>(std::move(n));
}

}  // namespace detail

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op<S>(
      a, b, [](Vec<S>& o, const Vec<S>& x, const Vec<S>& y) { o = x + y; },
      [](S x, S y) { return x + y; },
      [](S g, S, S, S, S& da, S& db) {
        da = g;
        db = g;
      });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op<S>(
      a, b, [](Vec<S>& o, const Vec<S>& x, const Vec<S>& y) { o = x - y; },
      [](S x, S y) { return x - y; },
      [](S g, S, S, S, S& da, S& db) {
        da = g;
        db = -g;
      });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op<S>(
      a, b, [](Vec<S>& o, const Vec<S>& x, const Vec<S>& y) { o = x * y; },
      [](S x, S y) { return x * y; },
      [](S g, S x, S y, S, S& da, S& db) {
        da = g * y;
        db = g * x;
      });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op<S>(
      a, b, [](Vec<S>& o, const Vec<S>& x, const Vec<S>& y) { o = x / y; },
      [](S x, S y) { return x / y; },
      [](S g, S, S y, S out, S& da, S& db) {
        da = g / y;
        db = -g * out / y;
      });
}

/// Elementwise max; ties route the gradient to the first argument.
template <typename S>
Tensor<S> maximum(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op<S>(
      a, b, [](Vec<S>& o, const Vec<S>& x, const Vec<S>& y) { o = x.max(y); },
      [](S x, S y) { return std::max(x, y); },
      [](S g, S x, S y, S, S& da, S& db) {
        if (x >= y) da = g; else db = g;
      });
}

/// Elementwise min; ties route the gradient to the first argument.
template <typename S>
Tensor<S> minimum(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::binary_op<S>(
      a, b, [](Vec<S>& o, const Vec<S>& x, const Vec<S>& y) { o = x.min(y); },
      [](S x, S y) { return std::min(x, y); },
      [](S g, S x, S y, S, S& da, S& db) {
        if (x <= y) da = g; else db = g;
      });
}

namespace detail {

template <typename S, typename Fwd, typename Bwd>
Tensor<S> unary_op(const Tensor<S>& a, Fwd&& fwd, Bwd&& bwd) {
  auto n = make_node<S>(a.shape(), {a});
  fwd(n->values, a.values());
  if (n->requires_grad) {
    auto an = a.node();
    n->backward_fn = [an, bwd](TensorNode<S>& self) {
      Vec<S> g(self.grad.size());
      for (Index i = 0; i < g.size(); ++i) g[i] = bwd(self.grad[i], an->values[i], self.values[i]);
      accum(*an, g);
    };
  }
  return Tensor<S>(std::move(n));
}

}  // namespace detail

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
  return detail::unary_op<S>(a, [](Vec<S>& o, const Vec<S>& x) { o = -x; },
                             [](S g, S, S) { return -g; });
}
template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
  return detail::unary_op<S>(a, [](Vec<S>& o, const Vec<S>& x) { o = x.exp(); },
                             [](S g, S, S out) { return g * out; });
}
template <typename S>
Tensor<S> log(const Tensor<S>& a) {
  return detail::unary_op<S>(a, [](Vec<S>& o, const Vec<S>& x) { o = x.log(); },
                             [](S g, S x, S) { return g / x; });
}
template <typename S>
Tensor<S> sqrt(const Tensor<S>& a) {
  return detail::unary_op<S>(a, [](Vec<S>& o, const Vec<S>& x) { o = x.sqrt(); },
                             [](S g, S, S out) { return g / (S(2) * out); });
}
template <typename S>
Tensor<S> square(const Tensor<S>& a) {
  return detail::unary_op<S>(a, [](Vec<S>& o, const Vec<S>& x) { o = x.square(); },
                             [](S g, S x, S) { return S(2) * g * x; });
}
/// |x| with subgradient 0 at x == 0.
template <typename S>
Tensor<S> abs(const Tensor<S>& a) {
  return detail::unary_op<S>(a, [](Vec<S>& o, const Vec<S>& x) { o = x.abs(); },
                             [](S g, S x, S) { return x > S(0) ? g : (x < S(0) ? -g : S(0)); });
}
template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  return detail::unary_op<S>(a, [](Vec<S>& o, const Vec<S>& x) { o = S(1) / (S(1) + (-x).exp()); },
                             [](S g, S, S out) { return g * out * (S(1) - out); });
}
template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  return detail::unary_op<S>(a, [](Vec<S>& o, const Vec<S>& x) { o = x.max(S(0)); },
                             [](S g, S x, S) { return x > S(0) ? g : S(0); });
}
template <typename S>
Tensor<S> elu(const Tensor<S>& a) {
  return detail::unary_op<S>(
      a, [](Vec<S>& o, const Vec<S>& x) { o = (x > S(0)).select(x, x.exp() - S(1)); },
      [](S g, S x, S out) { return x > S(0) ? g : g * (out + S(1)); });
}
template <typename S>
Tensor<S> sin(const Tensor<S>& a) {
  return detail::unary_op<S>(a, [](Vec<S>& o, const Vec<S>& x) { o = x.sin(); },
                             [](S g, S x, S) { return g * std::cos(x); });
}
template <typename S>
Tensor<S> cos(const Tensor<S>& a) {
  return detail::unary_op<S>(a, [](Vec<S>& o, const Vec<S>& x) { o = x.cos(); },
                             [](S g, S x, S) { return -g * std::sin(x); });
}
template <typename S>
Tensor<S> clamp_min(const Tensor<S>& a, S lo) {
  return detail::unary_op<S>(a, [lo](Vec<S>& o, const Vec<S>& x) { o = x.max(lo); },
                             [lo](S g, S x, S) { return x >= lo ? g : S(0); });
}
template <typename S>
Tensor<S> clamp(const Tensor<S>& a, S lo, S hi) {
  return detail::unary_op<S>(a, [lo, hi](Vec<S>& o, const Vec<S>& x) { o = x.max(lo).min(hi); },
                             [lo, hi](S g, S x, S) { return (x >= lo && x <= hi) ? g : S(0); });
}

// scalar right-hand forms
template <typename S>
Tensor<S> add(const Tensor<S>& a, S c) {
  return detail::unary_op<S>(a, [c](Vec<S>& o, const Vec<S>& x) { o = x + c; },
                             [](S g, S, S) { return g; });
}
template <typename S>
Tensor<S> mul(const Tensor<S>& a, S c) {
  return detail::unary_op<S>(a, [c](Vec<S>& o, const Vec<S>& x) { o = x * c; },
                             [c](S g, S, S) { return g * c; });
}
template <typename S>
Tensor<S> sub(const Tensor<S>& a, S c) { return add(a, -c); }
template <typename S>
Tensor<S> rsub(S c, const Tensor<S>& a) {
  return detail::unary_op<S>(a, [c](Vec<S>& o, const Vec<S>& x) { o = c - x; },
                             [](S g, S, S) { return -g; });
}
template <typename S>
Tensor<S> div(const Tensor<S>& a, S c) { return mul(a, S(1) / c); }
template <typename S>
Tensor<S> rdiv(S c, const Tensor<S>& a) {
  return detail::unary_op<S>(a, [c](Vec<S>& o, const Vec<S>& x) { o = c / x; },
                             [](S g, S x, S out) { return -g * out / x; });
}

// operator sugar
template <typename S> Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S> Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <typename S> Tensor<S> operator/(const Tensor<S>& a, const Tensor<S>& b) { return div(a, b); }
template <typename S> Tensor<S> operator+(const Tensor<S>& a, S c) { return add(a, c); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a, S c) { return sub(a, c); }
template <typename S> Tensor<S> operator*(const Tensor<S>& a, S c) { return mul(a, c); }
template <typename S> Tensor<S> operator/(const Tensor<S>& a, S c) { return div(a, c); }
template <typename S> Tensor<S> operator+(S c, const Tensor<S>& a) { return add(a, c); }
template <typename S> Tensor<S> operator-(S c, const Tensor<S>& a) { return rsub(c, a); }
template <typename S> Tensor<S> operator*(S c, const Tensor<S>& a) { return mul(a, c); }
template <typename S> Tensor<S> operator/(S c, const Tensor<S>& a) { return rdiv(c, a); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Reductions, reshape, slicing, concat
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  auto n = detail::make_node<S>(Shape{1}, {a});
  n->values[0] = a.values().sum();
  if (n->requires_grad) {
    auto an = a.node();
    n->backward_fn = [an](TensorNode<S>& self) {
      detail::accum(*an, Vec<S>::Constant(an->values.size(), self.grad[0]).eval());
    };
  }
  return Tensor<S>(std::move(n));
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  return sum(a) * (S(1) / static_cast<S>(a.numel()));
}

/// Sum over one axis, keeping it with extent 1 (broadcast-friendly).
template <typename S>
Tensor<S> sum_axis(const Tensor<S>& a, int axis) {
  const Shape& s = a.shape();
  MISM_CHECK(axis >= 0 && axis < s.rank(), "sum_axis: bad axis");
  std::array<Index, Shape::kMaxRank> d{};
  for (int i = 0; i < s.rank(); ++i) d[static_cast<size_t>(i)] = (i == axis) ? 1 : s[i];
  Shape out;
  switch (s.rank()) {
    case 1: out = Shape{d[0]}; break;
    case 2: out = Shape{d[0], d[1]}; break;
    case 3: out = Shape{d[0], d[1], d[2]}; break;
    case 4: out = Shape{d[0], d[1], d[2], d[3]}; break;
    default: out = Shape{d[0], d[1], d[2], d[3], d[4]}; break;
  }
  Index outer = 1, mid = s[axis], inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < s.rank(); ++i) inner *= s[i];

  auto n = detail::make_node<S>(out, {a});
  n->values.setZero();
  const auto& x = a.values();
  for (Index o = 0; o < outer; ++o)
    for (Index m = 0; m < mid; ++m) {
      const Index src = (o * mid + m) * inner;
      const Index dst = o * inner;
      n->values.segment(dst, inner) += x.segment(src, inner);
    }
  if (n->requires_grad) {
    auto an = a.node();
    n->backward_fn = [an, outer, mid, inner](TensorNode<S>& self) {
      Vec<S> g = Vec<S>::Zero(an->values.size());
      for (Index o = 0; o < outer; ++o)
        for (Index m = 0; m < mid; ++m)
          g.segment((o * mid + m) * inner, inner) = self.grad.segment(o * inner, inner);
      detail::accum(*an, g);
    };
  }
  return Tensor<S>(std::move(n));
}

template <typename S>
Tensor<S> mean_axis(const Tensor<S>& a, int axis) {
  return sum_axis(a, axis) * (S(1) / static_cast<S>(a.shape()[axis]));
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape s) {
  MISM_CHECK(s.numel() == a.numel(), "reshape: numel mismatch " + a.shape().str() + " -> " + s.str());
  auto n = detail::make_node<S>(s, {a});
  n->values = a.values();
  if (n->requires_grad) {
    auto an = a.node();
    n->backward_fn = [an](TensorNode<S>& self) { detail::accum(*an, self.grad); };
  }
  return Tensor<S>(std::move(n));
}

/// Contiguous slice along dim 0.
template <typename S>
Tensor<S> slice0(const Tensor<S>& a, Index start, Index len) {
  const Shape& s = a.shape();
  MISM_CHECK(start >= 0 && start + len <= s[0], "slice0: out of range");
  std::array<Index, Shape::kMaxRank> d{};
  for (int i = 0; i < s.rank(); ++i) d[static_cast<size_t>(i)] = s[i];
  d[0] = len;
  Shape out;
  switch (s.rank()) {
    case 1: out = Shape{d[0]}; break;
    case 2: out = Shape{d[0], d[1]}; break;
    case 3: out = Shape{d[0], d[1], d[2]}; break;
    case 4: out = Shape{d[0], d[1], d[2], d[3]}; break;
    default: out = Shape{d[0], d[1], d[2], d[3], d[4]}; break;
  }
  Index row = a.numel() / s[0];
  auto n = detail::make_node<S>(out, {a});
  n->values = a.values().segment(start * row, len * row);
  if (n->requires_grad) {
    auto an = a.node();
    n->backward_fn = [an, start, row](TensorNode<S>& self) {
      an->ensure_grad();
      an->grad.segment(start * row, self.grad.size()) += self.grad;
    };
  }
  return Tensor<S>(std::move(n));
}

/// Concatenate along dim 0; all trailing dims must agree.
template <typename S>
Tensor<S> concat0(const std::vector<Tensor<S>>& parts) {
  MISM_CHECK(!parts.empty(), "concat0: empty list");
  const Shape& s0 = parts[0].shape();
  Index total = 0;
  for (const auto& p : parts) {
    MISM_CHECK(p.rank() == s0.rank(), "concat0: rank mismatch");
    for (int i = 1; i < s0.rank(); ++i) MISM_CHECK(p.shape()[i] == s0[i], "concat0: dim mismatch");
    total += p.shape()[0];
  }
  std::array<Index, Shape::kMaxRank> d{};
  for (int i = 0; i < s0.rank(); ++i) d[static_cast<size_t>(i)] = s0[i];
  d[0] = total;
  Shape out;
  switch (s0.rank()) {
    case 1: out = Shape{d[0]}; break;
    case 2: out = Shape{d[0], d[1]}; break;
    case 3: out = Shape{d[0], d[1], d[2]}; break;
    case 4: out = Shape{d[0], d[1], d[2], d[3]}; break;
    default: out = Shape{d[0], d[1], d[2], d[3], d[4]}; break;
  }
  auto n = detail::make_node<S>(out, parts);
  Index off = 0;
  std::vector<Index> sizes;
  for (const auto& p : parts) {
    n->values.segment(off, p.numel()) = p.values();
    sizes.push_back(p.numel());
    off += p.numel();
  }
  if (n->requires_grad) {
    std::vector<std::shared_ptr<TensorNode<S>>> pn;
    for (const auto& p : parts) pn.push_back(p.node());
    n->backward_fn = [pn, sizes](TensorNode<S>& self) {
      Index off2 = 0;
      for (size_t i = 0; i < pn.size(); ++i) {
        if (pn[i]->requires_grad)
          detail::accum(*pn[i], self.grad.segment(off2, sizes[i]).eval());
        off2 += sizes[i];
      }
    };
  }
  return Tensor<S>(std::move(n));
}

// ---------------------------------------------------------------------------
// Matrix product on rank-2 tensors (row-major); backed by Eigen GEMM.
// ---------------------------------------------------------------------------

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  MISM_CHECK(a.rank() == 2 && b.rank() == 2 && a.shape()[1] == b.shape()[0],
             "matmul: bad shapes " + a.shape().str() + " x " + b.shape().str());
  const Index m = a.shape()[0], k = a.shape()[1], n_ = b.shape()[1];
  auto n = detail::make_node<S>(Shape{m, n_}, {a, b});
  Eigen::Map<MatRM<S>>(n->values.data(), m, n_) =
      Eigen::Map<const MatRM<S>>(a.values().data(), m, k) *
      Eigen::Map<const MatRM<S>>(b.values().data(), k, n_);
  if (n->requires_grad) {
    auto an = a.node(), bn = b.node();
    n->backward_fn = [an, bn, m, k, n_](TensorNode<S>& self) {
      Eigen::Map<const MatRM<S>> g(self.grad.data(), m, n_);
      if (an->requires_grad) {
        an->ensure_grad();
        Eigen::Map<MatRM<S>>(an->grad.data(), m, k).noalias() +=
            g * Eigen::Map<const MatRM<S>>(bn->values.data(), k, n_).transpose();
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        Eigen::Map<MatRM<S>>(bn->grad.data(), k, n_).noalias() +=
            Eigen::Map<const MatRM<S>>(an->values.data(), m, k).transpose() * g;
      }
    };
  }
  return Tensor<S>(std::move(n));
}

template <typename S>
Tensor<S> transpose2(const Tensor<S>& a) {
  MISM_CHECK(a.rank() == 2, "transpose2: rank != 2");
  const Index m = a.shape()[0], k = a.shape()[1];
  auto n = detail::make_node<S>(Shape{k, m}, {a});
  Eigen::Map<MatRM<S>>(n->values.data(), k, m) =
      Eigen::Map<const MatRM<S>>(a.values().data(), m, k).transpose();
  if (n->requires_grad) {
    auto an = a.node();
    n->backward_fn = [an, m, k](TensorNode<S>& self) {
      an->ensure_grad();
      Eigen::Map<MatRM<S>>(an->grad.data(), m, k) +=
          Eigen::Map<const MatRM<S>>(self.grad.data(), k, m).transpose();
    };
  }
  return Tensor<S>(std::move(n));
}

/// Softmax over one axis.
template <typename S>
Tensor<S> softmax(const Tensor<S>& a, int axis) {
  const Shape& s = a.shape();
  MISM_CHECK(axis >= 0 && axis < s.rank(), "softmax: bad axis");
  Index outer = 1, mid = s[axis], inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < s.rank(); ++i) inner *= s[i];
  auto n = detail::make_node<S>(s, {a});
  const auto& x = a.values();
  for (Index o = 0; o < outer; ++o)
    for (Index in = 0; in < inner; ++in) {
      S mx = -std::numeric_limits<S>::infinity();
      for (Index m = 0; m < mid; ++m) mx = std::max(mx, x[(o * mid + m) * inner + in]);
      S z = 0;
      for (Index m = 0; m < mid; ++m) {
        S e = std::exp(x[(o * mid + m) * inner + in] - mx);
        n->values[(o * mid + m) * inner + in] = e;
        z += e;
      }
      for (Index m = 0; m < mid; ++m) n->values[(o * mid + m) * inner + in] /= z;
    }
  if (n->requires_grad) {
    auto an = a.node();
    n->backward_fn = [an, outer, mid, inner](TensorNode<S>& self) {
      Vec<S> g = Vec<S>::Zero(an->values.size());
      for (Index o = 0; o < outer; ++o)
        for (Index in = 0; in < inner; ++in) {
          S dot = 0;
          for (Index m = 0; m < mid; ++m) {
            Index i = (o * mid + m) * inner + in;
            dot += self.grad[i] * self.values[i];
          }
          for (Index m = 0; m < mid; ++m) {
            Index i = (o * mid + m) * inner + in;
            g[i] = self.values[i] * (self.grad[i] - dot);
          }
        }
      detail::accum(*an, g);
    };
  }
  return Tensor<S>(std::move(n));
}

/// Per-(inner position) argmax over axis 0; ties go to the smaller index.
template <typename S>
std::vector<Index> argmax0(const Tensor<S>& a) {
  const Shape& s = a.shape();
  Index mid = s[0], inner = a.numel() / mid;
  std::vector<Index> out(static_cast<size_t>(inner));
  const auto& x = a.values();
  for (Index in = 0; in < inner; ++in) {
    Index best = 0;
    S bv = x[in];
    for (Index m = 1; m < mid; ++m) {
      S v = x[m * inner + in];
      if (v > bv) {
        bv = v;
        best = m;
      }
    }
    out[static_cast<size_t>(in)] = best;
  }
  return out;
}

template <typename S>
bool all_finite(const Tensor<S>& a) {
  return a.values().isFinite().all();
}

}  // namespace mism
