#include "fovea/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "fovea/error.hpp"

namespace fovea {
inline namespace FOVEA_PRECISION_NS {

using detail::Node;
using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

namespace {

thread_local bool t_grad_enabled = true;

constexpr real kPi = real(3.14159265358979323846);

int normalize_axis(int axis, int rank, const char* op) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return a;
}

void check_shape(const Shape& shape) {
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

ImplPtr new_impl(Shape shape, std::vector<real> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

// Wraps forward data into a tensor and records the backward closure when any
// input participates in differentiation.
Tensor make_result(Shape shape, std::vector<real> data, std::initializer_list<const Tensor*> inputs,
                   const char* op, std::function<void(std::span<const real>)> backward) {
  auto impl = new_impl(std::move(shape), std::move(data));
  if (!t_grad_enabled) return Tensor(impl);
  bool needs = false;
  for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  if (!needs) return Tensor(impl);
  auto node = std::make_shared<Node>();
  node->op = op;
  for (const Tensor* t : inputs) node->inputs.push_back(t->impl());
  node->backward = std::move(backward);
  impl->requires_grad = true;
  impl->node = std::move(node);
  return Tensor(impl);
}

Tensor make_result_n(Shape shape, std::vector<real> data, const std::vector<Tensor>& inputs, const char* op,
                     std::function<void(std::span<const real>)> backward) {
  auto impl = new_impl(std::move(shape), std::move(data));
  if (!t_grad_enabled) return Tensor(impl);
  bool needs = false;
  for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  if (!needs) return Tensor(impl);
  auto node = std::make_shared<Node>();
  node->op = op;
  for (const Tensor& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(backward);
  impl->requires_grad = true;
  impl->node = std::move(node);
  return Tensor(impl);
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ValidationError(std::string(op) + ": undefined tensor");
}

// ---------------------------------------------------------------------------
// Broadcasting

enum class BroadcastKind { Same, BSuffix, ASuffix, General };

struct BroadcastPlan {
  Shape out;
  BroadcastKind kind = BroadcastKind::General;
  std::int64_t na = 1, nb = 1, nout = 1;
  std::vector<std::int64_t> a_strides, b_strides;  // per output dim, 0 when broadcast
};

Shape strip_leading_ones(const Shape& s) {
  std::size_t i = 0;
  while (i < s.size() && s[i] == 1) ++i;
  return Shape(s.begin() + static_cast<std::ptrdiff_t>(i), s.end());
}

bool is_suffix(const Shape& small, const Shape& big) {
  Shape s = strip_leading_ones(small);
  if (s.size() > big.size()) return false;
  return std::equal(s.begin(), s.end(), big.end() - static_cast<std::ptrdiff_t>(s.size()));
}

std::vector<std::int64_t> contiguous_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size());
  std::int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan p;
  const int rank = static_cast<int>(std::max(a.size(), b.size()));
  p.out.assign(rank, 1);
  for (int i = 0; i < rank; ++i) {
    int da = i - (rank - static_cast<int>(a.size())) >= 0 ? a[i - (rank - a.size())] : 1;
    int db = i - (rank - static_cast<int>(b.size())) >= 0 ? b[i - (rank - b.size())] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    }
    p.out[i] = std::max(da, db);
  }
  p.na = shape_numel(a);
  p.nb = shape_numel(b);
  p.nout = shape_numel(p.out);
  if (a == b) {
    p.kind = BroadcastKind::Same;
  } else if (p.na == p.nout && is_suffix(b, p.out)) {
    p.kind = BroadcastKind::BSuffix;
  } else if (p.nb == p.nout && is_suffix(a, p.out)) {
    p.kind = BroadcastKind::ASuffix;
  } else {
    p.kind = BroadcastKind::General;
    auto sa = contiguous_strides(a);
    auto sb = contiguous_strides(b);
    p.a_strides.assign(rank, 0);
    p.b_strides.assign(rank, 0);
    for (int i = 0; i < rank; ++i) {
      int ia = i - (rank - static_cast<int>(a.size()));
      int ib = i - (rank - static_cast<int>(b.size()));
      if (ia >= 0 && a[ia] != 1) p.a_strides[i] = sa[ia];
      if (ib >= 0 && b[ib] != 1) p.b_strides[i] = sb[ib];
    }
  }
  return p;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <class F>
void visit_broadcast(const BroadcastPlan& p, F&& f) {
  switch (p.kind) {
    case BroadcastKind::Same:
      for (std::int64_t i = 0; i < p.nout; ++i) f(i, i, i);
      return;
    case BroadcastKind::BSuffix:
      for (std::int64_t i = 0; i < p.nout; ++i) f(i, i, i % p.nb);
      return;
    case BroadcastKind::ASuffix:
      for (std::int64_t i = 0; i < p.nout; ++i) f(i, i % p.na, i);
      return;
    case BroadcastKind::General: {
      const int rank = static_cast<int>(p.out.size());
      std::vector<int> idx(rank, 0);
      std::int64_t ia = 0, ib = 0;
      for (std::int64_t i = 0; i < p.nout; ++i) {
        f(i, ia, ib);
        for (int d = rank - 1; d >= 0; --d) {
          ++idx[d];
          ia += p.a_strides[d];
          ib += p.b_strides[d];
          if (idx[d] < p.out[d]) break;
          ia -= p.a_strides[d] * p.out[d];
          ib -= p.b_strides[d] * p.out[d];
          idx[d] = 0;
        }
      }
      return;
    }
  }
}

template <class Fwd, class GradA, class GradB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, GradA grad_a, GradB grad_b) {
  require_defined(a, op);
  require_defined(b, op);
  BroadcastPlan plan = plan_broadcast(a.shape(), b.shape(), op);
  std::vector<real> out(static_cast<std::size_t>(plan.nout));
  const real* pa = a.data().data();
  const real* pb = b.data().data();
  visit_broadcast(plan, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) { out[i] = fwd(pa[ia], pb[ib]); });
  TensorImpl* ia_impl = a.impl().get();
  TensorImpl* ib_impl = b.impl().get();
  Shape out_shape = plan.out;
  return make_result(std::move(out_shape), std::move(out), {&a, &b}, op,
                     [plan, ia_impl, ib_impl, grad_a, grad_b](std::span<const real> g) {
                       const real* av = ia_impl->data.data();
                       const real* bv = ib_impl->data.data();
                       if (ia_impl->requires_grad) {
                         real* ga = ia_impl->grad_buffer().data();
                         visit_broadcast(plan, [&](std::int64_t i, std::int64_t ja, std::int64_t jb) {
                           ga[ja] += grad_a(g[i], av[ja], bv[jb]);
                         });
                       }
                       if (ib_impl->requires_grad) {
                         real* gb = ib_impl->grad_buffer().data();
                         visit_broadcast(plan, [&](std::int64_t i, std::int64_t ja, std::int64_t jb) {
                           gb[jb] += grad_b(g[i], av[ja], bv[jb]);
                         });
                       }
                     });
}

template <class Fwd, class Grad>
Tensor unary_op(const Tensor& x, const char* op, Fwd fwd, Grad grad) {
  require_defined(x, op);
  auto xs = x.data();
  std::vector<real> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = fwd(xs[i]);
  TensorImpl* xi = x.impl().get();
  // grad(g, x, y) may use the forward output y; keep a copy for the closure.
  auto y = std::make_shared<std::vector<real>>(out);
  return make_result(x.shape(), std::move(out), {&x}, op, [xi, y, grad](std::span<const real> g) {
    real* gx = xi->grad_buffer().data();
    const real* xv = xi->data.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += grad(g[i], xv[i], (*y)[i]);
  });
}

// Splits a shape around `axis` into outer * len * inner.
struct AxisSplit {
  std::int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Shape helpers

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::span<real> detail::TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), real(0));
  return grad;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), real(0), requires_grad); }

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
  check_shape(shape);
  auto n = static_cast<std::size_t>(shape_numel(shape));
  auto impl = new_impl(std::move(shape), std::vector<real>(n, value));
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::from(Shape shape, std::vector<real> data, bool requires_grad) {
  check_shape(shape);
  if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  }
  auto impl = new_impl(std::move(shape), std::move(data));
  impl->requires_grad = requires_grad;
  return Tensor(impl);
}

Tensor Tensor::scalar(real value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return impl_->shape;
}

int Tensor::size(int axis) const { return shape()[normalize_axis(axis, dim(), "size")]; }

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_ ? impl_->data.size() : 0); }

std::span<const real> Tensor::data() const {
  require_defined(*this, "data");
  return impl_->data;
}

std::span<real> Tensor::mutable_data() {
  require_defined(*this, "mutable_data");
  if (impl_->node) throw GraphError("mutable_data: only leaf tensors may be modified in place");
  return impl_->data;
}

real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor has shape " + shape_str(shape()));
  return impl_->data[0];
}

real Tensor::at(std::initializer_list<int> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw ShapeError("at: index rank does not match " + shape_str(s));
  std::int64_t off = 0;
  int d = 0;
  for (int i : index) {
    if (i < 0 || i >= s[d]) throw ShapeError("at: index out of range for " + shape_str(s));
    off = off * s[d] + i;
    ++d;
  }
  return impl_->data[static_cast<std::size_t>(off)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  require_defined(*this, "set_requires_grad");
  if (impl_->node) throw GraphError("set_requires_grad: only valid on leaf tensors");
  impl_->requires_grad = on;
}

bool Tensor::is_leaf() const { return impl_ && !impl_->node; }
bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const real> Tensor::grad() const {
  require_defined(*this, "grad");
  return impl_->grad;
}

std::span<real> Tensor::mutable_grad() {
  require_defined(*this, "mutable_grad");
  return impl_->grad_buffer();
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

void Tensor::backward() const {
  require_defined(*this, "backward");
  if (impl_->consumed) throw GraphError("backward: graph was already consumed by an earlier backward call");
  if (numel() != 1) throw GraphError("backward: loss must be a scalar, got shape " + shape_str(shape()));
  if (!impl_->requires_grad) throw GraphError("backward: loss does not depend on any tensor requiring grad");

  // Iterative post-order DFS for a topological order.
  // Owning pointers keep every visited tensor alive while nodes are released.
  std::vector<std::shared_ptr<TensorImpl>> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
  stack.emplace_back(impl_, 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->node && next < node->node->inputs.size()) {
      const std::shared_ptr<TensorImpl>& child = node->node->inputs[next++];
      if (child->consumed) throw GraphError("backward: graph was already consumed by an earlier backward call");
      if (child->requires_grad && visited.insert(child.get()).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(std::move(node));
    stack.pop_back();
  }

  impl_->grad_buffer()[0] += real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = it->get();
    if (!t->node) continue;
    if (!t->grad.empty()) t->node->backward(t->grad);
    t->grad.clear();
    t->grad.shrink_to_fit();
    t->node.reset();
    t->consumed = true;
  }
}

Tensor Tensor::detach() const {
  require_defined(*this, "detach");
  return Tensor(new_impl(impl_->shape, impl_->data));
}

bool Tensor::depends_on(const Tensor& other) const {
  if (!impl_ || !other.impl_) return false;
  std::unordered_set<const TensorImpl*> seen;
  std::vector<const TensorImpl*> stack{impl_.get()};
  while (!stack.empty()) {
    const TensorImpl* t = stack.back();
    stack.pop_back();
    if (t == other.impl_.get()) return true;
    if (!seen.insert(t).second || !t->node) continue;
    for (const auto& in : t->node->inputs) stack.push_back(in.get());
  }
  return false;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](real x, real y) { return x + y; }, [](real g, real, real) { return g; },
      [](real g, real, real) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](real x, real y) { return x - y; }, [](real g, real, real) { return g; },
      [](real g, real, real) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](real x, real y) { return x * y; }, [](real g, real, real y) { return g * y; },
      [](real g, real x, real) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](real x, real y) { return x / y; }, [](real g, real, real y) { return g / y; },
      [](real g, real x, real y) { return -g * x / (y * y); });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  // Ties route the gradient to `a`.
  return binary_op(
      a, b, "minimum", [](real x, real y) { return x <= y ? x : y; },
      [](real g, real x, real y) { return x <= y ? g : real(0); },
      [](real g, real x, real y) { return x <= y ? real(0) : g; });
}

Tensor add_scalar(const Tensor& x, real value) {
  return unary_op(
      x, "add_scalar", [value](real v) { return v + value; }, [](real g, real, real) { return g; });
}

Tensor mul_scalar(const Tensor& x, real value) {
  return unary_op(
      x, "mul_scalar", [value](real v) { return v * value; }, [value](real g, real, real) { return g * value; });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, "exp", [](real v) { return std::exp(v); }, [](real g, real, real y) { return g * y; });
}

Tensor log(const Tensor& x) {
  return unary_op(
      x, "log", [](real v) { return std::log(v); }, [](real g, real v, real) { return g / v; });
}

Tensor square(const Tensor& x) {
  return unary_op(
      x, "square", [](real v) { return v * v; }, [](real g, real v, real) { return real(2) * g * v; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, "sigmoid",
      [](real v) {
        if (v >= 0) return real(1) / (real(1) + std::exp(-v));
        real e = std::exp(v);
        return e / (real(1) + e);
      },
      [](real g, real, real y) { return g * y * (real(1) - y); });
}

Tensor gelu(const Tensor& x) {
  static const real inv_sqrt2 = real(1) / std::sqrt(real(2));
  static const real inv_sqrt2pi = real(1) / std::sqrt(real(2) * kPi);
  return unary_op(
      x, "gelu", [](real v) { return real(0.5) * v * (real(1) + std::erf(v * inv_sqrt2)); },
      [](real g, real v, real) {
        real cdf = real(0.5) * (real(1) + std::erf(v * inv_sqrt2));
        real pdf = inv_sqrt2pi * std::exp(real(-0.5) * v * v);
        return g * (cdf + v * pdf);
      });
}

Tensor clamp(const Tensor& x, real lo, real hi) {
  if (lo > hi) throw ValidationError("clamp: lo > hi");
  return unary_op(
      x, "clamp", [lo, hi](real v) { return std::clamp(v, lo, hi); },
      [lo, hi](real g, real v, real) { return (v >= lo && v <= hi) ? g : real(0); });
}

// ---------------------------------------------------------------------------
// Matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2 || sa.back() != sb[sb.size() - 2]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  }
  const int m = sa[sa.size() - 2], k = sa.back(), n = sb.back();
  Shape batch_a(sa.begin(), sa.end() - 2), batch_b(sb.begin(), sb.end() - 2);
  TensorImpl* ai = a.impl().get();
  TensorImpl* bi = b.impl().get();

  if (batch_b.empty()) {
    // One GEMM with every leading dimension of `a` folded into rows.
    const std::int64_t rows = a.numel() / k;
    std::vector<real> out(static_cast<std::size_t>(rows * n));
    MatMap(out.data(), rows, n).noalias() = ConstMatMap(ai->data.data(), rows, k) * ConstMatMap(bi->data.data(), k, n);
    Shape out_shape = sa;
    out_shape.back() = n;
    return make_result(std::move(out_shape), std::move(out), {&a, &b}, "matmul",
                       [ai, bi, rows, k, n](std::span<const real> g) {
                         ConstMatMap G(g.data(), rows, n);
                         if (ai->requires_grad) {
                           MatMap(ai->grad_buffer().data(), rows, k).noalias() +=
                               G * ConstMatMap(bi->data.data(), k, n).transpose();
                         }
                         if (bi->requires_grad) {
                           MatMap(bi->grad_buffer().data(), k, n).noalias() +=
                               ConstMatMap(ai->data.data(), rows, k).transpose() * G;
                         }
                       });
  }

  // Batched: broadcast batch dimensions, one GEMM per batch element.
  BroadcastPlan plan = plan_broadcast(batch_a, batch_b, "matmul");
  std::vector<std::int64_t> off_a, off_b;
  off_a.reserve(static_cast<std::size_t>(plan.nout));
  off_b.reserve(static_cast<std::size_t>(plan.nout));
  visit_broadcast(plan, [&](std::int64_t, std::int64_t ia, std::int64_t ib) {
    off_a.push_back(ia * m * k);
    off_b.push_back(ib * k * n);
  });
  std::vector<real> out(static_cast<std::size_t>(plan.nout * m * n));
  for (std::int64_t i = 0; i < plan.nout; ++i) {
    MatMap(out.data() + i * m * n, m, n).noalias() =
        ConstMatMap(ai->data.data() + off_a[i], m, k) * ConstMatMap(bi->data.data() + off_b[i], k, n);
  }
  Shape out_shape = plan.out;
  out_shape.push_back(m);
  out_shape.push_back(n);
  return make_result(std::move(out_shape), std::move(out), {&a, &b}, "matmul",
                     [ai, bi, m, k, n, off_a = std::move(off_a), off_b = std::move(off_b)](std::span<const real> g) {
                       for (std::size_t i = 0; i < off_a.size(); ++i) {
                         ConstMatMap G(g.data() + static_cast<std::int64_t>(i) * m * n, m, n);
                         if (ai->requires_grad) {
                           MatMap(ai->grad_buffer().data() + off_a[i], m, k).noalias() +=
                               G * ConstMatMap(bi->data.data() + off_b[i], k, n).transpose();
                         }
                         if (bi->requires_grad) {
                           MatMap(bi->grad_buffer().data() + off_b[i], k, n).noalias() +=
                               ConstMatMap(ai->data.data() + off_a[i], m, k).transpose() * G;
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  real acc = 0;
  for (real v : x.data()) acc += v;
  TensorImpl* xi = x.impl().get();
  return make_result({}, {acc}, {&x}, "sum", [xi](std::span<const real> g) {
    for (real& v : xi->grad_buffer()) v += g[0];
  });
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  require_defined(x, "sum");
  const int ax = normalize_axis(axis, x.dim(), "sum");
  AxisSplit s = split_axis(x.shape(), ax);
  std::vector<real> out(static_cast<std::size_t>(s.outer * s.inner), real(0));
  const real* xv = x.data().data();
  for (std::int64_t o = 0; o < s.outer; ++o)
    for (std::int64_t l = 0; l < s.len; ++l)
      for (std::int64_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.len + l) * s.inner + i];
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + ax);
  }
  TensorImpl* xi = x.impl().get();
  return make_result(std::move(out_shape), std::move(out), {&x}, "sum_axis", [xi, s](std::span<const real> g) {
    real* gx = xi->grad_buffer().data();
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t l = 0; l < s.len; ++l)
        for (std::int64_t i = 0; i < s.inner; ++i) gx[(o * s.len + l) * s.inner + i] += g[o * s.inner + i];
  });
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), real(1) / static_cast<real>(x.numel())); }

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  const int ax = normalize_axis(axis, x.dim(), "mean");
  return mul_scalar(sum(x, ax, keepdim), real(1) / static_cast<real>(x.shape()[ax]));
}

// ---------------------------------------------------------------------------
// Softmax family

namespace {

enum class SoftmaxKind { Softmax, LogSoftmax, LogSumExp };

Tensor softmax_family(const Tensor& x, int axis, SoftmaxKind kind, const char* op) {
  require_defined(x, op);
  const int ax = normalize_axis(axis, x.dim(), op);
  AxisSplit s = split_axis(x.shape(), ax);
  const real* xv = x.data().data();
  // Softmax probabilities are needed by all three backward rules.
  auto probs = std::make_shared<std::vector<real>>(static_cast<std::size_t>(x.numel()));
  std::vector<real> lse(static_cast<std::size_t>(s.outer * s.inner));
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t i = 0; i < s.inner; ++i) {
      auto idx = [&](std::int64_t l) { return (o * s.len + l) * s.inner + i; };
      real mx = xv[idx(0)];
      for (std::int64_t l = 1; l < s.len; ++l) mx = std::max(mx, xv[idx(l)]);
      real z = 0;
      for (std::int64_t l = 0; l < s.len; ++l) {
        real e = std::exp(xv[idx(l)] - mx);
        (*probs)[idx(l)] = e;
        z += e;
      }
      for (std::int64_t l = 0; l < s.len; ++l) (*probs)[idx(l)] /= z;
      lse[o * s.inner + i] = mx + std::log(z);
    }
  }
  TensorImpl* xi = x.impl().get();
  if (kind == SoftmaxKind::LogSumExp) {
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + ax);
    return make_result(std::move(out_shape), std::move(lse), {&x}, op, [xi, s, probs](std::span<const real> g) {
      real* gx = xi->grad_buffer().data();
      for (std::int64_t o = 0; o < s.outer; ++o)
        for (std::int64_t l = 0; l < s.len; ++l)
          for (std::int64_t i = 0; i < s.inner; ++i) {
            std::int64_t j = (o * s.len + l) * s.inner + i;
            gx[j] += g[o * s.inner + i] * (*probs)[j];
          }
    });
  }
  std::vector<real> out(static_cast<std::size_t>(x.numel()));
  if (kind == SoftmaxKind::Softmax) {
    out = *probs;
  } else {
    for (std::int64_t o = 0; o < s.outer; ++o)
      for (std::int64_t l = 0; l < s.len; ++l)
        for (std::int64_t i = 0; i < s.inner; ++i) {
          std::int64_t j = (o * s.len + l) * s.inner + i;
          out[j] = xv[j] - lse[o * s.inner + i];
        }
  }
  return make_result(x.shape(), std::move(out), {&x}, op, [xi, s, probs, kind](std::span<const real> g) {
    real* gx = xi->grad_buffer().data();
    const std::vector<real>& p = *probs;
    for (std::int64_t o = 0; o < s.outer; ++o) {
      for (std::int64_t i = 0; i < s.inner; ++i) {
        real dot = 0;
        for (std::int64_t l = 0; l < s.len; ++l) {
          std::int64_t j = (o * s.len + l) * s.inner + i;
          dot += kind == SoftmaxKind::Softmax ? g[j] * p[j] : g[j];
        }
        for (std::int64_t l = 0; l < s.len; ++l) {
          std::int64_t j = (o * s.len + l) * s.inner + i;
          gx[j] += kind == SoftmaxKind::Softmax ? p[j] * (g[j] - dot) : g[j] - p[j] * dot;
        }
      }
    }
  });
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) { return softmax_family(x, axis, SoftmaxKind::Softmax, "softmax"); }
Tensor log_softmax(const Tensor& x, int axis) {
  return softmax_family(x, axis, SoftmaxKind::LogSoftmax, "log_softmax");
}
Tensor logsumexp(const Tensor& x, int axis) { return softmax_family(x, axis, SoftmaxKind::LogSumExp, "logsumexp"); }

// ---------------------------------------------------------------------------
// Layer norm

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps) {
  require_defined(x, "layer_norm");
  const int d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                     " do not match last dimension of " + shape_str(x.shape()));
  }
  const std::int64_t rows = x.numel() / d;
  const real* xv = x.data().data();
  const real* gv = gamma.data().data();
  const real* bv = beta.data().data();
  auto xhat = std::make_shared<std::vector<real>>(static_cast<std::size_t>(x.numel()));
  auto rstd = std::make_shared<std::vector<real>>(static_cast<std::size_t>(rows));
  std::vector<real> out(static_cast<std::size_t>(x.numel()));
  for (std::int64_t r = 0; r < rows; ++r) {
    const real* row = xv + r * d;
    real mu = 0;
    for (int j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<real>(d);
    real var = 0;
    for (int j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<real>(d);
    real rs = real(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (int j = 0; j < d; ++j) {
      real h = (row[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  TensorImpl* xi = x.impl().get();
  TensorImpl* gi = gamma.impl().get();
  TensorImpl* bi = beta.impl().get();
  return make_result(x.shape(), std::move(out), {&x, &gamma, &beta}, "layer_norm",
                     [xi, gi, bi, xhat, rstd, rows, d](std::span<const real> g) {
                       const real* gam = gi->data.data();
                       if (gi->requires_grad || bi->requires_grad) {
                         real* gg = gi->requires_grad ? gi->grad_buffer().data() : nullptr;
                         real* gb = bi->requires_grad ? bi->grad_buffer().data() : nullptr;
                         for (std::int64_t r = 0; r < rows; ++r)
                           for (int j = 0; j < d; ++j) {
                             if (gg) gg[j] += g[r * d + j] * (*xhat)[r * d + j];
                             if (gb) gb[j] += g[r * d + j];
                           }
                       }
                       if (!xi->requires_grad) return;
                       real* gx = xi->grad_buffer().data();
                       for (std::int64_t r = 0; r < rows; ++r) {
                         real m1 = 0, m2 = 0;
                         for (int j = 0; j < d; ++j) {
                           real dh = g[r * d + j] * gam[j];
                           m1 += dh;
                           m2 += dh * (*xhat)[r * d + j];
                         }
                         m1 /= static_cast<real>(d);
                         m2 /= static_cast<real>(d);
                         for (int j = 0; j < d; ++j) {
                           real dh = g[r * d + j] * gam[j];
                           gx[r * d + j] += (*rstd)[r] * (dh - m1 - (*xhat)[r * d + j] * m2);
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Cross entropy

Tensor cross_entropy(const Tensor& logits, const Tensor& target) {
  require_defined(logits, "cross_entropy");
  require_defined(target, "cross_entropy");
  if (logits.shape() != target.shape() || logits.dim() < 1) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  const int k = logits.shape().back();
  const std::int64_t rows = logits.numel() / k;
  const real* tv = target.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double total = 0;
    for (int j = 0; j < k; ++j) {
      if (tv[r * k + j] < real(-1e-6)) throw ValidationError("cross_entropy: negative target probability");
      total += tv[r * k + j];
    }
    if (std::abs(total - 1.0) > 1e-4) {
      throw ValidationError("cross_entropy: target row " + std::to_string(r) + " sums to " + std::to_string(total) +
                            ", expected 1");
    }
  }
  Tensor logp = log_softmax(logits, -1);
  return -sum(mul(logp, target), -1);
}

// ---------------------------------------------------------------------------
// Layout

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  int infer = -1;
  std::int64_t known = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one -1 in " + shape_str(shape));
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0) shape[infer] = static_cast<int>(x.numel() / known);
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  check_shape(shape);
  TensorImpl* xi = x.impl().get();
  std::vector<real> data(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(data), {&x}, "reshape", [xi](std::span<const real> g) {
    real* gx = xi->grad_buffer().data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& dims) {
  require_defined(x, "permute");
  const int rank = x.dim();
  if (static_cast<int>(dims.size()) != rank) throw ShapeError("permute: wrong number of dims for " + shape_str(x.shape()));
  std::vector<bool> used(rank, false);
  for (int d : dims) {
    if (d < 0 || d >= rank || used[d]) throw ShapeError("permute: invalid permutation");
    used[d] = true;
  }
  const Shape& in_shape = x.shape();
  auto in_strides = contiguous_strides(in_shape);
  Shape out_shape(rank);
  std::vector<std::int64_t> src_strides(rank);
  for (int i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[dims[i]];
    src_strides[i] = in_strides[dims[i]];
  }
  // gather[i] = source offset of output element i
  auto gather = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(x.numel()));
  {
    std::vector<int> idx(rank, 0);
    std::int64_t src = 0;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      (*gather)[i] = src;
      for (int d = rank - 1; d >= 0; --d) {
        ++idx[d];
        src += src_strides[d];
        if (idx[d] < out_shape[d]) break;
        src -= src_strides[d] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
  const real* xv = x.data().data();
  std::vector<real> out(static_cast<std::size_t>(x.numel()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[(*gather)[i]];
  TensorImpl* xi = x.impl().get();
  return make_result(std::move(out_shape), std::move(out), {&x}, "permute", [xi, gather](std::span<const real> g) {
    real* gx = xi->grad_buffer().data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*gather)[i]] += g[i];
  });
}

Tensor transpose_last(const Tensor& x) {
  std::vector<int> dims(x.dim());
  std::iota(dims.begin(), dims.end(), 0);
  if (dims.size() < 2) throw ShapeError("transpose_last: rank < 2");
  std::swap(dims[dims.size() - 1], dims[dims.size() - 2]);
  return permute(x, dims);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  for (const auto& p : parts) require_defined(p, "concat");
  const int rank = parts[0].dim();
  const int ax = normalize_axis(axis, rank, "concat");
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (static_cast<int>(s.size()) != rank) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < rank; ++i) {
      if (i != ax && s[i] != parts[0].shape()[i]) {
        throw ShapeError("concat: shapes " + shape_str(parts[0].shape()) + " and " + shape_str(s) + " differ off-axis");
      }
    }
    out_shape[ax] += s[ax];
  }
  AxisSplit os = split_axis(out_shape, ax);
  std::vector<real> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::vector<std::int64_t> offsets;
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    AxisSplit ps = split_axis(p.shape(), ax);
    const real* pv = p.data().data();
    const std::int64_t block = ps.len * ps.inner;
    for (std::int64_t o = 0; o < os.outer; ++o) {
      std::copy(pv + o * block, pv + (o + 1) * block, out.begin() + o * os.len * os.inner + offset * os.inner);
    }
    offsets.push_back(offset);
    offset += ps.len;
  }
  std::vector<TensorImpl*> impls;
  for (const auto& p : parts) impls.push_back(p.impl().get());
  return make_result_n(std::move(out_shape), std::move(out), parts, "concat",
                       [impls, offsets, os, ax](std::span<const real> g) {
                         for (std::size_t k = 0; k < impls.size(); ++k) {
                           TensorImpl* t = impls[k];
                           if (!t->requires_grad) continue;
                           AxisSplit ps = split_axis(t->shape, ax);
                           const std::int64_t block = ps.len * ps.inner;
                           real* gt = t->grad_buffer().data();
                           for (std::int64_t o = 0; o < os.outer; ++o) {
                             const real* src = g.data() + o * os.len * os.inner + offsets[k] * os.inner;
                             for (std::int64_t j = 0; j < block; ++j) gt[o * block + j] += src[j];
                           }
                         }
                       });
}

Tensor slice(const Tensor& x, int axis, int start, int length) {
  require_defined(x, "slice");
  const int ax = normalize_axis(axis, x.dim(), "slice");
  if (start < 0 || length <= 0 || start + length > x.shape()[ax]) {
    throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range for axis " + std::to_string(ax) + " of " + shape_str(x.shape()));
  }
  AxisSplit s = split_axis(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = length;
  const std::int64_t block = length * s.inner;
  std::vector<real> out(static_cast<std::size_t>(s.outer * block));
  const real* xv = x.data().data();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    const real* src = xv + (o * s.len + start) * s.inner;
    std::copy(src, src + block, out.begin() + o * block);
  }
  TensorImpl* xi = x.impl().get();
  return make_result(std::move(out_shape), std::move(out), {&x}, "slice",
                     [xi, s, start, block](std::span<const real> g) {
                       real* gx = xi->grad_buffer().data();
                       for (std::int64_t o = 0; o < s.outer; ++o) {
                         real* dst = gx + (o * s.len + start) * s.inner;
                         for (std::int64_t j = 0; j < block; ++j) dst[j] += g[o * block + j];
                       }
                     });
}

}  // namespace FOVEA_PRECISION_NS
}  // namespace fovea
