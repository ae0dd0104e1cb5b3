#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// The library is compiled twice: once with `real = float` for training and
// once with FOVEA_DOUBLE defined (`real = double`) for finite-difference
// gradient checks. Each build lives in its own inline namespace so both can
// be linked into one executable.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#if defined(FOVEA_DOUBLE)
#define FOVEA_PRECISION_NS f64
#else
#define FOVEA_PRECISION_NS f32
#endif

namespace fovea {
inline namespace FOVEA_PRECISION_NS {

#if defined(FOVEA_DOUBLE)
using real = double;
#else
using real = float;
#endif

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl;

struct Node {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  // Receives d(loss)/d(output) and accumulates into the inputs' grad buffers.
  std::function<void(std::span<const real>)> backward;
  std::string op;
};

struct TensorImpl {
  Shape shape;
  std::vector<real> data;
  std::vector<real> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool consumed = false;
  std::shared_ptr<Node> node;  // null for leaves

  std::span<real> grad_buffer();
};

}  // namespace detail

class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<real> data, bool requires_grad = false);
  static Tensor scalar(real value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int dim() const { return static_cast<int>(shape().size()); }
  int size(int axis) const;
  std::int64_t numel() const;

  std::span<const real> data() const;
  /// Writable view; only leaves may be mutated in place (optimizer updates).
  std::span<real> mutable_data();
  real item() const;
  real at(std::initializer_list<int> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const real> grad() const;
  std::span<real> mutable_grad();
  void zero_grad();

  /// Reverse-mode sweep from a scalar. The recorded graph is released
  /// afterwards; running backward through it a second time throws GraphError.
  void backward() const;

  /// Same values, new leaf without history: no gradient crosses this point.
  Tensor detach() const;

  /// True when `other` is reachable from this tensor through recorded ops.
  bool depends_on(const Tensor& other) const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Disables graph recording on this thread while alive.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};

bool grad_enabled();

// Elementwise, numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, real value);
Tensor mul_scalar(const Tensor& x, real value);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& x, real s) { return mul_scalar(x, s); }
inline Tensor operator*(real s, const Tensor& x) { return mul_scalar(x, s); }
inline Tensor operator+(const Tensor& x, real s) { return add_scalar(x, s); }
inline Tensor operator-(const Tensor& x) { return mul_scalar(x, real(-1)); }

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);
/// Gradient passes where lo <= x <= hi and is zero elsewhere.
Tensor clamp(const Tensor& x, real lo, real hi);

/// [.., m, k] x [.., k, n] -> [.., m, n]; batch dimensions broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);

Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);
Tensor logsumexp(const Tensor& x, int axis);

/// Normalizes over the last dimension with population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps = real(1e-5));

/// -sum(target * log_softmax(logits)) over the last axis. `target` rows must
/// be distributions (one-hot or soft); the result drops the last axis.
/// Targets are treated as constants.
Tensor cross_entropy(const Tensor& logits, const Tensor& target);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& dims);
Tensor transpose_last(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int length);

}  // namespace FOVEA_PRECISION_NS
}  // namespace fovea
