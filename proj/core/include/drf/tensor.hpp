#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace drf {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

namespace detail {
struct Node;
}

/// Value-semantic handle to a node in a reverse-mode autodiff graph.
/// All storage is float64, row-major. Ops record a tape while any input is
/// tracked; backward() walks the tape and accumulates gradients.
class Tensor {
 public:
  Tensor();

  static Tensor constant(Shape shape, double fill = 0.0);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);
  /// A tracked leaf: participates in gradients.
  static Tensor parameter(Shape shape, std::vector<double> data);

  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const;

  const std::vector<double>& data() const;
  /// Mutable access to leaf storage (parameter updates, finite differences).
  std::vector<double>& mutable_data();

  /// Scalar value; throws ShapeError unless size() == 1.
  double value() const;

  bool tracked() const;

  /// Gradient buffer; empty until a backward pass touches this tensor.
  const std::vector<double>& grad() const;
  void zero_grad();

  bool defined() const { return node_ != nullptr; }

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Runs reverse-mode accumulation from a scalar loss. Gradients add into any
/// existing buffers; call zero_grad between steps to reset.
void backward(const Tensor& loss);

/// While alive, ops do not record the tape (inference mode).
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// ---- elementwise / broadcast ----
// Broadcasting aligns trailing axes; size-1 axes expand.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// ---- shape ----
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start,
             std::size_t length);
Tensor select_scalar(const Tensor& x, std::size_t flat_index);

// ---- reductions ----
Tensor reduce_max(const Tensor& x, std::size_t axis);
Tensor reduce_mean(const Tensor& x, std::size_t axis);
Tensor mean_all(const Tensor& x);

// ---- neural-net ops ----
/// x: [in] or [n, in]; w: [out, in]; optional bias [out].
Tensor linear(const Tensor& x, const Tensor& w);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

/// x: [n, c_in, h, w]; kernel: [c_out, c_in, kh, kw]; zero padding.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              std::size_t stride, std::size_t padding);
Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride,
              std::size_t padding);

/// x: [c_in, len]; kernel: [c_out, c_in, k]; stride 1, zero padding.
Tensor conv1d(const Tensor& x, const Tensor& kernel, std::size_t padding);

/// x: [n, c, h, w]; kernel kh x kw, stride sh x sw; ties break to the first
/// element in scan order.
Tensor max_pool2d(const Tensor& x, std::size_t kh, std::size_t kw,
                  std::size_t sh, std::size_t sw);

/// logits: [k]; returns -log softmax(logits)[label], log-sum-exp stabilized.
Tensor softmax_cross_entropy(const Tensor& logits, std::size_t label);

/// x: [n, d]; returns [n, n] Euclidean distances. Gradient at coincident
/// rows (distance 0) is defined as 0.
Tensor pairwise_l2(const Tensor& x);

/// Max over coordinates of |analytic - numeric| / max(1, |analytic|), where
/// numeric is the central difference of `f` for each coordinate of each
/// tracked parameter. `f` must rebuild its graph on every call.
double grad_check(const std::function<Tensor()>& f,
                  const std::vector<Tensor>& params, double eps = 1e-4);

}  // namespace drf
