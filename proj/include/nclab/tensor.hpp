#pragma once

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// Every differentiable op records its inputs and a backward closure on the
// output node. backward() sorts the graph reachable from a scalar loss into
// reverse topological order and runs the closures once each. Leaves created
// with requires_grad accumulate into their grad buffer across calls until
// zero_grad().

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nclab {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable view; only leaves may be mutated (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  // Fresh leaf holding a copy of the values, outside any graph.
  Tensor detach() const;
  // Deep copy of a leaf including requires_grad; grad is not copied.
  Tensor clone() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Internal: used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad, accumulates into inputs' grads.
  std::function<void(Node&)> backward;

  void ensure_grad();
};

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// ---- ops ----

// [m x k] * [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// x [m x in], weight [out x in], bias [out] -> x * weight^T + bias
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
// Cross-correlation with zero padding. input [b x cin x h x w], kernel
// [cout x cin x kh x kw], optional bias [cout].
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              int padding);
// Non-overlapping average pooling with window = stride = kernel.
Tensor avg_pool2d(const Tensor& input, int kernel);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
// [b x ...] -> [b x prod(...)]
Tensor flatten(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Per-channel (x - shift[c]) / divisor[c]; constants carry no gradient. Axis 1
// is the channel axis; for rank-2 inputs every column is its own channel when
// shift has length dim(1), otherwise a single channel.
Tensor normalize_channels(const Tensor& x, std::span<const double> shift,
                          std::span<const double> divisor);

// Mean over the batch of -log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);
// Mean over the batch of KL(softmax(p_logits) || softmax(q_logits)).
Tensor kl_divergence(const Tensor& p_logits, const Tensor& q_logits);

// Row-wise softmax, no graph.
std::vector<double> softmax_rows(const Tensor& logits);
std::vector<int> argmax_rows(const Tensor& logits);

// Populates grads of all requires_grad leaves reachable from a scalar loss.
void backward(const Tensor& loss);

// Max over coordinates of |analytic - central difference| /
// (|analytic| + |central| + 1e-12). f must build a fresh graph from its argument.
double check_gradients(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                       double fd_step);

}  // namespace nclab
