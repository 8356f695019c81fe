#include "nclab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "nclab/errors.hpp"

namespace nclab {

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr make_node(Shape shape, std::vector<double> data) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return node;
}

void check_finite(const detail::Node& node, const char* op) {
  for (double v : node.data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op + " with output shape " +
                         shape_str(node.shape));
    }
  }
}

// Wires the output into the graph when grad mode is on and any input needs it.
Tensor finish(NodePtr out, std::vector<NodePtr> inputs, std::function<void(detail::Node&)> bw,
              const char* op) {
  check_finite(*out, op);
  if (g_grad_enabled) {
    bool needs = std::any_of(inputs.begin(), inputs.end(),
                             [](const NodePtr& n) { return n->requires_grad; });
    if (needs) {
      out->requires_grad = true;
      out->inputs = std::move(inputs);
      out->backward = std::move(bw);
    }
  }
  return Tensor(std::move(out));
}

const detail::Node& node_of(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
  return *t.node();
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, kh, kw, oh, ow;
  int stride, padding;
  std::size_t col_rows() const { return cin * kh * kw; }
  std::size_t col_cols() const { return oh * ow; }
};

void im2col(const double* img, const ConvGeometry& g, double* col) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* dst = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t oi = 0; oi < g.oh; ++oi) {
          const long ii = static_cast<long>(oi) * g.stride - g.padding + static_cast<long>(ki);
          for (std::size_t oj = 0; oj < g.ow; ++oj) {
            const long jj = static_cast<long>(oj) * g.stride - g.padding + static_cast<long>(kj);
            double v = 0.0;
            if (ii >= 0 && jj >= 0 && ii < static_cast<long>(g.h) && jj < static_cast<long>(g.w)) {
              v = img[(c * g.h + static_cast<std::size_t>(ii)) * g.w + static_cast<std::size_t>(jj)];
            }
            dst[oi * g.ow + oj] = v;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeometry& g, double* img) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* src = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t oi = 0; oi < g.oh; ++oi) {
          const long ii = static_cast<long>(oi) * g.stride - g.padding + static_cast<long>(ki);
          if (ii < 0 || ii >= static_cast<long>(g.h)) continue;
          for (std::size_t oj = 0; oj < g.ow; ++oj) {
            const long jj = static_cast<long>(oj) * g.stride - g.padding + static_cast<long>(kj);
            if (jj < 0 || jj >= static_cast<long>(g.w)) continue;
            img[(c * g.h + static_cast<std::size_t>(ii)) * g.w + static_cast<std::size_t>(jj)] +=
                src[oi * g.ow + oj];
          }
        }
      }
    }
  }
}

std::vector<double> log_softmax_rows(const std::vector<double>& logits, std::size_t rows,
                                     std::size_t cols) {
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = logits.data() + i * cols;
    const double mx = *std::max_element(row, row + cols);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = row[j] - lse;
  }
  return out;
}

void require_rank(const detail::Node& n, std::size_t rank, const char* op) {
  if (n.shape.size() != rank) {
    std::ostringstream os;
    os << op << ": expected rank " << rank << ", got shape " << shape_str(n.shape);
    throw DimensionError(os.str());
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void detail::Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

// ---- Tensor ----

Tensor::Tensor() = default;

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  auto node = make_node(std::move(shape), std::vector<double>(n, value));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("from_data: shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  auto node = make_node(std::move(shape), std::move(data));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_data({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_of(*this, "shape").shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw IndexError("dim: axis out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return node_of(*this, "numel").data.size(); }

std::span<const double> Tensor::data() const { return node_of(*this, "data").data; }

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw ContractError("mutable_data: only leaf tensors may be mutated");
  return node_->data;
}

double Tensor::item() const {
  const auto& n = node_of(*this, "item");
  if (n.data.size() != 1) throw ContractError("item: tensor of shape " + shape_str(n.shape) + " is not a scalar");
  return n.data[0];
}

std::vector<double> Tensor::to_vector() const { return node_of(*this, "to_vector").data; }

bool Tensor::requires_grad() const { return node_of(*this, "requires_grad").requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!is_leaf()) throw ContractError("set_requires_grad: not a leaf");
  node_->requires_grad = value;
  if (!value) node_->grad.clear();
}

bool Tensor::is_leaf() const { return !node_of(*this, "is_leaf").backward; }

bool Tensor::has_grad() const {
  const auto& n = node_of(*this, "has_grad");
  return !n.grad.empty() && n.grad.size() == n.data.size();
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("grad: tensor has no populated gradient");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!has_grad()) throw ContractError("mutable_grad: tensor has no populated gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  node_of(*this, "zero_grad");
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::clear_grad() {
  node_of(*this, "clear_grad");
  node_->grad.clear();
}

Tensor Tensor::detach() const {
  const auto& n = node_of(*this, "detach");
  return Tensor(make_node(n.shape, n.data));
}

Tensor Tensor::clone() const {
  const auto& n = node_of(*this, "clone");
  auto out = make_node(n.shape, n.data);
  out->requires_grad = n.requires_grad;
  return Tensor(std::move(out));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_mode_enabled() { return g_grad_enabled; }

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& an = node_of(a, "matmul");
  const auto& bn = node_of(b, "matmul");
  if (an.shape.size() != 2 || bn.shape.size() != 2 || an.shape[1] != bn.shape[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(an.shape) + " and " +
                         shape_str(bn.shape));
  }
  const std::size_t m = an.shape[0], k = an.shape[1], n = bn.shape[1];
  auto out = make_node({m, n}, std::vector<double>(m * n, 0.0));
  gemm_nn(an.data.data(), bn.data.data(), out->data.data(), m, k, n);
  auto bw = [m, k, n](detail::Node& self) {
    auto& a_in = *self.inputs[0];
    auto& b_in = *self.inputs[1];
    if (a_in.requires_grad) {
      a_in.ensure_grad();
      gemm_nt(self.grad.data(), b_in.data.data(), a_in.grad.data(), m, n, k);
    }
    if (b_in.requires_grad) {
      b_in.ensure_grad();
      gemm_tn(a_in.data.data(), self.grad.data(), b_in.grad.data(), k, m, n);
    }
  };
  return finish(out, {a.node(), b.node()}, bw, "matmul");
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const auto& xn = node_of(x, "linear");
  const auto& wn = node_of(weight, "linear");
  const auto& bn = node_of(bias, "linear");
  if (xn.shape.size() != 2 || wn.shape.size() != 2 || xn.shape[1] != wn.shape[1] ||
      bn.data.size() != wn.shape[0]) {
    throw DimensionError("linear: incompatible shapes x " + shape_str(xn.shape) + ", weight " +
                         shape_str(wn.shape) + ", bias " + shape_str(bn.shape));
  }
  const std::size_t m = xn.shape[0], in = xn.shape[1], outd = wn.shape[0];
  auto out = make_node({m, outd}, std::vector<double>(m * outd, 0.0));
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(bn.data.begin(), bn.data.end(), out->data.begin() + static_cast<long>(i * outd));
  }
  gemm_nt(xn.data.data(), wn.data.data(), out->data.data(), m, in, outd);
  auto bw = [m, in, outd](detail::Node& self) {
    auto& x_in = *self.inputs[0];
    auto& w_in = *self.inputs[1];
    auto& b_in = *self.inputs[2];
    if (x_in.requires_grad) {
      x_in.ensure_grad();
      gemm_nn(self.grad.data(), w_in.data.data(), x_in.grad.data(), m, outd, in);
    }
    if (w_in.requires_grad) {
      w_in.ensure_grad();
      gemm_tn(self.grad.data(), x_in.data.data(), w_in.grad.data(), outd, m, in);
    }
    if (b_in.requires_grad) {
      b_in.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t o = 0; o < outd; ++o) b_in.grad[o] += self.grad[i * outd + o];
    }
  };
  return finish(out, {x.node(), weight.node(), bias.node()}, bw, "linear");
}

namespace {

Tensor conv2d_impl(const Tensor& input, const Tensor& kernel, const Tensor* bias, int stride,
                   int padding) {
  const auto& in = node_of(input, "conv2d");
  const auto& kn = node_of(kernel, "conv2d");
  require_rank(in, 4, "conv2d input");
  require_rank(kn, 4, "conv2d kernel");
  if (stride < 1 || padding < 0) throw ContractError("conv2d: stride must be >= 1 and padding >= 0");
  if (in.shape[1] != kn.shape[1]) {
    throw DimensionError("conv2d: input channels of " + shape_str(in.shape) +
                         " do not match kernel " + shape_str(kn.shape));
  }
  ConvGeometry g{};
  g.batch = in.shape[0];
  g.cin = in.shape[1];
  g.h = in.shape[2];
  g.w = in.shape[3];
  g.cout = kn.shape[0];
  g.kh = kn.shape[2];
  g.kw = kn.shape[3];
  g.stride = stride;
  g.padding = padding;
  const std::size_t ph = g.h + 2 * static_cast<std::size_t>(padding);
  const std::size_t pw = g.w + 2 * static_cast<std::size_t>(padding);
  if (g.kh > ph || g.kw > pw) {
    throw DimensionError("conv2d: kernel " + shape_str(kn.shape) + " larger than padded input " +
                         shape_str(in.shape));
  }
  g.oh = (ph - g.kh) / static_cast<std::size_t>(stride) + 1;
  g.ow = (pw - g.kw) / static_cast<std::size_t>(stride) + 1;
  if (bias && node_of(*bias, "conv2d").data.size() != g.cout) {
    throw DimensionError("conv2d: bias " + shape_str(bias->shape()) + " does not match " +
                         std::to_string(g.cout) + " output channels");
  }

  const std::size_t rows = g.col_rows(), cols = g.col_cols();
  const std::size_t in_stride = g.cin * g.h * g.w, out_stride = g.cout * cols;
  auto out = make_node({g.batch, g.cout, g.oh, g.ow}, std::vector<double>(g.batch * out_stride, 0.0));
  std::vector<double> col(rows * cols);
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(in.data.data() + b * in_stride, g, col.data());
    double* dst = out->data.data() + b * out_stride;
    if (bias) {
      const auto& bd = bias->node()->data;
      for (std::size_t c = 0; c < g.cout; ++c) std::fill(dst + c * cols, dst + (c + 1) * cols, bd[c]);
    }
    gemm_nn(kn.data.data(), col.data(), dst, g.cout, rows, cols);
  }

  auto bw = [g, has_bias = bias != nullptr](detail::Node& self) {
    auto& x_in = *self.inputs[0];
    auto& k_in = *self.inputs[1];
    const std::size_t rows = g.col_rows(), cols = g.col_cols();
    const std::size_t in_stride = g.cin * g.h * g.w, out_stride = g.cout * cols;
    std::vector<double> col(rows * cols);
    std::vector<double> dcol(rows * cols);
    if (x_in.requires_grad) x_in.ensure_grad();
    if (k_in.requires_grad) k_in.ensure_grad();
    for (std::size_t b = 0; b < g.batch; ++b) {
      const double* gout = self.grad.data() + b * out_stride;
      if (k_in.requires_grad) {
        im2col(x_in.data.data() + b * in_stride, g, col.data());
        gemm_nt(gout, col.data(), k_in.grad.data(), g.cout, cols, rows);
      }
      if (x_in.requires_grad) {
        std::fill(dcol.begin(), dcol.end(), 0.0);
        gemm_tn(k_in.data.data(), gout, dcol.data(), rows, g.cout, cols);
        col2im_add(dcol.data(), g, x_in.grad.data() + b * in_stride);
      }
    }
    if (has_bias) {
      auto& b_in = *self.inputs[2];
      if (b_in.requires_grad) {
        b_in.ensure_grad();
        for (std::size_t b = 0; b < g.batch; ++b)
          for (std::size_t c = 0; c < g.cout; ++c) {
            const double* gp = self.grad.data() + b * out_stride + c * cols;
            double acc = 0.0;
            for (std::size_t j = 0; j < cols; ++j) acc += gp[j];
            b_in.grad[c] += acc;
          }
      }
    }
  };
  std::vector<NodePtr> inputs{input.node(), kernel.node()};
  if (bias) inputs.push_back(bias->node());
  return finish(out, std::move(inputs), bw, "conv2d");
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  return conv2d_impl(input, kernel, nullptr, stride, padding);
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int padding) {
  return conv2d_impl(input, kernel, &bias, stride, padding);
}

Tensor avg_pool2d(const Tensor& input, int kernel) {
  const auto& in = node_of(input, "avg_pool2d");
  require_rank(in, 4, "avg_pool2d");
  if (kernel < 1) throw ContractError("avg_pool2d: kernel must be >= 1");
  const std::size_t k = static_cast<std::size_t>(kernel);
  const std::size_t b = in.shape[0], c = in.shape[1], h = in.shape[2], w = in.shape[3];
  if (h % k != 0 || w % k != 0) {
    throw DimensionError("avg_pool2d: spatial size of " + shape_str(in.shape) +
                         " not divisible by kernel " + std::to_string(k));
  }
  const std::size_t oh = h / k, ow = w / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  auto out = make_node({b, c, oh, ow}, std::vector<double>(b * c * oh * ow, 0.0));
  for (std::size_t bc = 0; bc < b * c; ++bc) {
    const double* src = in.data.data() + bc * h * w;
    double* dst = out->data.data() + bc * oh * ow;
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) dst[(i / k) * ow + j / k] += src[i * w + j] * inv;
  }
  auto bw = [b, c, h, w, k, oh, ow, inv](detail::Node& self) {
    auto& x_in = *self.inputs[0];
    x_in.ensure_grad();
    for (std::size_t bc = 0; bc < b * c; ++bc) {
      const double* g = self.grad.data() + bc * oh * ow;
      double* dst = x_in.grad.data() + bc * h * w;
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) dst[i * w + j] += g[(i / k) * ow + j / k] * inv;
    }
  };
  return finish(out, {input.node()}, bw, "avg_pool2d");
}

Tensor relu(const Tensor& x) {
  const auto& xn = node_of(x, "relu");
  auto out = make_node(xn.shape, xn.data);
  for (double& v : out->data) v = v > 0.0 ? v : 0.0;
  auto bw = [](detail::Node& self) {
    auto& x_in = *self.inputs[0];
    x_in.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (x_in.data[i] > 0.0) x_in.grad[i] += self.grad[i];
  };
  return finish(out, {x.node()}, bw, "relu");
}

Tensor tanh(const Tensor& x) {
  const auto& xn = node_of(x, "tanh");
  auto out = make_node(xn.shape, xn.data);
  for (double& v : out->data) v = std::tanh(v);
  auto bw = [](detail::Node& self) {
    auto& x_in = *self.inputs[0];
    x_in.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      x_in.grad[i] += self.grad[i] * (1.0 - self.data[i] * self.data[i]);
  };
  return finish(out, {x.node()}, bw, "tanh");
}

Tensor reshape(const Tensor& x, Shape shape) {
  const auto& xn = node_of(x, "reshape");
  if (shape_numel(shape) != xn.data.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(xn.shape) + " as " + shape_str(shape));
  }
  auto out = make_node(std::move(shape), xn.data);
  auto bw = [](detail::Node& self) {
    auto& x_in = *self.inputs[0];
    x_in.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) x_in.grad[i] += self.grad[i];
  };
  return finish(out, {x.node()}, bw, "reshape");
}

Tensor flatten(const Tensor& x) {
  const auto& s = x.shape();
  if (s.empty()) throw DimensionError("flatten: scalar input");
  return reshape(x, {s[0], x.numel() / std::max<std::size_t>(s[0], 1)});
}

namespace {

template <typename Fwd, typename Bw>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Bw bwfn) {
  const auto& an = node_of(a, op);
  const auto& bn = node_of(b, op);
  if (an.shape != bn.shape) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(an.shape) + " vs " +
                         shape_str(bn.shape));
  }
  auto out = make_node(an.shape, std::vector<double>(an.data.size()));
  for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = fwd(an.data[i], bn.data[i]);
  auto bw = [bwfn](detail::Node& self) {
    auto& a_in = *self.inputs[0];
    auto& b_in = *self.inputs[1];
    if (a_in.requires_grad) a_in.ensure_grad();
    if (b_in.requires_grad) b_in.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      auto [da, db] = bwfn(a_in.data[i], b_in.data[i], self.grad[i]);
      if (a_in.requires_grad) a_in.grad[i] += da;
      if (b_in.requires_grad) b_in.grad[i] += db;
    }
  };
  return finish(out, {a.node(), b.node()}, bw, op);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double g) { return std::pair{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g) { return std::pair{g, -g}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double g) { return std::pair{g * y, g * x}; });
}

Tensor scale(const Tensor& x, double factor) {
  const auto& xn = node_of(x, "scale");
  auto out = make_node(xn.shape, xn.data);
  for (double& v : out->data) v *= factor;
  auto bw = [factor](detail::Node& self) {
    auto& x_in = *self.inputs[0];
    x_in.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) x_in.grad[i] += factor * self.grad[i];
  };
  return finish(out, {x.node()}, bw, "scale");
}

Tensor sum(const Tensor& x) {
  const auto& xn = node_of(x, "sum");
  double s = 0.0;
  for (double v : xn.data) s += v;
  auto out = make_node({}, {s});
  auto bw = [](detail::Node& self) {
    auto& x_in = *self.inputs[0];
    x_in.ensure_grad();
    for (double& g : x_in.grad) g += self.grad[0];
  };
  return finish(out, {x.node()}, bw, "sum");
}

Tensor mean(const Tensor& x) {
  const std::size_t n = x.numel();
  if (n == 0) throw ContractError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Tensor normalize_channels(const Tensor& x, std::span<const double> shift,
                          std::span<const double> divisor) {
  const auto& xn = node_of(x, "normalize_channels");
  if (shift.size() != divisor.size() || shift.empty()) {
    throw DimensionError("normalize_channels: shift/divisor length mismatch");
  }
  const std::size_t channels = shift.size();
  if (xn.shape.size() < 2) throw DimensionError("normalize_channels: input must be batched");
  // Inner block per channel: product of dims after axis 1.
  std::size_t inner = 1;
  for (std::size_t i = 2; i < xn.shape.size(); ++i) inner *= xn.shape[i];
  std::size_t per_sample = xn.shape[1] * inner;
  if (channels != 1 && xn.shape[1] != channels) {
    throw DimensionError("normalize_channels: " + std::to_string(channels) +
                         " channel statistics for input " + shape_str(xn.shape));
  }
  const std::size_t block = channels == 1 ? per_sample : inner;
  std::vector<double> inv(channels);
  for (std::size_t c = 0; c < channels; ++c) inv[c] = 1.0 / divisor[c];
  std::vector<double> sh(shift.begin(), shift.end());
  auto out = make_node(xn.shape, xn.data);
  for (std::size_t i = 0; i < out->data.size(); ++i) {
    const std::size_t c = (i % per_sample) / block;
    out->data[i] = (out->data[i] - sh[c]) * inv[c];
  }
  auto bw = [inv, per_sample, block](detail::Node& self) {
    auto& x_in = *self.inputs[0];
    x_in.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      x_in.grad[i] += self.grad[i] * inv[(i % per_sample) / block];
  };
  return finish(out, {x.node()}, bw, "normalize_channels");
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const auto& ln = node_of(logits, "softmax_cross_entropy");
  require_rank(ln, 2, "softmax_cross_entropy");
  const std::size_t batch = ln.shape[0], classes = ln.shape[1];
  if (labels.size() != batch) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + shape_str(ln.shape));
  }
  if (batch == 0) throw ContractError("softmax_cross_entropy: empty batch");
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw IndexError("softmax_cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                       std::to_string(i) + " outside [0," + std::to_string(classes) + ")");
    }
  }
  auto logp = log_softmax_rows(ln.data, batch, classes);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch; ++i) loss -= logp[i * classes + static_cast<std::size_t>(labels[i])];
  loss /= static_cast<double>(batch);
  auto out = make_node({}, {loss});
  std::vector<int> lab(labels.begin(), labels.end());
  auto bw = [logp = std::move(logp), lab = std::move(lab), batch, classes](detail::Node& self) {
    auto& l_in = *self.inputs[0];
    l_in.ensure_grad();
    const double g = self.grad[0] / static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t j = 0; j < classes; ++j) {
        double p = std::exp(logp[i * classes + j]);
        if (static_cast<int>(j) == lab[i]) p -= 1.0;
        l_in.grad[i * classes + j] += g * p;
      }
    }
  };
  return finish(out, {logits.node()}, bw, "softmax_cross_entropy");
}

Tensor kl_divergence(const Tensor& p_logits, const Tensor& q_logits) {
  const auto& pn = node_of(p_logits, "kl_divergence");
  const auto& qn = node_of(q_logits, "kl_divergence");
  if (pn.shape != qn.shape || pn.shape.size() != 2) {
    throw DimensionError("kl_divergence: shape mismatch " + shape_str(pn.shape) + " vs " +
                         shape_str(qn.shape));
  }
  const std::size_t batch = pn.shape[0], classes = pn.shape[1];
  if (batch == 0) throw ContractError("kl_divergence: empty batch");
  auto lp = log_softmax_rows(pn.data, batch, classes);
  auto lq = log_softmax_rows(qn.data, batch, classes);
  std::vector<double> row_kl(batch, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < classes; ++j) {
      const std::size_t idx = i * classes + j;
      s += std::exp(lp[idx]) * (lp[idx] - lq[idx]);
    }
    row_kl[i] = s;
    total += s;
  }
  auto out = make_node({}, {total / static_cast<double>(batch)});
  auto bw = [lp = std::move(lp), lq = std::move(lq), row_kl = std::move(row_kl), batch,
             classes](detail::Node& self) {
    auto& p_in = *self.inputs[0];
    auto& q_in = *self.inputs[1];
    const double g = self.grad[0] / static_cast<double>(batch);
    if (p_in.requires_grad) {
      p_in.ensure_grad();
      for (std::size_t i = 0; i < batch; ++i)
        for (std::size_t j = 0; j < classes; ++j) {
          const std::size_t idx = i * classes + j;
          p_in.grad[idx] += g * std::exp(lp[idx]) * ((lp[idx] - lq[idx]) - row_kl[i]);
        }
    }
    if (q_in.requires_grad) {
      q_in.ensure_grad();
      for (std::size_t idx = 0; idx < batch * classes; ++idx)
        q_in.grad[idx] += g * (std::exp(lq[idx]) - std::exp(lp[idx]));
    }
  };
  return finish(out, {p_logits.node(), q_logits.node()}, bw, "kl_divergence");
}

std::vector<double> softmax_rows(const Tensor& logits) {
  const auto& ln = node_of(logits, "softmax_rows");
  require_rank(ln, 2, "softmax_rows");
  auto lp = log_softmax_rows(ln.data, ln.shape[0], ln.shape[1]);
  for (double& v : lp) v = std::exp(v);
  return lp;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const auto& ln = node_of(logits, "argmax_rows");
  require_rank(ln, 2, "argmax_rows");
  const std::size_t rows = ln.shape[0], cols = ln.shape[1];
  std::vector<int> out(rows, 0);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* r = ln.data.data() + i * cols;
    std::size_t best = 0;
    for (std::size_t j = 1; j < cols; ++j)
      if (r[j] > r[best]) best = j;
    out[i] = static_cast<int>(best);
  }
  return out;
}

namespace {

// Reverse topological order of the graph below a root.
struct Tape {
  std::vector<detail::Node*> order;  // inputs before consumers

  explicit Tape(detail::Node* root) {
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack{{root, 0}};
    visited.insert(root);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        detail::Node* child = node->inputs[next++].get();
        if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }
};

}  // namespace

void backward(const Tensor& loss) {
  const auto& ln = node_of(loss, "backward");
  if (ln.data.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_str(ln.shape));
  }
  if (!ln.requires_grad) return;
  Tape tape(loss.node().get());
  for (detail::Node* n : tape.order) {
    if (n->backward) n->grad.assign(n->data.size(), 0.0);
  }
  detail::Node* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
  // Intermediate buffers are only needed during the sweep.
  for (detail::Node* n : tape.order) {
    if (n->backward) std::vector<double>().swap(n->grad);
  }
}

double check_gradients(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                       double fd_step) {
  Tensor x = Tensor::from_data(point.shape(), point.to_vector(), true);
  Tensor loss = f(x);
  backward(loss);
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());

  NoGradGuard no_grad;
  std::vector<double> probe = point.to_vector();
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + fd_step;
    const double up = f(Tensor::from_data(point.shape(), probe)).item();
    probe[i] = orig - fd_step;
    const double down = f(Tensor::from_data(point.shape(), probe)).item();
    probe[i] = orig;
    const double central = (up - down) / (2.0 * fd_step);
    const double err =
        std::abs(analytic[i] - central) / (std::abs(analytic[i]) + std::abs(central) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace nclab
