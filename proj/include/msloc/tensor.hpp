// Minimal N-d tensor engine with tape-based reverse-mode differentiation.
//
// Tensors are shared handles: copying a Tensor aliases the same storage, like
// most framework tensors. Operations take an optional Tape; when a tape is
// given and any input requires a gradient, the adjoint of the operation is
// recorded so that Tape::backward can replay it in reverse order.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace msloc {

using Shape = std::vector<std::size_t>;

/// Raised whenever operand extents are incompatible.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : node_(std::make_shared<detail::Node>()) {
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
    if (values.size() != shape_numel(shape))
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(values);
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  /// Direct write access; reserved for initialisation and optimiser updates.
  std::span<double> mutable_data() { return node_->data; }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.assign(node_->data.size(), 0.0); }
  void clear_grad() { node_->grad.clear(); }

  /// Deep copy of shape and data; the copy carries no gradient.
  Tensor clone() const {
    Tensor t(shape(), node_->data);
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }

  /// Copy with a different shape, detached from any tape.
  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != numel())
      throw ShapeError("cannot reshape " + shape_str(shape()) + " to " + shape_str(s));
    return Tensor(std::move(s), node_->data);
  }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Ordered record of executed differentiable operations.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  void record(const Tensor& output, std::function<void()> adjoint) {
    entries_.push_back({output.node_ptr(), std::move(adjoint)});
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and replays adjoints in reverse recorded order.
  /// Gradients accumulate into existing buffers.
  void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
      throw ShapeError("backward requires a scalar loss, got shape " +
                       (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    std::size_t end = entries_.size();
    while (end > 0 && entries_[end - 1].output.get() != loss.node()) --end;
    if (end == 0) throw std::invalid_argument("backward: loss was not produced on this tape");
    loss.node()->grad_buffer()[0] += 1.0;
    for (std::size_t i = end; i-- > 0;) entries_[i].adjoint();
  }

 private:
  struct Entry {
    std::shared_ptr<detail::Node> output;
    std::function<void()> adjoint;
  };
  std::vector<Entry> entries_;
};

/// Free-standing form of Tape::backward.
inline void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

namespace detail {

inline bool recording(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

inline void require_rank(const Tensor& t, std::size_t r, const char* op, const char* what) {
  if (t.rank() != r)
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(r) +
                     ", got " + shape_str(t.shape()));
}

// Lays out the receptive fields of one image as columns: rows index
// (channel, ky, kx), columns index output pixels.
inline void im2col(const double* img, std::size_t channels, std::size_t height, std::size_t width,
                   std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
                   std::size_t out_h, std::size_t out_w, double* col) {
  const auto ipad = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        double* row = col + ((c * kh + ky) * kw + kx) * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - ipad;
          double* dst = row + oy * out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = img + (c * height + static_cast<std::size_t>(iy)) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - ipad;
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) ? 0.0 : src[ix];
          }
        }
      }
}

inline void col2im_add(const double* col, std::size_t channels, std::size_t height, std::size_t width,
                       std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
                       std::size_t out_h, std::size_t out_w, double* img) {
  const auto ipad = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const double* row = col + ((c * kh + ky) * kw + kx) * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - ipad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
          double* dst = img + (c * height + static_cast<std::size_t>(iy)) * width;
          const double* src = row + oy * out_w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - ipad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(width)) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

/// 2-D cross-correlation over a batch×channel×height×width input.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
                     std::size_t padding, Tape* tape = nullptr) {
  detail::require_rank(input, 4, "conv2d", "input");
  detail::require_rank(kernel, 4, "conv2d", "kernel");
  detail::require_rank(bias, 1, "conv2d", "bias");
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const std::size_t batch = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t co = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != ci)
    throw ShapeError("conv2d: input has " + std::to_string(ci) + " channels but kernel " +
                     shape_str(kernel.shape()) + " expects " + std::to_string(kernel.dim(1)));
  if (bias.dim(0) != co)
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(co) + " output channels");
  if (kh > h + 2 * padding || kw > w + 2 * padding)
    throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                     shape_str(input.shape()));

  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kw) / stride + 1;
  const std::size_t krows = ci * kh * kw, pix = oh * ow;
  Tensor out(Shape{batch, co, oh, ow});

  const bool rec = detail::recording(tape, {&input, &kernel, &bias});
  auto cols = std::make_shared<std::vector<double>>(rec ? batch * krows * pix : krows * pix);

  const detail::ConstMatMap wmat(kernel.data().data(), co, krows);
  const Eigen::Map<const Eigen::VectorXd> bvec(bias.data().data(), co);
  for (std::size_t n = 0; n < batch; ++n) {
    double* col = cols->data() + (rec ? n * krows * pix : 0);
    detail::im2col(input.data().data() + n * ci * h * w, ci, h, w, kh, kw, stride, padding, oh, ow, col);
    detail::MatMap omat(out.mutable_data().data() + n * co * pix, co, pix);
    omat.noalias() = wmat * detail::ConstMatMap(col, krows, pix);
    omat.colwise() += bvec;
  }

  if (rec) {
    out.set_requires_grad();
    tape->record(out, [=, in = input, k = kernel, b = bias, o = out]() mutable {
      if (!o.has_grad()) return;
      const double* gout = o.grad().data();
      if (k.requires_grad()) {
        detail::MatMap gk(k.mutable_grad().data(), co, krows);
        for (std::size_t n = 0; n < batch; ++n)
          gk.noalias() += detail::ConstMatMap(gout + n * co * pix, co, pix) *
                          detail::ConstMatMap(cols->data() + n * krows * pix, krows, pix).transpose();
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t c = 0; c < co; ++c) {
            const double* g = gout + (n * co + c) * pix;
            gb[c] += std::accumulate(g, g + pix, 0.0);
          }
      }
      if (in.requires_grad()) {
        const detail::ConstMatMap wm(k.data().data(), co, krows);
        detail::RowMat gcol(krows, pix);
        double* gin = in.mutable_grad().data();
        for (std::size_t n = 0; n < batch; ++n) {
          gcol.noalias() = wm.transpose() * detail::ConstMatMap(gout + n * co * pix, co, pix);
          detail::col2im_add(gcol.data(), ci, h, w, kh, kw, stride, padding, oh, ow, gin + n * ci * h * w);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor relu(const Tensor& x, Tape* tape = nullptr) {
  Tensor out(x.shape());
  auto o = out.mutable_data();
  auto xd = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  if (detail::recording(tape, {&x})) {
    out.set_requires_grad();
    tape->record(out, [in = x, o = out]() mutable {
      if (!o.has_grad()) return;
      auto g = in.mutable_grad();
      auto go = o.grad();
      auto xv = in.data();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] > 0.0) g[i] += go[i];
    });
  }
  return out;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x, Tape* tape = nullptr) {
  Tensor out(x.shape());
  auto o = out.mutable_data();
  auto xd = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = sigmoid(xd[i]);
  if (detail::recording(tape, {&x})) {
    out.set_requires_grad();
    tape->record(out, [in = x, o = out]() mutable {
      if (!o.has_grad()) return;
      auto g = in.mutable_grad();
      auto go = o.grad();
      auto s = o.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * s[i] * (1.0 - s[i]);
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  Tensor out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
  if (detail::recording(tape, {&a, &b})) {
    out.set_requires_grad();
    tape->record(out, [x = a, y = b, o = out]() mutable {
      if (!o.has_grad()) return;
      auto go = o.grad();
      // Separate loops keep mul(x, x) correct: both adjoints land in the same buffer.
      if (x.requires_grad()) {
        auto gx = x.mutable_grad();
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * y[i];
      }
      if (y.requires_grad()) {
        auto gy = y.mutable_grad();
        for (std::size_t i = 0; i < go.size(); ++i) gy[i] += go[i] * x[i];
      }
    });
  }
  return out;
}

/// Sum of all elements as a rank-0 tensor.
inline Tensor sum(const Tensor& x, Tape* tape = nullptr) {
  Tensor out = Tensor::scalar(std::accumulate(x.data().begin(), x.data().end(), 0.0));
  if (detail::recording(tape, {&x})) {
    out.set_requires_grad();
    tape->record(out, [in = x, o = out]() mutable {
      if (!o.has_grad()) return;
      const double g0 = o.grad()[0];
      for (double& g : in.mutable_grad()) g += g0;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural

inline Tensor concat_channels(const std::vector<Tensor>& xs, Tape* tape = nullptr) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input list");
  for (const auto& x : xs) detail::require_rank(x, 4, "concat_channels", "every input");
  const std::size_t batch = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  std::size_t total = 0;
  for (const auto& x : xs) {
    if (x.dim(0) != batch || x.dim(2) != h || x.dim(3) != w)
      throw ShapeError("concat_channels: " + shape_str(x.shape()) + " incompatible with " +
                       shape_str(xs[0].shape()));
    total += x.dim(1);
  }
  const std::size_t plane = h * w;
  Tensor out(Shape{batch, total, h, w});
  double* o = out.mutable_data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    std::size_t offset = 0;
    for (const auto& x : xs) {
      const std::size_t len = x.dim(1) * plane;
      std::copy_n(x.data().data() + n * len, len, o + (n * total + offset) * plane);
      offset += x.dim(1);
    }
  }
  if (tape && std::any_of(xs.begin(), xs.end(), [](const Tensor& t) { return t.requires_grad(); })) {
    out.set_requires_grad();
    tape->record(out, [inputs = xs, o = out, batch, total, plane]() mutable {
      if (!o.has_grad()) return;
      const double* go = o.grad().data();
      std::size_t offset = 0;
      for (auto& x : inputs) {
        const std::size_t len = x.dim(1) * plane;
        if (x.requires_grad()) {
          double* g = x.mutable_grad().data();
          for (std::size_t n = 0; n < batch; ++n) {
            const double* src = go + (n * total + offset) * plane;
            for (std::size_t i = 0; i < len; ++i) g[n * len + i] += src[i];
          }
        }
        offset += x.dim(1);
      }
    });
  }
  return out;
}

/// Non-overlapping window average.
inline Tensor avg_pool2d(const Tensor& x, std::size_t window, Tape* tape = nullptr) {
  detail::require_rank(x, 4, "avg_pool2d", "input");
  if (window == 0) throw std::invalid_argument("avg_pool2d: window must be positive");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % window != 0)
    throw ShapeError("avg_pool2d: height " + std::to_string(h) + " not divisible by window " +
                     std::to_string(window));
  if (w % window != 0)
    throw ShapeError("avg_pool2d: width " + std::to_string(w) + " not divisible by window " +
                     std::to_string(window));
  const std::size_t oh = h / window, ow = w / window;
  const double scale = 1.0 / static_cast<double>(window * window);
  Tensor out(Shape{x.dim(0), x.dim(1), oh, ow});
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < window; ++dy)
          for (std::size_t dx = 0; dx < window; ++dx)
            acc += in[(p * h + oy * window + dy) * w + ox * window + dx];
        o[(p * oh + oy) * ow + ox] = acc * scale;
      }
  if (detail::recording(tape, {&x})) {
    out.set_requires_grad();
    tape->record(out, [inp = x, o = out, planes, h, w, oh, ow, window, scale]() mutable {
      if (!o.has_grad()) return;
      auto g = inp.mutable_grad();
      auto go = o.grad();
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t xx = 0; xx < w; ++xx)
            g[(p * h + y) * w + xx] += go[(p * oh + y / window) * ow + xx / window] * scale;
    });
  }
  return out;
}

/// Per-channel spatial mean: [b,c,h,w] -> [b,c].
inline Tensor global_avg_pool(const Tensor& x, Tape* tape = nullptr) {
  detail::require_rank(x, 4, "global_avg_pool", "input");
  const std::size_t planes = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  if (plane == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  Tensor out(Shape{x.dim(0), x.dim(1)});
  auto o = out.mutable_data();
  const double* in = x.data().data();
  for (std::size_t p = 0; p < planes; ++p)
    o[p] = std::accumulate(in + p * plane, in + (p + 1) * plane, 0.0) / static_cast<double>(plane);
  if (detail::recording(tape, {&x})) {
    out.set_requires_grad();
    tape->record(out, [inp = x, o = out, planes, plane]() mutable {
      if (!o.has_grad()) return;
      auto g = inp.mutable_grad();
      auto go = o.grad();
      const double inv = 1.0 / static_cast<double>(plane);
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < plane; ++i) g[p * plane + i] += go[p] * inv;
    });
  }
  return out;
}

/// y = x·weightᵀ + bias for x [b,n], weight [m,n], bias [m].
inline Tensor fully_connected(const Tensor& x, const Tensor& weight, const Tensor& bias, Tape* tape = nullptr) {
  detail::require_rank(x, 2, "fully_connected", "input");
  detail::require_rank(weight, 2, "fully_connected", "weight");
  detail::require_rank(bias, 1, "fully_connected", "bias");
  const std::size_t batch = x.dim(0), n = x.dim(1), m = weight.dim(0);
  if (weight.dim(1) != n)
    throw ShapeError("fully_connected: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  if (bias.dim(0) != m)
    throw ShapeError("fully_connected: bias " + shape_str(bias.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  Tensor out(Shape{batch, m});
  detail::MatMap om(out.mutable_data().data(), batch, m);
  const detail::ConstMatMap xm(x.data().data(), batch, n);
  const detail::ConstMatMap wm(weight.data().data(), m, n);
  om.noalias() = xm * wm.transpose();
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), m);
  if (detail::recording(tape, {&x, &weight, &bias})) {
    out.set_requires_grad();
    tape->record(out, [in = x, wt = weight, b = bias, o = out, batch, n, m]() mutable {
      if (!o.has_grad()) return;
      const detail::ConstMatMap go(o.grad().data(), batch, m);
      if (in.requires_grad())
        detail::MatMap(in.mutable_grad().data(), batch, n).noalias() +=
            go * detail::ConstMatMap(wt.data().data(), m, n);
      if (wt.requires_grad())
        detail::MatMap(wt.mutable_grad().data(), m, n).noalias() +=
            go.transpose() * detail::ConstMatMap(in.data().data(), batch, n);
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t r = 0; r < batch; ++r)
          for (std::size_t j = 0; j < m; ++j) gb[j] += go(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax

namespace detail {

inline void softmax_row(const double* x, double* y, std::size_t n) {
  const double mx = *std::max_element(x, x + n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += (y[i] = std::exp(x[i] - mx));
  for (std::size_t i = 0; i < n; ++i) y[i] /= z;
}

inline Tensor softmax_rows_impl(const Tensor& x, std::size_t rows, std::size_t cols, Tape* tape) {
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r)
    softmax_row(x.data().data() + r * cols, out.mutable_data().data() + r * cols, cols);
  if (recording(tape, {&x})) {
    out.set_requires_grad();
    tape->record(out, [in = x, o = out, rows, cols]() mutable {
      if (!o.has_grad()) return;
      auto g = in.mutable_grad();
      auto go = o.grad();
      auto s = o.data();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < cols; ++j) dot += go[r * cols + j] * s[r * cols + j];
        for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += s[r * cols + j] * (go[r * cols + j] - dot);
      }
    });
  }
  return out;
}

}  // namespace detail

/// Max-subtracted softmax of a vector.
inline Tensor softmax_vec(const Tensor& x, Tape* tape = nullptr) {
  detail::require_rank(x, 1, "softmax_vec", "input");
  if (x.numel() == 0) throw ShapeError("softmax_vec: empty input");
  return detail::softmax_rows_impl(x, 1, x.numel(), tape);
}

/// Row-wise softmax of a matrix.
inline Tensor softmax_rows(const Tensor& x, Tape* tape = nullptr) {
  detail::require_rank(x, 2, "softmax_rows", "input");
  if (x.dim(1) == 0) throw ShapeError("softmax_rows: empty rows");
  return detail::softmax_rows_impl(x, x.dim(0), x.dim(1), tape);
}

// ---------------------------------------------------------------------------
// Inference-only 2-D grids

/// Row-major 2-D real grid.
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  Grid(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != rows * cols) throw ShapeError("Grid: value count does not match extents");
  }

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double min() const { return *std::min_element(values.begin(), values.end()); }
  double max() const { return *std::max_element(values.begin(), values.end()); }
  bool operator==(const Grid&) const = default;
};

/// Bilinear resampling with corner-aligned sampling: output index i maps to
/// input coordinate i·(h−1)/(H−1). A target extent of 1 samples the input centre.
inline Grid bilinear_resize(const Grid& map, std::size_t target_rows, std::size_t target_cols) {
  if (map.rows == 0 || map.cols == 0) throw ShapeError("bilinear_resize: empty source map");
  if (target_rows == 0 || target_cols == 0) throw ShapeError("bilinear_resize: zero target extent");
  auto coord = [](std::size_t i, std::size_t src, std::size_t dst) {
    if (dst == 1) return 0.5 * static_cast<double>(src - 1);
    return static_cast<double>(i) * static_cast<double>(src - 1) / static_cast<double>(dst - 1);
  };
  Grid out(target_rows, target_cols);
  for (std::size_t r = 0; r < target_rows; ++r) {
    const double sy = coord(r, map.rows, target_rows);
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, map.rows - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t c = 0; c < target_cols; ++c) {
      const double sx = coord(c, map.cols, target_cols);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, map.cols - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = map(y0, x0) + fx * (map(y0, x1) - map(y0, x0));
      const double bot = map(y1, x0) + fx * (map(y1, x1) - map(y1, x0));
      out(r, c) = top + fy * (bot - top);
    }
  }
  return out;
}

}  // namespace msloc
