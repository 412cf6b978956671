#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "uniflow/error.hpp"

namespace uniflow {

/// Extents of a dense NCHW tensor.
struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  constexpr std::int64_t numel() const { return n * c * h * w; }
  constexpr std::int64_t plane() const { return h * w; }
  constexpr std::int64_t operator[](int i) const {
    return i == 0 ? n : i == 1 ? c : i == 2 ? h : w;
  }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until needed; leaves allocate eagerly
  bool requires_grad = false;
  bool leaf = true;

  std::span<double> ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Reference-counted handle to an NCHW array of doubles.
///
/// Copies share storage. Values produced by graph ops must not be mutated once
/// another recorded op has consumed them; parameters are updated in place only
/// between graphs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false) { return filled(s, 0.0, requires_grad); }

  static Tensor filled(Shape s, double v, bool requires_grad = false) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw ShapeError("negative extent " + s.str());
    auto node = std::make_shared<detail::Node>();
    node->shape = s;
    node->data.assign(static_cast<std::size_t>(s.numel()), v);
    node->requires_grad = requires_grad;
    if (requires_grad) node->ensure_grad();
    return Tensor(std::move(node));
  }

  static Tensor from(Shape s, std::vector<double> values, bool requires_grad = false) {
    if (static_cast<std::int64_t>(values.size()) != s.numel()) {
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                       s.str());
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = s;
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    if (requires_grad) node->ensure_grad();
    return Tensor(std::move(node));
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return filled({1, 1, 1, 1}, v, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return node_->shape.numel(); }

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }

  /// Gradient buffer; empty span when no gradient has been accumulated.
  std::span<double> grad() { return node_->grad; }
  std::span<const double> grad() const { return node_->grad; }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }

  void zero_grad() {
    if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
    return node_->data[0];
  }

  double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    const Shape& s = shape();
    return node_->data[static_cast<std::size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
  }
  double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    const Shape& s = shape();
    return node_->data[static_cast<std::size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
  }

  /// Deep copy, cut from any graph, without gradient tracking.
  Tensor detach() const { return from(shape(), node_->data, false); }

  /// Deep copy of a sub-range of the batch dimension.
  Tensor slice_batch(std::int64_t begin, std::int64_t count) const {
    const Shape& s = shape();
    if (begin < 0 || count < 0 || begin + count > s.n) throw ShapeError("batch slice out of range");
    const auto per = static_cast<std::size_t>(s.c * s.h * s.w);
    std::vector<double> out(node_->data.begin() + static_cast<std::ptrdiff_t>(begin * per),
                            node_->data.begin() + static_cast<std::ptrdiff_t>((begin + count) * per));
    return from({count, s.c, s.h, s.w}, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(node_->data.begin(), node_->data.end(),
                       [](double v) { return std::isfinite(v); });
  }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Stacks equally shaped tensors along the batch dimension.
inline Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("stack_batch of nothing");
  Shape s = items.front().shape();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(s.numel()) * items.size());
  std::int64_t n = 0;
  for (const Tensor& t : items) {
    const Shape& ts = t.shape();
    if (ts.c != s.c || ts.h != s.h || ts.w != s.w) {
      throw ShapeError("stack_batch shape mismatch " + ts.str() + " vs " + s.str());
    }
    out.insert(out.end(), t.data().begin(), t.data().end());
    n += ts.n;
  }
  return Tensor::from({n, s.c, s.h, s.w}, std::move(out));
}

enum class OpKind {
  conv2d,
  linear,
  group_norm,
  normalize,
  gelu,
  sigmoid,
  tanh,
  spatial_mean,
  upsample,
  concat,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  l1_loss,
  sum,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::conv2d: return "conv2d";
    case OpKind::linear: return "linear";
    case OpKind::group_norm: return "group_norm";
    case OpKind::normalize: return "normalize";
    case OpKind::gelu: return "gelu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::spatial_mean: return "spatial_mean";
    case OpKind::upsample: return "upsample";
    case OpKind::concat: return "concat";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::l1_loss: return "l1_loss";
    case OpKind::sum: return "sum";
  }
  return "?";
}

/// Tape of executed ops for one forward pass.
///
/// Ops append records in execution order; backward() replays them in exact
/// reverse order. A graph may be differentiated once. With recording
/// disabled, ops compute values only (inference).
class Graph {
 public:
  using Backward = std::function<void(const detail::Node& out)>;

  struct Record {
    OpKind kind;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    std::shared_ptr<detail::Node> output;
    Backward backward;
  };

  Graph() = default;
  explicit Graph(bool recording) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  bool consumed() const { return consumed_; }
  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }

  /// Creates the output of an op; it requires grad when any input does and
  /// the graph is recording.
  Tensor make_output(Shape s, std::initializer_list<const Tensor*> inputs) {
    Tensor out = Tensor::zeros(s, false);
    if (recording_) {
      for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) {
          out.node()->requires_grad = true;
          break;
        }
      }
    }
    out.node()->leaf = false;
    return out;
  }

  /// Registers the backward closure of an op whose output tracks gradients.
  void record(OpKind kind, const Tensor& out, std::vector<Tensor> inputs, Backward fn) {
    if (!out.requires_grad()) return;
    if (consumed_) throw GraphError("graph already consumed by backward(); record a new one");
    Record r{kind, {}, out.node_ptr(), std::move(fn)};
    r.inputs.reserve(inputs.size());
    for (auto& t : inputs) r.inputs.push_back(t.node_ptr());
    records_.push_back(std::move(r));
  }

  /// Reverse-mode sweep from a single-element loss. Gradients accumulate into
  /// every leaf that requires grad; intermediate buffers are released as soon
  /// as their op has been processed.
  void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw ShapeError("backward() needs a scalar loss, got " + loss.shape().str());
    if (consumed_) throw GraphError("graph consumed twice; re-run the forward pass first");
    consumed_ = true;
    if (!loss.requires_grad()) return;
    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      detail::Node& out = *it->output;
      if (out.grad.empty()) continue;
      it->backward(out);
      if (!out.leaf) std::vector<double>().swap(out.grad);
    }
    records_.clear();
  }

 private:
  std::vector<Record> records_;
  bool recording_ = true;
  bool consumed_ = false;
};

namespace detail {

// Gradient sink of an op input, or nullptr when the input needs no gradient.
inline double* grad_sink(const Tensor& t) {
  if (!t.requires_grad()) return nullptr;
  return t.node()->ensure_grad().data();
}

inline void require_finite(const Tensor& t, OpKind kind) {
  if (!t.all_finite()) {
    throw NumericalError(std::string("non-finite value produced by ") + op_name(kind) + " output " +
                         t.shape().str());
  }
}

}  // namespace detail

}  // namespace uniflow
