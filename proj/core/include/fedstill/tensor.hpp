#pragma once

#include <cstddef>
#include <initializer_list>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedstill::tensor {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  // Value of a single-element tensor.
  double item() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) noexcept { requires_grad_ = on; }

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Shape shape_;
  std::vector<double> values_;
  bool requires_grad_ = false;
};

enum class OpKind {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kMatmul,
  kConv2d,
  kRelu,
  kSigmoid,
  kLog,
  kSum,
  kMean,
  kConcat,
  kReshape,
  kEmbedLookup,
  kClamp,
};

std::string_view op_name(OpKind kind);

// Per-op parameters. Only the fields relevant to an op are read.
struct OpAttrs {
  std::optional<std::size_t> axis;       // kSum (nullopt = all), kConcat
  double lo = 0.0;                       // kClamp
  double hi = 0.0;                       // kClamp
  double factor = 1.0;                   // kScale
  Shape shape;                           // kReshape
  std::vector<std::size_t> indices;      // kEmbedLookup
};

struct NodeId {
  std::size_t value = 0;
  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

using Gradients = std::map<NodeId, Tensor>;

// Records primitive operations in execution order. Inputs of a node always
// have smaller ids than the node itself, so the record is topologically sorted.
//
// Shape rules:
//   add/sub/mul/div  equal shapes, or either side a single element; add also
//                    accepts a rank-1 rhs of length lhs.dim(0) (row bias)
//   matmul           [m,k] x [k,n] -> [m,n]
//   conv2d           x [N,Cin,H,W], w [Cout,Cin,k,k] (k odd), optional bias
//                    [Cout]; stride 1, zero padding k/2 -> [N,Cout,H,W]
//   sum              over one axis, or over everything when axis is unset
//   mean             over everything
//   concat           along attrs.axis; other dims must agree
//   embed_lookup     table [V, ...], gathers rows attrs.indices
class Tape {
 public:
  struct Node {
    OpKind kind = OpKind::kLeaf;
    std::vector<NodeId> inputs;
    OpAttrs attrs;
    Tensor value;
    bool requires_grad = false;
  };

  NodeId leaf(Tensor value);
  NodeId constant(Tensor value);
  NodeId apply(OpKind kind, std::span<const NodeId> inputs, OpAttrs attrs = {});

  NodeId add(NodeId a, NodeId b) { return binary(OpKind::kAdd, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary(OpKind::kSub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return binary(OpKind::kMul, a, b); }
  NodeId div(NodeId a, NodeId b) { return binary(OpKind::kDiv, a, b); }
  NodeId matmul(NodeId a, NodeId b) { return binary(OpKind::kMatmul, a, b); }
  NodeId conv2d(NodeId x, NodeId w);
  NodeId conv2d(NodeId x, NodeId w, NodeId bias);
  NodeId scale(NodeId x, double factor);
  NodeId relu(NodeId x) { return unary(OpKind::kRelu, x); }
  NodeId sigmoid(NodeId x) { return unary(OpKind::kSigmoid, x); }
  NodeId log(NodeId x) { return unary(OpKind::kLog, x); }
  NodeId sum(NodeId x, std::optional<std::size_t> axis = std::nullopt);
  NodeId mean(NodeId x) { return unary(OpKind::kMean, x); }
  NodeId concat(std::span<const NodeId> parts, std::size_t axis);
  NodeId reshape(NodeId x, Shape shape);
  NodeId embed_lookup(NodeId table, std::vector<std::size_t> indices);
  NodeId clamp(NodeId x, double lo, double hi);

  const Tensor& value(NodeId id) const { return nodes_.at(id.value).value; }
  const Node& node(NodeId id) const { return nodes_.at(id.value); }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  NodeId unary(OpKind kind, NodeId x);
  NodeId binary(OpKind kind, NodeId a, NodeId b);

  std::vector<Node> nodes_;
};

// Reverse sweep from a single-element loss. Returns a gradient for every leaf
// that requires grad; leaves the loss does not depend on get zeros.
Gradients backward(const Tape& tape, NodeId loss);

}  // namespace fedstill::tensor
