#include "fedstill/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fedstill/error.hpp"

namespace fedstill::tensor {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)), values_(std::move(values)), requires_grad_(requires_grad) {
  if (shape_size(shape_) != values_.size()) {
    fail(ErrorCode::kShapeMismatch, "shape " + shape_str(shape_) + " holds " +
                                        std::to_string(shape_size(shape_)) + " values, got " +
                                        std::to_string(values_.size()));
  }
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
  const auto n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

double Tensor::item() const {
  if (values_.size() != 1) fail(ErrorCode::kNotScalar, "tensor of shape " + shape_str(shape_));
  return values_[0];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kScale: return "scale";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kLog: return "log";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kConcat: return "concat";
    case OpKind::kReshape: return "reshape";
    case OpKind::kEmbedLookup: return "embed_lookup";
    case OpKind::kClamp: return "clamp";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_error(OpKind kind, const std::vector<const Tensor*>& in) {
  std::string msg(op_name(kind));
  msg += " got";
  for (const auto* t : in) msg += " " + shape_str(t->shape());
  fail(ErrorCode::kShapeMismatch, msg);
}

enum class Broadcast { kSame, kLhsScalar, kRhsScalar, kRowBias };

Broadcast classify(OpKind kind, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.size() == 1) return Broadcast::kRhsScalar;
  if (a.size() == 1) return Broadcast::kLhsScalar;
  if (kind == OpKind::kAdd && b.rank() == 1 && a.rank() >= 1 && b.dim(0) == a.dim(0)) {
    return Broadcast::kRowBias;
  }
  shape_error(kind, {&a, &b});
}

template <typename F>
Tensor elementwise(OpKind kind, const Tensor& a, const Tensor& b, F f) {
  const auto mode = classify(kind, a, b);
  const bool lhs_out = mode != Broadcast::kLhsScalar;
  Tensor out = Tensor::zeros(lhs_out ? a.shape() : b.shape());
  auto o = out.values();
  const auto av = a.values();
  const auto bv = b.values();
  switch (mode) {
    case Broadcast::kSame:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(av[i], bv[i]);
      break;
    case Broadcast::kRhsScalar:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(av[i], bv[0]);
      break;
    case Broadcast::kLhsScalar:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(av[0], bv[i]);
      break;
    case Broadcast::kRowBias: {
      const std::size_t inner = a.size() / a.dim(0);
      for (std::size_t r = 0; r < a.dim(0); ++r)
        for (std::size_t j = 0; j < inner; ++j) o[r * inner + j] = f(av[r * inner + j], bv[r]);
      break;
    }
  }
  return out;
}

// Reduces a gradient shaped like the broadcast output back to an operand.
Tensor unbroadcast(const Tensor& g, const Tensor& operand, Broadcast mode, bool is_rhs) {
  const bool collapsed = (is_rhs && (mode == Broadcast::kRhsScalar || mode == Broadcast::kRowBias)) ||
                         (!is_rhs && mode == Broadcast::kLhsScalar);
  if (!collapsed || operand.shape() == g.shape()) return g;
  Tensor out = Tensor::zeros(operand.shape());
  const auto gv = g.values();
  if (operand.size() == 1) {
    double s = 0.0;
    for (double v : gv) s += v;
    out[0] = s;
    return out;
  }
  const std::size_t rows = operand.size();
  const std::size_t inner = g.size() / rows;
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < inner; ++j) s += gv[r * inner + j];
    out[r] = s;
  }
  return out;
}

void matmul_into(std::span<const double> a, std::span<const double> b, std::span<double> out,
                 std::size_t m, std::size_t k, std::size_t n) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

struct ConvDims {
  std::size_t n, cin, h, w, cout, k;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor* bias) {
  const bool ok = x.rank() == 4 && w.rank() == 4 && w.dim(1) == x.dim(1) && w.dim(2) == w.dim(3) &&
                  w.dim(2) % 2 == 1 && (bias == nullptr || (bias->rank() == 1 && bias->dim(0) == w.dim(0)));
  if (!ok) {
    std::vector<const Tensor*> in{&x, &w};
    if (bias) in.push_back(bias);
    shape_error(OpKind::kConv2d, in);
  }
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2)};
}

// Visits every (output row, input row, column range) overlap for one kernel tap.
template <typename F>
void for_each_tap_row(const ConvDims& d, std::size_t ky, std::size_t kx, F f) {
  const auto pad = static_cast<std::ptrdiff_t>(d.k / 2);
  const auto dy = static_cast<std::ptrdiff_t>(ky) - pad;
  const auto dx = static_cast<std::ptrdiff_t>(kx) - pad;
  const auto h = static_cast<std::ptrdiff_t>(d.h);
  const auto w = static_cast<std::ptrdiff_t>(d.w);
  const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy), y1 = std::min(h, h - dy);
  const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx), x1 = std::min(w, w - dx);
  if (x1 <= x0) return;
  for (std::ptrdiff_t y = y0; y < y1; ++y) {
    f(static_cast<std::size_t>(y * w + x0), static_cast<std::size_t>((y + dy) * w + x0 + dx),
      static_cast<std::size_t>(x1 - x0));
  }
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias) {
  const auto d = conv_dims(x, w, bias);
  const std::size_t plane = d.h * d.w;
  Tensor out = Tensor::zeros({d.n, d.cout, d.h, d.w});
  auto o = out.values();
  const auto xv = x.values();
  const auto wv = w.values();
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t co = 0; co < d.cout; ++co) {
      double* op = o.data() + (n * d.cout + co) * plane;
      if (bias) std::fill(op, op + plane, (*bias)[co]);
      for (std::size_t ci = 0; ci < d.cin; ++ci) {
        const double* xp = xv.data() + (n * d.cin + ci) * plane;
        for (std::size_t ky = 0; ky < d.k; ++ky) {
          for (std::size_t kx = 0; kx < d.k; ++kx) {
            const double wt = wv[((co * d.cin + ci) * d.k + ky) * d.k + kx];
            for_each_tap_row(d, ky, kx, [&](std::size_t oi, std::size_t xi, std::size_t len) {
              double* dst = op + oi;
              const double* src = xp + xi;
              for (std::size_t j = 0; j < len; ++j) dst[j] += wt * src[j];
            });
          }
        }
      }
    }
  }
  return out;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor* bias, const Tensor& g,
                     Tensor* gx, Tensor* gw, Tensor* gb) {
  const auto d = conv_dims(x, w, bias);
  const std::size_t plane = d.h * d.w;
  const auto xv = x.values();
  const auto wv = w.values();
  const auto gv = g.values();
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t co = 0; co < d.cout; ++co) {
      const double* gp = gv.data() + (n * d.cout + co) * plane;
      if (gb) {
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += gp[i];
        (*gb)[co] += s;
      }
      for (std::size_t ci = 0; ci < d.cin; ++ci) {
        const double* xp = xv.data() + (n * d.cin + ci) * plane;
        double* gxp = gx ? gx->values().data() + (n * d.cin + ci) * plane : nullptr;
        for (std::size_t ky = 0; ky < d.k; ++ky) {
          for (std::size_t kx = 0; kx < d.k; ++kx) {
            const std::size_t widx = ((co * d.cin + ci) * d.k + ky) * d.k + kx;
            const double wt = wv[widx];
            double acc = 0.0;
            for_each_tap_row(d, ky, kx, [&](std::size_t oi, std::size_t xi, std::size_t len) {
              const double* go = gp + oi;
              if (gw) {
                const double* src = xp + xi;
                for (std::size_t j = 0; j < len; ++j) acc += go[j] * src[j];
              }
              if (gxp) {
                double* dst = gxp + xi;
                for (std::size_t j = 0; j < len; ++j) dst[j] += wt * go[j];
              }
            });
            if (gw) (*gw)[widx] += acc;
          }
        }
      }
    }
  }
}

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

double logistic(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

void accumulate(std::vector<std::optional<Tensor>>& grads, NodeId id, Tensor g) {
  auto& slot = grads[id.value];
  if (!slot) {
    slot = std::move(g);
    return;
  }
  auto dst = slot->values();
  const auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

NodeId Tape::leaf(Tensor value) {
  const bool rg = value.requires_grad();
  nodes_.push_back(Node{OpKind::kLeaf, {}, {}, std::move(value), rg});
  return NodeId{nodes_.size() - 1};
}

NodeId Tape::constant(Tensor value) {
  value.set_requires_grad(false);
  return leaf(std::move(value));
}

NodeId Tape::unary(OpKind kind, NodeId x) {
  const NodeId in[] = {x};
  return apply(kind, in);
}

NodeId Tape::binary(OpKind kind, NodeId a, NodeId b) {
  const NodeId in[] = {a, b};
  return apply(kind, in);
}

NodeId Tape::conv2d(NodeId x, NodeId w) {
  const NodeId in[] = {x, w};
  return apply(OpKind::kConv2d, in);
}

NodeId Tape::conv2d(NodeId x, NodeId w, NodeId bias) {
  const NodeId in[] = {x, w, bias};
  return apply(OpKind::kConv2d, in);
}

NodeId Tape::scale(NodeId x, double factor) {
  const NodeId in[] = {x};
  OpAttrs attrs;
  attrs.factor = factor;
  return apply(OpKind::kScale, in, std::move(attrs));
}

NodeId Tape::sum(NodeId x, std::optional<std::size_t> axis) {
  const NodeId in[] = {x};
  OpAttrs attrs;
  attrs.axis = axis;
  return apply(OpKind::kSum, in, std::move(attrs));
}

NodeId Tape::concat(std::span<const NodeId> parts, std::size_t axis) {
  OpAttrs attrs;
  attrs.axis = axis;
  return apply(OpKind::kConcat, parts, std::move(attrs));
}

NodeId Tape::reshape(NodeId x, Shape shape) {
  const NodeId in[] = {x};
  OpAttrs attrs;
  attrs.shape = std::move(shape);
  return apply(OpKind::kReshape, in, std::move(attrs));
}

NodeId Tape::embed_lookup(NodeId table, std::vector<std::size_t> indices) {
  const NodeId in[] = {table};
  OpAttrs attrs;
  attrs.indices = std::move(indices);
  return apply(OpKind::kEmbedLookup, in, std::move(attrs));
}

NodeId Tape::clamp(NodeId x, double lo, double hi) {
  const NodeId in[] = {x};
  OpAttrs attrs;
  attrs.lo = lo;
  attrs.hi = hi;
  return apply(OpKind::kClamp, in, std::move(attrs));
}

NodeId Tape::apply(OpKind kind, std::span<const NodeId> inputs, OpAttrs attrs) {
  std::vector<const Tensor*> in;
  bool rg = false;
  for (const auto id : inputs) {
    const auto& n = nodes_.at(id.value);
    in.push_back(&n.value);
    rg = rg || n.requires_grad;
  }
  const auto expect_arity = [&](std::size_t lo, std::size_t hi) {
    if (in.size() < lo || in.size() > hi) {
      fail(ErrorCode::kShapeMismatch, std::string(op_name(kind)) + " takes " + std::to_string(lo) +
                                          ".." + std::to_string(hi) + " inputs, got " +
                                          std::to_string(in.size()));
    }
  };

  Tensor out;
  switch (kind) {
    case OpKind::kLeaf:
      fail(ErrorCode::kShapeMismatch, "leaf nodes are created with Tape::leaf");
    case OpKind::kAdd:
      expect_arity(2, 2);
      out = elementwise(kind, *in[0], *in[1], [](double a, double b) { return a + b; });
      break;
    case OpKind::kSub:
      expect_arity(2, 2);
      out = elementwise(kind, *in[0], *in[1], [](double a, double b) { return a - b; });
      break;
    case OpKind::kMul:
      expect_arity(2, 2);
      out = elementwise(kind, *in[0], *in[1], [](double a, double b) { return a * b; });
      break;
    case OpKind::kDiv:
      expect_arity(2, 2);
      out = elementwise(kind, *in[0], *in[1], [](double a, double b) { return a / b; });
      break;
    case OpKind::kScale: {
      expect_arity(1, 1);
      out = *in[0];
      for (double& v : out.values()) v *= attrs.factor;
      break;
    }
    case OpKind::kMatmul: {
      expect_arity(2, 2);
      const auto& a = *in[0];
      const auto& b = *in[1];
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_error(kind, in);
      out = Tensor::zeros({a.dim(0), b.dim(1)});
      matmul_into(a.values(), b.values(), out.values(), a.dim(0), a.dim(1), b.dim(1));
      break;
    }
    case OpKind::kConv2d:
      expect_arity(2, 3);
      out = conv2d_forward(*in[0], *in[1], in.size() == 3 ? in[2] : nullptr);
      break;
    case OpKind::kRelu:
      expect_arity(1, 1);
      out = *in[0];
      for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
      break;
    case OpKind::kSigmoid:
      expect_arity(1, 1);
      out = *in[0];
      for (double& v : out.values()) v = logistic(v);
      break;
    case OpKind::kLog:
      expect_arity(1, 1);
      out = *in[0];
      for (double& v : out.values()) v = std::log(v);
      break;
    case OpKind::kSum: {
      expect_arity(1, 1);
      const auto& x = *in[0];
      if (!attrs.axis) {
        double s = 0.0;
        for (double v : x.values()) s += v;
        out = Tensor::scalar(s);
        break;
      }
      if (*attrs.axis >= x.rank()) shape_error(kind, in);
      const auto sp = split_at(x.shape(), *attrs.axis);
      Shape shape = x.shape();
      shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(*attrs.axis));
      if (shape.empty()) shape = {1};
      out = Tensor::zeros(shape);
      const auto xv = x.values();
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t e = 0; e < sp.extent; ++e)
          for (std::size_t i = 0; i < sp.inner; ++i)
            out[o * sp.inner + i] += xv[(o * sp.extent + e) * sp.inner + i];
      break;
    }
    case OpKind::kMean: {
      expect_arity(1, 1);
      const auto& x = *in[0];
      if (x.size() == 0) shape_error(kind, in);
      double s = 0.0;
      for (double v : x.values()) s += v;
      out = Tensor::scalar(s / static_cast<double>(x.size()));
      break;
    }
    case OpKind::kConcat: {
      expect_arity(1, in.size());
      const auto axis = attrs.axis.value_or(0);
      Shape shape = in[0]->shape();
      if (axis >= shape.size()) shape_error(kind, in);
      shape[axis] = 0;
      for (const auto* t : in) {
        if (t->rank() != shape.size()) shape_error(kind, in);
        for (std::size_t i = 0; i < shape.size(); ++i)
          if (i != axis && t->dim(i) != shape[i]) shape_error(kind, in);
        shape[axis] += t->dim(axis);
      }
      out = Tensor::zeros(shape);
      const auto osp = split_at(shape, axis);
      std::size_t offset = 0;
      for (const auto* t : in) {
        const auto sp = split_at(t->shape(), axis);
        const auto tv = t->values();
        for (std::size_t o = 0; o < sp.outer; ++o)
          std::copy_n(tv.data() + o * sp.extent * sp.inner, sp.extent * sp.inner,
                      out.values().data() + (o * osp.extent + offset) * osp.inner);
        offset += sp.extent;
      }
      break;
    }
    case OpKind::kReshape:
      expect_arity(1, 1);
      if (shape_size(attrs.shape) != in[0]->size()) shape_error(kind, in);
      out = Tensor(attrs.shape, std::vector<double>(in[0]->values().begin(), in[0]->values().end()));
      break;
    case OpKind::kEmbedLookup: {
      expect_arity(1, 1);
      const auto& table = *in[0];
      if (table.rank() < 1) shape_error(kind, in);
      const std::size_t row = table.size() / std::max<std::size_t>(table.dim(0), 1);
      Shape shape = table.shape();
      shape[0] = attrs.indices.size();
      out = Tensor::zeros(shape);
      for (std::size_t r = 0; r < attrs.indices.size(); ++r) {
        if (attrs.indices[r] >= table.dim(0)) {
          fail(ErrorCode::kShapeMismatch, "embed_lookup index " + std::to_string(attrs.indices[r]) +
                                              " out of range for " + shape_str(table.shape()));
        }
        std::copy_n(table.values().data() + attrs.indices[r] * row, row, out.values().data() + r * row);
      }
      break;
    }
    case OpKind::kClamp:
      expect_arity(1, 1);
      out = *in[0];
      for (double& v : out.values()) v = std::clamp(v, attrs.lo, attrs.hi);
      break;
  }
  if (!out.all_finite()) {
    fail(ErrorCode::kNonFiniteValue, std::string(op_name(kind)) + " produced a non-finite value");
  }
  out.set_requires_grad(false);
  nodes_.push_back(Node{kind, std::vector<NodeId>(inputs.begin(), inputs.end()), std::move(attrs),
                        std::move(out), rg});
  return NodeId{nodes_.size() - 1};
}

Gradients backward(const Tape& tape, NodeId loss) {
  const auto& root = tape.value(loss);
  if (root.size() != 1) fail(ErrorCode::kNotScalar, "loss has shape " + shape_str(root.shape()));

  std::vector<std::optional<Tensor>> grads(tape.size());
  grads[loss.value] = Tensor::filled(root.shape(), 1.0);

  for (std::size_t idx = loss.value + 1; idx-- > 0;) {
    const auto& node = tape.node(NodeId{idx});
    if (!grads[idx] || !node.requires_grad || node.kind == OpKind::kLeaf) continue;
    const Tensor& g = *grads[idx];
    const auto gv = g.values();
    const auto& ins = node.inputs;
    const auto needs = [&](std::size_t i) { return tape.node(ins[i]).requires_grad; };
    const auto val = [&](std::size_t i) -> const Tensor& { return tape.value(ins[i]); };

    switch (node.kind) {
      case OpKind::kLeaf:
        break;
      case OpKind::kAdd:
      case OpKind::kSub: {
        const auto mode = classify(node.kind, val(0), val(1));
        if (needs(0)) accumulate(grads, ins[0], unbroadcast(g, val(0), mode, false));
        if (needs(1)) {
          Tensor gb = unbroadcast(g, val(1), mode, true);
          if (node.kind == OpKind::kSub)
            for (double& v : gb.values()) v = -v;
          accumulate(grads, ins[1], std::move(gb));
        }
        break;
      }
      case OpKind::kMul:
      case OpKind::kDiv: {
        const auto& a = val(0);
        const auto& b = val(1);
        const auto mode = classify(node.kind, a, b);
        const auto at = [&](const Tensor& t, std::size_t i) { return t.size() == 1 ? t[0] : t[i]; };
        Tensor ga = Tensor::zeros(g.shape());
        Tensor gb = Tensor::zeros(g.shape());
        for (std::size_t i = 0; i < gv.size(); ++i) {
          const double av = at(a, i), bv = at(b, i);
          if (node.kind == OpKind::kMul) {
            ga[i] = gv[i] * bv;
            gb[i] = gv[i] * av;
          } else {
            ga[i] = gv[i] / bv;
            gb[i] = -gv[i] * av / (bv * bv);
          }
        }
        if (needs(0)) accumulate(grads, ins[0], unbroadcast(ga, a, mode, false));
        if (needs(1)) accumulate(grads, ins[1], unbroadcast(gb, b, mode, true));
        break;
      }
      case OpKind::kScale: {
        Tensor gx = g;
        for (double& v : gx.values()) v *= node.attrs.factor;
        accumulate(grads, ins[0], std::move(gx));
        break;
      }
      case OpKind::kMatmul: {
        const auto& a = val(0);
        const auto& b = val(1);
        const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
        if (needs(0)) {
          // dA = G B^T
          Tensor ga = Tensor::zeros(a.shape());
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += gv[i * n + j] * b[p * n + j];
              ga[i * k + p] = s;
            }
          accumulate(grads, ins[0], std::move(ga));
        }
        if (needs(1)) {
          // dB = A^T G
          Tensor gb = Tensor::zeros(b.shape());
          auto gbv = gb.values();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double av = a[i * k + p];
              double* dst = gbv.data() + p * n;
              const double* src = gv.data() + i * n;
              for (std::size_t j = 0; j < n; ++j) dst[j] += av * src[j];
            }
          accumulate(grads, ins[1], std::move(gb));
        }
        break;
      }
      case OpKind::kConv2d: {
        const bool has_bias = ins.size() == 3;
        std::optional<Tensor> gx, gw, gbias;
        if (needs(0)) gx = Tensor::zeros(val(0).shape());
        if (needs(1)) gw = Tensor::zeros(val(1).shape());
        if (has_bias && needs(2)) gbias = Tensor::zeros(val(2).shape());
        conv2d_backward(val(0), val(1), has_bias ? &val(2) : nullptr, g, gx ? &*gx : nullptr,
                        gw ? &*gw : nullptr, gbias ? &*gbias : nullptr);
        if (gx) accumulate(grads, ins[0], std::move(*gx));
        if (gw) accumulate(grads, ins[1], std::move(*gw));
        if (gbias) accumulate(grads, ins[2], std::move(*gbias));
        break;
      }
      case OpKind::kRelu: {
        Tensor gx = g;
        const auto& x = val(0);
        for (std::size_t i = 0; i < gx.size(); ++i)
          if (x[i] <= 0.0) gx[i] = 0.0;
        accumulate(grads, ins[0], std::move(gx));
        break;
      }
      case OpKind::kSigmoid: {
        Tensor gx = g;
        const auto& y = node.value;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= y[i] * (1.0 - y[i]);
        accumulate(grads, ins[0], std::move(gx));
        break;
      }
      case OpKind::kLog: {
        Tensor gx = g;
        const auto& x = val(0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] /= x[i];
        accumulate(grads, ins[0], std::move(gx));
        break;
      }
      case OpKind::kSum: {
        const auto& x = val(0);
        Tensor gx = Tensor::zeros(x.shape());
        if (!node.attrs.axis) {
          std::fill(gx.values().begin(), gx.values().end(), gv[0]);
        } else {
          const auto sp = split_at(x.shape(), *node.attrs.axis);
          for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t e = 0; e < sp.extent; ++e)
              for (std::size_t i = 0; i < sp.inner; ++i)
                gx[(o * sp.extent + e) * sp.inner + i] = gv[o * sp.inner + i];
        }
        accumulate(grads, ins[0], std::move(gx));
        break;
      }
      case OpKind::kMean: {
        const auto& x = val(0);
        accumulate(grads, ins[0], Tensor::filled(x.shape(), gv[0] / static_cast<double>(x.size())));
        break;
      }
      case OpKind::kConcat: {
        const auto axis = node.attrs.axis.value_or(0);
        const auto osp = split_at(g.shape(), axis);
        std::size_t offset = 0;
        for (std::size_t p = 0; p < ins.size(); ++p) {
          const auto& t = val(p);
          const auto sp = split_at(t.shape(), axis);
          if (needs(p)) {
            Tensor gp = Tensor::zeros(t.shape());
            for (std::size_t o = 0; o < sp.outer; ++o)
              std::copy_n(gv.data() + (o * osp.extent + offset) * osp.inner, sp.extent * sp.inner,
                          gp.values().data() + o * sp.extent * sp.inner);
            accumulate(grads, ins[p], std::move(gp));
          }
          offset += sp.extent;
        }
        break;
      }
      case OpKind::kReshape:
        accumulate(grads, ins[0], Tensor(val(0).shape(), std::vector<double>(gv.begin(), gv.end())));
        break;
      case OpKind::kEmbedLookup: {
        const auto& table = val(0);
        const std::size_t row = table.size() / std::max<std::size_t>(table.dim(0), 1);
        Tensor gt = Tensor::zeros(table.shape());
        for (std::size_t r = 0; r < node.attrs.indices.size(); ++r) {
          double* dst = gt.values().data() + node.attrs.indices[r] * row;
          for (std::size_t j = 0; j < row; ++j) dst[j] += gv[r * row + j];
        }
        accumulate(grads, ins[0], std::move(gt));
        break;
      }
      case OpKind::kClamp: {
        Tensor gx = g;
        const auto& x = val(0);
        for (std::size_t i = 0; i < gx.size(); ++i)
          if (x[i] < node.attrs.lo || x[i] > node.attrs.hi) gx[i] = 0.0;
        accumulate(grads, ins[0], std::move(gx));
        break;
      }
    }
  }

  Gradients out;
  for (std::size_t idx = 0; idx < tape.size(); ++idx) {
    const auto& node = tape.node(NodeId{idx});
    if (node.kind != OpKind::kLeaf || !node.requires_grad) continue;
    out.emplace(NodeId{idx}, grads[idx] ? std::move(*grads[idx]) : Tensor::zeros(node.value.shape()));
  }
  return out;
}

}  // namespace fedstill::tensor
