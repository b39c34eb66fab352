#pragma once

// Central finite-difference checks for the tape. Shared by the unit and
// acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fedstill/losses.hpp"
#include "fedstill/random.hpp"
#include "fedstill/tensor.hpp"

namespace fedstill::check {

using tensor::NodeId;
using tensor::Shape;
using tensor::Tape;
using tensor::Tensor;

// Builds a single-element loss from the leaves it is handed.
using GraphFn = std::function<NodeId(Tape&, std::span<const NodeId>)>;

struct GradCase {
  std::string name;
  std::vector<Tensor> inputs;
  GraphFn build;
};

struct GradReport {
  double worst = 0.0;  // largest |a - n| / max(|a|, |n|, floor)
  std::size_t checked = 0;
};

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdRelTol = 1e-4;
// Denominator floor: gradients that are zero analytically come out of the
// difference quotient at roughly h^2, not exactly 0.
inline constexpr double kFdFloor = 1e-3;

inline double eval_loss(const GraphFn& build, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<NodeId> ids;
  for (const auto& t : inputs) ids.push_back(tape.constant(t));
  return tape.value(build(tape, ids)).item();
}

inline GradReport check_gradients(const GradCase& c, double h = kFdStep) {
  Tape tape;
  std::vector<NodeId> ids;
  for (auto t : c.inputs) {
    t.set_requires_grad(true);
    ids.push_back(tape.leaf(std::move(t)));
  }
  const auto grads = tensor::backward(tape, c.build(tape, ids));

  GradReport rep;
  auto probe = c.inputs;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Tensor& g = grads.at(ids[i]);
    for (std::size_t k = 0; k < probe[i].size(); ++k) {
      const double x0 = probe[i][k];
      probe[i][k] = x0 + h;
      const double up = eval_loss(c.build, probe);
      probe[i][k] = x0 - h;
      const double down = eval_loss(c.build, probe);
      probe[i][k] = x0;
      const double numeric = (up - down) / (2 * h);
      const double analytic = g[k];
      const double scale = std::max({std::abs(numeric), std::abs(analytic), kFdFloor});
      rep.worst = std::max(rep.worst, std::abs(numeric - analytic) / scale);
      ++rep.checked;
    }
  }
  return rep;
}

namespace detail {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi) {
  std::vector<double> v(tensor::shape_size(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

// Uniform in [lo, hi] but at least `gap` away from every kink point.
inline Tensor away_from(Rng& rng, Shape shape, double lo, double hi, std::vector<double> kinks, double gap) {
  std::vector<double> v(tensor::shape_size(shape));
  for (auto& x : v) {
    do {
      x = rng.uniform(lo, hi);
    } while (std::any_of(kinks.begin(), kinks.end(), [&](double k) { return std::abs(x - k) < gap; }));
  }
  return Tensor(std::move(shape), std::move(v));
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
}

// sum(out * w) with a fixed random w, so every output element gets its own
// upstream gradient.
inline NodeId weighted_sum(Tape& t, NodeId out, const Tensor& w) {
  return t.sum(t.mul(out, t.constant(w)));
}

inline scene::LabelVolume random_labels(Rng& rng, GridDims dims, const std::vector<ClassId>& annotated) {
  scene::LabelVolume lv;
  for (auto c : annotated) {
    lv.annotated.insert(c);
    Mask m = Mask::empty(dims);
    for (auto& b : m.bits) b = rng.bernoulli(0.4) ? 1 : 0;
    lv.masks[c] = std::move(m);
  }
  return lv;
}

}  // namespace detail

inline const std::vector<std::string>& grad_case_kinds() {
  static const std::vector<std::string> kinds = {
      "add",     "add_row_bias", "sub",      "mul",        "div",          "scale",       "matmul",
      "conv2d",  "conv2d_bias",  "relu",     "sigmoid",    "log",          "sum_axis",    "sum_all",
      "mean",    "concat",       "reshape",  "embed",      "clamp",        "composite",   "masked_bce",
      "masked_dice", "soft_bce", "soft_dice"};
  return kinds;
}

// Case i cycles through grad_case_kinds(); shapes and values come from seed.
inline GradCase make_grad_case(std::size_t i, std::uint64_t seed) {
  using namespace detail;
  Rng rng(derive_seed(seed, "gradcase", i));
  const auto& kinds = grad_case_kinds();
  const std::string kind = kinds[i % kinds.size()];
  GradCase c;
  c.name = kind + "#" + std::to_string(i);

  const std::size_t r = pick(rng, 1, 4);
  const std::size_t k = pick(rng, 1, 4);
  const Shape rc{r, k};

  auto elementwise = [&](auto op, Tensor a, Tensor b, bool scalar_rhs) {
    if (scalar_rhs) b = random_tensor(rng, {1}, 0.5, 2.0);
    const Tensor w = random_tensor(rng, a.shape(), -1, 1);
    c.inputs = {std::move(a), std::move(b)};
    c.build = [op, w](Tape& t, std::span<const NodeId> x) { return weighted_sum(t, op(t, x[0], x[1]), w); };
  };
  const bool scalar_rhs = rng.bernoulli(0.25);

  if (kind == "add") {
    elementwise([](Tape& t, NodeId a, NodeId b) { return t.add(a, b); }, random_tensor(rng, rc, -2, 2),
                random_tensor(rng, rc, -2, 2), scalar_rhs);
  } else if (kind == "add_row_bias") {
    const Tensor w = random_tensor(rng, rc, -1, 1);
    c.inputs = {random_tensor(rng, rc, -2, 2), random_tensor(rng, {r}, -2, 2)};
    c.build = [w](Tape& t, std::span<const NodeId> x) { return weighted_sum(t, t.add(x[0], x[1]), w); };
  } else if (kind == "sub") {
    elementwise([](Tape& t, NodeId a, NodeId b) { return t.sub(a, b); }, random_tensor(rng, rc, -2, 2),
                random_tensor(rng, rc, -2, 2), scalar_rhs);
  } else if (kind == "mul") {
    elementwise([](Tape& t, NodeId a, NodeId b) { return t.mul(a, b); }, random_tensor(rng, rc, -2, 2),
                random_tensor(rng, rc, -2, 2), scalar_rhs);
  } else if (kind == "div") {
    elementwise([](Tape& t, NodeId a, NodeId b) { return t.div(a, b); }, random_tensor(rng, rc, -2, 2),
                random_tensor(rng, rc, 0.5, 2.0), scalar_rhs);
  } else if (kind == "scale") {
    const double f = rng.uniform(-3, 3);
    const Tensor w = random_tensor(rng, rc, -1, 1);
    c.inputs = {random_tensor(rng, rc, -2, 2)};
    c.build = [f, w](Tape& t, std::span<const NodeId> x) { return weighted_sum(t, t.scale(x[0], f), w); };
  } else if (kind == "matmul") {
    const std::size_t n = pick(rng, 1, 4);
    const Tensor w = random_tensor(rng, {r, n}, -1, 1);
    c.inputs = {random_tensor(rng, rc, -2, 2), random_tensor(rng, {k, n}, -2, 2)};
    c.build = [w](Tape& t, std::span<const NodeId> x) { return weighted_sum(t, t.matmul(x[0], x[1]), w); };
  } else if (kind == "conv2d" || kind == "conv2d_bias") {
    const std::size_t n = pick(rng, 1, 2), cin = pick(rng, 1, 2), cout = pick(rng, 1, 3);
    const std::size_t h = pick(rng, 1, 4), wd = pick(rng, 1, 4);
    const std::size_t ks = rng.bernoulli(0.5) ? 3 : 1;
    const Tensor w = random_tensor(rng, {n, cout, h, wd}, -1, 1);
    c.inputs = {random_tensor(rng, {n, cin, h, wd}, -1, 1), random_tensor(rng, {cout, cin, ks, ks}, -1, 1)};
    if (kind == "conv2d_bias") {
      c.inputs.push_back(random_tensor(rng, {cout}, -1, 1));
      c.build = [w](Tape& t, std::span<const NodeId> x) { return weighted_sum(t, t.conv2d(x[0], x[1], x[2]), w); };
    } else {
      c.build = [w](Tape& t, std::span<const NodeId> x) { return weighted_sum(t, t.conv2d(x[0], x[1]), w); };
    }
  } else if (kind == "relu") {
    const Tensor w = random_tensor(rng, rc, -1, 1);
    c.inputs = {away_from(rng, rc, -2, 2, {0.0}, 0.05)};
    c.build = [w](Tape& t, std::span<const NodeId> x) { return weighted_sum(t, t.relu(x[0]), w); };
  } else if (kind == "sigmoid") {
    const Tensor w = random_tensor(rng, rc, -1, 1);
    c.inputs = {random_tensor(rng, rc, -4, 4)};
    c.build = [w](Tape& t, std::span<const NodeId> x) { return weighted_sum(t, t.sigmoid(x[0]), w); };
  } else if (kind == "log") {
    const Tensor w = random_tensor(rng, rc, -1, 1);
    c.inputs = {random_tensor(rng, rc, 0.2, 3.0)};
    c.build = [w](Tape& t, std::span<const NodeId> x) { return weighted_sum(t, t.log(x[0]), w); };
  } else if (kind == "sum_axis") {
    const std::size_t axis = pick(rng, 0, 1);
    const Tensor w = random_tensor(rng, {axis == 0 ? k : r}, -1, 1);
    c.inputs = {random_tensor(rng, rc, -2, 2)};
    c.build = [w, axis](Tape& t, std::span<const NodeId> x) { return weighted_sum(t, t.sum(x[0], axis), w); };
  } else if (kind == "sum_all") {
    c.inputs = {random_tensor(rng, rc, -2, 2)};
    c.build = [](Tape& t, std::span<const NodeId> x) { return t.sum(t.mul(x[0], x[0])); };
  } else if (kind == "mean") {
    c.inputs = {random_tensor(rng, rc, -2, 2)};
    c.build = [](Tape& t, std::span<const NodeId> x) { return t.mean(t.mul(x[0], x[0])); };
  } else if (kind == "concat") {
    const std::size_t axis = pick(rng, 0, 1);
    const std::size_t extra = pick(rng, 1, 3);
    const Shape other = axis == 0 ? Shape{extra, k} : Shape{r, extra};
    const Shape joined = axis == 0 ? Shape{r + extra, k} : Shape{r, k + extra};
    const Tensor w = random_tensor(rng, joined, -1, 1);
    c.inputs = {random_tensor(rng, rc, -2, 2), random_tensor(rng, other, -2, 2)};
    c.build = [w, axis](Tape& t, std::span<const NodeId> x) {
      const NodeId parts[] = {x[0], x[1]};
      return weighted_sum(t, t.concat(parts, axis), w);
    };
  } else if (kind == "reshape") {
    const Tensor w = random_tensor(rng, {k, r}, -1, 1);
    c.inputs = {random_tensor(rng, rc, -2, 2)};
    c.build = [w, r, k](Tape& t, std::span<const NodeId> x) {
      return weighted_sum(t, t.reshape(x[0], {k, r}), w);
    };
  } else if (kind == "embed") {
    const std::size_t vocab = pick(rng, 2, 5);
    std::vector<std::size_t> idx(pick(rng, 1, 5));
    for (auto& v : idx) v = pick(rng, 0, vocab - 1);  // repeats exercise accumulation
    const Tensor w = random_tensor(rng, {idx.size(), k}, -1, 1);
    c.inputs = {random_tensor(rng, {vocab, k}, -2, 2)};
    c.build = [w, idx](Tape& t, std::span<const NodeId> x) { return weighted_sum(t, t.embed_lookup(x[0], idx), w); };
  } else if (kind == "clamp") {
    const Tensor w = random_tensor(rng, rc, -1, 1);
    c.inputs = {away_from(rng, rc, -1, 1, {-0.5, 0.5}, 0.05)};
    c.build = [w](Tape& t, std::span<const NodeId> x) { return weighted_sum(t, t.clamp(x[0], -0.5, 0.5), w); };
  } else if (kind == "composite") {
    // Depth-4 chain of randomly chosen ops on at most 16 scalars.
    const std::size_t n = pick(rng, 2, 16);
    std::vector<int> ops(4);
    for (auto& o : ops) o = static_cast<int>(pick(rng, 0, 5));
    c.inputs = {random_tensor(rng, {n}, -1.5, 1.5), random_tensor(rng, {n}, -1.5, 1.5)};
    c.build = [ops](Tape& t, std::span<const NodeId> x) {
      NodeId a = x[0];
      const NodeId b = x[1];
      for (int o : ops) {
        switch (o) {
          case 0: a = t.add(a, t.mul(a, b)); break;
          case 1: a = t.sigmoid(t.sub(a, b)); break;
          case 2: a = t.div(a, t.add(t.sigmoid(b), t.constant(Tensor::scalar(0.5)))); break;
          case 3: a = t.log(t.add(t.sigmoid(a), t.constant(Tensor::scalar(0.1)))); break;
          case 4: a = t.scale(t.mul(a, a), 0.3); break;
          default: a = t.sub(t.sigmoid(a), t.mul(b, t.sigmoid(b))); break;
        }
      }
      return t.sum(a);
    };
  } else {
    // Loss cases: pred = sigmoid(logits) with rows for classes {5, 0, 2}.
    const GridDims dims{1, pick(rng, 1, 3), pick(rng, 2, 4)};
    const std::vector<ClassId> classes{5, 0, 2};
    c.inputs = {random_tensor(rng, {3, dims.voxels()}, -3, 3)};
    if (kind == "masked_bce" || kind == "masked_dice") {
      const std::vector<ClassId> annotated = rng.bernoulli(0.5) ? std::vector<ClassId>{0, 5}
                                                                : std::vector<ClassId>{2};
      const auto labels = random_labels(rng, dims, annotated);
      const bool bce = kind == "masked_bce";
      c.build = [labels, classes, bce](Tape& t, std::span<const NodeId> x) {
        const NodeId p = t.sigmoid(x[0]);
        return bce ? losses::masked_bce_loss(t, p, classes, labels) : losses::masked_dice_loss(t, p, classes, labels);
      };
    } else {
      losses::PseudoLabelVolume pl;
      pl.dims = dims;
      pl.classes = {0, 2, 5};
      pl.targets = random_tensor(rng, {3, dims.voxels()}, 0, 1);
      const bool bce = kind == "soft_bce";
      c.build = [pl, classes, bce](Tape& t, std::span<const NodeId> x) {
        const NodeId p = t.sigmoid(x[0]);
        return bce ? losses::soft_bce(t, p, classes, pl) : losses::soft_dice(t, p, classes, pl);
      };
    }
  }
  return c;
}

}  // namespace fedstill::check
