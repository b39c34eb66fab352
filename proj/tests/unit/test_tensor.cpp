#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fedstill/error.hpp"
#include "fedstill/optim.hpp"
#include "fedstill/tensor.hpp"
#include "gradcheck.hpp"

namespace {

using namespace fedstill;
using namespace fedstill::tensor;

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no fedstill::Error thrown";
  return ErrorCode::kIoError;
}

TEST(Tensor, SigmoidOfZeroIsHalf) {
  Tape t;
  const auto y = t.sigmoid(t.constant(Tensor::vector({0.0})));
  EXPECT_EQ(t.value(y)[0], 0.5);
}

TEST(Tensor, IdentityMatmul) {
  Tape t;
  const auto eye = t.constant(Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  const Tensor a = Tensor::matrix(3, 3, {1.5, -2, 3, 4, 5.25, -6, 7, 8, 9.125});
  const auto y = t.matmul(eye, t.constant(a));
  EXPECT_EQ(t.value(y), a);
}

TEST(Tensor, OneByOneKernelConv) {
  Tape t;
  const auto x = t.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
  const auto w = t.constant(Tensor({1, 1, 1, 1}, {1}));
  EXPECT_EQ(t.value(t.conv2d(x, w)), Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
}

TEST(Tensor, ThreeByThreeConvMatchesHandSum) {
  // Zero padding: the centre of a 3x3 ones kernel over [[1,2],[3,4]] sees all four.
  Tape t;
  const auto x = t.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
  const auto w = t.constant(Tensor::filled({1, 1, 3, 3}, 1.0));
  const auto b = t.constant(Tensor::vector({0.5}));
  EXPECT_EQ(t.value(t.conv2d(x, w, b)), Tensor({1, 1, 2, 2}, {10.5, 10.5, 10.5, 10.5}));
}

TEST(Backward, SumOfSquares) {
  Tape t;
  auto xv = Tensor::vector({1, 2, 3});
  xv.set_requires_grad(true);
  const auto x = t.leaf(xv);
  const auto g = backward(t, t.sum(t.mul(x, x)));
  EXPECT_EQ(g.at(x), Tensor::vector({2, 4, 6}));
}

TEST(Backward, SigmoidSlopeAtZero) {
  Tape t;
  auto wv = Tensor::vector({0.0});
  wv.set_requires_grad(true);
  const auto w = t.leaf(wv);
  const auto g = backward(t, t.sum(t.mul(t.sigmoid(w), t.constant(Tensor::vector({1.0})))));
  EXPECT_EQ(g.at(w)[0], 0.25);
}

TEST(Backward, UnusedLeafGetsZeros) {
  Tape t;
  auto a = Tensor::vector({1, 2});
  a.set_requires_grad(true);
  const auto x = t.leaf(a);
  const auto unused = t.leaf(a);
  const auto g = backward(t, t.sum(x));
  EXPECT_EQ(g.at(unused), Tensor::vector({0, 0}));
}

TEST(Backward, GradientIsLinearInUpstreamScale) {
  for (std::size_t i = 0; i < 24; ++i) {
    const auto c = check::make_grad_case(i, 99);
    auto grad_of = [&](double s) {
      Tape t;
      std::vector<NodeId> ids;
      for (auto v : c.inputs) {
        v.set_requires_grad(true);
        ids.push_back(t.leaf(v));
      }
      const auto g = backward(t, t.scale(c.build(t, ids), s));
      return g.at(ids[0]);
    };
    const auto g1 = grad_of(1.0), g3 = grad_of(3.0);
    for (std::size_t k = 0; k < g1.size(); ++k) EXPECT_NEAR(g3[k], 3 * g1[k], 1e-12 * (1 + std::abs(g1[k])));
  }
}

TEST(Backward, FiniteDifferencesOverRandomCases) {
  for (std::size_t i = 0; i < 200; ++i) {
    const auto c = check::make_grad_case(i, 2024);
    const auto rep = check::check_gradients(c);
    EXPECT_LE(rep.worst, check::kFdRelTol) << c.name;
    EXPECT_GT(rep.checked, 0U) << c.name;
  }
}

TEST(TensorErrors, ShapeMismatch) {
  EXPECT_EQ(code_of([] { Tensor({2, 2}, {1, 2, 3}); }), ErrorCode::kShapeMismatch);
  Tape t;
  const auto a = t.constant(Tensor::zeros({2, 3}));
  const auto b = t.constant(Tensor::zeros({2, 3}));
  EXPECT_EQ(code_of([&] { t.matmul(a, b); }), ErrorCode::kShapeMismatch);
  EXPECT_EQ(code_of([&] { t.add(a, t.constant(Tensor::zeros({3, 2}))); }), ErrorCode::kShapeMismatch);
  EXPECT_EQ(code_of([&] { t.reshape(a, {5}); }), ErrorCode::kShapeMismatch);
  EXPECT_EQ(code_of([&] { t.embed_lookup(a, {2}); }), ErrorCode::kShapeMismatch);
}

TEST(TensorErrors, NonFiniteValue) {
  Tape t;
  EXPECT_EQ(code_of([&] { t.log(t.constant(Tensor::vector({0.0}))); }), ErrorCode::kNonFiniteValue);
  EXPECT_EQ(code_of([&] { t.div(t.constant(Tensor::vector({1.0})), t.constant(Tensor::vector({0.0}))); }),
            ErrorCode::kNonFiniteValue);
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_EQ(code_of([&] { t.scale(t.constant(Tensor::vector({inf})), 1.0); }), ErrorCode::kNonFiniteValue);
}

TEST(TensorErrors, NotScalar) {
  Tape t;
  const auto x = t.constant(Tensor::vector({1, 2}));
  EXPECT_EQ(code_of([&] { backward(t, x); }), ErrorCode::kNotScalar);
  EXPECT_EQ(code_of([] { Tensor::vector({1, 2}).item(); }), ErrorCode::kNotScalar);
}

// --- optimizer -------------------------------------------------------------

TEST(AdamW, ZeroGradientNoDecayLeavesParams) {
  ParamMap p{{"w", Tensor::vector({1.5, -2})}};
  const ParamMap g{{"w", Tensor::vector({0, 0})}};
  OptimizerState s(AdamWConfig{.base_lr = 0.1, .weight_decay = 0.0});
  for (int i = 0; i < 5; ++i) adamw_step(p, g, s, 10);
  EXPECT_EQ(p.at("w"), Tensor::vector({1.5, -2}));
}

TEST(AdamW, UnitMomentsFirstStep) {
  ParamMap p{{"w", Tensor::scalar(1.0)}};
  const ParamMap g{{"w", Tensor::scalar(1.0)}};
  OptimizerState s(
      AdamWConfig{.base_lr = 0.1, .weight_decay = 0.0, .beta1 = 0.0, .beta2 = 0.0, .warmup_fraction = 0.0});
  adamw_step(p, g, s, 1);
  EXPECT_NEAR(p.at("w").item(), 0.9, 1e-9);
}

TEST(AdamW, DecoupledDecayActsAlone) {
  const double lr = 0.05;
  ParamMap p{{"w", Tensor::vector({2.0, -3.0})}};
  const ParamMap g{{"w", Tensor::vector({0, 0})}};
  OptimizerState s(AdamWConfig{.base_lr = lr, .weight_decay = 1e-5, .warmup_fraction = 0.0});
  adamw_step(p, g, s, 1);
  EXPECT_NEAR(p.at("w")[0], 2.0 * (1 - lr * 1e-5), 1e-15);
  EXPECT_NEAR(p.at("w")[1], -3.0 * (1 - lr * 1e-5), 1e-15);
}

TEST(AdamW, MissingGradient) {
  ParamMap p{{"w", Tensor::scalar(1.0)}, {"b", Tensor::scalar(1.0)}};
  const ParamMap g{{"w", Tensor::scalar(1.0)}};
  OptimizerState s;
  EXPECT_EQ(code_of([&] { adamw_step(p, g, s, 10); }), ErrorCode::kMissingGradient);
}

TEST(Schedule, WarmupRamp) {
  EXPECT_EQ(schedule_lr(0, 1000, 4e-4, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(schedule_lr(warmup_end(1000, 0.1), 1000, 4e-4, 0.1), 4e-4);
  EXPECT_NEAR(schedule_lr(warmup_end(1000, 0.1) / 2, 1000, 4e-4, 0.1), 2e-4, 1e-12);
  EXPECT_DOUBLE_EQ(schedule_lr(900, 1000, 4e-4, 0.1), 4e-4);
}

}  // namespace
