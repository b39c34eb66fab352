#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fedstill/error.hpp"
#include "fedstill/losses.hpp"
#include "fedstill/model.hpp"
#include "gradcheck.hpp"

namespace {

using namespace fedstill;
using namespace fedstill::losses;
using tensor::NodeId;
using tensor::Tape;
using tensor::Tensor;

constexpr double kTol = 1e-9;
const double kLn2 = std::log(2.0);

scene::LabelVolume labels_of(GridDims dims, std::map<ClassId, std::vector<std::uint8_t>> masks) {
  scene::LabelVolume lv;
  for (auto& [c, bits] : masks) {
    lv.annotated.insert(c);
    lv.masks[c] = Mask{dims, std::move(bits)};
  }
  return lv;
}

PseudoLabelVolume pseudo_of(GridDims dims, std::vector<ClassId> classes, std::vector<double> targets) {
  PseudoLabelVolume p;
  p.dims = dims;
  p.targets = Tensor({classes.size(), dims.voxels()}, std::move(targets));
  p.classes = std::move(classes);
  return p;
}

double loss_value(const std::function<NodeId(Tape&, NodeId)>& fn, const Tensor& pred) {
  Tape t;
  return t.value(fn(t, t.constant(pred))).item();
}

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return ErrorCode::kIoError;
}

TEST(MaskedBce, PerfectPredictionHitsClampFloor) {
  const GridDims dims{1, 1, 4};
  const auto lv = labels_of(dims, {{0, {1, 0, 1, 1}}});
  const Tensor pred({1, 4}, {models::kProbCeil, models::kProbFloor, models::kProbCeil, models::kProbCeil});
  const std::vector<ClassId> cls{0};
  const double v = loss_value([&](Tape& t, NodeId p) { return masked_bce_loss(t, p, cls, lv); }, pred);
  EXPECT_LE(v, -std::log(1 - 1e-7) + kTol);
  EXPECT_GE(v, 0.0);
}

TEST(MaskedBce, HalfEverywhereIsLn2) {
  const GridDims dims{1, 2, 3};
  const auto lv = labels_of(dims, {{1, {1, 0, 0, 1, 1, 0}}, {3, {0, 0, 0, 0, 0, 0}}});
  const std::vector<ClassId> cls{1, 3};
  const double v = loss_value([&](Tape& t, NodeId p) { return masked_bce_loss(t, p, cls, lv); },
                              Tensor::filled({2, 6}, 0.5));
  EXPECT_NEAR(v, kLn2, kTol);
}

TEST(MaskedDice, Examples) {
  const GridDims two{1, 1, 2};
  const std::vector<ClassId> cls{0};
  auto dice = [&](const scene::LabelVolume& lv, Tensor pred) {
    return loss_value([&](Tape& t, NodeId p) { return masked_dice_loss(t, p, cls, lv); }, pred);
  };
  EXPECT_NEAR(dice(labels_of(two, {{0, {1, 0}}}), Tensor({1, 2}, {1, 0})), 0.0, kTol);
  EXPECT_NEAR(dice(labels_of(two, {{0, {1, 0}}}), Tensor({1, 2}, {0, 1})), 1.0, kTol);
  EXPECT_NEAR(dice(labels_of(two, {{0, {1, 0}}}), Tensor({1, 2}, {0.5, 0.5})), 1.0 / 3.0, kTol);
}

TEST(MaskedLosses, UnannotatedRowsAreIgnored) {
  const GridDims dims{1, 2, 2};
  const auto lv = labels_of(dims, {{2, {1, 1, 0, 0}}});
  const std::vector<ClassId> cls{0, 2, 4};
  Tensor a({3, 4}, {0.1, 0.2, 0.3, 0.4, 0.7, 0.6, 0.2, 0.1, 0.9, 0.9, 0.9, 0.9});
  Tensor b = a;
  for (std::size_t i : {0U, 1U, 2U, 3U, 8U, 9U, 10U, 11U}) b[i] = 0.5;
  for (bool bce : {true, false}) {
    auto fn = [&](Tape& t, NodeId p) {
      return bce ? masked_bce_loss(t, p, cls, lv) : masked_dice_loss(t, p, cls, lv);
    };
    EXPECT_EQ(loss_value(fn, a), loss_value(fn, b));
    Tape t;
    auto leaf = a;
    leaf.set_requires_grad(true);
    const auto p = t.leaf(leaf);
    const auto g = tensor::backward(t, fn(t, p)).at(p);
    for (std::size_t i : {0U, 1U, 2U, 3U, 8U, 9U, 10U, 11U}) EXPECT_EQ(g[i], 0.0);
    EXPECT_NE(g[4], 0.0);
  }
}

TEST(MaskedLosses, Errors) {
  const GridDims dims{1, 1, 2};
  const std::vector<ClassId> cls{0};
  scene::LabelVolume none;
  const Tensor pred({1, 2}, {0.5, 0.5});
  EXPECT_EQ(code_of([&] { loss_value([&](Tape& t, NodeId p) { return masked_bce_loss(t, p, cls, none); }, pred); }),
            ErrorCode::kEmptyAnnotationSet);
  const auto other = labels_of(dims, {{3, {1, 0}}});
  EXPECT_EQ(code_of([&] { loss_value([&](Tape& t, NodeId p) { return masked_dice_loss(t, p, cls, other); }, pred); }),
            ErrorCode::kClassSetMismatch);
}

TEST(Impurity, Examples) {
  EXPECT_NEAR(entropy_impurity(std::vector<double>(9, models::kProbCeil)), 0.0, 1e-5);
  EXPECT_NEAR(entropy_impurity(std::vector<double>{0.5, 0.5}), kLn2, kTol);
  const double a = entropy_impurity(std::vector<double>{0.9, 0.9});
  const double b = entropy_impurity(std::vector<double>{0.6, 0.6});
  EXPECT_NEAR(a, -2 * 0.9 * std::log(0.9), kTol);
  EXPECT_NEAR(b, -2 * 0.6 * std::log(0.6), kTol);
  EXPECT_LT(a, b);
  const auto s = entropy_impurity(ClassId{4}, std::vector<double>{0.5, 0.5});
  EXPECT_EQ(s.cls, 4U);
  EXPECT_NEAR(s.value, kLn2, kTol);
}

TEST(SoftBce, Examples) {
  const GridDims one{1, 1, 1};
  const std::vector<ClassId> cls{0};
  auto bce = [&](double target, double pred) {
    const auto pl = pseudo_of(one, {0}, {target});
    return loss_value([&](Tape& t, NodeId p) { return soft_bce(t, p, cls, pl); }, Tensor({1, 1}, {pred}));
  };
  // soft target: the floor is the binary entropy of the target itself
  const double q = models::kProbCeil;
  EXPECT_NEAR(bce(q, q), -(q * std::log(q) + (1 - q) * std::log(1 - q)), kTol);
  EXPECT_NEAR(bce(1.0, 0.5), kLn2, kTol);
  EXPECT_NEAR(bce(0.5, 0.5), kLn2, kTol);
}

TEST(SoftDice, Examples) {
  const GridDims dims{1, 1, 3};
  const std::vector<ClassId> cls{0};
  auto dice = [&](std::vector<double> target, std::vector<double> pred) {
    const auto pl = pseudo_of(dims, {0}, std::move(target));
    return loss_value([&](Tape& t, NodeId p) { return soft_dice(t, p, cls, pl); }, Tensor({1, 3}, std::move(pred)));
  };
  EXPECT_NEAR(dice({0.2, 0.7, 0.4}, {0.2, 0.7, 0.4}), 0.0, kTol);
  EXPECT_NEAR(dice({1, 0, 0}, {0, 1, 1}), 1.0, kTol);
  // 1 - 2*0.5 / (0.25+0.25+1)
  EXPECT_NEAR(dice({1, 0, 0}, {0.5, 0.5, 0}), 1.0 / 3.0, kTol);
}

TEST(DistillLoss, IsSumOfParts) {
  const GridDims dims{1, 2, 2};
  const std::vector<ClassId> pred_cls{3, 1};
  const auto pl = pseudo_of(dims, {1, 3}, {0.1, 0.8, 0.3, 0.5, 0.9, 0.2, 0.4, 0.6});
  const Tensor pred({2, 4}, {0.3, 0.2, 0.7, 0.6, 0.25, 0.5, 0.45, 0.35});
  const double total = loss_value([&](Tape& t, NodeId p) { return distill_loss(t, p, pred_cls, pl); }, pred);
  const double b = loss_value([&](Tape& t, NodeId p) { return soft_bce(t, p, pred_cls, pl); }, pred);
  const double d = loss_value([&](Tape& t, NodeId p) { return soft_dice(t, p, pred_cls, pl); }, pred);
  EXPECT_NEAR(total, b + d, kTol);
}

TEST(DistillLoss, RowOrderFollowsClassIds) {
  // Swapping both the prediction rows and their class labels leaves the loss alone.
  const GridDims dims{1, 1, 2};
  const auto pl = pseudo_of(dims, {1, 3}, {0.1, 0.8, 0.3, 0.5});
  const Tensor fwd({2, 2}, {0.2, 0.7, 0.4, 0.6});
  const Tensor rev({2, 2}, {0.4, 0.6, 0.2, 0.7});
  const std::vector<ClassId> c13{1, 3}, c31{3, 1};
  const double a = loss_value([&](Tape& t, NodeId p) { return distill_loss(t, p, c13, pl); }, fwd);
  const double b = loss_value([&](Tape& t, NodeId p) { return distill_loss(t, p, c31, pl); }, rev);
  EXPECT_NEAR(a, b, 1e-15);
}

TEST(DistillLoss, ClassSetMismatch) {
  const GridDims dims{1, 1, 2};
  const auto pl = pseudo_of(dims, {1, 3}, {0.1, 0.8, 0.3, 0.5});
  const std::vector<ClassId> cls{1, 4};
  EXPECT_EQ(code_of([&] {
              loss_value([&](Tape& t, NodeId p) { return distill_loss(t, p, cls, pl); }, Tensor::filled({2, 2}, 0.5));
            }),
            ErrorCode::kClassSetMismatch);
}

TEST(Losses, FiniteDifferences) {
  for (std::size_t i = 0; i < check::grad_case_kinds().size() * 8; ++i) {
    const auto c = check::make_grad_case(i, 77);
    if (c.name.find("bce") == std::string::npos && c.name.find("dice") == std::string::npos) continue;
    EXPECT_LE(check::check_gradients(c).worst, check::kFdRelTol) << c.name;
  }
}

}  // namespace
