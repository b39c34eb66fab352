#include "fedstill/losses.hpp"

#include <algorithm>
#include <cmath>

#include "fedstill/error.hpp"

namespace fedstill::losses {

using tensor::NodeId;
using tensor::Tape;
using tensor::Tensor;

std::span<const double> PseudoLabelVolume::channel(ClassId id) const {
  const auto it = std::find(classes.begin(), classes.end(), id);
  if (it == classes.end()) fail(ErrorCode::kClassSetMismatch, "pseudo labels have no class " + std::to_string(id));
  const auto row = static_cast<std::size_t>(it - classes.begin());
  return targets.values().subspan(row * dims.voxels(), dims.voxels());
}

namespace {

std::size_t row_of(std::span<const ClassId> classes, ClassId c) {
  const auto it = std::find(classes.begin(), classes.end(), c);
  if (it == classes.end()) {
    fail(ErrorCode::kClassSetMismatch, "prediction does not cover class " + std::to_string(c));
  }
  return static_cast<std::size_t>(it - classes.begin());
}

struct Selected {
  NodeId pred;     // [A, N]
  NodeId target;   // [A, N], constant
};

Selected select_annotated(Tape& tape, NodeId pred, std::span<const ClassId> pred_classes,
                          const scene::LabelVolume& labels) {
  if (labels.annotated.empty()) fail(ErrorCode::kEmptyAnnotationSet, "sample has no annotated classes");
  const auto& p = tape.value(pred);
  if (p.rank() != 2 || p.dim(0) != pred_classes.size()) {
    fail(ErrorCode::kShapeMismatch, "prediction shape " + tensor::shape_str(p.shape()) + " for " +
                                        std::to_string(pred_classes.size()) + " classes");
  }
  const std::size_t n = p.dim(1);
  std::vector<std::size_t> rows;
  Tensor target = Tensor::zeros({labels.annotated.size(), n});
  std::size_t r = 0;
  for (auto c : labels.annotated) {
    rows.push_back(row_of(pred_classes, c));
    const auto& mask = labels.masks.at(c);
    if (mask.bits.size() != n) fail(ErrorCode::kShapeMismatch, "label mask size differs from prediction");
    for (std::size_t i = 0; i < n; ++i) target[r * n + i] = mask.bits[i] ? 1.0 : 0.0;
    ++r;
  }
  return {tape.embed_lookup(pred, std::move(rows)), tape.constant(std::move(target))};
}

Selected align_pseudo(Tape& tape, NodeId pred, std::span<const ClassId> pred_classes,
                      const PseudoLabelVolume& pseudo) {
  std::vector<ClassId> a(pred_classes.begin(), pred_classes.end());
  std::vector<ClassId> b(pseudo.classes);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a != b || a.empty()) fail(ErrorCode::kClassSetMismatch, "prediction and pseudo-label class sets differ");
  const auto& p = tape.value(pred);
  const std::size_t n = pseudo.dims.voxels();
  if (p.rank() != 2 || p.dim(0) != pred_classes.size() || p.dim(1) != n) {
    fail(ErrorCode::kShapeMismatch, "prediction shape " + tensor::shape_str(p.shape()));
  }
  Tensor target = Tensor::zeros({pred_classes.size(), n});
  for (std::size_t r = 0; r < pred_classes.size(); ++r) {
    const auto ch = pseudo.channel(pred_classes[r]);
    std::copy(ch.begin(), ch.end(), target.values().begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  return {pred, tape.constant(std::move(target))};
}

NodeId bce(Tape& tape, const Selected& s) {
  const NodeId one = tape.constant(Tensor::scalar(1.0));
  const NodeId pos = tape.mul(s.target, tape.log(s.pred));
  const NodeId neg = tape.mul(tape.sub(one, s.target), tape.log(tape.sub(one, s.pred)));
  return tape.scale(tape.mean(tape.add(pos, neg)), -1.0);
}

NodeId dice(Tape& tape, const Selected& s) {
  const NodeId one = tape.constant(Tensor::scalar(1.0));
  const NodeId overlap = tape.sum(tape.mul(s.pred, s.target), 1);
  const NodeId denom = tape.add(tape.sum(tape.mul(s.pred, s.pred), 1), tape.sum(tape.mul(s.target, s.target), 1));
  const NodeId per_class = tape.sub(one, tape.scale(tape.div(overlap, denom), 2.0));
  return tape.mean(per_class);
}

}  // namespace

NodeId masked_bce_loss(Tape& tape, NodeId pred, std::span<const ClassId> pred_classes,
                       const scene::LabelVolume& labels) {
  return bce(tape, select_annotated(tape, pred, pred_classes, labels));
}

NodeId masked_dice_loss(Tape& tape, NodeId pred, std::span<const ClassId> pred_classes,
                        const scene::LabelVolume& labels) {
  return dice(tape, select_annotated(tape, pred, pred_classes, labels));
}

NodeId soft_bce(Tape& tape, NodeId pred, std::span<const ClassId> pred_classes, const PseudoLabelVolume& pseudo) {
  return bce(tape, align_pseudo(tape, pred, pred_classes, pseudo));
}

NodeId soft_dice(Tape& tape, NodeId pred, std::span<const ClassId> pred_classes, const PseudoLabelVolume& pseudo) {
  return dice(tape, align_pseudo(tape, pred, pred_classes, pseudo));
}

NodeId distill_loss(Tape& tape, NodeId pred, std::span<const ClassId> pred_classes,
                    const PseudoLabelVolume& pseudo) {
  const auto s = align_pseudo(tape, pred, pred_classes, pseudo);
  return tape.add(bce(tape, s), dice(tape, s));
}

double entropy_impurity(std::span<const double> probs) {
  double s = 0.0;
  for (double p : probs) s -= p * std::log(p);
  return s;
}

ImpurityScore entropy_impurity(ClassId cls, std::span<const double> probs) {
  return {cls, entropy_impurity(probs)};
}

}  // namespace fedstill::losses
