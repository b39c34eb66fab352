#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "fedstill/registry.hpp"
#include "fedstill/scene.hpp"
#include "fedstill/tensor.hpp"

namespace fedstill::losses {

// Soft per-class targets on one distillation volume, plus which stored client
// model each class was taken from.
struct PseudoLabelVolume {
  GridDims dims;
  std::vector<ClassId> classes;
  tensor::Tensor targets;  // [classes.size(), dims.voxels()], values in [0, 1]
  std::map<ClassId, std::string> source;

  std::span<const double> channel(ClassId id) const;
};

// All losses take `pred`, a probability node of shape [K, voxels] whose rows
// follow `pred_classes`, and return a single-element node.

// Mean over annotated classes of the per-voxel mean binary cross-entropy.
// Unannotated rows are never read, so they get exactly zero gradient.
tensor::NodeId masked_bce_loss(tensor::Tape& tape, tensor::NodeId pred, std::span<const ClassId> pred_classes,
                               const scene::LabelVolume& labels);

// Mean over annotated classes of 1 - 2*sum(p*y) / (sum(p^2) + sum(y^2)).
tensor::NodeId masked_dice_loss(tensor::Tape& tape, tensor::NodeId pred, std::span<const ClassId> pred_classes,
                                const scene::LabelVolume& labels);

// Cross-entropy against soft targets, averaged over voxels and classes.
tensor::NodeId soft_bce(tensor::Tape& tape, tensor::NodeId pred, std::span<const ClassId> pred_classes,
                        const PseudoLabelVolume& pseudo);

// Squared-denominator Dice against soft targets.
tensor::NodeId soft_dice(tensor::Tape& tape, tensor::NodeId pred, std::span<const ClassId> pred_classes,
                         const PseudoLabelVolume& pseudo);

// soft_bce + soft_dice, unweighted.
tensor::NodeId distill_loss(tensor::Tape& tape, tensor::NodeId pred, std::span<const ClassId> pred_classes,
                            const PseudoLabelVolume& pseudo);

struct ImpurityScore {
  ClassId cls = 0;
  double value = 0.0;
};

// -sum_n p_n ln p_n over one class channel. Lower means more confident.
double entropy_impurity(std::span<const double> probs);
ImpurityScore entropy_impurity(ClassId cls, std::span<const double> probs);

}  // namespace fedstill::losses
