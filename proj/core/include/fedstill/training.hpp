#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedstill/losses.hpp"
#include "fedstill/model.hpp"
#include "fedstill/optim.hpp"
#include "fedstill/random.hpp"
#include "fedstill/registry.hpp"
#include "fedstill/scene.hpp"

namespace fedstill::training {

struct SupervisedItem {
  const Volume* volume = nullptr;
  const scene::LabelVolume* labels = nullptr;
};

struct DistillItem {
  const Volume* volume = nullptr;
  const losses::PseudoLabelVolume* pseudo = nullptr;
};

struct TrainStats {
  std::size_t steps = 0;
  double last_epoch_loss = 0.0;  // mean loss over the final epoch
};

std::vector<SupervisedItem> items_of(std::span<const scene::Sample> samples);

// Runs `epochs` passes of one optimizer step per sample, in an order reshuffled
// each epoch from `rng`. The learning-rate schedule spans `total_steps`, which
// lets callers split one schedule over several calls.
TrainStats run_supervised_epochs(models::ModelParams& model, tensor::OptimizerState& opt,
                                 std::span<const SupervisedItem> items, const ClassRegistry& registry,
                                 std::size_t epochs, std::size_t total_steps, Rng& rng);

// Masked BCE + masked Dice on each sample's own annotated classes. Local and
// centralized training both go through here.
models::ModelParams train_supervised(models::ModelParams init, std::span<const SupervisedItem> items,
                                     const ClassRegistry& registry, std::size_t epochs,
                                     const tensor::AdamWConfig& config, std::uint64_t seed,
                                     TrainStats* stats = nullptr);

// distill_loss against per-volume pseudo labels, predicting the pseudo labels'
// full class list.
models::ModelParams train_distill(models::ModelParams init, std::span<const DistillItem> items,
                                  const ClassRegistry& registry, std::size_t epochs,
                                  const tensor::AdamWConfig& config, std::uint64_t seed,
                                  TrainStats* stats = nullptr);

}  // namespace fedstill::training
