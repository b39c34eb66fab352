#include "fedstill/training.hpp"

#include <numeric>

#include "fedstill/random.hpp"

namespace fedstill::training {

using tensor::NodeId;
using tensor::Tape;

namespace {

tensor::ParamMap collect_grads(const tensor::Gradients& grads, const models::ParamNodes& nodes) {
  tensor::ParamMap out;
  for (const auto& [name, id] : nodes) out.emplace(name, grads.at(id));
  return out;
}

template <typename Item, typename LossFn>
TrainStats run_epochs(models::ModelParams& model, tensor::OptimizerState& opt, std::span<const Item> items,
                      std::size_t epochs, std::size_t total_steps, Rng& rng, LossFn&& loss_fn) {
  TrainStats stats;
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t e = 0; e < epochs; ++e) {
    rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (auto i : order) {
      Tape tape;
      const auto nodes = models::register_params(tape, model, true);
      const NodeId loss = loss_fn(tape, nodes, items[i]);
      epoch_loss += tape.value(loss).item();
      const auto grads = collect_grads(tensor::backward(tape, loss), nodes);
      tensor::adamw_step(model.params, grads, opt, total_steps);
      ++stats.steps;
    }
    if (!items.empty()) stats.last_epoch_loss = epoch_loss / static_cast<double>(items.size());
  }
  return stats;
}

}  // namespace

std::vector<SupervisedItem> items_of(std::span<const scene::Sample> samples) {
  std::vector<SupervisedItem> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({&s.volume, &s.labels});
  return out;
}

TrainStats run_supervised_epochs(models::ModelParams& model, tensor::OptimizerState& opt,
                                 std::span<const SupervisedItem> items, const ClassRegistry& registry,
                                 std::size_t epochs, std::size_t total_steps, Rng& rng) {
  return run_epochs(model, opt, items, epochs, total_steps, rng,
                    [&](Tape& tape, const models::ParamNodes& nodes, const SupervisedItem& item) {
                      // Only annotated rows are computed, so other classes cannot
                      // receive gradient through this sample.
                      const std::vector<ClassId> classes(item.labels->annotated.begin(),
                                                         item.labels->annotated.end());
                      const NodeId pred =
                          models::forward_on_tape(tape, model, nodes, *item.volume, classes, registry);
                      return tape.add(losses::masked_bce_loss(tape, pred, classes, *item.labels),
                                      losses::masked_dice_loss(tape, pred, classes, *item.labels));
                    });
}

models::ModelParams train_supervised(models::ModelParams init, std::span<const SupervisedItem> items,
                                     const ClassRegistry& registry, std::size_t epochs,
                                     const tensor::AdamWConfig& config, std::uint64_t seed, TrainStats* stats) {
  tensor::OptimizerState opt(config);
  Rng rng(derive_seed(seed, "supervised-order"));
  const auto s = run_supervised_epochs(init, opt, items, registry, epochs, epochs * items.size(), rng);
  if (stats) *stats = s;
  return init;
}

models::ModelParams train_distill(models::ModelParams init, std::span<const DistillItem> items,
                                  const ClassRegistry& registry, std::size_t epochs,
                                  const tensor::AdamWConfig& config, std::uint64_t seed, TrainStats* stats) {
  tensor::OptimizerState opt(config);
  Rng rng(derive_seed(seed, "distill-order"));
  const auto s = run_epochs(init, opt, items, epochs, epochs * items.size(), rng,
                            [&](Tape& tape, const models::ParamNodes& nodes, const DistillItem& item) {
                              const auto& classes = item.pseudo->classes;
                              const NodeId pred =
                                  models::forward_on_tape(tape, init, nodes, *item.volume, classes, registry);
                              return losses::distill_loss(tape, pred, classes, *item.pseudo);
                            });
  if (stats) *stats = s;
  return init;
}

}  // namespace fedstill::training
