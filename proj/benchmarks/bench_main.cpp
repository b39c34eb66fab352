#include <benchmark/benchmark.h>

#include "fedstill/losses.hpp"
#include "fedstill/metrics.hpp"
#include "fedstill/model.hpp"
#include "fedstill/random.hpp"
#include "fedstill/scene.hpp"
#include "fedstill/training.hpp"

using namespace fedstill;

namespace {

tensor::Tensor random_tensor(tensor::Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(tensor::shape_size(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return tensor::Tensor(std::move(shape), std::move(v));
}

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto x = random_tensor({1, c, 32, 32}, 1);
  const auto w = random_tensor({c, c, 3, 3}, 2);
  for (auto _ : state) {
    tensor::Tape tape;
    const auto xi = tape.leaf(x);
    const auto wi = tape.leaf(w);
    const auto loss = tape.sum(tape.conv2d(xi, wi));
    auto grads = tensor::backward(tape, loss);
    benchmark::DoNotOptimize(grads);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c * c * 9 * 32 * 32));
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(4)->Arg(12)->Arg(24);

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tensor({n, n}, 3);
  const auto b = random_tensor({n, n}, 4);
  for (auto _ : state) {
    tensor::Tape tape;
    const auto out = tape.matmul(tape.constant(a), tape.constant(b));
    benchmark::DoNotOptimize(tape.value(out));
  }
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_TrainStep(benchmark::State& state) {
  auto spec = scene::default_scene_spec();
  const ClassRegistry registry(0, spec.class_names());
  const auto ds = scene::make_client_dataset(spec, {0, 1, 2, 3}, 1, 5);
  const auto items = training::items_of(ds.samples);
  models::SegModelSpec ms;
  ms.arch = state.range(0) ? models::Architecture::kPatchConvNet : models::Architecture::kPixelMLP;
  const auto init = models::build_model(ms);
  for (auto _ : state) {
    auto m = training::train_supervised(init, items, registry, 1, {}, 1);
    benchmark::DoNotOptimize(m);
  }
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Assd(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const GridDims dims{1, n, n};
  Rng rng(9);
  Mask a = Mask::empty(dims), b = Mask::empty(dims);
  for (std::size_t i = 0; i < dims.voxels(); ++i) {
    a.bits[i] = rng.bernoulli(0.3);
    b.bits[i] = rng.bernoulli(0.3);
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::assd(a, b));
}
BENCHMARK(BM_Assd)->Arg(32)->Arg(128);

void BM_GenerateScene(benchmark::State& state) {
  const auto spec = scene::default_scene_spec();
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(scene::generate_scene(seed++, spec));
}
BENCHMARK(BM_GenerateScene);

}  // namespace

BENCHMARK_MAIN();
