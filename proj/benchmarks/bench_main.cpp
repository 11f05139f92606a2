#include <benchmark/benchmark.h>

#include "dettoy/ablation.hpp"
#include "dettoy/evaluation.hpp"
#include "dettoy/matching.hpp"
#include "dettoy/random.hpp"
#include "dettoy/training.hpp"

namespace dettoy {
namespace {

void BM_SolveAssignment(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  Rng rng(1);
  CostMatrix c(n, n);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(solve_assignment(c));
}
BENCHMARK(BM_SolveAssignment)->Arg(10)->Arg(100)->Arg(300);

void BM_Predict(benchmark::State& state) {
  const Model model(ModelConfig::defaults(static_cast<Variant>(state.range(0))), 1);
  const Dataset data = make_dataset(1, 64, 2);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(data.images[0].image));
  state.SetLabel(to_string(model.config().variant));
}
BENCHMARK(BM_Predict)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  const Model model(ModelConfig::defaults(static_cast<Variant>(state.range(0))), 1);
  const Dataset data = make_dataset(1, 64, 2);
  const Target target = make_target(data.images[0]);
  for (auto _ : state) {
    ad::Tape tape(true);
    ParameterBinding binding(tape, model.parameters());
    const LossBreakdown lb =
        compute_loss(model.forward(binding, data.images[0].image), target, LossWeights());
    tape.backward(lb.total);
    Gradients grads;
    binding.collect_gradients(grads);
    benchmark::DoNotOptimize(grads);
  }
  state.SetLabel(to_string(model.config().variant));
}
BENCHMARK(BM_ForwardBackward)->DenseRange(0, 2)->Unit(benchmark::kMillisecond);

void BM_SampleAndApplyMask(benchmark::State& state) {
  Model model(ModelConfig::defaults(Variant::DetrMini), 1);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const AblationMask mask = sample_mask(
        model, AblationSpec::make(Component::EncoderMhsa, 0.3, std::nullopt, seed++));
    AblationHandle h = apply(model, mask);
  }
}
BENCHMARK(BM_SampleAndApplyMask);

}  // namespace
}  // namespace dettoy
BENCHMARK_MAIN();
