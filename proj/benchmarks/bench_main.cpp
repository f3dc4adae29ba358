#include <benchmark/benchmark.h>

#include <wflow/functionals.hpp>
#include <wflow/neural.hpp>
#include <wflow/schemes.hpp>

using namespace wflow;

namespace {

ParticleCloud random_cloud(std::size_t n, std::size_t d, std::uint64_t seed) {
    RandomSource rng(seed);
    Points p(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index k = 0; k < p.cols(); ++k) p(i, k) = 2 * rng.uniform() - 1;
    return ParticleCloud(p);
}

void BM_EnergyGradient(benchmark::State& state) {
    auto c = random_cloud(static_cast<std::size_t>(state.range(0)), 2, 1);
    Functional f = InteractionEnergy{RieszKernel(1)};
    for (auto _ : state) benchmark::DoNotOptimize(functional_value_and_gradient(f, c));
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_EnergyGradient)->RangeMultiplier(4)->Range(256, 4096)->Complexity(benchmark::oNSquared);

void BM_Mmd1dFast(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    auto a = random_cloud(n, 1, 2), b = random_cloud(n, 1, 3);
    RieszKernel k(1);
    for (auto _ : state) benchmark::DoNotOptimize(mmd_squared_1d_fast(k, a, b));
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Mmd1dFast)->RangeMultiplier(8)->Range(512, 262144)->Complexity(benchmark::oNLogN);

void BM_MlpForward(benchmark::State& state) {
    RandomSource rng(4);
    auto p = init_mlp(rng, 2, {128, 128, 128});
    auto x = random_cloud(static_cast<std::size_t>(state.range(0)), 2, 5);
    auto z = sample_latent(rng, x.size(), 2);
    for (auto _ : state) benchmark::DoNotOptimize(mlp_forward(p, x, z));
}
BENCHMARK(BM_MlpForward)->Arg(1000)->Arg(6000);

void BM_BackwardLossGradient(benchmark::State& state) {
    RandomSource rng(6);
    auto p = init_mlp(rng, 2, {64, 64, 64});
    auto x = random_cloud(static_cast<std::size_t>(state.range(0)), 2, 7);
    auto z = sample_latent(rng, x.size(), 2);
    Functional f = InteractionEnergy{RieszKernel(1)};
    MlpParams g = p;
    for (auto _ : state) benchmark::DoNotOptimize(backward_loss(p, x.points(), z.points(), f, 0.05, &g));
}
BENCHMARK(BM_BackwardLossGradient)->Arg(500)->Arg(2000);

void BM_ForwardLossGradient(benchmark::State& state) {
    RandomSource rng(8);
    auto p = init_mlp(rng, 2, {64, 64, 64});
    auto x = random_cloud(static_cast<std::size_t>(state.range(0)), 2, 9);
    auto z = sample_latent(rng, x.size(), 2);
    Functional f = InteractionEnergy{RieszKernel(1)};
    DirectionalDerivativeModel model(f, x);
    MlpParams g = p;
    for (auto _ : state) benchmark::DoNotOptimize(forward_loss(p, x.points(), z.points(), model, &g));
}
BENCHMARK(BM_ForwardLossGradient)->Arg(500)->Arg(2000);

void BM_ParticleFlowStep(benchmark::State& state) {
    auto c = random_cloud(static_cast<std::size_t>(state.range(0)), 2, 10);
    Functional f = InteractionEnergy{RieszKernel(1)};
    for (auto _ : state) benchmark::DoNotOptimize(particle_flow_step(c, f, 0.01));
}
BENCHMARK(BM_ParticleFlowStep)->Arg(2000);

}  // namespace

BENCHMARK_MAIN();
