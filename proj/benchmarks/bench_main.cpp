// Microbenchmarks for the hot paths: kernel matrix assembly, spline field
// evaluation, SPD square roots, pairwise diffusion rates, moment propagation,
// Monte-Carlo stepping, and the registration objective.

#include "lmflow/registration.hpp"
#include "lmflow/sde_oracle.hpp"
#include "lmflow/synthetic.hpp"
#include "lmflow/uncertainty.hpp"

#include <benchmark/benchmark.h>

#include <random>

using namespace lmflow;

namespace {

LandmarkSet circle_set(int n) {
    SyntheticConfig c;
    c.n = n;
    return generate_synthetic(c);
}

LandmarkSet flower_set(int n) {
    SyntheticConfig c;
    c.shape = "flower";
    c.n = n;
    return generate_synthetic(c);
}

VelocityField registered_field(const Mat& points, double sigma) {
    const SquaredExponentialKernel kernel(sigma);
    const Vec mu = random_protocol_velocity(kernel, points, 10.0, 7u);
    return VelocityField::from_velocities(kernel, points, mu);
}

Mat dense_grid(int resolution) {
    GridSpec g;
    g.lo = Vec::Constant(2, -14.0);
    g.hi = Vec::Constant(2, 14.0);
    g.resolution = resolution;
    return g.points();
}

}  // namespace

static void BM_KernelMatrix(benchmark::State& state) {
    const LandmarkSet set = circle_set(static_cast<int>(state.range(0)));
    const SquaredExponentialKernel kernel(2.0);
    for (auto _ : state)
        benchmark::DoNotOptimize(assemble_kernel_matrix(kernel, set.points));
}
BENCHMARK(BM_KernelMatrix)->Arg(20)->Arg(100)->Arg(400);

static void BM_VelocityEvaluateRows(benchmark::State& state) {
    const VelocityField field = registered_field(circle_set(20).points, 2.0);
    const Mat grid = dense_grid(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(field.evaluate_rows(grid));
}
BENCHMARK(BM_VelocityEvaluateRows)->Arg(10)->Arg(50);

static void BM_MatrixSqrt(benchmark::State& state) {
    const int d = static_cast<int>(state.range(0));
    std::mt19937_64 rng(11u);
    std::normal_distribution<double> gauss;
    const Mat g = Mat::NullaryExpr(d, d, [&](Eigen::Index, Eigen::Index) { return gauss(rng); });
    const SpdMatrix a(Mat(g * g.transpose() + Mat::Identity(d, d)));
    for (auto _ : state) benchmark::DoNotOptimize(matrix_sqrt(a));
}
BENCHMARK(BM_MatrixSqrt)->Arg(2)->Arg(8)->Arg(32);

static void BM_PairDiffusionRate(benchmark::State& state) {
    const SquaredExponentialKernel kernel(2.0);
    const GpPairDiffusion diffusion(kernel, 1.0, 2);
    Vec mp(2), mq(2);
    mp << 0.0, 0.0;
    mq << 1.5, -0.5;
    const Mat cpp = 0.01 * Mat::Identity(2, 2);
    const Mat cpq = 0.002 * Mat::Identity(2, 2);
    for (auto _ : state)
        benchmark::DoNotOptimize(diffusion.cross_scalar(mp, mq, cpp, cpq, cpp));
}
BENCHMARK(BM_PairDiffusionRate);

static void BM_PropagateMoments(benchmark::State& state) {
    const LandmarkSet set = circle_set(static_cast<int>(state.range(0)));
    const VelocityField field = registered_field(set.points, 2.0);
    GaussianState init;
    init.mean = stack_rows(set.points);
    init.cov = Mat::Zero(init.mean.size(), init.mean.size());
    const TimeGrid grid(16);
    PropagateOptions opts;
    opts.store_path = false;
    for (auto _ : state)
        benchmark::DoNotOptimize(propagate_moments(field, 1.0, init, grid, opts));
}
BENCHMARK(BM_PropagateMoments)->Arg(10)->Arg(20)->Arg(40)->Unit(benchmark::kMillisecond);

static void BM_EulerMaruyamaPath(benchmark::State& state) {
    const LandmarkSet set = circle_set(20);
    const SquaredExponentialKernel kernel(2.0);
    const VelocityField field = registered_field(set.points, 2.0);
    const SplineDrift drift(field);
    const TimeGrid grid(64);
    std::uint64_t seed = 0;
    for (auto _ : state)
        benchmark::DoNotOptimize(
            euler_maruyama_endpoint(drift, kernel, 1.0, set.points, grid, seed++));
}
BENCHMARK(BM_EulerMaruyamaPath)->Unit(benchmark::kMillisecond);

static void BM_Objective(benchmark::State& state) {
    const LandmarkSet moving = circle_set(10);
    const LandmarkSet fixed = flower_set(10);
    RegistrationConfig cfg;
    cfg.sigma = 2.0;
    cfg.eta = 0.5;
    cfg.time_steps = 16;
    cfg.data_weight = 5.0;
    const Vec mu0 = Vec::Constant(moving.size() * moving.dim(), 0.1);
    for (auto _ : state) benchmark::DoNotOptimize(objective(moving, fixed, cfg, mu0));
}
BENCHMARK(BM_Objective)->Unit(benchmark::kMillisecond);

static void BM_FcField(benchmark::State& state) {
    const LandmarkSet set = circle_set(20);
    const VelocityField field = registered_field(set.points, 2.0);
    const Mat queries = dense_grid(static_cast<int>(state.range(0)));
    const TimeGrid grid(16);
    for (auto _ : state)
        benchmark::DoNotOptimize(fc_field(field, 0.5, set.points, queries, grid, 64));
}
BENCHMARK(BM_FcField)->Arg(6)->Arg(10)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
