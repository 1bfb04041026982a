#include "lmflow/sde_oracle.hpp"

#include <cmath>
#include <random>
#include <string>

namespace lmflow {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

Mat euler_maruyama_endpoint(const DriftModel& v, const SquaredExponentialKernel& kernel,
                            double eta, const Mat& points, const TimeGrid& grid,
                            std::uint64_t seed, JitterLog* log) {
    Mat y = points;
    const auto p_count = y.rows();
    const auto d = y.cols();
    const double h = grid.dt();
    const double amp = std::sqrt(h) * eta;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat xi(p_count, d);

    for (int step = 0; step < grid.steps; ++step) {
        const Mat vel = v.evaluate_rows(y);
        if (eta > 0.0) {
            const Mat k = assemble_kernel_matrix(kernel, y).matrix;
            const Mat l = cholesky_with_jitter(k, log);
            // Fixed draw order: point-major, coordinate-minor.
            for (Eigen::Index p = 0; p < p_count; ++p)
                for (Eigen::Index c = 0; c < d; ++c) xi(p, c) = normal(rng);
            y += h * vel + amp * (l * xi);
        } else {
            y += h * vel;
        }
        if (!y.allFinite())
            throw NonFiniteError("euler_maruyama_endpoint: non-finite state after step " +
                                 std::to_string(step));
    }
    return y;
}

EmpiricalMoments empirical_moments(const std::vector<Vec>& samples) {
    if (samples.size() < 2)
        throw TooFewSamplesError("empirical_moments: need at least 2 samples, got " +
                                 std::to_string(samples.size()));
    const auto n = static_cast<Eigen::Index>(samples.size());
    const auto dim = samples.front().size();
    EmpiricalMoments out;
    out.n_samples = static_cast<int>(n);
    out.mean = Vec::Zero(dim);
    for (const Vec& s : samples) {
        if (s.size() != dim)
            throw DimensionMismatchError("empirical_moments: inconsistent sample sizes");
        out.mean += s;
    }
    out.mean /= static_cast<double>(n);
    out.cov = Mat::Zero(dim, dim);
    for (const Vec& s : samples) {
        const Vec c = s - out.mean;
        out.cov.noalias() += c * c.transpose();
    }
    out.cov /= static_cast<double>(n - 1);
    return out;
}

MomentComparison compare_ll_vs_mc(const DriftModel& v, const SquaredExponentialKernel& kernel,
                                  double eta, const Mat& points, const TimeGrid& grid,
                                  int n_samples, std::uint64_t seed) {
    const auto p_count = points.rows();
    const int d = static_cast<int>(points.cols());

    GaussianState init;
    init.time = 0.0;
    init.mean = stack_rows(points);
    init.cov = Mat::Zero(init.mean.size(), init.mean.size());

    const GpPairDiffusion noise(kernel, eta, d);
    PropagateOptions options;
    options.store_path = false;
    const MomentTrajectory traj = propagate_moments(v, noise, init, grid, options);
    const GaussianState& ll = traj.back();

    std::vector<Vec> endpoints;
    endpoints.reserve(static_cast<size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
        const Mat end = euler_maruyama_endpoint(v, kernel, eta, points, grid,
                                                mix_seed(seed, static_cast<std::uint64_t>(i)));
        endpoints.push_back(stack_rows(end));
    }
    const EmpiricalMoments emp = empirical_moments(endpoints);

    MomentComparison out;
    out.n_samples = emp.n_samples;
    out.n_steps = grid.steps;
    double acc = 0.0;
    for (Eigen::Index p = 0; p < p_count; ++p)
        acc += (ll.mean.segment(p * d, d) - emp.mean.segment(p * d, d)).norm();
    out.mean_distance = acc / static_cast<double>(p_count);
    out.cov_frobenius_diff = (ll.cov - emp.cov).norm();
    out.baseline_variance = emp.cov.trace();
    return out;
}

MomentComparison compare_ll_vs_mc(const VelocityField& v, double eta, const Mat& points,
                                  const TimeGrid& grid, int n_samples, std::uint64_t seed) {
    const SplineDrift drift(v);
    return compare_ll_vs_mc(drift, v.kernel(), eta, points, grid, n_samples, seed);
}

Vec random_protocol_velocity(const SquaredExponentialKernel& kernel, const Mat& points,
                             double radius, std::uint64_t seed) {
    if (!(radius > 0.0))
        throw BadShapeParamsError("random_protocol_velocity: radius must be positive");
    const Mat k = assemble_kernel_matrix(kernel, points).matrix;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat alpha(points.rows(), points.cols());
    for (Eigen::Index p = 0; p < alpha.rows(); ++p)
        for (Eigen::Index c = 0; c < alpha.cols(); ++c) alpha(p, c) = normal(rng);
    Mat mu = k * alpha;
    const double top = mu.rowwise().norm().maxCoeff();
    if (top > 0.0) mu *= (0.5 * radius) / top;
    return stack_rows(mu);
}

}  // namespace lmflow
