#pragma once

#include "lmflow/moment_flow.hpp"

#include <cstdint>

namespace lmflow {

// SplitMix64-style mixing: derives statistically independent per-sample seeds
// from (base, index) so sample i is reproducible in isolation.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index);

// One Euler-Maruyama path of the deformation SDE for the whole tracked set:
//     Phi_{k+1} = Phi_k + v(Phi_k) dt + sqrt(dt) * eta * L_k xi_k,
// where L_k is a factor (L L^T = K) of the scalar kernel matrix K at the
// *current* positions, applied per coordinate -- i.e. the noise increment of
// the full P*d tracked set is drawn jointly with spatial covariance
// eta^2 k(phi_p, phi_q) I_d, matching the GP prior. Returns endpoint rows.
Mat euler_maruyama_endpoint(const DriftModel& v, const SquaredExponentialKernel& kernel,
                            double eta, const Mat& points, const TimeGrid& grid,
                            std::uint64_t seed, JitterLog* log = nullptr);

struct EmpiricalMoments {
    Vec mean;  // length P*d
    Mat cov;   // (P*d) x (P*d), unbiased (n-1)
    int n_samples = 0;
};

// Sample mean and unbiased covariance of stacked endpoint vectors.
// Throws TooFewSamplesError for fewer than 2 samples.
EmpiricalMoments empirical_moments(const std::vector<Vec>& samples);

struct MomentComparison {
    double mean_distance = 0.0;       // average over points of ||LL mean - MC mean||
    double cov_frobenius_diff = 0.0;  // ||Cov_LL - Cov_MC||_F
    double baseline_variance = 0.0;   // trace(Cov_MC): total MC endpoint variance
    int n_samples = 0;
    int n_steps = 0;
};

// Run the local-linearization propagation and n_samples Euler-Maruyama paths
// (sample i seeded with mix_seed(seed, i)) on the same grid and compare
// endpoint moments.
MomentComparison compare_ll_vs_mc(const DriftModel& v, const SquaredExponentialKernel& kernel,
                                  double eta, const Mat& points, const TimeGrid& grid,
                                  int n_samples, std::uint64_t seed);

MomentComparison compare_ll_vs_mc(const VelocityField& v, double eta, const Mat& points,
                                  const TimeGrid& grid, int n_samples, std::uint64_t seed);

// Random control-point velocities for the validation protocol: mu = K alpha
// with alpha ~ N(0, I) (seeded), rescaled so the fastest control point moves
// at radius/2 per unit time.
Vec random_protocol_velocity(const SquaredExponentialKernel& kernel, const Mat& points,
                             double radius, std::uint64_t seed);

}  // namespace lmflow
