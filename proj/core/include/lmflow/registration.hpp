#pragma once

#include "lmflow/moment_flow.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace lmflow {

// Labelled landmark set. `noise_var` is empty (homoscedastic unit weights) or
// holds one observation variance per landmark (mm^2).
struct LandmarkSet {
    std::vector<std::string> labels;
    Mat points;     // N x d
    Vec noise_var;  // size 0 or N

    int size() const { return static_cast<int>(points.rows()); }
    int dim() const { return static_cast<int>(points.cols()); }

    void validate() const;
};

enum class GradientMode { finite_difference, paper };

struct RegistrationConfig {
    double sigma = 2.0;            // kernel width (mm)
    double eta = 1.0;              // diffusion amplitude
    int time_steps = 64;           // flow grid
    double data_weight = 1.0;      // lambda on the expected data term
    GradientMode gradient_mode = GradientMode::finite_difference;
    int max_iters = 200;
    double step_size = 0.25;       // initial line-search step
    double grad_tolerance = 1e-4;  // stop when ||grad||_inf drops below
    std::uint64_t seed = 0;        // recorded in manifests; synthetic data / MC use it

    TimeGrid grid() const { return TimeGrid(time_steps); }
};

struct RegistrationResult {
    Vec mu0;                             // optimal initial velocity at control points (N*d)
    std::vector<double> objective_trace; // accepted objective values, non-increasing
    Vec residuals_mm;                    // per-landmark ||mean endpoint - fixed||
    GaussianState final_state;           // landmark endpoint mean/covariance at t=1
    bool converged = false;
    int iterations = 0;
    JitterLog jitter;
};

// KL-divergence term of the objective: 0.5 * mu0^T S^{-1} mu0, with S the
// control-point kernel matrix in block form (solved per coordinate).
double kl_term(const SquaredExponentialKernel& kernel, const Mat& control_points,
               const Vec& mu0, JitterLog* log = nullptr);

// Expected data cost of the endpoint state against the fixed set:
// trace(W Cov) + (mean - F)^T W (mean - F), W = I or blockdiag(I_d/noise_var_i).
double expected_data_term(const GaussianState& end_state, const LandmarkSet& fixed);

// Full objective: kl_term + data_weight * expected_data_term, with the
// endpoint state obtained by propagating the moving landmarks from the
// identity (zero initial covariance) under the field interpolating mu0.
double objective(const LandmarkSet& moving, const LandmarkSet& fixed,
                 const RegistrationConfig& config, const Vec& mu0,
                 JitterLog* log = nullptr);

// Objective gradient. finite_difference: central differences with
// h = 1e-5 * (1 + ||mu0||_inf), exact for the implemented objective including
// the trace term. paper: the closed-form approximation
// 0.5 S^{-1} mu0 + 2 (mean endpoint - F), cheap but inexact (descent-oriented
// sign).
Vec objective_gradient(const LandmarkSet& moving, const LandmarkSet& fixed,
                       const RegistrationConfig& config, const Vec& mu0,
                       JitterLog* log = nullptr);

// Gradient descent with Armijo backtracking (c = 1e-4, halving) from mu0 = 0.
RegistrationResult register_landmarks(const LandmarkSet& moving, const LandmarkSet& fixed,
                                      const RegistrationConfig& config);

// Small-deformation GP-regression baseline: displacement posterior
// u(x) = k(x, M) [K + diag(noise_var)]^{-1} (F - M), map phi(x) = x + u(x).
// Posterior covariance is the eta^2-scaled GP conditional. One shot, no flow.
RegistrationResult small_deformation_register(const LandmarkSet& moving,
                                              const LandmarkSet& fixed,
                                              const RegistrationConfig& config);

// The baseline's displacement map applied to arbitrary rows.
Mat small_deformation_map(const LandmarkSet& moving, const LandmarkSet& fixed,
                          const RegistrationConfig& config, const Mat& xs,
                          JitterLog* log = nullptr);

// Per-coordinate GP posterior variance of the baseline at arbitrary rows
// (marginal covariance is var(x) * I_d).
Vec small_deformation_posterior_var(const LandmarkSet& moving, const LandmarkSet& fixed,
                                    const RegistrationConfig& config, const Mat& xs,
                                    JitterLog* log = nullptr);

struct LooFold {
    std::string label;
    double pre_mm = 0.0;        // ||M_i - F_i|| before registration
    double post_mm = 0.0;       // ||mean flow of M_i - F_i|| after fold registration
    double predicted_fc = 0.0;  // FC of the held-out point's endpoint marginal
    bool ok = false;            // false marks a failed fold
};

// Leave-one-out validation: for each landmark, register the other N-1 with
// `config`, carry the held-out point through the fitted flow, and record its
// error and predicted uncertainty.
std::vector<LooFold> loo_validate(const LandmarkSet& moving, const LandmarkSet& fixed,
                                  const RegistrationConfig& config);

}  // namespace lmflow
