#include "lmflow/registration.hpp"

#include "lmflow/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace lmflow {

void LandmarkSet::validate() const {
    if (points.rows() < 1) throw BadShapeParamsError("landmark set is empty");
    if (points.cols() != 2 && points.cols() != 3)
        throw DimensionMismatchError("landmark sets must be 2-D or 3-D, got d = " +
                                     std::to_string(points.cols()));
    if (static_cast<Eigen::Index>(labels.size()) != points.rows())
        throw DimensionMismatchError("label count does not match landmark count");
    if (!points.allFinite()) throw NonFiniteError("landmark coordinates must be finite");
    if (noise_var.size() != 0) {
        if (noise_var.size() != points.rows())
            throw DimensionMismatchError("noise_var must have one entry per landmark");
        for (Eigen::Index i = 0; i < noise_var.size(); ++i)
            if (!(noise_var[i] > 0.0) || !std::isfinite(noise_var[i]))
                throw BadShapeParamsError("noise_var entries must be finite and positive");
    }
}

namespace {

void check_pair(const LandmarkSet& moving, const LandmarkSet& fixed) {
    moving.validate();
    fixed.validate();
    if (moving.size() != fixed.size() || moving.dim() != fixed.dim())
        throw DimensionMismatchError("moving and fixed sets must have matching shape (" +
                                     std::to_string(moving.size()) + "x" +
                                     std::to_string(moving.dim()) + " vs " +
                                     std::to_string(fixed.size()) + "x" +
                                     std::to_string(fixed.dim()) + ")");
}

void check_config(const RegistrationConfig& config) {
    if (!(config.sigma > 0.0)) throw BadShapeParamsError("sigma must be positive");
    if (!(config.eta >= 0.0)) throw BadShapeParamsError("eta must be >= 0");
    if (config.time_steps < 1) throw BadShapeParamsError("time_steps must be >= 1");
    if (!(config.data_weight > 0.0)) throw BadShapeParamsError("data_weight must be positive");
    if (config.max_iters < 1) throw BadShapeParamsError("max_iters must be >= 1");
    if (!(config.step_size > 0.0)) throw BadShapeParamsError("step_size must be positive");
    if (!(config.grad_tolerance > 0.0))
        throw BadShapeParamsError("grad_tolerance must be positive");
}

GaussianState endpoint_state(const LandmarkSet& moving, const RegistrationConfig& config,
                             const Vec& mu0, JitterLog* log) {
    const SquaredExponentialKernel kernel(config.sigma);
    const VelocityField field =
        VelocityField::from_velocities(kernel, moving.points, mu0, log);
    GaussianState init;
    init.time = 0.0;
    init.mean = stack_rows(moving.points);
    init.cov = Mat::Zero(init.mean.size(), init.mean.size());
    PropagateOptions options;
    options.store_path = false;
    MomentTrajectory traj = propagate_moments(field, config.eta, init, config.grid(), options);
    return traj.back();
}

}  // namespace

double kl_term(const SquaredExponentialKernel& kernel, const Mat& control_points,
               const Vec& mu0, JitterLog* log) {
    const int d = static_cast<int>(control_points.cols());
    const Mat k = assemble_kernel_matrix(kernel, control_points).matrix;
    const Mat mu = unstack_rows(mu0, d);
    const Mat x = solve_spd(k, mu, log);
    return 0.5 * (mu.array() * x.array()).sum();
}

double expected_data_term(const GaussianState& end_state, const LandmarkSet& fixed) {
    const int n = fixed.size();
    const int d = fixed.dim();
    if (end_state.mean.size() != static_cast<Eigen::Index>(n) * d)
        throw DimensionMismatchError("expected_data_term: state/fixed size mismatch");
    double acc = 0.0;
    const bool weighted = fixed.noise_var.size() != 0;
    for (int i = 0; i < n; ++i) {
        const double w = weighted ? 1.0 / fixed.noise_var[i] : 1.0;
        const Vec diff =
            end_state.mean.segment(i * d, d) - fixed.points.row(i).transpose();
        acc += w * diff.squaredNorm();
        if (end_state.cov.size() != 0)
            acc += w * end_state.cov.block(i * d, i * d, d, d).trace();
    }
    return acc;
}

double objective(const LandmarkSet& moving, const LandmarkSet& fixed,
                 const RegistrationConfig& config, const Vec& mu0, JitterLog* log) {
    check_pair(moving, fixed);
    check_config(config);
    const SquaredExponentialKernel kernel(config.sigma);
    const GaussianState end = endpoint_state(moving, config, mu0, log);
    return kl_term(kernel, moving.points, mu0, log) +
           config.data_weight * expected_data_term(end, fixed);
}

Vec objective_gradient(const LandmarkSet& moving, const LandmarkSet& fixed,
                       const RegistrationConfig& config, const Vec& mu0, JitterLog* log) {
    check_pair(moving, fixed);
    check_config(config);
    const auto n = mu0.size();
    if (n != static_cast<Eigen::Index>(moving.size()) * moving.dim())
        throw DimensionMismatchError("objective_gradient: mu0 length mismatch");

    if (config.gradient_mode == GradientMode::finite_difference) {
        const double h = 1e-5 * (1.0 + mu0.cwiseAbs().maxCoeff());
        Vec grad(n);
        Vec probe = mu0;
        for (Eigen::Index i = 0; i < n; ++i) {
            probe[i] = mu0[i] + h;
            const double fp = objective(moving, fixed, config, probe, log);
            probe[i] = mu0[i] - h;
            const double fm = objective(moving, fixed, config, probe, log);
            probe[i] = mu0[i];
            grad[i] = (fp - fm) / (2.0 * h);
        }
        return grad;
    }

    // Closed-form approximation: 0.5 S^{-1} mu0 for the prior term plus
    // 2 lambda W (mean endpoint - F) for the data term, treating the endpoint
    // sensitivity to mu0 as the identity. Cheap (mean flow only), inexact.
    const SquaredExponentialKernel kernel(config.sigma);
    const int d = moving.dim();
    const Mat k = assemble_kernel_matrix(kernel, moving.points).matrix;
    const Mat solved = solve_spd(k, unstack_rows(mu0, d), log);
    Vec grad = 0.5 * stack_rows(solved);

    const VelocityField field =
        VelocityField::from_velocities(kernel, moving.points, mu0, log);
    const Mat end = flow_mean(field, moving.points, config.grid());
    const bool weighted = fixed.noise_var.size() != 0;
    for (int i = 0; i < moving.size(); ++i) {
        const double w = weighted ? 1.0 / fixed.noise_var[i] : 1.0;
        grad.segment(i * d, d) += 2.0 * config.data_weight * w *
                                  (end.row(i) - fixed.points.row(i)).transpose();
    }
    return grad;
}

RegistrationResult register_landmarks(const LandmarkSet& moving, const LandmarkSet& fixed,
                                      const RegistrationConfig& config) {
    check_pair(moving, fixed);
    check_config(config);

    RegistrationResult result;
    const auto n = static_cast<Eigen::Index>(moving.size()) * moving.dim();
    Vec mu = Vec::Zero(n);
    JitterLog* log = &result.jitter;

    double f = objective(moving, fixed, config, mu, log);
    result.objective_trace.push_back(f);

    double step = config.step_size;
    for (int iter = 1; iter <= config.max_iters; ++iter) {
        result.iterations = iter;
        const Vec g = objective_gradient(moving, fixed, config, mu, log);
        if (g.cwiseAbs().maxCoeff() < config.grad_tolerance) {
            result.converged = true;
            break;
        }
        const double g2 = g.squaredNorm();
        double s = step;
        bool accepted = false;
        Vec cand;
        double fc = f;
        for (int ls = 0; ls < 50; ++ls) {
            cand = mu - s * g;
            fc = objective(moving, fixed, config, cand, log);
            if (std::isfinite(fc) && fc <= f - 1e-4 * s * g2) {
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if (!accepted) break;  // stall: no decrease along -g at any tried step
        mu = cand;
        f = fc;
        result.objective_trace.push_back(f);
        step = 2.0 * s;  // let the accepted step grow back
    }

    result.mu0 = mu;
    const GaussianState end = endpoint_state(moving, config, mu, log);
    result.final_state = end;
    const int d = moving.dim();
    result.residuals_mm = Vec(moving.size());
    for (int i = 0; i < moving.size(); ++i)
        result.residuals_mm[i] =
            (end.mean.segment(i * d, d) - fixed.points.row(i).transpose()).norm();
    return result;
}

// ---------------------------------------------------------------------------
// Small-deformation GP-regression baseline
// ---------------------------------------------------------------------------

namespace {

// K + diag(noise_var) (noise absent -> exact interpolation).
Mat baseline_gram(const SquaredExponentialKernel& kernel, const LandmarkSet& moving) {
    Mat a = assemble_kernel_matrix(kernel, moving.points).matrix;
    if (moving.noise_var.size() != 0) a.diagonal() += moving.noise_var;
    return a;
}

}  // namespace

RegistrationResult small_deformation_register(const LandmarkSet& moving,
                                              const LandmarkSet& fixed,
                                              const RegistrationConfig& config) {
    check_pair(moving, fixed);
    check_config(config);
    const SquaredExponentialKernel kernel(config.sigma);
    const int n = moving.size();
    const int d = moving.dim();

    RegistrationResult result;
    JitterLog* log = &result.jitter;
    const Mat k = assemble_kernel_matrix(kernel, moving.points).matrix;
    const Mat a = baseline_gram(kernel, moving);
    const Mat disp = fixed.points - moving.points;
    const Mat weights = solve_spd(a, disp, log);  // N x d dual coefficients

    const Mat u = k * weights;  // posterior mean displacement at the landmarks
    result.mu0 = stack_rows(u);

    GaussianState end;
    end.time = 1.0;
    end.mean = stack_rows((moving.points + u).eval());
    // Posterior covariance K - K A^{-1} K, eta^2-scaled, per coordinate.
    Mat post = k - k * solve_spd(a, k, log);
    post = ((post + post.transpose()) / 2.0).eval();
    end.cov = (config.eta * config.eta) * expand_blocks(post, d);
    result.final_state = end;

    result.residuals_mm = Vec(n);
    for (int i = 0; i < n; ++i)
        result.residuals_mm[i] =
            (end.mean.segment(i * d, d) - fixed.points.row(i).transpose()).norm();
    result.objective_trace.push_back(config.data_weight * expected_data_term(end, fixed));
    result.converged = true;  // direct solve, no iteration
    result.iterations = 1;
    return result;
}

Mat small_deformation_map(const LandmarkSet& moving, const LandmarkSet& fixed,
                          const RegistrationConfig& config, const Mat& xs,
                          JitterLog* log) {
    check_pair(moving, fixed);
    check_config(config);
    if (xs.cols() != moving.dim())
        throw DimensionMismatchError("small_deformation_map: query dimension mismatch");
    const SquaredExponentialKernel kernel(config.sigma);
    const double s2 = config.sigma * config.sigma;
    const Mat a = baseline_gram(kernel, moving);
    const Mat weights = solve_spd(a, (fixed.points - moving.points).eval(), log);
    const Mat kx =
        (-squared_distances(xs, moving.points) / (2.0 * s2)).array().exp().matrix();
    return xs + kx * weights;
}

Vec small_deformation_posterior_var(const LandmarkSet& moving, const LandmarkSet& fixed,
                                    const RegistrationConfig& config, const Mat& xs,
                                    JitterLog* log) {
    check_pair(moving, fixed);
    check_config(config);
    if (xs.cols() != moving.dim())
        throw DimensionMismatchError("small_deformation_posterior_var: dimension mismatch");
    const SquaredExponentialKernel kernel(config.sigma);
    const double s2 = config.sigma * config.sigma;
    const Mat a = baseline_gram(kernel, moving);
    const Mat kx =
        (-squared_distances(xs, moving.points) / (2.0 * s2)).array().exp().matrix();
    const Mat b = solve_spd(a, kx.transpose().eval(), log);  // N x G
    const double eta2 = config.eta * config.eta;
    Vec var(xs.rows());
    for (Eigen::Index i = 0; i < xs.rows(); ++i) {
        const double v = 1.0 - kx.row(i).dot(b.col(i));
        var[i] = eta2 * std::max(v, 0.0);
    }
    return var;
}

// ---------------------------------------------------------------------------
// Leave-one-out validation
// ---------------------------------------------------------------------------

std::vector<LooFold> loo_validate(const LandmarkSet& moving, const LandmarkSet& fixed,
                                  const RegistrationConfig& config) {
    check_pair(moving, fixed);
    check_config(config);
    const int n = moving.size();
    const int d = moving.dim();
    if (n < 2) throw BadShapeParamsError("leave-one-out needs at least 2 landmarks");

    std::vector<LooFold> folds;
    folds.reserve(static_cast<size_t>(n));
    const SquaredExponentialKernel kernel(config.sigma);

    for (int hold = 0; hold < n; ++hold) {
        LooFold fold;
        fold.label = moving.labels[static_cast<size_t>(hold)];
        fold.pre_mm = (moving.points.row(hold) - fixed.points.row(hold)).norm();

        LandmarkSet sub_m, sub_f;
        sub_m.points.resize(n - 1, d);
        sub_f.points.resize(n - 1, d);
        const bool mv = moving.noise_var.size() != 0;
        const bool fv = fixed.noise_var.size() != 0;
        if (mv) sub_m.noise_var.resize(n - 1);
        if (fv) sub_f.noise_var.resize(n - 1);
        int r = 0;
        for (int i = 0; i < n; ++i) {
            if (i == hold) continue;
            sub_m.points.row(r) = moving.points.row(i);
            sub_f.points.row(r) = fixed.points.row(i);
            sub_m.labels.push_back(moving.labels[static_cast<size_t>(i)]);
            sub_f.labels.push_back(fixed.labels[static_cast<size_t>(i)]);
            if (mv) sub_m.noise_var[r] = moving.noise_var[i];
            if (fv) sub_f.noise_var[r] = fixed.noise_var[i];
            ++r;
        }

        try {
            const RegistrationResult res = register_landmarks(sub_m, sub_f, config);
            const VelocityField field =
                VelocityField::from_velocities(kernel, sub_m.points, res.mu0);
            const Mat held = moving.points.row(hold);
            const Mat end = flow_mean(field, held, config.grid());
            fold.post_mm = (end.row(0) - fixed.points.row(hold)).norm();
            const std::vector<Mat> marg = marginal_covariance(
                field, config.eta, sub_m.points, held, config.grid());
            fold.predicted_fc = marg.front().norm();
            fold.ok = true;
        } catch (const Error&) {
            fold.post_mm = std::numeric_limits<double>::quiet_NaN();
            fold.predicted_fc = std::numeric_limits<double>::quiet_NaN();
            fold.ok = false;
        }
        folds.push_back(std::move(fold));
    }
    return folds;
}

}  // namespace lmflow
