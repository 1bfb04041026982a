#include "lmflow/registration.hpp"

#include "doctest.h"
#include "test_helpers.hpp"

#include <cmath>

using namespace lmflow;
namespace lt = lmflow::testing;

namespace {

RegistrationConfig fast_config() {
    RegistrationConfig cfg;
    cfg.sigma = 2.5;
    cfg.eta = 0.0;
    cfg.time_steps = 16;
    cfg.max_iters = 40;
    cfg.grad_tolerance = 1e-3;
    return cfg;
}

}  // namespace

TEST_CASE("LandmarkSet validation") {
    LandmarkSet set = lt::circle_set(4);
    CHECK_NOTHROW(set.validate());

    LandmarkSet short_labels = set;
    short_labels.labels.pop_back();
    CHECK_THROWS_AS(short_labels.validate(), DimensionMismatchError);

    LandmarkSet bad_noise = set;
    bad_noise.noise_var = Vec::Zero(4);  // zero variance is not allowed
    CHECK_THROWS_AS(bad_noise.validate(), BadShapeParamsError);

    LandmarkSet wrong_dim;
    wrong_dim.labels = {"a"};
    wrong_dim.points = Mat::Zero(1, 4);
    CHECK_THROWS_AS(wrong_dim.validate(), DimensionMismatchError);

    LandmarkSet nonfinite = set;
    nonfinite.points(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(nonfinite.validate(), NonFiniteError);
}

TEST_CASE("kl_term equals the explicit quadratic form") {
    const SquaredExponentialKernel kernel(2.0);
    const LandmarkSet circle = lt::circle_set(6);
    const Mat k = assemble_kernel_matrix(kernel, circle.points).matrix;
    auto rng = lt::make_rng(83);
    const Mat alpha = lt::random_matrix(rng, 6, 2);
    const Mat mu_rows = k * alpha;

    double expect = 0.0;  // 0.5 * sum_c alpha_c^T K alpha_c with mu = K alpha
    for (int c = 0; c < 2; ++c) expect += 0.5 * alpha.col(c).dot(k * alpha.col(c));

    const double kl = kl_term(kernel, circle.points, stack_rows(mu_rows));
    CHECK(kl == doctest::Approx(expect).epsilon(1e-10));
    CHECK(kl_term(kernel, circle.points, Vec::Zero(12)) == 0.0);
}

TEST_CASE("expected_data_term with heteroscedastic weights") {
    LandmarkSet fixed;
    fixed.labels = {"a", "b"};
    fixed.points = Mat::Zero(2, 2);
    fixed.points << 1, 0, 0, 2;
    fixed.noise_var = Vec(2);
    fixed.noise_var << 0.5, 2.0;

    GaussianState end;
    end.time = 1.0;
    end.mean = Vec(4);
    end.mean << 1.5, 0, 0, 1;  // offsets (0.5, 0) and (0, -1)
    end.cov = Mat::Zero(4, 4);
    end.cov.diagonal() << 0.1, 0.2, 0.3, 0.4;

    // 1/0.5 * (0.25 + 0.1 + 0.2) + 1/2 * (1 + 0.3 + 0.4)
    const double expect = 2.0 * 0.55 + 0.5 * 1.7;
    CHECK(expected_data_term(end, fixed) == doctest::Approx(expect).epsilon(1e-14));

    fixed.noise_var.resize(0);  // unweighted
    CHECK(expected_data_term(end, fixed) == doctest::Approx(0.25 + 0.3 + 1 + 0.7).epsilon(1e-14));
}

TEST_CASE("objective vanishes for the identity problem") {
    const LandmarkSet circle = lt::circle_set(5);
    const RegistrationConfig cfg = fast_config();
    CHECK(objective(circle, circle, cfg, Vec::Zero(10)) == 0.0);
}

TEST_CASE("both gradient modes give descent directions") {
    const LandmarkSet moving = lt::circle_set(5);
    const LandmarkSet fixed_set = lt::flower_set(5, 10.0, 0.15, 2);
    RegistrationConfig cfg = fast_config();

    for (const auto mode : {GradientMode::finite_difference, GradientMode::paper}) {
        cfg.gradient_mode = mode;
        const Vec mu = Vec::Zero(10);
        const Vec g = objective_gradient(moving, fixed_set, cfg, mu);
        REQUIRE(g.size() == 10);
        CHECK(g.cwiseAbs().maxCoeff() > 0.0);
        const double f0 = objective(moving, fixed_set, cfg, mu);
        const double f1 = objective(moving, fixed_set, cfg, Vec(mu - 1e-3 * g));
        CHECK(f1 < f0);
    }
}

TEST_CASE("finite-difference gradient is consistent with directional derivatives") {
    const LandmarkSet moving = lt::circle_set(4);
    const LandmarkSet fixed_set = lt::flower_set(4, 10.0, 0.1, 2);
    RegistrationConfig cfg = fast_config();
    cfg.time_steps = 8;
    auto rng = lt::make_rng(89);
    const Vec mu = lt::random_vector(rng, 8, 0.5);
    const Vec g = objective_gradient(moving, fixed_set, cfg, mu);

    for (int trial = 0; trial < 3; ++trial) {
        Vec u = lt::random_vector(rng, 8);
        u /= u.norm();
        const double t = 1e-5;
        const double fd = (objective(moving, fixed_set, cfg, Vec(mu + t * u)) -
                           objective(moving, fixed_set, cfg, Vec(mu - t * u))) /
                          (2.0 * t);
        CHECK(g.dot(u) == doctest::Approx(fd).epsilon(1e-4));
    }
}

TEST_CASE("self-registration converges immediately") {
    const LandmarkSet circle = lt::circle_set(6);
    const RegistrationConfig cfg = fast_config();
    const RegistrationResult res = register_landmarks(circle, circle, cfg);
    CHECK(res.converged);
    CHECK(res.iterations == 1);
    CHECK(res.mu0.cwiseAbs().maxCoeff() < cfg.grad_tolerance);
    CHECK(res.residuals_mm.maxCoeff() < 1e-8);
    REQUIRE(res.objective_trace.size() == 1);
    CHECK(res.objective_trace.front() == 0.0);
}

TEST_CASE("registration reduces residuals with a non-increasing trace") {
    const LandmarkSet moving = lt::circle_set(6);
    const LandmarkSet fixed_set = lt::flower_set(6, 10.0, 0.2, 2);
    RegistrationConfig cfg = fast_config();
    cfg.data_weight = 5.0;

    const RegistrationResult res = register_landmarks(moving, fixed_set, cfg);
    REQUIRE(res.objective_trace.size() >= 2);
    for (size_t i = 1; i < res.objective_trace.size(); ++i)
        CHECK(res.objective_trace[i] <= res.objective_trace[i - 1]);

    Vec pre(moving.size());
    for (int i = 0; i < moving.size(); ++i)
        pre[i] = (moving.points.row(i) - fixed_set.points.row(i)).norm();
    CHECK(res.residuals_mm.mean() < 0.25 * pre.mean());
    CHECK(res.final_state.time == 1.0);
    CHECK(res.final_state.cov.cwiseAbs().maxCoeff() == 0.0);  // eta = 0
}

TEST_CASE("registration input validation") {
    const LandmarkSet circle5 = lt::circle_set(5);
    const LandmarkSet circle6 = lt::circle_set(6);
    const RegistrationConfig cfg = fast_config();
    CHECK_THROWS_AS(register_landmarks(circle5, circle6, cfg), DimensionMismatchError);

    RegistrationConfig bad = cfg;
    bad.sigma = 0.0;
    CHECK_THROWS_AS(register_landmarks(circle5, circle5, bad), BadShapeParamsError);
    bad = cfg;
    bad.eta = -1.0;
    CHECK_THROWS_AS(register_landmarks(circle5, circle5, bad), BadShapeParamsError);
    bad = cfg;
    bad.time_steps = 0;
    CHECK_THROWS_AS(register_landmarks(circle5, circle5, bad), BadShapeParamsError);
}

TEST_CASE("baseline interpolates exactly without noise") {
    const LandmarkSet moving = lt::circle_set(8);
    const LandmarkSet fixed_set = lt::flower_set(8, 10.0, 0.25, 3);
    RegistrationConfig cfg = fast_config();
    cfg.eta = 0.8;

    const RegistrationResult res = small_deformation_register(moving, fixed_set, cfg);
    CHECK(res.converged);
    CHECK(res.residuals_mm.maxCoeff() < 1e-8);

    // Map at the landmarks lands on the fixed set; posterior variance is zero.
    const Mat mapped = small_deformation_map(moving, fixed_set, cfg, moving.points);
    CHECK((mapped - fixed_set.points).cwiseAbs().maxCoeff() < 1e-8);
    const Vec var = small_deformation_posterior_var(moving, fixed_set, cfg, moving.points);
    CHECK(var.maxCoeff() < 1e-8);

    // Far away the prior reasserts itself: variance -> eta^2.
    Mat far(1, 2);
    far << 200, 0;
    const Vec vfar = small_deformation_posterior_var(moving, fixed_set, cfg, far);
    CHECK(vfar[0] == doctest::Approx(cfg.eta * cfg.eta).epsilon(1e-9));
}

TEST_CASE("baseline with observation noise smooths and keeps variance") {
    LandmarkSet moving = lt::circle_set(8);
    const LandmarkSet fixed_set = lt::flower_set(8, 10.0, 0.25, 3);
    moving.noise_var = Vec::Constant(8, 0.5);
    RegistrationConfig cfg = fast_config();
    cfg.eta = 1.0;

    const RegistrationResult res = small_deformation_register(moving, fixed_set, cfg);
    CHECK(res.residuals_mm.minCoeff() > 1e-4);  // no longer interpolating
    const Vec var = small_deformation_posterior_var(moving, fixed_set, cfg, moving.points);
    CHECK(var.minCoeff() > 0.0);
    CHECK(var.maxCoeff() < 1.0);

    // Posterior covariance scales exactly with eta^2.
    RegistrationConfig doubled = cfg;
    doubled.eta = 2.0;
    const RegistrationResult res2 = small_deformation_register(moving, fixed_set, doubled);
    CHECK((res2.final_state.cov - 4.0 * res.final_state.cov).cwiseAbs().maxCoeff() <
          1e-10);
    // ... and the mean map does not depend on eta.
    CHECK((res2.final_state.mean - res.final_state.mean).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("loo_validate returns one scored fold per landmark") {
    const LandmarkSet moving = lt::circle_set(5);
    const LandmarkSet fixed_set = lt::flower_set(5, 10.0, 0.1, 2);
    RegistrationConfig cfg = fast_config();
    cfg.max_iters = 10;

    const std::vector<LooFold> folds = loo_validate(moving, fixed_set, cfg);
    REQUIRE(folds.size() == 5);
    for (int i = 0; i < 5; ++i) {
        const LooFold& f = folds[static_cast<size_t>(i)];
        CHECK(f.label == moving.labels[static_cast<size_t>(i)]);
        CHECK(f.pre_mm ==
              doctest::Approx((moving.points.row(i) - fixed_set.points.row(i)).norm()));
        CHECK(f.ok);
        CHECK(std::isfinite(f.post_mm));
        CHECK(std::isfinite(f.predicted_fc));
        CHECK(f.predicted_fc >= 0.0);
    }
}
