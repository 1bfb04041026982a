#include "lmflow/uncertainty.hpp"

#include "lmflow/sde_oracle.hpp"

#include "doctest.h"
#include "test_helpers.hpp"

#include <cmath>

using namespace lmflow;
namespace lt = lmflow::testing;

TEST_CASE("GridSpec points: frozen 2x2 layout, last axis fastest") {
    GridSpec spec;
    spec.lo = Vec(2);
    spec.hi = Vec(2);
    spec.lo << 0, 0;
    spec.hi << 1, 2;
    spec.resolution = 2;
    const Mat pts = spec.points();
    REQUIRE(pts.rows() == 4);
    Mat expect(4, 2);
    expect << 0, 0, 0, 2, 1, 0, 1, 2;
    CHECK((pts - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("GridSpec validation") {
    GridSpec spec;
    spec.lo = Vec(2);
    spec.hi = Vec(2);
    spec.lo << 0, 0;
    spec.hi << 1, 1;
    spec.resolution = 1;
    CHECK_THROWS_AS(spec.validate(), BadShapeParamsError);
    spec.resolution = 10;
    spec.hi << 1, -1;  // hi <= lo on axis 1
    CHECK_THROWS_AS(spec.validate(), BadShapeParamsError);
    spec.hi = Vec(3);
    CHECK_THROWS_AS(spec.validate(), DimensionMismatchError);
}

TEST_CASE("chunked marginals match the unchunked propagation") {
    const SquaredExponentialKernel kernel(2.0);
    const LandmarkSet circle = lt::circle_set(5);
    auto rng = lt::make_rng(97);
    const Vec mu = stack_rows(lt::random_matrix(rng, 5, 2, 1.5));
    const VelocityField field = VelocityField::from_velocities(kernel, circle.points, mu);
    const Mat queries = lt::random_matrix(rng, 7, 2, 6.0);
    const TimeGrid grid(16);
    const double eta = 0.8;

    const std::vector<Mat> all = marginal_covariance(field, eta, circle.points, queries,
                                                     grid, 256);
    const std::vector<Mat> twos = marginal_covariance(field, eta, circle.points, queries,
                                                      grid, 2);
    const std::vector<Mat> ones = marginal_covariance(field, eta, circle.points, queries,
                                                      grid, 1);
    REQUIRE(all.size() == 7);
    for (size_t i = 0; i < 7; ++i) {
        CHECK((all[i] - twos[i]).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((all[i] - ones[i]).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((all[i] - all[i].transpose()).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("passive queries do not disturb the landmark marginals") {
    const SquaredExponentialKernel kernel(2.5);
    const LandmarkSet circle = lt::circle_set(4);
    auto rng = lt::make_rng(101);
    const Vec mu = stack_rows(lt::random_matrix(rng, 4, 2, 1.5));
    const VelocityField field = VelocityField::from_velocities(kernel, circle.points, mu);
    const TimeGrid grid(12);
    const double eta = 0.7;

    GaussianState init;
    init.time = 0.0;
    init.mean = stack_rows(circle.points);
    init.cov = Mat::Zero(8, 8);
    const GaussianState alone = propagate_moments(field, eta, init, grid, {}).back();

    const Mat queries = lt::random_matrix(rng, 3, 2, 5.0);
    Mat tracked(7, 2);
    tracked.topRows(4) = circle.points;
    tracked.bottomRows(3) = queries;
    GaussianState joint_init;
    joint_init.time = 0.0;
    joint_init.mean = stack_rows(tracked);
    joint_init.cov = Mat::Zero(14, 14);
    const GaussianState joint = propagate_moments(field, eta, joint_init, grid, {}).back();

    CHECK((alone.mean - joint.mean.head(8)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((alone.cov - joint.cov.topLeftCorner(8, 8)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fc_field values and the far-field limit") {
    const SquaredExponentialKernel kernel(2.0);
    const LandmarkSet circle = lt::circle_set(5);
    auto rng = lt::make_rng(103);
    const Vec mu = stack_rows(lt::random_matrix(rng, 5, 2, 1.5));
    const VelocityField field = VelocityField::from_velocities(kernel, circle.points, mu);
    const TimeGrid grid(16);
    const double eta = 0.9;

    Mat queries(2, 2);
    queries << 0, 0, 300, 0;  // centre and a point 150 kernel widths away
    const UncertaintyField fc = fc_field(field, eta, circle.points, queries, grid);
    REQUIRE(fc.fc.size() == 2);
    REQUIRE(fc.marginals.size() == 2);
    CHECK(fc.fc[0] == doctest::Approx(fc.marginals[0].norm()).epsilon(1e-14));

    // Unmoved far point accumulates exactly eta^2 t I of variance.
    const double expect = std::sqrt(2.0) * eta * eta;
    CHECK(fc.fc[1] == doctest::Approx(expect).epsilon(1e-6));
    CHECK_THROWS_AS(fc_field(field, eta, circle.points, queries, grid, 0),
                    BadShapeParamsError);
}
