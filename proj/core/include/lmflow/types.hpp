#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace lmflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// All lengths are millimetres; flow time is normalized to [0, 1].

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A symmetric matrix failed the positive-semidefiniteness check.
struct NotSpdError : Error {
    using Error::Error;
};

// A NaN or infinity appeared mid-computation; the message names the operation
// and, where applicable, the time step.
struct NonFiniteError : Error {
    using Error::Error;
};

struct DimensionMismatchError : Error {
    using Error::Error;
};

struct TooFewSamplesError : Error {
    using Error::Error;
};

// Invalid synthetic-shape or kernel parameters.
struct BadShapeParamsError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Joint Gaussian over a stacked set of tracked points: mean has length P*d
// (point p occupies entries [p*d, p*d + d)), cov is (P*d) x (P*d) symmetric PSD.
struct GaussianState {
    double time = 0.0;
    Vec mean;
    Mat cov;

    int dim() const { return static_cast<int>(mean.size()); }
};

// Uniform time grid on [0, 1] with `steps` intervals.
struct TimeGrid {
    int steps = 64;

    explicit TimeGrid(int steps_ = 64) : steps(steps_) {
        if (steps < 1) throw BadShapeParamsError("TimeGrid: steps must be >= 1");
    }
    double dt() const { return 1.0 / steps; }
    double node(int k) const { return static_cast<double>(k) / steps; }
};

// Stack N points given as rows of an N x d matrix into a length N*d vector
// (row-major: point p occupies [p*d, p*d + d)) and back.
inline Vec stack_rows(const Mat& rows) {
    Mat t = rows.transpose();
    return Eigen::Map<const Vec>(t.data(), t.size());
}

inline Mat unstack_rows(const Vec& stacked, int d) {
    if (d < 1 || stacked.size() % d != 0)
        throw DimensionMismatchError("unstack_rows: vector length not divisible by dimension");
    const auto n = stacked.size() / d;
    return Eigen::Map<const Mat>(stacked.data(), d, n).transpose();
}

}  // namespace lmflow
