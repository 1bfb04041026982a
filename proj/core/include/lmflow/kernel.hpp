#pragma once

#include "lmflow/linalg.hpp"
#include "lmflow/types.hpp"

namespace lmflow {

// Exponent arguments below this give kernel values that are snapped to exact
// zero without calling exp(). They correspond to separations beyond ~26 sigma
// (physically no coupling); evaluating them would raise exp's underflow path
// and let products of two kernel values turn subnormal, both of which x86
// handles orders of magnitude slower (the dominant cost for small sigma).
inline constexpr double kKernelMinExpArg = -354.0;

// Isotropic squared-exponential covariance kernel
//     k(x, y) = exp(-||x - y||^2 / (2 sigma^2)),
// used in d x d block form k(x, y) * I_d. sigma is in millimetres. Arguments
// below kKernelMinExpArg yield exact zeros on every evaluation path.
class SquaredExponentialKernel {
  public:
    explicit SquaredExponentialKernel(double sigma);

    double sigma() const { return sigma_; }

    double value(const Vec& x, const Vec& y) const;

    // k as a function of the squared distance (batched callers precompute it).
    double value_from_sq(double squared_distance) const;

    // Gradient of k(x, y) with respect to x: -(x - y) / sigma^2 * k(x, y).
    Vec gradient(const Vec& x, const Vec& y) const;

  private:
    double sigma_;
};

// Scalar kernel matrix K_ij = k(X_i, X_j) over row-stacked points (N x d).
// The full (N d) x (N d) prior covariance is K expanded blockwise with I_d
// (expand_blocks below); the scalar form is what computations factor
// through. `has_duplicates` flags point pairs closer than 1e-9 mm, which make
// the matrix singular.
struct KernelMatrixResult {
    Mat matrix;
    bool has_duplicates = false;
};

KernelMatrixResult assemble_kernel_matrix(const SquaredExponentialKernel& kernel,
                                          const Mat& points);

// Expand a scalar N x N kernel matrix into the (N d) x (N d) block form with
// blocks K_ij * I_d (stacking convention of types.hpp).
Mat expand_blocks(const Mat& scalar_matrix, int d);

// Pairwise squared distances between row sets (P x d, N x d) -> P x N.
Mat squared_distances(const Mat& a, const Mat& b);

// Spline velocity field v(x) = sum_j k(x, X_j) alpha_j over control points
// X (N x d rows) with coefficients alpha (N x d rows).
class VelocityField {
  public:
    VelocityField(SquaredExponentialKernel kernel, Mat control_points, Mat coefficients);

    // Interpolating field: solve K alpha = mu (per coordinate) so that
    // v(X_j) = mu_j at the control points. mu is stacked (N*d).
    static VelocityField from_velocities(const SquaredExponentialKernel& kernel,
                                         const Mat& control_points, const Vec& mu,
                                         JitterLog* log = nullptr);

    Vec evaluate(const Vec& x) const;

    // Velocity at each row of xs (P x d) -> P x d.
    Mat evaluate_rows(const Mat& xs) const;

    // Jacobian dv/dx at x: sum_j alpha_j (grad_x k(x, X_j))^T, d x d.
    Mat jacobian(const Vec& x) const;

    const SquaredExponentialKernel& kernel() const { return kernel_; }
    const Mat& control_points() const { return control_points_; }
    const Mat& coefficients() const { return coefficients_; }
    int dim() const { return static_cast<int>(control_points_.cols()); }

  private:
    SquaredExponentialKernel kernel_;
    Mat control_points_;
    Mat coefficients_;
};

}  // namespace lmflow
