#include "lmflow/kernel.hpp"

#include <cmath>

namespace lmflow {

SquaredExponentialKernel::SquaredExponentialKernel(double sigma) : sigma_(sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
        throw BadShapeParamsError("SquaredExponentialKernel: sigma must be positive");
}

double SquaredExponentialKernel::value(const Vec& x, const Vec& y) const {
    if (x.size() != y.size())
        throw DimensionMismatchError("kernel value: point dimensions differ");
    return value_from_sq((x - y).squaredNorm());
}

double SquaredExponentialKernel::value_from_sq(double squared_distance) const {
    const double arg = -squared_distance / (2.0 * sigma_ * sigma_);
    return arg < kKernelMinExpArg ? 0.0 : std::exp(arg);
}

Vec SquaredExponentialKernel::gradient(const Vec& x, const Vec& y) const {
    if (x.size() != y.size())
        throw DimensionMismatchError("kernel gradient: point dimensions differ");
    const double k = value_from_sq((x - y).squaredNorm());
    if (k == 0.0) return Vec::Zero(x.size());
    return (-(x - y) / (sigma_ * sigma_)) * k;
}

Mat squared_distances(const Mat& a, const Mat& b) {
    if (a.cols() != b.cols())
        throw DimensionMismatchError("squared_distances: dimensions differ");
    const Vec a2 = a.rowwise().squaredNorm();
    const Vec b2 = b.rowwise().squaredNorm();
    Mat d2 = (-2.0 * a * b.transpose());
    d2.colwise() += a2;
    d2.rowwise() += b2.transpose();
    return d2.cwiseMax(0.0);
}

KernelMatrixResult assemble_kernel_matrix(const SquaredExponentialKernel& kernel,
                                          const Mat& points) {
    const auto n = points.rows();
    if (n == 0) throw DimensionMismatchError("assemble_kernel_matrix: empty point set");
    KernelMatrixResult result;
    Mat d2 = squared_distances(points, points);
    result.has_duplicates = false;
    for (Eigen::Index i = 0; i < n && !result.has_duplicates; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            if (d2(i, j) < 1e-18) {  // closer than 1e-9 mm
                result.has_duplicates = true;
                break;
            }
    const Mat arg = -d2 / (2.0 * kernel.sigma() * kernel.sigma());
    result.matrix = (arg.array() < kKernelMinExpArg)
                        .select(0.0, arg.array().max(kKernelMinExpArg).exp());
    return result;
}

Mat expand_blocks(const Mat& scalar_matrix, int d) {
    if (d < 1) throw DimensionMismatchError("expand_blocks: dimension must be positive");
    const auto n = scalar_matrix.rows();
    if (scalar_matrix.cols() != n)
        throw DimensionMismatchError("expand_blocks: matrix must be square");
    Mat full = Mat::Zero(n * d, n * d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            for (int c = 0; c < d; ++c) full(i * d + c, j * d + c) = scalar_matrix(i, j);
    return full;
}

VelocityField::VelocityField(SquaredExponentialKernel kernel, Mat control_points,
                             Mat coefficients)
    : kernel_(kernel),
      control_points_(std::move(control_points)),
      coefficients_(std::move(coefficients)) {
    if (control_points_.rows() != coefficients_.rows() ||
        control_points_.cols() != coefficients_.cols())
        throw DimensionMismatchError("VelocityField: control point/coefficient shape mismatch");
    if (control_points_.rows() == 0)
        throw DimensionMismatchError("VelocityField: empty control point set");
    if (!control_points_.allFinite() || !coefficients_.allFinite())
        throw NonFiniteError("VelocityField: non-finite inputs");
}

VelocityField VelocityField::from_velocities(const SquaredExponentialKernel& kernel,
                                             const Mat& control_points, const Vec& mu,
                                             JitterLog* log) {
    const auto n = control_points.rows();
    const auto d = control_points.cols();
    if (mu.size() != n * d)
        throw DimensionMismatchError("VelocityField::from_velocities: mu length mismatch");
    const Mat k = assemble_kernel_matrix(kernel, control_points).matrix;
    // Block structure K (x) I_d: one scalar solve per coordinate.
    const Mat mu_rows = unstack_rows(mu, static_cast<int>(d));
    Mat alpha = solve_spd(k, mu_rows, log);
    return VelocityField(kernel, control_points, std::move(alpha));
}

Vec VelocityField::evaluate(const Vec& x) const {
    if (x.size() != control_points_.cols())
        throw DimensionMismatchError("VelocityField::evaluate: dimension mismatch");
    const double inv = 1.0 / (2.0 * kernel_.sigma() * kernel_.sigma());
    const Vec arg =
        -(control_points_.rowwise() - x.transpose()).rowwise().squaredNorm() * inv;
    const Vec w = (arg.array() < kKernelMinExpArg)
                      .select(0.0, arg.array().max(kKernelMinExpArg).exp());
    return coefficients_.transpose() * w;
}

Mat VelocityField::evaluate_rows(const Mat& xs) const {
    if (xs.cols() != control_points_.cols())
        throw DimensionMismatchError("VelocityField::evaluate_rows: dimension mismatch");
    const double inv = 1.0 / (2.0 * kernel_.sigma() * kernel_.sigma());
    const Mat arg = -squared_distances(xs, control_points_) * inv;
    const Mat k = (arg.array() < kKernelMinExpArg)
                      .select(0.0, arg.array().max(kKernelMinExpArg).exp());
    return k * coefficients_;
}

Mat VelocityField::jacobian(const Vec& x) const {
    const auto d = control_points_.cols();
    if (x.size() != d)
        throw DimensionMismatchError("VelocityField::jacobian: dimension mismatch");
    const double inv_s2 = 1.0 / (kernel_.sigma() * kernel_.sigma());
    Mat diff = (-(control_points_.rowwise() - x.transpose())).eval();  // x - X_j rows
    const Vec arg = -diff.rowwise().squaredNorm() * (0.5 * inv_s2);
    const Vec w = (arg.array() < kKernelMinExpArg)
                      .select(0.0, arg.array().max(kKernelMinExpArg).exp());
    // sum_j alpha_j * (-(x - X_j)/sigma^2 * k_j)^T
    return coefficients_.transpose() * (diff.array().colwise() * w.array()).matrix() *
           (-inv_s2);
}

}  // namespace lmflow
