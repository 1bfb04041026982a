#include "lmflow/linalg.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>

namespace lmflow {

SpdMatrix::SpdMatrix(Mat m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols())
        throw DimensionMismatchError("SpdMatrix: matrix must be square");
    if (!m_.allFinite()) throw NonFiniteError("SpdMatrix: non-finite entries");
    const double scale = std::max(1.0, m_.cwiseAbs().maxCoeff());
    if ((m_ - m_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw NotSpdError("SpdMatrix: matrix is not symmetric");
    // Exact symmetry simplifies everything downstream.
    m_ = ((m_ + m_.transpose()) / 2.0).eval();
}

Mat matrix_sqrt(const SpdMatrix& a) {
    const Mat& m = a.matrix();
    const int n = a.dim();
    if (m.cwiseAbs().maxCoeff() < 1e-14) return Mat::Zero(n, n);

    Eigen::SelfAdjointEigenSolver<Mat> eig(m);
    if (eig.info() != Eigen::Success)
        throw NotSpdError("matrix_sqrt: eigendecomposition failed");
    const double tol = -1e-10 * std::max(1.0, m.trace());
    Vec lambda = eig.eigenvalues();
    for (int i = 0; i < n; ++i) {
        if (lambda[i] < tol) throw NotSpdError("matrix_sqrt: negative eigenvalue");
        if (lambda[i] < 0.0) lambda[i] = 0.0;  // roundoff-scale negatives
    }
    return eig.eigenvectors() * lambda.cwiseSqrt().asDiagonal() *
           eig.eigenvectors().transpose();
}

Mat sqrt_derivative(const SpdMatrix& a, const Mat& da) {
    const Mat& m = a.matrix();
    const int n = a.dim();
    if (da.rows() != n || da.cols() != n)
        throw DimensionMismatchError("sqrt_derivative: direction shape mismatch");
    if (m.cwiseAbs().maxCoeff() < 1e-14) return Mat::Zero(n, n);

    Eigen::SelfAdjointEigenSolver<Mat> eig(m);
    if (eig.info() != Eigen::Success)
        throw NotSpdError("sqrt_derivative: eigendecomposition failed");
    const double tol = -1e-10 * std::max(1.0, m.trace());
    Vec lambda = eig.eigenvalues();
    for (int i = 0; i < n; ++i) {
        if (lambda[i] < tol) throw NotSpdError("sqrt_derivative: negative eigenvalue");
        if (lambda[i] < 0.0) lambda[i] = 0.0;
    }
    const Vec roots = lambda.cwiseSqrt();
    const Mat& q = eig.eigenvectors();

    // Sylvester system sqrt(a) X + X sqrt(a) = da in the eigenbasis:
    // X~_ij = (Q^T da Q)_ij / (sqrt(l_i) + sqrt(l_j)).
    Mat g = q.transpose() * da * q;
    const double denom_floor = 1e-13 * std::max(1.0, roots.maxCoeff());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double denom = roots[i] + roots[j];
            g(i, j) = denom > denom_floor ? g(i, j) / denom : 0.0;
        }
    }
    return q * g * q.transpose();
}

namespace {

// Run `attempt` with escalating diagonal jitter. `attempt` returns true on a
// successful factorization of (a + eps*mean_diag*I).
template <typename F>
void with_jitter(const Mat& a, JitterLog* log, const JitterPolicy& policy, F&& attempt,
                 const char* what) {
    if (attempt(0.0)) return;
    const double mean_diag = std::max(a.diagonal().mean(), 1e-300);
    for (double eps = policy.initial; eps <= policy.max * (1.0 + 1e-12);
         eps *= policy.factor) {
        if (attempt(eps * mean_diag)) {
            if (log) log->record(eps);
            return;
        }
    }
    throw NotSpdError(std::string(what) + ": not positive definite even with maximum jitter");
}

}  // namespace

Mat cholesky_with_jitter(const Mat& a, JitterLog* log, const JitterPolicy& policy) {
    if (a.rows() != a.cols())
        throw DimensionMismatchError("cholesky_with_jitter: matrix must be square");
    Mat l;
    with_jitter(
        a, log, policy,
        [&](double shift) {
            Eigen::LLT<Mat> llt(shift == 0.0 ? a : Mat(a + shift * Mat::Identity(a.rows(), a.cols())));
            if (llt.info() != Eigen::Success) return false;
            l = llt.matrixL();
            return true;
        },
        "cholesky_with_jitter");
    return l;
}

Mat solve_spd(const Mat& a, const Mat& b, JitterLog* log, const JitterPolicy& policy) {
    if (a.rows() != a.cols()) throw DimensionMismatchError("solve_spd: matrix must be square");
    if (b.rows() != a.rows()) throw DimensionMismatchError("solve_spd: rhs rows mismatch");
    Mat x;
    with_jitter(
        a, log, policy,
        [&](double shift) {
            Eigen::LLT<Mat> llt(shift == 0.0 ? a : Mat(a + shift * Mat::Identity(a.rows(), a.cols())));
            if (llt.info() != Eigen::Success) return false;
            x = llt.solve(b);
            return true;
        },
        "solve_spd");
    return x;
}

bool floor_eigenvalues(Mat& a, double floor) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(a);
    if (eig.info() != Eigen::Success)
        throw NotSpdError("floor_eigenvalues: eigendecomposition failed");
    if (eig.eigenvalues().minCoeff() >= floor) return false;
    Vec lambda = eig.eigenvalues().cwiseMax(floor);
    a = eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
    a = ((a + a.transpose()) / 2.0).eval();
    return true;
}

}  // namespace lmflow
