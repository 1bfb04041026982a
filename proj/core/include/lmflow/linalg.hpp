#pragma once

#include "lmflow/types.hpp"

namespace lmflow {

// Escalating-jitter policy for barely-indefinite matrices: add eps*mean(diag)*I
// starting at eps = 1e-10 and multiplying by 10 up to 1e-6 before giving up.
struct JitterPolicy {
    double initial = 1e-10;
    double max = 1e-6;
    double factor = 10.0;
};

// Record of jitter actually applied, surfaced in result metadata.
struct JitterLog {
    int events = 0;
    double max_epsilon = 0.0;

    void record(double eps) {
        ++events;
        if (eps > max_epsilon) max_epsilon = eps;
    }
    void merge(const JitterLog& other) {
        events += other.events;
        if (other.max_epsilon > max_epsilon) max_epsilon = other.max_epsilon;
    }
};

// Validated symmetric positive-semidefinite matrix. Construction checks
// squareness, finiteness and symmetry (relative tolerance 1e-10); definiteness
// is checked where it matters, by the operations below.
class SpdMatrix {
  public:
    explicit SpdMatrix(Mat m);

    const Mat& matrix() const { return m_; }
    int dim() const { return static_cast<int>(m_.rows()); }

  private:
    Mat m_;
};

// Principal square root via symmetric eigendecomposition. Eigenvalues below
// -1e-10 * max(1, trace) raise NotSpdError; tiny negatives from roundoff are
// clamped to zero. For ||a|| < 1e-14 the square root is the zero matrix.
Mat matrix_sqrt(const SpdMatrix& a);

// Directional derivative of the principal square root at `a` along `da`:
// the unique solution X of  sqrt(a) X + X sqrt(a) = da, computed in the
// eigenbasis of `a` (X_ij = G_ij / (sqrt(l_i) + sqrt(l_j))). Entries whose
// eigenvalue pair sums to (numerically) zero are set to zero, which also
// covers the ||a|| < 1e-14 bypass.
Mat sqrt_derivative(const SpdMatrix& a, const Mat& da);

// Cholesky factor L (lower triangular, L L^T = a + eps*mean(diag)*I) with the
// escalating jitter policy. Throws NotSpdError when even the maximum jitter
// fails. Applied jitter is recorded in `log` when given.
Mat cholesky_with_jitter(const Mat& a, JitterLog* log = nullptr,
                         const JitterPolicy& policy = {});

// Solve a x = b for symmetric positive (semi-)definite `a`, with the same
// jitter policy as cholesky_with_jitter.
Mat solve_spd(const Mat& a, const Mat& b, JitterLog* log = nullptr,
              const JitterPolicy& policy = {});

// Clamp eigenvalues of a symmetric matrix below `floor` up to `floor`,
// in place. Returns true if any eigenvalue was clamped.
bool floor_eigenvalues(Mat& a, double floor = 0.0);

}  // namespace lmflow
