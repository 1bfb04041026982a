#pragma once

#include "lmflow/kernel.hpp"
#include "lmflow/types.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace lmflow {

// Stationary drift of the flow ODE/SDE. The spline VelocityField is the
// production model; oracle tests plug in exact linear or constant fields,
// which a kernel spline cannot represent exactly.
class DriftModel {
  public:
    virtual ~DriftModel() = default;

    virtual Vec evaluate(const Vec& x) const = 0;
    virtual Mat jacobian(const Vec& x) const = 0;

    // Velocity at each row of xs (P x d) -> P x d. Default loops evaluate().
    virtual Mat evaluate_rows(const Mat& xs) const;
};

class SplineDrift final : public DriftModel {
  public:
    explicit SplineDrift(VelocityField field) : field_(std::move(field)) {}

    Vec evaluate(const Vec& x) const override { return field_.evaluate(x); }
    Mat jacobian(const Vec& x) const override { return field_.jacobian(x); }
    Mat evaluate_rows(const Mat& xs) const override { return field_.evaluate_rows(xs); }

    const VelocityField& field() const { return field_; }

  private:
    VelocityField field_;
};

// v(x) = B x + c. Exact for the rotation/Ornstein-Uhlenbeck oracles.
class LinearDrift final : public DriftModel {
  public:
    LinearDrift(Mat b, Vec c) : b_(std::move(b)), c_(std::move(c)) {}

    Vec evaluate(const Vec& x) const override { return b_ * x + c_; }
    Mat jacobian(const Vec&) const override { return b_; }

  private:
    Mat b_;
    Vec c_;
};

// Diffusion of the deformation SDE, reduced to what the moment equations
// consume: the d x d Ito rate for one tracked point (marginal block) and for
// an ordered pair of distinct tracked points (cross block). Pair-local by
// construction, so chunking the tracked set cannot change per-point marginals.
class DiffusionModel {
  public:
    virtual ~DiffusionModel() = default;

    virtual int state_dim() const = 0;

    // E[ b(x) b(x)^T ] for one point at mean `m` (d x d).
    virtual Mat point_rate(const Vec& m) const = 0;

    // E[ b(x) b(y)^T ] cross block for points with means mp, mq and pair
    // covariance blocks cov_pp, cov_pq, cov_qq (d x d each).
    virtual Mat cross_rate(const Vec& mp, const Vec& mq, const Mat& cov_pp,
                           const Mat& cov_pq, const Mat& cov_qq) const = 0;
};

class ZeroDiffusion final : public DiffusionModel {
  public:
    explicit ZeroDiffusion(int d) : d_(d) {}
    int state_dim() const override { return d_; }
    Mat point_rate(const Vec&) const override { return Mat::Zero(d_, d_); }
    Mat cross_rate(const Vec&, const Vec&, const Mat&, const Mat&, const Mat&) const override {
        return Mat::Zero(d_, d_);
    }

  private:
    int d_;
};

// Constant, spatially independent diffusion: rate c c^T per point, zero cross
// correlation. Used by the linear-SDE oracles.
class ConstantDiffusion final : public DiffusionModel {
  public:
    explicit ConstantDiffusion(Mat c) : rate_(c * c.transpose()), d_(static_cast<int>(c.rows())) {}
    int state_dim() const override { return d_; }
    Mat point_rate(const Vec&) const override { return rate_; }
    Mat cross_rate(const Vec&, const Vec&, const Mat&, const Mat&, const Mat&) const override {
        return Mat::Zero(d_, d_);
    }

  private:
    Mat rate_;
    int d_;
};

// Spatially correlated GP diffusion: the noise covariance between tracked
// points x, y is eta^2 k(x, y) I_d (the velocity prior's covariance function).
// Cross blocks come from the local linearization of the two-point square-root
// factor around the pair's means:
//     D_pq = eta^2 [ k0 + 2 a'(k0) b'(k0) g^T C g ] I_d,
// where k0 = k(mp, mq), a/b are the eigen square-root coefficients of the
// 2x2 block matrix [[1, k],[k, 1]], g is the stacked kernel gradient at the
// means and C the pair covariance. Marginal blocks are exactly eta^2 I_d
// (the equal-point kernel is constant). `general_sylvester` assembles the
// same blocks through matrix_sqrt/sqrt_derivative on the explicit two-point
// system and exists as the cross-checked reference path.
class GpPairDiffusion final : public DiffusionModel {
  public:
    enum class Scheme { closed_form, general_sylvester };

    GpPairDiffusion(SquaredExponentialKernel kernel, double eta, int d,
                    Scheme scheme = Scheme::closed_form);

    int state_dim() const override { return d_; }
    Mat point_rate(const Vec& m) const override;
    Mat cross_rate(const Vec& mp, const Vec& mq, const Mat& cov_pp, const Mat& cov_pq,
                   const Mat& cov_qq) const override;

    // Scalar multiple of I_d in the cross block; the hot loop of the
    // propagation engine calls this directly.
    double cross_scalar(const Vec& mp, const Vec& mq, const Mat& cov_pp, const Mat& cov_pq,
                        const Mat& cov_qq) const;

    double eta() const { return eta_; }
    const SquaredExponentialKernel& kernel() const { return kernel_; }

  private:
    SquaredExponentialKernel kernel_;
    double eta_;
    int d_;
    Scheme scheme_;
};

// Per-point local-linearization coefficients of the SDE at center x0:
// drift v(x) ~ A x + a and diffusion factor sqrt(Sigma)(x) ~ sum_i S[i] x_i + R.
// Reconstruction identities A x0 + a = v(x0) and sum_i S[i] x0_i + R =
// sqrt(Sigma(x0)) hold exactly by construction.
struct LLCoefficients {
    Mat A;               // d x d drift Jacobian at x0
    Vec a;               // v(x0) - A x0 (stationary field: no explicit time term)
    std::vector<Mat> S;  // d matrices d x d: d sqrt(Sigma)/dx_i at x0
    Mat R;               // sqrt(Sigma(x0)) - sum_i S[i] (x0)_i
};

LLCoefficients ll_coefficients(const DriftModel& v, const GpPairDiffusion& diffusion,
                               double t0, const Vec& x0);

// Deterministic mean flow: integrate dx/dt = v(x) from t=0 to t=1 with the
// classic fixed-step 4th-order Runge-Kutta scheme on `grid`. Points are rows;
// each row flows independently. Throws NonFiniteError (naming the step) if a
// non-finite value appears.
Mat flow_mean(const DriftModel& v, const Mat& points, const TimeGrid& grid);

// Convenience overload for the spline field.
Mat flow_mean(const VelocityField& v, const Mat& points, const TimeGrid& grid);

struct PropagateOptions {
    // Keep every grid-node state (memory ~ steps * (P d)^2); uncertainty-map
    // chunks switch this off and keep only the endpoint.
    bool store_path = true;
};

struct MomentTrajectory {
    std::vector<GaussianState> states;  // endpoints of every step, states[0] = initial
    int floor_events = 0;               // eigenvalue-floor activations
    int steps = 0;

    const GaussianState& back() const { return states.back(); }
};

// Propagate the joint Gaussian (mean, covariance) of the tracked points
// through the deformation SDE under the local-linearization closure:
//     d m_p /dt      = v(m_p)
//     d Cov /dt      = A Cov + Cov A^T + D(m, Cov)
// with A block-diagonal per-point drift Jacobians (linearization recentred at
// the running means) and D the pairwise diffusion blocks of `noise`. The
// system is integrated with classic RK4 on `grid`; the covariance is
// symmetrized and eigenvalue-floored after every step. With zero diffusion
// the mean path is bit-identical to flow_mean and the covariance stays zero.
MomentTrajectory propagate_moments(const DriftModel& v, const DiffusionModel& noise,
                                   const GaussianState& initial, const TimeGrid& grid,
                                   const PropagateOptions& options = {});

// Convenience overload: spline field + GP diffusion of amplitude eta.
MomentTrajectory propagate_moments(const VelocityField& v, double eta,
                                   const GaussianState& initial, const TimeGrid& grid,
                                   const PropagateOptions& options = {});

// Determinants of the Jacobian of an arbitrary map (rows -> rows) at each
// grid point, by central differences with step fd_step.
Vec map_jacobian_determinants(const std::function<Mat(const Mat&)>& map,
                              const Mat& grid_points, double fd_step);

// Same for the time-1 mean flow of `v` (the diffeomorphic mean map).
Vec jacobian_determinant_grid(const DriftModel& v, const Mat& grid_points,
                              const TimeGrid& grid, double fd_step);
Vec jacobian_determinant_grid(const VelocityField& v, const Mat& grid_points,
                              const TimeGrid& grid, double fd_step);

}  // namespace lmflow
