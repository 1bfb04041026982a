#include "lmflow/moment_flow.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <string>

namespace lmflow {

Mat DriftModel::evaluate_rows(const Mat& xs) const {
    Mat out(xs.rows(), xs.cols());
    for (Eigen::Index r = 0; r < xs.rows(); ++r)
        out.row(r) = evaluate(xs.row(r).transpose()).transpose();
    return out;
}

// ---------------------------------------------------------------------------
// GP pair diffusion
// ---------------------------------------------------------------------------

GpPairDiffusion::GpPairDiffusion(SquaredExponentialKernel kernel, double eta, int d,
                                 Scheme scheme)
    : kernel_(kernel), eta_(eta), d_(d), scheme_(scheme) {
    if (d < 1) throw DimensionMismatchError("GpPairDiffusion: dimension must be positive");
    if (!(eta >= 0.0) || !std::isfinite(eta))
        throw BadShapeParamsError("GpPairDiffusion: eta must be finite and >= 0");
}

Mat GpPairDiffusion::point_rate(const Vec&) const {
    // Equal-point prior covariance eta^2 k(x,x) I = eta^2 I: constant in space,
    // so the point's own linearized factor is exact.
    return (eta_ * eta_) * Mat::Identity(d_, d_);
}

double GpPairDiffusion::cross_scalar(const Vec& mp, const Vec& mq, const Mat& cov_pp,
                                     const Mat& cov_pq, const Mat& cov_qq) const {
    const double eta2 = eta_ * eta_;
    if (eta2 == 0.0) return 0.0;
    const double s2 = kernel_.sigma() * kernel_.sigma();
    const Vec r = mp - mq;
    const double q2 = r.squaredNorm();
    if (q2 <= 0.0) return eta2;  // coincident pair: fully correlated noise

    const double w = q2 / s2;
    const double k0 = kernel_.value_from_sq(q2);
    if (k0 == 0.0) return 0.0;
    // First-order factors of the two-point square root [[a,b],[b,a]] (x) I_d
    // contribute 2 a'(k0) b'(k0) g^T C g = -k0/(4 (1 - k0^2)) g^T C g, with
    // g the stacked kernel gradient at the means. Everything contracts to the
    // separation direction:
    //   g^T C g = k0^2 / sigma^4 * r^T (C_pp - C_pq - C_qp + C_qq) r.
    const double quad =
        r.dot((cov_pp + cov_qq - cov_pq - cov_pq.transpose()) * r);
    const double one_minus_k2 = -std::expm1(-w);  // 1 - k0^2, stable near w = 0
    const double corr = -(k0 * k0 * k0) * quad / (4.0 * s2 * s2 * one_minus_k2);
    double val = k0 + corr;
    if (val < 0.0) val = 0.0;   // E[k] lies in (0, 1]; guard the linearization
    if (val > 1.0) val = 1.0;
    return eta2 * val;
}

Mat GpPairDiffusion::cross_rate(const Vec& mp, const Vec& mq, const Mat& cov_pp,
                                const Mat& cov_pq, const Mat& cov_qq) const {
    if (scheme_ == Scheme::closed_form)
        return cross_scalar(mp, mq, cov_pp, cov_pq, cov_qq) * Mat::Identity(d_, d_);

    // Reference path: explicit two-point system through matrix_sqrt and the
    // Sylvester derivative. B(u) = sqrt(C2)(u0) + sum_g T_g (u - u0)_g with
    // u = (x; y); the cross block of E[B B^T] is returned.
    const int d = d_;
    const double eta2 = eta_ * eta_;
    if (eta2 == 0.0) return Mat::Zero(d, d);
    const double k0 = kernel_.value(mp, mq);

    Mat c2 = eta2 * Mat::Identity(2 * d, 2 * d);
    c2.block(0, d, d, d).diagonal().setConstant(eta2 * k0);
    c2.block(d, 0, d, d).diagonal().setConstant(eta2 * k0);
    const SpdMatrix spd(c2);

    const Vec gx = kernel_.gradient(mp, mq);  // d k / d x; d k / d y = -gx
    std::vector<Mat> t(2 * d);
    for (int gamma = 0; gamma < 2 * d; ++gamma) {
        const double dk = gamma < d ? gx[gamma] : -gx[gamma - d];
        Mat dc2 = Mat::Zero(2 * d, 2 * d);
        dc2.block(0, d, d, d).diagonal().setConstant(eta2 * dk);
        dc2.block(d, 0, d, d).diagonal().setConstant(eta2 * dk);
        t[gamma] = sqrt_derivative(spd, dc2);
    }

    Mat cpair(2 * d, 2 * d);
    cpair.block(0, 0, d, d) = cov_pp;
    cpair.block(0, d, d, d) = cov_pq;
    cpair.block(d, 0, d, d) = cov_pq.transpose();
    cpair.block(d, d, d, d) = cov_qq;

    Mat ebb = c2;  // B(u0) B(u0)^T = C2 exactly (re-centred at the means)
    for (int g = 0; g < 2 * d; ++g)
        for (int h = 0; h < 2 * d; ++h)
            ebb.noalias() += cpair(g, h) * t[g] * t[h].transpose();
    return ebb.block(0, d, d, d);
}

// ---------------------------------------------------------------------------
// Per-point LL coefficients
// ---------------------------------------------------------------------------

LLCoefficients ll_coefficients(const DriftModel& v, const GpPairDiffusion& diffusion,
                               double /*t0*/, const Vec& x0) {
    // The drift and kernel are stationary, so no explicit time terms appear.
    LLCoefficients out;
    out.A = v.jacobian(x0);
    out.a = v.evaluate(x0) - out.A * x0;

    const int d = static_cast<int>(x0.size());
    const double eta2 = diffusion.eta() * diffusion.eta();
    const Mat sigma = eta2 * diffusion.kernel().value(x0, x0) * Mat::Identity(d, d);
    const SpdMatrix spd(sigma);
    // d Sigma(x,x) / dx_i flows through both kernel arguments; for stationary
    // kernels the two gradients cancel. Kept generic through sqrt_derivative.
    const Vec g = diffusion.kernel().gradient(x0, x0);
    out.S.resize(d);
    for (int i = 0; i < d; ++i) {
        const Mat dsigma = (2.0 * eta2 * g[i]) * Mat::Identity(d, d);
        out.S[i] = sqrt_derivative(spd, dsigma);
    }
    out.R = matrix_sqrt(spd);
    for (int i = 0; i < d; ++i) out.R -= out.S[i] * x0[i];
    return out;
}

// ---------------------------------------------------------------------------
// Mean flow
// ---------------------------------------------------------------------------

namespace {

void check_finite_rows(const Mat& y, const char* what, int step) {
    if (!y.allFinite())
        throw NonFiniteError(std::string(what) + ": non-finite state after step " +
                             std::to_string(step));
}

}  // namespace

Mat flow_mean(const DriftModel& v, const Mat& points, const TimeGrid& grid) {
    Mat y = points;
    const double h = grid.dt();
    Mat k1, k2, k3, k4;
    for (int step = 0; step < grid.steps; ++step) {
        k1 = v.evaluate_rows(y);
        k2 = v.evaluate_rows(y + (0.5 * h) * k1);
        k3 = v.evaluate_rows(y + (0.5 * h) * k2);
        k4 = v.evaluate_rows(y + h * k3);
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        check_finite_rows(y, "flow_mean", step);
    }
    return y;
}

Mat flow_mean(const VelocityField& v, const Mat& points, const TimeGrid& grid) {
    return flow_mean(SplineDrift(v), points, grid);
}

// ---------------------------------------------------------------------------
// Moment propagation
// ---------------------------------------------------------------------------

namespace {

// Batched drift evaluation + per-point Jacobians. The spline field shares the
// kernel row matrix between both.
void drift_blocks(const DriftModel& v, const Mat& xs, Mat& vel, std::vector<Mat>& jac) {
    const auto p_count = xs.rows();
    const auto d = xs.cols();
    jac.resize(static_cast<size_t>(p_count));
    if (const auto* spline = dynamic_cast<const SplineDrift*>(&v)) {
        const VelocityField& field = spline->field();
        const Mat& cps = field.control_points();
        const double s2 = field.kernel().sigma() * field.kernel().sigma();
        const Mat arg = -squared_distances(xs, cps) / (2.0 * s2);
        const Mat k = (arg.array() < kKernelMinExpArg)
                          .select(0.0, arg.array().max(kKernelMinExpArg).exp());
        vel.noalias() = k * field.coefficients();
        const auto n = cps.rows();
        for (Eigen::Index p = 0; p < p_count; ++p) {
            Mat a = Mat::Zero(d, d);
            for (Eigen::Index j = 0; j < n; ++j) {
                // alpha_j (x_p - X_j)^T k_pj, summed
                a.noalias() += k(p, j) * field.coefficients().row(j).transpose() *
                               (xs.row(p) - cps.row(j));
            }
            jac[static_cast<size_t>(p)] = a * (-1.0 / s2);
        }
        return;
    }
    vel = v.evaluate_rows(xs);
    for (Eigen::Index p = 0; p < p_count; ++p)
        jac[static_cast<size_t>(p)] = v.jacobian(xs.row(p).transpose());
}

class MomentEngine {
  public:
    MomentEngine(const DriftModel& drift, const DiffusionModel& noise, int p_count, int d)
        : drift_(drift),
          noise_(noise),
          gp_(dynamic_cast<const GpPairDiffusion*>(&noise)),
          p_(p_count),
          d_(d) {}

    // dm = v(m) rowwise; dcov = A cov + cov A^T + D(m, cov).
    void rhs(const Mat& m, const Mat& cov, Mat& dm, Mat& dcov) {
        drift_blocks(drift_, m, dm, jac_);
        const int n = p_ * d_;
        m1_.resize(n, n);
        for (int p = 0; p < p_; ++p)
            m1_.middleRows(p * d_, d_).noalias() =
                jac_[static_cast<size_t>(p)] * cov.middleRows(p * d_, d_);
        dcov = m1_ + m1_.transpose();
        add_diffusion(m, cov, dcov);
    }

  private:
    void add_diffusion(const Mat& m, const Mat& cov, Mat& dcov) {
        for (int p = 0; p < p_; ++p) {
            const Mat rate = noise_.point_rate(m.row(p).transpose());
            dcov.block(p * d_, p * d_, d_, d_) += rate;
        }
        if (gp_ != nullptr) {
            // Pair blocks are scalar multiples of I_d; fill diagonals directly.
            for (int p = 0; p < p_; ++p) {
                for (int q = p + 1; q < p_; ++q) {
                    const double s = gp_->cross_scalar(
                        m.row(p).transpose(), m.row(q).transpose(),
                        cov.block(p * d_, p * d_, d_, d_),
                        cov.block(p * d_, q * d_, d_, d_),
                        cov.block(q * d_, q * d_, d_, d_));
                    if (s == 0.0) continue;
                    for (int c = 0; c < d_; ++c) {
                        dcov(p * d_ + c, q * d_ + c) += s;
                        dcov(q * d_ + c, p * d_ + c) += s;
                    }
                }
            }
            return;
        }
        for (int p = 0; p < p_; ++p) {
            for (int q = p + 1; q < p_; ++q) {
                const Mat block = noise_.cross_rate(
                    m.row(p).transpose(), m.row(q).transpose(),
                    cov.block(p * d_, p * d_, d_, d_), cov.block(p * d_, q * d_, d_, d_),
                    cov.block(q * d_, q * d_, d_, d_));
                dcov.block(p * d_, q * d_, d_, d_) += block;
                dcov.block(q * d_, p * d_, d_, d_) += block.transpose();
            }
        }
    }

    const DriftModel& drift_;
    const DiffusionModel& noise_;
    const GpPairDiffusion* gp_;
    int p_;
    int d_;
    std::vector<Mat> jac_;
    Mat m1_;
};

bool diffusion_is_zero(const DiffusionModel& noise) {
    if (dynamic_cast<const ZeroDiffusion*>(&noise) != nullptr) return true;
    if (const auto* gp = dynamic_cast<const GpPairDiffusion*>(&noise))
        return gp->eta() == 0.0;
    return false;
}

}  // namespace

MomentTrajectory propagate_moments(const DriftModel& v, const DiffusionModel& noise,
                                   const GaussianState& initial, const TimeGrid& grid,
                                   const PropagateOptions& options) {
    const int d = noise.state_dim();
    const auto n = initial.mean.size();
    if (n == 0 || n % d != 0)
        throw DimensionMismatchError("propagate_moments: mean length not divisible by d");
    const int p_count = static_cast<int>(n) / d;
    if (initial.cov.rows() != n || initial.cov.cols() != n)
        throw DimensionMismatchError("propagate_moments: covariance shape mismatch");
    if (!initial.mean.allFinite() || !initial.cov.allFinite())
        throw NonFiniteError("propagate_moments: non-finite initial state");

    MomentTrajectory traj;
    traj.steps = grid.steps;

    Mat m = unstack_rows(initial.mean, d);
    Mat cov = ((initial.cov + initial.cov.transpose()) / 2.0).eval();

    const bool mean_only = diffusion_is_zero(noise) && cov.cwiseAbs().maxCoeff() == 0.0;

    auto record = [&](int step_index) {
        if (!options.store_path && step_index != 0 && step_index != grid.steps) return;
        GaussianState s;
        s.time = grid.node(step_index);
        s.mean = stack_rows(m);
        s.cov = cov;
        traj.states.push_back(std::move(s));
    };
    record(0);

    const double h = grid.dt();

    if (mean_only) {
        // Zero diffusion from a deterministic start: the covariance stays
        // exactly zero and the mean path is flow_mean's RK4, bit for bit.
        Mat k1, k2, k3, k4;
        for (int step = 0; step < grid.steps; ++step) {
            k1 = v.evaluate_rows(m);
            k2 = v.evaluate_rows(m + (0.5 * h) * k1);
            k3 = v.evaluate_rows(m + (0.5 * h) * k2);
            k4 = v.evaluate_rows(m + h * k3);
            m += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            check_finite_rows(m, "propagate_moments", step);
            record(step + 1);
        }
        return traj;
    }

    MomentEngine engine(v, noise, p_count, d);
    Mat k1m, k2m, k3m, k4m, tm;
    Mat k1c, k2c, k3c, k4c, tc;
    for (int step = 0; step < grid.steps; ++step) {
        engine.rhs(m, cov, k1m, k1c);
        tm = m + (0.5 * h) * k1m;
        tc = cov + (0.5 * h) * k1c;
        engine.rhs(tm, tc, k2m, k2c);
        tm = m + (0.5 * h) * k2m;
        tc = cov + (0.5 * h) * k2c;
        engine.rhs(tm, tc, k3m, k3c);
        tm = m + h * k3m;
        tc = cov + h * k3c;
        engine.rhs(tm, tc, k4m, k4c);
        m += (h / 6.0) * (k1m + 2.0 * k2m + 2.0 * k3m + k4m);
        cov += (h / 6.0) * (k1c + 2.0 * k2c + 2.0 * k3c + k4c);

        cov = ((cov + cov.transpose()) / 2.0).eval();
        // Cheap positive-definiteness probe; only a failure pays for a full
        // eigendecomposition floor.
        const double probe =
            1e-12 * std::max(cov.diagonal().mean(), 1e-30) + 1e-300;
        Eigen::LLT<Mat> llt(Mat(cov + probe * Mat::Identity(cov.rows(), cov.cols())));
        if (llt.info() != Eigen::Success) {
            if (floor_eigenvalues(cov, 0.0)) ++traj.floor_events;
        }

        if (!m.allFinite() || !cov.allFinite())
            throw NonFiniteError("propagate_moments: non-finite state after step " +
                                 std::to_string(step));
        record(step + 1);
    }
    return traj;
}

MomentTrajectory propagate_moments(const VelocityField& v, double eta,
                                   const GaussianState& initial, const TimeGrid& grid,
                                   const PropagateOptions& options) {
    const SplineDrift drift(v);
    const GpPairDiffusion noise(v.kernel(), eta, v.dim());
    return propagate_moments(drift, noise, initial, grid, options);
}

// ---------------------------------------------------------------------------
// Jacobian determinant grids
// ---------------------------------------------------------------------------

Vec map_jacobian_determinants(const std::function<Mat(const Mat&)>& map,
                              const Mat& grid_points, double fd_step) {
    const auto g = grid_points.rows();
    const auto d = grid_points.cols();
    if (!(fd_step > 0.0))
        throw BadShapeParamsError("map_jacobian_determinants: fd_step must be positive");

    Mat batch(g * 2 * d, d);
    for (Eigen::Index i = 0; i < g; ++i) {
        for (Eigen::Index axis = 0; axis < d; ++axis) {
            Vec plus = grid_points.row(i).transpose();
            plus[axis] += fd_step;
            Vec minus = grid_points.row(i).transpose();
            minus[axis] -= fd_step;
            batch.row(i * 2 * d + 2 * axis) = plus.transpose();
            batch.row(i * 2 * d + 2 * axis + 1) = minus.transpose();
        }
    }
    const Mat mapped = map(batch);
    if (mapped.rows() != batch.rows() || mapped.cols() != d)
        throw DimensionMismatchError("map_jacobian_determinants: map changed shape");

    Vec dets(g);
    Mat jac(d, d);
    for (Eigen::Index i = 0; i < g; ++i) {
        for (Eigen::Index axis = 0; axis < d; ++axis) {
            jac.col(axis) = (mapped.row(i * 2 * d + 2 * axis) -
                             mapped.row(i * 2 * d + 2 * axis + 1))
                                .transpose() /
                            (2.0 * fd_step);
        }
        dets[i] = jac.determinant();
    }
    return dets;
}

Vec jacobian_determinant_grid(const DriftModel& v, const Mat& grid_points,
                              const TimeGrid& grid, double fd_step) {
    return map_jacobian_determinants(
        [&](const Mat& xs) { return flow_mean(v, xs, grid); }, grid_points, fd_step);
}

Vec jacobian_determinant_grid(const VelocityField& v, const Mat& grid_points,
                              const TimeGrid& grid, double fd_step) {
    return jacobian_determinant_grid(SplineDrift(v), grid_points, grid, fd_step);
}

}  // namespace lmflow
