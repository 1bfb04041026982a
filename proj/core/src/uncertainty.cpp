#include "lmflow/uncertainty.hpp"

#include <cmath>
#include <string>

namespace lmflow {

void GridSpec::validate() const {
    if (lo.size() != hi.size())
        throw DimensionMismatchError("grid lo/hi dimension mismatch");
    if (lo.size() != 2 && lo.size() != 3)
        throw DimensionMismatchError("grids must be 2-D or 3-D");
    if (resolution < 2) throw BadShapeParamsError("grid resolution must be >= 2");
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
        if (!std::isfinite(lo[i]) || !std::isfinite(hi[i]) || !(hi[i] > lo[i]))
            throw BadShapeParamsError("grid bounds must be finite with hi > lo per axis");
    }
}

Mat GridSpec::points() const {
    validate();
    const int d = dim();
    long total = 1;
    for (int i = 0; i < d; ++i) total *= resolution;
    Mat out(total, d);
    Vec step(d);
    for (int i = 0; i < d; ++i) step[i] = (hi[i] - lo[i]) / (resolution - 1);
    std::vector<int> idx(static_cast<size_t>(d), 0);
    for (long r = 0; r < total; ++r) {
        for (int i = 0; i < d; ++i) out(r, i) = lo[i] + idx[static_cast<size_t>(i)] * step[i];
        for (int i = d - 1; i >= 0; --i) {  // last axis fastest
            if (++idx[static_cast<size_t>(i)] < resolution) break;
            idx[static_cast<size_t>(i)] = 0;
        }
    }
    return out;
}

std::vector<Mat> marginal_covariance(const VelocityField& v, double eta,
                                     const Mat& landmarks, const Mat& queries,
                                     const TimeGrid& grid, int chunk) {
    const int d = v.dim();
    if (landmarks.cols() != d || queries.cols() != d)
        throw DimensionMismatchError("marginal_covariance: dimension mismatch");
    if (chunk < 1) throw BadShapeParamsError("marginal_covariance: chunk must be >= 1");
    const auto n = landmarks.rows();
    const auto g = queries.rows();

    std::vector<Mat> out(static_cast<size_t>(g));
    PropagateOptions options;
    options.store_path = false;

    for (Eigen::Index start = 0; start < g; start += chunk) {
        const Eigen::Index count = std::min<Eigen::Index>(chunk, g - start);
        Mat tracked(n + count, d);
        tracked.topRows(n) = landmarks;
        tracked.bottomRows(count) = queries.middleRows(start, count);

        GaussianState init;
        init.time = 0.0;
        init.mean = stack_rows(tracked);
        init.cov = Mat::Zero(init.mean.size(), init.mean.size());
        const MomentTrajectory traj = propagate_moments(v, eta, init, grid, options);
        const Mat& cov = traj.back().cov;
        for (Eigen::Index q = 0; q < count; ++q)
            out[static_cast<size_t>(start + q)] =
                cov.block((n + q) * d, (n + q) * d, d, d);
    }
    return out;
}

UncertaintyField fc_field(const VelocityField& v, double eta, const Mat& landmarks,
                          const Mat& queries, const TimeGrid& grid, int chunk) {
    UncertaintyField field;
    field.queries = queries;
    field.marginals = marginal_covariance(v, eta, landmarks, queries, grid, chunk);
    field.fc = Vec(queries.rows());
    for (Eigen::Index i = 0; i < queries.rows(); ++i)
        field.fc[i] = field.marginals[static_cast<size_t>(i)].norm();
    return field;
}

}  // namespace lmflow
