#pragma once

#include "lmflow/moment_flow.hpp"

#include <vector>

namespace lmflow {

// Axis-aligned evaluation grid: `resolution` points per axis between lo and hi
// (inclusive), row-major over the last axis fastest.
struct GridSpec {
    Vec lo;
    Vec hi;
    int resolution = 50;

    int dim() const { return static_cast<int>(lo.size()); }
    void validate() const;
    Mat points() const;  // resolution^d x d
};

// Endpoint (t=1) marginal d x d covariance of each query point carried
// passively through the registered flow alongside the landmarks. Queries are
// processed in chunks of at most `chunk` per propagation; chunking cannot
// change the marginals because the moment equations are pair-local, and
// cross-chunk covariance is discarded by construction.
std::vector<Mat> marginal_covariance(const VelocityField& v, double eta,
                                     const Mat& landmarks, const Mat& queries,
                                     const TimeGrid& grid, int chunk = 256);

struct UncertaintyField {
    Mat queries;                 // G x d evaluation points (at t=0)
    Vec fc;                      // Frobenius norm of each endpoint marginal
    std::vector<Mat> marginals;  // the d x d marginals themselves
};

// FC (Frobenius-of-covariance) uncertainty value per query point.
UncertaintyField fc_field(const VelocityField& v, double eta, const Mat& landmarks,
                          const Mat& queries, const TimeGrid& grid, int chunk = 256);

}  // namespace lmflow
