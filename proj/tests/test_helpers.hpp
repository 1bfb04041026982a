#pragma once

#include "lmflow/registration.hpp"
#include "lmflow/synthetic.hpp"

#include <random>

namespace lmflow::testing {

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline Mat random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                         double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
    return m;
}

inline Vec random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
    return v;
}

// G G^T + ridge: strictly positive definite.
inline Mat random_spd(std::mt19937_64& rng, Eigen::Index n, double ridge = 1e-3) {
    const Mat g = random_matrix(rng, n, n);
    return g * g.transpose() + ridge * Mat::Identity(n, n);
}

inline LandmarkSet circle_set(int n, double radius = 10.0) {
    SyntheticConfig cfg;
    cfg.shape = "circle";
    cfg.n = n;
    cfg.radius = radius;
    return generate_synthetic(cfg);
}

inline LandmarkSet flower_set(int n, double radius = 10.0, double amplitude = 0.3,
                              int petals = 5) {
    SyntheticConfig cfg;
    cfg.shape = "flower";
    cfg.n = n;
    cfg.radius = radius;
    cfg.amplitude = amplitude;
    cfg.petals = petals;
    return generate_synthetic(cfg);
}

}  // namespace lmflow::testing
