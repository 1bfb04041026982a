#pragma once

#include "lmflow/registration.hpp"

#include <string>

namespace lmflow {

// Synthetic 2D landmark shapes.
//   circle: points at angles 2 pi k / n on a circle of `radius`.
//   flower: r(theta) = radius * (1 + amplitude * cos(petals * theta)).
// Labels are "L000", "L001", ... in angle order.
struct SyntheticConfig {
    std::string shape = "circle";  // circle | flower
    int n = 20;
    double radius = 10.0;          // mm
    double amplitude = 0.3;        // flower petal amplitude (fraction of radius)
    int petals = 5;
};

LandmarkSet generate_synthetic(const SyntheticConfig& config);

}  // namespace lmflow
