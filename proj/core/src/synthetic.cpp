#include "lmflow/synthetic.hpp"

#include <cmath>
#include <cstdio>

namespace lmflow {

LandmarkSet generate_synthetic(const SyntheticConfig& config) {
    if (config.shape != "circle" && config.shape != "flower")
        throw BadShapeParamsError("unknown shape '" + config.shape +
                                  "' (expected circle or flower)");
    if (config.n < 3) throw BadShapeParamsError("synthetic shapes need n >= 3 points");
    if (!(config.radius > 0.0)) throw BadShapeParamsError("radius must be positive");
    if (!(config.amplitude >= 0.0) || !(config.amplitude < 1.0))
        throw BadShapeParamsError("amplitude must lie in [0, 1)");
    if (config.petals < 1) throw BadShapeParamsError("petals must be >= 1");

    LandmarkSet set;
    set.points.resize(config.n, 2);
    set.labels.reserve(static_cast<size_t>(config.n));
    const double two_pi = 2.0 * M_PI;
    for (int k = 0; k < config.n; ++k) {
        const double theta = two_pi * k / config.n;
        double r = config.radius;
        if (config.shape == "flower")
            r *= 1.0 + config.amplitude * std::cos(config.petals * theta);
        set.points(k, 0) = r * std::cos(theta);
        set.points(k, 1) = r * std::sin(theta);
        char buf[16];
        std::snprintf(buf, sizeof buf, "L%03d", k);
        set.labels.emplace_back(buf);
    }
    return set;
}

}  // namespace lmflow
