#include "urbanverse/metrics/kde.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "urbanverse/common.hpp"

namespace uv::metrics {

DensityCurve kde(const std::vector<double>& samples, double bandwidth,
                 const std::vector<double>& grid) {
    if (samples.empty()) throw DataError("density estimate needs at least one sample");
    if (!(bandwidth > 0.0)) throw ConfigError("bandwidth must be positive");

    DensityCurve curve;
    curve.grid = grid;
    curve.bandwidth = bandwidth;
    curve.density.resize(grid.size(), 0.0);
    double norm = 1.0 / (static_cast<double>(samples.size()) * bandwidth);
    for (size_t g = 0; g < grid.size(); ++g) {
        double acc = 0.0;
        for (double s : samples) {
            double u = (grid[g] - s) / bandwidth;
            if (u > -1.0 && u < 1.0) acc += 0.75 * (1.0 - u * u);
        }
        curve.density[g] = acc * norm;
    }
    return curve;
}

double defaultBandwidth(const std::vector<double>& samples) {
    if (samples.size() < 2) throw DataError("bandwidth rule needs at least two samples");
    double mean = 0.0;
    for (double s : samples) mean += s;
    mean /= static_cast<double>(samples.size());
    double var = 0.0;
    for (double s : samples) var += (s - mean) * (s - mean);
    var /= static_cast<double>(samples.size() - 1);
    if (var <= 0.0) throw DataError("bandwidth rule needs non-constant samples");
    return 1.06 * std::sqrt(var) * std::pow(static_cast<double>(samples.size()), -0.2);
}

std::vector<double> coveringGrid(const std::vector<double>& samples, double bandwidth,
                                 size_t points) {
    if (samples.empty()) throw DataError("grid needs at least one sample");
    if (!(bandwidth > 0.0)) throw ConfigError("bandwidth must be positive");
    if (points < 2) throw ConfigError("grid needs at least two points");
    auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
    double a = *lo - bandwidth, b = *hi + bandwidth;
    std::vector<double> grid(points);
    for (size_t i = 0; i < points; ++i) {
        grid[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1);
    }
    return grid;
}

}  // namespace uv::metrics
