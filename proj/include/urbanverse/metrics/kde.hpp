#pragma once

#include <vector>

namespace uv::metrics {

struct DensityCurve {
    std::vector<double> grid;
    std::vector<double> density;
    double bandwidth = 0.0;
};

// Epanechnikov kernel density estimate evaluated on the given grid:
//   f(y) = (1/(n b)) sum_i K((y - s_i)/b),  K(u) = 0.75 (1 - u^2) on |u| <= 1.
DensityCurve kde(const std::vector<double>& samples, double bandwidth,
                 const std::vector<double>& grid);

// Silverman-style default bandwidth 1.06 * sd * n^(-1/5) with the sample
// standard deviation. Needs at least two distinct values.
double defaultBandwidth(const std::vector<double>& samples);

// Uniform grid covering [min - bandwidth, max + bandwidth], so the estimate's
// support is fully inside and the curve integrates to ~1.
std::vector<double> coveringGrid(const std::vector<double>& samples, double bandwidth,
                                 size_t points = 256);

}  // namespace uv::metrics
