#pragma once

#include <vector>

namespace uv::metrics {

struct MetricReport {
    int task = -1;
    double mae = 0.0;
    double rmse = 0.0;
    double r2 = 0.0;            // NaN when the truth has no variance
    size_t n = 0;
    bool degenerateTruth = false;
};

// MAE, RMSE and the coefficient of determination over paired values. Needs at
// least two pairs. Constant truth leaves R² undefined; it comes back as NaN
// with degenerateTruth set so callers can warn instead of crash.
MetricReport computeMetrics(const std::vector<double>& pred, const std::vector<double>& truth,
                            int task = -1);

}  // namespace uv::metrics
