#include "urbanverse/metrics/metrics.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "urbanverse/common.hpp"

namespace uv::metrics {

MetricReport computeMetrics(const std::vector<double>& pred, const std::vector<double>& truth,
                            int task) {
    if (pred.size() != truth.size()) {
        throw DataError("metric inputs differ in length: " + std::to_string(pred.size()) + " vs " +
                        std::to_string(truth.size()));
    }
    if (truth.size() < 2) throw DataError("metrics need at least two pairs");

    MetricReport r;
    r.task = task;
    r.n = truth.size();

    double absSum = 0.0, sqSum = 0.0, mean = 0.0;
    for (double y : truth) mean += y;
    mean /= static_cast<double>(truth.size());
    double variance = 0.0;
    for (size_t i = 0; i < truth.size(); ++i) {
        double e = pred[i] - truth[i];
        absSum += std::abs(e);
        sqSum += e * e;
        variance += (truth[i] - mean) * (truth[i] - mean);
    }
    r.mae = absSum / static_cast<double>(r.n);
    r.rmse = std::sqrt(sqSum / static_cast<double>(r.n));
    if (variance > 0.0) {
        r.r2 = 1.0 - sqSum / variance;
    } else {
        r.r2 = std::numeric_limits<double>::quiet_NaN();
        r.degenerateTruth = true;
    }
    return r;
}

}  // namespace uv::metrics
