#pragma once

#include <cstdint>
#include <vector>

#include "urbanverse/numerics/rng.hpp"

namespace uv::diff {

// One training region: its embedding and one target value per task.
struct RepositoryEntry {
    int64_t regionId = 0;
    std::vector<float> h;
    std::vector<double> targets;  // one per task, raw scale
};

// Pool of (embedding, targets) pairs that retrieval draws from. Targets are
// stored z-scored per task; the mean/std pair lets callers map predictions
// back to the raw scale. Embedding coordinates keep their raw values for
// cosine retrieval, but the repository also records their per-dimension
// mean/std so the regression heads can consume standardized inputs; region
// embeddings routinely carry a large shared offset that otherwise drowns
// the informative directions.
struct InfoRepository {
    int dim = 0;
    int numTasks = 0;
    std::vector<int64_t> regionIds;
    std::vector<float> embeddings;      // row-major, size() == regionIds.size() * dim
    std::vector<double> normTargets;    // row-major, size() == regionIds.size() * numTasks
    std::vector<double> taskMean;
    std::vector<double> taskStd;
    std::vector<double> hMean;          // per embedding dimension
    std::vector<double> hStd;           // constant dimensions pinned to 1

    size_t size() const { return regionIds.size(); }
    double normalize(double raw, int task) const;
    double denormalize(double normed, int task) const;
    std::vector<float> standardizeH(const std::vector<float>& h) const;
};

// Z-scores targets per task with the population standard deviation. A task
// whose targets are all equal has no usable scale; that is an error unless
// allowDegenerate is set, in which case its std is pinned to 1.
InfoRepository buildRepository(const std::vector<RepositoryEntry>& entries, int numTasks,
                               bool allowDegenerate = false);

enum class RetrievalMode { TopK, Random };

struct Prior {
    int64_t task = 0;
    double value = 0.0;                // normalized target scale
    std::vector<int64_t> neighbors;    // region ids of the entries used
    std::vector<double> weights;       // softmax weights, same order, sum to 1
    bool clamped = false;              // true when k exceeded the pool size
};

// Cosine-similarity retrieval of the k nearest repository entries followed by
// a softmax over their similarities; the prior is the weighted mean of the
// neighbors' normalized targets. Random mode picks k entries uniformly without
// replacement instead of the nearest ones (the softmax still uses their true
// similarities). excludeRegionId removes one entry from the pool, so a stored
// region can query without matching itself; pass -1 to keep the whole pool.
// rng is only consulted in Random mode.
Prior retrievePrior(const InfoRepository& repo, const std::vector<float>& query, int task, int k,
                    RetrievalMode mode, num::Rng& rng, int64_t excludeRegionId = -1);

}  // namespace uv::diff
