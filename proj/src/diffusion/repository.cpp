#include "urbanverse/diffusion/repository.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "urbanverse/common.hpp"

namespace uv::diff {

double InfoRepository::normalize(double raw, int task) const {
    return (raw - taskMean[static_cast<size_t>(task)]) / taskStd[static_cast<size_t>(task)];
}

double InfoRepository::denormalize(double normed, int task) const {
    return normed * taskStd[static_cast<size_t>(task)] + taskMean[static_cast<size_t>(task)];
}

std::vector<float> InfoRepository::standardizeH(const std::vector<float>& h) const {
    if (static_cast<int>(h.size()) != dim) {
        throw DataError("embedding dim " + std::to_string(h.size()) + " does not match repository dim " +
                        std::to_string(dim));
    }
    std::vector<float> out(h.size());
    for (size_t j = 0; j < h.size(); ++j) {
        out[j] = static_cast<float>((static_cast<double>(h[j]) - hMean[j]) / hStd[j]);
    }
    return out;
}

InfoRepository buildRepository(const std::vector<RepositoryEntry>& entries, int numTasks,
                               bool allowDegenerate) {
    if (entries.empty()) throw DataError("repository needs at least one entry");
    if (numTasks < 1) throw ConfigError("repository needs at least one task");

    InfoRepository repo;
    repo.dim = static_cast<int>(entries.front().h.size());
    if (repo.dim == 0) throw DataError("repository embeddings must be non-empty");
    repo.numTasks = numTasks;

    size_t n = entries.size();
    repo.regionIds.reserve(n);
    repo.embeddings.reserve(n * static_cast<size_t>(repo.dim));
    std::vector<double> raw(n * static_cast<size_t>(numTasks));
    for (size_t i = 0; i < n; ++i) {
        const auto& e = entries[i];
        if (static_cast<int>(e.h.size()) != repo.dim) {
            throw DataError("repository embedding for region " + std::to_string(e.regionId) +
                            " has dim " + std::to_string(e.h.size()) + ", expected " +
                            std::to_string(repo.dim));
        }
        if (static_cast<int>(e.targets.size()) != numTasks) {
            throw DataError("repository entry for region " + std::to_string(e.regionId) +
                            " has " + std::to_string(e.targets.size()) + " targets, expected " +
                            std::to_string(numTasks));
        }
        repo.regionIds.push_back(e.regionId);
        repo.embeddings.insert(repo.embeddings.end(), e.h.begin(), e.h.end());
        for (int u = 0; u < numTasks; ++u) raw[i * numTasks + u] = e.targets[static_cast<size_t>(u)];
    }

    repo.taskMean.assign(static_cast<size_t>(numTasks), 0.0);
    repo.taskStd.assign(static_cast<size_t>(numTasks), 1.0);
    for (int u = 0; u < numTasks; ++u) {
        double mean = 0.0;
        for (size_t i = 0; i < n; ++i) mean += raw[i * numTasks + u];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double d = raw[i * numTasks + u] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        double sd = std::sqrt(var);
        if (sd <= 0.0) {
            if (!allowDegenerate) {
                throw DataError("task " + std::to_string(u) +
                                " has constant targets; cannot normalize");
            }
            sd = 1.0;
        }
        repo.taskMean[static_cast<size_t>(u)] = mean;
        repo.taskStd[static_cast<size_t>(u)] = sd;
    }

    repo.normTargets.resize(raw.size());
    for (size_t i = 0; i < n; ++i) {
        for (int u = 0; u < numTasks; ++u) {
            repo.normTargets[i * numTasks + u] = repo.normalize(raw[i * numTasks + u], u);
        }
    }

    repo.hMean.assign(static_cast<size_t>(repo.dim), 0.0);
    repo.hStd.assign(static_cast<size_t>(repo.dim), 0.0);
    for (size_t i = 0; i < n; ++i) {
        for (int j = 0; j < repo.dim; ++j) {
            repo.hMean[static_cast<size_t>(j)] +=
                repo.embeddings[i * static_cast<size_t>(repo.dim) + static_cast<size_t>(j)];
        }
    }
    for (auto& v : repo.hMean) v /= static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
        for (int j = 0; j < repo.dim; ++j) {
            double d = repo.embeddings[i * static_cast<size_t>(repo.dim) + static_cast<size_t>(j)] -
                       repo.hMean[static_cast<size_t>(j)];
            repo.hStd[static_cast<size_t>(j)] += d * d;
        }
    }
    for (auto& v : repo.hStd) {
        v = std::sqrt(v / static_cast<double>(n));
        if (v <= 0.0) v = 1.0;
    }
    return repo;
}

namespace {

double cosine(const float* a, const float* b, int dim, double normA) {
    double dot = 0.0, nb = 0.0;
    for (int i = 0; i < dim; ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (nb <= 0.0) return 0.0;  // zero-norm entries are never similar to anything
    return dot / (normA * std::sqrt(nb));
}

}  // namespace

Prior retrievePrior(const InfoRepository& repo, const std::vector<float>& query, int task, int k,
                    RetrievalMode mode, num::Rng& rng, int64_t excludeRegionId) {
    if (static_cast<int>(query.size()) != repo.dim) {
        throw DataError("query dim " + std::to_string(query.size()) + " does not match repository dim " +
                        std::to_string(repo.dim));
    }
    if (task < 0 || task >= repo.numTasks) {
        throw ConfigError("task " + std::to_string(task) + " outside [0, " +
                          std::to_string(repo.numTasks) + ")");
    }
    if (k < 1) throw ConfigError("retrieval needs k >= 1");

    double qn = 0.0;
    for (float v : query) qn += static_cast<double>(v) * v;
    if (qn <= 0.0) throw DataError("cannot retrieve with a zero-norm query embedding");
    qn = std::sqrt(qn);

    std::vector<size_t> pool;
    pool.reserve(repo.size());
    for (size_t i = 0; i < repo.size(); ++i) {
        if (repo.regionIds[i] != excludeRegionId) pool.push_back(i);
    }
    if (pool.empty()) throw DataError("retrieval pool is empty after exclusion");

    Prior prior;
    prior.task = task;
    if (k > static_cast<int>(pool.size())) {
        k = static_cast<int>(pool.size());
        prior.clamped = true;
    }

    std::vector<double> sims(pool.size());
    for (size_t j = 0; j < pool.size(); ++j) {
        sims[j] = cosine(query.data(), repo.embeddings.data() + pool[j] * static_cast<size_t>(repo.dim),
                         repo.dim, qn);
    }

    std::vector<size_t> picked;  // indices into pool
    if (mode == RetrievalMode::TopK) {
        std::vector<size_t> order(pool.size());
        std::iota(order.begin(), order.end(), size_t{0});
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            if (sims[a] != sims[b]) return sims[a] > sims[b];
            return repo.regionIds[pool[a]] < repo.regionIds[pool[b]];
        });
        picked.assign(order.begin(), order.begin() + k);
    } else {
        for (int idx : rng.sampleWithoutReplacement(static_cast<int>(pool.size()), k)) {
            picked.push_back(static_cast<size_t>(idx));
        }
    }

    double maxSim = sims[picked[0]];
    for (size_t j : picked) maxSim = std::max(maxSim, sims[j]);
    double total = 0.0;
    prior.weights.resize(picked.size());
    prior.neighbors.resize(picked.size());
    for (size_t j = 0; j < picked.size(); ++j) {
        prior.weights[j] = std::exp(sims[picked[j]] - maxSim);
        prior.neighbors[j] = repo.regionIds[pool[picked[j]]];
        total += prior.weights[j];
    }
    double value = 0.0;
    for (size_t j = 0; j < picked.size(); ++j) {
        prior.weights[j] /= total;
        value += prior.weights[j] *
                 repo.normTargets[pool[picked[j]] * static_cast<size_t>(repo.numTasks) +
                                  static_cast<size_t>(task)];
    }
    prior.value = value;
    return prior;
}

}  // namespace uv::diff
