#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "urbanverse/common.hpp"
#include "urbanverse/diffusion/denoiser.hpp"
#include "urbanverse/diffusion/repository.hpp"
#include "urbanverse/diffusion/schedule.hpp"
#include "urbanverse/numerics/optimizer.hpp"

namespace uv::diff {

enum class PriorMode { Retrieved, Gaussian };

inline const char* priorModeName(PriorMode m) {
    return m == PriorMode::Retrieved ? "retrieved" : "gaussian";
}

// One reverse step in double precision. Shared by the scalar and batched
// samplers so the path algebra is tested once. For t == 1 the step is
// deterministic and v is ignored.
inline double reverseStep(double yt, double epsHat, double prior, int t,
                          const DiffusionSchedule& s, double v) {
    double rootAbar = std::sqrt(s.alphaBar[t]);
    double y0Hat = (yt - (1.0 - rootAbar) * prior - std::sqrt(1.0 - s.alphaBar[t]) * epsHat) / rootAbar;
    if (t == 1) return y0Hat;
    PosteriorCoeffs c = posteriorCoeffs(s, t);
    return c.g0 * y0Hat + c.g1 * yt + c.g2 * prior + std::sqrt(c.betaTilde) * v;
}

// Full reverse pass driven by an arbitrary noise predictor. Draw order is
// fixed: one normal for y_T, then one per step t = T..2, each drawn after the
// predictor call for that step.
inline double sampleOnceWith(const std::function<double(double, int)>& epsFn, double prior,
                             const DiffusionSchedule& s, num::Rng& rng) {
    double yt = prior + rng.normal();
    for (int t = s.steps; t >= 1; --t) {
        double epsHat = epsFn(yt, t);
        double v = t > 1 ? rng.normal() : 0.0;
        yt = reverseStep(yt, epsHat, prior, t, s, v);
    }
    return yt;
}

template <typename R>
struct DiffusionModelT {
    DenoiserConfig cfg;
    DiffusionSchedule schedule;
    DenoiserParamsT<R> denoiser;
    InfoRepository repo;
    PriorMode priorMode = PriorMode::Retrieved;
    RetrievalMode retrievalMode = RetrievalMode::TopK;
    int retrievalK = 5;

    // Prior for one query embedding on one task, honoring the model's prior
    // and retrieval modes. Normalized target scale.
    double priorFor(const std::vector<float>& h, int task, num::Rng& rng,
                    int64_t excludeRegionId = -1) const {
        if (priorMode == PriorMode::Gaussian) return 0.0;
        return retrievePrior(repo, h, task, retrievalK, retrievalMode, rng, excludeRegionId).value;
    }
};

using DiffusionModel = DiffusionModelT<float>;

struct DiffusionTrainConfig {
    int epochs = 1500;
    double learningRate = 5e-3;
    double weightDecay = 0.01;
    int batchSize = 64;
    uint64_t seed = 0;
    bool allowDegenerateTargets = false;
    int onlyTask = -1;  // >= 0 pins every step to that task (fine-tuning)
    std::function<void(int, double)> onEpoch;
};

struct DiffusionTrainResult {
    std::vector<double> epochLoss;
};

// Trains the denoiser on (embedding, targets) rows. Each optimizer step picks
// one task for the whole batch, then per row a timestep and a noise draw; the
// noisy target comes from the closed-form forward marginal around that row's
// prior. Retrieval priors exclude the row's own repository entry.
template <typename R>
DiffusionTrainResult trainDiffusion(DiffusionModelT<R>& model,
                                    const std::vector<RepositoryEntry>& data,
                                    const DiffusionTrainConfig& tc) {
    model.cfg.validate();
    if (tc.epochs < 1 || tc.batchSize < 1) throw ConfigError("training needs epochs, batchSize >= 1");
    if (tc.learningRate <= 0) throw ConfigError("training needs a positive learning rate");
    if (tc.onlyTask >= model.cfg.numTasks)
        throw ConfigError("onlyTask " + std::to_string(tc.onlyTask) + " is outside the task range");
    if (model.schedule.steps != model.cfg.steps) {
        throw ConfigError("model schedule covers " + std::to_string(model.schedule.steps) +
                          " steps but the denoiser expects " + std::to_string(model.cfg.steps));
    }
    model.repo = buildRepository(data, model.cfg.numTasks, tc.allowDegenerateTargets);

    size_t n = data.size();
    int numTasks = model.cfg.numTasks;

    // Fixed priors can be computed once; Random-mode priors are redrawn each
    // time a row is used so the ablation really sees fresh neighbor sets.
    std::vector<double> fixedPrior;
    bool priorIsFixed = model.priorMode == PriorMode::Gaussian ||
                        model.retrievalMode == RetrievalMode::TopK;
    if (priorIsFixed) {
        fixedPrior.assign(n * static_cast<size_t>(numTasks), 0.0);
        if (model.priorMode == PriorMode::Retrieved) {
            num::Rng unused(0);
            for (size_t i = 0; i < n; ++i) {
                for (int u = 0; u < numTasks; ++u) {
                    fixedPrior[i * numTasks + u] =
                        model.priorFor(data[i].h, u, unused, data[i].regionId);
                }
            }
        }
    }

    auto params = model.denoiser.params();
    auto opt = num::OptimizerStateT<R>::adamW(static_cast<R>(tc.learningRate),
                                              static_cast<R>(tc.weightDecay));
    num::Rng root(tc.seed);

    DiffusionTrainResult result;
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        auto shuffleRng = root.derive("shuffle", static_cast<uint64_t>(epoch));
        auto stepRng = root.derive("step", static_cast<uint64_t>(epoch));
        shuffleRng.shuffle(order);

        double lossSum = 0.0;
        size_t lossCount = 0;
        for (size_t start = 0; start < n; start += static_cast<size_t>(tc.batchSize)) {
            size_t end = std::min(n, start + static_cast<size_t>(tc.batchSize));
            int64_t b = static_cast<int64_t>(end - start);
            int task = tc.onlyTask >= 0 ? tc.onlyTask
                                        : static_cast<int>(stepRng.below(static_cast<uint64_t>(numTasks)));

            auto h = num::TensorT<R>::zeros({b, model.cfg.dim});
            auto yt = num::TensorT<R>::zeros({b, 1});
            auto eps = num::TensorT<R>::zeros({b, 1});
            std::vector<int64_t> tIdx(static_cast<size_t>(b));
            std::vector<int64_t> uIdx(static_cast<size_t>(b), task);
            for (int64_t r = 0; r < b; ++r) {
                size_t i = order[start + static_cast<size_t>(r)];
                for (int c = 0; c < model.cfg.dim; ++c) {
                    h.value()[static_cast<size_t>(r) * model.cfg.dim + c] =
                        static_cast<R>(data[i].h[static_cast<size_t>(c)]);
                }
                double prior = priorIsFixed
                                   ? fixedPrior[i * numTasks + task]
                                   : model.priorFor(data[i].h, task, stepRng, data[i].regionId);
                int t = 1 + static_cast<int>(stepRng.below(static_cast<uint64_t>(model.cfg.steps)));
                double e = stepRng.normal();
                double y0 = model.repo.normTargets[i * static_cast<size_t>(numTasks) +
                                                   static_cast<size_t>(task)];
                tIdx[static_cast<size_t>(r)] = t;
                yt.value()[static_cast<size_t>(r)] =
                    static_cast<R>(forwardSample(y0, prior, t, e, model.schedule));
                eps.value()[static_cast<size_t>(r)] = static_cast<R>(e);
            }

            auto epsHat = denoiseBatch(model.denoiser, h, yt, tIdx, uIdx);
            auto loss = num::meanSquares(num::sub(epsHat, eps));
            double lv = static_cast<double>(loss.item());
            if (!std::isfinite(lv) || lv > 1e6) {
                throw NumericError("diffusion training diverged at epoch " + std::to_string(epoch) +
                                   " (loss " + std::to_string(lv) + ")");
            }
            num::backward(loss);
            num::optimizerStep(params, opt);
            num::zeroGrads(params);
            lossSum += lv * static_cast<double>(b);
            lossCount += static_cast<size_t>(b);
        }
        double epochLoss = lossSum / static_cast<double>(lossCount);
        result.epochLoss.push_back(epochLoss);
        if (tc.onEpoch) tc.onEpoch(epoch, epochLoss);
    }
    return result;
}

struct PredictionSet {
    int64_t regionId = 0;
    int task = 0;
    double point = 0.0;            // raw target scale
    std::vector<double> samples;   // raw target scale
    double prior = 0.0;            // normalized scale, for audit output
};

// Runs numSamples independent reverse passes for every (region, task) pair and
// averages them into the point estimate (median when medianPoint is set).
// Retrieval keeps the full pool: queries here are unseen regions.
template <typename R>
std::vector<PredictionSet> predictRegions(DiffusionModelT<R>& model,
                                          const std::vector<int64_t>& regionIds,
                                          const std::vector<std::vector<float>>& embeddings,
                                          int numSamples, uint64_t seed, bool medianPoint = false) {
    if (regionIds.size() != embeddings.size()) {
        throw DataError("region id and embedding counts differ");
    }
    if (numSamples < 1) throw ConfigError("prediction needs numSamples >= 1");
    size_t n = regionIds.size();
    int numTasks = model.cfg.numTasks;
    num::Rng root(seed);
    num::NoGrad guard;

    // All (region, task) pairs run as one batch per reverse step.
    size_t rows = n * static_cast<size_t>(numTasks);
    auto h = num::TensorT<R>::zeros({static_cast<int64_t>(rows), model.cfg.dim});
    std::vector<int64_t> uIdx(rows);
    std::vector<double> prior(rows);
    {
        num::Rng priorRng = root.derive("prior");
        for (size_t i = 0; i < n; ++i) {
            if (static_cast<int>(embeddings[i].size()) != model.cfg.dim) {
                throw DataError("embedding for region " + std::to_string(regionIds[i]) +
                                " has dim " + std::to_string(embeddings[i].size()) + ", expected " +
                                std::to_string(model.cfg.dim));
            }
            for (int u = 0; u < numTasks; ++u) {
                size_t r = i * static_cast<size_t>(numTasks) + static_cast<size_t>(u);
                for (int c = 0; c < model.cfg.dim; ++c) {
                    h.value()[r * static_cast<size_t>(model.cfg.dim) + static_cast<size_t>(c)] =
                        static_cast<R>(embeddings[i][static_cast<size_t>(c)]);
                }
                uIdx[r] = u;
                prior[r] = model.priorFor(embeddings[i], u, priorRng);
            }
        }
    }

    std::vector<std::vector<double>> samples(rows);
    for (auto& s : samples) s.reserve(static_cast<size_t>(numSamples));

    auto yt = num::TensorT<R>::zeros({static_cast<int64_t>(rows), 1});
    std::vector<double> ytPath(rows);
    std::vector<int64_t> tIdx(rows);
    for (int round = 0; round < numSamples; ++round) {
        auto rng = root.derive("round", static_cast<uint64_t>(round));
        for (size_t r = 0; r < rows; ++r) ytPath[r] = prior[r] + rng.normal();
        for (int t = model.schedule.steps; t >= 1; --t) {
            for (size_t r = 0; r < rows; ++r) {
                yt.value()[r] = static_cast<R>(ytPath[r]);
                tIdx[r] = t;
            }
            auto epsHat = denoiseBatch(model.denoiser, h, yt, tIdx, uIdx);
            for (size_t r = 0; r < rows; ++r) {
                double v = t > 1 ? rng.normal() : 0.0;
                ytPath[r] = reverseStep(ytPath[r], static_cast<double>(epsHat.value()[r]), prior[r],
                                        t, model.schedule, v);
            }
        }
        for (size_t r = 0; r < rows; ++r) samples[r].push_back(ytPath[r]);
    }

    std::vector<PredictionSet> out(rows);
    for (size_t i = 0; i < n; ++i) {
        for (int u = 0; u < numTasks; ++u) {
            size_t r = i * static_cast<size_t>(numTasks) + static_cast<size_t>(u);
            PredictionSet& ps = out[r];
            ps.regionId = regionIds[i];
            ps.task = u;
            ps.prior = prior[r];
            ps.samples.resize(samples[r].size());
            for (size_t j = 0; j < samples[r].size(); ++j) {
                ps.samples[j] = model.repo.denormalize(samples[r][j], u);
            }
            if (medianPoint) {
                std::vector<double> sorted = ps.samples;
                std::sort(sorted.begin(), sorted.end());
                size_t m = sorted.size() / 2;
                ps.point = sorted.size() % 2 ? sorted[m] : 0.5 * (sorted[m - 1] + sorted[m]);
            } else {
                ps.point = std::accumulate(ps.samples.begin(), ps.samples.end(), 0.0) /
                           static_cast<double>(ps.samples.size());
            }
        }
    }
    return out;
}

// Scalar convenience wrapper over the model's own denoiser, mainly for tests:
// a single region/task pair, one sample.
template <typename R>
double sampleOnce(DiffusionModelT<R>& model, const std::vector<float>& embedding, int task,
                  double prior, num::Rng& rng) {
    num::NoGrad guard;
    auto h = num::TensorT<R>::fromVector({1, model.cfg.dim},
                                         std::vector<R>(embedding.begin(), embedding.end()));
    auto epsFn = [&](double yt, int t) {
        auto ytT = num::TensorT<R>::fromVector({1, 1}, {static_cast<R>(yt)});
        auto e = denoiseBatch(model.denoiser, h, ytT, {t}, {task});
        return static_cast<double>(e.value()[0]);
    };
    return sampleOnceWith(epsFn, prior, model.schedule, rng);
}

// Deterministic regression head used by the head ablation: a plain MLP on
// [h ‖ task embedding] trained with MSE on normalized targets.
template <typename R>
struct PointBaselineT {
    int dim = 144;
    int dnDim = 128;
    int numTasks = 1;
    num::TensorT<R> uEmbed;
    num::TensorT<R> w1, b1, w2, b2, w3, b3;
    InfoRepository repo;

    void init(num::Rng& rng) {
        if (dim < 1 || dnDim < 1 || numTasks < 1) throw ConfigError("point baseline dims must be positive");
        auto mat = [&](int64_t r, int64_t c) {
            return num::TensorT<R>::paramNormal({r, c}, rng, R(1) / std::sqrt(R(r)));
        };
        uEmbed = num::TensorT<R>::paramNormal({numTasks, dnDim}, rng, R(0.02));
        w1 = mat(dim + dnDim, dnDim);
        b1 = num::TensorT<R>::paramFilled({1, dnDim}, R(0));
        w2 = mat(dnDim, dnDim);
        b2 = num::TensorT<R>::paramFilled({1, dnDim}, R(0));
        w3 = mat(dnDim, 1);
        b3 = num::TensorT<R>::paramFilled({1, 1}, R(0));
    }

    num::ParamList<R> params() {
        return {{"u_embed", uEmbed}, {"w1", w1}, {"b1", b1}, {"w2", w2},
                {"b2", b2}, {"w3", w3}, {"b3", b3}};
    }

    num::TensorT<R> forward(const num::TensorT<R>& h, const std::vector<int64_t>& uIdx) {
        using namespace uv::num;
        auto x = concatCols<R>({h, embedRows(uEmbed, uIdx)});
        x = softplus(linear(x, w1, b1));
        x = softplus(linear(x, w2, b2));
        return linear(x, w3, b3);
    }
};

template <typename R>
DiffusionTrainResult trainPointBaseline(PointBaselineT<R>& model,
                                        const std::vector<RepositoryEntry>& data,
                                        const DiffusionTrainConfig& tc) {
    if (tc.epochs < 1 || tc.batchSize < 1) throw ConfigError("training needs epochs, batchSize >= 1");
    model.repo = buildRepository(data, model.numTasks, tc.allowDegenerateTargets);

    // Every (region, task) pair is one example.
    size_t n = data.size();
    size_t total = n * static_cast<size_t>(model.numTasks);
    std::vector<size_t> order(total);
    std::iota(order.begin(), order.end(), size_t{0});

    auto params = model.params();
    auto opt = num::OptimizerStateT<R>::adamW(static_cast<R>(tc.learningRate),
                                              static_cast<R>(tc.weightDecay));
    num::Rng root(tc.seed);

    DiffusionTrainResult result;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        auto shuffleRng = root.derive("shuffle", static_cast<uint64_t>(epoch));
        shuffleRng.shuffle(order);
        double lossSum = 0.0;
        size_t lossCount = 0;
        for (size_t start = 0; start < total; start += static_cast<size_t>(tc.batchSize)) {
            size_t end = std::min(total, start + static_cast<size_t>(tc.batchSize));
            int64_t b = static_cast<int64_t>(end - start);
            auto h = num::TensorT<R>::zeros({b, model.dim});
            auto target = num::TensorT<R>::zeros({b, 1});
            std::vector<int64_t> uIdx(static_cast<size_t>(b));
            for (int64_t r = 0; r < b; ++r) {
                size_t ex = order[start + static_cast<size_t>(r)];
                size_t i = ex / static_cast<size_t>(model.numTasks);
                int u = static_cast<int>(ex % static_cast<size_t>(model.numTasks));
                for (int c = 0; c < model.dim; ++c) {
                    h.value()[static_cast<size_t>(r) * model.dim + c] =
                        static_cast<R>(data[i].h[static_cast<size_t>(c)]);
                }
                uIdx[static_cast<size_t>(r)] = u;
                target.value()[static_cast<size_t>(r)] = static_cast<R>(
                    model.repo.normTargets[i * static_cast<size_t>(model.numTasks) +
                                           static_cast<size_t>(u)]);
            }
            auto pred = model.forward(h, uIdx);
            auto loss = num::meanSquares(num::sub(pred, target));
            double lv = static_cast<double>(loss.item());
            if (!std::isfinite(lv) || lv > 1e6) {
                throw NumericError("point baseline diverged at epoch " + std::to_string(epoch));
            }
            num::backward(loss);
            num::optimizerStep(params, opt);
            num::zeroGrads(params);
            lossSum += lv * static_cast<double>(b);
            lossCount += static_cast<size_t>(b);
        }
        double epochLoss = lossSum / static_cast<double>(lossCount);
        result.epochLoss.push_back(epochLoss);
        if (tc.onEpoch) tc.onEpoch(epoch, epochLoss);
    }
    return result;
}

template <typename R>
std::vector<PredictionSet> predictPointBaseline(PointBaselineT<R>& model,
                                                const std::vector<int64_t>& regionIds,
                                                const std::vector<std::vector<float>>& embeddings) {
    if (regionIds.size() != embeddings.size()) throw DataError("region id and embedding counts differ");
    num::NoGrad guard;
    size_t n = regionIds.size();
    size_t rows = n * static_cast<size_t>(model.numTasks);
    auto h = num::TensorT<R>::zeros({static_cast<int64_t>(rows), model.dim});
    std::vector<int64_t> uIdx(rows);
    for (size_t i = 0; i < n; ++i) {
        if (static_cast<int>(embeddings[i].size()) != model.dim) {
            throw DataError("embedding for region " + std::to_string(regionIds[i]) + " has dim " +
                            std::to_string(embeddings[i].size()) + ", expected " +
                            std::to_string(model.dim));
        }
        for (int u = 0; u < model.numTasks; ++u) {
            size_t r = i * static_cast<size_t>(model.numTasks) + static_cast<size_t>(u);
            for (int c = 0; c < model.dim; ++c) {
                h.value()[r * static_cast<size_t>(model.dim) + static_cast<size_t>(c)] =
                    static_cast<R>(embeddings[i][static_cast<size_t>(c)]);
            }
            uIdx[r] = u;
        }
    }
    auto pred = model.forward(h, uIdx);
    std::vector<PredictionSet> out(rows);
    for (size_t i = 0; i < n; ++i) {
        for (int u = 0; u < model.numTasks; ++u) {
            size_t r = i * static_cast<size_t>(model.numTasks) + static_cast<size_t>(u);
            out[r].regionId = regionIds[i];
            out[r].task = u;
            out[r].point = model.repo.denormalize(static_cast<double>(pred.value()[r]), u);
            out[r].samples = {out[r].point};
        }
    }
    return out;
}

}  // namespace uv::diff
