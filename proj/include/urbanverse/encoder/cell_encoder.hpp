#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "urbanverse/common.hpp"
#include "urbanverse/grid/hexgrid.hpp"
#include "urbanverse/numerics/ops.hpp"
#include "urbanverse/numerics/optimizer.hpp"
#include "urbanverse/walks/walks.hpp"

namespace uv::enc {

struct EncoderConfig {
    int k = 8;
    int l = 4;
    int dim = 144;
    int heads = 4;
    int encLayers = 3;
    int decLayers = 1;
    double dropout = 0.1;
    bool usePositions = true;

    int seqLen() const { return k * l + 1; }
    int payload() const { return k * l; }

    void validate() const {
        if (k < 1 || l < 1) throw ConfigError("encoder needs k >= 1 and l >= 1");
        if (dim < 1 || heads < 1 || dim % heads != 0)
            throw ConfigError("embedding dim " + std::to_string(dim) +
                              " must be divisible by head count " + std::to_string(heads));
        if (encLayers < 1 || decLayers < 1) throw ConfigError("layer counts must be positive");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
    }
};

struct MaskSet {
    std::vector<int64_t> positions;  // subset of 1..k*l, sorted; 0 never masked
};

// Uniform sample without replacement of round-half-up(rho * payload)
// positions from {1..payload}.
inline MaskSet sampleMask(int payload, double rho, num::Rng& rng) {
    if (rho < 0.0 || rho > 1.0) throw ConfigError("mask ratio must be in [0,1]");
    const auto count = static_cast<uint64_t>(std::floor(rho * payload + 0.5));
    MaskSet m;
    auto picks = rng.sampleWithoutReplacement(static_cast<uint64_t>(payload), count);
    m.positions.reserve(picks.size());
    for (auto p : picks) m.positions.push_back(static_cast<int64_t>(p) + 1);
    std::sort(m.positions.begin(), m.positions.end());
    return m;
}

template <class R>
struct EncoderBlockT {
    num::TensorT<R> wq, bq, wk, bk, wv, bv, wo, bo;
    num::TensorT<R> ln1g, ln1b, ln2g, ln2b;
    num::TensorT<R> fw1, fb1, fw2, fb2;
};

template <class R>
struct AttnCapture {
    std::vector<std::vector<R>> mats;  // one L x L softmax per (layer, sequence, head)
    int64_t rows = 0;
};

template <class R>
class EncoderParamsT {
public:
    EncoderConfig cfg;
    num::TensorT<R> inW, inB;        // 15 -> d projection
    num::TensorT<R> maskToken;       // 1 x 15, applied before projection
    num::TensorT<R> posTable;        // (k*l+1) x d learned positions
    std::vector<EncoderBlockT<R>> enc;
    std::vector<EncoderBlockT<R>> dec;
    num::TensorT<R> outW1, outB1, outW2, outB2;  // d -> d -> 15 head

    void init(num::Rng& rng) {
        cfg.validate();
        const int d = cfg.dim;
        auto mat = [&](int in, int out) {
            return num::TensorT<R>::paramNormal({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
        };
        auto zeros = [&](int n) { return num::TensorT<R>::paramFilled({1, n}, R(0)); };
        auto ones = [&](int n) { return num::TensorT<R>::paramFilled({1, n}, R(1)); };

        inW = mat(grid::kPoiCategories, d);
        inB = zeros(d);
        maskToken = num::TensorT<R>::paramNormal({1, grid::kPoiCategories}, rng, 0.02);
        posTable = num::TensorT<R>::paramNormal({cfg.seqLen(), d}, rng, 0.02);
        auto makeBlock = [&]() {
            EncoderBlockT<R> b;
            b.wq = mat(d, d); b.bq = zeros(d);
            b.wk = mat(d, d); b.bk = zeros(d);
            b.wv = mat(d, d); b.bv = zeros(d);
            b.wo = mat(d, d); b.bo = zeros(d);
            b.ln1g = ones(d); b.ln1b = zeros(d);
            b.fw1 = mat(d, 4 * d); b.fb1 = zeros(4 * d);
            b.fw2 = mat(4 * d, d); b.fb2 = zeros(d);
            b.ln2g = ones(d); b.ln2b = zeros(d);
            return b;
        };
        enc.clear();
        dec.clear();
        for (int i = 0; i < cfg.encLayers; ++i) enc.push_back(makeBlock());
        for (int i = 0; i < cfg.decLayers; ++i) dec.push_back(makeBlock());
        outW1 = mat(d, d);
        outB1 = zeros(d);
        outW2 = mat(d, grid::kPoiCategories);
        outB2 = zeros(grid::kPoiCategories);
    }

    num::ParamList<R> params() {
        num::ParamList<R> list;
        list.push_back({"in.w", inW});
        list.push_back({"in.b", inB});
        list.push_back({"mask_token", maskToken});
        list.push_back({"pos", posTable});
        auto blockParams = [&list](const std::string& prefix, EncoderBlockT<R>& b) {
            list.push_back({prefix + ".wq", b.wq});
            list.push_back({prefix + ".bq", b.bq});
            list.push_back({prefix + ".wk", b.wk});
            list.push_back({prefix + ".bk", b.bk});
            list.push_back({prefix + ".wv", b.wv});
            list.push_back({prefix + ".bv", b.bv});
            list.push_back({prefix + ".wo", b.wo});
            list.push_back({prefix + ".bo", b.bo});
            list.push_back({prefix + ".ln1.g", b.ln1g});
            list.push_back({prefix + ".ln1.b", b.ln1b});
            list.push_back({prefix + ".ffn.w1", b.fw1});
            list.push_back({prefix + ".ffn.b1", b.fb1});
            list.push_back({prefix + ".ffn.w2", b.fw2});
            list.push_back({prefix + ".ffn.b2", b.fb2});
            list.push_back({prefix + ".ln2.g", b.ln2g});
            list.push_back({prefix + ".ln2.b", b.ln2b});
        };
        for (size_t i = 0; i < enc.size(); ++i) blockParams("enc" + std::to_string(i), enc[i]);
        for (size_t i = 0; i < dec.size(); ++i) blockParams("dec" + std::to_string(i), dec[i]);
        list.push_back({"out.w1", outW1});
        list.push_back({"out.b1", outB1});
        list.push_back({"out.w2", outW2});
        list.push_back({"out.b2", outB2});
        return list;
    }
};

using EncoderParams = EncoderParamsT<float>;

namespace detail {

template <class R>
num::TensorT<R> blockForward(EncoderBlockT<R>& blk, const num::TensorT<R>& X, int64_t B,
                             int64_t L, int heads, double dropRate, bool training,
                             num::Rng& rng, AttnCapture<R>* cap) {
    using namespace num;
    const int64_t d = X.dim(1);
    const int64_t dh = d / heads;
    auto Q = linear(X, blk.wq, blk.bq);
    auto K = linear(X, blk.wk, blk.bk);
    auto V = linear(X, blk.wv, blk.bv);
    std::vector<TensorT<R>> seqOut;
    seqOut.reserve(static_cast<size_t>(B));
    const R invSqrt = static_cast<R>(1.0 / std::sqrt(static_cast<double>(dh)));
    for (int64_t s = 0; s < B; ++s) {
        auto qs = sliceRows(Q, s * L, (s + 1) * L);
        auto ks = sliceRows(K, s * L, (s + 1) * L);
        auto vs = sliceRows(V, s * L, (s + 1) * L);
        std::vector<TensorT<R>> headOut;
        headOut.reserve(static_cast<size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            auto qh = sliceCols(qs, h * dh, (h + 1) * dh);
            auto kh = sliceCols(ks, h * dh, (h + 1) * dh);
            auto vh = sliceCols(vs, h * dh, (h + 1) * dh);
            auto attn = softmaxRows(scale(matmul(qh, transpose(kh)), invSqrt));
            if (cap) {
                cap->mats.push_back(attn.value());
                cap->rows = L;
            }
            headOut.push_back(matmul(attn, vh));
        }
        seqOut.push_back(concatCols(headOut));
    }
    auto A = linear(concatRows(seqOut), blk.wo, blk.bo);
    auto X1 = layerNorm(add(X, dropout(A, dropRate, rng, training)), blk.ln1g, blk.ln1b);
    auto F = linear(softplus(linear(X1, blk.fw1, blk.fb1)), blk.fw2, blk.fb2);
    return layerNorm(add(X1, dropout(F, dropRate, rng, training)), blk.ln2g, blk.ln2b);
}

template <class R>
void checkFinite(const num::TensorT<R>& t, const char* where) {
    for (const R v : t.value())
        if (!std::isfinite(v))
            throw NumericError(std::string("non-finite activation in ") + where);
}

}  // namespace detail

// POI counts span orders of magnitude between sparse and dense districts, so
// the training drivers compress them with log1p before the encoder sees them.
// Keeps attention inputs and the reconstruction target at unit scale without
// any corpus statistics to persist.
inline walks::FeatureSequence compressCounts(walks::FeatureSequence fs) {
    for (auto& v : fs.data) v = std::log1p(std::max(v, 0.0f));
    return fs;
}

// Stacks a batch of feature sequences into one (B*L x 15) constant.
template <class R>
num::TensorT<R> stackSequences(const std::vector<walks::FeatureSequence>& batch, int64_t L) {
    const int64_t B = static_cast<int64_t>(batch.size());
    auto S = num::TensorT<R>::zeros({B * L, grid::kPoiCategories});
    for (int64_t s = 0; s < B; ++s) {
        if (batch[static_cast<size_t>(s)].rows != L)
            throw ShapeError("sequence length " + std::to_string(batch[static_cast<size_t>(s)].rows) +
                             ", expected " + std::to_string(L));
        const auto& src = batch[static_cast<size_t>(s)].data;
        for (size_t i = 0; i < src.size(); ++i)
            S.value()[static_cast<size_t>(s * L * grid::kPoiCategories) + i] = static_cast<R>(src[i]);
    }
    return S;
}

// Masked rows are zeroed and replaced by the learnable mask token, then
// the whole batch is projected to d and given positional offsets. Pass an
// empty mask list for inference.
template <class R>
num::TensorT<R> encodeBatch(EncoderParamsT<R>& P, const num::TensorT<R>& S,
                            const std::vector<MaskSet>& masks, bool training, num::Rng& rng,
                            AttnCapture<R>* cap = nullptr) {
    using namespace num;
    const int64_t L = P.cfg.seqLen();
    const int64_t rows = S.dim(0);
    if (rows % L != 0) throw ShapeError("batch rows " + std::to_string(rows) + " not a multiple of " + std::to_string(L));
    const int64_t B = rows / L;
    if (!masks.empty() && static_cast<int64_t>(masks.size()) != B)
        throw ShapeError("mask count " + std::to_string(masks.size()) + " for batch of " + std::to_string(B));

    TensorT<R> X0 = S;
    if (!masks.empty()) {
        auto keep = TensorT<R>::filled({rows, grid::kPoiCategories}, R(1));
        auto ind = TensorT<R>::zeros({rows, 1});
        for (int64_t s = 0; s < B; ++s)
            for (int64_t pos : masks[static_cast<size_t>(s)].positions) {
                if (pos < 1 || pos >= L)
                    throw ShapeError("mask position " + std::to_string(pos) + " outside 1.." + std::to_string(L - 1));
                const int64_t r = s * L + pos;
                ind.value()[static_cast<size_t>(r)] = R(1);
                for (int c = 0; c < grid::kPoiCategories; ++c)
                    keep.value()[static_cast<size_t>(r * grid::kPoiCategories + c)] = R(0);
            }
        X0 = add(mul(S, keep), matmul(ind, P.maskToken));
    }

    auto X = linear(X0, P.inW, P.inB);
    if (P.cfg.usePositions) {
        std::vector<int64_t> posIdx(static_cast<size_t>(rows));
        for (int64_t i = 0; i < rows; ++i) posIdx[static_cast<size_t>(i)] = i % L;
        X = add(X, embedRows(P.posTable, posIdx));
    }
    for (auto& blk : P.enc)
        X = detail::blockForward(blk, X, B, L, P.cfg.heads, P.cfg.dropout, training, rng, cap);
    detail::checkFinite(X, "encoder");
    return X;
}

template <class R>
num::TensorT<R> decodeAndProject(EncoderParamsT<R>& P, const num::TensorT<R>& Ze, bool training,
                                 num::Rng& rng, AttnCapture<R>* cap = nullptr) {
    using namespace num;
    const int64_t L = P.cfg.seqLen();
    const int64_t B = Ze.dim(0) / L;
    auto X = Ze;
    for (auto& blk : P.dec)
        X = detail::blockForward(blk, X, B, L, P.cfg.heads, P.cfg.dropout, training, rng, cap);
    auto Zp = linear(softplus(linear(X, P.outW1, P.outB1)), P.outW2, P.outB2);
    detail::checkFinite(Zp, "decoder");
    return Zp;
}

// (1/n)(1/|M|) sum over sequences and masked positions of the squared
// reconstruction error; unmasked rows contribute nothing.
template <class R>
num::TensorT<R> reconstructionLoss(const num::TensorT<R>& Zp, const num::TensorT<R>& S,
                                   const std::vector<MaskSet>& masks, int64_t L) {
    using namespace num;
    const int64_t B = static_cast<int64_t>(masks.size());
    if (B == 0 || Zp.dim(0) != B * L)
        throw ShapeError("loss needs one mask set per sequence");
    const size_t maskCount = masks[0].positions.size();
    if (maskCount == 0) throw ConfigError("empty mask set in training step");
    auto gate = TensorT<R>::zeros({B * L, grid::kPoiCategories});
    for (int64_t s = 0; s < B; ++s) {
        if (masks[static_cast<size_t>(s)].positions.size() != maskCount)
            throw ShapeError("uneven mask counts across the batch");
        for (int64_t pos : masks[static_cast<size_t>(s)].positions)
            for (int c = 0; c < grid::kPoiCategories; ++c)
                gate.value()[static_cast<size_t>((s * L + pos) * grid::kPoiCategories + c)] = R(1);
    }
    auto diff = mul(sub(Zp, S), gate);
    return scale(sumAll(mul(diff, diff)), R(1) / static_cast<R>(B * static_cast<int64_t>(maskCount)));
}

struct PretrainConfig {
    int epochs = 100;
    double learningRate = 1e-7;
    int batchSize = 64;
    double maskRatio = 0.3;
    // Linear learning-rate ramp over the first tenth of training (-1), a
    // fixed step count (>0), or off (0). Without it the early optimizer
    // steps inflate the attention logits and residual magnitudes, and the
    // layer norms then scale the encoder-body gradients into the noise.
    int warmupSteps = -1;
    uint64_t seed = 0;
    std::function<void(int, double)> onEpoch;  // (epoch, mean loss)
};

struct PretrainResult {
    std::vector<double> epochLoss;
    int64_t skippedSteps = 0;
};

// Adam loop over per-epoch corpora. The provider is called once per epoch
// so walks can be resampled (or frozen) upstream.
template <class R>
PretrainResult pretrain(EncoderParamsT<R>& P,
                        const std::function<std::vector<walks::FeatureSequence>(int)>& corpusForEpoch,
                        const PretrainConfig& cfg) {
    if (cfg.epochs < 1) throw ConfigError("pretraining needs at least one epoch");
    if (cfg.batchSize < 1) throw ConfigError("batch size must be positive");
    const int64_t L = P.cfg.seqLen();
    auto params = P.params();
    auto opt = num::OptimizerStateT<R>::adam(cfg.learningRate);
    num::Rng root(cfg.seed);
    PretrainResult result;
    int64_t warmup = cfg.warmupSteps;
    int64_t stepsDone = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto corpus = corpusForEpoch(epoch);
        if (corpus.empty()) throw DataError("empty pretraining corpus");
        for (auto& fs : corpus) fs = compressCounts(std::move(fs));
        if (warmup < 0) {
            const auto perEpoch = static_cast<int64_t>(
                (corpus.size() + static_cast<size_t>(cfg.batchSize) - 1) / static_cast<size_t>(cfg.batchSize));
            warmup = std::max<int64_t>(1, perEpoch * cfg.epochs / 10);
        }
        std::vector<size_t> order(corpus.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        auto shuffleRng = root.derive("shuffle", static_cast<uint64_t>(epoch));
        shuffleRng.shuffle(order);
        auto maskRng = root.derive("mask", static_cast<uint64_t>(epoch));
        auto dropRng = root.derive("dropout", static_cast<uint64_t>(epoch));

        double lossSum = 0.0;
        int64_t seen = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batchSize)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batchSize));
            std::vector<walks::FeatureSequence> batch;
            batch.reserve(end - start);
            for (size_t i = start; i < end; ++i) batch.push_back(corpus[order[i]]);
            std::vector<MaskSet> masks;
            masks.reserve(batch.size());
            bool empty = false;
            for (size_t i = 0; i < batch.size(); ++i) {
                masks.push_back(sampleMask(P.cfg.payload(), cfg.maskRatio, maskRng));
                if (masks.back().positions.empty()) empty = true;
            }
            if (empty) {
                result.skippedSteps += 1;
                continue;
            }
            auto S = stackSequences<R>(batch, L);
            auto Ze = encodeBatch(P, S, masks, true, dropRng);
            auto Zp = decodeAndProject(P, Ze, true, dropRng);
            auto loss = reconstructionLoss(Zp, S, masks, L);
            const double lv = static_cast<double>(loss.item());
            if (!std::isfinite(lv))
                throw NumericError("non-finite pretraining loss at epoch " + std::to_string(epoch));
            if (lv > 1e6)
                throw NumericError("pretraining diverged (loss " + std::to_string(lv) + ") at epoch " +
                                   std::to_string(epoch));
            num::zeroGrads(params);
            num::backward(loss);
            opt.learningRate = warmup > 0 && stepsDone < warmup
                                   ? cfg.learningRate * static_cast<double>(stepsDone + 1) /
                                         static_cast<double>(warmup)
                                   : cfg.learningRate;
            num::optimizerStep(params, opt);
            ++stepsDone;
            lossSum += lv * static_cast<double>(batch.size());
            seen += static_cast<int64_t>(batch.size());
        }
        const double epochLoss = seen > 0 ? lossSum / static_cast<double>(seen) : 0.0;
        result.epochLoss.push_back(epochLoss);
        if (cfg.onEpoch) cfg.onEpoch(epoch, epochLoss);
    }
    return result;
}

struct CellEmbeddingSet {
    int64_t dim = 0;
    std::vector<int64_t> cellIds;  // row order
    std::vector<float> data;       // |cellIds| x dim
    std::unordered_map<int64_t, int64_t> rowOf;

    const float* row(int64_t cellId) const {
        auto it = rowOf.find(cellId);
        if (it == rowOf.end()) throw DataError("no embedding for cell " + std::to_string(cellId));
        return data.data() + it->second * dim;
    }
};

// One fresh walk sequence per cell (eval mode, no masking); the row-0
// token of the encoder output is the cell embedding.
template <class R>
CellEmbeddingSet extractEmbeddings(EncoderParamsT<R>& P, const grid::CellSet& cells,
                                   const walks::CellGraph& g, double p, double q, uint64_t seed) {
    num::NoGrad off;
    const int64_t L = P.cfg.seqLen();
    CellEmbeddingSet out;
    out.dim = P.cfg.dim;
    out.data.resize(static_cast<size_t>(cells.size()) * static_cast<size_t>(P.cfg.dim));
    num::Rng root(seed);
    num::Rng dummy(0);
    const int64_t batchCells = 64;
    for (int64_t start = 0; start < cells.size(); start += batchCells) {
        const int64_t end = std::min(cells.size(), start + batchCells);
        std::vector<walks::FeatureSequence> batch;
        for (int64_t id = start; id < end; ++id) {
            auto rng = root.derive("embed-walk", static_cast<uint64_t>(id));
            auto seq = walks::sampleWalks(g, id, P.cfg.k, P.cfg.l, p, q, rng);
            batch.push_back(compressCounts(walks::buildFeatureSequence(seq, cells)));
        }
        auto S = stackSequences<R>(batch, L);
        auto Ze = encodeBatch(P, S, {}, false, dummy);
        for (int64_t id = start; id < end; ++id) {
            const int64_t s = id - start;
            for (int64_t c = 0; c < P.cfg.dim; ++c)
                out.data[static_cast<size_t>(id * P.cfg.dim + c)] =
                    static_cast<float>(Ze.value()[static_cast<size_t>((s * L) * P.cfg.dim + c)]);
        }
    }
    out.cellIds.resize(static_cast<size_t>(cells.size()));
    for (int64_t id = 0; id < cells.size(); ++id) {
        out.cellIds[static_cast<size_t>(id)] = id;
        out.rowOf.emplace(id, id);
    }
    return out;
}

}  // namespace uv::enc
