#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "urbanverse/common.hpp"
#include "urbanverse/numerics/ops.hpp"
#include "urbanverse/numerics/rng.hpp"
#include "urbanverse/numerics/tensor.hpp"

namespace uv::diff {

// How the fused timestep/task embedding enters each hidden layer.
//   Modulate:  h' = softplus(g ⊙ (h W + b))        element-wise scaling
//   Concat:    h' = softplus([h ‖ g] W + b)         widened input, no scaling
//   CrossAttn: h' = softplus(u + attn(u; γ_t, γ_u)) two-token cross attention
enum class CondMode { Modulate, Concat, CrossAttn };

inline const char* condModeName(CondMode m) {
    switch (m) {
        case CondMode::Modulate: return "em";
        case CondMode::Concat: return "concat";
        case CondMode::CrossAttn: return "xattn";
    }
    return "?";
}

struct DenoiserConfig {
    int dim = 144;     // region embedding width
    int dnDim = 128;   // hidden width
    int steps = 100;   // diffusion horizon; timestep table rows are 0..steps
    int numTasks = 1;
    CondMode cond = CondMode::Modulate;

    void validate() const {
        if (dim < 1 || dnDim < 1) throw ConfigError("denoiser dims must be positive");
        if (steps < 1) throw ConfigError("denoiser needs steps >= 1");
        if (numTasks < 1) throw ConfigError("denoiser needs numTasks >= 1");
    }
};

template <typename R>
struct CondLayerT {
    num::TensorT<R> w, b;           // value path
    num::TensorT<R> wq, wk, wv;     // cross-attention projections (CrossAttn only)
};

// Noise predictor: eps_hat = f(h, y_t, t, u). The input projection maps
// [h ‖ y_t] to the hidden width; three conditioned layers inject the fused
// timestep/task embedding; a two-layer head reads out the scalar.
template <typename R>
struct DenoiserParamsT {
    DenoiserConfig cfg;

    num::TensorT<R> tEmbed;                 // (steps+1) x dnDim, row 0 unused
    num::TensorT<R> uEmbed;                 // numTasks x dnDim
    num::TensorT<R> fuseW1, fuseB1, fuseW2, fuseB2;
    num::TensorT<R> inW, inB;
    std::vector<CondLayerT<R>> layers;      // always 3
    num::TensorT<R> outW1, outB1, outW2, outB2;

    void init(num::Rng& rng) {
        cfg.validate();
        int dn = cfg.dnDim;
        auto mat = [&](int64_t r, int64_t c) {
            return num::TensorT<R>::paramNormal({r, c}, rng, R(1) / std::sqrt(R(r)));
        };
        auto bias = [&](int64_t c) { return num::TensorT<R>::paramFilled({1, c}, R(0)); };

        tEmbed = num::TensorT<R>::paramNormal({cfg.steps + 1, dn}, rng, R(0.02));
        uEmbed = num::TensorT<R>::paramNormal({cfg.numTasks, dn}, rng, R(0.02));
        fuseW1 = mat(2 * dn, dn);
        fuseB1 = bias(dn);
        // The fused vector multiplies activations, so start it at 1 (identity
        // scaling) rather than 0, which would silence the whole network.
        fuseW2 = num::TensorT<R>::paramNormal({dn, dn}, rng, R(0.01));
        fuseB2 = num::TensorT<R>::paramFilled({1, dn}, R(1));
        inW = mat(cfg.dim + 1, dn);
        inB = bias(dn);
        layers.clear();
        for (int i = 0; i < 3; ++i) {
            CondLayerT<R> l;
            int64_t inWidth = cfg.cond == CondMode::Concat ? 2 * dn : dn;
            l.w = mat(inWidth, dn);
            l.b = bias(dn);
            if (cfg.cond == CondMode::CrossAttn) {
                l.wq = mat(dn, dn);
                l.wk = mat(dn, dn);
                l.wv = mat(dn, dn);
            }
            layers.push_back(std::move(l));
        }
        outW1 = mat(dn, dn);
        outB1 = bias(dn);
        // Near-zero head: eps_hat starts at ~0, so the initial loss sits at
        // E[eps^2] = 1 and training descends from there.
        outW2 = num::TensorT<R>::paramNormal({dn, 1}, rng, R(0.01));
        outB2 = bias(1);
    }

    num::ParamList<R> params() {
        num::ParamList<R> out;
        out.push_back({"t_embed", tEmbed});
        out.push_back({"u_embed", uEmbed});
        out.push_back({"fuse.w1", fuseW1});
        out.push_back({"fuse.b1", fuseB1});
        out.push_back({"fuse.w2", fuseW2});
        out.push_back({"fuse.b2", fuseB2});
        out.push_back({"in.w", inW});
        out.push_back({"in.b", inB});
        for (size_t i = 0; i < layers.size(); ++i) {
            std::string p = "cond" + std::to_string(i);
            out.push_back({p + ".w", layers[i].w});
            out.push_back({p + ".b", layers[i].b});
            if (cfg.cond == CondMode::CrossAttn) {
                out.push_back({p + ".wq", layers[i].wq});
                out.push_back({p + ".wk", layers[i].wk});
                out.push_back({p + ".wv", layers[i].wv});
            }
        }
        out.push_back({"out.w1", outW1});
        out.push_back({"out.b1", outB1});
        out.push_back({"out.w2", outW2});
        out.push_back({"out.b2", outB2});
        return out;
    }
};

namespace detail {

// attn(u; tokens) over exactly two conditioning tokens per row.
template <typename R>
num::TensorT<R> twoTokenAttention(const CondLayerT<R>& l, const num::TensorT<R>& u,
                                  const num::TensorT<R>& gt, const num::TensorT<R>& gu) {
    using namespace uv::num;
    R invRoot = R(1) / std::sqrt(R(u.dim(1)));
    auto q = matmul(u, l.wq);
    auto k1 = matmul(gt, l.wk);
    auto k2 = matmul(gu, l.wk);
    auto v1 = matmul(gt, l.wv);
    auto v2 = matmul(gu, l.wv);
    auto s1 = scale(rowSum(mul(q, k1)), invRoot);
    auto s2 = scale(rowSum(mul(q, k2)), invRoot);
    auto a = softmaxRows(concatCols<R>({s1, s2}));
    return add(mulColVec(v1, sliceCols(a, 0, 1)), mulColVec(v2, sliceCols(a, 1, 2)));
}

}  // namespace detail

// Forward pass for a batch of rows. h is (B x dim), yt is (B x 1); tIdx and
// uIdx give each row's timestep (1..steps) and task. Returns eps_hat (B x 1).
template <typename R>
num::TensorT<R> denoiseBatch(DenoiserParamsT<R>& p, const num::TensorT<R>& h,
                             const num::TensorT<R>& yt, const std::vector<int64_t>& tIdx,
                             const std::vector<int64_t>& uIdx) {
    using namespace uv::num;
    const auto& cfg = p.cfg;
    int64_t batch = h.dim(0);
    if (h.dim(1) != cfg.dim) {
        throw ShapeError("denoiser input " + fmtShape(h.shape()) + " does not match dim " +
                         std::to_string(cfg.dim));
    }
    if (yt.dim(0) != batch || yt.dim(1) != 1) {
        throw ShapeError("denoiser noisy targets " + fmtShape(yt.shape()) + " must be (" +
                         std::to_string(batch) + "x1)");
    }
    if (static_cast<int64_t>(tIdx.size()) != batch || static_cast<int64_t>(uIdx.size()) != batch) {
        throw ShapeError("denoiser index lists must match the batch size");
    }
    for (int64_t t : tIdx) {
        if (t < 1 || t > cfg.steps) {
            throw ConfigError("timestep " + std::to_string(t) + " outside [1, " +
                              std::to_string(cfg.steps) + "]");
        }
    }
    for (int64_t u : uIdx) {
        if (u < 0 || u >= cfg.numTasks) {
            throw ConfigError("task " + std::to_string(u) + " outside [0, " +
                              std::to_string(cfg.numTasks) + ")");
        }
    }

    auto x = linear(concatCols<R>({h, yt}), p.inW, p.inB);
    auto gt = embedRows(p.tEmbed, tIdx);
    auto gu = embedRows(p.uEmbed, uIdx);
    num::TensorT<R> fused;
    if (cfg.cond != CondMode::CrossAttn) {
        auto f = softplus(linear(concatCols<R>({gt, gu}), p.fuseW1, p.fuseB1));
        fused = linear(f, p.fuseW2, p.fuseB2);
    }
    for (const auto& l : p.layers) {
        switch (cfg.cond) {
            case CondMode::Modulate:
                x = softplus(mul(linear(x, l.w, l.b), fused));
                break;
            case CondMode::Concat:
                x = softplus(linear(concatCols<R>({x, fused}), l.w, l.b));
                break;
            case CondMode::CrossAttn: {
                auto u = linear(x, l.w, l.b);
                x = softplus(add(u, detail::twoTokenAttention(l, u, gt, gu)));
                break;
            }
        }
    }
    return linear(softplus(linear(x, p.outW1, p.outB1)), p.outW2, p.outB2);
}

using DenoiserParams = DenoiserParamsT<float>;

}  // namespace uv::diff
