#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "urbanverse/numerics/tensor.hpp"

namespace uv::num {

namespace detail {

template <class R>
void checkSameShape(const TensorT<R>& a, const TensorT<R>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + fmtShape(a.shape()) + " vs " + fmtShape(b.shape()));
}

template <class R>
void check2d(const TensorT<R>& a, const char* op) {
    if (a.shape().size() != 2)
        throw ShapeError(std::string(op) + ": expected 2-d tensor, got " + fmtShape(a.shape()));
}

// C(m x n) += A(m x k) * B(k x n), row-major. ikj order keeps the inner
// loops on contiguous rows; fast enough here that a BLAS dependency is
// not worth its nondeterminism across machines.
template <class R>
void gemmNN(int64_t m, int64_t k, int64_t n, const R* A, const R* B, R* C) {
    for (int64_t i = 0; i < m; ++i) {
        const R* a = A + i * k;
        R* c = C + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const R av = a[kk];
            if (av == R(0)) continue;
            const R* b = B + kk * n;
            for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C(m x n) += A(m x k) * B^T, with B stored (n x k).
template <class R>
void gemmNT(int64_t m, int64_t k, int64_t n, const R* A, const R* B, R* C) {
    for (int64_t i = 0; i < m; ++i) {
        const R* a = A + i * k;
        R* c = C + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const R* b = B + j * k;
            R s = R(0);
            for (int64_t kk = 0; kk < k; ++kk) s += a[kk] * b[kk];
            c[j] += s;
        }
    }
}

// C(m x n) += A^T * B, with A stored (k x m), B stored (k x n).
template <class R>
void gemmTN(int64_t m, int64_t k, int64_t n, const R* A, const R* B, R* C) {
    for (int64_t kk = 0; kk < k; ++kk) {
        const R* a = A + kk * m;
        const R* b = B + kk * n;
        for (int64_t i = 0; i < m; ++i) {
            const R av = a[i];
            if (av == R(0)) continue;
            R* c = C + i * n;
            for (int64_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

template <class R>
R stableSigmoid(R x) {
    if (x >= R(0)) return R(1) / (R(1) + std::exp(-x));
    const R e = std::exp(x);
    return e / (R(1) + e);
}

}  // namespace detail

template <class R>
TensorT<R> matmul(const TensorT<R>& a, const TensorT<R>& b) {
    detail::check2d(a, "matmul");
    detail::check2d(b, "matmul");
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul: " + fmtShape(a.shape()) + " x " + fmtShape(b.shape()));
    auto out = detail::makeOpNode<R>({m, n}, {a.node(), b.node()});
    std::fill(out->value.begin(), out->value.end(), R(0));
    detail::gemmNN(m, k, n, a.value().data(), b.value().data(), out->value.data());
    if (out->requiresGrad) {
        out->backward = [m, k, n](TensorNode<R>& self) {
            auto& A = *self.parents[0];
            auto& B = *self.parents[1];
            if (A.requiresGrad)
                detail::gemmNT(m, n, k, self.grad.data(), B.value.data(), A.grad.data());
            if (B.requiresGrad)
                detail::gemmTN(k, m, n, A.value.data(), self.grad.data(), B.grad.data());
        };
    }
    return TensorT<R>(out);
}

template <class R>
TensorT<R> transpose(const TensorT<R>& a) {
    detail::check2d(a, "transpose");
    const int64_t m = a.dim(0), n = a.dim(1);
    auto out = detail::makeOpNode<R>({n, m}, {a.node()});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out->value[j * m + i] = a.value()[i * n + j];
    if (out->requiresGrad) {
        out->backward = [m, n](TensorNode<R>& self) {
            auto& A = *self.parents[0];
            if (!A.requiresGrad) return;
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) A.grad[i * n + j] += self.grad[j * m + i];
        };
    }
    return TensorT<R>(out);
}

template <class R>
TensorT<R> add(const TensorT<R>& a, const TensorT<R>& b) {
    detail::checkSameShape(a, b, "add");
    auto out = detail::makeOpNode<R>(a.shape(), {a.node(), b.node()});
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out->value[i] = a.value()[i] + b.value()[i];
    if (out->requiresGrad) {
        out->backward = [n](TensorNode<R>& self) {
            for (int p = 0; p < 2; ++p) {
                auto& P = *self.parents[p];
                if (!P.requiresGrad) continue;
                for (int64_t i = 0; i < n; ++i) P.grad[i] += self.grad[i];
            }
        };
    }
    return TensorT<R>(out);
}

// a (m x n) plus a row vector b (1 x n), broadcast down the rows.
template <class R>
TensorT<R> addRowVec(const TensorT<R>& a, const TensorT<R>& b) {
    detail::check2d(a, "addRowVec");
    const int64_t m = a.dim(0), n = a.dim(1);
    if (b.numel() != n)
        throw ShapeError("addRowVec: " + fmtShape(a.shape()) + " + " + fmtShape(b.shape()));
    auto out = detail::makeOpNode<R>({m, n}, {a.node(), b.node()});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out->value[i * n + j] = a.value()[i * n + j] + b.value()[j];
    if (out->requiresGrad) {
        out->backward = [m, n](TensorNode<R>& self) {
            auto& A = *self.parents[0];
            auto& B = *self.parents[1];
            if (A.requiresGrad) {
                const int64_t total = m * n;
                for (int64_t i = 0; i < total; ++i) A.grad[i] += self.grad[i];
            }
            if (B.requiresGrad) {
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) B.grad[j] += self.grad[i * n + j];
            }
        };
    }
    return TensorT<R>(out);
}

template <class R>
TensorT<R> sub(const TensorT<R>& a, const TensorT<R>& b) {
    detail::checkSameShape(a, b, "sub");
    auto out = detail::makeOpNode<R>(a.shape(), {a.node(), b.node()});
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out->value[i] = a.value()[i] - b.value()[i];
    if (out->requiresGrad) {
        out->backward = [n](TensorNode<R>& self) {
            auto& A = *self.parents[0];
            auto& B = *self.parents[1];
            if (A.requiresGrad)
                for (int64_t i = 0; i < n; ++i) A.grad[i] += self.grad[i];
            if (B.requiresGrad)
                for (int64_t i = 0; i < n; ++i) B.grad[i] -= self.grad[i];
        };
    }
    return TensorT<R>(out);
}

template <class R>
TensorT<R> mul(const TensorT<R>& a, const TensorT<R>& b) {
    detail::checkSameShape(a, b, "mul");
    auto out = detail::makeOpNode<R>(a.shape(), {a.node(), b.node()});
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out->value[i] = a.value()[i] * b.value()[i];
    if (out->requiresGrad) {
        out->backward = [n](TensorNode<R>& self) {
            auto& A = *self.parents[0];
            auto& B = *self.parents[1];
            if (A.requiresGrad)
                for (int64_t i = 0; i < n; ++i) A.grad[i] += self.grad[i] * B.value[i];
            if (B.requiresGrad)
                for (int64_t i = 0; i < n; ++i) B.grad[i] += self.grad[i] * A.value[i];
        };
    }
    return TensorT<R>(out);
}

// a (m x n) scaled per row by column vector c (m x 1).
template <class R>
TensorT<R> mulColVec(const TensorT<R>& a, const TensorT<R>& c) {
    detail::check2d(a, "mulColVec");
    const int64_t m = a.dim(0), n = a.dim(1);
    if (c.numel() != m)
        throw ShapeError("mulColVec: " + fmtShape(a.shape()) + " * " + fmtShape(c.shape()));
    auto out = detail::makeOpNode<R>({m, n}, {a.node(), c.node()});
    for (int64_t i = 0; i < m; ++i) {
        const R s = c.value()[i];
        for (int64_t j = 0; j < n; ++j) out->value[i * n + j] = a.value()[i * n + j] * s;
    }
    if (out->requiresGrad) {
        out->backward = [m, n](TensorNode<R>& self) {
            auto& A = *self.parents[0];
            auto& C = *self.parents[1];
            if (A.requiresGrad) {
                for (int64_t i = 0; i < m; ++i) {
                    const R s = C.value[i];
                    for (int64_t j = 0; j < n; ++j) A.grad[i * n + j] += self.grad[i * n + j] * s;
                }
            }
            if (C.requiresGrad) {
                for (int64_t i = 0; i < m; ++i) {
                    R s = R(0);
                    for (int64_t j = 0; j < n; ++j) s += self.grad[i * n + j] * A.value[i * n + j];
                    C.grad[i] += s;
                }
            }
        };
    }
    return TensorT<R>(out);
}

template <class R>
TensorT<R> scale(const TensorT<R>& a, R s) {
    auto out = detail::makeOpNode<R>(a.shape(), {a.node()});
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out->value[i] = a.value()[i] * s;
    if (out->requiresGrad) {
        out->backward = [n, s](TensorNode<R>& self) {
            auto& A = *self.parents[0];
            if (!A.requiresGrad) return;
            for (int64_t i = 0; i < n; ++i) A.grad[i] += self.grad[i] * s;
        };
    }
    return TensorT<R>(out);
}

template <class R>
TensorT<R> neg(const TensorT<R>& a) {
    return scale(a, R(-1));
}

// Row-wise softmax with max subtraction.
template <class R>
TensorT<R> softmaxRows(const TensorT<R>& a) {
    detail::check2d(a, "softmaxRows");
    const int64_t m = a.dim(0), n = a.dim(1);
    auto out = detail::makeOpNode<R>({m, n}, {a.node()});
    for (int64_t i = 0; i < m; ++i) {
        const R* x = a.value().data() + i * n;
        R* y = out->value.data() + i * n;
        R mx = x[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        R sum = R(0);
        for (int64_t j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            sum += y[j];
        }
        const R inv = R(1) / sum;
        for (int64_t j = 0; j < n; ++j) y[j] *= inv;
    }
    if (out->requiresGrad) {
        out->backward = [m, n](TensorNode<R>& self) {
            auto& A = *self.parents[0];
            if (!A.requiresGrad) return;
            for (int64_t i = 0; i < m; ++i) {
                const R* y = self.value.data() + i * n;
                const R* dy = self.grad.data() + i * n;
                R dot = R(0);
                for (int64_t j = 0; j < n; ++j) dot += dy[j] * y[j];
                R* dx = A.grad.data() + i * n;
                for (int64_t j = 0; j < n; ++j) dx[j] += y[j] * (dy[j] - dot);
            }
        };
    }
    return TensorT<R>(out);
}

// Per-row normalization over the last dimension, then affine gain/bias.
// Population variance, eps inside the square root.
template <class R>
TensorT<R> layerNorm(const TensorT<R>& x, const TensorT<R>& gain, const TensorT<R>& bias,
                     R eps = R(1e-5)) {
    detail::check2d(x, "layerNorm");
    const int64_t m = x.dim(0), n = x.dim(1);
    if (gain.numel() != n || bias.numel() != n)
        throw ShapeError("layerNorm: gain/bias length must match last dim " + fmtShape(x.shape()));
    auto out = detail::makeOpNode<R>({m, n}, {x.node(), gain.node(), bias.node()});
    auto xhat = std::make_shared<std::vector<R>>(static_cast<size_t>(m * n));
    auto invStd = std::make_shared<std::vector<R>>(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) {
        const R* xr = x.value().data() + i * n;
        R mean = R(0);
        for (int64_t j = 0; j < n; ++j) mean += xr[j];
        mean /= R(n);
        R var = R(0);
        for (int64_t j = 0; j < n; ++j) {
            const R d = xr[j] - mean;
            var += d * d;
        }
        var /= R(n);
        const R is = R(1) / std::sqrt(var + eps);
        (*invStd)[i] = is;
        R* xh = xhat->data() + i * n;
        R* y = out->value.data() + i * n;
        for (int64_t j = 0; j < n; ++j) {
            xh[j] = (xr[j] - mean) * is;
            y[j] = xh[j] * gain.value()[j] + bias.value()[j];
        }
    }
    if (out->requiresGrad) {
        out->backward = [m, n, xhat, invStd](TensorNode<R>& self) {
            auto& X = *self.parents[0];
            auto& G = *self.parents[1];
            auto& B = *self.parents[2];
            for (int64_t i = 0; i < m; ++i) {
                const R* dy = self.grad.data() + i * n;
                const R* xh = xhat->data() + i * n;
                if (X.requiresGrad) {
                    R sumG = R(0), sumGX = R(0);
                    for (int64_t j = 0; j < n; ++j) {
                        const R g = dy[j] * G.value[j];
                        sumG += g;
                        sumGX += g * xh[j];
                    }
                    const R mG = sumG / R(n), mGX = sumGX / R(n);
                    const R is = (*invStd)[i];
                    R* dx = X.grad.data() + i * n;
                    for (int64_t j = 0; j < n; ++j)
                        dx[j] += is * (dy[j] * G.value[j] - mG - xh[j] * mGX);
                }
                if (G.requiresGrad)
                    for (int64_t j = 0; j < n; ++j) G.grad[j] += dy[j] * xh[j];
                if (B.requiresGrad)
                    for (int64_t j = 0; j < n; ++j) B.grad[j] += dy[j];
            }
        };
    }
    return TensorT<R>(out);
}

// Inverted dropout: kept entries scale by 1/(1-rate) so eval needs no
// rescaling. Identity when not training or rate is zero.
template <class R>
TensorT<R> dropout(const TensorT<R>& x, double rate, Rng& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0)
        throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    const int64_t n = x.numel();
    auto mask = std::make_shared<std::vector<R>>(static_cast<size_t>(n));
    const R keepScale = R(1.0 / (1.0 - rate));
    for (int64_t i = 0; i < n; ++i)
        (*mask)[i] = (rng.uniform() >= rate) ? keepScale : R(0);
    auto out = detail::makeOpNode<R>(x.shape(), {x.node()});
    for (int64_t i = 0; i < n; ++i) out->value[i] = x.value()[i] * (*mask)[i];
    if (out->requiresGrad) {
        out->backward = [n, mask](TensorNode<R>& self) {
            auto& X = *self.parents[0];
            if (!X.requiresGrad) return;
            for (int64_t i = 0; i < n; ++i) X.grad[i] += self.grad[i] * (*mask)[i];
        };
    }
    return TensorT<R>(out);
}

template <class R>
TensorT<R> softplus(const TensorT<R>& x) {
    auto out = detail::makeOpNode<R>(x.shape(), {x.node()});
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) {
        const R v = x.value()[i];
        out->value[i] = std::max(v, R(0)) + std::log1p(std::exp(-std::abs(v)));
    }
    if (out->requiresGrad) {
        out->backward = [n](TensorNode<R>& self) {
            auto& X = *self.parents[0];
            if (!X.requiresGrad) return;
            for (int64_t i = 0; i < n; ++i)
                X.grad[i] += self.grad[i] * detail::stableSigmoid(X.value[i]);
        };
    }
    return TensorT<R>(out);
}

template <class R>
TensorT<R> sumAll(const TensorT<R>& x) {
    auto out = detail::makeOpNode<R>({1}, {x.node()});
    R s = R(0);
    for (const R v : x.value()) s += v;
    out->value[0] = s;
    if (out->requiresGrad) {
        const int64_t n = x.numel();
        out->backward = [n](TensorNode<R>& self) {
            auto& X = *self.parents[0];
            if (!X.requiresGrad) return;
            const R g = self.grad[0];
            for (int64_t i = 0; i < n; ++i) X.grad[i] += g;
        };
    }
    return TensorT<R>(out);
}

// (m x n) -> (m x 1) sum over each row.
template <class R>
TensorT<R> rowSum(const TensorT<R>& x) {
    detail::check2d(x, "rowSum");
    const int64_t m = x.dim(0), n = x.dim(1);
    auto out = detail::makeOpNode<R>({m, 1}, {x.node()});
    for (int64_t i = 0; i < m; ++i) {
        R s = R(0);
        for (int64_t j = 0; j < n; ++j) s += x.value()[i * n + j];
        out->value[i] = s;
    }
    if (out->requiresGrad) {
        out->backward = [m, n](TensorNode<R>& self) {
            auto& X = *self.parents[0];
            if (!X.requiresGrad) return;
            for (int64_t i = 0; i < m; ++i) {
                const R g = self.grad[i];
                for (int64_t j = 0; j < n; ++j) X.grad[i * n + j] += g;
            }
        };
    }
    return TensorT<R>(out);
}

template <class R>
TensorT<R> sliceRows(const TensorT<R>& x, int64_t r0, int64_t r1) {
    detail::check2d(x, "sliceRows");
    const int64_t m = x.dim(0), n = x.dim(1);
    if (r0 < 0 || r1 > m || r0 >= r1)
        throw ShapeError("sliceRows: [" + std::to_string(r0) + "," + std::to_string(r1) + ") of " + fmtShape(x.shape()));
    const int64_t rows = r1 - r0;
    auto out = detail::makeOpNode<R>({rows, n}, {x.node()});
    std::copy(x.value().begin() + r0 * n, x.value().begin() + r1 * n, out->value.begin());
    if (out->requiresGrad) {
        out->backward = [r0, rows, n](TensorNode<R>& self) {
            auto& X = *self.parents[0];
            if (!X.requiresGrad) return;
            for (int64_t i = 0; i < rows; ++i)
                for (int64_t j = 0; j < n; ++j) X.grad[(r0 + i) * n + j] += self.grad[i * n + j];
        };
    }
    return TensorT<R>(out);
}

template <class R>
TensorT<R> sliceCols(const TensorT<R>& x, int64_t c0, int64_t c1) {
    detail::check2d(x, "sliceCols");
    const int64_t m = x.dim(0), n = x.dim(1);
    if (c0 < 0 || c1 > n || c0 >= c1)
        throw ShapeError("sliceCols: [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " + fmtShape(x.shape()));
    const int64_t cols = c1 - c0;
    auto out = detail::makeOpNode<R>({m, cols}, {x.node()});
    for (int64_t i = 0; i < m; ++i)
        std::copy(x.value().begin() + i * n + c0, x.value().begin() + i * n + c1,
                  out->value.begin() + i * cols);
    if (out->requiresGrad) {
        out->backward = [c0, cols, n, m](TensorNode<R>& self) {
            auto& X = *self.parents[0];
            if (!X.requiresGrad) return;
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < cols; ++j) X.grad[i * n + c0 + j] += self.grad[i * cols + j];
        };
    }
    return TensorT<R>(out);
}

template <class R>
TensorT<R> concatRows(const std::vector<TensorT<R>>& parts) {
    if (parts.empty()) throw ShapeError("concatRows: no inputs");
    const int64_t n = parts[0].dim(1);
    int64_t m = 0;
    std::vector<std::shared_ptr<TensorNode<R>>> nodes;
    for (const auto& p : parts) {
        detail::check2d(p, "concatRows");
        if (p.dim(1) != n) throw ShapeError("concatRows: column mismatch " + fmtShape(p.shape()));
        m += p.dim(0);
        nodes.push_back(p.node());
    }
    auto out = detail::makeOpNode<R>({m, n}, std::move(nodes));
    int64_t row = 0;
    std::vector<int64_t> starts(parts.size());
    for (size_t p = 0; p < parts.size(); ++p) {
        starts[p] = row;
        std::copy(parts[p].value().begin(), parts[p].value().end(), out->value.begin() + row * n);
        row += parts[p].dim(0);
    }
    if (out->requiresGrad) {
        out->backward = [starts, n](TensorNode<R>& self) {
            for (size_t p = 0; p < self.parents.size(); ++p) {
                auto& P = *self.parents[p];
                if (!P.requiresGrad) continue;
                const int64_t rows = P.shape[0];
                for (int64_t i = 0; i < rows; ++i)
                    for (int64_t j = 0; j < n; ++j)
                        P.grad[i * n + j] += self.grad[(starts[p] + i) * n + j];
            }
        };
    }
    return TensorT<R>(out);
}

template <class R>
TensorT<R> concatCols(const std::vector<TensorT<R>>& parts) {
    if (parts.empty()) throw ShapeError("concatCols: no inputs");
    const int64_t m = parts[0].dim(0);
    int64_t n = 0;
    std::vector<std::shared_ptr<TensorNode<R>>> nodes;
    for (const auto& p : parts) {
        detail::check2d(p, "concatCols");
        if (p.dim(0) != m) throw ShapeError("concatCols: row mismatch " + fmtShape(p.shape()));
        n += p.dim(1);
        nodes.push_back(p.node());
    }
    auto out = detail::makeOpNode<R>({m, n}, std::move(nodes));
    std::vector<int64_t> starts(parts.size());
    int64_t col = 0;
    for (size_t p = 0; p < parts.size(); ++p) {
        starts[p] = col;
        const int64_t pc = parts[p].dim(1);
        for (int64_t i = 0; i < m; ++i)
            std::copy(parts[p].value().begin() + i * pc, parts[p].value().begin() + (i + 1) * pc,
                      out->value.begin() + i * n + col);
        col += pc;
    }
    if (out->requiresGrad) {
        out->backward = [starts, m, n](TensorNode<R>& self) {
            for (size_t p = 0; p < self.parents.size(); ++p) {
                auto& P = *self.parents[p];
                if (!P.requiresGrad) continue;
                const int64_t pc = P.shape[1];
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < pc; ++j)
                        P.grad[i * pc + j] += self.grad[i * n + starts[p] + j];
            }
        };
    }
    return TensorT<R>(out);
}

// Gather rows of `table` (V x d) at `indices`; backward scatter-adds into
// the table rows, so the table works as an embedding parameter.
template <class R>
TensorT<R> embedRows(const TensorT<R>& table, const std::vector<int64_t>& indices) {
    detail::check2d(table, "embedRows");
    const int64_t V = table.dim(0), d = table.dim(1);
    const int64_t m = static_cast<int64_t>(indices.size());
    for (int64_t idx : indices)
        if (idx < 0 || idx >= V)
            throw ShapeError("embedRows: index " + std::to_string(idx) + " outside table " + fmtShape(table.shape()));
    auto out = detail::makeOpNode<R>({m, d}, {table.node()});
    for (int64_t i = 0; i < m; ++i)
        std::copy(table.value().begin() + indices[i] * d, table.value().begin() + (indices[i] + 1) * d,
                  out->value.begin() + i * d);
    if (out->requiresGrad) {
        auto idx = std::make_shared<std::vector<int64_t>>(indices);
        out->backward = [idx, d](TensorNode<R>& self) {
            auto& T = *self.parents[0];
            if (!T.requiresGrad) return;
            for (size_t i = 0; i < idx->size(); ++i) {
                const int64_t r = (*idx)[i];
                for (int64_t j = 0; j < d; ++j)
                    T.grad[r * d + j] += self.grad[static_cast<int64_t>(i) * d + j];
            }
        };
    }
    return TensorT<R>(out);
}

// x (m x in) * W (in x out) + b, the usual dense layer.
template <class R>
TensorT<R> linear(const TensorT<R>& x, const TensorT<R>& W, const TensorT<R>& b) {
    return addRowVec(matmul(x, W), b);
}

template <class R>
TensorT<R> meanSquares(const TensorT<R>& d) {
    return scale(sumAll(mul(d, d)), R(1) / static_cast<R>(d.numel()));
}

}  // namespace uv::num
