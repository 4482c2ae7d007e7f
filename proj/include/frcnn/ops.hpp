#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <limits>

#include "frcnn/tensor.hpp"

namespace frcnn {

namespace detail {

// C[M,N] += A[M,K] * B[K,N], row-major. The k loop is sequential and
// ascending, so accumulation order equals the plain nested-loop form.
inline void gemm_nn(const Scalar* A, const Scalar* B, Scalar* C,
                    std::size_t M, std::size_t K, std::size_t N) {
    for (std::size_t m = 0; m < M; ++m) {
        Scalar* crow = C + m * N;
        const Scalar* arow = A + m * K;
        for (std::size_t k = 0; k < K; ++k) {
            const Scalar a = arow[k];
            const Scalar* brow = B + k * N;
            for (std::size_t n = 0; n < N; ++n) crow[n] += a * brow[n];
        }
    }
}

// C[M,N] += A[M,K] * B^T where B is [N,K].
inline void gemm_nt(const Scalar* A, const Scalar* B, Scalar* C,
                    std::size_t M, std::size_t K, std::size_t N) {
    for (std::size_t m = 0; m < M; ++m) {
        const Scalar* arow = A + m * K;
        Scalar* crow = C + m * N;
        for (std::size_t n = 0; n < N; ++n) {
            const Scalar* brow = B + n * K;
            Scalar acc = 0;
            for (std::size_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
            crow[n] += acc;
        }
    }
}

// C[M,N] += A^T * B where A is [K,M], B is [K,N].
inline void gemm_tn(const Scalar* A, const Scalar* B, Scalar* C,
                    std::size_t M, std::size_t K, std::size_t N) {
    for (std::size_t k = 0; k < K; ++k) {
        const Scalar* arow = A + k * M;
        const Scalar* brow = B + k * N;
        for (std::size_t m = 0; m < M; ++m) {
            const Scalar a = arow[m];
            Scalar* crow = C + m * N;
            for (std::size_t n = 0; n < N; ++n) crow[n] += a * brow[n];
        }
    }
}

struct ConvGeom {
    std::size_t N, C, H, W, K, h, w, OH, OW;
    std::size_t stride, pad, dilation;
};

inline ConvGeom conv_geometry(const Tensor& input, const Tensor& kernel,
                              std::size_t stride, std::size_t pad, std::size_t dilation) {
    require(input.rank() == 4, "conv2d input must be [N,C,H,W], got " + shape_str(input.shape()));
    require(kernel.rank() == 4, "conv2d kernel must be [K,C,h,w], got " + shape_str(kernel.shape()));
    require(stride >= 1 && dilation >= 1, "conv2d stride and dilation must be >= 1");
    ConvGeom g;
    g.N = input.extent(0);
    g.C = input.extent(1);
    g.H = input.extent(2);
    g.W = input.extent(3);
    g.K = kernel.extent(0);
    g.h = kernel.extent(2);
    g.w = kernel.extent(3);
    require(kernel.extent(1) == g.C, "conv2d channel mismatch: input has " + std::to_string(g.C) +
                                         " channels, kernel expects " + std::to_string(kernel.extent(1)));
    require(g.h % 2 == 1 && g.w % 2 == 1, "conv2d kernel extents must be odd");
    const std::size_t eff_h = dilation * (g.h - 1) + 1;
    const std::size_t eff_w = dilation * (g.w - 1) + 1;
    require(g.H + 2 * pad >= eff_h && g.W + 2 * pad >= eff_w,
            "conv2d input " + shape_str(input.shape()) + " too small for kernel " +
                shape_str(kernel.shape()) + " at pad " + std::to_string(pad));
    g.stride = stride;
    g.pad = pad;
    g.dilation = dilation;
    g.OH = (g.H + 2 * pad - eff_h) / stride + 1;
    g.OW = (g.W + 2 * pad - eff_w) / stride + 1;
    return g;
}

// col is [C*h*w, OH*OW]; row index (c,u,v) in lexicographic order so the GEMM
// accumulates channels-then-rows-then-cols, same as a direct correlation loop.
inline void im2col(const Scalar* in, const ConvGeom& g, Scalar* col) {
    const std::size_t OHW = g.OH * g.OW;
    for (std::size_t c = 0; c < g.C; ++c) {
        const Scalar* chan = in + c * g.H * g.W;
        for (std::size_t u = 0; u < g.h; ++u) {
            for (std::size_t v = 0; v < g.w; ++v) {
                Scalar* row = col + ((c * g.h + u) * g.w + v) * OHW;
                for (std::size_t oy = 0; oy < g.OH; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + u * g.dilation) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    Scalar* dst = row + oy * g.OW;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.H)) {
                        std::memset(dst, 0, g.OW * sizeof(Scalar));
                        continue;
                    }
                    const Scalar* src = chan + static_cast<std::size_t>(iy) * g.W;
                    for (std::size_t ox = 0; ox < g.OW; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + v * g.dilation) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.W))
                                      ? Scalar(0)
                                      : src[static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }
}

inline void col2im_acc(const Scalar* col, const ConvGeom& g, Scalar* in_grad) {
    const std::size_t OHW = g.OH * g.OW;
    for (std::size_t c = 0; c < g.C; ++c) {
        Scalar* chan = in_grad + c * g.H * g.W;
        for (std::size_t u = 0; u < g.h; ++u) {
            for (std::size_t v = 0; v < g.w; ++v) {
                const Scalar* row = col + ((c * g.h + u) * g.w + v) * OHW;
                for (std::size_t oy = 0; oy < g.OH; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + u * g.dilation) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.H)) continue;
                    Scalar* dst = chan + static_cast<std::size_t>(iy) * g.W;
                    const Scalar* src = row + oy * g.OW;
                    for (std::size_t ox = 0; ox < g.OW; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + v * g.dilation) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.W))
                            dst[static_cast<std::size_t>(ix)] += src[ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise / arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "add shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                                        detail::shape_str(b.shape()));
    std::vector<Scalar> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_op(
        a.shape(), std::move(out), {a, b},
        [](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            for (int p = 0; p < 2; ++p) {
                if (!self.parents[p]->requires_grad) continue;
                auto& pg = store.buffer(self.parents[p].get());
                for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
            }
        },
        "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "sub shape mismatch");
    std::vector<Scalar> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return make_op(
        a.shape(), std::move(out), {a, b},
        [](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            if (self.parents[0]->requires_grad) {
                auto& pg = store.buffer(self.parents[0].get());
                for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
            }
            if (self.parents[1]->requires_grad) {
                auto& pg = store.buffer(self.parents[1].get());
                for (std::size_t i = 0; i < g.size(); ++i) pg[i] -= g[i];
            }
        },
        "sub");
}

inline Tensor scale(const Tensor& a, Scalar c) {
    std::vector<Scalar> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a.data()[i];
    return make_op(
        a.shape(), std::move(out), {a},
        [c](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            auto& pg = store.buffer(self.parents[0].get());
            for (std::size_t i = 0; i < g.size(); ++i) pg[i] += c * g[i];
        },
        "scale");
}

inline Tensor sub_const(const Tensor& a, std::vector<Scalar> c) {
    require(c.size() == a.size(), "sub_const length mismatch");
    std::vector<Scalar> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - c[i];
    return make_op(
        a.shape(), std::move(out), {a},
        [](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            auto& pg = store.buffer(self.parents[0].get());
            for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
        },
        "sub_const");
}

inline Tensor add_all(const std::vector<Tensor>& ts) {
    require(!ts.empty(), "add_all needs at least one tensor");
    for (const Tensor& t : ts) require(t.shape() == ts[0].shape(), "add_all shape mismatch");
    std::vector<Scalar> out(ts[0].size(), Scalar(0));
    for (const Tensor& t : ts)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += t.data()[i];
    return make_op(
        ts[0].shape(), std::move(out), ts,
        [](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            for (const auto& p : self.parents) {
                if (!p->requires_grad) continue;
                auto& pg = store.buffer(p.get());
                for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
            }
        },
        "add_all");
}

inline Tensor relu(const Tensor& a) {
    std::vector<Scalar> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > 0 ? a.data()[i] : Scalar(0);
    return make_op(
        a.shape(), std::move(out), {a},
        [](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            const auto& x = self.parents[0]->value;
            auto& pg = store.buffer(self.parents[0].get());
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x[i] > 0) pg[i] += g[i];
        },
        "relu");
}

// 0.5 x^2 inside |x|<1, |x|-0.5 outside, elementwise.
inline Tensor smooth_l1(const Tensor& a) {
    std::vector<Scalar> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Scalar x = a.data()[i];
        out[i] = std::abs(x) < 1 ? Scalar(0.5) * x * x : std::abs(x) - Scalar(0.5);
    }
    return make_op(
        a.shape(), std::move(out), {a},
        [](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            const auto& x = self.parents[0]->value;
            auto& pg = store.buffer(self.parents[0].get());
            for (std::size_t i = 0; i < g.size(); ++i) {
                const Scalar d = std::abs(x[i]) < 1 ? x[i] : (x[i] > 0 ? Scalar(1) : Scalar(-1));
                pg[i] += g[i] * d;
            }
        },
        "smooth_l1");
}

inline Tensor sum(const Tensor& a) {
    Scalar s = 0;
    for (Scalar v : a.data()) s += v;
    return make_op(
        {}, {s}, {a},
        [](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            auto& pg = store.buffer(self.parents[0].get());
            for (Scalar& v : pg) v += g[0];
        },
        "sum");
}

inline Tensor mean(const Tensor& a) {
    Scalar s = 0;
    for (Scalar v : a.data()) s += v;
    const Scalar inv = Scalar(1) / static_cast<Scalar>(a.size());
    return make_op(
        {}, {s * inv}, {a},
        [inv](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            auto& pg = store.buffer(self.parents[0].get());
            for (Scalar& v : pg) v += g[0] * inv;
        },
        "mean");
}

// sum_i w_i * a_i with constant weights; used for masked reductions.
inline Tensor weighted_sum(const Tensor& a, std::vector<Scalar> w) {
    require(w.size() == a.size(), "weighted_sum length mismatch");
    Scalar s = 0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * a.data()[i];
    auto wp = std::make_shared<std::vector<Scalar>>(std::move(w));
    return make_op(
        {}, {s}, {a},
        [wp](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            auto& pg = store.buffer(self.parents[0].get());
            for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += g[0] * (*wp)[i];
        },
        "weighted_sum");
}

inline Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
    require(detail::shape_product(shape) == a.size(), "reshape element count mismatch");
    return make_op(
        std::move(shape), a.data(), {a},
        [](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            auto& pg = store.buffer(self.parents[0].get());
            for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
        },
        "reshape");
}

inline Tensor stack_rows(const std::vector<Tensor>& rows) {
    require(!rows.empty(), "stack_rows needs at least one row");
    const std::size_t d = rows[0].size();
    for (const Tensor& r : rows) require(r.size() == d, "stack_rows rows must have equal length");
    std::vector<Scalar> out;
    out.reserve(rows.size() * d);
    for (const Tensor& r : rows) out.insert(out.end(), r.data().begin(), r.data().end());
    return make_op(
        {rows.size(), d}, std::move(out), rows,
        [d](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            for (std::size_t r = 0; r < self.parents.size(); ++r) {
                if (!self.parents[r]->requires_grad) continue;
                auto& pg = store.buffer(self.parents[r].get());
                for (std::size_t i = 0; i < d; ++i) pg[i] += g[r * d + i];
            }
        },
        "stack_rows");
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride = 1,
                     std::size_t pad = 0, std::size_t dilation = 1) {
    const detail::ConvGeom g = detail::conv_geometry(input, kernel, stride, pad, dilation);
    const std::size_t CHW = g.C * g.h * g.w;
    const std::size_t OHW = g.OH * g.OW;

    auto cols = std::make_shared<std::vector<std::vector<Scalar>>>(g.N);
    std::vector<Scalar> out(g.N * g.K * OHW, Scalar(0));
    for (std::size_t n = 0; n < g.N; ++n) {
        auto& col = (*cols)[n];
        col.resize(CHW * OHW);
        detail::im2col(input.data().data() + n * g.C * g.H * g.W, g, col.data());
        detail::gemm_nn(kernel.data().data(), col.data(), out.data() + n * g.K * OHW, g.K, CHW, OHW);
    }

    return make_op(
        {g.N, g.K, g.OH, g.OW}, std::move(out), {input, kernel},
        [g, CHW, OHW, cols](const detail::TensorNode& self, const std::vector<Scalar>& gout,
                            GradStore& store) {
            detail::TensorNode* in_node = self.parents[0].get();
            detail::TensorNode* k_node = self.parents[1].get();
            std::vector<Scalar>* gin = in_node->requires_grad ? &store.buffer(in_node) : nullptr;
            std::vector<Scalar>* gk = k_node->requires_grad ? &store.buffer(k_node) : nullptr;
            std::vector<Scalar> gcol;
            for (std::size_t n = 0; n < g.N; ++n) {
                const Scalar* go = gout.data() + n * g.K * OHW;
                if (gk)
                    detail::gemm_nt(go, (*cols)[n].data(), gk->data(), g.K, OHW, CHW);
                if (gin) {
                    gcol.assign(CHW * OHW, Scalar(0));
                    detail::gemm_tn(k_node->value.data(), go, gcol.data(), CHW, g.K, OHW);
                    detail::col2im_acc(gcol.data(), g, gin->data() + n * g.C * g.H * g.W);
                }
            }
        },
        "conv2d");
}

// Adds b[k] to every spatial position of channel k.
inline Tensor bias_add(const Tensor& x, const Tensor& b) {
    require(x.rank() == 4 && b.rank() == 1 && b.extent(0) == x.extent(1),
            "bias_add expects [N,K,H,W] and [K]");
    const std::size_t N = x.extent(0), K = x.extent(1), HW = x.extent(2) * x.extent(3);
    std::vector<Scalar> out(x.data());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < K; ++k) {
            Scalar* row = out.data() + (n * K + k) * HW;
            const Scalar bv = b.data()[k];
            for (std::size_t i = 0; i < HW; ++i) row[i] += bv;
        }
    return make_op(
        x.shape(), std::move(out), {x, b},
        [N, K, HW](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            if (self.parents[0]->requires_grad) {
                auto& pg = store.buffer(self.parents[0].get());
                for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
            }
            if (self.parents[1]->requires_grad) {
                auto& pg = store.buffer(self.parents[1].get());
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t k = 0; k < K; ++k) {
                        const Scalar* row = g.data() + (n * K + k) * HW;
                        Scalar acc = 0;
                        for (std::size_t i = 0; i < HW; ++i) acc += row[i];
                        pg[k] += acc;
                    }
            }
        },
        "bias_add");
}

// y = x[N,D] * w[D,M] + b[M]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require(x.rank() == 2 && w.rank() == 2 && x.extent(1) == w.extent(0),
            "linear expects x[N,D], w[D,M]");
    const std::size_t N = x.extent(0), D = x.extent(1), M = w.extent(1);
    require(b.rank() == 1 && b.extent(0) == M, "linear bias must be [M]");
    std::vector<Scalar> out(N * M, Scalar(0));
    detail::gemm_nn(x.data().data(), w.data().data(), out.data(), N, D, M);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t m = 0; m < M; ++m) out[n * M + m] += b.data()[m];
    return make_op(
        {N, M}, std::move(out), {x, w, b},
        [N, D, M](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            detail::TensorNode* xn = self.parents[0].get();
            detail::TensorNode* wn = self.parents[1].get();
            detail::TensorNode* bn = self.parents[2].get();
            if (xn->requires_grad)  // gx = g * w^T
                detail::gemm_nt(g.data(), wn->value.data(), store.buffer(xn).data(), N, M, D);
            if (wn->requires_grad)  // gw = x^T * g
                detail::gemm_tn(xn->value.data(), g.data(), store.buffer(wn).data(), D, N, M);
            if (bn->requires_grad) {
                auto& pg = store.buffer(bn);
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t m = 0; m < M; ++m) pg[m] += g[n * M + m];
            }
        },
        "linear");
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Mean over rows of -log softmax(logits)[target]; log-sum-exp stabilized.
inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets) {
    require(logits.rank() == 2, "softmax_cross_entropy expects [N,C] logits");
    const std::size_t N = logits.extent(0), C = logits.extent(1);
    require(targets.size() == N, "softmax_cross_entropy needs one target per row");
    for (std::size_t t : targets)
        require(t < C, "class index " + std::to_string(t) + " out of range [0," + std::to_string(C) + ")");
    auto probs = std::make_shared<std::vector<Scalar>>(N * C);
    Scalar loss = 0;
    for (std::size_t n = 0; n < N; ++n) {
        const Scalar* row = logits.data().data() + n * C;
        Scalar mx = row[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        Scalar z = 0;
        for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
        const Scalar logz = std::log(z) + mx;
        for (std::size_t c = 0; c < C; ++c) (*probs)[n * C + c] = std::exp(row[c] - logz);
        loss += logz - row[targets[n]];
    }
    loss /= static_cast<Scalar>(N);
    auto tgts = std::make_shared<std::vector<std::size_t>>(targets);
    return make_op(
        {}, {loss}, {logits},
        [N, C, probs, tgts](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            auto& pg = store.buffer(self.parents[0].get());
            const Scalar s = g[0] / static_cast<Scalar>(N);
            for (std::size_t n = 0; n < N; ++n) {
                for (std::size_t c = 0; c < C; ++c) pg[n * C + c] += s * (*probs)[n * C + c];
                pg[n * C + (*tgts)[n]] -= s;
            }
        },
        "softmax_cross_entropy");
}

// Row-wise softmax probabilities.
inline Tensor softmax_rows(const Tensor& logits) {
    require(logits.rank() == 2, "softmax_rows expects [N,C]");
    const std::size_t N = logits.extent(0), C = logits.extent(1);
    std::vector<Scalar> out(N * C);
    for (std::size_t n = 0; n < N; ++n) {
        const Scalar* row = logits.data().data() + n * C;
        Scalar mx = row[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        Scalar z = 0;
        for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
        for (std::size_t c = 0; c < C; ++c) out[n * C + c] = std::exp(row[c] - mx) / z;
    }
    return make_op(
        {N, C}, std::move(out), {logits},
        [N, C](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            auto& pg = store.buffer(self.parents[0].get());
            const auto& p = self.value;
            for (std::size_t n = 0; n < N; ++n) {
                Scalar dot = 0;
                for (std::size_t c = 0; c < C; ++c) dot += g[n * C + c] * p[n * C + c];
                for (std::size_t c = 0; c < C; ++c)
                    pg[n * C + c] += p[n * C + c] * (g[n * C + c] - dot);
            }
        },
        "softmax_rows");
}

// sum over rows of -log(probs[row, target]); inputs are probabilities.
inline Tensor nll_from_probs(const Tensor& probs, const std::vector<std::size_t>& targets) {
    require(probs.rank() == 2, "nll_from_probs expects [N,C]");
    const std::size_t N = probs.extent(0), C = probs.extent(1);
    require(targets.size() == N, "nll_from_probs needs one target per row");
    constexpr Scalar kFloor = 1e-300;
    Scalar loss = 0;
    for (std::size_t n = 0; n < N; ++n) {
        require(targets[n] < C, "class index out of range");
        loss -= std::log(std::max(probs.data()[n * C + targets[n]], kFloor));
    }
    auto tgts = std::make_shared<std::vector<std::size_t>>(targets);
    return make_op(
        {}, {loss}, {probs},
        [N, C, tgts](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            auto& pg = store.buffer(self.parents[0].get());
            const auto& p = self.parents[0]->value;
            for (std::size_t n = 0; n < N; ++n) {
                const std::size_t idx = n * C + (*tgts)[n];
                pg[idx] -= g[0] / std::max(p[idx], Scalar(1e-300));
            }
        },
        "nll_from_probs");
}

// Mean binary cross-entropy over logits, numerically stable softplus form.
inline Tensor sigmoid_bce(const Tensor& logits, std::vector<Scalar> targets) {
    require(targets.size() == logits.size(), "sigmoid_bce length mismatch");
    Scalar loss = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const Scalar x = logits.data()[i];
        // softplus(x) - t*x = log(1+e^x) - t*x
        loss += std::max(x, Scalar(0)) + std::log1p(std::exp(-std::abs(x))) - targets[i] * x;
    }
    const Scalar inv = Scalar(1) / static_cast<Scalar>(targets.size());
    loss *= inv;
    auto tg = std::make_shared<std::vector<Scalar>>(std::move(targets));
    return make_op(
        {}, {loss}, {logits},
        [tg, inv](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            auto& pg = store.buffer(self.parents[0].get());
            const auto& x = self.parents[0]->value;
            for (std::size_t i = 0; i < pg.size(); ++i) {
                const Scalar sig = Scalar(1) / (Scalar(1) + std::exp(-x[i]));
                pg[i] += g[0] * inv * (sig - (*tg)[i]);
            }
        },
        "sigmoid_bce");
}

// Mean pixel-wise cross-entropy of [C,H,W] logits against a label map,
// skipping ignore_index pixels. Zero if nothing is labeled.
inline Tensor pixel_cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels,
                                  std::size_t ignore_index = kIgnoreIndex) {
    require(logits.rank() == 3, "pixel_cross_entropy expects [C,H,W] logits");
    const std::size_t C = logits.extent(0), HW = logits.extent(1) * logits.extent(2);
    require(labels.size() == HW, "label map size mismatch");
    auto probs = std::make_shared<std::vector<Scalar>>(C * HW);
    Scalar loss = 0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < HW; ++p) {
        Scalar mx = logits.data()[p];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, logits.data()[c * HW + p]);
        Scalar z = 0;
        for (std::size_t c = 0; c < C; ++c) z += std::exp(logits.data()[c * HW + p] - mx);
        const Scalar logz = std::log(z) + mx;
        for (std::size_t c = 0; c < C; ++c) (*probs)[c * HW + p] = std::exp(logits.data()[c * HW + p] - logz);
        const std::size_t lbl = labels[p];
        if (lbl == ignore_index) continue;
        require(lbl < C, "semantic label " + std::to_string(lbl) + " out of range");
        loss += logz - logits.data()[lbl * HW + p];
        ++count;
    }
    if (count == 0) {
        return make_op(
            {}, {Scalar(0)}, {logits},
            [](const detail::TensorNode&, const std::vector<Scalar>&, GradStore&) {}, "pixel_ce");
    }
    loss /= static_cast<Scalar>(count);
    auto lbls = std::make_shared<std::vector<std::size_t>>(labels);
    return make_op(
        {}, {loss}, {logits},
        [C, HW, probs, lbls, count, ignore_index](const detail::TensorNode& self,
                                                  const std::vector<Scalar>& g, GradStore& store) {
            auto& pg = store.buffer(self.parents[0].get());
            const Scalar s = g[0] / static_cast<Scalar>(count);
            for (std::size_t p = 0; p < HW; ++p) {
                if ((*lbls)[p] == ignore_index) continue;
                for (std::size_t c = 0; c < C; ++c) pg[c * HW + p] += s * (*probs)[c * HW + p];
                pg[(*lbls)[p] * HW + p] -= s;
            }
        },
        "pixel_ce");
}

// Mean of -log softmax(logits)[cls] over the pixels set in `mask`.
inline Tensor masked_class_cross_entropy(const Tensor& logits, std::size_t cls,
                                         const std::vector<bool>& mask) {
    require(logits.rank() == 3, "masked_class_cross_entropy expects [C,H,W]");
    const std::size_t C = logits.extent(0), HW = logits.extent(1) * logits.extent(2);
    require(cls < C, "target class out of range");
    require(mask.size() == HW, "mask size mismatch");
    std::size_t count = 0;
    for (bool b : mask) count += b;
    if (count == 0) {
        return make_op(
            {}, {Scalar(0)}, {logits},
            [](const detail::TensorNode&, const std::vector<Scalar>&, GradStore&) {}, "masked_ce");
    }
    auto probs = std::make_shared<std::vector<Scalar>>();
    probs->assign(C * HW, Scalar(0));
    Scalar loss = 0;
    for (std::size_t p = 0; p < HW; ++p) {
        if (!mask[p]) continue;
        Scalar mx = logits.data()[p];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, logits.data()[c * HW + p]);
        Scalar z = 0;
        for (std::size_t c = 0; c < C; ++c) z += std::exp(logits.data()[c * HW + p] - mx);
        const Scalar logz = std::log(z) + mx;
        for (std::size_t c = 0; c < C; ++c) (*probs)[c * HW + p] = std::exp(logits.data()[c * HW + p] - logz);
        loss += logz - logits.data()[cls * HW + p];
    }
    loss /= static_cast<Scalar>(count);
    auto msk = std::make_shared<std::vector<bool>>(mask);
    return make_op(
        {}, {loss}, {logits},
        [C, HW, cls, probs, msk, count](const detail::TensorNode& self, const std::vector<Scalar>& g,
                                        GradStore& store) {
            auto& pg = store.buffer(self.parents[0].get());
            const Scalar s = g[0] / static_cast<Scalar>(count);
            for (std::size_t p = 0; p < HW; ++p) {
                if (!(*msk)[p]) continue;
                for (std::size_t c = 0; c < C; ++c) pg[c * HW + p] += s * (*probs)[c * HW + p];
                pg[cls * HW + p] -= s;
            }
        },
        "masked_ce");
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

// Bilinear upsample by an integer factor, half-pixel-center convention,
// borders clamped.
inline Tensor upsample_bilinear(const Tensor& x, std::size_t factor) {
    require(x.rank() == 3, "upsample_bilinear expects [C,H,W]");
    require(factor >= 1, "upsample factor must be >= 1");
    const std::size_t C = x.extent(0), H = x.extent(1), W = x.extent(2);
    const std::size_t OH = H * factor, OW = W * factor;
    struct Tap {
        std::size_t r0, r1, c0, c1;
        Scalar wr, wc;
    };
    auto taps = std::make_shared<std::vector<Tap>>(OH * OW);
    const Scalar inv = Scalar(1) / static_cast<Scalar>(factor);
    for (std::size_t r = 0; r < OH; ++r) {
        Scalar sy = (static_cast<Scalar>(r) + Scalar(0.5)) * inv - Scalar(0.5);
        sy = std::clamp(sy, Scalar(0), static_cast<Scalar>(H - 1));
        const std::size_t r0 = static_cast<std::size_t>(sy);
        const std::size_t r1 = std::min(r0 + 1, H - 1);
        const Scalar wr = sy - static_cast<Scalar>(r0);
        for (std::size_t c = 0; c < OW; ++c) {
            Scalar sx = (static_cast<Scalar>(c) + Scalar(0.5)) * inv - Scalar(0.5);
            sx = std::clamp(sx, Scalar(0), static_cast<Scalar>(W - 1));
            const std::size_t c0 = static_cast<std::size_t>(sx);
            const std::size_t c1 = std::min(c0 + 1, W - 1);
            (*taps)[r * OW + c] = {r0, r1, c0, c1, wr, sx - static_cast<Scalar>(c0)};
        }
    }
    std::vector<Scalar> out(C * OH * OW);
    for (std::size_t ch = 0; ch < C; ++ch) {
        const Scalar* src = x.data().data() + ch * H * W;
        Scalar* dst = out.data() + ch * OH * OW;
        for (std::size_t i = 0; i < OH * OW; ++i) {
            const Tap& t = (*taps)[i];
            const Scalar top = src[t.r0 * W + t.c0] * (1 - t.wc) + src[t.r0 * W + t.c1] * t.wc;
            const Scalar bot = src[t.r1 * W + t.c0] * (1 - t.wc) + src[t.r1 * W + t.c1] * t.wc;
            dst[i] = top * (1 - t.wr) + bot * t.wr;
        }
    }
    return make_op(
        {C, OH, OW}, std::move(out), {x},
        [C, H, W, OH, OW, taps](const detail::TensorNode& self, const std::vector<Scalar>& g,
                                GradStore& store) {
            auto& pg = store.buffer(self.parents[0].get());
            for (std::size_t ch = 0; ch < C; ++ch) {
                Scalar* dst = pg.data() + ch * H * W;
                const Scalar* src = g.data() + ch * OH * OW;
                for (std::size_t i = 0; i < OH * OW; ++i) {
                    const Tap& t = (*taps)[i];
                    const Scalar gv = src[i];
                    dst[t.r0 * W + t.c0] += gv * (1 - t.wr) * (1 - t.wc);
                    dst[t.r0 * W + t.c1] += gv * (1 - t.wr) * t.wc;
                    dst[t.r1 * W + t.c0] += gv * t.wr * (1 - t.wc);
                    dst[t.r1 * W + t.c1] += gv * t.wr * t.wc;
                }
            }
        },
        "upsample_bilinear");
}

// Bilinear crop of box [x0,x1]x[y0,y1] (continuous feature coords, pixel
// centers at +0.5) into a P x P grid. Linear in the feature values.
inline Tensor crop_resize(const Tensor& feat, Scalar x0, Scalar y0, Scalar x1, Scalar y1,
                          std::size_t P) {
    require(feat.rank() == 3, "crop_resize expects [C,H,W]");
    const std::size_t C = feat.extent(0), H = feat.extent(1), W = feat.extent(2);
    struct Tap {
        std::size_t r0, r1, c0, c1;
        Scalar wr, wc;
    };
    auto taps = std::make_shared<std::vector<Tap>>(P * P);
    const Scalar bw = x1 - x0, bh = y1 - y0;
    for (std::size_t i = 0; i < P; ++i) {
        Scalar sy = y0 + (static_cast<Scalar>(i) + Scalar(0.5)) * bh / static_cast<Scalar>(P) - Scalar(0.5);
        sy = std::clamp(sy, Scalar(0), static_cast<Scalar>(H - 1));
        const std::size_t r0 = static_cast<std::size_t>(sy);
        const std::size_t r1 = std::min(r0 + 1, H - 1);
        for (std::size_t j = 0; j < P; ++j) {
            Scalar sx = x0 + (static_cast<Scalar>(j) + Scalar(0.5)) * bw / static_cast<Scalar>(P) - Scalar(0.5);
            sx = std::clamp(sx, Scalar(0), static_cast<Scalar>(W - 1));
            const std::size_t c0 = static_cast<std::size_t>(sx);
            const std::size_t c1 = std::min(c0 + 1, W - 1);
            (*taps)[i * P + j] = {r0, r1, c0, c1, sy - static_cast<Scalar>(r0), sx - static_cast<Scalar>(c0)};
        }
    }
    std::vector<Scalar> out(C * P * P);
    for (std::size_t ch = 0; ch < C; ++ch) {
        const Scalar* src = feat.data().data() + ch * H * W;
        Scalar* dst = out.data() + ch * P * P;
        for (std::size_t i = 0; i < P * P; ++i) {
            const Tap& t = (*taps)[i];
            const Scalar top = src[t.r0 * W + t.c0] * (1 - t.wc) + src[t.r0 * W + t.c1] * t.wc;
            const Scalar bot = src[t.r1 * W + t.c0] * (1 - t.wc) + src[t.r1 * W + t.c1] * t.wc;
            dst[i] = top * (1 - t.wr) + bot * t.wr;
        }
    }
    return make_op(
        {C, P, P}, std::move(out), {feat},
        [C, H, W, P, taps](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
            auto& pg = store.buffer(self.parents[0].get());
            for (std::size_t ch = 0; ch < C; ++ch) {
                Scalar* dst = pg.data() + ch * H * W;
                const Scalar* src = g.data() + ch * P * P;
                for (std::size_t i = 0; i < P * P; ++i) {
                    const Tap& t = (*taps)[i];
                    const Scalar gv = src[i];
                    dst[t.r0 * W + t.c0] += gv * (1 - t.wr) * (1 - t.wc);
                    dst[t.r0 * W + t.c1] += gv * (1 - t.wr) * t.wc;
                    dst[t.r1 * W + t.c0] += gv * t.wr * (1 - t.wc);
                    dst[t.r1 * W + t.c1] += gv * t.wr * t.wc;
                }
            }
        },
        "crop_resize");
}

// Per-channel affine normalization against fixed statistics; the statistics
// are constants for the backward pass.
inline Tensor normalize_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                 const std::vector<Scalar>& mean_c, const std::vector<Scalar>& var_c,
                                 Scalar eps = 1e-5) {
    require(x.rank() == 3, "normalize_channels expects [C,H,W]");
    const std::size_t C = x.extent(0), HW = x.extent(1) * x.extent(2);
    require(gamma.size() == C && beta.size() == C && mean_c.size() == C && var_c.size() == C,
            "normalize_channels parameter size mismatch");
    auto inv_std = std::make_shared<std::vector<Scalar>>(C);
    auto mu = std::make_shared<std::vector<Scalar>>(mean_c);
    for (std::size_t c = 0; c < C; ++c) (*inv_std)[c] = Scalar(1) / std::sqrt(var_c[c] + eps);
    std::vector<Scalar> out(C * HW);
    for (std::size_t c = 0; c < C; ++c) {
        const Scalar a = gamma.data()[c] * (*inv_std)[c];
        const Scalar b = beta.data()[c] - a * (*mu)[c];
        const Scalar* src = x.data().data() + c * HW;
        Scalar* dst = out.data() + c * HW;
        for (std::size_t i = 0; i < HW; ++i) dst[i] = a * src[i] + b;
    }
    return make_op(
        x.shape(), std::move(out), {x, gamma, beta},
        [C, HW, inv_std, mu](const detail::TensorNode& self, const std::vector<Scalar>& g,
                             GradStore& store) {
            detail::TensorNode* xn = self.parents[0].get();
            detail::TensorNode* gn = self.parents[1].get();
            detail::TensorNode* bn = self.parents[2].get();
            if (xn->requires_grad) {
                auto& pg = store.buffer(xn);
                for (std::size_t c = 0; c < C; ++c) {
                    const Scalar a = gn->value[c] * (*inv_std)[c];
                    const Scalar* src = g.data() + c * HW;
                    Scalar* dst = pg.data() + c * HW;
                    for (std::size_t i = 0; i < HW; ++i) dst[i] += a * src[i];
                }
            }
            if (gn->requires_grad) {
                auto& pg = store.buffer(gn);
                for (std::size_t c = 0; c < C; ++c) {
                    const Scalar* src = g.data() + c * HW;
                    const Scalar* xv = xn->value.data() + c * HW;
                    Scalar acc = 0;
                    for (std::size_t i = 0; i < HW; ++i)
                        acc += src[i] * (xv[i] - (*mu)[c]) * (*inv_std)[c];
                    pg[c] += acc;
                }
            }
            if (bn->requires_grad) {
                auto& pg = store.buffer(bn);
                for (std::size_t c = 0; c < C; ++c) {
                    const Scalar* src = g.data() + c * HW;
                    Scalar acc = 0;
                    for (std::size_t i = 0; i < HW; ++i) acc += src[i];
                    pg[c] += acc;
                }
            }
        },
        "normalize_channels");
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

// Central differences against the reverse-mode gradient; returns the largest
// relative error over the elements of x.
inline Scalar grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         Scalar step = 1e-5) {
    Tensor xv = Tensor::from_data(x.shape(), x.data(), true);
    Tensor y = f(xv);
    require(y.size() == 1, "grad_check target must produce a scalar");
    GradStore store;
    backward(y, store);
    const std::vector<Scalar>* ad = store.find(xv.node());
    require(ad != nullptr, "grad_check: no gradient reached x");
    Scalar worst = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        std::vector<Scalar> d = x.data();
        d[i] = x.data()[i] + step;
        const Scalar fp = f(Tensor::from_data(x.shape(), d)).item();
        d[i] = x.data()[i] - step;
        const Scalar fm = f(Tensor::from_data(x.shape(), d)).item();
        const Scalar fd = (fp - fm) / (2 * step);
        const Scalar denom = std::max({std::abs((*ad)[i]), std::abs(fd), Scalar(1e-4)});
        worst = std::max(worst, std::abs((*ad)[i] - fd) / denom);
    }
    return worst;
}

}  // namespace frcnn
