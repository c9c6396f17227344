#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "voxgrad/errors.hpp"
#include "voxgrad/parallel.hpp"
#include "voxgrad/tape.hpp"
#include "voxgrad/tensor.hpp"

namespace voxgrad {

namespace detail {

// ceil(a/b) and floor(a/b) for b > 0 and any sign of a.
inline long ceil_div(long a, long b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
inline long floor_div(long a, long b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

}  // namespace detail

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

inline VarId relu(Tape& tape, VarId x_id) {
    const Tensor& x = tape.value(x_id);
    Tensor out = x;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return tape.record(std::move(out), {x_id}, [x_id](Tape& t, VarId self) {
        if (!t.wants_grad(x_id)) return;
        const std::vector<double>& g = t.grad(self);
        const Tensor& xin = t.value(x_id);
        std::vector<double>& dx = t.grad_accum(x_id);
        switch (t.relu_mode()) {
            case ReluMode::kStandard:
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (xin.data[i] > 0.0) dx[i] += g[i];
                break;
            case ReluMode::kDeconv:
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (g[i] > 0.0) dx[i] += g[i];
                break;
            case ReluMode::kGuided:
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (xin.data[i] > 0.0 && g[i] > 0.0) dx[i] += g[i];
                break;
        }
    });
}

// Standalone backward rule, also used by the tape node above via its gate
// table: Standard g*1[x>0], Deconv g*1[g>0], Guided g*1[x>0]*1[g>0].
inline Tensor relu_backward(const Tensor& g_out, const Tensor& x_saved, ReluMode mode) {
    if (g_out.shape != x_saved.shape) {
        throw ConfigError("relu_backward: gradient shape " + shape_str(g_out.shape) +
                          " does not match saved input shape " + shape_str(x_saved.shape));
    }
    Tensor out = Tensor::zeros(g_out.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double g = g_out.data[i];
        const double x = x_saved.data[i];
        bool pass = false;
        switch (mode) {
            case ReluMode::kStandard: pass = x > 0.0; break;
            case ReluMode::kDeconv: pass = g > 0.0; break;
            case ReluMode::kGuided: pass = x > 0.0 && g > 0.0; break;
        }
        if (pass) out.data[i] = g;
    }
    return out;
}

// ---------------------------------------------------------------------------
// 3D convolution (cross-correlation plus bias)
// ---------------------------------------------------------------------------

namespace detail {

struct Conv3dDims {
    std::size_t n, c, d, h, w;
    std::size_t k, kd, kh, kw;
    std::size_t od, oh, ow;
    long stride, pad;
};

inline Conv3dDims conv3d_dims(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                              int pad) {
    if (x.rank() != 5) throw ConfigError("conv3d: input must be rank 5 [N,C,D,H,W], got " + shape_str(x.shape));
    if (w.rank() != 5) throw ConfigError("conv3d: kernel must be rank 5 [K,C,kd,kh,kw], got " + shape_str(w.shape));
    if (b.rank() != 1) throw ConfigError("conv3d: bias must be rank 1, got " + shape_str(b.shape));
    if (stride < 1) throw ConfigError("conv3d: stride must be >= 1");
    if (pad < 0) throw ConfigError("conv3d: pad must be >= 0");
    Conv3dDims m{};
    m.n = x.shape[0]; m.c = x.shape[1]; m.d = x.shape[2]; m.h = x.shape[3]; m.w = x.shape[4];
    m.k = w.shape[0]; m.kd = w.shape[2]; m.kh = w.shape[3]; m.kw = w.shape[4];
    if (w.shape[1] != m.c) {
        throw ConfigError("conv3d: input has " + std::to_string(m.c) + " channels but kernel expects " +
                          std::to_string(w.shape[1]));
    }
    if (b.shape[0] != m.k) {
        throw ConfigError("conv3d: bias has " + std::to_string(b.shape[0]) + " entries for " +
                          std::to_string(m.k) + " output channels");
    }
    const long p = pad, s = stride;
    if (static_cast<long>(m.kd) > static_cast<long>(m.d) + 2 * p ||
        static_cast<long>(m.kh) > static_cast<long>(m.h) + 2 * p ||
        static_cast<long>(m.kw) > static_cast<long>(m.w) + 2 * p) {
        throw ConfigError("conv3d: kernel " + shape_str(w.shape) + " larger than padded input " +
                          shape_str(x.shape) + " with pad " + std::to_string(pad));
    }
    m.od = static_cast<std::size_t>((static_cast<long>(m.d) + 2 * p - static_cast<long>(m.kd)) / s + 1);
    m.oh = static_cast<std::size_t>((static_cast<long>(m.h) + 2 * p - static_cast<long>(m.kh)) / s + 1);
    m.ow = static_cast<std::size_t>((static_cast<long>(m.w) + 2 * p - static_cast<long>(m.kw)) / s + 1);
    m.stride = s;
    m.pad = p;
    return m;
}

// Valid output range [lo, hi) along one axis for kernel offset `tap`:
// in = out*stride - pad + tap must land inside [0, extent).
inline std::pair<long, long> conv_out_range(long tap, long extent, long out_extent, long stride,
                                            long pad) {
    const long lo = std::max(0L, ceil_div(pad - tap, stride));
    const long hi = std::min(out_extent, floor_div(extent - 1 - tap + pad, stride) + 1);
    return {lo, hi};
}

}  // namespace detail

inline VarId conv3d(Tape& tape, VarId x_id, VarId w_id, VarId b_id, int stride = 1, int pad = 0) {
    const Tensor& x = tape.value(x_id);
    const Tensor& w = tape.value(w_id);
    const Tensor& b = tape.value(b_id);
    const detail::Conv3dDims m = detail::conv3d_dims(x, w, b, stride, pad);

    Tensor out = Tensor::zeros({m.n, m.k, m.od, m.oh, m.ow});
    const std::size_t x_hw = m.h * m.w, x_dhw = m.d * x_hw;
    const std::size_t o_hw = m.oh * m.ow, o_dhw = m.od * o_hw;
    const std::size_t w_khw = m.kh * m.kw, w_tap = m.kd * w_khw;

    // Tap accumulation: for every kernel tap, a strided axpy over the output
    // row. The per-element accumulation order is fixed (c, kd, kh, kw), so
    // results are identical for any worker count.
    parallel_for(m.n * m.k, [&](std::size_t nk) {
        const std::size_t n = nk / m.k, k = nk % m.k;
        double* oslab = out.data.data() + (n * m.k + k) * o_dhw;
        std::fill(oslab, oslab + o_dhw, b.data[k]);
        const double* wslab = w.data.data() + k * m.c * w_tap;
        for (std::size_t c = 0; c < m.c; ++c) {
            const double* xslab = x.data.data() + (n * m.c + c) * x_dhw;
            for (std::size_t dd = 0; dd < m.kd; ++dd) {
                const auto [od_lo, od_hi] = detail::conv_out_range(
                    static_cast<long>(dd), static_cast<long>(m.d), static_cast<long>(m.od), m.stride, m.pad);
                for (long od = od_lo; od < od_hi; ++od) {
                    const long id = od * m.stride - m.pad + static_cast<long>(dd);
                    for (std::size_t dh = 0; dh < m.kh; ++dh) {
                        const auto [oh_lo, oh_hi] = detail::conv_out_range(
                            static_cast<long>(dh), static_cast<long>(m.h), static_cast<long>(m.oh), m.stride, m.pad);
                        for (long oh = oh_lo; oh < oh_hi; ++oh) {
                            const long ih = oh * m.stride - m.pad + static_cast<long>(dh);
                            const double* xrow = xslab + id * static_cast<long>(x_hw) + ih * static_cast<long>(m.w);
                            double* orow = oslab + od * static_cast<long>(o_hw) + oh * static_cast<long>(m.ow);
                            const double* wrow = wslab + c * w_tap + dd * w_khw + dh * m.kw;
                            for (std::size_t lw = 0; lw < m.kw; ++lw) {
                                const double wv = wrow[lw];
                                const auto [ow_lo, ow_hi] = detail::conv_out_range(
                                    static_cast<long>(lw), static_cast<long>(m.w), static_cast<long>(m.ow), m.stride, m.pad);
                                const long shift = -m.pad + static_cast<long>(lw);
                                for (long ow = ow_lo; ow < ow_hi; ++ow) {
                                    orow[ow] += wv * xrow[ow * m.stride + shift];
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    return tape.record(std::move(out), {x_id, w_id, b_id},
                       [x_id, w_id, b_id, m, x_hw, x_dhw, o_hw, o_dhw, w_khw, w_tap](Tape& t, VarId self) {
        const std::vector<double>& g = t.grad(self);
        const Tensor& xin = t.value(x_id);
        const Tensor& win = t.value(w_id);

        if (t.wants_grad(b_id)) {
            std::vector<double>& db = t.grad_accum(b_id);
            for (std::size_t n = 0; n < m.n; ++n) {
                for (std::size_t k = 0; k < m.k; ++k) {
                    const double* grow = g.data() + (n * m.k + k) * o_dhw;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < o_dhw; ++i) acc += grow[i];
                    db[k] += acc;
                }
            }
        }

        if (t.wants_grad(w_id)) {
            std::vector<double>& dw = t.grad_accum(w_id);
            parallel_for(m.k, [&](std::size_t k) {
                double* dwslab = dw.data() + k * m.c * w_tap;
                for (std::size_t n = 0; n < m.n; ++n) {
                    const double* gslab = g.data() + (n * m.k + k) * o_dhw;
                    for (std::size_t c = 0; c < m.c; ++c) {
                        const double* xslab = xin.data.data() + (n * m.c + c) * x_dhw;
                        for (std::size_t dd = 0; dd < m.kd; ++dd) {
                            const auto [od_lo, od_hi] = detail::conv_out_range(
                                static_cast<long>(dd), static_cast<long>(m.d), static_cast<long>(m.od), m.stride, m.pad);
                            for (long od = od_lo; od < od_hi; ++od) {
                                const long id = od * m.stride - m.pad + static_cast<long>(dd);
                                for (std::size_t dh = 0; dh < m.kh; ++dh) {
                                    const auto [oh_lo, oh_hi] = detail::conv_out_range(
                                        static_cast<long>(dh), static_cast<long>(m.h), static_cast<long>(m.oh), m.stride, m.pad);
                                    for (long oh = oh_lo; oh < oh_hi; ++oh) {
                                        const long ih = oh * m.stride - m.pad + static_cast<long>(dh);
                                        const double* xrow = xslab + id * static_cast<long>(x_hw) + ih * static_cast<long>(m.w);
                                        const double* grow = gslab + od * static_cast<long>(o_hw) + oh * static_cast<long>(m.ow);
                                        double* dwrow = dwslab + c * w_tap + dd * w_khw + dh * m.kw;
                                        for (std::size_t lw = 0; lw < m.kw; ++lw) {
                                            const auto [ow_lo, ow_hi] = detail::conv_out_range(
                                                static_cast<long>(lw), static_cast<long>(m.w), static_cast<long>(m.ow), m.stride, m.pad);
                                            const long shift = -m.pad + static_cast<long>(lw);
                                            double acc = 0.0;
                                            for (long ow = ow_lo; ow < ow_hi; ++ow) {
                                                acc += grow[ow] * xrow[ow * m.stride + shift];
                                            }
                                            dwrow[lw] += acc;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        }

        if (t.wants_grad(x_id)) {
            std::vector<double>& dx = t.grad_accum(x_id);
            parallel_for(m.n, [&](std::size_t n) {
                for (std::size_t c = 0; c < m.c; ++c) {
                    double* dxslab = dx.data() + (n * m.c + c) * x_dhw;
                    for (std::size_t k = 0; k < m.k; ++k) {
                        const double* gslab = g.data() + (n * m.k + k) * o_dhw;
                        const double* wslab = win.data.data() + (k * m.c + c) * w_tap;
                        for (std::size_t dd = 0; dd < m.kd; ++dd) {
                            const auto [od_lo, od_hi] = detail::conv_out_range(
                                static_cast<long>(dd), static_cast<long>(m.d), static_cast<long>(m.od), m.stride, m.pad);
                            for (long od = od_lo; od < od_hi; ++od) {
                                const long id = od * m.stride - m.pad + static_cast<long>(dd);
                                for (std::size_t dh = 0; dh < m.kh; ++dh) {
                                    const auto [oh_lo, oh_hi] = detail::conv_out_range(
                                        static_cast<long>(dh), static_cast<long>(m.h), static_cast<long>(m.oh), m.stride, m.pad);
                                    for (long oh = oh_lo; oh < oh_hi; ++oh) {
                                        const long ih = oh * m.stride - m.pad + static_cast<long>(dh);
                                        double* dxrow = dxslab + id * static_cast<long>(x_hw) + ih * static_cast<long>(m.w);
                                        const double* grow = gslab + od * static_cast<long>(o_hw) + oh * static_cast<long>(m.ow);
                                        const double* wrow = wslab + dd * w_khw + dh * m.kw;
                                        for (std::size_t lw = 0; lw < m.kw; ++lw) {
                                            const double wv = wrow[lw];
                                            const auto [ow_lo, ow_hi] = detail::conv_out_range(
                                                static_cast<long>(lw), static_cast<long>(m.w), static_cast<long>(m.ow), m.stride, m.pad);
                                            const long shift = -m.pad + static_cast<long>(lw);
                                            for (long ow = ow_lo; ow < ow_hi; ++ow) {
                                                dxrow[ow * m.stride + shift] += wv * grow[ow];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            });
        }
    });
}

// ---------------------------------------------------------------------------
// 3D max pooling; gradient routes to each window's argmax, first index wins
// on ties.
// ---------------------------------------------------------------------------

inline VarId maxpool3d(Tape& tape, VarId x_id, int k, int stride) {
    const Tensor& x = tape.value(x_id);
    if (x.rank() != 5) throw ConfigError("maxpool3d: input must be rank 5 [N,C,D,H,W], got " + shape_str(x.shape));
    if (k <= 0 || stride <= 0) throw ConfigError("maxpool3d: window and stride must be positive");
    const std::size_t N = x.shape[0], C = x.shape[1], D = x.shape[2], H = x.shape[3], W = x.shape[4];
    const std::size_t ku = static_cast<std::size_t>(k), su = static_cast<std::size_t>(stride);
    if (ku > D || ku > H || ku > W) {
        throw ConfigError("maxpool3d: window " + std::to_string(k) + " exceeds spatial extents of " + shape_str(x.shape));
    }
    const std::size_t Do = (D - ku) / su + 1, Ho = (H - ku) / su + 1, Wo = (W - ku) / su + 1;

    Tensor out = Tensor::zeros({N, C, Do, Ho, Wo});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
    const std::size_t x_hw = H * W, x_dhw = D * x_hw;

    std::size_t oi = 0;
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
            const double* xslab = x.data.data() + (n * C + c) * x_dhw;
            for (std::size_t od = 0; od < Do; ++od) {
                for (std::size_t oh = 0; oh < Ho; ++oh) {
                    for (std::size_t ow = 0; ow < Wo; ++ow, ++oi) {
                        double best = -std::numeric_limits<double>::infinity();
                        std::size_t best_at = 0;
                        for (std::size_t dd = 0; dd < ku; ++dd) {
                            for (std::size_t dh = 0; dh < ku; ++dh) {
                                const std::size_t base = (od * su + dd) * x_hw + (oh * su + dh) * W + ow * su;
                                for (std::size_t dw = 0; dw < ku; ++dw) {
                                    const double v = xslab[base + dw];
                                    if (v > best) {
                                        best = v;
                                        best_at = (n * C + c) * x_dhw + base + dw;
                                    }
                                }
                            }
                        }
                        out.data[oi] = best;
                        (*argmax)[oi] = best_at;
                    }
                }
            }
        }
    }

    return tape.record(std::move(out), {x_id}, [x_id, argmax](Tape& t, VarId self) {
        if (!t.wants_grad(x_id)) return;
        const std::vector<double>& g = t.grad(self);
        std::vector<double>& dx = t.grad_accum(x_id);
        for (std::size_t i = 0; i < g.size(); ++i) dx[(*argmax)[i]] += g[i];
    });
}

// ---------------------------------------------------------------------------
// Dense layer: x[N,F] * w[F,O] + b[O]
// ---------------------------------------------------------------------------

inline VarId dense(Tape& tape, VarId x_id, VarId w_id, VarId b_id) {
    const Tensor& x = tape.value(x_id);
    const Tensor& w = tape.value(w_id);
    const Tensor& b = tape.value(b_id);
    if (x.rank() != 2) throw ConfigError("dense: input must be rank 2 [N,F], got " + shape_str(x.shape));
    if (w.rank() != 2) throw ConfigError("dense: weight must be rank 2 [F,O], got " + shape_str(w.shape));
    if (b.rank() != 1) throw ConfigError("dense: bias must be rank 1, got " + shape_str(b.shape));
    const std::size_t N = x.shape[0], F = x.shape[1], O = w.shape[1];
    if (w.shape[0] != F) {
        throw ConfigError("dense: input feature dim " + std::to_string(F) + " does not match weight rows " +
                          std::to_string(w.shape[0]));
    }
    if (b.shape[0] != O) {
        throw ConfigError("dense: bias has " + std::to_string(b.shape[0]) + " entries for " + std::to_string(O) +
                          " outputs");
    }

    Tensor out = Tensor::zeros({N, O});
    parallel_for(N, [&](std::size_t n) {
        double* orow = out.data.data() + n * O;
        std::copy(b.data.begin(), b.data.end(), orow);
        const double* xrow = x.data.data() + n * F;
        for (std::size_t f = 0; f < F; ++f) {
            const double xv = xrow[f];
            const double* wrow = w.data.data() + f * O;
            for (std::size_t o = 0; o < O; ++o) orow[o] += xv * wrow[o];
        }
    });

    return tape.record(std::move(out), {x_id, w_id, b_id},
                       [x_id, w_id, b_id, N, F, O](Tape& t, VarId self) {
        const std::vector<double>& g = t.grad(self);
        const Tensor& xin = t.value(x_id);
        const Tensor& win = t.value(w_id);
        if (t.wants_grad(b_id)) {
            std::vector<double>& db = t.grad_accum(b_id);
            for (std::size_t n = 0; n < N; ++n) {
                const double* grow = g.data() + n * O;
                for (std::size_t o = 0; o < O; ++o) db[o] += grow[o];
            }
        }
        if (t.wants_grad(w_id)) {
            std::vector<double>& dw = t.grad_accum(w_id);
            parallel_for(F, [&](std::size_t f) {
                double* dwrow = dw.data() + f * O;
                for (std::size_t n = 0; n < N; ++n) {
                    const double xv = xin.data[n * F + f];
                    const double* grow = g.data() + n * O;
                    for (std::size_t o = 0; o < O; ++o) dwrow[o] += xv * grow[o];
                }
            });
        }
        if (t.wants_grad(x_id)) {
            std::vector<double>& dx = t.grad_accum(x_id);
            parallel_for(N, [&](std::size_t n) {
                const double* grow = g.data() + n * O;
                double* dxrow = dx.data() + n * F;
                for (std::size_t f = 0; f < F; ++f) {
                    const double* wrow = win.data.data() + f * O;
                    double acc = 0.0;
                    for (std::size_t o = 0; o < O; ++o) acc += grow[o] * wrow[o];
                    dxrow[f] += acc;
                }
            });
        }
    });
}

// ---------------------------------------------------------------------------
// Max over the point axis: [N,P,F] -> [N,F]. The symmetric aggregation that
// makes point networks order-invariant; gradient goes to the argmax point
// only (first index on ties).
// ---------------------------------------------------------------------------

inline VarId reduce_max(Tape& tape, VarId x_id) {
    const Tensor& x = tape.value(x_id);
    if (x.rank() != 3) throw ConfigError("reduce_max: input must be rank 3 [N,P,F], got " + shape_str(x.shape));
    const std::size_t N = x.shape[0], P = x.shape[1], F = x.shape[2];
    if (P == 0) throw ConfigError("reduce_max: cannot reduce an empty point axis");

    Tensor out = Tensor::zeros({N, F});
    auto argmax = std::make_shared<std::vector<std::size_t>>(N * F);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t f = 0; f < F; ++f) {
            double best = x.data[(n * P) * F + f];
            std::size_t best_p = 0;
            for (std::size_t p = 1; p < P; ++p) {
                const double v = x.data[(n * P + p) * F + f];
                if (v > best) {
                    best = v;
                    best_p = p;
                }
            }
            out.data[n * F + f] = best;
            (*argmax)[n * F + f] = best_p;
        }
    }

    return tape.record(std::move(out), {x_id}, [x_id, argmax, N, P, F](Tape& t, VarId self) {
        if (!t.wants_grad(x_id)) return;
        const std::vector<double>& g = t.grad(self);
        std::vector<double>& dx = t.grad_accum(x_id);
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t f = 0; f < F; ++f) {
                dx[(n * P + (*argmax)[n * F + f]) * F + f] += g[n * F + f];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Mean cross-entropy over the batch, max-subtraction stabilized.
// ---------------------------------------------------------------------------

inline VarId softmax_cross_entropy(Tape& tape, VarId logits_id, std::vector<int> labels) {
    const Tensor& logits = tape.value(logits_id);
    if (logits.rank() != 2) {
        throw ConfigError("softmax_cross_entropy: logits must be rank 2 [N,C], got " + shape_str(logits.shape));
    }
    const std::size_t N = logits.shape[0], C = logits.shape[1];
    if (labels.size() != N) {
        throw ConfigError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                          std::to_string(N));
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= C) {
            throw ConfigError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," +
                              std::to_string(C) + ")");
        }
    }

    auto probs = std::make_shared<std::vector<double>>(N * C);
    double loss = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        const double* row = logits.data.data() + n * C;
        double m = row[0];
        for (std::size_t c = 1; c < C; ++c) m = std::max(m, row[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - m);
        const double lse = m + std::log(z);
        for (std::size_t c = 0; c < C; ++c) (*probs)[n * C + c] = std::exp(row[c] - lse);
        loss += lse - row[labels[n]];
    }
    loss /= static_cast<double>(N);

    return tape.record(Tensor::scalar(loss), {logits_id},
                       [logits_id, probs, labels = std::move(labels), N, C](Tape& t, VarId self) {
        if (!t.wants_grad(logits_id)) return;
        const double g0 = t.grad(self)[0];
        std::vector<double>& dl = t.grad_accum(logits_id);
        const double inv_n = 1.0 / static_cast<double>(N);
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t c = 0; c < C; ++c) {
                double v = (*probs)[n * C + c];
                if (static_cast<std::size_t>(labels[n]) == c) v -= 1.0;
                dl[n * C + c] += g0 * v * inv_n;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

inline VarId add(Tape& tape, VarId a_id, VarId b_id) {
    const Tensor& a = tape.value(a_id);
    const Tensor& b = tape.value(b_id);
    if (a.shape != b.shape) {
        throw ConfigError("add: shape " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    }
    Tensor out = a;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += b.data[i];
    return tape.record(std::move(out), {a_id, b_id}, [a_id, b_id](Tape& t, VarId self) {
        const std::vector<double>& g = t.grad(self);
        if (t.wants_grad(a_id)) {
            std::vector<double>& da = t.grad_accum(a_id);
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
        }
        if (t.wants_grad(b_id)) {
            std::vector<double>& db = t.grad_accum(b_id);
            for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
        }
    });
}

inline VarId reshape(Tape& tape, VarId x_id, Shape new_shape) {
    const Tensor& x = tape.value(x_id);
    if (shape_numel(new_shape) != x.numel()) {
        throw ConfigError("reshape: cannot view " + shape_str(x.shape) + " as " + shape_str(new_shape));
    }
    Tensor out(std::move(new_shape), x.data);
    return tape.record(std::move(out), {x_id}, [x_id](Tape& t, VarId self) {
        if (!t.wants_grad(x_id)) return;
        const std::vector<double>& g = t.grad(self);
        std::vector<double>& dx = t.grad_accum(x_id);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    });
}

// Scalar view of one matrix entry, e.g. the target-class logit.
inline VarId pick(Tape& tape, VarId x_id, std::size_t row, std::size_t col) {
    const Tensor& x = tape.value(x_id);
    if (x.rank() != 2) throw ConfigError("pick: input must be rank 2, got " + shape_str(x.shape));
    if (row >= x.shape[0] || col >= x.shape[1]) {
        throw ConfigError("pick: index (" + std::to_string(row) + "," + std::to_string(col) +
                          ") outside " + shape_str(x.shape));
    }
    const std::size_t flat = row * x.shape[1] + col;
    return tape.record(Tensor::scalar(x.data[flat]), {x_id}, [x_id, flat](Tape& t, VarId self) {
        if (!t.wants_grad(x_id)) return;
        t.grad_accum(x_id)[flat] += t.grad(self)[0];
    });
}

inline VarId sum(Tape& tape, VarId x_id) {
    const Tensor& x = tape.value(x_id);
    double acc = 0.0;
    for (double v : x.data) acc += v;
    return tape.record(Tensor::scalar(acc), {x_id}, [x_id](Tape& t, VarId self) {
        if (!t.wants_grad(x_id)) return;
        const double g0 = t.grad(self)[0];
        std::vector<double>& dx = t.grad_accum(x_id);
        for (double& v : dx) v += g0;
    });
}

}  // namespace voxgrad
