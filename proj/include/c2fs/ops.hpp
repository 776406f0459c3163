#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "c2fs/autodiff.hpp"
#include "c2fs/rng.hpp"
#include "c2fs/tensor.hpp"

namespace c2fs {
namespace ops {

// ---------------------------------------------------------------------------
// Raw convolution kernels shared by conv2d / deconv2d forward and backward.
// Weight layout (OC, IC, KH, KW); tensors are (N, C, H, W) row-major.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> conv2d_raw(const Tensor<S>& x, const Tensor<S>& w, const S* bias, std::size_t stride,
                     std::size_t pad) {
    const std::size_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const std::size_t OC = w.shape[0], KH = w.shape[2], KW = w.shape[3];
    if (w.shape[1] != C)
        throw ShapeError("conv2d: input channels " + shape_str(x.shape) + " vs weight " +
                         shape_str(w.shape));
    if (H + 2 * pad < KH || W + 2 * pad < KW)
        throw ShapeError("conv2d: kernel " + shape_str(w.shape) + " larger than padded input " +
                         shape_str(x.shape));
    const std::size_t OH = (H + 2 * pad - KH) / stride + 1;
    const std::size_t OW = (W + 2 * pad - KW) / stride + 1;
    Tensor<S> y({N, OC, OH, OW});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t oc = 0; oc < OC; ++oc)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    S acc = bias ? bias[oc] : S(0);
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t kh = 0; kh < KH; ++kh) {
                            const std::ptrdiff_t ih =
                                static_cast<std::ptrdiff_t>(oh * stride + kh) -
                                static_cast<std::ptrdiff_t>(pad);
                            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (std::size_t kw = 0; kw < KW; ++kw) {
                                const std::ptrdiff_t iw =
                                    static_cast<std::ptrdiff_t>(ow * stride + kw) -
                                    static_cast<std::ptrdiff_t>(pad);
                                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                                acc += x.at4(n, c, static_cast<std::size_t>(ih),
                                             static_cast<std::size_t>(iw)) *
                                       w.at4(oc, c, kh, kw);
                            }
                        }
                    y.at4(n, oc, oh, ow) = acc;
                }
    return y;
}

template <typename S>
Tensor<S> conv2d_raw_bwd_input(const Tensor<S>& gy, const Tensor<S>& w, std::size_t H,
                               std::size_t W, std::size_t stride, std::size_t pad) {
    const std::size_t N = gy.shape[0], OC = gy.shape[1], OH = gy.shape[2], OW = gy.shape[3];
    const std::size_t C = w.shape[1], KH = w.shape[2], KW = w.shape[3];
    Tensor<S> gx({N, C, H, W});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t oc = 0; oc < OC; ++oc)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    const S g = gy.at4(n, oc, oh, ow);
                    if (g == S(0)) continue;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t kh = 0; kh < KH; ++kh) {
                            const std::ptrdiff_t ih =
                                static_cast<std::ptrdiff_t>(oh * stride + kh) -
                                static_cast<std::ptrdiff_t>(pad);
                            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (std::size_t kw = 0; kw < KW; ++kw) {
                                const std::ptrdiff_t iw =
                                    static_cast<std::ptrdiff_t>(ow * stride + kw) -
                                    static_cast<std::ptrdiff_t>(pad);
                                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                                gx.at4(n, c, static_cast<std::size_t>(ih),
                                       static_cast<std::size_t>(iw)) += g * w.at4(oc, c, kh, kw);
                            }
                        }
                }
    return gx;
}

template <typename S>
Tensor<S> conv2d_raw_bwd_weight(const Tensor<S>& x, const Tensor<S>& gy, std::size_t KH,
                                std::size_t KW, std::size_t stride, std::size_t pad) {
    const std::size_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const std::size_t OC = gy.shape[1], OH = gy.shape[2], OW = gy.shape[3];
    Tensor<S> gw({OC, C, KH, KW});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t oc = 0; oc < OC; ++oc)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    const S g = gy.at4(n, oc, oh, ow);
                    if (g == S(0)) continue;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t kh = 0; kh < KH; ++kh) {
                            const std::ptrdiff_t ih =
                                static_cast<std::ptrdiff_t>(oh * stride + kh) -
                                static_cast<std::ptrdiff_t>(pad);
                            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (std::size_t kw = 0; kw < KW; ++kw) {
                                const std::ptrdiff_t iw =
                                    static_cast<std::ptrdiff_t>(ow * stride + kw) -
                                    static_cast<std::ptrdiff_t>(pad);
                                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                                gw.at4(oc, c, kh, kw) +=
                                    g * x.at4(n, c, static_cast<std::size_t>(ih),
                                              static_cast<std::size_t>(iw));
                            }
                        }
                }
    return gw;
}

// ---------------------------------------------------------------------------
// Graph ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0])
        throw ShapeError("matmul: shape mismatch " + shape_str(av.shape) + " vs " +
                         shape_str(bv.shape));
    const std::size_t n = av.shape[0], k = av.shape[1], m = bv.shape[1];
    Tensor<S> y({n, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const S aip = av.at2(i, p);
            if (aip == S(0)) continue;
            for (std::size_t j = 0; j < m; ++j) y.at2(i, j) += aip * bv.at2(p, j);
        }
    auto bw = [n, k, m](Node<S>& self) {
        Node<S>& pa = *self.parents[0];
        Node<S>& pb = *self.parents[1];
        const Tensor<S>& g = self.grad;
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    const S gij = g.at2(i, j);
                    if (gij == S(0)) continue;
                    for (std::size_t p = 0; p < k; ++p)
                        pa.grad.at2(i, p) += gij * pb.value.at2(p, j);
                }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const S aip = pa.value.at2(i, p);
                    if (aip == S(0)) continue;
                    for (std::size_t j = 0; j < m; ++j)
                        pb.grad.at2(p, j) += aip * g.at2(i, j);
                }
        }
    };
    return make_op_node<S>(std::move(y), {a, b}, bw, "matmul");
}

// y = x W + b with x (N,I), W (I,O), b (O).
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& b) {
    const auto& xv = x.value();
    const auto& wv = w.value();
    const auto& bv = b.value();
    if (xv.rank() != 2 || wv.rank() != 2 || xv.shape[1] != wv.shape[0])
        throw ShapeError("linear: shape mismatch " + shape_str(xv.shape) + " vs " +
                         shape_str(wv.shape));
    if (bv.rank() != 1 || bv.shape[0] != wv.shape[1])
        throw ShapeError("linear: bias " + shape_str(bv.shape) + " vs weight " +
                         shape_str(wv.shape));
    const std::size_t n = xv.shape[0], in = xv.shape[1], out = wv.shape[1];
    Tensor<S> y({n, out});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < out; ++j) y.at2(i, j) = bv[j];
        for (std::size_t p = 0; p < in; ++p) {
            const S xip = xv.at2(i, p);
            if (xip == S(0)) continue;
            for (std::size_t j = 0; j < out; ++j) y.at2(i, j) += xip * wv.at2(p, j);
        }
    }
    auto bw = [n, in, out](Node<S>& self) {
        Node<S>& px = *self.parents[0];
        Node<S>& pw = *self.parents[1];
        Node<S>& pb = *self.parents[2];
        const Tensor<S>& g = self.grad;
        if (px.requires_grad) {
            px.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < out; ++j) {
                    const S gij = g.at2(i, j);
                    if (gij == S(0)) continue;
                    for (std::size_t p = 0; p < in; ++p)
                        px.grad.at2(i, p) += gij * pw.value.at2(p, j);
                }
        }
        if (pw.requires_grad) {
            pw.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < in; ++p) {
                    const S xip = px.value.at2(i, p);
                    if (xip == S(0)) continue;
                    for (std::size_t j = 0; j < out; ++j)
                        pw.grad.at2(p, j) += xip * g.at2(i, j);
                }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < out; ++j) pb.grad[j] += g.at2(i, j);
        }
    };
    return make_op_node<S>(std::move(y), {x, w, b}, bw, "linear");
}

template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, std::size_t stride,
              std::size_t pad) {
    if (x.value().rank() != 4 || w.value().rank() != 4)
        throw ShapeError("conv2d: expects 4D input/weight, got " + shape_str(x.shape()) + " and " +
                         shape_str(w.value().shape));
    if (b.value().rank() != 1 || b.value().shape[0] != w.value().shape[0])
        throw ShapeError("conv2d: bias " + shape_str(b.value().shape) + " vs weight " +
                         shape_str(w.value().shape));
    Tensor<S> y = conv2d_raw(x.value(), w.value(), b.value().data.data(), stride, pad);
    const std::size_t H = x.value().shape[2], W = x.value().shape[3];
    const std::size_t KH = w.value().shape[2], KW = w.value().shape[3];
    auto bw = [H, W, KH, KW, stride, pad](Node<S>& self) {
        Node<S>& px = *self.parents[0];
        Node<S>& pw = *self.parents[1];
        Node<S>& pb = *self.parents[2];
        const Tensor<S>& g = self.grad;
        if (px.requires_grad)
            accumulate_grad(px, conv2d_raw_bwd_input(g, pw.value, H, W, stride, pad));
        if (pw.requires_grad)
            accumulate_grad(pw, conv2d_raw_bwd_weight(px.value, g, KH, KW, stride, pad));
        if (pb.requires_grad) {
            pb.ensure_grad();
            const std::size_t N = g.shape[0], OC = g.shape[1], sp = g.shape[2] * g.shape[3];
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t oc = 0; oc < OC; ++oc) {
                    S acc = S(0);
                    const S* base = g.data.data() + (n * OC + oc) * sp;
                    for (std::size_t i = 0; i < sp; ++i) acc += base[i];
                    pb.grad[oc] += acc;
                }
        }
    };
    return make_op_node<S>(std::move(y), {x, w, b}, bw, "conv2d");
}

// Transposed convolution; weight layout (IC, OC, KH, KW) so that deconv2d is
// the exact adjoint of conv2d with the same geometry.
template <typename S>
Var<S> deconv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, std::size_t stride,
                std::size_t pad) {
    const auto& xv = x.value();
    const auto& wv = w.value();
    if (xv.rank() != 4 || wv.rank() != 4 || xv.shape[1] != wv.shape[0])
        throw ShapeError("deconv2d: shape mismatch " + shape_str(xv.shape) + " vs weight " +
                         shape_str(wv.shape));
    const std::size_t OC = wv.shape[1], KH = wv.shape[2], KW = wv.shape[3];
    if (b.value().rank() != 1 || b.value().shape[0] != OC)
        throw ShapeError("deconv2d: bias " + shape_str(b.value().shape) + " vs weight " +
                         shape_str(wv.shape));
    const std::size_t H = (xv.shape[2] - 1) * stride + KH;
    const std::size_t W = (xv.shape[3] - 1) * stride + KW;
    if (H < 2 * pad + 1 || W < 2 * pad + 1)
        throw ShapeError("deconv2d: padding too large for output " + shape_str(xv.shape));
    const std::size_t OH = H - 2 * pad, OW = W - 2 * pad;

    // The (IC, OC, KH, KW) deconv weight is exactly the weight of the
    // underlying conv mapping z (N,OC,OH,OW) -> x (N,IC,...).
    Tensor<S> y = conv2d_raw_bwd_input(xv, wv, OH, OW, stride, pad);
    for (std::size_t n = 0; n < y.shape[0]; ++n)
        for (std::size_t oc = 0; oc < OC; ++oc) {
            S* base = y.data.data() + (n * OC + oc) * OH * OW;
            const S bias = b.value()[oc];
            for (std::size_t i = 0; i < OH * OW; ++i) base[i] += bias;
        }
    auto bw = [KH, KW, stride, pad](Node<S>& self) {
        Node<S>& px = *self.parents[0];
        Node<S>& pw = *self.parents[1];
        Node<S>& pb = *self.parents[2];
        const Tensor<S>& g = self.grad;
        if (px.requires_grad)
            accumulate_grad(px, conv2d_raw(g, pw.value, static_cast<const S*>(nullptr), stride, pad));
        if (pw.requires_grad)
            accumulate_grad(pw, conv2d_raw_bwd_weight(g, px.value, KH, KW, stride, pad));
        if (pb.requires_grad) {
            pb.ensure_grad();
            const std::size_t N = g.shape[0], OC2 = g.shape[1], sp = g.shape[2] * g.shape[3];
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t oc = 0; oc < OC2; ++oc) {
                    S acc = S(0);
                    const S* base = g.data.data() + (n * OC2 + oc) * sp;
                    for (std::size_t i = 0; i < sp; ++i) acc += base[i];
                    pb.grad[oc] += acc;
                }
        }
    };
    return make_op_node<S>(std::move(y), {x, w, b}, bw, "deconv2d");
}

template <typename S>
Var<S> relu(const Var<S>& x) {
    Tensor<S> y = x.value();
    for (S& v : y.data) v = v > S(0) ? v : S(0);
    auto bw = [](Node<S>& self) {
        Node<S>& px = *self.parents[0];
        if (!px.requires_grad) return;
        px.ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i)
            if (px.value.data[i] > S(0)) px.grad.data[i] += self.grad.data[i];
    };
    return make_op_node<S>(std::move(y), {x}, bw, "relu");
}

template <typename S>
Var<S> maxpool2d(const Var<S>& x, std::size_t k, std::size_t stride) {
    const auto& xv = x.value();
    if (xv.rank() != 4 || xv.shape[2] < k || xv.shape[3] < k)
        throw ShapeError("maxpool2d: window " + std::to_string(k) + " vs input " +
                         shape_str(xv.shape));
    const std::size_t N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
    const std::size_t OH = (H - k) / stride + 1, OW = (W - k) / stride + 1;
    Tensor<S> y({N, C, OH, OW});
    std::vector<std::size_t> argmax(y.numel());
    std::size_t oi = 0;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow, ++oi) {
                    S best = -std::numeric_limits<S>::infinity();
                    std::size_t best_idx = 0;
                    for (std::size_t kh = 0; kh < k; ++kh)
                        for (std::size_t kw = 0; kw < k; ++kw) {
                            const std::size_t ih = oh * stride + kh, iw = ow * stride + kw;
                            const std::size_t idx = ((n * C + c) * H + ih) * W + iw;
                            if (xv.data[idx] > best) {
                                best = xv.data[idx];
                                best_idx = idx;
                            }
                        }
                    y.data[oi] = best;
                    argmax[oi] = best_idx;
                }
    auto bw = [argmax](Node<S>& self) {
        Node<S>& px = *self.parents[0];
        if (!px.requires_grad) return;
        px.ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i)
            px.grad.data[argmax[i]] += self.grad.data[i];
    };
    return make_op_node<S>(std::move(y), {x}, bw, "maxpool2d");
}

template <typename S>
Var<S> avgpool2d(const Var<S>& x, std::size_t k, std::size_t stride) {
    const auto& xv = x.value();
    if (xv.rank() != 4 || xv.shape[2] < k || xv.shape[3] < k)
        throw ShapeError("avgpool2d: window " + std::to_string(k) + " vs input " +
                         shape_str(xv.shape));
    const std::size_t N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
    const std::size_t OH = (H - k) / stride + 1, OW = (W - k) / stride + 1;
    const S inv = S(1) / static_cast<S>(k * k);
    Tensor<S> y({N, C, OH, OW});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    S acc = S(0);
                    for (std::size_t kh = 0; kh < k; ++kh)
                        for (std::size_t kw = 0; kw < k; ++kw)
                            acc += xv.at4(n, c, oh * stride + kh, ow * stride + kw);
                    y.at4(n, c, oh, ow) = acc * inv;
                }
    auto bw = [k, stride, inv, H, W](Node<S>& self) {
        Node<S>& px = *self.parents[0];
        if (!px.requires_grad) return;
        px.ensure_grad();
        const std::size_t N = self.grad.shape[0], C = self.grad.shape[1],
                          OH = self.grad.shape[2], OW = self.grad.shape[3];
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t oh = 0; oh < OH; ++oh)
                    for (std::size_t ow = 0; ow < OW; ++ow) {
                        const S g = self.grad.at4(n, c, oh, ow) * inv;
                        for (std::size_t kh = 0; kh < k; ++kh)
                            for (std::size_t kw = 0; kw < k; ++kw)
                                px.grad.data[((n * C + c) * H + oh * stride + kh) * W + ow * stride +
                                             kw] += g;
                    }
    };
    return make_op_node<S>(std::move(y), {x}, bw, "avgpool2d");
}

// (N,C,H,W) -> (N,C) spatial mean.
template <typename S>
Var<S> global_avg_pool(const Var<S>& x) {
    const auto& xv = x.value();
    if (xv.rank() != 4)
        throw ShapeError("global_avg_pool: expects 4D input, got " + shape_str(xv.shape));
    const std::size_t N = xv.shape[0], C = xv.shape[1], sp = xv.shape[2] * xv.shape[3];
    const S inv = S(1) / static_cast<S>(sp);
    Tensor<S> y({N, C});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            S acc = S(0);
            const S* base = xv.data.data() + (n * C + c) * sp;
            for (std::size_t i = 0; i < sp; ++i) acc += base[i];
            y.at2(n, c) = acc * inv;
        }
    auto bw = [sp, inv](Node<S>& self) {
        Node<S>& px = *self.parents[0];
        if (!px.requires_grad) return;
        px.ensure_grad();
        const std::size_t N = self.grad.shape[0], C = self.grad.shape[1];
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
                const S g = self.grad.at2(n, c) * inv;
                S* base = px.grad.data.data() + (n * C + c) * sp;
                for (std::size_t i = 0; i < sp; ++i) base[i] += g;
            }
    };
    return make_op_node<S>(std::move(y), {x}, bw, "global_avg_pool");
}

// Concatenate along axis 1 (channels / feature dim) for rank-2 or rank-4 inputs.
template <typename S>
Var<S> concat(const std::vector<Var<S>>& xs) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    const std::size_t rank = xs[0].value().rank();
    if (rank != 2 && rank != 4) throw ShapeError("concat: supports rank 2 or 4 inputs");
    Shape out = xs[0].value().shape;
    std::size_t total_c = 0;
    for (const auto& v : xs) {
        const auto& s = v.value().shape;
        if (s.size() != rank || s[0] != out[0] ||
            (rank == 4 && (s[2] != out[2] || s[3] != out[3])))
            throw ShapeError("concat: shape mismatch " + shape_str(out) + " vs " + shape_str(s));
        total_c += s[1];
    }
    out[1] = total_c;
    const std::size_t N = out[0];
    const std::size_t sp = rank == 4 ? out[2] * out[3] : 1;
    Tensor<S> y(out);
    std::vector<std::size_t> channels;
    for (const auto& v : xs) channels.push_back(v.value().shape[1]);
    for (std::size_t n = 0; n < N; ++n) {
        std::size_t coff = 0;
        for (std::size_t k = 0; k < xs.size(); ++k) {
            const auto& xv = xs[k].value();
            const std::size_t ck = channels[k];
            std::copy(xv.data.begin() + n * ck * sp, xv.data.begin() + (n + 1) * ck * sp,
                      y.data.begin() + (n * total_c + coff) * sp);
            coff += ck;
        }
    }
    auto bw = [channels, total_c, sp, N](Node<S>& self) {
        std::size_t coff = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            Node<S>& p = *self.parents[k];
            const std::size_t ck = channels[k];
            if (p.requires_grad) {
                p.ensure_grad();
                for (std::size_t n = 0; n < N; ++n) {
                    const S* src = self.grad.data.data() + (n * total_c + coff) * sp;
                    S* dst = p.grad.data.data() + n * ck * sp;
                    for (std::size_t i = 0; i < ck * sp; ++i) dst[i] += src[i];
                }
            }
            coff += ck;
        }
    };
    return make_op_node<S>(std::move(y), xs, bw, "concat");
}

template <typename S>
Var<S> reshape(const Var<S>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.value().numel())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(new_shape) +
                         " changes element count");
    Tensor<S> y(new_shape, x.value().data);
    auto bw = [](Node<S>& self) {
        Node<S>& px = *self.parents[0];
        if (!px.requires_grad) return;
        px.ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i)
            px.grad.data[i] += self.grad.data[i];
    };
    return make_op_node<S>(std::move(y), {x}, bw, "reshape");
}

// Nearest-neighbour 2x spatial upsampling.
template <typename S>
Var<S> upsample_nearest2x(const Var<S>& x) {
    const auto& xv = x.value();
    if (xv.rank() != 4)
        throw ShapeError("upsample_nearest2x: expects 4D input, got " + shape_str(xv.shape));
    const std::size_t N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
    Tensor<S> y({N, C, 2 * H, 2 * W});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t w = 0; w < W; ++w) {
                    const S v = xv.at4(n, c, h, w);
                    y.at4(n, c, 2 * h, 2 * w) = v;
                    y.at4(n, c, 2 * h, 2 * w + 1) = v;
                    y.at4(n, c, 2 * h + 1, 2 * w) = v;
                    y.at4(n, c, 2 * h + 1, 2 * w + 1) = v;
                }
    auto bw = [N, C, H, W](Node<S>& self) {
        Node<S>& px = *self.parents[0];
        if (!px.requires_grad) return;
        px.ensure_grad();
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t h = 0; h < H; ++h)
                    for (std::size_t w = 0; w < W; ++w)
                        px.grad.at4(n, c, h, w) += self.grad.at4(n, c, 2 * h, 2 * w) +
                                                   self.grad.at4(n, c, 2 * h, 2 * w + 1) +
                                                   self.grad.at4(n, c, 2 * h + 1, 2 * w) +
                                                   self.grad.at4(n, c, 2 * h + 1, 2 * w + 1);
    };
    return make_op_node<S>(std::move(y), {x}, bw, "upsample_nearest2x");
}

// Row-wise L2 normalization of (N,D); rejects degenerate rows.
template <typename S>
Var<S> l2_normalize_rows(const Var<S>& x) {
    const auto& xv = x.value();
    if (xv.rank() != 2)
        throw ShapeError("l2_normalize_rows: expects 2D input, got " + shape_str(xv.shape));
    const std::size_t N = xv.shape[0], D = xv.shape[1];
    Tensor<S> y({N, D});
    std::vector<S> norms(N);
    for (std::size_t i = 0; i < N; ++i) {
        S acc = S(0);
        for (std::size_t j = 0; j < D; ++j) acc += xv.at2(i, j) * xv.at2(i, j);
        const S nrm = std::sqrt(acc);
        if (!(nrm > S(1e-12)))
            throw NumericError("l2_normalize_rows: degenerate (near-zero) row " +
                               std::to_string(i));
        norms[i] = nrm;
        for (std::size_t j = 0; j < D; ++j) y.at2(i, j) = xv.at2(i, j) / nrm;
    }
    auto bw = [norms, N, D](Node<S>& self) {
        Node<S>& px = *self.parents[0];
        if (!px.requires_grad) return;
        px.ensure_grad();
        for (std::size_t i = 0; i < N; ++i) {
            S dot = S(0);
            for (std::size_t j = 0; j < D; ++j) dot += self.grad.at2(i, j) * self.value.at2(i, j);
            for (std::size_t j = 0; j < D; ++j)
                px.grad.at2(i, j) +=
                    (self.grad.at2(i, j) - self.value.at2(i, j) * dot) / norms[i];
        }
    };
    return make_op_node<S>(std::move(y), {x}, bw, "l2_normalize_rows");
}

// Mean softmax cross-entropy over the batch; logits (N,C), integer labels.
template <typename S>
Var<S> softmax_cross_entropy(const Var<S>& logits, const std::vector<int>& labels) {
    const auto& zv = logits.value();
    if (zv.rank() != 2 || zv.shape[0] != labels.size())
        throw ShapeError("softmax_cross_entropy: logits " + shape_str(zv.shape) + " vs " +
                         std::to_string(labels.size()) + " labels");
    const std::size_t N = zv.shape[0], C = zv.shape[1];
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= C)
            throw ValidationError("softmax_cross_entropy: label " + std::to_string(l) +
                                  " out of range [0," + std::to_string(C) + ")");
    Tensor<S> probs({N, C});
    S total = S(0);
    for (std::size_t i = 0; i < N; ++i) {
        S mx = zv.at2(i, 0);
        for (std::size_t j = 1; j < C; ++j) mx = std::max(mx, zv.at2(i, j));
        S denom = S(0);
        for (std::size_t j = 0; j < C; ++j) {
            const S e = std::exp(zv.at2(i, j) - mx);
            probs.at2(i, j) = e;
            denom += e;
        }
        for (std::size_t j = 0; j < C; ++j) probs.at2(i, j) /= denom;
        total -= std::log(probs.at2(i, static_cast<std::size_t>(labels[i])));
    }
    Tensor<S> y = Tensor<S>::scalar(total / static_cast<S>(N));
    auto bw = [probs, labels, N, C](Node<S>& self) {
        Node<S>& pz = *self.parents[0];
        if (!pz.requires_grad) return;
        pz.ensure_grad();
        const S g = self.grad.data[0] / static_cast<S>(N);
        for (std::size_t i = 0; i < N; ++i)
            for (std::size_t j = 0; j < C; ++j) {
                S d = probs.at2(i, j);
                if (j == static_cast<std::size_t>(labels[i])) d -= S(1);
                pz.grad.at2(i, j) += g * d;
            }
    };
    return make_op_node<S>(std::move(y), {logits}, bw, "softmax_cross_entropy");
}

// Mean squared error over all elements.
template <typename S>
Var<S> mse(const Var<S>& a, const Var<S>& b) {
    require_same_shape("mse", a.value(), b.value());
    const std::size_t n = a.value().numel();
    S acc = S(0);
    for (std::size_t i = 0; i < n; ++i) {
        const S d = a.value().data[i] - b.value().data[i];
        acc += d * d;
    }
    Tensor<S> y = Tensor<S>::scalar(acc / static_cast<S>(n));
    auto bw = [n](Node<S>& self) {
        Node<S>& pa = *self.parents[0];
        Node<S>& pb = *self.parents[1];
        const S g = self.grad.data[0] * S(2) / static_cast<S>(n);
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                pa.grad.data[i] += g * (pa.value.data[i] - pb.value.data[i]);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                pb.grad.data[i] -= g * (pa.value.data[i] - pb.value.data[i]);
        }
    };
    return make_op_node<S>(std::move(y), {a, b}, bw, "mse");
}

// Per-sample sum of squared differences, averaged over the leading (batch) axis.
template <typename S>
Var<S> squared_distance_batch_mean(const Var<S>& a, const Var<S>& b) {
    require_same_shape("squared_distance_batch_mean", a.value(), b.value());
    const std::size_t n = a.value().numel();
    const std::size_t batch = a.value().shape.empty() ? 1 : a.value().shape[0];
    S acc = S(0);
    for (std::size_t i = 0; i < n; ++i) {
        const S d = a.value().data[i] - b.value().data[i];
        acc += d * d;
    }
    Tensor<S> y = Tensor<S>::scalar(acc / static_cast<S>(batch));
    auto bw = [n, batch](Node<S>& self) {
        Node<S>& pa = *self.parents[0];
        Node<S>& pb = *self.parents[1];
        const S g = self.grad.data[0] * S(2) / static_cast<S>(batch);
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                pa.grad.data[i] += g * (pa.value.data[i] - pb.value.data[i]);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n; ++i)
                pb.grad.data[i] -= g * (pa.value.data[i] - pb.value.data[i]);
        }
    };
    return make_op_node<S>(std::move(y), {a, b}, bw, "squared_distance_batch_mean");
}

// Weighted sum of scalar terms; the composite-loss combiner.
template <typename S>
Var<S> weighted_sum(const std::vector<Var<S>>& terms, const std::vector<S>& coeffs) {
    if (terms.empty() || terms.size() != coeffs.size())
        throw ShapeError("weighted_sum: " + std::to_string(terms.size()) + " terms vs " +
                         std::to_string(coeffs.size()) + " coefficients");
    S acc = S(0);
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (terms[i].value().numel() != 1)
            throw ShapeError("weighted_sum: term " + std::to_string(i) + " is not scalar: " +
                             shape_str(terms[i].shape()));
        acc += coeffs[i] * terms[i].value().data[0];
    }
    auto bw = [coeffs](Node<S>& self) {
        const S g = self.grad.data[0];
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
            Node<S>& p = *self.parents[i];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            p.grad.data[0] += g * coeffs[i];
        }
    };
    return make_op_node<S>(Tensor<S>::scalar(acc), terms, bw, "weighted_sum");
}

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
    require_same_shape("add", a.value(), b.value());
    Tensor<S> y = a.value();
    for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] += b.value().data[i];
    auto bw = [](Node<S>& self) {
        for (auto& pp : self.parents) accumulate_grad(*pp, self.grad);
    };
    return make_op_node<S>(std::move(y), {a, b}, bw, "add");
}

template <typename S>
Var<S> scale(const Var<S>& x, S c) {
    Tensor<S> y = x.value();
    for (S& v : y.data) v *= c;
    auto bw = [c](Node<S>& self) {
        Node<S>& px = *self.parents[0];
        if (!px.requires_grad) return;
        px.ensure_grad();
        for (std::size_t i = 0; i < self.grad.numel(); ++i)
            px.grad.data[i] += c * self.grad.data[i];
    };
    return make_op_node<S>(std::move(y), {x}, bw, "scale");
}

// Cuts the input out of the gradient graph (fresh constant with copied data).
template <typename S>
Var<S> detach(const Var<S>& x) {
    return make_constant<S>(x.value(), "detach");
}

} // namespace ops

// He-normal initializer for ReLU stacks.
template <typename S>
Tensor<S> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor<S> t(std::move(shape));
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (S& v : t.data) v = static_cast<S>(rng.normal(0.0, sd));
    return t;
}

} // namespace c2fs
