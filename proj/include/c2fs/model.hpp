#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "c2fs/autodiff.hpp"
#include "c2fs/error.hpp"
#include "c2fs/ops.hpp"
#include "c2fs/optim.hpp"
#include "c2fs/rng.hpp"
#include "c2fs/tensor.hpp"

namespace c2fs {

// Four-stage encoder with an embedding head (f^q = linear(GAP(f^(4)))), a
// 3-layer MLP projector, an EMA momentum twin of both, a linear coarse
// classifier on the projector output, a multi-layer fusion decoder and
// rescale adapters for the alignment loss. Vector inputs use dense stages and
// dense rescale maps; image inputs use stride-2 convolutions.
struct EncoderConfig {
    Shape input_shape;                                    // (D) or (C,H,W)
    std::array<std::size_t, 4> stage_channels{64, 64, 48, 32};
    std::size_t embedding_dim = 16;
    std::size_t projector_hidden = 0; // 0 -> embedding_dim
    std::size_t projector_dim = 16;
    std::size_t decoder_width = 32;
    // Self-distillation mode for the alignment loss: the stage features act
    // as frozen teachers (detached, with frozen R_2/R_3 heads) and gradients
    // flow only through the embedding branch. Default: both branches train.
    bool align_detach = false;

    bool vector_mode() const { return input_shape.size() == 1; }
    std::size_t proj_hidden() const {
        return projector_hidden ? projector_hidden : embedding_dim;
    }

    void validate() const {
        if (input_shape.size() != 1 && input_shape.size() != 3)
            throw ConfigError("model: input_shape must be (D) or (C,H,W)");
        for (std::size_t c : stage_channels)
            if (c == 0) throw ConfigError("model: stage_channels must be positive");
        if (embedding_dim == 0 || projector_dim == 0 || decoder_width == 0)
            throw ConfigError("model: embedding/projector/decoder dims must be positive");
        if (!vector_mode()) {
            if (input_shape[1] % 16 != 0 || input_shape[2] % 16 != 0 || input_shape[1] == 0)
                throw ConfigError("model: image height/width must be positive multiples of 16");
        }
    }

    // Spatial size of stage i (1-based) for square-halving stages.
    std::size_t stage_hw(std::size_t i, std::size_t axis) const {
        std::size_t v = input_shape[1 + axis];
        for (std::size_t s = 0; s < i; ++s) v = (v - 1) / 2 + 1;
        return v;
    }
};

template <typename S>
struct LinearLayer {
    Var<S> w, b;
};

template <typename S>
struct ConvLayer {
    Var<S> w, b;
    std::size_t stride = 1, pad = 0;
};

template <typename S>
struct FeaturePack {
    Var<S> input;
    std::array<Var<S>, 4> stages; // f^(1)..f^(4)
    Var<S> fq;                    // embedding, (N,d)
    Var<S> projected;             // P(fq), (N,projector_dim)
};

template <typename S>
struct ModelBundle {
    EncoderConfig cfg;
    int coarse_count = 0;
    double ema_coeff = 0.999;

    // main branch
    std::vector<ConvLayer<S>> enc_conv;   // image stages
    std::vector<LinearLayer<S>> enc_fc;   // vector stages
    LinearLayer<S> embed;
    LinearLayer<S> proj1, proj2, proj3;

    // momentum twin (EMA only, never receives gradients)
    std::vector<ConvLayer<S>> m_enc_conv;
    std::vector<LinearLayer<S>> m_enc_fc;
    LinearLayer<S> m_embed;
    LinearLayer<S> m_proj1, m_proj2, m_proj3;

    LinearLayer<S> cls; // coarse classifier on projector output

    // decoder (image)
    ConvLayer<S> dec_q;                  // deconv fq -> (dw, h4, w4)
    std::array<ConvLayer<S>, 4> dec_fuse; // 3x3 convs, deep (index 3) to shallow (0)
    ConvLayer<S> dec_out;                // deconv to input resolution
    // decoder (vector): same cascade with dense fuse layers
    LinearLayer<S> vdec_q;
    std::array<LinearLayer<S>, 4> vdec_fuse;
    LinearLayer<S> vdec_out;

    // rescale adapters (R_4 is the identity)
    ConvLayer<S> r2, r3, rq;
    LinearLayer<S> vr2, vr3, vrq;

    std::vector<Var<S>> trainable; // optimizer + checkpoint order
    std::vector<Var<S>> momentum;  // m_* parameters, checkpointed too
    std::vector<Var<S>> ema_src;   // trainable params mirrored by `momentum`

    std::vector<Var<S>> all_params() const {
        std::vector<Var<S>> out = trainable;
        out.insert(out.end(), momentum.begin(), momentum.end());
        return out;
    }

    std::size_t trainable_param_count() const {
        std::size_t n = 0;
        for (const auto& p : trainable) n += p.value().numel();
        return n;
    }
};

namespace detail {

template <typename S>
LinearLayer<S> make_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    LinearLayer<S> l;
    l.w = make_parameter<S>(he_normal<S>({in, out}, in, rng), name + ".w");
    l.b = make_parameter<S>(Tensor<S>::zeros({out}), name + ".b");
    return l;
}

template <typename S>
ConvLayer<S> make_conv(const std::string& name, std::size_t oc, std::size_t ic, std::size_t kh,
                       std::size_t kw, std::size_t stride, std::size_t pad, Rng& rng) {
    ConvLayer<S> c;
    c.w = make_parameter<S>(he_normal<S>({oc, ic, kh, kw}, ic * kh * kw, rng), name + ".w");
    c.b = make_parameter<S>(Tensor<S>::zeros({oc}), name + ".b");
    c.stride = stride;
    c.pad = pad;
    return c;
}

// Deconv weight layout is (IC, OC, KH, KW); fan-in for init is IC*KH*KW.
template <typename S>
ConvLayer<S> make_deconv(const std::string& name, std::size_t ic, std::size_t oc, std::size_t kh,
                         std::size_t kw, std::size_t stride, std::size_t pad, Rng& rng) {
    ConvLayer<S> c;
    c.w = make_parameter<S>(he_normal<S>({ic, oc, kh, kw}, ic * kh * kw, rng), name + ".w");
    c.b = make_parameter<S>(Tensor<S>::zeros({oc}), name + ".b");
    c.stride = stride;
    c.pad = pad;
    return c;
}

template <typename S>
void push_layer(std::vector<Var<S>>& dst, const LinearLayer<S>& l) {
    dst.push_back(l.w);
    dst.push_back(l.b);
}

template <typename S>
void push_layer(std::vector<Var<S>>& dst, const ConvLayer<S>& l) {
    dst.push_back(l.w);
    dst.push_back(l.b);
}

template <typename S>
LinearLayer<S> frozen_copy(const LinearLayer<S>& src, const std::string& name) {
    LinearLayer<S> l;
    l.w = make_parameter<S>(src.w.value(), name + ".w");
    l.b = make_parameter<S>(src.b.value(), name + ".b");
    l.w.node()->requires_grad = false;
    l.b.node()->requires_grad = false;
    return l;
}

template <typename S>
ConvLayer<S> frozen_copy(const ConvLayer<S>& src, const std::string& name) {
    ConvLayer<S> c;
    c.w = make_parameter<S>(src.w.value(), name + ".w");
    c.b = make_parameter<S>(src.b.value(), name + ".b");
    c.w.node()->requires_grad = false;
    c.b.node()->requires_grad = false;
    c.stride = src.stride;
    c.pad = src.pad;
    return c;
}

} // namespace detail

template <typename S>
ModelBundle<S> make_model(const EncoderConfig& cfg, int coarse_count, double ema_coeff,
                          std::uint64_t seed) {
    cfg.validate();
    if (coarse_count <= 0) throw ConfigError("model: coarse_count must be positive");
    Rng rng(seed);
    ModelBundle<S> m;
    m.cfg = cfg;
    m.coarse_count = coarse_count;
    m.ema_coeff = ema_coeff;

    const auto& ch = cfg.stage_channels;
    if (cfg.vector_mode()) {
        std::size_t in = cfg.input_shape[0];
        for (std::size_t i = 0; i < 4; ++i) {
            m.enc_fc.push_back(
                detail::make_linear<S>("enc.s" + std::to_string(i + 1) + ".fc", in, ch[i], rng));
            in = ch[i];
        }
        m.embed = detail::make_linear<S>("enc.embed", ch[3], cfg.embedding_dim, rng);
    } else {
        std::size_t in = cfg.input_shape[0];
        for (std::size_t i = 0; i < 4; ++i) {
            m.enc_conv.push_back(detail::make_conv<S>("enc.s" + std::to_string(i + 1) + ".conv",
                                                      ch[i], in, 3, 3, 2, 1, rng));
            in = ch[i];
        }
        m.embed = detail::make_linear<S>("enc.embed", ch[3], cfg.embedding_dim, rng);
    }

    const std::size_t ph = cfg.proj_hidden();
    m.proj1 = detail::make_linear<S>("proj.fc1", cfg.embedding_dim, ph, rng);
    m.proj2 = detail::make_linear<S>("proj.fc2", ph, ph, rng);
    m.proj3 = detail::make_linear<S>("proj.fc3", ph, cfg.projector_dim, rng);

    m.cls = detail::make_linear<S>("cls", cfg.projector_dim, static_cast<std::size_t>(coarse_count),
                                   rng);

    const std::size_t dw = cfg.decoder_width;
    if (cfg.vector_mode()) {
        m.vdec_q = detail::make_linear<S>("dec.q", cfg.embedding_dim, dw, rng);
        m.vdec_fuse[3] = detail::make_linear<S>("dec.l4", ch[3] + dw, dw, rng);
        m.vdec_fuse[2] = detail::make_linear<S>("dec.l3", ch[2] + dw, dw, rng);
        m.vdec_fuse[1] = detail::make_linear<S>("dec.l2", ch[1] + dw, dw, rng);
        m.vdec_fuse[0] = detail::make_linear<S>("dec.l1", ch[0] + dw, dw, rng);
        m.vdec_out = detail::make_linear<S>("dec.out", dw, cfg.input_shape[0], rng);
        m.vr2 = detail::make_linear<S>("align.r2", ch[1], ch[3], rng);
        m.vr3 = detail::make_linear<S>("align.r3", ch[2], ch[3], rng);
        m.vrq = detail::make_linear<S>("align.rq", cfg.embedding_dim, ch[3], rng);
    } else {
        const std::size_t h4 = cfg.stage_hw(4, 0), w4 = cfg.stage_hw(4, 1);
        m.dec_q = detail::make_deconv<S>("dec.q", cfg.embedding_dim, dw, h4, w4, 1, 0, rng);
        m.dec_fuse[3] = detail::make_conv<S>("dec.l4", dw, ch[3] + dw, 3, 3, 1, 1, rng);
        m.dec_fuse[2] = detail::make_conv<S>("dec.l3", dw, ch[2] + dw, 3, 3, 1, 1, rng);
        m.dec_fuse[1] = detail::make_conv<S>("dec.l2", dw, ch[1] + dw, 3, 3, 1, 1, rng);
        m.dec_fuse[0] = detail::make_conv<S>("dec.l1", dw, ch[0] + dw, 3, 3, 1, 1, rng);
        m.dec_out = detail::make_deconv<S>("dec.out", dw, cfg.input_shape[0], 2, 2, 2, 0, rng);
        m.r2 = detail::make_conv<S>("align.r2", ch[3], ch[1], 4, 4, 4, 0, rng);
        m.r3 = detail::make_conv<S>("align.r3", ch[3], ch[2], 2, 2, 2, 0, rng);
        m.rq = detail::make_deconv<S>("align.rq", cfg.embedding_dim, ch[3], h4, w4, 1, 0, rng);
    }

    if (cfg.align_detach) {
        // Frozen teacher heads: the alignment targets cannot adapt toward the
        // embedding branch.
        auto freeze = [](Var<S>& v) {
            if (v.valid()) v.node()->requires_grad = false;
        };
        freeze(m.r2.w);
        freeze(m.r2.b);
        freeze(m.r3.w);
        freeze(m.r3.b);
        freeze(m.vr2.w);
        freeze(m.vr2.b);
        freeze(m.vr3.w);
        freeze(m.vr3.b);
    }

    // Momentum twin starts as an exact copy of E and P.
    for (std::size_t i = 0; i < m.enc_conv.size(); ++i)
        m.m_enc_conv.push_back(
            detail::frozen_copy(m.enc_conv[i], "m_enc.s" + std::to_string(i + 1) + ".conv"));
    for (std::size_t i = 0; i < m.enc_fc.size(); ++i)
        m.m_enc_fc.push_back(
            detail::frozen_copy(m.enc_fc[i], "m_enc.s" + std::to_string(i + 1) + ".fc"));
    m.m_embed = detail::frozen_copy(m.embed, "m_enc.embed");
    m.m_proj1 = detail::frozen_copy(m.proj1, "m_proj.fc1");
    m.m_proj2 = detail::frozen_copy(m.proj2, "m_proj.fc2");
    m.m_proj3 = detail::frozen_copy(m.proj3, "m_proj.fc3");

    // Stable parameter order: encoder, embed, projector, classifier, decoder,
    // adapters. ema_src mirrors the momentum list ordering exactly.
    for (const auto& l : m.enc_conv) detail::push_layer(m.trainable, l);
    for (const auto& l : m.enc_fc) detail::push_layer(m.trainable, l);
    detail::push_layer(m.trainable, m.embed);
    detail::push_layer(m.trainable, m.proj1);
    detail::push_layer(m.trainable, m.proj2);
    detail::push_layer(m.trainable, m.proj3);
    detail::push_layer(m.trainable, m.cls);
    if (cfg.vector_mode()) {
        detail::push_layer(m.trainable, m.vdec_q);
        for (int i = 3; i >= 0; --i)
            detail::push_layer(m.trainable, m.vdec_fuse[static_cast<std::size_t>(i)]);
        detail::push_layer(m.trainable, m.vdec_out);
        detail::push_layer(m.trainable, m.vr2);
        detail::push_layer(m.trainable, m.vr3);
        detail::push_layer(m.trainable, m.vrq);
    } else {
        detail::push_layer(m.trainable, m.dec_q);
        for (int i = 3; i >= 0; --i) detail::push_layer(m.trainable, m.dec_fuse[static_cast<std::size_t>(i)]);
        detail::push_layer(m.trainable, m.dec_out);
        detail::push_layer(m.trainable, m.r2);
        detail::push_layer(m.trainable, m.r3);
        detail::push_layer(m.trainable, m.rq);
    }

    for (const auto& l : m.m_enc_conv) detail::push_layer(m.momentum, l);
    for (const auto& l : m.m_enc_fc) detail::push_layer(m.momentum, l);
    detail::push_layer(m.momentum, m.m_embed);
    detail::push_layer(m.momentum, m.m_proj1);
    detail::push_layer(m.momentum, m.m_proj2);
    detail::push_layer(m.momentum, m.m_proj3);

    for (const auto& l : m.enc_conv) detail::push_layer(m.ema_src, l);
    for (const auto& l : m.enc_fc) detail::push_layer(m.ema_src, l);
    detail::push_layer(m.ema_src, m.embed);
    detail::push_layer(m.ema_src, m.proj1);
    detail::push_layer(m.ema_src, m.proj2);
    detail::push_layer(m.ema_src, m.proj3);

    return m;
}

// Applies E (or E_m) and P (or P_m) to a batch; returns all stage features,
// the embedding and the projection. Pure: identical parameters and input give
// bit-identical outputs.
template <typename S>
FeaturePack<S> encode(const ModelBundle<S>& m, const Tensor<S>& batch,
                      bool momentum_branch = false) {
    const bool vec = m.cfg.vector_mode();
    if (vec) {
        if (batch.rank() != 2 || batch.shape[1] != m.cfg.input_shape[0])
            throw ShapeError("encode: batch " + shape_str(batch.shape) + " vs input shape " +
                             shape_str(m.cfg.input_shape));
    } else {
        if (batch.rank() != 4 || batch.shape[1] != m.cfg.input_shape[0] ||
            batch.shape[2] != m.cfg.input_shape[1] || batch.shape[3] != m.cfg.input_shape[2])
            throw ShapeError("encode: batch " + shape_str(batch.shape) + " vs input shape " +
                             shape_str(m.cfg.input_shape));
    }

    FeaturePack<S> pack;
    pack.input = make_constant<S>(batch, "input");
    Var<S> f = pack.input;
    if (vec) {
        const auto& stages = momentum_branch ? m.m_enc_fc : m.enc_fc;
        for (std::size_t i = 0; i < 4; ++i) {
            f = ops::relu(ops::linear(f, stages[i].w, stages[i].b));
            pack.stages[i] = f;
        }
        const auto& emb = momentum_branch ? m.m_embed : m.embed;
        pack.fq = ops::linear(f, emb.w, emb.b);
    } else {
        const auto& stages = momentum_branch ? m.m_enc_conv : m.enc_conv;
        for (std::size_t i = 0; i < 4; ++i) {
            f = ops::relu(ops::conv2d(f, stages[i].w, stages[i].b, stages[i].stride,
                                      stages[i].pad));
            pack.stages[i] = f;
        }
        const auto& emb = momentum_branch ? m.m_embed : m.embed;
        pack.fq = ops::linear(ops::global_avg_pool(f), emb.w, emb.b);
    }

    const auto& p1 = momentum_branch ? m.m_proj1 : m.proj1;
    const auto& p2 = momentum_branch ? m.m_proj2 : m.proj2;
    const auto& p3 = momentum_branch ? m.m_proj3 : m.proj3;
    Var<S> h = ops::relu(ops::linear(pack.fq, p1.w, p1.b));
    h = ops::relu(ops::linear(h, p2.w, p2.b));
    pack.projected = ops::linear(h, p3.w, p3.b);
    return pack;
}

template <typename S>
Var<S> coarse_logits(const ModelBundle<S>& m, const Var<S>& projected) {
    return ops::linear(projected, m.cls.w, m.cls.b);
}

// Fuses f^(1)..f^(4) and f^q deep-to-shallow (upsample + concat + conv) and
// maps back to input resolution.
template <typename S>
Var<S> reconstruct(const ModelBundle<S>& m, const FeaturePack<S>& pack) {
    if (m.cfg.vector_mode()) {
        Var<S> u = ops::relu(ops::linear(pack.fq, m.vdec_q.w, m.vdec_q.b));
        for (int i = 3; i >= 0; --i) {
            const auto& fuse = m.vdec_fuse[static_cast<std::size_t>(i)];
            u = ops::relu(ops::linear(ops::concat<S>({pack.stages[static_cast<std::size_t>(i)], u}),
                                      fuse.w, fuse.b));
        }
        return ops::linear(u, m.vdec_out.w, m.vdec_out.b);
    }
    const std::size_t n = pack.fq.shape()[0];
    Var<S> q = ops::reshape(pack.fq, {n, m.cfg.embedding_dim, 1, 1});
    q = ops::relu(ops::deconv2d(q, m.dec_q.w, m.dec_q.b, m.dec_q.stride, m.dec_q.pad));
    Var<S> u = ops::relu(ops::conv2d(ops::concat<S>({pack.stages[3], q}), m.dec_fuse[3].w,
                                     m.dec_fuse[3].b, 1, 1));
    for (int i = 2; i >= 0; --i) {
        const auto& fuse = m.dec_fuse[static_cast<std::size_t>(i)];
        u = ops::relu(ops::conv2d(ops::concat<S>({pack.stages[static_cast<std::size_t>(i)],
                                                  ops::upsample_nearest2x(u)}),
                                  fuse.w, fuse.b, 1, 1));
    }
    return ops::deconv2d(u, m.dec_out.w, m.dec_out.b, m.dec_out.stride, m.dec_out.pad);
}

// R_2(f2), R_3(f3), R_4(f4)=f4 and R_q(fq), all at the reference shape of
// f^(4).
template <typename S>
std::array<Var<S>, 4> rescale_all(const ModelBundle<S>& m, const FeaturePack<S>& pack) {
    Var<S> f2 = pack.stages[1], f3 = pack.stages[2], f4 = pack.stages[3];
    if (m.cfg.align_detach) {
        f2 = ops::detach(f2);
        f3 = ops::detach(f3);
        f4 = ops::detach(f4);
    }
    if (m.cfg.vector_mode()) {
        return {ops::linear(f2, m.vr2.w, m.vr2.b), ops::linear(f3, m.vr3.w, m.vr3.b), f4,
                ops::linear(pack.fq, m.vrq.w, m.vrq.b)};
    }
    const std::size_t n = pack.fq.shape()[0];
    Var<S> q = ops::reshape(pack.fq, {n, m.cfg.embedding_dim, 1, 1});
    return {ops::conv2d(f2, m.r2.w, m.r2.b, m.r2.stride, m.r2.pad),
            ops::conv2d(f3, m.r3.w, m.r3.b, m.r3.stride, m.r3.pad), f4,
            ops::deconv2d(q, m.rq.w, m.rq.b, m.rq.stride, m.rq.pad)};
}

// EMA step for the momentum twin: target <- c*target + (1-c)*source.
template <typename S>
void momentum_update(ModelBundle<S>& m) {
    ema_update(m.momentum, m.ema_src, m.ema_coeff);
}

} // namespace c2fs
