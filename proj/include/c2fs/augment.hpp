#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "c2fs/data.hpp"
#include "c2fs/error.hpp"
#include "c2fs/rng.hpp"
#include "c2fs/tensor.hpp"

namespace c2fs {

// Stochastic two-view augmentation: random resized crop, horizontal flip and
// color jitter for images; Gaussian jitter for vector inputs. Strengths of
// zero reduce every transform to the identity.
struct AugmentConfig {
    double crop_min_area = 0.6; // >= 1 disables cropping
    double flip_prob = 0.5;
    double jitter_prob = 0.8;
    double jitter_brightness = 0.2;
    double jitter_contrast = 0.2;
    double vector_jitter_sigma = 0.05;

    static AugmentConfig identity() {
        AugmentConfig c;
        c.crop_min_area = 1.0;
        c.flip_prob = 0.0;
        c.jitter_prob = 0.0;
        c.jitter_brightness = 0.0;
        c.jitter_contrast = 0.0;
        c.vector_jitter_sigma = 0.0;
        return c;
    }
};

namespace detail {

inline float bilinear_sample(const std::vector<float>& img, std::size_t C, std::size_t H,
                             std::size_t W, std::size_t c, double y, double x) {
    y = std::min(std::max(y, 0.0), static_cast<double>(H - 1));
    x = std::min(std::max(x, 0.0), static_cast<double>(W - 1));
    const std::size_t y0 = static_cast<std::size_t>(y);
    const std::size_t x0 = static_cast<std::size_t>(x);
    const std::size_t y1 = std::min(y0 + 1, H - 1);
    const std::size_t x1 = std::min(x0 + 1, W - 1);
    const double fy = y - static_cast<double>(y0);
    const double fx = x - static_cast<double>(x0);
    const double v00 = img[(c * H + y0) * W + x0];
    const double v01 = img[(c * H + y0) * W + x1];
    const double v10 = img[(c * H + y1) * W + x0];
    const double v11 = img[(c * H + y1) * W + x1];
    const double v = v00 * (1 - fy) * (1 - fx) + v01 * (1 - fy) * fx + v10 * fy * (1 - fx) +
                     v11 * fy * fx;
    return static_cast<float>(v);
}

inline void random_resized_crop(std::vector<float>& img, std::size_t C, std::size_t H,
                                std::size_t W, double min_area, Rng& rng) {
    const double area_frac = rng.uniform(min_area, 1.0);
    const double log_ratio = rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
    const double aspect = std::exp(log_ratio);
    const double target = area_frac * static_cast<double>(H * W);
    std::size_t cw = static_cast<std::size_t>(std::lround(std::sqrt(target * aspect)));
    std::size_t ch = static_cast<std::size_t>(std::lround(std::sqrt(target / aspect)));
    cw = std::min(std::max<std::size_t>(cw, 1), W);
    ch = std::min(std::max<std::size_t>(ch, 1), H);
    const std::size_t top = rng.index(H - ch + 1);
    const std::size_t left = rng.index(W - cw + 1);

    std::vector<float> out(C * H * W);
    const double sy = static_cast<double>(ch) / static_cast<double>(H);
    const double sx = static_cast<double>(cw) / static_cast<double>(W);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5 +
                                     static_cast<double>(top);
                const double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5 +
                                     static_cast<double>(left);
                out[(c * H + y) * W + x] = bilinear_sample(img, C, H, W, c, src_y, src_x);
            }
    img = std::move(out);
}

inline void horizontal_flip(std::vector<float>& img, std::size_t C, std::size_t H,
                            std::size_t W) {
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W / 2; ++x)
                std::swap(img[(c * H + y) * W + x], img[(c * H + y) * W + (W - 1 - x)]);
}

inline void color_jitter(std::vector<float>& img, std::size_t C, std::size_t H, std::size_t W,
                         double brightness, double contrast, Rng& rng) {
    const double b = 1.0 + rng.uniform(-brightness, brightness);
    const double ct = 1.0 + rng.uniform(-contrast, contrast);
    const std::size_t sp = H * W;
    for (std::size_t c = 0; c < C; ++c) {
        double mean = 0;
        for (std::size_t i = 0; i < sp; ++i) mean += img[c * sp + i];
        mean /= static_cast<double>(sp);
        for (std::size_t i = 0; i < sp; ++i) {
            double v = (static_cast<double>(img[c * sp + i]) - mean) * ct + mean;
            v *= b;
            img[c * sp + i] = static_cast<float>(std::min(1.0, std::max(0.0, v)));
        }
    }
}

} // namespace detail

// One stochastic view. Image inputs keep their shape; vector inputs get
// additive Gaussian jitter (the documented fallback for non-image data).
inline std::vector<float> augment_view(const std::vector<float>& input, const Shape& shape,
                                       const AugmentConfig& cfg, Rng& rng) {
    std::vector<float> out = input;
    if (shape.size() == 1) {
        if (cfg.vector_jitter_sigma > 0)
            for (float& v : out) v += static_cast<float>(rng.normal(0.0, cfg.vector_jitter_sigma));
        return out;
    }
    if (shape.size() != 3)
        throw ShapeError("augment: expected (D) or (C,H,W) input, got " + shape_str(shape));
    const std::size_t C = shape[0], H = shape[1], W = shape[2];
    if (cfg.crop_min_area < 1.0) detail::random_resized_crop(out, C, H, W, cfg.crop_min_area, rng);
    if (cfg.flip_prob > 0 && rng.bernoulli(cfg.flip_prob)) detail::horizontal_flip(out, C, H, W);
    if (cfg.jitter_prob > 0 && rng.bernoulli(cfg.jitter_prob))
        detail::color_jitter(out, C, H, W, cfg.jitter_brightness, cfg.jitter_contrast, rng);
    return out;
}

// Two independent views (I_q, I_k) of the same example; label is unchanged.
inline std::pair<std::vector<float>, std::vector<float>> augment_pair(
    const std::vector<float>& input, const Shape& shape, const AugmentConfig& cfg, Rng& rng) {
    auto q = augment_view(input, shape, cfg, rng);
    auto k = augment_view(input, shape, cfg, rng);
    return {std::move(q), std::move(k)};
}

} // namespace c2fs
