#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "c2fs/data.hpp"
#include "c2fs/error.hpp"
#include "c2fs/rng.hpp"

namespace c2fs {

enum class SynthMode { Vector, Image };

// Nested-Gaussian hierarchical generator: coarse centers sit on scaled
// orthogonal axes, fine centers perturb their parent along further axes, and
// examples add isotropic noise. Vector mode lifts intrinsic coordinates into
// ambient_dim by a fixed random orthonormal map; image mode renders them as a
// per-class frequency/phase texture so convolutional encoders get exercised.
struct SynthConfig {
    LabelHierarchy hierarchy;
    std::size_t ambient_dim = 32;
    double coarse_radius = 4.0;
    double fine_radius = 1.0;
    double noise_sigma = 0.25;
    std::uint64_t seed = 0;
    SynthMode mode = SynthMode::Vector;
    std::size_t image_channels = 3;
    std::size_t image_size = 16; // square images, multiple of 16

    // Dimension of the latent space the hierarchy lives in before lifting.
    std::size_t intrinsic_dim() const {
        return static_cast<std::size_t>(hierarchy.coarse_count + hierarchy.fine_count());
    }

    void validate() const {
        hierarchy.validate();
        if (!(coarse_radius > 0)) throw ValidationError("synth: coarse_radius must be positive");
        if (!(fine_radius > 0)) throw ValidationError("synth: fine_radius must be positive");
        if (!(fine_radius < coarse_radius))
            throw ValidationError("synth: fine_radius must be < coarse_radius");
        if (!(noise_sigma >= 0) || !(noise_sigma < fine_radius))
            throw ValidationError("synth: noise_sigma must be in [0, fine_radius)");
        if (mode == SynthMode::Vector && ambient_dim < intrinsic_dim())
            throw ValidationError("synth: ambient_dim " + std::to_string(ambient_dim) +
                                  " < intrinsic dimension " + std::to_string(intrinsic_dim()));
        if (mode == SynthMode::Image && (image_size % 16 != 0 || image_channels == 0))
            throw ValidationError("synth: image_size must be a positive multiple of 16");
    }
};

namespace detail {

// Orthonormal columns via modified Gram-Schmidt on a seeded Gaussian matrix.
inline std::vector<std::vector<double>> random_orthonormal_columns(std::size_t rows,
                                                                   std::size_t cols, Rng& rng) {
    std::vector<std::vector<double>> q(cols, std::vector<double>(rows));
    for (std::size_t j = 0; j < cols; ++j) {
        for (std::size_t i = 0; i < rows; ++i) q[j][i] = rng.normal();
        for (std::size_t k = 0; k < j; ++k) {
            double dot = 0;
            for (std::size_t i = 0; i < rows; ++i) dot += q[j][i] * q[k][i];
            for (std::size_t i = 0; i < rows; ++i) q[j][i] -= dot * q[k][i];
        }
        double nrm = 0;
        for (std::size_t i = 0; i < rows; ++i) nrm += q[j][i] * q[j][i];
        nrm = std::sqrt(nrm);
        if (nrm < 1e-9) throw NumericError("synth: degenerate orthonormal basis draw");
        for (std::size_t i = 0; i < rows; ++i) q[j][i] /= nrm;
    }
    return q;
}

struct TexturePlan {
    // One spatial wave per intrinsic coordinate; channel weights mix them.
    std::vector<double> freq_x, freq_y, phase, comp_scale;
    std::vector<std::vector<double>> channel_weight; // [dim][channel]
    double gain = 0;
};

inline TexturePlan make_texture_plan(const SynthConfig& cfg, Rng& rng) {
    const std::size_t d = cfg.intrinsic_dim();
    TexturePlan plan;
    plan.freq_x.resize(d);
    plan.freq_y.resize(d);
    plan.phase.resize(d);
    plan.comp_scale.resize(d);
    plan.channel_weight.assign(d, std::vector<double>(cfg.image_channels));
    const std::size_t n_coarse = static_cast<std::size_t>(cfg.hierarchy.coarse_count);
    for (std::size_t j = 0; j < d; ++j) {
        plan.freq_x[j] = static_cast<double>(1 + rng.index(4));
        plan.freq_y[j] = static_cast<double>(1 + rng.index(4));
        plan.phase[j] = rng.uniform(0.0, 2.0 * M_PI);
        // Coarse axes carry ~2*coarse_radius, fine/noise axes ~fine_radius;
        // equalize their visual amplitude.
        plan.comp_scale[j] = j < n_coarse ? 1.0 / (2.0 * cfg.coarse_radius) : 1.0 / cfg.fine_radius;
        for (std::size_t c = 0; c < cfg.image_channels; ++c)
            plan.channel_weight[j][c] = rng.uniform(-1.0, 1.0);
    }
    plan.gain = 0.35 / std::sqrt(static_cast<double>(d) / 6.0);
    return plan;
}

inline void render_texture(const TexturePlan& plan, const std::vector<double>& v,
                           std::size_t channels, std::size_t size, std::vector<float>& out) {
    out.assign(channels * size * size, 0.0f);
    const double inv = 1.0 / static_cast<double>(size);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                double acc = 0;
                for (std::size_t j = 0; j < v.size(); ++j) {
                    const double arg = 2.0 * M_PI *
                                           (plan.freq_x[j] * static_cast<double>(x) +
                                            plan.freq_y[j] * static_cast<double>(y)) *
                                           inv +
                                       plan.phase[j];
                    acc += v[j] * plan.comp_scale[j] * plan.channel_weight[j][c] * std::sin(arg);
                }
                double px = 0.5 + plan.gain * acc;
                px = std::min(1.0, std::max(0.0, px));
                out[(c * size + y) * size + x] = static_cast<float>(px);
            }
}

} // namespace detail

// Latent fine-class centers in intrinsic coordinates (before lift/render).
inline std::vector<std::vector<double>> synth_fine_centers(const SynthConfig& cfg) {
    const std::size_t d = cfg.intrinsic_dim();
    const std::size_t n_coarse = static_cast<std::size_t>(cfg.hierarchy.coarse_count);
    std::vector<std::vector<double>> centers;
    for (int f = 0; f < cfg.hierarchy.fine_count(); ++f) {
        std::vector<double> c(d, 0.0);
        const auto coarse = static_cast<std::size_t>(cfg.hierarchy.parent_of(f));
        c[coarse] = 2.0 * cfg.coarse_radius;
        c[n_coarse + static_cast<std::size_t>(f)] = cfg.fine_radius;
        centers.push_back(std::move(c));
    }
    return centers;
}

// Deterministic for a fixed (config, seed): identical calls produce
// bit-identical datasets.
inline Dataset generate_synthetic(const SynthConfig& cfg, std::size_t count_per_fine) {
    cfg.validate();
    if (count_per_fine == 0) throw ValidationError("synth: count_per_fine must be positive");

    Rng rng(cfg.seed);
    const std::size_t d = cfg.intrinsic_dim();
    const auto centers = synth_fine_centers(cfg);

    Dataset ds;
    ds.hierarchy = cfg.hierarchy;

    std::vector<std::vector<double>> lift;
    detail::TexturePlan plan;
    if (cfg.mode == SynthMode::Vector) {
        ds.input_shape = {cfg.ambient_dim};
        lift = detail::random_orthonormal_columns(cfg.ambient_dim, d, rng);
    } else {
        ds.input_shape = {cfg.image_channels, cfg.image_size, cfg.image_size};
        plan = detail::make_texture_plan(cfg, rng);
    }

    std::vector<double> v(d);
    for (int f = 0; f < cfg.hierarchy.fine_count(); ++f) {
        for (std::size_t i = 0; i < count_per_fine; ++i) {
            for (std::size_t j = 0; j < d; ++j)
                v[j] = centers[static_cast<std::size_t>(f)][j] + cfg.noise_sigma * rng.normal();
            Example e;
            e.fine = f;
            e.coarse = cfg.hierarchy.parent_of(f);
            if (cfg.mode == SynthMode::Vector) {
                std::vector<double> amb(cfg.ambient_dim, 0.0);
                for (std::size_t j = 0; j < d; ++j) {
                    const double vj = v[j];
                    for (std::size_t r = 0; r < cfg.ambient_dim; ++r) amb[r] += lift[j][r] * vj;
                }
                e.input.resize(cfg.ambient_dim);
                for (std::size_t r = 0; r < cfg.ambient_dim; ++r)
                    e.input[r] = static_cast<float>(amb[r]);
            } else {
                detail::render_texture(plan, v, cfg.image_channels, cfg.image_size, e.input);
            }
            ds.items.push_back(std::move(e));
        }
    }
    return ds;
}

} // namespace c2fs
