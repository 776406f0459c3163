#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "c2fs/augment.hpp"
#include "c2fs/binio.hpp"
#include "c2fs/checkpoint.hpp"
#include "c2fs/data.hpp"
#include "c2fs/error.hpp"
#include "c2fs/losses.hpp"
#include "c2fs/model.hpp"
#include "c2fs/optim.hpp"
#include "c2fs/rng.hpp"

namespace c2fs {

struct TrainConfig {
    int epochs = 30;
    std::size_t batch_size = 64;
    double initial_lr = 0.05;
    // Relative schedule mirroring the 140/180-of-200 pattern: x0.1 at 70% and
    // 90% of the epoch budget. Entries here override the relative default.
    std::vector<LrScheduleEntry> lr_schedule;
    double momentum = 0.9;
    LossWeights weights;
    bool enable_cont = true;
    double ema_coeff = 0.999;
    std::size_t queue_capacity = 4096;
    double temperature = 0.2;
    AugmentConfig augment;
    std::uint64_t seed = 0;
    int checkpoint_every = 10;

    std::vector<LrScheduleEntry> resolved_schedule() const {
        if (!lr_schedule.empty()) return lr_schedule;
        const int e1 = static_cast<int>(epochs * 0.7);
        const int e2 = static_cast<int>(epochs * 0.9);
        if (e1 <= 0 || e1 >= e2 || e2 >= epochs) return {};
        return {{e1, 0.1}, {e2, 0.1}};
    }

    void validate() const {
        if (epochs <= 0) throw ConfigError("train: epochs must be positive");
        if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
        if (!(initial_lr > 0)) throw ConfigError("train: initial_lr must be positive");
        if (checkpoint_every <= 0) throw ConfigError("train: checkpoint_every must be positive");
        if (ema_coeff < 0 || ema_coeff >= 1) throw ConfigError("train: ema_coeff must be in [0,1)");
        weights.validate();
        int prev = -1;
        for (const auto& e : resolved_schedule()) {
            if (e.epoch <= prev)
                throw ConfigError("train: lr_schedule epochs must be strictly increasing");
            if (e.epoch >= epochs)
                throw ConfigError("train: lr_schedule epoch " + std::to_string(e.epoch) +
                                  " must be < epochs");
            prev = e.epoch;
        }
    }
};

struct EpochRecord {
    int epoch = 0;
    LossReport losses;
    double lr = 0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
};

inline constexpr char kTrainerStateMagic[9] = "C2FSSTAT";
inline constexpr std::uint32_t kTrainerStateVersion = 1;

// Orchestrates Fig. 3: augment two views, encode, compute the four losses,
// SGD step, EMA update of the momentum twin, enqueue keys, checkpoint on
// cadence. Deterministic for a fixed seed in single-threaded mode.
template <typename S>
class Trainer {
public:
    Trainer(const Dataset& dataset, ModelBundle<S>& model, TrainConfig cfg,
            std::string out_dir = "")
        : ds_(dataset),
          model_(model),
          cfg_(std::move(cfg)),
          out_dir_(std::move(out_dir)),
          rng_(cfg_.seed),
          cont_(model.coarse_count, cfg_.queue_capacity, cfg_.temperature),
          opt_(model.trainable, cfg_.initial_lr, cfg_.momentum, cfg_.resolved_schedule()) {
        cfg_.validate();
        ds_.validate();
        if (ds_.items.empty()) throw ValidationError("train: empty dataset");
        model_.ema_coeff = cfg_.ema_coeff;
        if (!out_dir_.empty()) std::filesystem::create_directories(out_dir_);
    }

    // Runs the remaining epochs (all of them on a fresh trainer).
    TrainLog run() {
        TrainLog log;
        std::vector<std::size_t> order(ds_.items.size());

        for (int epoch = next_epoch_; epoch < cfg_.epochs; ++epoch) {
            opt_.apply_schedule(epoch);
            // Epoch order is a pure function of the rng state, so resumed
            // runs shuffle identically.
            std::iota(order.begin(), order.end(), 0);
            rng_.shuffle(order);

            double sum_ce = 0, sum_cont = 0, sum_rec = 0, sum_align = 0, sum_total = 0;
            std::size_t batches = 0;
            for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
                const std::size_t n = std::min(cfg_.batch_size, order.size() - start);
                LossReport r = step(order, start, n, epoch);
                sum_ce += r.l_ce;
                sum_cont += r.l_cont;
                sum_rec += r.l_rec;
                sum_align += r.l_align;
                sum_total += r.total;
                ++batches;
            }

            EpochRecord rec;
            rec.epoch = epoch;
            rec.lr = opt_.learning_rate();
            rec.losses.l_ce = sum_ce / static_cast<double>(batches);
            rec.losses.l_cont = sum_cont / static_cast<double>(batches);
            rec.losses.l_rec = sum_rec / static_cast<double>(batches);
            rec.losses.l_align = sum_align / static_cast<double>(batches);
            rec.losses.total = sum_total / static_cast<double>(batches);
            log.epochs.push_back(rec);
            if (epoch_callback) epoch_callback(rec);

            next_epoch_ = epoch + 1;
            if (!out_dir_.empty()) {
                append_log_line(rec);
                if ((epoch + 1) % cfg_.checkpoint_every == 0 && epoch + 1 < cfg_.epochs)
                    checkpoint("ckpt_epoch" + std::to_string(epoch + 1));
            }
        }
        if (!out_dir_.empty()) checkpoint("ckpt_final");
        return log;
    }

    // Serializes everything the checkpointed parameters do not cover: epoch
    // cursor, learning rate, RNG, optimizer velocities and contrastive queues.
    void save_state(const std::string& path) const {
        BinWriter w(path);
        w.magic(kTrainerStateMagic);
        w.u32(kTrainerStateVersion);
        w.u32(static_cast<std::uint32_t>(next_epoch_));
        double lr = opt_.learning_rate();
        std::uint64_t lr_bits;
        static_assert(sizeof(lr) == sizeof(lr_bits));
        std::memcpy(&lr_bits, &lr, 8);
        w.u64(lr_bits);
        const std::string rng_state = rng_.serialize();
        w.u32(static_cast<std::uint32_t>(rng_state.size()));
        w.bytes(rng_state.data(), rng_state.size());
        w.u32(static_cast<std::uint32_t>(opt_.velocities().size()));
        for (const auto& v : opt_.velocities()) {
            w.u32(static_cast<std::uint32_t>(v.numel()));
            for (S x : v.data) w.f32(static_cast<float>(x));
        }
        w.u32(static_cast<std::uint32_t>(cont_.queues.size()));
        for (const auto& q : cont_.queues) {
            w.u32(static_cast<std::uint32_t>(q.size()));
            for (const auto& key : q) {
                w.u32(static_cast<std::uint32_t>(key.size()));
                for (S x : key) w.f32(static_cast<float>(x));
            }
        }
        w.close();
    }

    void load_state(const std::string& path) {
        BinReader r(path);
        r.expect_magic(kTrainerStateMagic);
        if (r.u32() != kTrainerStateVersion)
            throw FormatError(path + ": unsupported trainer state version");
        next_epoch_ = static_cast<int>(r.u32());
        const std::uint64_t lr_bits = r.u64();
        double lr;
        std::memcpy(&lr, &lr_bits, 8);
        opt_.set_learning_rate(lr);
        const std::uint32_t rng_len = r.u32();
        rng_.deserialize(r.string_bytes(rng_len));
        const std::uint32_t vel_count = r.u32();
        if (vel_count != opt_.velocities().size())
            throw ValidationError(path + ": velocity count mismatch");
        for (auto& v : opt_.velocities()) {
            const std::uint32_t n = r.u32();
            if (n != v.numel()) throw ValidationError(path + ": velocity size mismatch");
            for (std::size_t i = 0; i < n; ++i) v.data[i] = static_cast<S>(r.f32());
        }
        const std::uint32_t classes = r.u32();
        if (classes != cont_.queues.size()) throw ValidationError(path + ": queue count mismatch");
        for (auto& q : cont_.queues) {
            q.clear();
            const std::uint32_t len = r.u32();
            for (std::uint32_t i = 0; i < len; ++i) {
                const std::uint32_t d = r.u32();
                std::vector<S> key(d);
                for (std::uint32_t j = 0; j < d; ++j) key[j] = static_cast<S>(r.f32());
                q.push_back(std::move(key));
            }
        }
    }

    void checkpoint(const std::string& stem) {
        const std::string base = out_dir_.empty() ? stem : out_dir_ + "/" + stem;
        save_checkpoint(base + ".c2fsckpt", model_.all_params());
        save_state(base + ".state");
        last_checkpoint_ = base + ".c2fsckpt";
    }

    int next_epoch() const { return next_epoch_; }
    const ContrastiveState<S>& contrastive_state() const { return cont_; }
    ContrastiveState<S>& contrastive_state() { return cont_; }

    // Test hooks.
    std::function<void()> after_step;
    std::function<void(const EpochRecord&)> epoch_callback;

private:
    LossReport step(const std::vector<std::size_t>& order, std::size_t start, std::size_t n,
                    int epoch) {
        // Assemble the two augmented views.
        const std::size_t in_n = ds_.input_numel();
        Shape batch_shape;
        if (ds_.vector_mode())
            batch_shape = {n, ds_.input_shape[0]};
        else
            batch_shape = {n, ds_.input_shape[0], ds_.input_shape[1], ds_.input_shape[2]};
        Tensor<S> q_batch(batch_shape), k_batch(batch_shape);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Example& e = ds_.items[order[start + i]];
            labels[i] = e.coarse;
            auto views = augment_pair(e.input, ds_.input_shape, cfg_.augment, rng_);
            for (std::size_t j = 0; j < in_n; ++j) {
                q_batch.data[i * in_n + j] = static_cast<S>(views.first[j]);
                k_batch.data[i * in_n + j] = static_cast<S>(views.second[j]);
            }
        }

        try {
            FeaturePack<S> pack = encode(model_, q_batch);
            Var<S> ce = loss_ce(coarse_logits(model_, pack.projected), labels);

            Var<S> cont = make_constant<S>(Tensor<S>::scalar(S(0)), "l_cont_disabled");
            if (cfg_.enable_cont) {
                FeaturePack<S> key_pack = encode(model_, k_batch, /*momentum=*/true);
                Tensor<S> keys = ops::l2_normalize_rows(key_pack.projected).value();
                Var<S> queries = ops::l2_normalize_rows(pack.projected);
                cont = loss_cont(queries, keys, labels, cont_, /*enqueue_after=*/true);
            }

            Var<S> rec = make_constant<S>(Tensor<S>::scalar(S(0)), "l_rec_disabled");
            if (cfg_.weights.alpha > 0) rec = loss_rec(reconstruct(model_, pack), pack.input);

            Var<S> align = make_constant<S>(Tensor<S>::scalar(S(0)), "l_align_disabled");
            if (cfg_.weights.beta > 0) align = loss_align(rescale_all(model_, pack));

            auto [total, report] = loss_total(ce, cont, rec, align, cfg_.weights);
            if (!total.value().all_finite())
                throw NumericError("non-finite total loss");

            backward(total);
            opt_.step();
            momentum_update(model_);
            if (after_step) after_step();
            return report;
        } catch (const NumericError& e) {
            throw NumericError("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(start / cfg_.batch_size) + ": " + e.what() +
                               "; last good checkpoint: " +
                               (last_checkpoint_.empty() ? "none" : last_checkpoint_));
        }
    }

    void append_log_line(const EpochRecord& r) {
        std::ofstream out(out_dir_ + "/log.jsonl", std::ios::app);
        out << "{\"epoch\":" << r.epoch << ",\"l_ce\":" << r.losses.l_ce
            << ",\"l_cont\":" << r.losses.l_cont << ",\"l_rec\":" << r.losses.l_rec
            << ",\"l_align\":" << r.losses.l_align << ",\"total\":" << r.losses.total
            << ",\"lr\":" << r.lr << "}\n";
    }

    const Dataset& ds_;
    ModelBundle<S>& model_;
    TrainConfig cfg_;
    std::string out_dir_;
    Rng rng_;
    ContrastiveState<S> cont_;
    SgdOptimizer<S> opt_;
    int next_epoch_ = 0;
    std::string last_checkpoint_;
};

// One-call convenience for tests and the benchmark driver.
template <typename S>
TrainLog train(const Dataset& ds, ModelBundle<S>& model, const TrainConfig& cfg,
               const std::string& out_dir = "") {
    Trainer<S> t(ds, model, cfg, out_dir);
    return t.run();
}

} // namespace c2fs
