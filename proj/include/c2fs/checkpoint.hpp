#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "c2fs/autodiff.hpp"
#include "c2fs/binio.hpp"
#include "c2fs/tensor.hpp"

namespace c2fs {

// Checkpoint file: magic "C2FSCKPT", version u32, parameter count u32, then
// per parameter: name length u32 + bytes, rank u32, dims u32 each, f32 payload.
inline constexpr char kCheckpointMagic[9] = "C2FSCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
    std::string name;
    Tensor<float> tensor;
};

inline void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
    BinWriter w(path);
    w.magic(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        w.u32(static_cast<std::uint32_t>(e.name.size()));
        w.bytes(e.name.data(), e.name.size());
        w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
        for (std::size_t d : e.tensor.shape) w.u32(static_cast<std::uint32_t>(d));
        w.f32_array(e.tensor.data.data(), e.tensor.numel());
    }
    w.close();
}

template <typename S>
inline void save_checkpoint(const std::string& path, const std::vector<Var<S>>& params) {
    std::vector<CheckpointEntry> entries;
    entries.reserve(params.size());
    for (const auto& p : params)
        entries.push_back({p.name(), p.value().template cast<float>()});
    save_checkpoint(path, entries);
}

inline std::vector<CheckpointEntry> load_checkpoint(const std::string& path) {
    BinReader r(path);
    r.expect_magic(kCheckpointMagic);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    std::vector<CheckpointEntry> entries;
    entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32();
        CheckpointEntry e;
        e.name = r.string_bytes(name_len);
        const std::uint32_t rank = r.u32();
        Shape shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) shape[d] = r.u32();
        e.tensor = Tensor<float>(shape);
        r.f32_array(e.tensor.data.data(), e.tensor.numel());
        entries.push_back(std::move(e));
    }
    return entries;
}

// Copies checkpoint values into an existing parameter list, matching by name.
template <typename S>
inline void load_checkpoint_into(const std::string& path, std::vector<Var<S>>& params) {
    auto entries = load_checkpoint(path);
    std::unordered_map<std::string, const CheckpointEntry*> by_name;
    for (const auto& e : entries) by_name[e.name] = &e;
    for (auto& p : params) {
        auto it = by_name.find(p.name());
        if (it == by_name.end())
            throw ValidationError(path + ": checkpoint is missing parameter " + p.name());
        const Tensor<float>& src = it->second->tensor;
        if (src.shape != p.value().shape)
            throw ShapeError(path + ": parameter " + p.name() + " shape " + shape_str(src.shape) +
                             " does not match model " + shape_str(p.value().shape));
        for (std::size_t i = 0; i < src.numel(); ++i)
            p.value().data[i] = static_cast<S>(src.data[i]);
    }
}

} // namespace c2fs
