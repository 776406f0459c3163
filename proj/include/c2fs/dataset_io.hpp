#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "c2fs/binio.hpp"
#include "c2fs/data.hpp"
#include "c2fs/error.hpp"

namespace c2fs {

// Dataset file (little-endian): magic "C2FSDATA", format version u32, record
// count u64, channels u32, height u32, width u32, coarse_count u32,
// fine_count u32; then per record: coarse u16, fine u16 (0xFFFF = absent),
// pixel payload as 32-bit floats row-major. Vector datasets are stored with
// height == width == 1 and channels == dimension.
inline constexpr char kDatasetMagic[9] = "C2FSDATA";
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint16_t kFineAbsent = 0xFFFF;

struct DatasetFileInfo {
    std::uint64_t records = 0;
    std::uint32_t channels = 0, height = 0, width = 0;
    std::uint32_t coarse_count = 0, fine_count = 0;
    bool vector_mode() const { return height == 1 && width == 1; }
};

inline void save_dataset(const std::string& path, const Dataset& ds) {
    std::uint32_t channels, height, width;
    if (ds.vector_mode()) {
        channels = static_cast<std::uint32_t>(ds.input_shape[0]);
        height = width = 1;
    } else {
        channels = static_cast<std::uint32_t>(ds.input_shape[0]);
        height = static_cast<std::uint32_t>(ds.input_shape[1]);
        width = static_cast<std::uint32_t>(ds.input_shape[2]);
    }
    BinWriter w(path);
    w.magic(kDatasetMagic);
    w.u32(kDatasetVersion);
    w.u64(ds.items.size());
    w.u32(channels);
    w.u32(height);
    w.u32(width);
    w.u32(static_cast<std::uint32_t>(ds.hierarchy.coarse_count));
    w.u32(static_cast<std::uint32_t>(ds.hierarchy.fine_count()));
    for (const auto& e : ds.items) {
        w.u16(static_cast<std::uint16_t>(e.coarse));
        w.u16(e.fine < 0 ? kFineAbsent : static_cast<std::uint16_t>(e.fine));
        w.f32_array(e.input.data(), e.input.size());
    }
    w.close();
}

inline Dataset load_dataset(const std::string& path) {
    BinReader r(path);
    r.expect_magic(kDatasetMagic);
    const std::uint32_t version = r.u32();
    if (version != kDatasetVersion)
        throw FormatError(path + ": unsupported dataset version " + std::to_string(version) +
                          " at byte 8");
    const std::uint64_t records = r.u64();
    const std::uint32_t channels = r.u32();
    const std::uint32_t height = r.u32();
    const std::uint32_t width = r.u32();
    const std::uint32_t coarse_count = r.u32();
    const std::uint32_t fine_count = r.u32();
    if (channels == 0 || height == 0 || width == 0)
        throw FormatError(path + ": zero tensor dimension in header at byte " +
                          std::to_string(r.offset()));
    if (coarse_count == 0)
        throw FormatError(path + ": zero coarse_count in header at byte " +
                          std::to_string(r.offset()));

    Dataset ds;
    ds.hierarchy.coarse_count = static_cast<int>(coarse_count);
    ds.hierarchy.fine_to_coarse.assign(fine_count, -1);
    const bool vector_mode = height == 1 && width == 1;
    if (vector_mode)
        ds.input_shape = {channels};
    else
        ds.input_shape = {channels, height, width};

    const std::size_t payload = static_cast<std::size_t>(channels) * height * width;
    ds.items.reserve(records);
    for (std::uint64_t i = 0; i < records; ++i) {
        Example e;
        const std::uint16_t coarse = r.u16();
        const std::uint16_t fine = r.u16();
        if (coarse >= coarse_count)
            throw ValidationError(path + ": record " + std::to_string(i) + " coarse label " +
                                  std::to_string(coarse) + " out of declared range [0," +
                                  std::to_string(coarse_count) + ")");
        if (fine != kFineAbsent && fine >= fine_count)
            throw ValidationError(path + ": record " + std::to_string(i) + " fine label " +
                                  std::to_string(fine) + " out of declared range [0," +
                                  std::to_string(fine_count) + ")");
        e.coarse = coarse;
        e.fine = fine == kFineAbsent ? -1 : static_cast<int>(fine);
        e.input.resize(payload);
        r.f32_array(e.input.data(), payload);
        if (!vector_mode) {
            for (std::size_t p = 0; p < payload; ++p)
                if (!(e.input[p] >= 0.0f && e.input[p] <= 1.0f))
                    throw ValidationError(path + ": record " + std::to_string(i) +
                                          " pixel outside [0,1]");
        }
        if (e.fine >= 0) {
            int& parent = ds.hierarchy.fine_to_coarse[static_cast<std::size_t>(e.fine)];
            if (parent == -1)
                parent = e.coarse;
            else if (parent != e.coarse)
                throw ValidationError(path + ": record " + std::to_string(i) + " fine " +
                                      std::to_string(e.fine) + " seen under coarse " +
                                      std::to_string(parent) + " and " + std::to_string(e.coarse));
        }
        ds.items.push_back(std::move(e));
    }
    if (!r.at_eof())
        throw FormatError(path + ": trailing bytes after last record at byte " +
                          std::to_string(r.offset()));
    return ds;
}

// Header + record scan without materializing the dataset.
inline DatasetFileInfo validate_dataset_file(const std::string& path) {
    Dataset ds = load_dataset(path);
    DatasetFileInfo info;
    info.records = ds.items.size();
    if (ds.vector_mode()) {
        info.channels = static_cast<std::uint32_t>(ds.input_shape[0]);
        info.height = info.width = 1;
    } else {
        info.channels = static_cast<std::uint32_t>(ds.input_shape[0]);
        info.height = static_cast<std::uint32_t>(ds.input_shape[1]);
        info.width = static_cast<std::uint32_t>(ds.input_shape[2]);
    }
    info.coarse_count = static_cast<std::uint32_t>(ds.hierarchy.coarse_count);
    info.fine_count = static_cast<std::uint32_t>(ds.hierarchy.fine_count());
    return info;
}

} // namespace c2fs
