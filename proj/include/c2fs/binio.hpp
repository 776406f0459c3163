#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "c2fs/error.hpp"

namespace c2fs {

// Little-endian binary IO shared by the dataset, repository and checkpoint
// formats. Readers track the byte offset so format errors can report it.

class BinWriter {
public:
    explicit BinWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw FormatError("cannot open for writing: " + path);
        path_ = path;
    }

    void magic(const char (&m)[9]) { out_.write(m, 8); }

    void u16(std::uint16_t v) {
        unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
        out_.write(reinterpret_cast<char*>(b), 2);
    }

    void u32(std::uint32_t v) {
        unsigned char b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        out_.write(reinterpret_cast<char*>(b), 4);
    }

    void u64(std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        out_.write(reinterpret_cast<char*>(b), 8);
    }

    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        u32(bits);
    }

    void f32_array(const float* data, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) f32(data[i]);
    }

    void bytes(const void* data, std::size_t count) {
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(count));
    }

    void close() {
        out_.close();
        if (!out_) throw FormatError("write failure: " + path_);
    }

private:
    std::ofstream out_;
    std::string path_;
};

class BinReader {
public:
    explicit BinReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw FormatError("cannot open for reading: " + path);
    }

    std::size_t offset() const { return offset_; }
    const std::string& path() const { return path_; }

    void expect_magic(const char (&m)[9]) {
        char buf[8];
        read_raw(buf, 8, "magic");
        if (std::memcmp(buf, m, 8) != 0)
            throw FormatError(path_ + ": bad magic at byte 0, expected \"" + std::string(m, 8) +
                              "\"");
    }

    std::uint16_t u16() {
        unsigned char b[2];
        read_raw(b, 2, "u16");
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }

    std::uint32_t u32() {
        unsigned char b[4];
        read_raw(b, 4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }

    std::uint64_t u64() {
        unsigned char b[8];
        read_raw(b, 8, "u64");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }

    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    void f32_array(float* data, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) data[i] = f32();
    }

    std::string string_bytes(std::size_t count) {
        std::string s(count, '\0');
        read_raw(s.data(), count, "string");
        return s;
    }

    bool at_eof() {
        in_.peek();
        return in_.eof();
    }

private:
    void read_raw(void* dst, std::size_t count, const char* what) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(count));
        if (in_.gcount() != static_cast<std::streamsize>(count))
            throw FormatError(path_ + ": truncated " + what + " at byte " +
                              std::to_string(offset_));
        offset_ += count;
    }

    std::ifstream in_;
    std::string path_;
    std::size_t offset_ = 0;
};

} // namespace c2fs
