#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "c2fs/error.hpp"

namespace c2fs {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << ")";
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

// Dense row-major tensor. Scalar type S is float for training and double for
// gradient verification.
template <typename S>
struct Tensor {
    Shape shape;
    std::vector<S> data;

    Tensor() = default;

    explicit Tensor(Shape sh) : shape(std::move(sh)), data(shape_numel(shape), S(0)) {}

    Tensor(Shape sh, std::vector<S> values) : shape(std::move(sh)), data(std::move(values)) {
        if (data.size() != shape_numel(shape)) {
            throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        }
    }

    static Tensor zeros(Shape sh) { return Tensor(std::move(sh)); }

    static Tensor full(Shape sh, S v) {
        Tensor t(std::move(sh));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor scalar(S v) { return Tensor({1}, {v}); }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    S& operator[](std::size_t i) { return data[i]; }
    S operator[](std::size_t i) const { return data[i]; }

    // 2D access: (rows, cols)
    S& at2(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
    S at2(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

    // 4D access: (n, c, h, w)
    S& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    S at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename T>
    Tensor<T> cast() const {
        Tensor<T> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
        return out;
    }
};

template <typename S>
inline void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    }
}

} // namespace c2fs
