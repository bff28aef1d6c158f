#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "pospool/error.hpp"

namespace pospool {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

std::string to_string(const Shape& shape);

// Dense row-major buffer. For 4-D data the order is N, C, H, W.
template <class T>
struct Array {
    Shape shape;
    std::vector<T> data;

    Array() = default;
    explicit Array(Shape s, T fill = T(0)) : shape(std::move(s)), data(numel(shape), fill) {}
    Array(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != numel(shape))
            throw ShapeError("Array", "data", -1, static_cast<std::int64_t>(numel(shape)),
                             static_cast<std::int64_t>(data.size()));
    }

    std::size_t size() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    std::span<T> span() { return data; }
    std::span<const T> span() const { return data; }

    bool operator==(const Array&) const = default;
};

template <class To, class From>
Array<To> cast(const Array<From>& a) {
    Array<To> out;
    out.shape = a.shape;
    out.data.assign(a.data.begin(), a.data.end());
    return out;
}

// Throws ShapeError unless `a` has rank `rank`.
template <class T>
void require_rank(const Array<T>& a, int rank, const char* op, const char* operand) {
    if (a.rank() != rank) throw ShapeError(op, operand, -1, rank, a.rank());
}

}  // namespace pospool
