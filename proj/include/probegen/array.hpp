#pragma once

#include <cmath>
#include <utility>

#include "probegen/common.hpp"

namespace probegen {

// Shape-tagged row-major dense array. This is the single value type used for
// weights, probes, activations and gradients throughout the library.
template <typename T>
struct DenseArray {
    Shape shape;
    std::vector<T> data;

    DenseArray() = default;
    explicit DenseArray(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_numel(shape), fill) {}

    static DenseArray from(Shape s, std::vector<T> values) {
        if (shape_numel(s) != values.size())
            throw ShapeError("DenseArray: " + shape_str(s) + " does not hold " +
                             std::to_string(values.size()) + " values");
        DenseArray a;
        a.shape = std::move(s);
        a.data = std::move(values);
        return a;
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t extent(std::size_t axis) const { return shape.at(axis); }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator()(std::size_t i) { return data[i]; }
    const T& operator()(std::size_t i) const { return data[i]; }
    T& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    T& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    T& operator()(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
        return data[((b * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    const T& operator()(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
        return data[((b * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    DenseArray<U> cast() const {
        DenseArray<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    bool operator==(const DenseArray& other) const { return shape == other.shape && data == other.data; }
};

template <typename T>
double max_abs_diff(const DenseArray<T>& a, const DenseArray<T>& b) {
    if (!same_shape(a.shape, b.shape))
        throw ShapeError("max_abs_diff: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
template <typename T>
double max_rel_diff(const DenseArray<T>& a, const DenseArray<T>& b, double floor = 1e-8) {
    if (!same_shape(a.shape, b.shape))
        throw ShapeError("max_rel_diff: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double x = static_cast<double>(a.data[i]);
        double y = static_cast<double>(b.data[i]);
        double d = std::abs(x - y) / std::max({std::abs(x), std::abs(y), floor});
        m = std::max(m, d);
    }
    return m;
}

}  // namespace probegen
