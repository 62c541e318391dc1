#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "cogtraj/error.hpp"

namespace cogtraj {

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense row-major tensor: the last axis is the fastest-varying one.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, T fill = T(0))
        : shape_(std::move(shape)) {
        data_.assign(checked_numel(shape_), fill);
    }

    static Tensor from_data(std::vector<std::size_t> shape, std::vector<T> data) {
        Tensor t;
        std::size_t n = checked_numel(shape);
        if (n != data.size()) {
            throw shape_error("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
        }
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& buffer() { return data_; }
    const std::vector<T>& buffer() const { return data_; }

    T& operator[](std::size_t flat) { return data_[flat]; }
    const T& operator[](std::size_t flat) const { return data_[flat]; }

    template <typename... Ix>
    T& operator()(Ix... ix) {
        return data_[flat_index({static_cast<std::size_t>(ix)...})];
    }

    template <typename... Ix>
    const T& operator()(Ix... ix) const {
        return data_[flat_index({static_cast<std::size_t>(ix)...})];
    }

    std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != shape_.size()) {
            throw shape_error("index rank " + std::to_string(idx.size()) +
                              " does not match tensor rank " + std::to_string(shape_.size()));
        }
        std::size_t flat = 0;
        std::size_t axis = 0;
        for (std::size_t i : idx) {
            if (i >= shape_[axis]) {
                throw shape_error("index " + std::to_string(i) + " out of range for axis " +
                                  std::to_string(axis) + " of shape " + shape_str(shape_));
            }
            flat = flat * shape_[axis] + i;
            ++axis;
        }
        return flat;
    }

    std::vector<std::size_t> unflatten(std::size_t flat) const {
        std::vector<std::size_t> idx(shape_.size());
        for (std::size_t axis = shape_.size(); axis-- > 0;) {
            idx[axis] = flat % shape_[axis];
            flat /= shape_[axis];
        }
        return idx;
    }

    std::vector<std::size_t> strides() const {
        std::vector<std::size_t> s(shape_.size(), 1);
        for (std::size_t axis = shape_.size(); axis-- > 1;) {
            s[axis - 1] = s[axis] * shape_[axis];
        }
        return s;
    }

    void fill(T v) { data_.assign(data_.size(), v); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    Tensor reshaped(std::vector<std::size_t> shape) const {
        std::size_t n = checked_numel(shape);
        if (n != data_.size()) {
            throw shape_error("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

private:
    static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
        if (shape.empty()) {
            throw shape_error("tensor shape must have at least one axis");
        }
        std::size_t n = 1;
        for (std::size_t axis = 0; axis < shape.size(); ++axis) {
            if (shape[axis] == 0) {
                throw shape_error("tensor extent on axis " + std::to_string(axis) +
                                  " must be >= 1, shape " + shape_str(shape));
            }
            n *= shape[axis];
        }
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

template <typename T>
void check_same_shape(const char* what, const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) {
        throw shape_error(std::string(what) + ": shape " + shape_str(a.shape()) +
                          " does not match " + shape_str(b.shape()));
    }
}

} // namespace cogtraj
