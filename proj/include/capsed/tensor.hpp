#pragma once

#include <initializer_list>
#include <vector>

#include "capsed/common.hpp"

namespace capsed {

// Dense row-major tensor of 64-bit floats. Value-semantic; safe for
// concurrent read-only access.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<index_t> shape)
        : shape_(std::move(shape)), data_(checked_size(shape_), 0.0) {}

    Tensor(std::vector<index_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<index_t>(data_.size()) != checked_size(shape_))
            throw ShapeError("Tensor: data length does not match shape product");
    }

    static Tensor zeros(std::vector<index_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<index_t> shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = v;
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<index_t>& shape() const { return shape_; }
    index_t dim(size_t axis) const { return shape_.at(axis); }
    size_t rank() const { return shape_.size(); }
    index_t size() const { return static_cast<index_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](index_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](index_t i) const { return data_[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool is_scalar() const { return size() == 1; }

    // Flat index for up to 4-d access; bounds unchecked in release paths.
    index_t idx(index_t i, index_t j) const { return i * shape_[1] + j; }
    index_t idx(index_t i, index_t j, index_t k) const {
        return (i * shape_[1] + j) * shape_[2] + k;
    }
    index_t idx(index_t i, index_t j, index_t k, index_t l) const {
        return ((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
    }

    double& at(index_t i, index_t j) { return data_[static_cast<size_t>(idx(i, j))]; }
    double at(index_t i, index_t j) const { return data_[static_cast<size_t>(idx(i, j))]; }
    double& at(index_t i, index_t j, index_t k) { return data_[static_cast<size_t>(idx(i, j, k))]; }
    double at(index_t i, index_t j, index_t k) const {
        return data_[static_cast<size_t>(idx(i, j, k))];
    }
    double& at(index_t i, index_t j, index_t k, index_t l) {
        return data_[static_cast<size_t>(idx(i, j, k, l))];
    }
    double at(index_t i, index_t j, index_t k, index_t l) const {
        return data_[static_cast<size_t>(idx(i, j, k, l))];
    }

    // Same data, new shape; product must match.
    Tensor reshaped(std::vector<index_t> shape) const {
        Tensor t(std::move(shape), data_);
        return t;
    }

    void fill(double v) {
        for (double& x : data_) x = v;
    }

    static index_t shape_size(const std::vector<index_t>& shape) {
        index_t n = 1;
        for (index_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

private:
    static index_t checked_size(const std::vector<index_t>& shape) {
        if (shape.empty()) throw ShapeError("Tensor: empty shape");
        index_t n = 1;
        for (index_t d : shape) {
            if (d <= 0) throw ShapeError("Tensor: nonpositive extent");
            n *= d;
        }
        return n;
    }

    std::vector<index_t> shape_;
    std::vector<double> data_;
};

}  // namespace capsed
