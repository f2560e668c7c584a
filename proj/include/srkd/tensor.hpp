#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "srkd/error.hpp"

namespace srkd {

using Shape = std::vector<size_t>;

std::string shape_str(const Shape& s);
size_t shape_numel(const Shape& s);

// Dense row-major float64 tensor. Copies share the underlying buffer
// (cheap to pass around); clone() makes an independent deep copy.
// A rank-0 shape holds a single scalar.
class Tensor {
public:
    Tensor() : Tensor(Shape{}) {}
    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<double>>(shape_numel(shape_), 0.0)) {}
    Tensor(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<double>>(std::move(values))) {
        if (data_->size() != shape_numel(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_->size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.data()) x = v;
        return t;
    }

    const Shape& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t dim(size_t i) const { return shape_.at(i); }
    size_t numel() const { return data_->size(); }

    std::span<double> data() { return {data_->data(), data_->size()}; }
    std::span<const double> data() const { return {data_->data(), data_->size()}; }
    double* raw() { return data_->data(); }
    const double* raw() const { return data_->data(); }

    double item() const {
        if (numel() != 1)
            throw ContractError("item() on non-scalar tensor of shape " +
                                shape_str(shape_));
        return (*data_)[0];
    }

    double& operator()(size_t i) { return (*data_)[i]; }
    double operator()(size_t i) const { return (*data_)[i]; }
    double& operator()(size_t i, size_t j) { return (*data_)[i * shape_[1] + j]; }
    double operator()(size_t i, size_t j) const { return (*data_)[i * shape_[1] + j]; }
    double& operator()(size_t i, size_t j, size_t k) {
        return (*data_)[(i * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(size_t i, size_t j, size_t k) const {
        return (*data_)[(i * shape_[1] + j) * shape_[2] + k];
    }

    Tensor clone() const { return Tensor(shape_, *data_); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (double v : data())
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
};

// Integer tensor for token ids and labels.
class IntTensor {
public:
    IntTensor() = default;
    explicit IntTensor(Shape shape)
        : shape_(std::move(shape)), data_(shape_numel(shape_), 0) {}
    IntTensor(Shape shape, std::vector<int32_t> values)
        : shape_(std::move(shape)), data_(std::move(values)) {
        if (data_.size() != shape_numel(shape_))
            throw ShapeError("int tensor data length does not match shape " +
                             shape_str(shape_));
    }

    const Shape& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t dim(size_t i) const { return shape_.at(i); }
    size_t numel() const { return data_.size(); }

    std::span<int32_t> data() { return data_; }
    std::span<const int32_t> data() const { return data_; }

    int32_t& operator()(size_t i) { return data_[i]; }
    int32_t operator()(size_t i) const { return data_[i]; }
    int32_t& operator()(size_t i, size_t j) { return data_[i * shape_[1] + j]; }
    int32_t operator()(size_t i, size_t j) const { return data_[i * shape_[1] + j]; }

private:
    Shape shape_;
    std::vector<int32_t> data_;
};

// Deterministic parallel loop: [0, n) is split into contiguous blocks, one
// per worker; safe only when iterations write disjoint memory. Thread count
// comes from SRKD_THREADS (default: hardware concurrency, capped at 8) and
// never changes results because no cross-thread reduction happens.
size_t thread_count();
void parallel_for(size_t n, const std::function<void(size_t, size_t)>& block_fn);

}  // namespace srkd
