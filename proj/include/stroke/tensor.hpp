#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace stroke {

/// Dense row-major tensor of doubles. The whole numeric stack runs in double
/// precision so finite-difference gradient checks have headroom.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::vector<int64_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int64_t> shape, double v);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    /// Same storage, new shape (element count must match).
    Tensor reshaped(std::vector<int64_t> shape) const;

    void fill(double v);
    void zero() { fill(0.0); }
    bool all_finite() const;
    double min() const;
    double max() const;
    double sum() const;
    double mean() const { return size() > 0 ? sum() / static_cast<double>(size()) : 0.0; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool bit_equal(const Tensor& o) const;

    std::string shape_str() const;

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

int64_t shape_numel(const std::vector<int64_t>& shape);

}  // namespace stroke
