#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "flens/error.hpp"

namespace flens {

/// Dense row-major n-dimensional array of doubles. All training and
/// analysis math runs in 64-bit; 32-bit appears only as checkpoint
/// storage (see checkpoint.hpp).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::vector<int64_t> shape, std::vector<double> data);
    Tensor(std::initializer_list<int64_t> shape) : Tensor(std::vector<int64_t>(shape)) {}

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int64_t> shape, double value);

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Row-major element access for the common ranks.
    double& at2(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    double at2(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    double& at4(int64_t b, int64_t c, int64_t h, int64_t w) {
        return data_[static_cast<size_t>(((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    double at4(int64_t b, int64_t c, int64_t h, int64_t w) const {
        return data_[static_cast<size_t>(((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    /// True when every element is finite. NaN/Inf anywhere is an error
    /// state for this module's operations.
    bool all_finite() const;

    /// Throws NumericError naming `what` if any element is non-finite.
    void require_finite(const std::string& what) const;

    std::string shape_str() const;

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_to_string(const std::vector<int64_t>& shape);

inline void require_shape(const Tensor& t, const std::vector<int64_t>& expect,
                          const std::string& what) {
    if (t.shape() != expect) {
        throw InputError(what + ": expected shape " + shape_to_string(expect) + ", got " +
                         t.shape_str());
    }
}

inline void require_rank(const Tensor& t, size_t rank, const std::string& what) {
    if (t.rank() != rank) {
        throw InputError(what + ": expected rank " + std::to_string(rank) + ", got rank " +
                         std::to_string(t.rank()) + " (" + t.shape_str() + ")");
    }
}

}  // namespace flens
