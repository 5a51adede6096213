#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "concurl/error.hpp"

namespace concurl {

#ifdef CONCURL_REAL_FLOAT
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "x" : "") << shape[i];
    }
    out << ']';
    return out.str();
}

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major array. Rank 1 and rank 2 are the working cases; image
// tensors (h x w x c) use rank 3.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, Real fill = Real(0)) : shape_(std::move(shape)) {
        check_shape(shape_);
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape(shape_);
        if (shape_size(shape_) != data_.size()) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string(shape_));
        }
    }

    static Tensor vector(std::initializer_list<Real> values) {
        return Tensor({values.size()}, std::vector<Real>(values));
    }

    static Tensor matrix(std::initializer_list<std::initializer_list<Real>> rows) {
        const std::size_t m = rows.size();
        const std::size_t n = m ? rows.begin()->size() : 0;
        std::vector<Real> data;
        data.reserve(m * n);
        for (const auto& row : rows) {
            if (row.size() != n) {
                throw DimensionError("ragged matrix literal");
            }
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({m, n}, std::move(data));
    }

    static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) {
            t(i, i) = Real(1);
        }
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // Rank-1 tensors behave as a single row.
    std::size_t rows() const { return rank() == 1 ? 1 : shape_.at(0); }
    std::size_t cols() const { return rank() == 1 ? shape_.at(0) : size() / std::max<std::size_t>(shape_.at(0), 1); }

    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }
    Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<Real> data() { return data_; }
    std::span<const Real> data() const { return data_; }
    std::vector<Real>& storage() { return data_; }
    const std::vector<Real>& storage() const { return data_; }

    std::span<Real> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
    std::span<const Real> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
    }

    Real sum() const { return std::accumulate(data_.begin(), data_.end(), Real(0)); }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

    Tensor& operator+=(const Tensor& other) {
        require_same_shape(other, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) {
            data_[i] += other.data_[i];
        }
        return *this;
    }

    Tensor& operator*=(Real s) {
        for (auto& v : data_) {
            v *= s;
        }
        return *this;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

    void require_same_shape(const Tensor& other, const char* what) const {
        if (shape_ != other.shape_) {
            throw DimensionError(std::string(what) + ": shape " + shape_string(shape_) + " vs " +
                                 shape_string(other.shape_));
        }
    }

private:
    static void check_shape(const Shape& shape) {
        if (shape.empty()) {
            throw DimensionError("tensor rank must be at least 1");
        }
        for (auto d : shape) {
            if (d == 0) {
                throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
            }
        }
    }

    Shape shape_;
    std::vector<Real> data_;
};

namespace detail {

using RowMajor = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

inline ConstMap as_matrix(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }
inline Map as_matrix(Tensor& t) { return Map(t.data().data(), t.rows(), t.cols()); }

}  // namespace detail

// C = op(A) * op(B) on plain values.
inline Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false) {
    const std::size_t m = transpose_a ? a.cols() : a.rows();
    const std::size_t ka = transpose_a ? a.rows() : a.cols();
    const std::size_t kb = transpose_b ? b.cols() : b.rows();
    const std::size_t n = transpose_b ? b.rows() : b.cols();
    if (ka != kb) {
        throw DimensionError("matmul inner dimensions differ: " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    }
    Tensor c({m, n});
    auto out = detail::as_matrix(c);
    auto am = detail::as_matrix(a);
    auto bm = detail::as_matrix(b);
    if (transpose_a && transpose_b) {
        out.noalias() = am.transpose() * bm.transpose();
    } else if (transpose_a) {
        out.noalias() = am.transpose() * bm;
    } else if (transpose_b) {
        out.noalias() = am * bm.transpose();
    } else {
        out.noalias() = am * bm;
    }
    return c;
}

inline Tensor transpose(const Tensor& a) {
    Tensor t({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            t(j, i) = a(i, j);
        }
    }
    return t;
}

inline Real max_abs_diff(const Tensor& a, const Tensor& b) {
    a.require_same_shape(b, "max_abs_diff");
    Real worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

// Rows [begin, end) of a matrix.
inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
    Shape shape = a.shape();
    if (a.rank() == 1) {
        shape = {1, a.cols()};
    }
    shape[0] = end - begin;
    const std::size_t stride = a.size() / a.rows();
    std::vector<Real> data(a.data().begin() + begin * stride, a.data().begin() + end * stride);
    return Tensor(std::move(shape), std::move(data));
}

inline Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices) {
    Shape shape = a.shape();
    shape[0] = indices.size();
    const std::size_t stride = a.size() / a.rows();
    std::vector<Real> data;
    data.reserve(indices.size() * stride);
    for (auto i : indices) {
        auto begin = a.data().begin() + i * stride;
        data.insert(data.end(), begin, begin + stride);
    }
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace concurl
