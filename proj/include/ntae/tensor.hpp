#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ntae/errors.hpp"

namespace ntae {

using Index = std::int64_t;

// Tensor extents, outermost mode first. Modes are 1-based throughout the
// public API, matching the multilinear-algebra convention.
using Shape = std::vector<Index>;

inline Index shape_product(const Shape& s) {
    Index p = 1;
    for (Index e : s) p *= e;
    return p;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Row-major strides (last mode varies fastest).
inline std::vector<Index> row_major_strides(const Shape& s) {
    std::vector<Index> st(s.size());
    Index acc = 1;
    for (std::size_t k = s.size(); k-- > 0;) {
        st[k] = acc;
        acc *= s[k];
    }
    return st;
}

inline void validate_shape(const Shape& s) {
    if (s.empty()) throw ShapeError("tensor order must be >= 1");
    for (Index e : s)
        if (e < 1) throw ShapeError("extents must be positive, got " + shape_str(s));
}

template <typename Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Identically aligned buffers keep Eigen's vectorized kernels on the same
/// code path for every allocation, which bitwise reproducibility relies on.
template <typename Scalar>
using AlignedVector = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

/// Dense order-N value type: explicit shape, row-major contiguous storage.
/// All multilinear primitives below are free functions over it.
template <typename Scalar>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        validate_shape(shape_);
        data_.assign(static_cast<std::size_t>(shape_product(shape_)), Scalar(0));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor from_data(Shape shape, std::vector<Scalar> values) {
        validate_shape(shape);
        const Index n = shape_product(shape);
        if (static_cast<Index>(values.size()) != n)
            throw SizeError("value count " + std::to_string(values.size()) +
                            " does not match shape " + shape_str(shape) + " with " +
                            std::to_string(n) + " entries");
        for (Scalar v : values)
            if (!std::isfinite(static_cast<double>(v)))
                throw DegenerateInputError("non-finite entry in tensor data");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_.assign(values.begin(), values.end());
        return t;
    }

    const Shape& shape() const noexcept { return shape_; }
    int order() const noexcept { return static_cast<int>(shape_.size()); }
    Index size() const noexcept { return static_cast<Index>(data_.size()); }
    Index extent(int mode) const { return shape_.at(static_cast<std::size_t>(mode - 1)); }

    Scalar* data() noexcept { return data_.data(); }
    const Scalar* data() const noexcept { return data_.data(); }
    AlignedVector<Scalar>& values() noexcept { return data_; }
    const AlignedVector<Scalar>& values() const noexcept { return data_; }

    Scalar& operator[](Index flat) { return data_[static_cast<std::size_t>(flat)]; }
    Scalar operator[](Index flat) const { return data_[static_cast<std::size_t>(flat)]; }

    Scalar& at(const std::vector<Index>& idx) { return data_[flat_index(idx)]; }
    Scalar at(const std::vector<Index>& idx) const { return data_[flat_index(idx)]; }

    template <typename... Ix>
    Scalar& operator()(Ix... ix) {
        return at({static_cast<Index>(ix)...});
    }
    template <typename... Ix>
    Scalar operator()(Ix... ix) const {
        return at({static_cast<Index>(ix)...});
    }

    /// Order-2 tensors map directly onto Eigen matrices (no copy).
    Eigen::Map<const MatrixRM<Scalar>> matrix() const {
        require_order2();
        return {data_.data(), shape_[0], shape_[1]};
    }
    Eigen::Map<MatrixRM<Scalar>> matrix() {
        require_order2();
        return {data_.data(), shape_[0], shape_[1]};
    }

    Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>> array() const {
        return {data_.data(), static_cast<Index>(data_.size())};
    }
    Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> array() {
        return {data_.data(), static_cast<Index>(data_.size())};
    }

    /// Same flat data, new extents (row-major reinterpretation).
    Tensor reshaped(Shape shape) const& {
        Tensor t = *this;
        return std::move(t).reshaped(std::move(shape));
    }
    Tensor reshaped(Shape shape) && {
        validate_shape(shape);
        if (shape_product(shape) != size())
            throw SizeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                            " changes element count");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(data_);
        return t;
    }

    Tensor& operator+=(const Tensor& o) {
        require_same_shape(o);
        array() += o.array();
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        require_same_shape(o);
        array() -= o.array();
        return *this;
    }
    Tensor& operator*=(Scalar c) {
        array() *= c;
        return *this;
    }

    friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
    friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
    friend Tensor operator*(Tensor a, Scalar c) { return a *= c; }
    friend Tensor operator*(Scalar c, Tensor a) { return a *= c; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    std::size_t flat_index(const std::vector<Index>& idx) const {
        if (static_cast<int>(idx.size()) != order())
            throw ModeError("index of order " + std::to_string(idx.size()) +
                            " into tensor of order " + std::to_string(order()));
        Index flat = 0;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (idx[k] < 0 || idx[k] >= shape_[k])
                throw ShapeError("index out of bounds at mode " + std::to_string(k + 1));
            flat = flat * shape_[k] + idx[k];
        }
        return static_cast<std::size_t>(flat);
    }

    void require_order2() const {
        if (order() != 2)
            throw ShapeError("matrix view requires order 2, have " + shape_str(shape_));
    }
    void require_same_shape(const Tensor& o) const {
        if (shape_ != o.shape_)
            throw SizeError("shape mismatch " + shape_str(shape_) + " vs " + shape_str(o.shape_));
    }

    Shape shape_;
    AlignedVector<Scalar> data_;
};

using Tensord = Tensor<double>;

template <typename Scalar>
double squared_norm(const Tensor<Scalar>& x) {
    return x.array().template cast<double>().square().sum();
}

template <typename Scalar>
double frobenius_norm(const Tensor<Scalar>& x) {
    return std::sqrt(squared_norm(x));
}

template <typename Scalar>
Tensor<Scalar> scale(Tensor<Scalar> x, Scalar c) {
    return x *= c;
}

namespace detail {

inline void check_mode(int mode, int order) {
    if (mode < 1 || mode > order)
        throw ModeError("mode " + std::to_string(mode) + " out of range for order " +
                        std::to_string(order));
}

}  // namespace detail

/// Mode-n unfolding: rows index mode n, columns enumerate the remaining
/// modes with earlier modes varying fastest.
template <typename Scalar>
Tensor<Scalar> unfold(const Tensor<Scalar>& x, int mode) {
    const Shape& s = x.shape();
    const int n = x.order();
    detail::check_mode(mode, n);
    const int m = mode - 1;
    const Index rows = s[m];
    const Index cols = x.size() / rows;
    Tensor<Scalar> out(Shape{rows, cols});

    std::vector<Index> colw(n, 0);
    Index w = 1;
    for (int k = 0; k < n; ++k) {
        if (k == m) continue;
        colw[k] = w;
        w *= s[k];
    }

    const Scalar* src = x.data();
    Scalar* dst = out.data();
    std::vector<Index> idx(n, 0);
    Index row = 0, col = 0;
    const Index total = x.size();
    for (Index flat = 0;;) {
        dst[row * cols + col] = src[flat];
        if (++flat == total) break;
        for (int k = n - 1;; --k) {  // row-major odometer, last mode fastest
            if (++idx[k] < s[k]) {
                if (k == m)
                    ++row;
                else
                    col += colw[k];
                break;
            }
            idx[k] = 0;
            if (k == m)
                row = 0;
            else
                col -= colw[k] * (s[k] - 1);
        }
    }
    return out;
}

/// Exact inverse of unfold for the matching target shape.
template <typename Scalar>
Tensor<Scalar> fold(const Tensor<Scalar>& mat, int mode, const Shape& target) {
    validate_shape(target);
    const int n = static_cast<int>(target.size());
    detail::check_mode(mode, n);
    const int m = mode - 1;
    if (mat.order() != 2)
        throw SizeError("fold expects an order-2 tensor, got " + shape_str(mat.shape()));
    const Index rows = target[m];
    const Index cols = shape_product(target) / rows;
    if (mat.shape()[0] != rows || mat.shape()[1] != cols)
        throw SizeError("cannot fold " + shape_str(mat.shape()) + " into " + shape_str(target) +
                        " at mode " + std::to_string(mode));

    Tensor<Scalar> out(target);
    std::vector<Index> colw(n, 0);
    Index w = 1;
    for (int k = 0; k < n; ++k) {
        if (k == m) continue;
        colw[k] = w;
        w *= target[k];
    }

    const Scalar* src = mat.data();
    Scalar* dst = out.data();
    std::vector<Index> idx(n, 0);
    Index row = 0, col = 0;
    const Index total = out.size();
    for (Index flat = 0;;) {
        dst[flat] = src[row * cols + col];
        if (++flat == total) break;
        for (int k = n - 1;; --k) {
            if (++idx[k] < target[k]) {
                if (k == m)
                    ++row;
                else
                    col += colw[k];
                break;
            }
            idx[k] = 0;
            if (k == m)
                row = 0;
            else
                col -= colw[k] * (target[k] - 1);
        }
    }
    return out;
}

/// Mode-n product: unfold(result, n) = A * unfold(x, n). A has I_n columns;
/// the result replaces extent I_n by A's row count.
template <typename Scalar, typename Derived>
Tensor<Scalar> mode_n_product(const Tensor<Scalar>& x, const Eigen::MatrixBase<Derived>& a,
                              int mode) {
    detail::check_mode(mode, x.order());
    if (a.cols() != x.shape()[mode - 1])
        throw SizeError("mode-" + std::to_string(mode) + " product: matrix has " +
                        std::to_string(a.cols()) + " columns, mode extent is " +
                        std::to_string(x.shape()[mode - 1]));
    Tensor<Scalar> u = unfold(x, mode);
    Tensor<Scalar> r(Shape{static_cast<Index>(a.rows()), u.shape()[1]});
    r.matrix().noalias() = a * u.matrix();
    Shape target = x.shape();
    target[mode - 1] = a.rows();
    return fold(r, mode, target);
}

template <typename Scalar>
Tensor<Scalar> mode_n_product(const Tensor<Scalar>& x, const Tensor<Scalar>& a, int mode) {
    if (a.order() != 2)
        throw SizeError("mode product expects an order-2 factor, got " + shape_str(a.shape()));
    return mode_n_product(x, a.matrix(), mode);
}

/// Relocates entries: out index (j_1..j_N) reads in index (j_{perm^{-1}}),
/// i.e. out mode k has the extent of in mode perm[k] (1-based).
template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, const std::vector<int>& perm) {
    const int n = x.order();
    if (static_cast<int>(perm.size()) != n)
        throw ModeError("permutation of length " + std::to_string(perm.size()) +
                        " on tensor of order " + std::to_string(n));
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    for (int p : perm) {
        if (p < 1 || p > n || seen[static_cast<std::size_t>(p - 1)])
            throw ModeError("invalid mode permutation");
        seen[static_cast<std::size_t>(p - 1)] = 1;
    }

    const Shape& s = x.shape();
    Shape out_shape(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) out_shape[k] = s[perm[k] - 1];
    Tensor<Scalar> out(out_shape);

    const std::vector<Index> istr = row_major_strides(s);
    std::vector<Index> w(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) w[k] = istr[perm[k] - 1];

    const Scalar* src = x.data();
    Scalar* dst = out.data();
    std::vector<Index> idx(static_cast<std::size_t>(n), 0);
    Index in_flat = 0;
    const Index total = out.size();
    for (Index flat = 0;;) {
        dst[flat] = src[in_flat];
        if (++flat == total) break;
        for (int k = n - 1;; --k) {
            if (++idx[k] < out_shape[k]) {
                in_flat += w[k];
                break;
            }
            idx[k] = 0;
            in_flat -= w[k] * (out_shape[k] - 1);
        }
    }
    return out;
}

inline std::vector<int> inverse_permutation(const std::vector<int>& perm) {
    std::vector<int> inv(perm.size());
    for (std::size_t k = 0; k < perm.size(); ++k) inv[perm[k] - 1] = static_cast<int>(k + 1);
    return inv;
}

/// Copies the samples X[i,...] for i in indices (mode 1 = batch mode).
template <typename Scalar>
Tensor<Scalar> gather_batch(const Tensor<Scalar>& x, const std::vector<Index>& indices) {
    if (x.order() < 1) throw ShapeError("gather_batch on a tensor without a batch mode");
    const Index b = x.shape()[0];
    const Index stride = x.size() / b;
    Shape out_shape = x.shape();
    out_shape[0] = static_cast<Index>(indices.size());
    if (indices.empty()) throw SizeError("gather_batch with no indices");
    Tensor<Scalar> out(std::move(out_shape));
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const Index i = indices[k];
        if (i < 0 || i >= b)
            throw SizeError("gather_batch index " + std::to_string(i) + " out of range [0," +
                            std::to_string(b) + ")");
        std::copy_n(x.data() + i * stride, stride, out.data() + static_cast<Index>(k) * stride);
    }
    return out;
}

/// Contiguous sample range [lo, hi) along the batch mode.
template <typename Scalar>
Tensor<Scalar> slice_batch(const Tensor<Scalar>& x, Index lo, Index hi) {
    const Index b = x.shape()[0];
    if (lo < 0 || hi > b || lo >= hi)
        throw SizeError("slice_batch range [" + std::to_string(lo) + "," + std::to_string(hi) +
                        ") invalid for batch " + std::to_string(b));
    const Index stride = x.size() / b;
    Shape out_shape = x.shape();
    out_shape[0] = hi - lo;
    Tensor<Scalar> out(std::move(out_shape));
    std::copy_n(x.data() + lo * stride, (hi - lo) * stride, out.data());
    return out;
}

}  // namespace ntae
