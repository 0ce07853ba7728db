#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace marm {

// Row-major dense matrix. Just enough for the attention kernels; nothing here
// tries to be a general linear algebra type.
template <typename T>
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<T> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const T> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    bool empty() const { return data.empty(); }
    std::size_t size() const { return data.size(); }

    bool operator==(const Matrix&) const = default;
};

// Non-owning view over `rows` contiguous vectors of length `cols`.
template <typename T>
struct RowsView {
    std::span<T> data;
    std::size_t rows = 0;
    std::size_t cols = 0;

    RowsView() = default;
    RowsView(std::span<T> d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c) {
        assert(d.size() == r * c);
    }
    template <typename U>
    RowsView(Matrix<U>& m) : data(m.data), rows(m.rows), cols(m.cols) {}
    template <typename U>
    RowsView(const Matrix<U>& m) : data(m.data), rows(m.rows), cols(m.cols) {}

    std::span<T> row(std::size_t r) const { return data.subspan(r * cols, cols); }
    bool empty() const { return rows == 0; }
};

template <typename T>
using ConstRowsView = RowsView<const T>;

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
    assert(a.size() == b.size());
    T acc = T(0);
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

// out = x * W  (x: 1 x rows, W: rows x cols)
template <typename T>
void vec_mat(std::span<const T> x, const Matrix<T>& w, std::span<T> out) {
    assert(x.size() == w.rows && out.size() == w.cols);
    for (std::size_t c = 0; c < w.cols; ++c) out[c] = T(0);
    for (std::size_t r = 0; r < w.rows; ++r) {
        const T xr = x[r];
        const T* wr = w.data.data() + r * w.cols;
        for (std::size_t c = 0; c < w.cols; ++c) out[c] += xr * wr[c];
    }
}

// out = W * y  (W: rows x cols, y: cols) -- the transpose product used in backprop
template <typename T>
void mat_vec(const Matrix<T>& w, std::span<const T> y, std::span<T> out) {
    assert(y.size() == w.cols && out.size() == w.rows);
    for (std::size_t r = 0; r < w.rows; ++r) {
        const T* wr = w.data.data() + r * w.cols;
        T acc = T(0);
        for (std::size_t c = 0; c < w.cols; ++c) acc += wr[c] * y[c];
        out[r] = acc;
    }
}

// G += a * b^T
template <typename T>
void add_outer(Matrix<T>& g, std::span<const T> a, std::span<const T> b) {
    assert(a.size() == g.rows && b.size() == g.cols);
    for (std::size_t r = 0; r < g.rows; ++r) {
        const T ar = a[r];
        if (ar == T(0)) continue;
        T* gr = g.data.data() + r * g.cols;
        for (std::size_t c = 0; c < g.cols; ++c) gr[c] += ar * b[c];
    }
}

}  // namespace marm
