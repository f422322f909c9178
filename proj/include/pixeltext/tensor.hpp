#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "pixeltext/rng.hpp"

namespace pixeltext {

// Dense row-major matrix. All kernels below accumulate strictly in index
// order per output element, so the value of row i depends only on row i of
// the left operand and the right operand — never on sibling rows or on the
// total row count. The causality and padding-invariance guarantees rely on
// this.
template <typename T>
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(size_t(r) * size_t(c), T(0)) {}

    T* row(int i) { return data.data() + size_t(i) * cols; }
    const T* row(int i) const { return data.data() + size_t(i) * cols; }
    T& at(int i, int j) { return data[size_t(i) * cols + j]; }
    T at(int i, int j) const { return data[size_t(i) * cols + j]; }

    void set_zero() { std::fill(data.begin(), data.end(), T(0)); }

    void fill_normal(Rng& rng, double stddev) {
        for (auto& v : data) v = T(rng.next_normal() * stddev);
    }
};

// y += a * x
template <typename T>
inline void axpy(T* y, T a, const T* x, int n) {
    for (int k = 0; k < n; ++k) y[k] += a * x[k];
}

// 4-way unrolled dot product; fixed association, no fast-math needed.
template <typename T>
inline T dot(const T* a, const T* b, int n) {
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    int k = 0;
    for (; k + 4 <= n; k += 4) {
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
    }
    T s = (s0 + s1) + (s2 + s3);
    for (; k < n; ++k) s += a[k] * b[k];
    return s;
}

// C = A(m x k) * B(k x n)
template <typename T>
inline void matmul(Matrix<T>& c, const Matrix<T>& a, const Matrix<T>& b) {
    assert(a.cols == b.rows);
    c.rows = a.rows;
    c.cols = b.cols;
    c.data.assign(size_t(c.rows) * c.cols, T(0));
    for (int i = 0; i < a.rows; ++i) {
        T* crow = c.row(i);
        const T* arow = a.row(i);
        for (int m = 0; m < a.cols; ++m) axpy(crow, arow[m], b.row(m), b.cols);
    }
}

// C = A(m x k) * B(n x k)^T
template <typename T>
inline void matmul_nt(Matrix<T>& c, const Matrix<T>& a, const Matrix<T>& b) {
    assert(a.cols == b.cols);
    c.rows = a.rows;
    c.cols = b.rows;
    c.data.resize(size_t(c.rows) * c.cols);
    for (int i = 0; i < a.rows; ++i) {
        T* crow = c.row(i);
        const T* arow = a.row(i);
        for (int j = 0; j < b.rows; ++j) crow[j] = dot(arow, b.row(j), a.cols);
    }
}

// C += A(m x k) * B(k x n)
template <typename T>
inline void matmul_acc(Matrix<T>& c, const Matrix<T>& a, const Matrix<T>& b) {
    assert(a.cols == b.rows);
    assert(c.rows == a.rows && c.cols == b.cols);
    for (int i = 0; i < a.rows; ++i) {
        T* crow = c.row(i);
        const T* arow = a.row(i);
        for (int m = 0; m < a.cols; ++m) axpy(crow, arow[m], b.row(m), b.cols);
    }
}

// C += A(n x m)^T * B(n x k); used for weight gradients.
template <typename T>
inline void matmul_tn_acc(Matrix<T>& c, const Matrix<T>& a, const Matrix<T>& b) {
    assert(a.rows == b.rows);
    assert(c.rows == a.cols && c.cols == b.cols);
    for (int n = 0; n < a.rows; ++n) {
        const T* arow = a.row(n);
        const T* brow = b.row(n);
        for (int m = 0; m < a.cols; ++m) axpy(c.row(m), arow[m], brow, c.cols);
    }
}

} // namespace pixeltext
