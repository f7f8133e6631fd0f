#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace slateope {

// Dense row-major matrix of doubles. Just enough for the MLP machinery;
// the inner loops below are ordered so gcc vectorizes them.
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double* row(size_t i) { return data.data() + i * cols; }
    const double* row(size_t i) const { return data.data() + i * cols; }

    double& operator()(size_t i, size_t j) { return data[i * cols + j]; }
    double operator()(size_t i, size_t j) const { return data[i * cols + j]; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
    size_t size() const { return data.size(); }
};

// C = A * B            (M x K) * (K x N)
inline void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c) {
    assert(a.cols == b.rows);
    c = Matrix(a.rows, b.cols);
    const size_t kdim = a.cols, n = b.cols;
    for (size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (size_t k = 0; k < kdim; ++k) {
            const double aik = arow[k];
            const double* brow = b.row(k);
            for (size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

inline Matrix transpose(const Matrix& a) {
    Matrix t(a.cols, a.rows);
    for (size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        for (size_t j = 0; j < a.cols; ++j) t(j, i) = arow[j];
    }
    return t;
}

// C = A * B^T          (M x K) * (N x K)^T
// Transposes B once and reuses the broadcast kernel; the dot-product form
// vectorizes about 3x worse here.
inline void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c) {
    assert(a.cols == b.cols);
    const Matrix bt = transpose(b);
    matmul_nn(a, bt, c);
}

// C = A^T * B          (K x M)^T * (K x N)
inline void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c) {
    assert(a.rows == b.rows);
    c = Matrix(a.cols, b.cols);
    const size_t n = b.cols;
    for (size_t k = 0; k < a.rows; ++k) {
        const double* arow = a.row(k);
        const double* brow = b.row(k);
        for (size_t i = 0; i < a.cols; ++i) {
            const double aki = arow[i];
            double* crow = c.row(i);
            for (size_t j = 0; j < n; ++j) crow[j] += aki * brow[j];
        }
    }
}

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double mean(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

// Population variance (divide by n), the convention used for the
// multi-seed MSE = bias^2 + variance decomposition.
inline double population_variance(std::span<const double> v) {
    const double m = mean(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

// Unbiased sample variance (divide by n-1).
inline double sample_variance(std::span<const double> v) {
    assert(v.size() >= 2);
    const double m = mean(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return acc / static_cast<double>(v.size() - 1);
}

}  // namespace slateope
