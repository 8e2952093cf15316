#pragma once

// Dense row-major matrix plus the handful of vector kernels the models need.
// Compute precision is binary64 throughout; binary32 appears only in the
// serialized form and in the inference mirrors (see models.hpp).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "codeseed/common.hpp"

namespace codeseed {

using Vector = std::vector<double>;

struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;  // row-major

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    void zero() { std::fill(data.begin(), data.end(), 0.0); }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// y = W^T x. W is (in x out), x has length in, y gets length out.
inline void mul_vec_t(const Matrix& W, const double* x, double* y) {
    std::fill(y, y + W.cols, 0.0);
    for (int i = 0; i < W.rows; ++i) {
        const double xi = x[i];
        const double* row = W.row(i);
        for (int o = 0; o < W.cols; ++o) y[o] += xi * row[o];
    }
}

// y = W v. W is (in x out), v has length out, y gets length in.
inline void mul_vec(const Matrix& W, const double* v, double* y) {
    for (int i = 0; i < W.rows; ++i) {
        const double* row = W.row(i);
        double acc = 0.0;
        for (int o = 0; o < W.cols; ++o) acc += row[o] * v[o];
        y[i] = acc;
    }
}

// dW += x (outer) dy. x has length rows, dy length cols.
inline void add_outer(Matrix& dW, const double* x, const double* dy) {
    for (int i = 0; i < dW.rows; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        double* row = dW.row(i);
        for (int o = 0; o < dW.cols; ++o) row[o] += xi * dy[o];
    }
}

inline double dot(const double* a, const double* b, int n) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

// Max-subtracted softmax, in place.
inline void softmax_inplace(Vector& v) {
    double mx = *std::max_element(v.begin(), v.end());
    double z = 0.0;
    for (double& e : v) {
        e = std::exp(e - mx);
        z += e;
    }
    const double inv = 1.0 / z;
    for (double& e : v) e *= inv;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline bool all_finite(const Matrix& m) {
    for (double v : m.data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace codeseed
