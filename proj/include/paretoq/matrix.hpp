#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "paretoq/errors.hpp"

namespace paretoq {

/// Dense row-major 2-D array of 32-bit reals. The universal weight and
/// activation carrier; every module boundary rejects non-finite entries.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data; // rows * cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}

    // Single-row convenience, used heavily in tests.
    Matrix(std::initializer_list<float> row) : rows(1), cols(row.size()), data(row) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<float>> rws) {
        Matrix m;
        m.rows = rws.size();
        m.cols = rws.size() ? rws.begin()->size() : 0;
        m.data.reserve(m.rows * m.cols);
        for (const auto& r : rws) {
            if (r.size() != m.cols) throw ShapeMismatch("from_rows: ragged initializer");
            m.data.insert(m.data.end(), r.begin(), r.end());
        }
        return m;
    }

    float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline void check_finite(const Matrix& m, const char* what) {
    if (!m.all_finite()) throw Error(std::string(what) + ": non-finite entry");
}

inline void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeMismatch(std::string(what) + ": " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                            " vs " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
}

/// Learnable scale vector: one positive alpha per output channel (= matrix
/// row), or a single entry for per-tensor granularity.
struct ChannelScales {
    std::vector<float> alpha;

    ChannelScales() = default;
    explicit ChannelScales(std::vector<float> a) : alpha(std::move(a)) {}
    explicit ChannelScales(float a) : alpha{a} {}

    std::size_t size() const { return alpha.size(); }
    bool per_tensor() const { return alpha.size() == 1; }

    // Scale for a given weight row.
    float for_row(std::size_t r) const { return alpha.size() == 1 ? alpha[0] : alpha[r]; }

    void validate() const {
        for (float a : alpha)
            if (!(a > 0.0f) || !std::isfinite(a)) throw Error("ChannelScales: alpha must be finite and > 0");
    }
};

inline Matrix transposed(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c) t.at(c, r) = m.at(r, c);
    return t;
}

inline Matrix random_normal(std::size_t rows, std::size_t cols, std::mt19937& rng, float stddev = 1.0f) {
    Matrix m(rows, cols);
    std::normal_distribution<float> dist(0.0f, stddev);
    for (auto& v : m.data) v = dist(rng);
    return m;
}

inline Matrix random_uniform(std::size_t rows, std::size_t cols, std::mt19937& rng, float lo, float hi) {
    Matrix m(rows, cols);
    std::uniform_real_distribution<float> dist(lo, hi);
    for (auto& v : m.data) v = dist(rng);
    return m;
}

} // namespace paretoq
