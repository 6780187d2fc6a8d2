#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "paretoq/matrix.hpp"

namespace paretoq {

/// Frozen two-layer network whose argmax output labels the synthetic corpus.
/// Reconstructing it from the same seed yields the same weights, so labels
/// are a checkable deterministic function of the inputs.
struct Teacher {
    Matrix w1; // input_dim x hidden
    Matrix w2; // hidden x n_classes

    Matrix logits(const Matrix& x) const {
        Matrix h(x.rows, w1.cols);
        for (std::size_t i = 0; i < x.rows; ++i)
            for (std::size_t k = 0; k < x.cols; ++k) {
                const float v = x.at(i, k);
                for (std::size_t j = 0; j < w1.cols; ++j) h.at(i, j) += v * w1.at(k, j);
            }
        for (float& v : h.data)
            if (v < 0.0f) v = 0.0f;
        Matrix out(x.rows, w2.cols);
        for (std::size_t i = 0; i < h.rows; ++i)
            for (std::size_t k = 0; k < h.cols; ++k) {
                const float v = h.at(i, k);
                for (std::size_t j = 0; j < w2.cols; ++j) out.at(i, j) += v * w2.at(k, j);
            }
        return out;
    }

    int label(const Matrix& logit_rows, std::size_t r) const {
        int best = 0;
        for (std::size_t c = 1; c < logit_rows.cols; ++c)
            if (logit_rows.at(r, c) > logit_rows.at(r, best)) best = static_cast<int>(c);
        return best;
    }
};

inline Teacher make_teacher(std::uint32_t seed, std::size_t input_dim, std::size_t n_classes) {
    std::mt19937 rng(seed);
    const std::size_t hidden = 32;
    Teacher t;
    t.w1 = random_normal(input_dim, hidden, rng, 1.0f / std::sqrt(static_cast<float>(input_dim)));
    t.w2 = random_normal(hidden, n_classes, rng, 1.0f / std::sqrt(static_cast<float>(hidden)));
    return t;
}

struct Dataset {
    Matrix train_x;
    std::vector<int> train_y;
    Matrix val_x;
    std::vector<int> val_y;
    std::size_t input_dim = 0;
    std::size_t n_classes = 0;
};

/// Deterministic sequence-classification corpus: random normal inputs labeled
/// by a frozen random teacher, split 90/10 into train/validation.
inline Dataset gen_dataset(std::uint32_t seed, std::size_t n_samples, std::size_t input_dim = 16,
                           std::size_t n_classes = 8) {
    if (n_samples < 1) throw InvalidSpec("gen_dataset: need at least one sample");
    const Teacher teacher = make_teacher(seed, input_dim, n_classes);
    std::mt19937 rng(seed ^ 0x9e3779b9u);
    Matrix x = random_normal(n_samples, input_dim, rng);
    const Matrix logits = teacher.logits(x);

    const std::size_t n_val = n_samples / 10;
    const std::size_t n_train = n_samples - n_val;

    Dataset ds;
    ds.input_dim = input_dim;
    ds.n_classes = n_classes;
    ds.train_x = Matrix(n_train, input_dim);
    ds.val_x = Matrix(n_val, input_dim);
    ds.train_y.resize(n_train);
    ds.val_y.resize(n_val);
    for (std::size_t i = 0; i < n_train; ++i) {
        for (std::size_t c = 0; c < input_dim; ++c) ds.train_x.at(i, c) = x.at(i, c);
        ds.train_y[i] = teacher.label(logits, i);
    }
    for (std::size_t i = 0; i < n_val; ++i) {
        for (std::size_t c = 0; c < input_dim; ++c) ds.val_x.at(i, c) = x.at(n_train + i, c);
        ds.val_y[i] = teacher.label(logits, n_train + i);
    }
    return ds;
}

/// Mean cross-entropy of always predicting the empirical label distribution;
/// a student has learned something once it beats this.
inline float label_entropy_baseline(const std::vector<int>& labels, std::size_t n_classes) {
    std::vector<double> counts(n_classes, 0.0);
    for (int y : labels) counts[static_cast<std::size_t>(y)] += 1.0;
    double h = 0.0;
    const double n = static_cast<double>(labels.size());
    for (double c : counts)
        if (c > 0.0) h -= (c / n) * std::log(c / n);
    return static_cast<float>(h);
}

} // namespace paretoq
