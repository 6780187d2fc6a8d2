#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "paretoq/errors.hpp"

namespace paretoq {

/// Model footprint description: weight count and bit width for the body and
/// the embedding-analog separately, since mixed-precision variants quantize
/// them differently.
struct SizeSpec {
    long long n_weights = 0;
    double weight_bits = 16.0;
    long long n_embedding_weights = 0;
    double embedding_bits = 16.0;
    // Ternary accounting: false = analytic log2(3) bits per weight,
    // true = the 1.6 bits/weight that five-trits-per-byte packing achieves.
    bool storage_honest = false;

    void validate() const {
        if (n_weights < 0 || n_embedding_weights < 0) throw InvalidSpec("SizeSpec: negative weight count");
        for (double b : {weight_bits, embedding_bits}) {
            static constexpr double allowed[] = {1.0, 1.58, 2.0, 3.0, 4.0, 8.0, 16.0};
            bool ok = false;
            for (double a : allowed) ok = ok || b == a;
            if (!ok) throw InvalidSpec("SizeSpec: bits must be one of 1, 1.58, 2, 3, 4, 8, 16");
        }
    }
};

/// (#weights * weight-bits + #embedding-weights * embedding-bits) / 8 bytes.
inline double effective_size(const SizeSpec& spec) {
    spec.validate();
    auto bits_of = [&](double b) {
        if (b == 1.58) return spec.storage_honest ? 1.6 : std::log2(3.0);
        return b;
    };
    return (static_cast<double>(spec.n_weights) * bits_of(spec.weight_bits) +
            static_cast<double>(spec.n_embedding_weights) * bits_of(spec.embedding_bits)) /
           8.0;
}

struct ParetoPoint {
    double size_bytes = 0.0;
    double metric = 0.0; // higher is better
    std::string label;
};

/// Points not dominated by any other (size <= and metric >= with at least one
/// strict). Output is sorted by size; exact ties keep their first occurrence.
inline std::vector<ParetoPoint> pareto_front(const std::vector<ParetoPoint>& points) {
    if (points.empty()) throw InvalidSpec("pareto_front: empty point set");
    for (const ParetoPoint& p : points)
        if (!(p.size_bytes > 0.0)) throw InvalidSpec("pareto_front: size_bytes must be positive");

    std::vector<ParetoPoint> sorted = points;
    std::stable_sort(sorted.begin(), sorted.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
        if (a.size_bytes != b.size_bytes) return a.size_bytes < b.size_bytes;
        return a.metric > b.metric;
    });

    // After sorting by (size asc, metric desc), a point survives exactly when
    // its metric strictly beats everything smaller-or-equal seen so far;
    // equal (size, metric) duplicates fall out for free.
    std::vector<ParetoPoint> front;
    double best = -std::numeric_limits<double>::infinity();
    for (const ParetoPoint& p : sorted) {
        if (p.metric > best) {
            front.push_back(p);
            best = p.metric;
        }
    }
    return front;
}

} // namespace paretoq
