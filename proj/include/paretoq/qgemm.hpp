#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "paretoq/bitpack.hpp"
#include "paretoq/matrix.hpp"

namespace paretoq {

namespace detail {

// The gemv kernels run off a per-column-block lookup table: for block k and
// payload byte b, T[k*256 + b] is the dot product of the levels b decodes to
// with the x slice the block covers. A row reduces to one table add per
// payload byte, so kernel time tracks payload bytes, which is the point of
// sub-byte storage. Entries for invalid bytes are zero; callers reject such
// payloads before the row loop runs.
struct BlockTables {
    std::vector<float> t; // row_bytes * 256
};

inline void build_block_tables_bits(const PackedMatrix& p, std::span<const float> x, int bits,
                                    const float* levels, BlockTables& bt) {
    const std::size_t rb = p.row_bytes();
    const int per_byte = 8 / bits;
    const int half = per_byte / 2; // elements in one nibble
    bt.t.assign(rb * 256, 0.0f);
    const int code_mask = (1 << bits) - 1;

    std::vector<float> xe(rb * per_byte, 0.0f); // x padded to whole bytes
    for (std::size_t c = 0; c < p.cols; ++c) xe[c] = x[c];

    float n_lo[16], n_hi[16];
    for (std::size_t k = 0; k < rb; ++k) {
        const float* xb = xe.data() + k * per_byte;
        for (int v = 0; v < 16; ++v) {
            float lo = 0.0f, hi = 0.0f;
            for (int j = 0; j < half; ++j) {
                lo += levels[(v >> (j * bits)) & code_mask] * xb[j];
                hi += levels[(v >> (j * bits)) & code_mask] * xb[half + j];
            }
            n_lo[v] = lo;
            n_hi[v] = hi;
        }
        float* tk = bt.t.data() + k * 256;
        for (int b = 0; b < 256; ++b) tk[b] = n_lo[b & 0xF] + n_hi[b >> 4];
    }
}

inline void build_block_tables_trit(const PackedMatrix& p, std::span<const float> x, BlockTables& bt) {
    const std::size_t rb = p.row_bytes();
    bt.t.assign(rb * 256, 0.0f);
    const float levels[3] = {-1.0f / 1.5f, 0.0f, 1.0f / 1.5f};

    std::vector<float> xe(rb * 5, 0.0f);
    for (std::size_t c = 0; c < p.cols; ++c) xe[c] = x[c];

    float n_lo[27], n_hi[9];
    for (std::size_t k = 0; k < rb; ++k) {
        const float* xb = xe.data() + k * 5;
        for (int v = 0; v < 27; ++v)
            n_lo[v] = levels[v % 3] * xb[0] + levels[v / 3 % 3] * xb[1] + levels[v / 9] * xb[2];
        for (int v = 0; v < 9; ++v) n_hi[v] = levels[v % 3] * xb[3] + levels[v / 3] * xb[4];
        float* tk = bt.t.data() + k * 256;
        for (int b = 0; b < 243; ++b) tk[b] = n_lo[b % 27] + n_hi[b / 27];
    }
}

inline void build_block_tables(const PackedMatrix& p, std::span<const float> x, BlockTables& bt) {
    float padded[4];
    switch (p.format) {
        case PackFormat::Pack1: {
            const float levels[2] = {-1.0f, 1.0f};
            build_block_tables_bits(p, x, 1, levels, bt);
            break;
        }
        case PackFormat::Pack2: {
            float levels[4];
            for (int q = -2; q <= 1; ++q) levels[q + 2] = (static_cast<float>(q) + 0.5f) / 2.0f;
            build_block_tables_bits(p, x, 2, levels, bt);
            break;
        }
        case PackFormat::PackTernaryAs2Bit: {
            padded[0] = -1.0f / 1.5f;
            padded[1] = 0.0f;
            padded[2] = 1.0f / 1.5f;
            padded[3] = 0.0f; // code 3 never survives validation
            build_block_tables_bits(p, x, 2, padded, bt);
            break;
        }
        case PackFormat::PackTrit243:
            build_block_tables_trit(p, x, bt);
            break;
        case PackFormat::Pack4: {
            float levels[16];
            for (int q = -8; q <= 7; ++q) levels[q + 8] = static_cast<float>(q);
            build_block_tables_bits(p, x, 4, levels, bt);
            break;
        }
        case PackFormat::Pack3:
            break; // Pack3 rows decode through a shifting bit window instead
    }
}

// Reject payload bytes that encode out-of-table codes so the zero entries in
// the lookup tables can never contribute.
inline void check_payload_bytes(const PackedMatrix& p) {
    if (p.format == PackFormat::PackTrit243) {
        for (std::uint8_t b : p.payload)
            if (b >= 243) throw CorruptPayload("gemv: trit byte " + std::to_string(b) + " out of range");
    } else if (p.format == PackFormat::PackTernaryAs2Bit) {
        for (std::uint8_t b : p.payload)
            if ((b & 3) == 3 || (b >> 2 & 3) == 3 || (b >> 4 & 3) == 3 || (b >> 6 & 3) == 3)
                throw CorruptPayload("gemv: 2-bit field holds code 3, not a ternary level");
    }
}

// One row via the block tables: one table add per payload byte, four parallel
// accumulators folded in a fixed order so results do not depend on threading.
inline float row_dot_tables(const std::uint8_t* row, std::size_t rb, const float* t) {
    float a0 = 0.0f, a1 = 0.0f, a2 = 0.0f, a3 = 0.0f;
    std::size_t k = 0;
    for (; k + 4 <= rb; k += 4) {
        a0 += t[(k + 0) * 256 + row[k + 0]];
        a1 += t[(k + 1) * 256 + row[k + 1]];
        a2 += t[(k + 2) * 256 + row[k + 2]];
        a3 += t[(k + 3) * 256 + row[k + 3]];
    }
    for (; k < rb; ++k) a0 += t[k * 256 + row[k]];
    return (a0 + a1) + (a2 + a3);
}

// Pack3 crosses byte boundaries, so rows walk a shifting bit window over the
// payload and look levels up directly; per-block tables would need a 16 MiB
// table per column position at 3 bits.
inline float row_dot_pack3(const std::uint8_t* row, std::size_t cols, std::span<const float> x) {
    float acc = 0.0f;
    std::uint32_t window = 0;
    int held = 0;
    std::size_t byte = 0;
    for (std::size_t c = 0; c < cols; ++c) {
        while (held < 3) {
            window |= static_cast<std::uint32_t>(row[byte++]) << held;
            held += 8;
        }
        const int code = static_cast<int>(window & 7u);
        window >>= 3;
        held -= 3;
        acc += static_cast<float>(code - 4) * x[c];
    }
    return acc;
}

} // namespace detail

/// y[r] = alpha_r * sum_c levels[r,c] * x[c], accumulated in 32-bit reals.
/// Bitwise identical output for every thread count.
inline std::vector<float> gemv_packed(const PackedMatrix& p, std::span<const float> x, int threads = 1) {
    if (x.size() != p.cols)
        throw ShapeMismatch("gemv_packed: x has " + std::to_string(x.size()) + " entries, matrix has " +
                            std::to_string(p.cols) + " columns");
    for (float v : x)
        if (!std::isfinite(v)) throw Error("gemv_packed: non-finite entry in x");
    detail::check_payload(p);
    detail::check_payload_bytes(p);
    if (threads < 1) threads = 1;

    std::vector<float> y(p.rows, 0.0f);
    if (p.rows == 0) return y;

    detail::BlockTables bt;
    detail::build_block_tables(p, x, bt);
    const std::size_t rb = p.row_bytes();

    auto run_rows = [&](std::size_t r0, std::size_t r1) {
        if (p.format == PackFormat::Pack3) {
            for (std::size_t r = r0; r < r1; ++r)
                y[r] = p.scales.for_row(r) * detail::row_dot_pack3(p.row_payload(r), p.cols, x);
        } else {
            for (std::size_t r = r0; r < r1; ++r)
                y[r] = p.scales.for_row(r) * detail::row_dot_tables(p.row_payload(r), rb, bt.t.data());
        }
    };

    const std::size_t nt = std::min<std::size_t>(static_cast<std::size_t>(threads), p.rows);
    if (nt <= 1) {
        run_rows(0, p.rows);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(nt);
        const std::size_t chunk = (p.rows + nt - 1) / nt;
        for (std::size_t t = 0; t < nt; ++t) {
            const std::size_t r0 = t * chunk;
            const std::size_t r1 = std::min(p.rows, r0 + chunk);
            if (r0 < r1) pool.emplace_back(run_rows, r0, r1);
        }
        for (auto& th : pool) th.join();
    }
    return y;
}

/// Column j of the result is gemv_packed(p, column j of X).
inline Matrix gemm_packed(const PackedMatrix& p, const Matrix& X, int threads = 1) {
    if (X.rows != p.cols)
        throw ShapeMismatch("gemm_packed: X has " + std::to_string(X.rows) + " rows, matrix has " +
                            std::to_string(p.cols) + " columns");
    Matrix out(p.rows, X.cols);
    std::vector<float> col(p.cols);
    for (std::size_t j = 0; j < X.cols; ++j) {
        for (std::size_t i = 0; i < X.rows; ++i) col[i] = X.at(i, j);
        const auto y = gemv_packed(p, col, threads);
        for (std::size_t r = 0; r < p.rows; ++r) out.at(r, j) = y[r];
    }
    return out;
}

struct BenchReport {
    PackFormat format = PackFormat::Pack4;
    std::size_t rows = 0;
    std::size_t cols = 0;
    int reps = 0;
    int threads = 1;
    std::size_t payload_bytes = 0;
    double ns_per_call = 0.0;
    double effective_bandwidth = 0.0; // payload bytes * reps / elapsed seconds
};

/// Deterministic random packed matrix for benchmarking: uniform codes, one
/// positive scale per row.
inline PackedMatrix make_bench_matrix(PackFormat f, std::size_t rows, std::size_t cols, std::uint32_t seed) {
    PackedMatrix p;
    p.format = f;
    p.rows = rows;
    p.cols = cols;
    p.level_table = pack_level_table(f);
    p.payload.assign(storage_size(f, rows, cols), 0);

    std::mt19937 rng(seed ^ (static_cast<std::uint32_t>(f) << 20));
    std::uniform_int_distribution<int> code_dist(0, static_cast<int>(p.level_table.size()) - 1);
    std::uniform_real_distribution<float> scale_dist(0.5f, 2.0f);

    p.scales.alpha.resize(rows);
    for (auto& a : p.scales.alpha) a = scale_dist(rng);

    const std::size_t rb = p.row_bytes();
    std::vector<int> codes(cols);
    for (std::size_t r = 0; r < rows; ++r) {
        for (auto& c : codes) c = code_dist(rng);
        std::uint8_t* out = p.payload.data() + r * rb;
        switch (f) {
            case PackFormat::Pack1: detail::pack_bits(codes, 1, out, rb); break;
            case PackFormat::Pack2:
            case PackFormat::PackTernaryAs2Bit: detail::pack_bits(codes, 2, out, rb); break;
            case PackFormat::Pack3: detail::pack_bits(codes, 3, out, rb); break;
            case PackFormat::Pack4: detail::pack_bits(codes, 4, out, rb); break;
            case PackFormat::PackTrit243:
                for (std::size_t c = 0; c < cols; c += 5) {
                    int byte = 0, weight = 1;
                    for (std::size_t k = c; k < std::min(c + 5, cols); ++k) {
                        byte += codes[k] * weight;
                        weight *= 3;
                    }
                    out[c / 5] = static_cast<std::uint8_t>(byte);
                }
                break;
        }
    }
    return p;
}

/// Time gemv_packed on a seeded workload. Two warm-up calls are excluded from
/// the measurement; the timed region covers `reps` back-to-back calls.
inline BenchReport run_bench(PackFormat f, std::size_t rows, std::size_t cols, int reps, int threads = 1) {
    if (reps < 1) throw InvalidSpec("run_bench: reps must be >= 1");
    if (threads < 1) threads = 1;

    const PackedMatrix p = make_bench_matrix(f, rows, cols, 0xb7a5u);
    std::mt19937 rng(0x5eedu);
    std::normal_distribution<float> xd(0.0f, 1.0f);
    std::vector<float> x(cols);
    for (auto& v : x) v = xd(rng);

    volatile float sink = 0.0f;
    for (int i = 0; i < 2; ++i) sink = sink + gemv_packed(p, x, threads)[0];

    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) sink = sink + gemv_packed(p, x, threads)[0];
    const auto t1 = std::chrono::steady_clock::now();
    (void)sink;

    const double ns = static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
    BenchReport r;
    r.format = f;
    r.rows = rows;
    r.cols = cols;
    r.reps = reps;
    r.threads = threads;
    r.payload_bytes = p.payload.size();
    r.ns_per_call = ns / reps;
    r.effective_bandwidth = static_cast<double>(r.payload_bytes) * reps / (ns * 1e-9);
    return r;
}

inline std::string bench_csv_header() { return "format,rows,cols,threads,reps,ns_per_call,bytes_per_second"; }

inline std::string bench_csv_row(const BenchReport& r) {
    std::ostringstream os;
    os << pack_format_name(r.format) << ',' << r.rows << ',' << r.cols << ',' << r.threads << ',' << r.reps
       << ',' << static_cast<long long>(r.ns_per_call) << ',' << static_cast<long long>(r.effective_bandwidth);
    return os.str();
}

} // namespace paretoq
