#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "paretoq/matrix.hpp"
#include "paretoq/quant.hpp"

namespace paretoq {

/// Fixed-width packed storage layouts. Numeric values double as the on-disk
/// format tag.
enum class PackFormat : std::uint8_t {
    Pack1 = 0,          // 1 bit/weight, levels {-1, +1}
    PackTrit243 = 1,    // base-3 numeral, 5 trits/byte, levels {-2/3, 0, 2/3}
    Pack2 = 2,          // 2 bits/weight, mid-rise levels {-3/4, -1/4, 1/4, 3/4}
    PackTernaryAs2Bit = 3, // ternary stored in 2-bit fields (padded code space)
    Pack3 = 4,          // 3 bits/weight, integer levels -4..3
    Pack4 = 5,          // 4 bits/weight, integer levels -8..7
};

inline const char* pack_format_name(PackFormat f) {
    switch (f) {
        case PackFormat::Pack1: return "pack1";
        case PackFormat::PackTrit243: return "trit243";
        case PackFormat::Pack2: return "pack2";
        case PackFormat::PackTernaryAs2Bit: return "ternary2b";
        case PackFormat::Pack3: return "pack3";
        case PackFormat::Pack4: return "pack4";
    }
    return "?";
}

inline PackFormat pack_format_from_string(const std::string& s) {
    for (auto f : {PackFormat::Pack1, PackFormat::PackTrit243, PackFormat::Pack2,
                   PackFormat::PackTernaryAs2Bit, PackFormat::Pack3, PackFormat::Pack4})
        if (s == pack_format_name(f)) return f;
    throw InvalidSpec("unknown pack format '" + s + "'");
}

inline double pack_bits_per_weight(PackFormat f) {
    switch (f) {
        case PackFormat::Pack1: return 1.0;
        case PackFormat::PackTrit243: return 8.0 / 5.0;
        case PackFormat::Pack2:
        case PackFormat::PackTernaryAs2Bit: return 2.0;
        case PackFormat::Pack3: return 3.0;
        case PackFormat::Pack4: return 4.0;
    }
    return 0.0;
}

/// Normalized level for each code, in code order. The floats are produced by
/// the same expressions the quantizers use, so encode can match exactly.
inline std::vector<float> pack_level_table(PackFormat f) {
    std::vector<float> t;
    switch (f) {
        case PackFormat::Pack1:
            t = {-1.0f, 1.0f};
            break;
        case PackFormat::PackTrit243:
        case PackFormat::PackTernaryAs2Bit:
            t = {-1.0f / 1.5f, 0.0f, 1.0f / 1.5f};
            break;
        case PackFormat::Pack2:
            for (int q = -2; q <= 1; ++q) t.push_back((static_cast<float>(q) + 0.5f) / 2.0f);
            break;
        case PackFormat::Pack3:
            for (int q = -4; q <= 3; ++q) t.push_back(static_cast<float>(q));
            break;
        case PackFormat::Pack4:
            for (int q = -8; q <= 7; ++q) t.push_back(static_cast<float>(q));
            break;
    }
    return t;
}

/// The format a quantizer spec's output packs into.
inline PackFormat pack_format_for(const QuantSpec& spec) {
    switch (spec.bitwidth) {
        case BitWidth::b1: return PackFormat::Pack1;
        case BitWidth::b1_58: return PackFormat::PackTrit243;
        case BitWidth::b2: return PackFormat::Pack2;
        case BitWidth::b3: return PackFormat::Pack3;
        case BitWidth::b4: return PackFormat::Pack4;
    }
    throw InvalidSpec("pack_format_for: unhandled bitwidth");
}

/// Payload bytes for one row: ceil(cols * bits / 8) per format.
inline std::size_t pack_row_bytes(PackFormat f, std::size_t cols) {
    switch (f) {
        case PackFormat::Pack1: return (cols + 7) / 8;
        case PackFormat::PackTrit243: return (cols + 4) / 5;
        case PackFormat::Pack2:
        case PackFormat::PackTernaryAs2Bit: return (cols + 3) / 4;
        case PackFormat::Pack3: return (cols * 3 + 7) / 8;
        case PackFormat::Pack4: return (cols + 1) / 2;
    }
    return 0;
}

/// Exact payload bytes, scales excluded (those add 4 bytes per channel).
inline std::size_t storage_size(PackFormat f, std::size_t rows, std::size_t cols) {
    return rows * pack_row_bytes(f, cols);
}

/// Immutable packed weight matrix: payload plus per-channel scales and the
/// code -> normalized-level table.
struct PackedMatrix {
    PackFormat format = PackFormat::Pack4;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> payload;
    ChannelScales scales;
    std::vector<float> level_table;

    std::size_t row_bytes() const { return pack_row_bytes(format, cols); }
    const std::uint8_t* row_payload(std::size_t r) const { return payload.data() + r * row_bytes(); }
};

namespace detail {

inline int code_for_level(float v, const std::vector<float>& table) {
    for (std::size_t i = 0; i < table.size(); ++i)
        if (v == table[i]) return static_cast<int>(i);
    return -1;
}

// Pack a row of small integer codes into the little-endian bitstream layout:
// code j occupies bits [j*b, (j+1)*b) of the row, bit k lives in byte k/8.
inline void pack_bits(const std::vector<int>& codes, int bits, std::uint8_t* out, std::size_t out_len) {
    std::memset(out, 0, out_len);
    for (std::size_t j = 0; j < codes.size(); ++j) {
        const std::size_t base = j * static_cast<std::size_t>(bits);
        for (int b = 0; b < bits; ++b) {
            if (codes[j] >> b & 1) out[(base + b) / 8] |= static_cast<std::uint8_t>(1u << ((base + b) % 8));
        }
    }
}

inline int unpack_bits(const std::uint8_t* in, std::size_t j, int bits) {
    int v = 0;
    const std::size_t base = j * static_cast<std::size_t>(bits);
    for (int b = 0; b < bits; ++b) {
        v |= ((in[(base + b) / 8] >> ((base + b) % 8)) & 1) << b;
    }
    return v;
}

} // namespace detail

/// Pack a quantizer output. Every w_hat entry must be present in the format's
/// level table (comparison is exact); the scales are carried alongside.
inline PackedMatrix encode(const QuantOutput& q, const ChannelScales& scales, PackFormat format) {
    const Matrix& w = q.w_hat;
    if (scales.size() != 1 && scales.size() != w.rows && !(w.rows == 0 && scales.size() == 0))
        throw ShapeMismatch("encode: expected 1 or " + std::to_string(w.rows) + " scales, got " +
                            std::to_string(scales.size()));
    for (float b : q.beta)
        if (b != 0.0f) throw UnencodableLevel("encode: offset (beta) channels cannot be packed");

    PackedMatrix p;
    p.format = format;
    p.rows = w.rows;
    p.cols = w.cols;
    p.scales = scales;
    p.level_table = pack_level_table(format);
    p.payload.assign(storage_size(format, w.rows, w.cols), 0);

    const std::size_t rb = p.row_bytes();
    std::vector<int> codes(w.cols);
    for (std::size_t r = 0; r < w.rows; ++r) {
        for (std::size_t c = 0; c < w.cols; ++c) {
            const float v = w.at(r, c);
            const int code = detail::code_for_level(v, p.level_table);
            if (code < 0)
                throw UnencodableLevel("encode: value " + std::to_string(v) + " at (" + std::to_string(r) +
                                       ", " + std::to_string(c) + ") is not a " + pack_format_name(format) +
                                       " level");
            codes[c] = code;
        }
        std::uint8_t* out = p.payload.data() + r * rb;
        switch (format) {
            case PackFormat::Pack1: detail::pack_bits(codes, 1, out, rb); break;
            case PackFormat::Pack2:
            case PackFormat::PackTernaryAs2Bit: detail::pack_bits(codes, 2, out, rb); break;
            case PackFormat::Pack3: detail::pack_bits(codes, 3, out, rb); break;
            case PackFormat::Pack4: detail::pack_bits(codes, 4, out, rb); break;
            case PackFormat::PackTrit243: {
                for (std::size_t c = 0; c < w.cols; c += 5) {
                    int byte = 0, weight = 1;
                    for (std::size_t k = c; k < std::min(c + 5, w.cols); ++k) {
                        byte += codes[k] * weight;
                        weight *= 3;
                    }
                    out[c / 5] = static_cast<std::uint8_t>(byte);
                }
                break;
            }
        }
    }
    return p;
}

/// Codes of one row, decoded into ints. Validates the payload.
inline void decode_row_codes(const PackedMatrix& p, std::size_t r, std::vector<int>& codes) {
    codes.resize(p.cols);
    const std::uint8_t* in = p.row_payload(r);
    const int n_levels = static_cast<int>(p.level_table.size());
    switch (p.format) {
        case PackFormat::Pack1:
            for (std::size_t c = 0; c < p.cols; ++c) codes[c] = detail::unpack_bits(in, c, 1);
            break;
        case PackFormat::Pack2:
        case PackFormat::PackTernaryAs2Bit:
            for (std::size_t c = 0; c < p.cols; ++c) codes[c] = detail::unpack_bits(in, c, 2);
            break;
        case PackFormat::Pack3:
            for (std::size_t c = 0; c < p.cols; ++c) codes[c] = detail::unpack_bits(in, c, 3);
            break;
        case PackFormat::Pack4:
            for (std::size_t c = 0; c < p.cols; ++c) codes[c] = detail::unpack_bits(in, c, 4);
            break;
        case PackFormat::PackTrit243:
            for (std::size_t c = 0; c < p.cols; c += 5) {
                int byte = in[c / 5];
                if (byte >= 243)
                    throw CorruptPayload("decode: trit byte " + std::to_string(byte) + " out of range");
                for (std::size_t k = c; k < std::min(c + 5, p.cols); ++k) {
                    codes[k] = byte % 3;
                    byte /= 3;
                }
            }
            break;
    }
    for (std::size_t c = 0; c < p.cols; ++c)
        if (codes[c] >= n_levels)
            throw CorruptPayload("decode: code " + std::to_string(codes[c]) + " at (" + std::to_string(r) +
                                 ", " + std::to_string(c) + ") exceeds the level table");
}

namespace detail {

inline void check_payload(const PackedMatrix& p) {
    const std::size_t want = storage_size(p.format, p.rows, p.cols);
    if (p.payload.size() != want)
        throw CorruptPayload("payload holds " + std::to_string(p.payload.size()) + " bytes, expected " +
                             std::to_string(want));
    if (p.level_table != pack_level_table(p.format)) throw CorruptPayload("level table does not match format");
    if (p.scales.size() != 1 && p.scales.size() != p.rows && !(p.rows == 0 && p.scales.size() == 0))
        throw CorruptPayload("scale count " + std::to_string(p.scales.size()) + " does not match " +
                             std::to_string(p.rows) + " rows");
}

} // namespace detail

/// Normalized levels (w_hat). Exact inverse of encode on the level sequence.
inline Matrix decode_levels(const PackedMatrix& p) {
    detail::check_payload(p);
    Matrix m(p.rows, p.cols);
    std::vector<int> codes;
    for (std::size_t r = 0; r < p.rows; ++r) {
        decode_row_codes(p, r, codes);
        for (std::size_t c = 0; c < p.cols; ++c) m.at(r, c) = p.level_table[codes[c]];
    }
    return m;
}

/// Dequantized values: alpha_r * level, the same 32-bit product the quantizer
/// forward produced.
inline Matrix decode(const PackedMatrix& p) {
    Matrix m = decode_levels(p);
    for (std::size_t r = 0; r < p.rows; ++r) {
        const float a = p.scales.for_row(r);
        for (std::size_t c = 0; c < p.cols; ++c) m.at(r, c) *= a;
    }
    return m;
}

// ---------------------------------------------------------------------------
// On-disk container: magic "PQPK", version u8 = 1, format tag u8, rows u32-LE,
// cols u32-LE, scale-count u32-LE, scales f32-LE x count, payload bytes.

namespace detail {

inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8 & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 16 & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 24 & 0xff));
}

inline std::uint32_t get_u32le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

} // namespace detail

inline std::vector<std::uint8_t> serialize_pqpk(const PackedMatrix& p) {
    detail::check_payload(p);
    std::vector<std::uint8_t> out{'P', 'Q', 'P', 'K'};
    out.reserve(18 + 4 * p.scales.size() + p.payload.size());
    out.push_back(1); // version
    out.push_back(static_cast<std::uint8_t>(p.format));
    detail::put_u32le(out, static_cast<std::uint32_t>(p.rows));
    detail::put_u32le(out, static_cast<std::uint32_t>(p.cols));
    detail::put_u32le(out, static_cast<std::uint32_t>(p.scales.size()));
    for (float a : p.scales.alpha) {
        std::uint32_t bits;
        std::memcpy(&bits, &a, 4);
        detail::put_u32le(out, bits);
    }
    out.insert(out.end(), p.payload.begin(), p.payload.end());
    return out;
}

inline PackedMatrix deserialize_pqpk(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 18) throw CorruptPayload("container shorter than its header");
    if (std::memcmp(bytes.data(), "PQPK", 4) != 0) throw CorruptPayload("bad magic");
    if (bytes[4] != 1) throw CorruptPayload("unsupported container version " + std::to_string(bytes[4]));
    if (bytes[5] > 5) throw CorruptPayload("unknown format tag " + std::to_string(bytes[5]));

    PackedMatrix p;
    p.format = static_cast<PackFormat>(bytes[5]);
    p.rows = detail::get_u32le(bytes.data() + 6);
    p.cols = detail::get_u32le(bytes.data() + 10);
    const std::uint32_t n_scales = detail::get_u32le(bytes.data() + 14);

    const std::size_t payload_len = storage_size(p.format, p.rows, p.cols);
    const std::size_t want = 18 + std::size_t{4} * n_scales + payload_len;
    if (bytes.size() != want)
        throw CorruptPayload("container holds " + std::to_string(bytes.size()) + " bytes, expected " +
                             std::to_string(want));

    p.scales.alpha.resize(n_scales);
    for (std::uint32_t i = 0; i < n_scales; ++i) {
        const std::uint32_t bits = detail::get_u32le(bytes.data() + 18 + 4 * i);
        std::memcpy(&p.scales.alpha[i], &bits, 4);
    }
    p.level_table = pack_level_table(p.format);
    p.payload.assign(bytes.begin() + 18 + 4 * n_scales, bytes.end());

    if (p.rows > 0) p.scales.validate();
    detail::check_payload(p);
    // force a full traversal so corrupt codes surface at load time
    std::vector<int> codes;
    for (std::size_t r = 0; r < p.rows; ++r) decode_row_codes(p, r, codes);
    return p;
}

inline void write_pqpk(const PackedMatrix& p, const std::string& path) {
    const auto bytes = serialize_pqpk(p);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("write_pqpk: cannot open " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("write_pqpk: short write to " + path);
}

inline PackedMatrix read_pqpk(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("read_pqpk: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_pqpk(bytes);
}

} // namespace paretoq
