#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "paretoq/matrix.hpp"

namespace paretoq {

enum class BitWidth : std::uint8_t { b1, b1_58, b2, b3, b4 };
enum class QuantKind : std::uint8_t {
    ElasticBinary, // 1-bit, alpha * Sign(w)
    Seq,           // stretched elastic quant, mid-rise grid (1.58 / 2-bit)
    Lsq,           // learned step size, integer grid including 0 (3 / 4-bit)
    MinMaxSym,
    MinMaxAsym,
    StatsBinary,
    StatsTernary,
};
enum class Granularity : std::uint8_t { PerChannel, PerTensor };

inline double bitwidth_value(BitWidth b) {
    switch (b) {
        case BitWidth::b1: return 1.0;
        case BitWidth::b1_58: return 1.58;
        case BitWidth::b2: return 2.0;
        case BitWidth::b3: return 3.0;
        case BitWidth::b4: return 4.0;
    }
    return 0.0;
}

inline const char* bitwidth_name(BitWidth b) {
    switch (b) {
        case BitWidth::b1: return "1";
        case BitWidth::b1_58: return "1.58";
        case BitWidth::b2: return "2";
        case BitWidth::b3: return "3";
        case BitWidth::b4: return "4";
    }
    return "?";
}

inline BitWidth bitwidth_from_string(const std::string& s) {
    if (s == "1") return BitWidth::b1;
    if (s == "1.58") return BitWidth::b1_58;
    if (s == "2") return BitWidth::b2;
    if (s == "3") return BitWidth::b3;
    if (s == "4") return BitWidth::b4;
    throw InvalidSpec("unknown bitwidth '" + s + "' (expected 1, 1.58, 2, 3 or 4)");
}

/// Bit width + quantizer kind + scale granularity. Selects one branch of the
/// unified forward mapping.
///
/// Derived constants: the level count k is 3 in the ternary case and
/// 2^bitwidth otherwise; the integer grid for the Lsq branch is n..p with
/// n = -2^(bitwidth-1), p = 2^(bitwidth-1) - 1.
struct QuantSpec {
    BitWidth bitwidth = BitWidth::b4;
    QuantKind kind = QuantKind::Lsq;
    Granularity granularity = Granularity::PerChannel;
    // Evaluate the ternary mid-rise formula verbatim (which yields the four
    // levels {-1, -1/3, 1/3, 1}) instead of the default balanced 3-level grid
    // {-2/3, 0, 2/3}. Only meaningful for kind == Seq at 1.58 bits.
    bool seq_four_level_ternary = false;

    int levels() const { return bitwidth == BitWidth::b1_58 ? 3 : 1 << int_bits(); }
    int qmin() const { return -(1 << (int_bits() - 1)); }    // n
    int qmax() const { return (1 << (int_bits() - 1)) - 1; } // p

    void validate() const {
        switch (kind) {
            case QuantKind::ElasticBinary:
                if (bitwidth != BitWidth::b1) throw InvalidSpec("ElasticBinary requires bitwidth 1");
                break;
            case QuantKind::Seq:
                if (bitwidth != BitWidth::b1_58 && bitwidth != BitWidth::b2)
                    throw InvalidSpec("Seq requires bitwidth 1.58 or 2");
                break;
            case QuantKind::Lsq:
                if (bitwidth != BitWidth::b3 && bitwidth != BitWidth::b4)
                    throw InvalidSpec("Lsq requires bitwidth 3 or 4");
                break;
            case QuantKind::StatsBinary:
                if (bitwidth != BitWidth::b1) throw InvalidSpec("StatsBinary requires bitwidth 1");
                break;
            case QuantKind::StatsTernary:
                if (bitwidth != BitWidth::b1_58) throw InvalidSpec("StatsTernary requires bitwidth 1.58");
                break;
            case QuantKind::MinMaxSym:
            case QuantKind::MinMaxAsym:
                if (bitwidth == BitWidth::b1 || bitwidth == BitWidth::b1_58)
                    throw InvalidSpec("min-max quantization requires an integer bitwidth >= 2");
                break;
        }
    }

    /// The learnable quantizer the unified forward uses for a bit width.
    static QuantSpec paretoq(BitWidth b, Granularity g = Granularity::PerChannel) {
        QuantSpec s;
        s.bitwidth = b;
        s.granularity = g;
        switch (b) {
            case BitWidth::b1: s.kind = QuantKind::ElasticBinary; break;
            case BitWidth::b1_58:
            case BitWidth::b2: s.kind = QuantKind::Seq; break;
            case BitWidth::b3:
            case BitWidth::b4: s.kind = QuantKind::Lsq; break;
        }
        return s;
    }

  private:
    int int_bits() const {
        switch (bitwidth) {
            case BitWidth::b1: return 1;
            case BitWidth::b1_58: return 2; // storage width; levels() is 3
            case BitWidth::b2: return 2;
            case BitWidth::b3: return 3;
            case BitWidth::b4: return 4;
        }
        return 0;
    }
};

/// Result of a forward quantization pass.
///  - w_q:   dequantized values, w_q = alpha * w_hat (+ beta for the
///           asymmetric quantizer; beta is empty everywhere else)
///  - w_hat: normalized levels, members of the quantizer's finite level set
///  - in_range_mask: 1 where the straight-through weight gradient passes
struct QuantOutput {
    Matrix w_q;
    Matrix w_hat;
    std::vector<std::uint8_t> in_range_mask; // rows*cols
    std::vector<float> beta;                 // per-channel offset; empty = zero

    bool in_range(std::size_t r, std::size_t c) const { return in_range_mask[r * w_q.cols + c] != 0; }
};

struct GradPair {
    Matrix d_w;
    std::vector<float> d_alpha; // same length as the ChannelScales
};

namespace detail {

// Round to nearest, ties to even, sign of zero normalized to +0 so quantized
// levels have a single representation. Relies on the default FE_TONEAREST
// floating-point environment.
inline float round_half_even(float x) {
    float r = std::nearbyintf(x);
    return r == 0.0f ? 0.0f : r;
}

inline float clip(float x, float lo, float hi) { return std::min(std::max(x, lo), hi); }

// Sign with Sign(0) := +1 (and Sign(-0) := +1).
inline float sign(float x) { return x < 0.0f ? -1.0f : 1.0f; }

inline std::size_t channel_count(const Matrix& w, Granularity g) {
    return g == Granularity::PerTensor ? 1 : w.rows;
}

inline void check_alpha_shape(const Matrix& w, const ChannelScales& alpha, const char* what) {
    if (alpha.size() != 1 && alpha.size() != w.rows)
        throw ShapeMismatch(std::string(what) + ": expected 1 or " + std::to_string(w.rows) +
                            " scales, got " + std::to_string(alpha.size()));
}

// Iterate channels as (row begin, row end) index ranges over w.data.
template <typename Fn>
inline void for_each_channel(const Matrix& w, Granularity g, Fn&& fn) {
    if (g == Granularity::PerTensor) {
        fn(std::size_t{0}, std::size_t{0}, w.size());
    } else {
        for (std::size_t r = 0; r < w.rows; ++r) fn(r, r * w.cols, (r + 1) * w.cols);
    }
}

} // namespace detail

/// Scale initialization. Binary uses the closed-form L2-optimal mean of
/// absolute values; the mid-rise grids use max-abs; the integer grids use
/// max-abs divided by the top positive level p.
inline ChannelScales init_scale(const Matrix& w, const QuantSpec& spec) {
    spec.validate();
    check_finite(w, "init_scale");
    if (w.size() == 0) throw Error("init_scale: empty matrix");

    ChannelScales out;
    out.alpha.resize(detail::channel_count(w, spec.granularity));
    detail::for_each_channel(w, spec.granularity, [&](std::size_t ch, std::size_t b, std::size_t e) {
        float a = 0.0f;
        switch (spec.bitwidth) {
            case BitWidth::b1: {
                double sum = 0.0;
                for (std::size_t i = b; i < e; ++i) sum += std::fabs(w.data[i]);
                a = static_cast<float>(sum / static_cast<double>(e - b));
                break;
            }
            case BitWidth::b1_58:
            case BitWidth::b2: {
                for (std::size_t i = b; i < e; ++i) a = std::max(a, std::fabs(w.data[i]));
                break;
            }
            case BitWidth::b3:
            case BitWidth::b4: {
                for (std::size_t i = b; i < e; ++i) a = std::max(a, std::fabs(w.data[i]));
                a /= static_cast<float>(spec.qmax());
                break;
            }
        }
        if (!(a > 0.0f))
            throw AllZeroChannel("init_scale: channel " + std::to_string(ch) + " is all zero");
        out.alpha[ch] = a;
    });
    return out;
}

/// Symmetric min-max quantization: alpha = max|w| / (2^(bits-1) - 1),
/// beta = 0, codes clamped to +-(2^(bits-1)-1). Per-channel statistics.
/// All-zero channels quantize to zero with the degenerate convention alpha = 1.
inline QuantOutput quantize_minmax_sym(const Matrix& w, int bits) {
    if (bits < 2 || bits > 8) throw InvalidSpec("quantize_minmax_sym: bits must be in [2, 8]");
    check_finite(w, "quantize_minmax_sym");

    const int q_abs = (1 << (bits - 1)) - 1;
    QuantOutput out;
    out.w_q = Matrix(w.rows, w.cols);
    out.w_hat = Matrix(w.rows, w.cols);
    out.in_range_mask.assign(w.size(), 0);

    detail::for_each_channel(w, Granularity::PerChannel, [&](std::size_t, std::size_t b, std::size_t e) {
        float amax = 0.0f;
        for (std::size_t i = b; i < e; ++i) amax = std::max(amax, std::fabs(w.data[i]));
        const float alpha = amax > 0.0f ? amax / static_cast<float>(q_abs) : 1.0f;
        for (std::size_t i = b; i < e; ++i) {
            const float q = detail::round_half_even(w.data[i] / alpha);
            const int qi = std::clamp(static_cast<int>(q), -q_abs, q_abs);
            out.in_range_mask[i] = (q >= static_cast<float>(-q_abs) && q <= static_cast<float>(q_abs)) ? 1 : 0;
            out.w_hat.data[i] = static_cast<float>(qi);
            out.w_q.data[i] = alpha * out.w_hat.data[i];
        }
    });
    return out;
}

/// Asymmetric min-max quantization: alpha = (max - min) / (2^bits - 1),
/// beta = min, codes in [0, 2^bits - 1]. Per-channel statistics. A constant
/// channel passes through unchanged with the convention alpha = 1.
inline QuantOutput quantize_minmax_asym(const Matrix& w, int bits) {
    if (bits < 2 || bits > 8) throw InvalidSpec("quantize_minmax_asym: bits must be in [2, 8]");
    check_finite(w, "quantize_minmax_asym");

    const int q_top = (1 << bits) - 1;
    QuantOutput out;
    out.w_q = Matrix(w.rows, w.cols);
    out.w_hat = Matrix(w.rows, w.cols);
    out.in_range_mask.assign(w.size(), 0);
    out.beta.assign(w.rows, 0.0f);

    detail::for_each_channel(w, Granularity::PerChannel, [&](std::size_t ch, std::size_t b, std::size_t e) {
        float lo = w.data[b], hi = w.data[b];
        for (std::size_t i = b; i < e; ++i) {
            lo = std::min(lo, w.data[i]);
            hi = std::max(hi, w.data[i]);
        }
        if (hi == lo) {
            // constant channel: identity
            out.beta[ch] = lo;
            for (std::size_t i = b; i < e; ++i) {
                out.w_hat.data[i] = 0.0f;
                out.w_q.data[i] = w.data[i];
                out.in_range_mask[i] = 1;
            }
            return;
        }
        const float alpha = (hi - lo) / static_cast<float>(q_top);
        out.beta[ch] = lo;
        for (std::size_t i = b; i < e; ++i) {
            const float q = detail::round_half_even((w.data[i] - lo) / alpha);
            const int qi = std::clamp(static_cast<int>(q), 0, q_top);
            out.in_range_mask[i] = (q >= 0.0f && q <= static_cast<float>(q_top)) ? 1 : 0;
            out.w_hat.data[i] = static_cast<float>(qi);
            out.w_q.data[i] = alpha * out.w_hat.data[i] + lo;
        }
    });
    return out;
}

/// Stats-based binary: alpha = mean|w| per channel, w_q = alpha * Sign(w).
inline QuantOutput quantize_stats_binary(const Matrix& w) {
    check_finite(w, "quantize_stats_binary");

    QuantOutput out;
    out.w_q = Matrix(w.rows, w.cols);
    out.w_hat = Matrix(w.rows, w.cols);
    out.in_range_mask.assign(w.size(), 1);

    detail::for_each_channel(w, Granularity::PerChannel, [&](std::size_t ch, std::size_t b, std::size_t e) {
        double sum = 0.0;
        for (std::size_t i = b; i < e; ++i) sum += std::fabs(w.data[i]);
        const float alpha = static_cast<float>(sum / static_cast<double>(e - b));
        if (!(alpha > 0.0f))
            throw AllZeroChannel("quantize_stats_binary: channel " + std::to_string(ch) + " is all zero");
        for (std::size_t i = b; i < e; ++i) {
            out.w_hat.data[i] = detail::sign(w.data[i]);
            out.w_q.data[i] = alpha * out.w_hat.data[i];
        }
    });
    return out;
}

/// Stats-based ternary: threshold Delta = 0.7 * mean|w|; surviving weights
/// get the masked mean magnitude times their sign, the rest go to zero.
/// An empty mask (all |w| <= Delta) yields zeros with the convention alpha = 1.
inline QuantOutput quantize_stats_ternary(const Matrix& w) {
    check_finite(w, "quantize_stats_ternary");

    QuantOutput out;
    out.w_q = Matrix(w.rows, w.cols);
    out.w_hat = Matrix(w.rows, w.cols);
    out.in_range_mask.assign(w.size(), 1);

    detail::for_each_channel(w, Granularity::PerChannel, [&](std::size_t, std::size_t b, std::size_t e) {
        double sum = 0.0;
        for (std::size_t i = b; i < e; ++i) sum += std::fabs(w.data[i]);
        const float delta = 0.7f * static_cast<float>(sum / static_cast<double>(e - b));

        double kept = 0.0;
        std::size_t kept_n = 0;
        for (std::size_t i = b; i < e; ++i) {
            if (std::fabs(w.data[i]) > delta) {
                kept += std::fabs(w.data[i]);
                ++kept_n;
            }
        }
        const float alpha = kept_n ? static_cast<float>(kept / static_cast<double>(kept_n)) : 1.0f;
        for (std::size_t i = b; i < e; ++i) {
            const bool keep = std::fabs(w.data[i]) > delta;
            out.w_hat.data[i] = keep ? detail::sign(w.data[i]) : 0.0f;
            out.w_q.data[i] = alpha * out.w_hat.data[i];
        }
    });
    return out;
}

namespace detail {

// One scalar of the mid-rise (SEQ) forward. k is the level count: 4 for
// 2-bit, 3 for ternary. The default ternary grid is the balanced 3-level
// {-2/3, 0, 2/3}; four_level_ternary selects the verbatim stretched
// evaluation instead.
inline float seq_level_scalar(float x, int k, bool four_level_ternary) {
    if (k == 4) {
        const float q = round_half_even(clip(x, -1.0f, 1.0f) * 2.0f - 0.5f);
        const int qi = std::clamp(static_cast<int>(q), -2, 1);
        return (static_cast<float>(qi) + 0.5f) / 2.0f;
    }
    if (four_level_ternary) {
        const float q = round_half_even(clip(x, -1.0f, 1.0f) * 1.5f - 0.5f);
        const int qi = std::clamp(static_cast<int>(q), -2, 1);
        return (static_cast<float>(qi) + 0.5f) / 1.5f;
    }
    const float q = round_half_even(clip(x, -1.0f, 1.0f) * 1.5f);
    const int qi = std::clamp(static_cast<int>(q), -1, 1);
    return static_cast<float>(qi) / 1.5f;
}

inline float lsq_level_scalar(float x, int n, int p) {
    const float q = round_half_even(clip(x, static_cast<float>(n), static_cast<float>(p)));
    const int qi = std::clamp(static_cast<int>(q), n, p);
    return static_cast<float>(qi);
}

} // namespace detail

/// Stretched elastic quant forward. k = 4 gives the 2-bit grid
/// {-3/4, -1/4, 1/4, 3/4}; k = 3 the ternary grid. in_range is |w/alpha| < 1.
inline QuantOutput seq_forward(const Matrix& w, const ChannelScales& alpha, int k,
                               bool four_level_ternary = false) {
    if (k != 3 && k != 4) throw InvalidSpec("seq_forward: k must be 3 or 4");
    check_finite(w, "seq_forward");
    alpha.validate();
    detail::check_alpha_shape(w, alpha, "seq_forward");

    QuantOutput out;
    out.w_q = Matrix(w.rows, w.cols);
    out.w_hat = Matrix(w.rows, w.cols);
    out.in_range_mask.assign(w.size(), 0);
    for (std::size_t r = 0; r < w.rows; ++r) {
        const float a = alpha.for_row(r);
        for (std::size_t c = 0; c < w.cols; ++c) {
            const std::size_t i = r * w.cols + c;
            const float x = w.data[i] / a;
            out.w_hat.data[i] = detail::seq_level_scalar(x, k, four_level_ternary);
            out.w_q.data[i] = a * out.w_hat.data[i];
            out.in_range_mask[i] = std::fabs(x) < 1.0f ? 1 : 0;
        }
    }
    return out;
}

/// Learned-step-size forward: integer grid n..p (0 included).
/// in_range is n < w/alpha < p, strict on both sides.
inline QuantOutput lsq_forward(const Matrix& w, const ChannelScales& alpha, int bits) {
    if (bits != 3 && bits != 4) throw InvalidSpec("lsq_forward: bits must be 3 or 4");
    check_finite(w, "lsq_forward");
    alpha.validate();
    detail::check_alpha_shape(w, alpha, "lsq_forward");

    const int n = -(1 << (bits - 1));
    const int p = (1 << (bits - 1)) - 1;
    QuantOutput out;
    out.w_q = Matrix(w.rows, w.cols);
    out.w_hat = Matrix(w.rows, w.cols);
    out.in_range_mask.assign(w.size(), 0);
    for (std::size_t r = 0; r < w.rows; ++r) {
        const float a = alpha.for_row(r);
        for (std::size_t c = 0; c < w.cols; ++c) {
            const std::size_t i = r * w.cols + c;
            const float x = w.data[i] / a;
            out.w_hat.data[i] = detail::lsq_level_scalar(x, n, p);
            out.w_q.data[i] = a * out.w_hat.data[i];
            out.in_range_mask[i] = (x > static_cast<float>(n) && x < static_cast<float>(p)) ? 1 : 0;
        }
    }
    return out;
}

/// Elastic binarization forward: w_q = alpha * Sign(w), Sign(0) := +1.
inline QuantOutput binary_forward(const Matrix& w, const ChannelScales& alpha) {
    check_finite(w, "binary_forward");
    alpha.validate();
    detail::check_alpha_shape(w, alpha, "binary_forward");

    QuantOutput out;
    out.w_q = Matrix(w.rows, w.cols);
    out.w_hat = Matrix(w.rows, w.cols);
    out.in_range_mask.assign(w.size(), 0);
    for (std::size_t r = 0; r < w.rows; ++r) {
        const float a = alpha.for_row(r);
        for (std::size_t c = 0; c < w.cols; ++c) {
            const std::size_t i = r * w.cols + c;
            out.w_hat.data[i] = detail::sign(w.data[i]);
            out.w_q.data[i] = a * out.w_hat.data[i];
            out.in_range_mask[i] = std::fabs(w.data[i] / a) < 1.0f ? 1 : 0;
        }
    }
    return out;
}

/// Unified forward: dispatches to the per-bit-width branch.
inline QuantOutput paretoq_forward(const Matrix& w, const ChannelScales& alpha, const QuantSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case QuantKind::ElasticBinary: return binary_forward(w, alpha);
        case QuantKind::Seq:
            return seq_forward(w, alpha, spec.levels(), spec.seq_four_level_ternary);
        case QuantKind::Lsq: return lsq_forward(w, alpha, spec.bitwidth == BitWidth::b3 ? 3 : 4);
        default:
            throw InvalidSpec("paretoq_forward: kind must be ElasticBinary, Seq or Lsq");
    }
}

/// Straight-through gradients for the unified forward.
///
/// d_w[i] = upstream[i] inside the clip range, 0 outside. The per-element
/// scale gradient is Sign(w) for 1-bit and w_hat - (w/alpha) * in_range for
/// the other branches; per-channel reduction multiplies by the gradient
/// scale g (default 1/sqrt(N_ch * p), the customary step-size scaling, with
/// p = 1 for bit widths <= 2).
inline GradPair paretoq_backward(const Matrix& w, const ChannelScales& alpha, const QuantSpec& spec,
                                 const Matrix& upstream, std::optional<float> alpha_grad_scale = std::nullopt) {
    spec.validate();
    check_same_shape(w, upstream, "paretoq_backward");
    check_finite(w, "paretoq_backward");
    check_finite(upstream, "paretoq_backward upstream");
    detail::check_alpha_shape(w, alpha, "paretoq_backward");

    const QuantOutput fw = paretoq_forward(w, alpha, spec);

    const std::size_t n_channels = alpha.size();
    const std::size_t n_ch = w.size() / n_channels; // elements per channel
    const float p_eff = spec.kind == QuantKind::Lsq ? static_cast<float>(spec.qmax()) : 1.0f;
    const float g = alpha_grad_scale.value_or(1.0f / std::sqrt(static_cast<float>(n_ch) * p_eff));

    GradPair out;
    out.d_w = Matrix(w.rows, w.cols);
    out.d_alpha.assign(n_channels, 0.0f);

    for (std::size_t r = 0; r < w.rows; ++r) {
        const std::size_t ch = alpha.per_tensor() ? 0 : r;
        const float a = alpha.for_row(r);
        double acc = 0.0;
        for (std::size_t c = 0; c < w.cols; ++c) {
            const std::size_t i = r * w.cols + c;
            const bool in_range = fw.in_range_mask[i] != 0;
            out.d_w.data[i] = in_range ? upstream.data[i] : 0.0f;

            float d_alpha_elem;
            if (spec.kind == QuantKind::ElasticBinary) {
                d_alpha_elem = detail::sign(w.data[i]);
            } else {
                const float x = w.data[i] / a;
                d_alpha_elem = fw.w_hat.data[i] - (in_range ? x : 0.0f);
            }
            acc += static_cast<double>(upstream.data[i]) * static_cast<double>(d_alpha_elem);
        }
        out.d_alpha[ch] += g * static_cast<float>(acc);
    }
    return out;
}

/// Quantize-dequantize: the forward's w_q only.
inline Matrix fake_quant(const Matrix& w, const ChannelScales& alpha, const QuantSpec& spec) {
    return paretoq_forward(w, alpha, spec).w_q;
}

} // namespace paretoq
