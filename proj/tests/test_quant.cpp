#include <catch2/catch_amalgamated.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>

#include "paretoq/quant.hpp"
#include "forward_oracle.hpp"

using namespace paretoq;
using Catch::Approx;

namespace {

bool bit_equal(float a, float b) { return std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b); }

QuantSpec spec_for(BitWidth b) { return QuantSpec::paretoq(b); }

const BitWidth kAllWidths[] = {BitWidth::b1, BitWidth::b1_58, BitWidth::b2, BitWidth::b3, BitWidth::b4};

int oracle_tag(BitWidth b) {
    switch (b) {
        case BitWidth::b1: return 1;
        case BitWidth::b1_58: return 158;
        case BitWidth::b2: return 2;
        case BitWidth::b3: return 3;
        case BitWidth::b4: return 4;
    }
    return 0;
}

} // namespace

TEST_CASE("init_scale closed forms") {
    SECTION("1-bit: mean absolute value") {
        Matrix w{0.5f, -1.5f, 1.0f, -1.0f};
        auto s = init_scale(w, spec_for(BitWidth::b1));
        REQUIRE(s.alpha.size() == 1);
        CHECK(s.alpha[0] == 1.0f);
    }
    SECTION("2-bit: max absolute value") {
        Matrix w{0.2f, -0.8f, 0.5f};
        auto s = init_scale(w, spec_for(BitWidth::b2));
        CHECK(s.alpha[0] == 0.8f);
    }
    SECTION("4-bit: max absolute value over top level") {
        Matrix w{1.4f, -0.7f};
        auto s = init_scale(w, spec_for(BitWidth::b4));
        CHECK(s.alpha[0] == Approx(0.2f));
    }
    SECTION("per-channel: one scale per row") {
        Matrix w = Matrix::from_rows({{1.0f, -1.0f}, {4.0f, 0.0f}});
        auto s = init_scale(w, spec_for(BitWidth::b2));
        REQUIRE(s.alpha.size() == 2);
        CHECK(s.alpha[0] == 1.0f);
        CHECK(s.alpha[1] == 4.0f);
    }
    SECTION("per-tensor: single scale") {
        Matrix w = Matrix::from_rows({{1.0f, -1.0f}, {4.0f, 0.0f}});
        auto s = init_scale(w, QuantSpec::paretoq(BitWidth::b2, Granularity::PerTensor));
        REQUIRE(s.alpha.size() == 1);
        CHECK(s.alpha[0] == 4.0f);
    }
    SECTION("all-zero channel is an error") {
        Matrix w = Matrix::from_rows({{1.0f, 2.0f}, {0.0f, 0.0f}});
        for (BitWidth b : kAllWidths) CHECK_THROWS_AS(init_scale(w, spec_for(b)), AllZeroChannel);
    }
}

TEST_CASE("min-max symmetric quantization") {
    SECTION("4-bit example") {
        auto q = quantize_minmax_sym(Matrix{7.0f, -3.5f}, 4);
        CHECK(q.w_q.data[0] == 7.0f);
        CHECK(q.w_q.data[1] == -4.0f); // -3.5 rounds to the even neighbor -4
        CHECK(q.beta.empty());
    }
    SECTION("all-zero channel: zeros with alpha fixed at 1") {
        auto q = quantize_minmax_sym(Matrix{0.0f, 0.0f}, 4);
        CHECK(q.w_q.data[0] == 0.0f);
        CHECK(q.w_q.data[1] == 0.0f);
    }
    SECTION("2-bit tie rounds to even") {
        auto q = quantize_minmax_sym(Matrix{-1.0f, 0.5f}, 2);
        CHECK(q.w_q.data[0] == -1.0f);
        CHECK(q.w_q.data[1] == 0.0f); // 0.5/alpha = 0.5 -> 0
    }
    SECTION("per-channel statistics") {
        auto q = quantize_minmax_sym(Matrix::from_rows({{7.0f, -3.5f}, {0.5f, -0.25f}}), 4);
        CHECK(q.w_q.at(0, 0) == 7.0f);
        CHECK(q.w_q.at(1, 0) == 0.5f);
    }
    SECTION("codes stay inside the symmetric range") {
        std::mt19937 rng(7);
        Matrix w = random_normal(8, 33, rng, 2.0f);
        for (int bits : {2, 3, 4, 8}) {
            auto q = quantize_minmax_sym(w, bits);
            const float top = static_cast<float>((1 << (bits - 1)) - 1);
            for (float v : q.w_hat.data) {
                CHECK(v == std::nearbyintf(v));
                CHECK(std::fabs(v) <= top);
            }
        }
    }
    SECTION("rejects bad bit counts") {
        CHECK_THROWS_AS(quantize_minmax_sym(Matrix{1.0f}, 1), InvalidSpec);
        CHECK_THROWS_AS(quantize_minmax_sym(Matrix{1.0f}, 9), InvalidSpec);
    }
}

TEST_CASE("min-max asymmetric quantization") {
    SECTION("2-bit example: endpoints exact, interior snaps") {
        // min 0, max 1.5 -> alpha = 0.5, beta = 0; 1.2 maps to code 2 -> 1.0
        auto q = quantize_minmax_asym(Matrix{0.0f, 1.2f, 1.5f}, 2);
        REQUIRE(q.beta.size() == 1);
        CHECK(q.beta[0] == 0.0f);
        CHECK(q.w_q.data[0] == 0.0f);
        CHECK(q.w_q.data[1] == 1.0f);
        CHECK(q.w_q.data[2] == 1.5f);
    }
    SECTION("constant channel passes through") {
        auto q = quantize_minmax_asym(Matrix{0.3f, 0.3f, 0.3f}, 4);
        for (float v : q.w_q.data) CHECK(v == 0.3f);
        for (auto m : q.in_range_mask) CHECK(m == 1);
    }
    SECTION("negative-only range") {
        auto q = quantize_minmax_asym(Matrix{-2.0f, -1.0f}, 2);
        CHECK(q.beta[0] == -2.0f);
        CHECK(q.w_q.data[0] == -2.0f);
        CHECK(q.w_q.data[1] == -1.0f); // (-1 + 2)/alpha = 3 -> top code
    }
}

TEST_CASE("stats-based binary quantization") {
    SECTION("mean-absolute scale with signs") {
        auto q = quantize_stats_binary(Matrix{0.5f, -1.5f, 1.0f, -1.0f});
        CHECK(q.w_hat.data == std::vector<float>{1.0f, -1.0f, 1.0f, -1.0f});
        for (std::size_t i = 0; i < 4; ++i) CHECK(q.w_q.data[i] == q.w_hat.data[i] * 1.0f);
    }
    SECTION("all-zero channel is an error") {
        CHECK_THROWS_AS(quantize_stats_binary(Matrix{0.0f}), AllZeroChannel);
    }
    SECTION("constant positive channel") {
        auto q = quantize_stats_binary(Matrix{2.0f, 2.0f});
        CHECK(q.w_q.data[0] == 2.0f);
        CHECK(q.w_q.data[1] == 2.0f);
    }
}

TEST_CASE("stats-based ternary quantization") {
    SECTION("threshold and masked-mean scale") {
        auto q = quantize_stats_ternary(Matrix{1.0f, -0.2f, 0.6f, -1.2f});
        // mean|w| = 0.75, delta = 0.525; kept magnitudes 1.0, 0.6, 1.2
        const float alpha_t = static_cast<float>((1.0 + 0.6 + 1.2) / 3.0);
        CHECK(q.w_hat.data == std::vector<float>{1.0f, 0.0f, 1.0f, -1.0f});
        CHECK(q.w_q.data[0] == Approx(alpha_t));
        CHECK(q.w_q.data[1] == 0.0f);
        CHECK(q.w_q.data[2] == Approx(alpha_t));
        CHECK(q.w_q.data[3] == Approx(-alpha_t));
    }
    SECTION("all-zero channel maps to zeros") {
        auto q = quantize_stats_ternary(Matrix{0.0f, 0.0f});
        CHECK(q.w_q.data[0] == 0.0f);
        CHECK(q.w_q.data[1] == 0.0f);
    }
    SECTION("uniform channel keeps everything") {
        auto q = quantize_stats_ternary(Matrix{1.0f, 1.0f, 1.0f, 1.0f});
        for (float v : q.w_q.data) CHECK(v == 1.0f); // delta = 0.7 < 1, masked mean = 1
    }
}

TEST_CASE("mid-rise forward examples") {
    ChannelScales one(1.0f);
    SECTION("2-bit grid") {
        CHECK(seq_forward(Matrix{0.6f}, one, 4).w_q.data[0] == 0.75f);
        CHECK(seq_forward(Matrix{-2.0f}, one, 4).w_q.data[0] == -0.75f); // clip then -2.5 -> -2
        CHECK(seq_forward(Matrix{0.0f}, one, 4).w_q.data[0] == 0.25f);   // -0.5 rounds to 0
        CHECK(seq_forward(Matrix{-0.6f}, one, 4).w_q.data[0] == -0.75f);
    }
    SECTION("ternary grid") {
        CHECK(seq_forward(Matrix{0.5f}, one, 3).w_q.data[0] == 1.0f / 1.5f);
        CHECK(seq_forward(Matrix{0.2f}, one, 3).w_q.data[0] == 0.0f);
        CHECK(seq_forward(Matrix{-0.5f}, one, 3).w_q.data[0] == -(1.0f / 1.5f));
        CHECK(seq_forward(Matrix{0.0f}, one, 3).w_q.data[0] == 0.0f);
    }
    SECTION("ternary literal flag gives the four-level grid") {
        QuantSpec s = spec_for(BitWidth::b1_58);
        s.seq_four_level_ternary = true;
        CHECK(paretoq_forward(Matrix{0.9f}, one, s).w_q.data[0] == 1.5f / 1.5f);
        CHECK(paretoq_forward(Matrix{0.0f}, one, s).w_q.data[0] == 0.5f / 1.5f); // no zero level
        CHECK(paretoq_forward(Matrix{-0.9f}, one, s).w_q.data[0] == -1.5f / 1.5f);
    }
    SECTION("scale applies after the grid") {
        CHECK(seq_forward(Matrix{3.0f}, ChannelScales(4.0f), 4).w_q.data[0] == 3.0f);
        CHECK(seq_forward(Matrix{1.0f}, ChannelScales(4.0f), 4).w_q.data[0] == 1.0f);
    }
    SECTION("k must be 3 or 4") {
        CHECK_THROWS_AS(seq_forward(Matrix{0.1f}, one, 5), InvalidSpec);
    }
}

TEST_CASE("integer-grid forward examples") {
    ChannelScales one(1.0f);
    CHECK(lsq_forward(Matrix{3.6f}, one, 4).w_q.data[0] == 4.0f);
    CHECK(lsq_forward(Matrix{-9.3f}, one, 4).w_q.data[0] == -8.0f); // clipped at n = -8
    CHECK(lsq_forward(Matrix{0.4f}, ChannelScales(0.5f), 3).w_q.data[0] == 0.5f);
    CHECK(lsq_forward(Matrix{0.0f}, one, 4).w_q.data[0] == 0.0f); // zero is a level
    CHECK(lsq_forward(Matrix{2.5f}, one, 4).w_q.data[0] == 2.0f); // tie to even
    CHECK(lsq_forward(Matrix{3.5f}, one, 4).w_q.data[0] == 4.0f);
    CHECK_THROWS_AS(lsq_forward(Matrix{0.1f}, one, 2), InvalidSpec);
}

TEST_CASE("binary forward examples") {
    CHECK(binary_forward(Matrix{0.3f}, ChannelScales(0.7f)).w_q.data[0] == 0.7f);
    CHECK(binary_forward(Matrix{-1.2f}, ChannelScales(0.7f)).w_q.data[0] == -0.7f);
    CHECK(binary_forward(Matrix{0.0f}, ChannelScales(1.0f)).w_q.data[0] == 1.0f); // Sign(0) = +1
    CHECK(binary_forward(Matrix{-0.0f}, ChannelScales(1.0f)).w_q.data[0] == 1.0f);
}

TEST_CASE("unified forward rejects malformed QuantSpec and scale inputs") {
    ChannelScales one(1.0f);
    QuantSpec bad;
    bad.bitwidth = BitWidth::b1;
    bad.kind = QuantKind::Lsq;
    CHECK_THROWS_AS(paretoq_forward(Matrix{0.1f}, one, bad), InvalidSpec);
    QuantSpec stats;
    stats.bitwidth = BitWidth::b1;
    stats.kind = QuantKind::StatsBinary;
    CHECK_THROWS_AS(paretoq_forward(Matrix{0.1f}, one, stats), InvalidSpec);
    CHECK_THROWS_AS(paretoq_forward(Matrix{0.1f}, ChannelScales(std::vector<float>{1.0f, 1.0f}),
                                    spec_for(BitWidth::b2)),
                    ShapeMismatch);
    CHECK_THROWS_AS(paretoq_forward(Matrix{0.1f}, ChannelScales(-1.0f), spec_for(BitWidth::b2)), Error);
}

TEST_CASE("straight-through backward hand values") {
    // All with upstream gradient 1 and unit gradient scale.
    auto grad1 = [](BitWidth b, float w, float alpha) {
        Matrix m{w}, up{1.0f};
        return paretoq_backward(m, ChannelScales(alpha), spec_for(b), up, 1.0f);
    };

    SECTION("2-bit, in range") {
        auto g = grad1(BitWidth::b2, 0.6f, 1.0f);
        CHECK(g.d_w.data[0] == 1.0f);
        CHECK(g.d_alpha[0] == Approx(0.15f));
    }
    SECTION("2-bit, clipped") {
        auto g = grad1(BitWidth::b2, 2.0f, 1.0f);
        CHECK(g.d_w.data[0] == 0.0f);
        CHECK(g.d_alpha[0] == 0.75f);
    }
    SECTION("1-bit") {
        auto g = grad1(BitWidth::b1, -0.5f, 1.0f);
        CHECK(g.d_w.data[0] == 1.0f);
        CHECK(g.d_alpha[0] == -1.0f);
    }
    SECTION("4-bit, in range") {
        auto g = grad1(BitWidth::b4, 3.6f, 1.0f);
        CHECK(g.d_w.data[0] == 1.0f);
        CHECK(g.d_alpha[0] == Approx(0.4f));
    }
    SECTION("4-bit, clipped") {
        auto g = grad1(BitWidth::b4, 9.0f, 1.0f);
        CHECK(g.d_w.data[0] == 0.0f);
        CHECK(g.d_alpha[0] == 7.0f);
    }
    SECTION("per-channel reduction sums over the row") {
        Matrix w{0.6f, 2.0f}, up{1.0f, 1.0f};
        auto g = paretoq_backward(w, ChannelScales(1.0f), spec_for(BitWidth::b2), up, 1.0f);
        CHECK(g.d_w.data[0] == 1.0f);
        CHECK(g.d_w.data[1] == 0.0f);
        CHECK(g.d_alpha[0] == Approx(0.9f));
    }
    SECTION("upstream gradient scales both outputs") {
        Matrix w{0.6f}, up{2.0f};
        auto g = paretoq_backward(w, ChannelScales(1.0f), spec_for(BitWidth::b2), up, 1.0f);
        CHECK(g.d_w.data[0] == 2.0f);
        CHECK(g.d_alpha[0] == Approx(0.3f));
    }
    SECTION("default gradient scale is 1/sqrt(elements * top level)") {
        Matrix w{0.6f, 0.1f, -0.3f, 1.2f};
        Matrix up(1, 4, 1.0f);
        auto with_g1 = paretoq_backward(w, ChannelScales(1.0f), spec_for(BitWidth::b4), up, 1.0f);
        auto with_def = paretoq_backward(w, ChannelScales(1.0f), spec_for(BitWidth::b4), up);
        const float g = 1.0f / std::sqrt(4.0f * 7.0f);
        CHECK(with_def.d_alpha[0] == Approx(g * with_g1.d_alpha[0]));
        // top level counts as 1 for the sub-integer grids
        auto bin_g1 = paretoq_backward(w, ChannelScales(1.0f), spec_for(BitWidth::b1), up, 1.0f);
        auto bin_def = paretoq_backward(w, ChannelScales(1.0f), spec_for(BitWidth::b1), up);
        CHECK(bin_def.d_alpha[0] == Approx(bin_g1.d_alpha[0] / std::sqrt(4.0f)));
    }
    SECTION("per-tensor scale accumulates over all rows") {
        Matrix w = Matrix::from_rows({{0.6f}, {0.6f}});
        Matrix up(2, 1, 1.0f);
        auto g = paretoq_backward(w, ChannelScales(1.0f), spec_for(BitWidth::b2), up, 1.0f);
        REQUIRE(g.d_alpha.size() == 1);
        CHECK(g.d_alpha[0] == Approx(0.3f));
    }
}

TEST_CASE("level-set membership") {
    std::mt19937 rng(11);
    auto in_set = [](float v, const std::vector<float>& levels) {
        for (float l : levels)
            if (bit_equal(v, l)) return true;
        return false;
    };

    std::vector<float> sets_b1{-1.0f, 1.0f};
    std::vector<float> sets_b158{-1.0f / 1.5f, 0.0f, 1.0f / 1.5f};
    std::vector<float> sets_b2{-1.5f / 2.0f, -0.5f / 2.0f, 0.5f / 2.0f, 1.5f / 2.0f};
    std::vector<float> sets_b3, sets_b4;
    for (int i = -4; i <= 3; ++i) sets_b3.push_back(static_cast<float>(i));
    for (int i = -8; i <= 7; ++i) sets_b4.push_back(static_cast<float>(i));

    Matrix w = random_normal(16, 64, rng, 2.0f);
    ChannelScales alpha(std::vector<float>(16, 0.9f));
    auto check_set = [&](BitWidth b, const std::vector<float>& levels) {
        auto q = paretoq_forward(w, alpha, spec_for(b));
        for (float v : q.w_hat.data) {
            INFO("bitwidth " << bitwidth_name(b) << " value " << v);
            CHECK(in_set(v, levels));
        }
    };
    check_set(BitWidth::b1, sets_b1);
    check_set(BitWidth::b1_58, sets_b158);
    check_set(BitWidth::b2, sets_b2);
    check_set(BitWidth::b3, sets_b3);
    check_set(BitWidth::b4, sets_b4);
}

TEST_CASE("fake_quant is idempotent for fixed scale") {
    std::mt19937 rng(13);
    Matrix w = random_normal(8, 32, rng, 1.5f);
    std::vector<float> a(8);
    for (auto& v : a) v = std::uniform_real_distribution<float>(0.3f, 2.0f)(rng);
    ChannelScales alpha(a);
    for (BitWidth b : kAllWidths) {
        auto once = fake_quant(w, alpha, spec_for(b));
        auto twice = fake_quant(once, alpha, spec_for(b));
        for (std::size_t i = 0; i < once.size(); ++i) {
            INFO("bitwidth " << bitwidth_name(b) << " index " << i);
            CHECK(bit_equal(once.data[i], twice.data[i]));
        }
    }
}

TEST_CASE("scale equivariance") {
    std::mt19937 rng(17);
    Matrix w = random_normal(4, 32, rng, 1.5f);
    ChannelScales alpha(std::vector<float>{0.7f, 1.0f, 1.3f, 2.2f});

    SECTION("power-of-two factors are bitwise exact") {
        for (float c : {0.25f, 0.5f, 2.0f, 8.0f, 1024.0f}) {
            Matrix cw = w;
            for (auto& v : cw.data) v *= c;
            ChannelScales ca = alpha;
            for (auto& v : ca.alpha) v *= c;
            for (BitWidth b : kAllWidths) {
                auto base = paretoq_forward(w, alpha, spec_for(b));
                auto scaled = paretoq_forward(cw, ca, spec_for(b));
                for (std::size_t i = 0; i < w.size(); ++i) {
                    INFO("c " << c << " bitwidth " << bitwidth_name(b) << " index " << i);
                    CHECK(bit_equal(scaled.w_q.data[i], c * base.w_q.data[i]));
                    CHECK(bit_equal(scaled.w_hat.data[i], base.w_hat.data[i]));
                }
            }
        }
    }
    SECTION("general factors preserve the chosen level away from boundaries") {
        // Arbitrary c introduces one rounding in c*w and one in c*alpha, so the
        // ratio w/alpha can move by an ulp; skip points near a level boundary.
        for (float c : {0.37f, 1.9f, 3.14159f}) {
            Matrix cw = w;
            for (auto& v : cw.data) v *= c;
            ChannelScales ca = alpha;
            for (auto& v : ca.alpha) v *= c;
            for (BitWidth b : kAllWidths) {
                auto base = paretoq_forward(w, alpha, spec_for(b));
                auto scaled = paretoq_forward(cw, ca, spec_for(b));
                for (std::size_t r = 0; r < w.rows; ++r)
                    for (std::size_t col = 0; col < w.cols; ++col) {
                        const std::size_t i = r * w.cols + col;
                        const float x = w.data[i] / alpha.for_row(r);
                        const float frac = std::fabs(x * 2.0f - std::nearbyintf(x * 2.0f));
                        if (frac < 1e-3f || std::fabs(std::fabs(x) - 1.0f) < 1e-3f) continue;
                        INFO("c " << c << " bitwidth " << bitwidth_name(b) << " index " << i);
                        CHECK(bit_equal(scaled.w_hat.data[i], base.w_hat.data[i]));
                        CHECK(scaled.w_q.data[i] == Approx(c * base.w_q.data[i]).epsilon(1e-5));
                    }
            }
        }
    }
}

TEST_CASE("gradient-mask consistency") {
    std::mt19937 rng(19);
    Matrix w = random_normal(6, 40, rng, 2.5f);
    Matrix up = random_normal(6, 40, rng, 1.0f);
    ChannelScales alpha(std::vector<float>(6, 0.8f));
    for (BitWidth b : kAllWidths) {
        auto fw = paretoq_forward(w, alpha, spec_for(b));
        auto bw = paretoq_backward(w, alpha, spec_for(b), up, 1.0f);
        for (std::size_t i = 0; i < w.size(); ++i) {
            INFO("bitwidth " << bitwidth_name(b) << " index " << i);
            if (fw.in_range_mask[i])
                CHECK(bw.d_w.data[i] == up.data[i]);
            else
                CHECK(bw.d_w.data[i] == 0.0f);
        }
    }
}

TEST_CASE("forward matches the reference transcription bit for bit") {
    // 1e5 random (w, alpha) scalar pairs per bitwidth, batched as a column
    // matrix with per-channel scales so one call covers all pairs.
    const std::size_t n = 100000;
    std::mt19937 rng(23);
    std::normal_distribution<float> wdist(0.0f, 2.0f);
    std::uniform_real_distribution<float> logad(-2.3f, 2.3f);

    for (BitWidth b : kAllWidths) {
        Matrix w(n, 1);
        std::vector<float> a(n);
        for (std::size_t i = 0; i < n; ++i) {
            w.data[i] = wdist(rng);
            a[i] = std::exp(logad(rng));
        }
        auto q = paretoq_forward(w, ChannelScales(a), spec_for(b));
        std::size_t mismatches = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const float ref = oracle::forward_ref(w.data[i], a[i], oracle_tag(b));
            if (!bit_equal(q.w_q.data[i], ref)) {
                if (++mismatches <= 3) {
                    INFO("bitwidth " << bitwidth_name(b) << " w " << w.data[i] << " alpha " << a[i]);
                    CHECK(q.w_q.data[i] == ref);
                }
            }
        }
        CHECK(mismatches == 0);
    }
}

TEST_CASE("scale gradient matches the clip-surrogate derivative") {
    // Replace rounding with the identity: the surviving clip-compose-affine
    // surrogate g(alpha) = alpha * s(w/alpha) is differentiable away from the
    // clip kinks, so its centered difference must match the closed form with
    // the level value swapped for s(x). 100 non-boundary points per bitwidth.
    std::mt19937 rng(29);
    std::normal_distribution<float> wdist(0.0f, 3.0f);
    std::uniform_real_distribution<float> adist(0.4f, 2.5f);

    auto boundary = [](float x, BitWidth b) {
        auto near = [&](float e) { return std::fabs(x - e) < 0.05f; };
        if (b == BitWidth::b3) return near(-4.0f) || near(3.0f);
        if (b == BitWidth::b4) return near(-8.0f) || near(7.0f);
        return near(-1.0f) || near(1.0f) || (b == BitWidth::b1 && std::fabs(x) < 0.05f);
    };

    for (BitWidth b : kAllWidths) {
        int done = 0;
        while (done < 100) {
            const float wv = wdist(rng);
            const float av = adist(rng);
            if (boundary(wv / av, b)) continue;
            ++done;

            // implementation's per-element scale gradient (upstream 1, g = 1)
            Matrix w{wv}, up{1.0f};
            auto bw = paretoq_backward(w, ChannelScales(av), spec_for(b), up, 1.0f);
            const float what = paretoq_forward(w, ChannelScales(av), spec_for(b)).w_hat.data[0];

            // swap the discrete level for the surrogate's s(x)
            const int tag = oracle_tag(b);
            const double s_of_x = oracle::surrogate_ref(wv, av, tag) / av;
            const double closed = static_cast<double>(bw.d_alpha[0]) - static_cast<double>(what) + s_of_x;

            const double h = 1e-5 * av;
            const double fd = (oracle::surrogate_ref(wv, av + h, tag) - oracle::surrogate_ref(wv, av - h, tag)) / (2.0 * h);

            const double rel = std::fabs(closed - fd) / std::max(std::fabs(fd), 1.0);
            INFO("bitwidth " << bitwidth_name(b) << " w " << wv << " alpha " << av << " closed " << closed
                             << " fd " << fd);
            CHECK(rel < 1e-3);
        }
    }
}

TEST_CASE("binary scale initialization is L2-optimal") {
    // Golden-section search over alpha must land on mean|w| within 1e-5.
    std::mt19937 rng(31);
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    for (int trial = 0; trial < 100; ++trial) {
        Matrix w = random_normal(1, 256, rng, 1.0f);
        auto loss = [&](double alpha) {
            double acc = 0.0;
            for (float v : w.data) {
                const double d = alpha * (v < 0.0f ? -1.0 : 1.0) - v;
                acc += d * d;
            }
            return acc;
        };
        double lo = 0.0, hi = 4.0;
        double c = hi - invphi * (hi - lo), d = lo + invphi * (hi - lo);
        while (hi - lo > 1e-9) {
            if (loss(c) < loss(d)) {
                hi = d;
            } else {
                lo = c;
            }
            c = hi - invphi * (hi - lo);
            d = lo + invphi * (hi - lo);
        }
        const double best = (lo + hi) / 2.0;
        auto s = init_scale(w, spec_for(BitWidth::b1));
        CHECK(std::fabs(best - static_cast<double>(s.alpha[0])) < 1e-5);
    }
}

TEST_CASE("non-finite inputs are rejected") {
    Matrix w{std::numeric_limits<float>::quiet_NaN()};
    CHECK_THROWS_AS(paretoq_forward(w, ChannelScales(1.0f), spec_for(BitWidth::b2)), Error);
    CHECK_THROWS_AS(quantize_minmax_sym(w, 4), Error);
    CHECK_THROWS_AS(quantize_stats_ternary(w), Error);
    Matrix inf{std::numeric_limits<float>::infinity()};
    CHECK_THROWS_AS(init_scale(inf, spec_for(BitWidth::b4)), Error);
}

TEST_CASE("bitwidth helpers") {
    CHECK(bitwidth_from_string("1.58") == BitWidth::b1_58);
    CHECK(bitwidth_from_string("4") == BitWidth::b4);
    CHECK_THROWS_AS(bitwidth_from_string("5"), InvalidSpec);
    CHECK(bitwidth_value(BitWidth::b1_58) == Approx(1.58));
    QuantSpec s4 = QuantSpec::paretoq(BitWidth::b4);
    CHECK(s4.qmin() == -8);
    CHECK(s4.qmax() == 7);
    CHECK(s4.levels() == 16);
    CHECK(QuantSpec::paretoq(BitWidth::b1_58).levels() == 3);
}
