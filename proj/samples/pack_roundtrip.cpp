// Quantize one random weight matrix at every supported bit width, pack it,
// push it through a file round-trip, and report reconstruction error and
// storage cost side by side.

#include <cstdio>
#include <random>

#include "paretoq/bitpack.hpp"
#include "paretoq/quant.hpp"

using namespace paretoq;

int main() {
    std::mt19937 rng(7);
    const Matrix w = random_normal(64, 256, rng, 0.5f);

    std::printf("%-6s %-10s %10s %12s %12s\n", "bits", "format", "bytes", "rel L2 err", "roundtrip");
    for (BitWidth b : {BitWidth::b1, BitWidth::b1_58, BitWidth::b2, BitWidth::b3, BitWidth::b4}) {
        const QuantSpec spec = QuantSpec::paretoq(b, Granularity::PerChannel);
        const ChannelScales alpha = init_scale(w, spec);
        const QuantOutput q = paretoq_forward(w, alpha, spec);
        const PackedMatrix packed = encode(q, alpha, pack_format_for(spec));

        const char* path = "/tmp/pack_roundtrip_sample.pqpk";
        write_pqpk(packed, path);
        const Matrix back = decode(read_pqpk(path));

        double err = 0.0, norm = 0.0;
        bool exact = true;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double d = back.data[i] - w.data[i];
            err += d * d;
            norm += static_cast<double>(w.data[i]) * w.data[i];
            exact = exact && back.data[i] == q.w_q.data[i];
        }
        std::remove(path);

        std::printf("%-6s %-10s %10zu %12.4f %12s\n", bitwidth_name(b),
                    pack_format_name(packed.format), packed.payload.size(), std::sqrt(err / norm),
                    exact ? "exact" : "MISMATCH");
    }
    return 0;
}
