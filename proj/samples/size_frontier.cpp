// Sketch an accuracy-size trade-off: score a few synthetic model variants at
// different body/embedding bit widths, then keep only the ones no other
// variant beats on both axes.

#include <cstdio>
#include <string>
#include <vector>

#include "paretoq/pareto.hpp"

using namespace paretoq;

int main() {
    // A made-up model family: 10M body weights, 2M embedding weights, and a
    // toy accuracy model where each extra bit helps with diminishing returns.
    const long long n_body = 10'000'000, n_embed = 2'000'000;
    const double body_bits[] = {1.0, 1.58, 2.0, 3.0, 4.0};
    const double embed_bits[] = {2.0, 4.0, 16.0};

    std::vector<ParetoPoint> pts;
    for (double wb : body_bits) {
        for (double eb : embed_bits) {
            SizeSpec s;
            s.n_weights = n_body;
            s.weight_bits = wb;
            s.n_embedding_weights = n_embed;
            s.embedding_bits = eb;
            ParetoPoint p;
            p.size_bytes = effective_size(s);
            p.metric = 0.70 - 0.25 / wb - 0.02 / eb; // pretend accuracy
            p.label = "w" + std::to_string(wb).substr(0, 4) + "-e" + std::to_string(eb).substr(0, 4);
            pts.push_back(p);
        }
    }

    std::printf("candidates: %zu\n", pts.size());
    std::printf("%-14s %14s %10s\n", "label", "size (MiB)", "metric");
    for (const ParetoPoint& p : pareto_front(pts))
        std::printf("%-14s %14.2f %10.4f\n", p.label.c_str(), p.size_bytes / (1024.0 * 1024.0), p.metric);
    return 0;
}
