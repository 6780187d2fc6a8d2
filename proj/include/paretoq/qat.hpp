#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "paretoq/autodiff.hpp"
#include "paretoq/dataset.hpp"
#include "paretoq/optim.hpp"
#include "paretoq/quant.hpp"

namespace paretoq {

/// Division of a fixed step budget between full-precision pretraining and
/// quantization-aware finetuning. Ratio 0 trains quantized from scratch;
/// ratio 1 is full-precision training followed by one-shot quantization.
struct BudgetSplit {
    long total_steps = 0;
    double fp_ratio = 0.0;

    long fp_steps() const { return std::lround(fp_ratio * static_cast<double>(total_steps)); }
    long qat_steps() const { return total_steps - fp_steps(); }

    void validate() const {
        if (total_steps < 0) throw InvalidSpec("BudgetSplit: negative step budget");
        if (!(fp_ratio >= 0.0 && fp_ratio <= 1.0)) throw InvalidSpec("BudgetSplit: ratio outside [0, 1]");
    }
};

struct TrainConfig {
    std::uint32_t seed = 1;
    std::size_t n_samples = 20000;
    std::size_t batch_size = 32;
    std::size_t input_dim = 16;
    std::size_t hidden = 128;
    std::size_t n_classes = 8;
    float fp_lr = 1e-3f;
    float qat_lr = 2e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float fp_weight_decay = 0.0f;
    float qat_weight_decay = 0.0f;
    QuantSpec spec = QuantSpec::paretoq(BitWidth::b2, Granularity::PerChannel);
    std::optional<float> alpha_grad_scale; // empty = the quantizer's default

    void validate() const {
        if (n_samples < 10) throw InvalidSpec("TrainConfig: corpus too small to split");
        if (batch_size < 1) throw InvalidSpec("TrainConfig: batch_size must be positive");
        if (input_dim < 1 || hidden < 1 || n_classes < 2) throw InvalidSpec("TrainConfig: degenerate model shape");
        if (!(fp_lr > 0.0f) || !(qat_lr > 0.0f)) throw InvalidSpec("TrainConfig: learning rates must be positive");
        spec.validate();
    }
};

/// Four-layer MLP: embed, two quantizable hidden layers, output head. The
/// first and last layers always stay in full precision. Hidden weights are
/// stored input x output; quantized phases work on the transposed view so
/// scales attach to output channels.
struct ModelParams {
    Matrix w0, b0; // input_dim x hidden, 1 x hidden
    Matrix w1, b1; // hidden x hidden
    Matrix w2, b2; // hidden x hidden
    Matrix w3, b3; // hidden x n_classes
    Matrix alpha1, alpha2; // hidden x 1 once a quantized phase has initialized them

    bool has_scales() const { return alpha1.size() > 0; }
};

inline ModelParams init_model(const TrainConfig& cfg, std::uint32_t seed) {
    std::mt19937 rng(seed);
    auto he = [&](std::size_t in, std::size_t out) {
        return random_normal(in, out, rng, std::sqrt(2.0f / static_cast<float>(in)));
    };
    ModelParams p;
    p.w0 = he(cfg.input_dim, cfg.hidden);
    p.b0 = Matrix(1, cfg.hidden);
    p.w1 = he(cfg.hidden, cfg.hidden);
    p.b1 = Matrix(1, cfg.hidden);
    p.w2 = he(cfg.hidden, cfg.hidden);
    p.b2 = Matrix(1, cfg.hidden);
    p.w3 = he(cfg.hidden, cfg.n_classes);
    p.b3 = Matrix(1, cfg.n_classes);
    return p;
}

namespace detail {

struct MlpNodes {
    Graph g;
    int x = -1, t = -1;
    int w0 = -1, b0 = -1, w1 = -1, b1 = -1, w2 = -1, b2 = -1, w3 = -1, b3 = -1;
    int a1 = -1, a2 = -1;
};

/// Builds the training graph. In a quantized build, w1/w2 enter as
/// output x input parameters wrapped in fake quantization with the given
/// scale columns; otherwise they stay plain matmul weights.
inline MlpNodes build_mlp(const TrainConfig& cfg, const ModelParams& p, std::size_t batch, bool quantized,
                          const Matrix* alpha1, const Matrix* alpha2) {
    MlpNodes m;
    Graph& g = m.g;
    m.x = g.input(batch, cfg.input_dim);
    m.w0 = g.parameter(p.w0);
    m.b0 = g.parameter(p.b0);
    int h = g.relu(g.bias_add(g.matmul(m.x, m.w0), m.b0));

    if (quantized) {
        m.w1 = g.parameter(transposed(p.w1));
        m.a1 = g.parameter(*alpha1);
        m.b1 = g.parameter(p.b1);
        h = g.relu(g.bias_add(g.fake_quant_linear(h, m.w1, m.a1, cfg.spec, -1, cfg.alpha_grad_scale), m.b1));
        m.w2 = g.parameter(transposed(p.w2));
        m.a2 = g.parameter(*alpha2);
        m.b2 = g.parameter(p.b2);
        h = g.relu(g.bias_add(g.fake_quant_linear(h, m.w2, m.a2, cfg.spec, -1, cfg.alpha_grad_scale), m.b2));
    } else {
        m.w1 = g.parameter(p.w1);
        m.b1 = g.parameter(p.b1);
        h = g.relu(g.bias_add(g.matmul(h, m.w1), m.b1));
        m.w2 = g.parameter(p.w2);
        m.b2 = g.parameter(p.b2);
        h = g.relu(g.bias_add(g.matmul(h, m.w2), m.b2));
    }

    m.w3 = g.parameter(p.w3);
    m.b3 = g.parameter(p.b3);
    int logits = g.bias_add(g.matmul(h, m.w3), m.b3);
    m.t = g.input(batch, 1);
    g.softmax_cross_entropy(logits, m.t);
    return m;
}

inline Matrix scale_column(const Matrix& w_out_by_in, const QuantSpec& spec) {
    const ChannelScales s = init_scale(w_out_by_in, spec);
    Matrix col(s.size(), 1);
    for (std::size_t i = 0; i < s.size(); ++i) col.at(i, 0) = s.alpha[i];
    return col;
}

inline void read_back(const MlpNodes& m, bool quantized, ModelParams& out) {
    out.w0 = m.g.value(m.w0);
    out.b0 = m.g.value(m.b0);
    out.b1 = m.g.value(m.b1);
    out.b2 = m.g.value(m.b2);
    out.w3 = m.g.value(m.w3);
    out.b3 = m.g.value(m.b3);
    if (quantized) {
        out.w1 = transposed(m.g.value(m.w1));
        out.w2 = transposed(m.g.value(m.w2));
        out.alpha1 = m.g.value(m.a1);
        out.alpha2 = m.g.value(m.a2);
    } else {
        out.w1 = m.g.value(m.w1);
        out.w2 = m.g.value(m.w2);
    }
}

inline Matrix targets_to_column(const std::vector<int>& y, std::size_t lo, std::size_t n) {
    Matrix t(n, 1);
    for (std::size_t i = 0; i < n; ++i) t.at(i, 0) = static_cast<float>(y[lo + i]);
    return t;
}

} // namespace detail

struct PhaseResult {
    ModelParams params;
    std::vector<float> losses; // one training-batch loss per step
};

/// One learning-rate cycle: cosine decay from the phase's initial rate to
/// zero over `steps`, fresh optimizer state. A quantized phase re-derives its
/// scales from the incoming weights before the first step, so zero steps
/// leaves the model exactly one-shot quantized.
inline PhaseResult train_phase(const TrainConfig& cfg, const Dataset& ds, const ModelParams& init, long steps,
                               bool quantized, std::uint32_t batch_seed) {
    cfg.validate();
    if (steps < 0) throw InvalidSpec("train_phase: negative step count");

    PhaseResult res;
    res.params = init;
    Matrix a1, a2;
    if (quantized) {
        a1 = detail::scale_column(transposed(init.w1), cfg.spec);
        a2 = detail::scale_column(transposed(init.w2), cfg.spec);
        res.params.alpha1 = a1;
        res.params.alpha2 = a2;
    }
    if (steps == 0) return res;

    detail::MlpNodes m = detail::build_mlp(cfg, init, cfg.batch_size, quantized, &a1, &a2);
    Graph& g = m.g;

    AdamWConfig opt;
    opt.beta1 = cfg.beta1;
    opt.beta2 = cfg.beta2;
    opt.weight_decay = quantized ? cfg.qat_weight_decay : cfg.fp_weight_decay;
    const float base_lr = quantized ? cfg.qat_lr : cfg.fp_lr;

    const std::vector<int>& params = g.parameters();
    std::vector<AdamWState> states(params.size());

    std::mt19937 brng(batch_seed);
    const std::size_t n_train = ds.train_x.rows;
    Matrix bx(cfg.batch_size, cfg.input_dim);
    Matrix bt(cfg.batch_size, 1);

    res.losses.reserve(static_cast<std::size_t>(steps));
    for (long step = 0; step < steps; ++step) {
        for (std::size_t i = 0; i < cfg.batch_size; ++i) {
            const std::size_t idx = static_cast<std::size_t>(brng() % n_train);
            for (std::size_t c = 0; c < cfg.input_dim; ++c) bx.at(i, c) = ds.train_x.at(idx, c);
            bt.at(i, 0) = static_cast<float>(ds.train_y[idx]);
        }
        g.set_value(m.x, bx);
        g.set_value(m.t, bt);
        res.losses.push_back(g.forward());
        g.backward();

        opt.lr = cosine_lr(base_lr, step, steps);
        for (std::size_t pi = 0; pi < params.size(); ++pi)
            adamw_step(g.mutable_value(params[pi]), g.grad(params[pi]), states[pi], opt);
        if (quantized) {
            clamp_min(g.mutable_value(m.a1), 1e-8f);
            clamp_min(g.mutable_value(m.a2), 1e-8f);
        }
    }

    detail::read_back(m, quantized, res.params);
    return res;
}

/// Full-dataset loss of the model as stored (quantized = with fake-quantized
/// hidden layers). Quantized evaluation of a model that never trained under
/// quantization derives its scales on the spot, which is exactly one-shot
/// post-training quantization.
inline float eval_loss(const TrainConfig& cfg, const ModelParams& p, const Matrix& x, const std::vector<int>& y,
                       bool quantized) {
    Matrix a1, a2;
    if (quantized) {
        a1 = p.has_scales() ? p.alpha1 : detail::scale_column(transposed(p.w1), cfg.spec);
        a2 = p.has_scales() ? p.alpha2 : detail::scale_column(transposed(p.w2), cfg.spec);
    }
    detail::MlpNodes m = detail::build_mlp(cfg, p, x.rows, quantized, &a1, &a2);
    m.g.set_value(m.x, x);
    m.g.set_value(m.t, detail::targets_to_column(y, 0, y.size()));
    return m.g.forward();
}

struct SweepPoint {
    double ratio = 0.0;
    long fp_steps = 0;
    long qat_steps = 0;
    float val_loss = 0.0f;
    std::vector<float> fp_curve;
    std::vector<float> qat_curve;
};

inline std::vector<double> default_ratio_grid() {
    return {0.0, 0.01, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9, 0.95, 0.99, 1.0};
}

/// For each ratio: full-precision phase, then quantization-aware phase on the
/// remaining budget, both from the same seed; reports final validation loss
/// under quantized evaluation. Runs share nothing, so they may be spread
/// over worker threads without changing any result.
inline std::vector<SweepPoint> run_budget_sweep(const TrainConfig& cfg, long total_steps,
                                                const std::vector<double>& ratios = default_ratio_grid(),
                                                int threads = 1) {
    cfg.validate();
    const Dataset ds = gen_dataset(cfg.seed, cfg.n_samples, cfg.input_dim, cfg.n_classes);
    const ModelParams init = init_model(cfg, cfg.seed);

    std::vector<SweepPoint> out(ratios.size());
    auto run_one = [&](std::size_t i) {
        BudgetSplit split{total_steps, ratios[i]};
        split.validate();
        SweepPoint pt;
        pt.ratio = ratios[i];
        pt.fp_steps = split.fp_steps();
        pt.qat_steps = split.qat_steps();
        PhaseResult fp = train_phase(cfg, ds, init, pt.fp_steps, false, cfg.seed ^ 0xF00Du);
        PhaseResult qat = train_phase(cfg, ds, fp.params, pt.qat_steps, true, cfg.seed ^ 0x0BADu);
        pt.fp_curve = std::move(fp.losses);
        pt.qat_curve = std::move(qat.losses);
        pt.val_loss = eval_loss(cfg, qat.params, ds.val_x, ds.val_y, true);
        out[i] = std::move(pt);
    };

    if (threads <= 1) {
        for (std::size_t i = 0; i < ratios.size(); ++i) run_one(i);
    } else {
        std::vector<std::thread> pool;
        std::size_t next = 0;
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                for (std::size_t i = static_cast<std::size_t>(t); i < ratios.size();
                     i += static_cast<std::size_t>(threads))
                    run_one(i);
            });
            (void)next;
        }
        for (auto& th : pool) th.join();
    }
    return out;
}

struct FtsPoint {
    long qat_steps = 0;
    float finetune_loss = 0.0f;
    float scratch_loss = 0.0f;
};

struct FtsTable {
    float fp_loss = 0.0f; // full-precision validation baseline
    std::vector<FtsPoint> points;
    ModelParams fp_params;     // converged full-precision model
    ModelParams random_params; // the shared random initialization
};

/// Trains one full-precision model, then for every budget in the grid runs a
/// quantization-aware phase twice: once from the converged weights and once
/// from the original random initialization, with identical batch streams.
inline FtsTable run_finetune_vs_scratch(const TrainConfig& cfg, long fp_steps, const std::vector<long>& grid) {
    cfg.validate();
    if (grid.empty()) throw InvalidSpec("run_finetune_vs_scratch: empty budget grid");
    const Dataset ds = gen_dataset(cfg.seed, cfg.n_samples, cfg.input_dim, cfg.n_classes);
    const ModelParams init = init_model(cfg, cfg.seed);
    PhaseResult fp = train_phase(cfg, ds, init, fp_steps, false, cfg.seed ^ 0xF00Du);

    FtsTable table;
    table.fp_loss = eval_loss(cfg, fp.params, ds.val_x, ds.val_y, false);
    table.fp_params = fp.params;
    table.random_params = init;
    for (long q : grid) {
        const std::uint32_t bseed = cfg.seed ^ (0xABCD0000u + static_cast<std::uint32_t>(q));
        PhaseResult ft = train_phase(cfg, ds, fp.params, q, true, bseed);
        PhaseResult sc = train_phase(cfg, ds, init, q, true, bseed);
        FtsPoint pt;
        pt.qat_steps = q;
        pt.finetune_loss = eval_loss(cfg, ft.params, ds.val_x, ds.val_y, true);
        pt.scratch_loss = eval_loss(cfg, sc.params, ds.val_x, ds.val_y, true);
        table.points.push_back(pt);
    }
    return table;
}

struct DriftReport {
    std::vector<float> per_layer;
    float mean = 0.0f;
};

/// Relative L1 movement of each layer away from its initialization:
/// sum|final - init| / sum|init|, averaged unweighted across layers.
inline DriftReport weight_drift(const std::vector<Matrix>& init, const std::vector<Matrix>& fin) {
    if (init.size() != fin.size()) throw ShapeMismatch("weight_drift: layer count differs");
    DriftReport rep;
    double total = 0.0;
    for (std::size_t l = 0; l < init.size(); ++l) {
        check_same_shape(init[l], fin[l], "weight_drift");
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < init[l].size(); ++i) {
            num += std::abs(static_cast<double>(fin[l].data[i]) - static_cast<double>(init[l].data[i]));
            den += std::abs(static_cast<double>(init[l].data[i]));
        }
        float d;
        if (num == 0.0)
            d = 0.0f;
        else if (den == 0.0)
            throw InvalidSpec("weight_drift: all-zero initial layer with nonzero drift");
        else
            d = static_cast<float>(num / den);
        rep.per_layer.push_back(d);
        total += d;
    }
    rep.mean = init.empty() ? 0.0f : static_cast<float>(total / static_cast<double>(init.size()));
    return rep;
}

inline std::vector<Matrix> quantizable_layers(const ModelParams& p) { return {p.w1, p.w2}; }

// --- CSV output -----------------------------------------------------------

inline constexpr const char* kCurveCsvHeader = "ratio,seed,phase,step,loss";

inline void append_curve_csv(std::ostream& os, double ratio, std::uint32_t seed, const std::string& phase,
                             const std::vector<float>& losses) {
    for (std::size_t i = 0; i < losses.size(); ++i)
        os << ratio << ',' << seed << ',' << phase << ',' << i << ',' << losses[i] << '\n';
}

/// Per-step loss curves plus one final "val" row per ratio.
inline void write_sweep_csv(std::ostream& os, std::uint32_t seed, const std::vector<SweepPoint>& points) {
    os << kCurveCsvHeader << '\n';
    for (const SweepPoint& pt : points) {
        append_curve_csv(os, pt.ratio, seed, "fp", pt.fp_curve);
        append_curve_csv(os, pt.ratio, seed, "qat", pt.qat_curve);
        os << pt.ratio << ',' << seed << ",val," << (pt.fp_steps + pt.qat_steps) << ',' << pt.val_loss << '\n';
    }
}

inline void write_fts_csv(std::ostream& os, std::uint32_t seed, const FtsTable& table) {
    os << "qat_steps,seed,finetune_loss,scratch_loss,fp_loss\n";
    for (const FtsPoint& pt : table.points)
        os << pt.qat_steps << ',' << seed << ',' << pt.finetune_loss << ',' << pt.scratch_loss << ','
           << table.fp_loss << '\n';
}

} // namespace paretoq
