#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <sstream>

#include "paretoq/qat.hpp"

using namespace paretoq;

namespace {

bool bit_equal(float a, float b) {
    std::uint32_t ua, ub;
    std::memcpy(&ua, &a, 4);
    std::memcpy(&ub, &b, 4);
    return ua == ub;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!bit_equal(a.data[i], b.data[i])) return false;
    return true;
}

TrainConfig tiny_config(std::uint32_t seed) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.n_samples = 400;
    cfg.batch_size = 8;
    cfg.hidden = 16;
    return cfg;
}

std::vector<float> smoothed_window50(const std::vector<float>& losses) {
    std::vector<float> out;
    for (std::size_t i = 0; i + 50 <= losses.size(); ++i) {
        float s = 0.0f;
        for (std::size_t j = i; j < i + 50; ++j) s += losses[j];
        out.push_back(s / 50.0f);
    }
    return out;
}

} // namespace

TEST_CASE("budget splits conserve the step total across the ratio grid") {
    for (long total : {1L, 7L, 100L, 6000L}) {
        for (double r : default_ratio_grid()) {
            BudgetSplit s{total, r};
            s.validate();
            REQUIRE(s.fp_steps() + s.qat_steps() == total);
            REQUIRE(s.fp_steps() >= 0);
            REQUIRE(s.qat_steps() >= 0);
        }
    }
    REQUIRE(BudgetSplit{6000, 0.0}.fp_steps() == 0);
    REQUIRE(BudgetSplit{6000, 1.0}.qat_steps() == 0);
    REQUIRE(BudgetSplit{6000, 0.4}.fp_steps() == 2400);
    REQUIRE_THROWS_AS((BudgetSplit{-1, 0.5}).validate(), InvalidSpec);
    REQUIRE_THROWS_AS((BudgetSplit{10, 1.5}).validate(), InvalidSpec);
    REQUIRE_THROWS_AS((BudgetSplit{10, -0.1}).validate(), InvalidSpec);
}

TEST_CASE("dataset generation is deterministic and teacher-consistent") {
    const Dataset a = gen_dataset(42, 500);
    const Dataset b = gen_dataset(42, 500);
    REQUIRE(bit_equal(a.train_x, b.train_x));
    REQUIRE(bit_equal(a.val_x, b.val_x));
    REQUIRE(a.train_y == b.train_y);
    REQUIRE(a.val_y == b.val_y);

    REQUIRE(a.train_x.rows == 450);
    REQUIRE(a.val_x.rows == 50);
    REQUIRE(a.train_x.cols == 16);
    REQUIRE(a.n_classes == 8);

    // Labels are exactly the frozen teacher's argmax on the same inputs.
    const Teacher t = make_teacher(42, a.input_dim, a.n_classes);
    const Matrix lt = t.logits(a.train_x);
    for (std::size_t i = 0; i < a.train_x.rows; ++i) REQUIRE(a.train_y[i] == t.label(lt, i));
    const Matrix lv = t.logits(a.val_x);
    for (std::size_t i = 0; i < a.val_x.rows; ++i) REQUIRE(a.val_y[i] == t.label(lv, i));

    const Dataset c = gen_dataset(43, 500);
    REQUIRE_FALSE(bit_equal(a.train_x, c.train_x));

    REQUIRE_THROWS_AS(gen_dataset(1, 0), InvalidSpec);
    const Dataset one = gen_dataset(1, 1);
    REQUIRE(one.train_x.rows == 1);
    REQUIRE(one.val_x.rows == 0);

    const float h = label_entropy_baseline(a.train_y, a.n_classes);
    REQUIRE(h > 0.0f);
    REQUIRE(h <= std::log(8.0f) + 1e-5f);
}

TEST_CASE("a two-layer student beats the label-entropy baseline within 2000 steps") {
    const Dataset ds = gen_dataset(1, 4000);
    const float baseline = label_entropy_baseline(ds.val_y, ds.n_classes);

    std::mt19937 rng(1);
    Graph g;
    int x = g.input(32, 16);
    int w0 = g.parameter(random_normal(16, 64, rng, std::sqrt(2.0f / 16.0f)));
    int b0 = g.parameter(Matrix(1, 64));
    int h = g.relu(g.bias_add(g.matmul(x, w0), b0));
    int w1 = g.parameter(random_normal(64, 8, rng, std::sqrt(2.0f / 64.0f)));
    int b1 = g.parameter(Matrix(1, 8));
    int logits = g.bias_add(g.matmul(h, w1), b1);
    int t = g.input(32, 1);
    g.softmax_cross_entropy(logits, t);

    std::vector<AdamWState> st(g.parameters().size());
    AdamWConfig oc;
    std::mt19937 brng(1 ^ 0xF00Du);
    Matrix bx(32, 16), bt(32, 1);
    for (int step = 0; step < 2000; ++step) {
        for (int i = 0; i < 32; ++i) {
            const std::size_t idx = brng() % ds.train_x.rows;
            for (int c = 0; c < 16; ++c) bx.at(i, c) = ds.train_x.at(idx, c);
            bt.at(i, 0) = static_cast<float>(ds.train_y[idx]);
        }
        g.set_value(x, bx);
        g.set_value(t, bt);
        g.forward();
        g.backward();
        oc.lr = cosine_lr(1e-3f, step, 2000);
        for (std::size_t p = 0; p < g.parameters().size(); ++p)
            adamw_step(g.mutable_value(g.parameters()[p]), g.grad(g.parameters()[p]), st[p], oc);
    }

    Graph ge;
    int xe = ge.input(ds.val_x.rows, 16);
    int w0e = ge.parameter(g.value(w0));
    int b0e = ge.parameter(g.value(b0));
    int he = ge.relu(ge.bias_add(ge.matmul(xe, w0e), b0e));
    int w1e = ge.parameter(g.value(w1));
    int b1e = ge.parameter(g.value(b1));
    int le = ge.bias_add(ge.matmul(he, w1e), b1e);
    int te = ge.input(ds.val_x.rows, 1);
    ge.softmax_cross_entropy(le, te);
    Matrix tv(ds.val_x.rows, 1);
    for (std::size_t i = 0; i < ds.val_y.size(); ++i) tv.at(i, 0) = static_cast<float>(ds.val_y[i]);
    ge.set_value(xe, ds.val_x);
    ge.set_value(te, tv);
    const float val = ge.forward();
    REQUIRE(val < baseline);
}

TEST_CASE("zero-step phases change nothing except derived scales") {
    const TrainConfig cfg = tiny_config(3);
    const Dataset ds = gen_dataset(cfg.seed, cfg.n_samples, cfg.input_dim, cfg.n_classes);
    const ModelParams init = init_model(cfg, cfg.seed);

    const PhaseResult fp = train_phase(cfg, ds, init, 0, false, 9);
    REQUIRE(fp.losses.empty());
    REQUIRE(bit_equal(fp.params.w0, init.w0));
    REQUIRE(bit_equal(fp.params.w1, init.w1));
    REQUIRE(bit_equal(fp.params.w3, init.w3));
    REQUIRE_FALSE(fp.params.has_scales());

    const PhaseResult q = train_phase(cfg, ds, init, 0, true, 9);
    REQUIRE(q.losses.empty());
    REQUIRE(bit_equal(q.params.w1, init.w1));
    REQUIRE(q.params.has_scales());
    // The derived scales are exactly the quantizer's initialization on the
    // transposed (output-major) weights.
    const ChannelScales s1 = init_scale(transposed(init.w1), cfg.spec);
    REQUIRE(q.params.alpha1.rows == cfg.hidden);
    for (std::size_t i = 0; i < s1.size(); ++i) REQUIRE(bit_equal(q.params.alpha1.at(i, 0), s1.alpha[i]));

    REQUIRE_THROWS_AS(train_phase(cfg, ds, init, -1, false, 9), InvalidSpec);
}

TEST_CASE("full-precision training descends: smoothed loss curve never jumps back up") {
    TrainConfig cfg;
    cfg.seed = 1;
    cfg.n_samples = 4000;
    cfg.hidden = 64;
    const Dataset ds = gen_dataset(cfg.seed, cfg.n_samples, cfg.input_dim, cfg.n_classes);
    const PhaseResult fp = train_phase(cfg, ds, init_model(cfg, cfg.seed), 1500, false, cfg.seed ^ 0xF00Du);

    const std::vector<float> sm = smoothed_window50(fp.losses);
    REQUIRE(sm.size() == fp.losses.size() - 49);
    for (std::size_t i = 1; i < sm.size(); ++i) REQUIRE(sm[i] <= sm[i - 1] + 0.05f);
    REQUIRE(sm.back() < 0.5f * sm.front());
}

TEST_CASE("two-bit finetuning moves weights more than four-bit") {
    TrainConfig cfg;
    cfg.seed = 1;
    cfg.n_samples = 4000;
    cfg.hidden = 64;
    const Dataset ds = gen_dataset(cfg.seed, cfg.n_samples, cfg.input_dim, cfg.n_classes);
    const PhaseResult fp = train_phase(cfg, ds, init_model(cfg, cfg.seed), 1500, false, cfg.seed ^ 0xF00Du);

    TrainConfig c4 = cfg;
    c4.spec = QuantSpec::paretoq(BitWidth::b4, Granularity::PerChannel);
    const PhaseResult q2 = train_phase(cfg, ds, fp.params, 500, true, cfg.seed ^ 0x0BADu);
    const PhaseResult q4 = train_phase(c4, ds, fp.params, 500, true, cfg.seed ^ 0x0BADu);

    const DriftReport d2 = weight_drift(quantizable_layers(fp.params), quantizable_layers(q2.params));
    const DriftReport d4 = weight_drift(quantizable_layers(fp.params), quantizable_layers(q4.params));
    REQUIRE(d2.mean > d4.mean);
    REQUIRE(d2.per_layer.size() == 2);
    for (float d : d2.per_layer) REQUIRE(d > 0.0f);
}

TEST_CASE("weight drift is the relative L1 displacement") {
    const Matrix init = Matrix{1.0f, 1.0f};
    const Matrix fin = Matrix{0.5f, 1.5f};
    const DriftReport r = weight_drift({init}, {fin});
    REQUIRE(r.per_layer.size() == 1);
    REQUIRE(r.per_layer[0] == 0.5f);
    REQUIRE(r.mean == 0.5f);

    const DriftReport same = weight_drift({fin}, {fin});
    REQUIRE(same.per_layer[0] == 0.0f);

    // Aggregate is the unweighted mean across layers regardless of layer size.
    const DriftReport two = weight_drift({init, fin}, {fin, fin});
    REQUIRE(two.mean == Catch::Approx(0.25f));

    REQUIRE_THROWS_AS(weight_drift({init}, {Matrix(1, 3, 0.0f)}), ShapeMismatch);
    REQUIRE_THROWS_AS(weight_drift({init, fin}, {init}), ShapeMismatch);
    REQUIRE_THROWS_AS(weight_drift({Matrix(1, 2, 0.0f)}, {fin}), InvalidSpec);
    const DriftReport zero = weight_drift({Matrix(1, 2, 0.0f)}, {Matrix(1, 2, 0.0f)});
    REQUIRE(zero.per_layer[0] == 0.0f);
}

TEST_CASE("budget sweeps are seed-deterministic and thread-count independent") {
    const TrainConfig cfg = tiny_config(7);
    const std::vector<double> ratios = {0.0, 0.5, 1.0};

    const auto a = run_budget_sweep(cfg, 40, ratios);
    const auto b = run_budget_sweep(cfg, 40, ratios);
    const auto c = run_budget_sweep(cfg, 40, ratios, 2);
    REQUIRE(a.size() == 3);
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].fp_steps + a[i].qat_steps == 40);
        REQUIRE(bit_equal(a[i].val_loss, b[i].val_loss));
        REQUIRE(bit_equal(a[i].val_loss, c[i].val_loss));
        REQUIRE(a[i].fp_curve.size() == static_cast<std::size_t>(a[i].fp_steps));
        REQUIRE(a[i].qat_curve.size() == static_cast<std::size_t>(a[i].qat_steps));
    }
    REQUIRE(a[0].fp_steps == 0);  // scratch endpoint
    REQUIRE(a[2].qat_steps == 0); // one-shot endpoint

    TrainConfig other = cfg;
    other.seed = 8;
    const auto d = run_budget_sweep(other, 40, ratios);
    REQUIRE_FALSE(bit_equal(a[1].val_loss, d[1].val_loss));
}

TEST_CASE("the ratio-one endpoint is exactly one-shot quantization of the FP model") {
    const TrainConfig cfg = tiny_config(5);
    const Dataset ds = gen_dataset(cfg.seed, cfg.n_samples, cfg.input_dim, cfg.n_classes);

    const auto pts = run_budget_sweep(cfg, 40, {1.0});
    // Replicate: the full budget goes to the FP phase (batch stream seed ^ 0xF00D),
    // then quantized evaluation derives scales on the spot with zero updates.
    const PhaseResult fp = train_phase(cfg, ds, init_model(cfg, cfg.seed), 40, false, cfg.seed ^ 0xF00Du);
    const float ptq = eval_loss(cfg, fp.params, ds.val_x, ds.val_y, true);
    REQUIRE(bit_equal(pts[0].val_loss, ptq));
}

TEST_CASE("zero-budget finetune and scratch reproduce one-shot quantization exactly") {
    const TrainConfig cfg = tiny_config(11);
    const Dataset ds = gen_dataset(cfg.seed, cfg.n_samples, cfg.input_dim, cfg.n_classes);

    const FtsTable t = run_finetune_vs_scratch(cfg, 30, {0, 20});
    REQUIRE(t.points.size() == 2);
    REQUIRE(t.points[0].qat_steps == 0);
    const float ptq_ft = eval_loss(cfg, t.fp_params, ds.val_x, ds.val_y, true);
    const float ptq_sc = eval_loss(cfg, t.random_params, ds.val_x, ds.val_y, true);
    REQUIRE(bit_equal(t.points[0].finetune_loss, ptq_ft));
    REQUIRE(bit_equal(t.points[0].scratch_loss, ptq_sc));

    REQUIRE_THROWS_AS(run_finetune_vs_scratch(cfg, 10, {}), InvalidSpec);
}

TEST_CASE("csv writers emit the documented row shapes") {
    SweepPoint pt;
    pt.ratio = 0.5;
    pt.fp_steps = 2;
    pt.qat_steps = 1;
    pt.val_loss = 0.25f;
    pt.fp_curve = {1.5f, 1.25f};
    pt.qat_curve = {1.0f};

    std::ostringstream os;
    write_sweep_csv(os, 7, {pt});
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    REQUIRE(line == "ratio,seed,phase,step,loss");
    std::getline(is, line);
    REQUIRE(line == "0.5,7,fp,0,1.5");
    std::getline(is, line);
    REQUIRE(line == "0.5,7,fp,1,1.25");
    std::getline(is, line);
    REQUIRE(line == "0.5,7,qat,0,1");
    std::getline(is, line);
    REQUIRE(line == "0.5,7,val,3,0.25");
    REQUIRE_FALSE(std::getline(is, line));

    FtsTable t;
    t.fp_loss = 0.5f;
    t.points = {{100, 0.6f, 0.9f}};
    std::ostringstream fs;
    write_fts_csv(fs, 3, t);
    std::istringstream fis(fs.str());
    std::getline(fis, line);
    REQUIRE(line == "qat_steps,seed,finetune_loss,scratch_loss,fp_loss");
    std::getline(fis, line);
    REQUIRE(line == "100,3,0.6,0.9,0.5");
}

TEST_CASE("absurd learning rates surface as numerical divergence") {
    TrainConfig cfg = tiny_config(1);
    cfg.fp_lr = 1e30f;
    const Dataset ds = gen_dataset(cfg.seed, cfg.n_samples, cfg.input_dim, cfg.n_classes);
    REQUIRE_THROWS_AS(train_phase(cfg, ds, init_model(cfg, cfg.seed), 10, false, 1), NumericalDivergence);
}

TEST_CASE("training config validation rejects degenerate setups") {
    TrainConfig cfg = tiny_config(1);
    cfg.n_samples = 5;
    REQUIRE_THROWS_AS(cfg.validate(), InvalidSpec);
    cfg = tiny_config(1);
    cfg.batch_size = 0;
    REQUIRE_THROWS_AS(cfg.validate(), InvalidSpec);
    cfg = tiny_config(1);
    cfg.n_classes = 1;
    REQUIRE_THROWS_AS(cfg.validate(), InvalidSpec);
    cfg = tiny_config(1);
    cfg.qat_lr = 0.0f;
    REQUIRE_THROWS_AS(cfg.validate(), InvalidSpec);
}
