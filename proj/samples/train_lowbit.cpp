// Minimal end-to-end training run: pretrain a small MLP in full precision,
// then finetune it under 2-bit fake quantization, printing a few loss
// snapshots and the final quantized validation loss. Takes a few seconds.

#include <cstdio>

#include "paretoq/qat.hpp"

using namespace paretoq;

int main() {
    TrainConfig cfg;
    cfg.seed = 1;
    cfg.n_samples = 4000;
    cfg.hidden = 64;

    const Dataset ds = gen_dataset(cfg.seed, cfg.n_samples, cfg.input_dim, cfg.n_classes);
    std::printf("dataset: %zu train / %zu val, entropy baseline %.3f\n", ds.train_x.rows, ds.val_x.rows,
                label_entropy_baseline(ds.val_y, ds.n_classes));

    const ModelParams init = init_model(cfg, cfg.seed);
    const PhaseResult fp = train_phase(cfg, ds, init, 1500, false, cfg.seed ^ 0xF00Du);
    std::printf("full-precision phase: first batch loss %.3f, last %.3f, val %.3f\n", fp.losses.front(),
                fp.losses.back(), eval_loss(cfg, fp.params, ds.val_x, ds.val_y, false));

    const float ptq = eval_loss(cfg, fp.params, ds.val_x, ds.val_y, true);
    std::printf("one-shot 2-bit quantization: val %.3f\n", ptq);

    const PhaseResult qat = train_phase(cfg, ds, fp.params, 500, true, cfg.seed ^ 0x0BADu);
    const float finetuned = eval_loss(cfg, qat.params, ds.val_x, ds.val_y, true);
    std::printf("after 500 quantization-aware steps: val %.3f\n", finetuned);

    const DriftReport drift = weight_drift(quantizable_layers(fp.params), quantizable_layers(qat.params));
    std::printf("weight drift away from the FP solution: %.4f (layers %.4f, %.4f)\n", drift.mean,
                drift.per_layer[0], drift.per_layer[1]);
    return 0;
}
