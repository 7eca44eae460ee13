// End-to-end tour of the library API: build a class stream, train two
// methods on it, compare retention, and round-trip a checkpoint.

#include <cstdio>
#include <filesystem>

#include "lifelong/checkpoint.hpp"
#include "lifelong/experiment.hpp"

using namespace lifelong;

namespace {

void print_matrix(const char* title, const AccuracyMatrix& m) {
    std::printf("%s (rows: after task t, cols: scored task k)\n", title);
    for (std::size_t t = 0; t < m.tasks(); ++t) {
        std::printf("  t=%zu ", t);
        for (std::size_t k = 0; k <= t; ++k) std::printf(" %.3f", m.at(t, k));
        std::printf("\n");
    }
}

}  // namespace

int main() {
    // a 12-class gaussian stream, three tasks of four classes each
    ExperimentConfig cfg;
    cfg.name = "demo";
    cfg.dataset.num_classes = 12;
    cfg.dataset.dim = 16;
    cfg.dataset.per_class = 100;
    cfg.dataset.separation = 3.5;
    cfg.classes_per_task = 4;
    cfg.hidden = {32};
    cfg.feature_dim = 32;
    cfg.bottleneck_width = 8;
    cfg.optimizer.max_epochs = 15;
    cfg.optimizer.batch_size = 64;
    cfg.hypersearch = false;
    cfg.seeds = {42};
    cfg.out_dir = (std::filesystem::temp_directory_path() / "lifelong_demo").string();

    std::printf("== plain fine-tuning ==\n");
    cfg.method = "finetune";
    RunRecord ft = run_experiment(cfg);
    print_matrix("task-incremental accuracy", *ft.seeds[0].task_il);

    std::printf("\n== task adapters + distillation + feature anchor ==\n");
    cfg.method = "lwf_a";
    cfg.use_adapters = true;
    cfg.use_backbone_reg = true;
    cfg.lambdas = default_lambdas("lwf_a");
    RunRecord la = run_experiment(cfg);
    print_matrix("task-incremental accuracy", *la.seeds[0].task_il);

    std::printf("\nfinal average accuracy: finetune %.3f vs adapters %.3f\n",
                ft.seeds[0].avg_acc.back(), la.seeds[0].avg_acc.back());
    std::printf("final mean forgetting:  finetune %.3f vs adapters %.3f\n",
                ft.seeds[0].avg_forgetting.back(), la.seeds[0].avg_forgetting.back());

    // the lower-level API: rebuild the exact stream and score a checkpoint
    LabeledDataset ds = build_dataset(cfg, cfg.seeds[0]);
    TaskStream stream = build_stream(ds, cfg.classes_per_task, ordering_from_name(cfg.ordering),
                                     cfg.ordering_seed, cfg.test_fraction);
    Rng rng(1);
    BackboneConfig bc;
    bc.input_dim = ds.dim;
    bc.hidden = cfg.hidden;
    bc.output_dim = cfg.feature_dim;
    ContinualModel model(bc, rng);
    model.spawn_task(stream.tasks[0].classes.size(), cfg.bottleneck_width, rng,
                     stream.tasks[0].classes);
    OptimizerConfig ocfg = cfg.optimizer;
    RegularizerState state;
    Rng train_rng(2);
    train_task(model, ds, stream.tasks[0], 0, LossKind::finetune, Lambdas{}, state, ocfg, train_rng);

    const std::string ckpt = cfg.out_dir + "/demo_model.json";
    save_checkpoint(model, ckpt);
    ContinualModel back = load_checkpoint(ckpt);
    std::printf("\ncheckpoint round trip: checksum %016llx -> %016llx (%s), task-0 accuracy %.3f\n",
                static_cast<unsigned long long>(model.checksum()),
                static_cast<unsigned long long>(back.checksum()),
                model.checksum() == back.checksum() ? "identical" : "MISMATCH",
                evaluate_task_il(back, ds, stream.tasks[0], 0));
    return 0;
}
