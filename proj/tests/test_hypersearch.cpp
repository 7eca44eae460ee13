#include "doctest.h"
#include "lifelong/hypersearch.hpp"

using namespace lifelong;

namespace {

ContinualModel blob_model(std::uint64_t seed, const std::vector<int>& classes) {
    BackboneConfig bc;
    bc.input_dim = 8;
    bc.hidden = {16};
    bc.output_dim = 16;
    Rng rng(seed);
    ContinualModel m(bc, rng);
    m.spawn_task(classes.size(), 4, rng, classes);
    return m;
}

OptimizerConfig short_cfg(std::size_t epochs = 6) {
    OptimizerConfig cfg;
    cfg.batch_size = 32;
    cfg.max_epochs = epochs;
    return cfg;
}

LabeledDataset unlearnable(std::size_t rows = 16) {
    LabeledDataset ds;
    ds.dim = 2;
    ds.class_names = {"a", "b"};
    for (std::size_t i = 0; i < rows; ++i) {
        ds.features.push_back(1.0);
        ds.features.push_back(-1.0);
        ds.labels.push_back(static_cast<int>(i % 2));
    }
    return ds;
}

TaskSpec manual_task(const LabeledDataset& ds) {
    TaskSpec spec;
    spec.classes = {0, 1};
    // consecutive row pairs carry labels (0, 1), so this val split is balanced
    for (std::size_t r = 0; r < ds.size(); ++r)
        (r % 4 < 2 ? spec.val_idx : spec.train_idx).push_back(r);
    return spec;
}

ContinualModel flat_model(std::uint64_t seed) {
    BackboneConfig bc;
    bc.input_dim = 2;
    bc.hidden = {4};
    bc.output_dim = 4;
    Rng rng(seed);
    ContinualModel m(bc, rng);
    m.spawn_task(2, 2, rng);
    return m;
}

}  // namespace

TEST_SUITE("hypersearch") {

TEST_CASE("search policy rejects malformed grids and fractions") {
    SearchPolicy p;
    p.validate();  // defaults are sane
    SearchPolicy bad = p;
    bad.lr_grid_first = {};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = p, bad.lr_grid_later = {0.1, 0.1};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = p, bad.lr_grid_first = {0.05, 0.1};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = p, bad.lr_grid_later = {0.1, -0.05};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = p, bad.accuracy_fraction = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = p, bad.accuracy_fraction = 1.01;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("plasticity probes run on scratch copies and pick the learning rate that learns") {
    Rng drng(51);
    LabeledDataset ds = make_synthetic(2, 8, 40, 12.0, drng);
    TaskStream s = build_stream(ds, 2, Ordering::alphabetical, 3);
    ContinualModel m = blob_model(52, s.tasks[0].classes);
    const std::uint64_t before = m.checksum();
    SearchPolicy policy;
    policy.lr_grid_first = {0.1, 1e-7};  // the tiny lr cannot move in six epochs
    SearchLog log;
    double lr = maximal_plasticity_search(m, ds, s.tasks[0], 0, short_cfg(), policy, 99, true, log);
    CHECK(lr == 0.1);
    CHECK(m.checksum() == before);  // probes were discarded
    REQUIRE(log.probes.size() == 2);
    CHECK(log.probes[0].lr == 0.1);
    CHECK(log.probes[1].lr == 1e-7);
    CHECK(log.probes[0].val_accuracy > log.probes[1].val_accuracy);
    CHECK(log.chosen_lr == 0.1);
    CHECK(log.finetune_accuracy == log.probes[0].val_accuracy);
}

TEST_CASE("accuracy ties break toward the larger learning rate") {
    LabeledDataset ds = unlearnable();
    TaskSpec spec = manual_task(ds);
    ContinualModel m = flat_model(7);
    SearchPolicy policy;  // default first grid {0.5, 0.1, 0.05}
    SearchLog log;
    double lr = maximal_plasticity_search(m, ds, spec, 0, short_cfg(3), policy, 5, true, log);
    // every probe scores exactly one half, so the first (largest) entry wins
    REQUIRE(log.probes.size() == 3);
    for (const auto& p : log.probes) CHECK(p.val_accuracy == 0.5);
    CHECK(lr == 0.5);
}

TEST_CASE("the probe set is exactly the configured grid") {
    LabeledDataset ds = unlearnable();
    TaskSpec spec = manual_task(ds);
    ContinualModel m = flat_model(7);
    SearchPolicy policy;
    SearchLog first_log, later_log;
    maximal_plasticity_search(m, ds, spec, 0, short_cfg(2), policy, 5, true, first_log);
    maximal_plasticity_search(m, ds, spec, 0, short_cfg(2), policy, 5, false, later_log);
    REQUIRE(first_log.probes.size() == policy.lr_grid_first.size());
    for (std::size_t i = 0; i < policy.lr_grid_first.size(); ++i)
        CHECK(first_log.probes[i].lr == policy.lr_grid_first[i]);
    REQUIRE(later_log.probes.size() == policy.lr_grid_later.size());
    for (std::size_t i = 0; i < policy.lr_grid_later.size(); ++i)
        CHECK(later_log.probes[i].lr == policy.lr_grid_later[i]);
}

TEST_CASE("a single-entry grid returns that learning rate") {
    LabeledDataset ds = unlearnable();
    TaskSpec spec = manual_task(ds);
    ContinualModel m = flat_model(7);
    SearchPolicy policy;
    policy.lr_grid_first = {0.07};
    SearchLog log;
    CHECK(maximal_plasticity_search(m, ds, spec, 0, short_cfg(2), policy, 5, true, log) == 0.07);
    CHECK(log.chosen_lr == 0.07);
}

TEST_CASE("zero starting strengths are accepted immediately") {
    Rng drng(51);
    LabeledDataset ds = make_synthetic(2, 8, 30, 10.0, drng);
    TaskStream s = build_stream(ds, 2, Ordering::alphabetical, 3);
    ContinualModel m = blob_model(52, s.tasks[0].classes);
    SearchPolicy policy;
    SearchLog log;
    RegularizerState state;
    DecayResult res = stability_decay(m, ds, s.tasks[0], 0, LossKind::weight_anchor, state, short_cfg(8),
                                      policy, Lambdas{}, 1.0, 13, log);
    REQUIRE(log.attempts.size() == 1);
    CHECK(log.attempts[0].accepted);
    CHECK(log.halvings == 0);
    CHECK(res.lambdas.lambda == 0.0);
    // the trained weights were committed
    CHECK(res.report.final_val_accuracy == log.attempts[0].val_accuracy);
    CHECK(res.report.epochs_run > 0);
}

TEST_CASE("an impossible reference forces strict halving to exhaustion") {
    LabeledDataset ds = unlearnable();
    TaskSpec spec = manual_task(ds);
    ContinualModel m = flat_model(7);
    RegularizerState state;
    // one anchor with zero importance: the strength enters the loss protocol
    // without being able to help, so every attempt scores one half
    state.anchors.push_back(make_anchor(m, detail::zero_diag(m)));
    SearchPolicy policy;
    policy.max_halvings = 4;
    SearchLog log;
    Lambdas start;
    start.lambda = 8.0;
    DecayResult res = stability_decay(m, ds, spec, 0, LossKind::weight_anchor, state, short_cfg(2), policy,
                                      start, 1.0, 13, log);
    REQUIRE(log.attempts.size() == 5);  // initial try plus four halvings
    for (std::size_t i = 0; i < log.attempts.size(); ++i) {
        CHECK(log.attempts[i].lambdas.lambda == 8.0 / static_cast<double>(1u << i));  // exact halving
        CHECK(log.attempts[i].val_accuracy == 0.5);  // restart purity: identical runs
        CHECK(log.attempts[i].accepted == (i == 4));
    }
    CHECK(log.exhausted);
    CHECK(log.halvings == 4);
    CHECK(res.lambdas.lambda == 0.5);
}

TEST_CASE("paired strengths halve jointly") {
    LabeledDataset ds = unlearnable();
    TaskSpec spec = manual_task(ds);
    ContinualModel m = flat_model(7);
    RegularizerState state;
    Rng trng(71);
    state.teachers.push_back(make_teacher(m, trng));
    SearchPolicy policy;
    policy.max_halvings = 2;
    SearchLog log;
    Lambdas start;
    start.lambda_distill = 5.0;
    start.lambda_phi = 0.5;
    stability_decay(m, ds, spec, 0, LossKind::lwf_a, state, short_cfg(2), policy, start, 1.0, 13, log);
    REQUIRE(log.attempts.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        const double div = static_cast<double>(1u << i);
        CHECK(log.attempts[i].lambdas.lambda_distill == 5.0 / div);
        CHECK(log.attempts[i].lambdas.lambda_phi == 0.5 / div);
    }
    CHECK(log.exhausted);
}

TEST_CASE("an accepted first attempt equals a direct training run bitwise") {
    Rng drng(51);
    LabeledDataset ds = make_synthetic(2, 8, 30, 10.0, drng);
    TaskStream s = build_stream(ds, 2, Ordering::alphabetical, 3);
    ContinualModel searched = blob_model(52, s.tasks[0].classes);
    ContinualModel direct = searched.deep_copy();
    SearchPolicy policy;
    SearchLog log;
    RegularizerState state;
    OptimizerConfig cfg = short_cfg(5);
    stability_decay(searched, ds, s.tasks[0], 0, LossKind::finetune, state, cfg, policy, Lambdas{}, 0.0,
                    13, log);
    Rng rng(mix_seed(13, 0x57AB1E));  // the decay loop derives its shuffle stream this way
    train_task(direct, ds, s.tasks[0], 0, LossKind::finetune, Lambdas{}, state, cfg, rng);
    CHECK(searched.checksum() == direct.checksum());
}

TEST_CASE("the reference accuracy must be a probability") {
    LabeledDataset ds = unlearnable();
    TaskSpec spec = manual_task(ds);
    ContinualModel m = flat_model(7);
    RegularizerState state;
    SearchPolicy policy;
    SearchLog log;
    CHECK_THROWS_AS(stability_decay(m, ds, spec, 0, LossKind::finetune, state, short_cfg(2), policy,
                                    Lambdas{}, 1.5, 13, log),
                    ConfigError);
}

}  // TEST_SUITE
