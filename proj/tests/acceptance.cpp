// Acceptance gate: nine checks, one line each, nonzero exit if any fails.
// Tolerances and benchmark settings are pinned here on purpose — edits to
// these constants are edits to the gate itself.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "lifelong/experiment.hpp"

using namespace lifelong;
namespace fs = std::filesystem;

namespace {

int g_passed = 0;
int g_failed = 0;

void report(int id, const char* name, bool ok, const std::string& detail) {
    std::printf("%s  %d  %s: %s\n", ok ? "PASS" : "FAIL", id, name, detail.c_str());
    std::fflush(stdout);
    (ok ? g_passed : g_failed)++;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor make_batch(std::size_t rows, std::size_t dim, Rng& rng) {
    Tensor X = Tensor::zeros({rows, dim});
    for (double& v : X.values()) v = rng.normal();
    return X;
}

// all grad entries exactly zero (an unallocated grad counts as zero)
bool grad_is_zero(const Tensor& t) {
    for (double gv : t.grad())
        if (gv != 0.0) return false;
    return true;
}

// ---------- 1: gradient fidelity ----------
// Central differences across every parameter of every loss term. The fixture
// uses tanh so the losses are smooth; the relative-error denominator is
// floored so measurement noise on near-zero gradients is compared absolutely.
void check_gradient_fidelity() {
    const auto t0 = std::chrono::steady_clock::now();
    const double h = 1e-5;
    const double tol = 1e-5;
    const double floor = 1e-4;
    const int num_seeds = 100;

    double worst = 0.0;
    std::string worst_loss = "-";
    long coords = 0;

    for (int seed = 1; seed <= num_seeds; ++seed) {
        Rng rng(mix_seed(static_cast<std::uint64_t>(seed), 0xFDFD));
        BackboneConfig bc;
        bc.input_dim = 6;
        bc.hidden = {8};
        bc.output_dim = 8;
        bc.activation = Activation::tanh;
        ContinualModel model(bc, rng);
        model.spawn_task(3, 3, rng, {}, Activation::tanh);

        Tensor X = make_batch(5, 6, rng);
        std::vector<int> y = {0, 2, 1, 0, 2};

        // frozen references built before the weights are nudged, so the
        // anchor and distillation terms all have non-trivial gradients
        Rng trng(mix_seed(static_cast<std::uint64_t>(seed), 0x7EAC));
        FrozenTeacher teacher = make_teacher(model, trng);
        std::vector<WeightAnchor> fisher_anchor{
            make_anchor(model, estimate_fisher_diag(model, X, 0, 5, trng))};
        std::vector<WeightAnchor> mas_anchor{make_anchor(model, estimate_mas_importance(model, X, 0))};
        ParamDiag rand_diag;
        for (auto& [path, t] : model.named_parameters()) {
            std::vector<double> v(t.size());
            for (double& x : v) x = std::fabs(trng.normal());
            rand_diag.emplace_back(path, std::move(v));
        }
        std::vector<WeightAnchor> path_anchor{make_anchor(model, rand_diag)};
        for (auto& [path, t] : model.named_parameters())
            for (double& v : t.values()) v += 0.05 * trng.normal();

        std::vector<std::pair<const char*, std::function<Tensor(Graph&)>>> losses = {
            {"task", [&](Graph& g) { return g.softmax_cross_entropy(model.forward(g, X, 0), y); }},
            {"anchor_fisher", [&](Graph& g) { return ewc_penalty(g, model, fisher_anchor, 1.0); }},
            {"anchor_abs", [&](Graph& g) { return ewc_penalty(g, model, mas_anchor, 1.0); }},
            {"anchor_path", [&](Graph& g) { return ewc_penalty(g, model, path_anchor, 1.0); }},
            {"distill", [&](Graph& g) { return distill_loss(g, teacher, model, X, 2.0); }},
            {"feature_cos",
             [&](Graph& g) { return backbone_reg(g, {teacher}, model, X, FeatureMetric::cosine); }},
            {"feature_sq",
             [&](Graph& g) { return backbone_reg(g, {teacher}, model, X, FeatureMetric::squared); }},
        };

        auto params = model.named_parameters();
        for (auto& [lname, make_loss] : losses) {
            model.zero_grad();
            std::vector<std::vector<double>> ad;
            {
                Graph g;
                Tensor loss = make_loss(g);
                g.backward(loss);
                for (auto& [path, t] : params) ad.push_back(t.grad());
            }
            for (std::size_t p = 0; p < params.size(); ++p) {
                std::vector<double>& vals = params[p].second.values();
                for (std::size_t i = 0; i < vals.size(); ++i) {
                    const double keep = vals[i];
                    vals[i] = keep + h;
                    Graph gp(false);
                    const double lp = make_loss(gp).value();
                    vals[i] = keep - h;
                    Graph gm(false);
                    const double lm = make_loss(gm).value();
                    vals[i] = keep;
                    const double fd = (lp - lm) / (2.0 * h);
                    const double rel =
                        std::fabs(fd - ad[p][i]) / std::max({std::fabs(fd), std::fabs(ad[p][i]), floor});
                    ++coords;
                    if (rel > worst) {
                        worst = rel;
                        worst_loss = lname;
                    }
                }
            }
        }
    }
    const double secs = seconds_since(t0);
    const bool ok = worst <= tol && secs < 60.0;
    report(1, "gradient fidelity", ok,
           fmt("max rel err %.3g (tol %.0e, worst in %s) over %d seeds, %ld coords, %.1fs (cap 60s)",
               worst, tol, worst_loss.c_str(), num_seeds, coords, secs));
}

// ---------- shared fixtures ----------

LabeledDataset blob_data(std::size_t classes, std::size_t dim, std::size_t per, double sep,
                         std::uint64_t seed) {
    Rng rng(seed);
    return make_synthetic(classes, dim, per, sep, rng);
}

TaskSpec whole_task(const LabeledDataset& ds) {
    TaskSpec spec;
    for (std::size_t c = 0; c < ds.num_classes(); ++c) spec.classes.push_back(static_cast<int>(c));
    for (std::size_t r = 0; r < ds.size(); ++r)
        (r % 4 < 2 ? spec.val_idx : spec.train_idx).push_back(r);
    return spec;
}

// ---------- 2: penalty exclusion ----------
// The anchored quadratic must constrain backbone weights only: its gradient
// w.r.t. every adapter and head parameter is identically zero, by structure.
void check_penalty_exclusion() {
    Rng rng(99);
    BackboneConfig bc;
    bc.input_dim = 6;
    bc.hidden = {10};
    bc.output_dim = 8;
    ContinualModel model(bc, rng);
    model.spawn_task(2, 3, rng);
    model.spawn_task(2, 3, rng, {2, 3});
    Tensor X = make_batch(16, 6, rng);

    std::vector<std::pair<const char*, WeightAnchor>> anchors;
    anchors.emplace_back("fisher", make_anchor(model, estimate_fisher_diag(model, X, 1, 16, rng)));
    anchors.emplace_back("abs_grad", make_anchor(model, estimate_mas_importance(model, X, 1)));

    // a real accumulated path-integral importance, via a short training run
    LabeledDataset ds = blob_data(2, 6, 24, 4.0, 31);
    TaskSpec spec = whole_task(ds);
    PathIntAccumulator pia;
    OptimizerConfig cfg;
    cfg.max_epochs = 3;
    cfg.batch_size = 8;
    RegularizerState empty;
    Rng trng(7);
    {
        ContinualModel m2 = model.deep_copy();
        train_task(m2, ds, spec, 0, LossKind::finetune, Lambdas{}, empty, cfg, trng, &pia);
        anchors.emplace_back("path_integral", make_anchor(m2, pia.finalize(m2)));
    }

    // move the trunk off the anchors so the penalties are live
    for (auto& [path, t] : model.named_parameters())
        if (ContinualModel::is_backbone_path(path))
            for (double& v : t.values()) v += 0.1;

    bool ok = true;
    std::string detail;
    for (auto& [name, anchor] : anchors) {
        Graph g;
        Tensor pen = ewc_penalty(g, model, {anchor}, 1000.0);
        model.zero_grad();
        g.backward(pen);
        bool trunk_live = false, excluded_clean = true;
        for (auto& [path, t] : model.named_parameters()) {
            if (ContinualModel::is_backbone_path(path)) {
                if (!grad_is_zero(t)) trunk_live = true;
            } else if (!grad_is_zero(t)) {
                excluded_clean = false;
            }
        }
        if (!(pen.value() > 0.0) || !trunk_live || !excluded_clean) {
            ok = false;
            detail += fmt("[%s: value %.3g trunk_live %d clean %d] ", name, pen.value(), trunk_live,
                          excluded_clean);
        }
    }
    if (ok)
        detail = "adapter+head gradients identically 0.0 for all three importance kinds, trunk "
                 "gradients live";
    report(2, "penalty exclusion", ok, detail);
}

// ---------- 3: estimator oracles ----------
void check_estimator_oracles() {
    const double tol = 1e-12;
    bool ok = true;
    std::string detail;

    // ten-parameter fixture: 1->1 trunk, width-1 adapter, two-class head
    {
        Rng rng(5);
        BackboneConfig bc;
        bc.input_dim = 1;
        bc.hidden = {};
        bc.output_dim = 1;
        bc.activation = Activation::tanh;
        ContinualModel model(bc, rng);
        model.spawn_task(2, 1, rng, {}, Activation::tanh);
        std::size_t nparams = 0;
        for (auto& [p, t] : model.named_parameters()) nparams += t.size();

        const std::size_t n = 7;
        Tensor X = make_batch(n, 1, rng);
        std::vector<int> y = {0, 1, 1, 0, 1, 0, 0};

        Rng frng(11);
        ParamDiag fisher = estimate_fisher_diag(model, X, 0, n, frng, true, &y, 3);
        ParamDiag mas = estimate_mas_importance(model, X, 0, 3);

        // independent loops, one sample per graph
        ParamDiag fisher_loop, mas_loop;
        for (auto& [path, t] : model.named_parameters()) {
            fisher_loop.emplace_back(path, std::vector<double>(t.size(), 0.0));
            mas_loop.emplace_back(path, std::vector<double>(t.size(), 0.0));
        }
        for (std::size_t r = 0; r < n; ++r) {
            Tensor xr = Tensor::from({1, 1}, {X.at(r, 0)});
            {
                Graph g;
                Tensor loss = g.softmax_cross_entropy(model.forward(g, xr, 0), {y[r]});
                model.zero_grad();
                g.backward(loss);
                auto params = model.named_parameters();
                for (std::size_t i = 0; i < params.size(); ++i) {
                    const std::vector<double>& pg = params[i].second.grad();
                    for (std::size_t k = 0; k < pg.size(); ++k) fisher_loop[i].second[k] += pg[k] * pg[k];
                }
            }
            {
                Graph g;
                Tensor norm2 = g.sum_sq(model.forward(g, xr, 0));
                model.zero_grad();
                g.backward(norm2);
                auto params = model.named_parameters();
                for (std::size_t i = 0; i < params.size(); ++i) {
                    const std::vector<double>& pg = params[i].second.grad();
                    for (std::size_t k = 0; k < pg.size(); ++k) mas_loop[i].second[k] += std::fabs(pg[k]);
                }
            }
        }
        double worst = 0.0;
        for (std::size_t i = 0; i < fisher.size(); ++i)
            for (std::size_t k = 0; k < fisher[i].second.size(); ++k) {
                worst = std::max(worst,
                                 std::fabs(fisher[i].second[k] - fisher_loop[i].second[k] / double(n)));
                worst = std::max(worst, std::fabs(mas[i].second[k] - mas_loop[i].second[k] / double(n)));
            }
        if (worst > tol || nparams > 10) ok = false;
        detail += fmt("batched vs loop max dev %.3g on %zu params; ", worst, nparams);
    }

    // single-sample logistic closed form on a pass-through trunk
    {
        Rng rng(17);
        BackboneConfig bc;
        bc.input_dim = 2;
        bc.hidden = {};
        bc.output_dim = 2;
        bc.activation = Activation::identity;
        ContinualModel model(bc, rng);
        model.spawn_task(2, 1, rng, {}, Activation::identity);
        auto params = model.named_parameters();
        Tensor head_w, head_b;
        for (auto& [path, t] : params) {
            if (ContinualModel::is_backbone_path(path)) {
                // weight = identity, bias = 0
                if (t.shape().size() == 2) {
                    for (double& v : t.values()) v = 0.0;
                    t.values()[0] = 1.0;
                    t.values()[3] = 1.0;
                } else {
                    for (double& v : t.values()) v = 0.0;
                }
            } else if (path.find("/adapter/up/") != std::string::npos) {
                for (double& v : t.values()) v = 0.0;  // exact skip-connection identity
            } else if (path.find("/head/weight") != std::string::npos) {
                head_w = t;
            } else if (path.find("/head/bias") != std::string::npos) {
                head_b = t;
            }
        }
        const double x0 = 0.8, x1 = -1.3;
        const int y = 1;
        Tensor X = Tensor::from({1, 2}, {x0, x1});
        Rng frng(3);
        std::vector<int> ys = {y};
        ParamDiag fisher = estimate_fisher_diag(model, X, 0, 1, frng, true, &ys);

        const std::vector<double>& w = head_w.values();
        const std::vector<double>& b = head_b.values();
        const double z0 = x0 * w[0] + x1 * w[2] + b[0];
        const double z1 = x0 * w[1] + x1 * w[3] + b[1];
        const double sigma = 1.0 / (1.0 + std::exp(-(z1 - z0)));  // p(class 1)
        const double s2 = (sigma - y) * (sigma - y);

        double worst = 0.0;
        for (std::size_t i = 0; i < fisher.size(); ++i) {
            if (fisher[i].first.find("/head/weight") != std::string::npos) {
                const std::vector<double>& f = fisher[i].second;
                worst = std::max(worst, std::fabs(f[0] - s2 * x0 * x0));
                worst = std::max(worst, std::fabs(f[1] - s2 * x0 * x0));
                worst = std::max(worst, std::fabs(f[2] - s2 * x1 * x1));
                worst = std::max(worst, std::fabs(f[3] - s2 * x1 * x1));
            }
            if (fisher[i].first.find("/head/bias") != std::string::npos) {
                worst = std::max(worst, std::fabs(fisher[i].second[0] - s2));
                worst = std::max(worst, std::fabs(fisher[i].second[1] - s2));
            }
        }
        if (worst > tol) ok = false;
        detail += fmt("logistic closed form max dev %.3g (tol %.0e)", worst, tol);
    }
    report(3, "estimator oracles", ok, detail);
}

// ---------- 4: identity and zero cases ----------
void check_identity_zero() {
    bool ok = true;
    std::string why;

    Rng rng(23);
    BackboneConfig bc;
    bc.input_dim = 5;
    bc.hidden = {9};
    bc.output_dim = 7;
    ContinualModel model(bc, rng);
    model.spawn_task(3, 2, rng);
    Tensor X = make_batch(6, 5, rng);

    // zero up-projection => adapter output is bitwise the input features
    {
        ContinualModel m = model.deep_copy();
        Tensor up_w = m.task(0).adapter.up.weight;
        Tensor up_b = m.task(0).adapter.up.bias;
        for (double& v : up_w.values()) v = 0.0;
        for (double& v : up_b.values()) v = 0.0;
        Graph g(false);
        Tensor feats = m.features(g, X);
        Tensor adapted = m.task(0).adapter.forward(g, feats);
        for (std::size_t i = 0; i < feats.size(); ++i)
            if (adapted.values()[i] != feats.values()[i]) ok = false;
        if (!ok) why += "adapter not identity at zero up; ";
    }

    // identical teacher and student => both distillation terms exactly zero
    {
        Rng trng(1);
        FrozenTeacher teacher = make_teacher(model, trng);
        Graph g;
        const double d = distill_loss(g, teacher, model, X, 2.0).value();
        const double f = backbone_reg(g, {teacher}, model, X, FeatureMetric::cosine).value();
        if (d != 0.0 || f != 0.0) {
            ok = false;
            why += fmt("self-distill %.3g self-feature %.3g; ", d, f);
        }
    }

    // theta == anchor => zero penalty with zero gradient
    {
        Rng frng(9);
        WeightAnchor a = make_anchor(model, estimate_fisher_diag(model, X, 0, 6, frng));
        Graph g;
        Tensor pen = ewc_penalty(g, model, {a}, 1234.5);
        model.zero_grad();
        g.backward(pen);
        bool all_zero = pen.value() == 0.0;
        for (auto& [path, t] : model.named_parameters()) all_zero = all_zero && grad_is_zero(t);
        if (!all_zero) {
            ok = false;
            why += fmt("at-anchor penalty %.3g or nonzero grads; ", pen.value());
        }
    }

    // all-zero strengths => the task loss handle itself comes back
    {
        RegularizerState state;
        Rng trng(2);
        state.teachers.push_back(make_teacher(model, trng));
        Rng frng(4);
        state.anchors.push_back(make_anchor(model, estimate_fisher_diag(model, X, 0, 6, frng)));
        for (LossKind kind :
             {LossKind::finetune, LossKind::weight_anchor, LossKind::lwf, LossKind::lwf_a}) {
            Graph g;
            Tensor task = g.softmax_cross_entropy(model.forward(g, X, 0), {0, 1, 2, 0, 1, 2});
            Tensor total = total_loss(g, kind, task, model, X, state, Lambdas{});
            if (!total.same_storage(task) || total.value() != task.value()) {
                ok = false;
                why += fmt("kind %d total != task; ", static_cast<int>(kind));
            }
        }
    }
    report(4, "identity and zero cases", ok,
           ok ? "adapter identity, self-distillation zero, at-anchor zero-with-zero-grad, zero "
                "strengths pass the task loss through"
              : why);
}

// ---------- 5 and 6: the pinned benchmark stream ----------

ExperimentConfig bench_config(const std::string& out_dir, const std::string& name) {
    ExperimentConfig cfg;
    cfg.name = name;
    cfg.dataset.kind = "synthetic";
    cfg.dataset.num_classes = 20;  // 5 tasks x 4 classes
    cfg.dataset.dim = 16;
    cfg.dataset.per_class = 200;
    cfg.dataset.separation = 3.0;
    cfg.dataset.spread = 0.5;
    cfg.ordering = "seeded_random";
    cfg.ordering_seed = 1993;
    cfg.classes_per_task = 4;
    cfg.method = "finetune";
    cfg.hidden = {32, 32};
    cfg.feature_dim = 32;
    cfg.bottleneck_width = 8;
    cfg.optimizer.lr = 0.1;
    cfg.optimizer.max_epochs = 25;
    cfg.optimizer.patience_epochs = 4;
    cfg.optimizer.min_lr = 1e-3;
    cfg.optimizer.batch_size = 128;
    cfg.hypersearch = false;
    cfg.seeds = {1, 2, 3, 4, 5};
    cfg.out_dir = out_dir;
    return cfg;
}

double final_mean(const RunRecord& rec) {
    return rec.mean_avg_acc.empty() ? 0.0 : rec.mean_avg_acc.back();
}

RunRecord check_benchmark_ordering(const std::string& out_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig ft = bench_config(out_dir, "bench_finetune");
    RunRecord ft_rec = run_experiment(ft);

    ExperimentConfig base = bench_config(out_dir, "bench");
    base.method = "lwf_a";
    base.use_adapters = true;
    base.use_backbone_reg = true;
    base.lambdas = default_lambdas("lwf_a");
    std::vector<RunRecord> arms = compare_ablation(base);
    const double full = final_mean(arms[3]);      // adapters + trunk regularizer
    const double wo_reg = final_mean(arms[2]);    // adapters, no trunk regularizer
    const double frozen = final_mean(arms[1]);    // adapters on a frozen trunk
    const double finetune = final_mean(ft_rec);
    const double secs = seconds_since(t0);

    const bool order_ok = full >= wo_reg && wo_reg >= frozen;
    const bool margin_ok = full >= finetune + 0.05;
    const bool time_ok = secs < 300.0;
    report(5, "adapter benchmark ordering", order_ok && margin_ok && time_ok,
           fmt("final mean accuracy: full %.4f >= no-reg %.4f >= frozen-trunk %.4f; full vs finetune "
               "%.4f (need +0.05); 5 seeds, %.0fs (cap 300s)",
               full, wo_reg, frozen, finetune, secs));
    return ft_rec;
}

void check_order_sensitivity(const std::string& out_dir, const RunRecord& random_rec) {
    ExperimentConfig coarse = bench_config(out_dir, "bench_coarse");
    coarse.ordering = "coarse";
    RunRecord coarse_rec = run_experiment(coarse);

    auto mean_final_forgetting = [](const RunRecord& rec) {
        double s = 0.0;
        std::size_t n = 0;
        for (const SeedResult& sr : rec.seeds)
            if (!sr.failed && !sr.avg_forgetting.empty()) {
                s += sr.avg_forgetting.back();
                ++n;
            }
        return n ? s / static_cast<double>(n) : 0.0;
    };
    const double f_random = mean_final_forgetting(random_rec);
    const double f_coarse = mean_final_forgetting(coarse_rec);
    const double a_random = final_mean(random_rec);
    const double a_coarse = final_mean(coarse_rec);
    const bool ok = f_coarse >= f_random + 0.02;
    report(6, "task-order sensitivity", ok,
           fmt("finetune forgetting: grouped ordering %.4f vs shuffled %.4f (need +0.02); final "
               "accuracy %.4f vs %.4f",
               f_coarse, f_random, a_coarse, a_random));
}

// ---------- 7: search contract ----------
void check_search_contract() {
    bool ok = true;
    std::string detail;
    SearchPolicy policy;

    // the first-task grid is exactly {0.5, 0.1, 0.05}
    {
        LabeledDataset ds = blob_data(2, 6, 32, 6.0, 41);
        TaskSpec spec = whole_task(ds);
        Rng rng(77);
        BackboneConfig bc;
        bc.input_dim = 6;
        bc.hidden = {8};
        bc.output_dim = 8;
        ContinualModel model(bc, rng);
        model.spawn_task(2, 2, rng);
        OptimizerConfig cfg;
        cfg.max_epochs = 3;
        cfg.batch_size = 8;
        SearchLog log;
        maximal_plasticity_search(model, ds, spec, 0, cfg, policy, 123, true, log);
        const bool grid_ok = log.probes.size() == 3 && log.probes[0].lr == 0.5 &&
                             log.probes[1].lr == 0.1 && log.probes[2].lr == 0.05;
        if (!grid_ok) ok = false;
        detail += fmt("first-task grid {%g, %g, %g}; ", log.probes.size() > 0 ? log.probes[0].lr : -1,
                      log.probes.size() > 1 ? log.probes[1].lr : -1,
                      log.probes.size() > 2 ? log.probes[2].lr : -1);
    }

    // strict halving from the method's starting strength, exhaustion flagged
    {
        LabeledDataset unlearnable = [] {
            LabeledDataset d;
            d.dim = 4;
            for (int r = 0; r < 16; ++r) {
                for (double v : {1.0, -1.0, 0.5, 0.25}) d.features.push_back(v);
                d.labels.push_back(r % 2);
            }
            d.class_names = {"a", "b"};
            return d;
        }();
        TaskSpec spec = whole_task(unlearnable);
        Rng rng(13);
        BackboneConfig bc;
        bc.input_dim = 4;
        bc.hidden = {6};
        bc.output_dim = 6;
        ContinualModel model(bc, rng);
        model.spawn_task(2, 2, rng);

        RegularizerState state;
        ParamDiag zeros;
        for (auto& [path, t] : model.named_parameters())
            zeros.emplace_back(path, std::vector<double>(t.size(), 0.0));
        state.anchors.push_back(make_anchor(model, zeros));

        OptimizerConfig cfg;
        cfg.max_epochs = 2;
        cfg.batch_size = 8;
        SearchLog log;
        Lambdas start = default_lambdas("ewc");
        stability_decay(model, unlearnable, spec, 0, LossKind::weight_anchor, state, cfg, policy, start,
                        1.0, 55, log);
        bool halving_ok = log.exhausted && log.halvings == policy.max_halvings &&
                          log.attempts.size() == policy.max_halvings + 1;
        double expect = start.lambda;
        for (const DecayAttempt& a : log.attempts) {
            if (a.lambdas.lambda != expect) halving_ok = false;
            expect /= 2.0;
        }
        if (!halving_ok) ok = false;
        detail += fmt("halving sequence from %g: %zu attempts, exhausted %d; ", start.lambda,
                      log.attempts.size(), static_cast<int>(log.exhausted));
    }

    // achievable reference terminates with the accepted accuracy over the bar
    {
        LabeledDataset ds = blob_data(2, 6, 40, 8.0, 59);
        TaskSpec spec = whole_task(ds);
        Rng rng(21);
        BackboneConfig bc;
        bc.input_dim = 6;
        bc.hidden = {8};
        bc.output_dim = 8;
        ContinualModel model(bc, rng);
        model.spawn_task(2, 2, rng);
        RegularizerState state;
        ParamDiag zeros;
        for (auto& [path, t] : model.named_parameters())
            zeros.emplace_back(path, std::vector<double>(t.size(), 0.0));
        state.anchors.push_back(make_anchor(model, zeros));
        OptimizerConfig cfg;
        cfg.max_epochs = 12;
        cfg.batch_size = 8;
        SearchLog log;
        const double reference = 0.6;
        stability_decay(model, ds, spec, 0, LossKind::weight_anchor, state, cfg, policy,
                        default_lambdas("ewc"), reference, 77, log);
        const DecayAttempt& last = log.attempts.back();
        const bool term_ok = !log.exhausted && last.accepted &&
                             last.val_accuracy >= policy.accuracy_fraction * reference;
        if (!term_ok) ok = false;
        detail += fmt("achievable case: accepted %.3f >= 0.95*%.2f, exhausted %d", last.val_accuracy,
                      reference, static_cast<int>(log.exhausted));
    }
    report(7, "search contract", ok, detail);
}

// ---------- 8: metric recompute ----------
void check_metric_recompute(const std::string& out_dir) {
    bool ok = true;
    std::string detail;

    ExperimentConfig cfg;
    cfg.name = "metrics";
    cfg.dataset.num_classes = 8;
    cfg.dataset.dim = 8;
    cfg.dataset.per_class = 30;
    cfg.dataset.separation = 4.0;
    cfg.classes_per_task = 3;  // tasks of 3, 3, 2
    cfg.method = "finetune";
    cfg.hidden = {12};
    cfg.feature_dim = 12;
    cfg.bottleneck_width = 4;
    cfg.optimizer.max_epochs = 6;
    cfg.optimizer.batch_size = 16;
    cfg.hypersearch = false;
    cfg.seeds = {1, 2};
    cfg.out_dir = out_dir;
    RunRecord rec = run_experiment(cfg);

    // averages and forgetting recomputed from the persisted csv must equal
    // the live series bit for bit
    for (const SeedResult& s : rec.seeds) {
        AccuracyMatrix m = load_accuracy_csv((fs::path(rec.dir) / s.task_il_csv).string());
        for (std::size_t t = 0; t < m.tasks(); ++t) {
            if (average_accuracy(m, t) != s.avg_acc[t]) ok = false;
            double f = 0.0;
            for (std::size_t k = 0; t > 0 && k < t; ++k) f += forgetting(m, t, k);
            const double mean_f = t > 0 ? f / static_cast<double>(t) : 0.0;
            if (mean_f != s.avg_forgetting[t]) ok = false;
        }
    }
    detail += ok ? "persisted csv recompute bitwise-equal; " : "csv recompute mismatch; ";

    // with no task oracle the score can never beat the oracle protocol
    int fixtures = 0;
    bool dominance = true;
    for (int f = 0; f < 25; ++f) {
        Rng rng(mix_seed(static_cast<std::uint64_t>(f), 0x51D));
        BackboneConfig bc;
        bc.input_dim = 4;
        bc.hidden = {6};
        bc.output_dim = 6;
        ContinualModel model(bc, rng);
        model.spawn_task(2, 2, rng);
        model.spawn_task(3, 2, rng);
        Tensor X = make_batch(8, 4, rng);
        for (std::size_t t = 0; t < 2; ++t) {
            const std::vector<int>& cls = model.task(t).class_list;
            std::vector<int> locals, globals;
            for (int r = 0; r < 8; ++r) {
                const int l = static_cast<int>(rng.uniform_index(cls.size()));
                locals.push_back(l);
                globals.push_back(cls[l]);
            }
            const double til = task_il_accuracy(model, X, locals, t);
            const double cil = class_il_accuracy(model, X, globals);
            ++fixtures;
            if (cil > til) dominance = false;
        }
    }
    if (!dominance) ok = false;
    detail += fmt("class-IL <= task-IL on %d random fixtures", fixtures);
    report(8, "metric recompute", ok, detail);
}

// ---------- 9: determinism ----------
void check_determinism(const std::string& out_dir) {
    ExperimentConfig cfg;
    cfg.name = "det";
    cfg.dataset.num_classes = 6;
    cfg.dataset.dim = 6;
    cfg.dataset.per_class = 20;
    cfg.dataset.separation = 4.0;
    cfg.classes_per_task = 3;
    cfg.method = "ewc";
    cfg.hidden = {8};
    cfg.feature_dim = 8;
    cfg.bottleneck_width = 2;
    cfg.optimizer.max_epochs = 5;
    cfg.optimizer.batch_size = 8;
    cfg.hypersearch = true;  // the search path must be deterministic too
    cfg.seeds = {3};
    cfg.out_dir = out_dir + "/det_a";
    RunRecord a = run_experiment(cfg);
    cfg.out_dir = out_dir + "/det_b";
    RunRecord b = run_experiment(cfg);

    auto file_bytes = [](const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        std::ostringstream ss;
        ss << f.rdbuf();
        return ss.str();
    };
    bool ok = true;
    for (const char* name : {"seed0000_task_il.csv", "seed0000_class_il.csv"})
        if (file_bytes(fs::path(a.dir) / name) != file_bytes(fs::path(b.dir) / name)) ok = false;
    if (a.seeds[0].avg_acc != b.seeds[0].avg_acc) ok = false;
    if (a.seeds[0].chosen_lrs != b.seeds[0].chosen_lrs) ok = false;
    report(9, "determinism", ok,
           ok ? "rerun with identical config and seed reproduced both accuracy matrices byte-for-byte "
                "(search enabled)"
              : "rerun diverged");
}

}  // namespace

int main() {
    const std::string root =
        (fs::temp_directory_path() / ("lifelong_acceptance_" + std::to_string(::getpid()))).string();
    std::error_code ec;
    fs::remove_all(root, ec);
    fs::create_directories(root);

    check_gradient_fidelity();
    check_penalty_exclusion();
    check_estimator_oracles();
    check_identity_zero();
    RunRecord ft_rec = check_benchmark_ordering(root);
    check_order_sensitivity(root, ft_rec);
    check_search_contract();
    check_metric_recompute(root);
    check_determinism(root);

    fs::remove_all(root, ec);
    std::printf("acceptance: %d/%d criteria passed\n", g_passed, g_passed + g_failed);
    return g_failed == 0 ? 0 : 1;
}
