#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "lifelong/checkpoint.hpp"
#include "lifelong/eval.hpp"
#include "lifelong/hypersearch.hpp"
#include "lifelong/trainer.hpp"

namespace lifelong {

inline constexpr const char* kToolkitVersion = "0.1.0";

// ---- configuration ----

struct DatasetSpec {
    std::string kind = "synthetic";  // synthetic | csv | idx
    // synthetic clusters
    std::size_t num_classes = 20;
    std::size_t dim = 16;
    std::size_t per_class = 200;
    double separation = 3.0;
    double spread = 0.25;
    // csv
    std::string path;
    std::string superclass_path;  // optional two-column class,group file
    // idx pair
    std::string images;
    std::string labels;
};

struct ExperimentConfig {
    std::string name = "experiment";
    DatasetSpec dataset;
    std::string ordering = "seeded_random";
    std::uint64_t ordering_seed = 1993;
    std::size_t classes_per_task = 4;
    double test_fraction = 0.2;

    std::string method = "finetune";  // finetune|ewc|mas|pathint|lwf|lwf_a|ewc_a|mas_a|pathint_a
    bool use_adapters = false;
    bool freeze_backbone = false;
    bool use_backbone_reg = false;
    std::size_t bottleneck_width = 16;
    Lambdas lambdas;
    double temperature = 2.0;
    std::string feature_metric = "cosine";

    std::vector<std::size_t> hidden = {64, 64};
    std::size_t feature_dim = 64;
    std::string activation = "relu";

    OptimizerConfig optimizer;
    bool hypersearch = true;
    SearchPolicy search;
    std::size_t fisher_samples = 256;

    std::vector<std::uint64_t> seeds = {1};
    std::string out_dir = "runs";
};

struct MethodTraits {
    Method base = Method::finetune;
    bool adapters = false;
    bool backbone_reg = false;
};

inline MethodTraits method_defaults(const std::string& s) {
    if (s == "finetune") return {Method::finetune, false, false};
    if (s == "ewc") return {Method::ewc, false, false};
    if (s == "ewc_a") return {Method::ewc, true, false};
    if (s == "mas") return {Method::mas, false, false};
    if (s == "mas_a") return {Method::mas, true, false};
    if (s == "pathint") return {Method::pathint, false, false};
    if (s == "pathint_a") return {Method::pathint, true, false};
    if (s == "lwf") return {Method::lwf, false, false};
    if (s == "lwf_a") return {Method::lwf, true, true};
    throw ConfigError("unknown method '" + s +
                      "' (expected finetune|ewc|mas|pathint|lwf|lwf_a|ewc_a|mas_a|pathint_a)");
}

inline bool is_known_method(const std::string& s) {
    try {
        method_defaults(s);
        return true;
    } catch (const ConfigError&) {
        return false;
    }
}

// strength starting points per method (halved from here by the search)
inline Lambdas default_lambdas(const std::string& method) {
    Lambdas l;
    MethodTraits t = method_defaults(method);
    switch (t.base) {
        case Method::finetune: break;
        case Method::ewc: l.lambda = 10000.0; break;
        case Method::mas: l.lambda = 400.0; break;
        case Method::pathint: l.lambda = 10.0; break;
        case Method::lwf: {
            if (t.backbone_reg) {
                l.lambda_distill = 5.0;
                l.lambda_phi = 0.5;
            } else {
                l.lambda_distill = 10.0;
            }
            break;
        }
        case Method::lwf_a: break;  // not a config-level name
    }
    return l;
}

// the loss recipe actually trained with, after flags
inline Method effective_method(const ExperimentConfig& cfg) {
    MethodTraits t = method_defaults(cfg.method);
    if (t.base == Method::lwf) return cfg.use_backbone_reg ? Method::lwf_a : Method::lwf;
    return t.base;
}

// canonical slug for tables and file names, derived from method + flags
inline std::string method_label(const ExperimentConfig& cfg) {
    MethodTraits t = method_defaults(cfg.method);
    if (t.base == Method::lwf) {
        if (!cfg.use_adapters) return "lwf";
        if (cfg.freeze_backbone) return "lwf_a_fb";
        return cfg.use_backbone_reg ? "lwf_a" : "lwf_a_wo_reg";
    }
    std::string s = method_name(t.base);
    if (cfg.use_adapters) s += "_a";
    if (cfg.freeze_backbone) s += "_fb";
    return s;
}

// Collects every violated constraint instead of stopping at the first.
inline std::vector<std::string> validate(const ExperimentConfig& cfg) {
    std::vector<std::string> v;
    if (cfg.name.empty()) v.push_back("name must not be empty");
    if (!is_known_method(cfg.method)) {
        v.push_back("unknown method '" + cfg.method + "'");
    } else {
        MethodTraits t = method_defaults(cfg.method);
        if (t.adapters && !cfg.use_adapters)
            v.push_back("method '" + cfg.method + "' implies use_adapters=true");
        if (t.backbone_reg && !cfg.use_backbone_reg)
            v.push_back("method '" + cfg.method + "' implies use_backbone_reg=true");
        if (cfg.use_backbone_reg && !cfg.use_adapters)
            v.push_back("use_backbone_reg requires use_adapters");
        if (cfg.use_backbone_reg && t.base != Method::lwf)
            v.push_back("use_backbone_reg only applies to the lwf family");
        if (cfg.use_backbone_reg && cfg.freeze_backbone)
            v.push_back("use_backbone_reg is pointless with freeze_backbone (the trunk cannot drift)");
        if (cfg.fisher_samples == 0 && t.base == Method::ewc)
            v.push_back("fisher_samples must be positive for ewc methods");
    }

    if (cfg.dataset.kind == "synthetic") {
        if (cfg.dataset.num_classes == 0) v.push_back("dataset.num_classes must be positive");
        if (cfg.dataset.dim == 0) v.push_back("dataset.dim must be positive");
        if (cfg.dataset.per_class == 0) v.push_back("dataset.per_class must be positive");
        if (cfg.dataset.separation < 0.0) v.push_back("dataset.separation must be >= 0");
        if (cfg.dataset.spread < 0.0) v.push_back("dataset.spread must be >= 0");
    } else if (cfg.dataset.kind == "csv") {
        if (cfg.dataset.path.empty()) v.push_back("dataset.path must be set for kind csv");
    } else if (cfg.dataset.kind == "idx") {
        if (cfg.dataset.images.empty()) v.push_back("dataset.images must be set for kind idx");
        if (cfg.dataset.labels.empty()) v.push_back("dataset.labels must be set for kind idx");
    } else {
        v.push_back("unknown dataset.kind '" + cfg.dataset.kind + "' (expected synthetic|csv|idx)");
    }

    try {
        ordering_from_name(cfg.ordering);
    } catch (const ConfigError& e) {
        v.push_back(e.what());
    }
    try {
        activation_from_name(cfg.activation);
    } catch (const ConfigError& e) {
        v.push_back(e.what());
    }
    if (cfg.feature_metric != "cosine" && cfg.feature_metric != "squared")
        v.push_back("feature_metric must be cosine or squared");

    if (cfg.classes_per_task == 0) v.push_back("classes_per_task must be positive");
    if (!(cfg.test_fraction > 0.0) || cfg.test_fraction >= 1.0)
        v.push_back("test_fraction must lie in (0, 1) so every task has test rows");
    if (cfg.bottleneck_width == 0) v.push_back("bottleneck_width must be positive");
    if (cfg.bottleneck_width > cfg.feature_dim)
        v.push_back("bottleneck_width must not exceed feature_dim");
    if (cfg.feature_dim == 0) v.push_back("feature_dim must be positive");
    for (std::size_t h : cfg.hidden)
        if (h == 0) {
            v.push_back("hidden widths must be positive");
            break;
        }
    if (!(cfg.temperature > 0.0)) v.push_back("temperature must be positive");
    if (cfg.lambdas.lambda < 0.0 || cfg.lambdas.lambda_distill < 0.0 || cfg.lambdas.lambda_phi < 0.0)
        v.push_back("lambda strengths must be non-negative");
    try {
        cfg.optimizer.validate();
    } catch (const ConfigError& e) {
        v.push_back(std::string("optimizer: ") + e.what());
    }
    try {
        cfg.search.validate();
    } catch (const ConfigError& e) {
        v.push_back(std::string("search: ") + e.what());
    }
    if (cfg.seeds.empty()) v.push_back("seeds must not be empty");
    if (cfg.out_dir.empty()) v.push_back("out_dir must not be empty");
    return v;
}

inline void validate_or_throw(const ExperimentConfig& cfg) {
    std::vector<std::string> v = validate(cfg);
    if (v.empty()) return;
    std::string msg = "invalid config:";
    for (const std::string& s : v) msg += "\n  - " + s;
    throw ConfigError(msg);
}

// ---- config (de)serialization ----

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json d;
    d["kind"] = cfg.dataset.kind;
    if (cfg.dataset.kind == "synthetic") {
        d["num_classes"] = cfg.dataset.num_classes;
        d["dim"] = cfg.dataset.dim;
        d["per_class"] = cfg.dataset.per_class;
        d["separation"] = cfg.dataset.separation;
        d["spread"] = cfg.dataset.spread;
    } else if (cfg.dataset.kind == "csv") {
        d["path"] = cfg.dataset.path;
        if (!cfg.dataset.superclass_path.empty()) d["superclass_map"] = cfg.dataset.superclass_path;
    } else if (cfg.dataset.kind == "idx") {
        d["images"] = cfg.dataset.images;
        d["labels"] = cfg.dataset.labels;
    }
    nlohmann::json j;
    j["name"] = cfg.name;
    j["dataset"] = d;
    j["ordering"] = cfg.ordering;
    j["ordering_seed"] = cfg.ordering_seed;
    j["classes_per_task"] = cfg.classes_per_task;
    j["test_fraction"] = cfg.test_fraction;
    j["method"] = cfg.method;
    j["use_adapters"] = cfg.use_adapters;
    j["freeze_backbone"] = cfg.freeze_backbone;
    j["use_backbone_reg"] = cfg.use_backbone_reg;
    j["bottleneck_width"] = cfg.bottleneck_width;
    j["lambda"] = cfg.lambdas.lambda;
    j["lambda_distill"] = cfg.lambdas.lambda_distill;
    j["lambda_phi"] = cfg.lambdas.lambda_phi;
    j["temperature"] = cfg.temperature;
    j["feature_metric"] = cfg.feature_metric;
    j["hidden"] = cfg.hidden;
    j["feature_dim"] = cfg.feature_dim;
    j["activation"] = cfg.activation;
    j["optimizer"] = {{"lr", cfg.optimizer.lr},
                      {"momentum", cfg.optimizer.momentum},
                      {"weight_decay", cfg.optimizer.weight_decay},
                      {"clip_norm", cfg.optimizer.clip_norm},
                      {"lr_decay_factor", cfg.optimizer.lr_decay_factor},
                      {"patience_epochs", cfg.optimizer.patience_epochs},
                      {"min_lr", cfg.optimizer.min_lr},
                      {"max_epochs", cfg.optimizer.max_epochs},
                      {"batch_size", cfg.optimizer.batch_size}};
    j["hypersearch"] = cfg.hypersearch;
    j["search"] = {{"lr_grid_first", cfg.search.lr_grid_first},
                   {"lr_grid_later", cfg.search.lr_grid_later},
                   {"accuracy_fraction", cfg.search.accuracy_fraction},
                   {"max_halvings", cfg.search.max_halvings}};
    j["fisher_samples"] = cfg.fisher_samples;
    j["seeds"] = cfg.seeds;
    j["out_dir"] = cfg.out_dir;
    return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    try {
        ExperimentConfig cfg;
        cfg.name = j.value("name", cfg.name);
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            cfg.dataset.kind = d.value("kind", cfg.dataset.kind);
            cfg.dataset.num_classes = d.value("num_classes", cfg.dataset.num_classes);
            cfg.dataset.dim = d.value("dim", cfg.dataset.dim);
            cfg.dataset.per_class = d.value("per_class", cfg.dataset.per_class);
            cfg.dataset.separation = d.value("separation", cfg.dataset.separation);
            cfg.dataset.spread = d.value("spread", cfg.dataset.spread);
            cfg.dataset.path = d.value("path", cfg.dataset.path);
            cfg.dataset.superclass_path = d.value("superclass_map", cfg.dataset.superclass_path);
            cfg.dataset.images = d.value("images", cfg.dataset.images);
            cfg.dataset.labels = d.value("labels", cfg.dataset.labels);
        }
        cfg.ordering = j.value("ordering", cfg.ordering);
        cfg.ordering_seed = j.value("ordering_seed", cfg.ordering_seed);
        cfg.classes_per_task = j.value("classes_per_task", cfg.classes_per_task);
        cfg.test_fraction = j.value("test_fraction", cfg.test_fraction);
        cfg.method = j.value("method", cfg.method);

        // flags default from the method name unless given explicitly
        MethodTraits traits{};
        if (is_known_method(cfg.method)) traits = method_defaults(cfg.method);
        cfg.use_adapters = j.value("use_adapters", traits.adapters);
        cfg.freeze_backbone = j.value("freeze_backbone", false);
        cfg.use_backbone_reg = j.value("use_backbone_reg", traits.backbone_reg);

        cfg.bottleneck_width = j.value("bottleneck_width", cfg.bottleneck_width);
        Lambdas defaults = is_known_method(cfg.method) ? default_lambdas(cfg.method) : Lambdas{};
        cfg.lambdas.lambda = j.value("lambda", defaults.lambda);
        cfg.lambdas.lambda_distill = j.value("lambda_distill", defaults.lambda_distill);
        cfg.lambdas.lambda_phi = j.value("lambda_phi", defaults.lambda_phi);
        cfg.temperature = j.value("temperature", cfg.temperature);
        cfg.feature_metric = j.value("feature_metric", cfg.feature_metric);
        cfg.hidden = j.value("hidden", cfg.hidden);
        cfg.feature_dim = j.value("feature_dim", cfg.feature_dim);
        cfg.activation = j.value("activation", cfg.activation);
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            cfg.optimizer.lr = o.value("lr", cfg.optimizer.lr);
            cfg.optimizer.momentum = o.value("momentum", cfg.optimizer.momentum);
            cfg.optimizer.weight_decay = o.value("weight_decay", cfg.optimizer.weight_decay);
            cfg.optimizer.clip_norm = o.value("clip_norm", cfg.optimizer.clip_norm);
            cfg.optimizer.lr_decay_factor = o.value("lr_decay_factor", cfg.optimizer.lr_decay_factor);
            cfg.optimizer.patience_epochs = o.value("patience_epochs", cfg.optimizer.patience_epochs);
            cfg.optimizer.min_lr = o.value("min_lr", cfg.optimizer.min_lr);
            cfg.optimizer.max_epochs = o.value("max_epochs", cfg.optimizer.max_epochs);
            cfg.optimizer.batch_size = o.value("batch_size", cfg.optimizer.batch_size);
        }
        cfg.hypersearch = j.value("hypersearch", cfg.hypersearch);
        if (j.contains("search")) {
            const auto& s = j.at("search");
            cfg.search.lr_grid_first = s.value("lr_grid_first", cfg.search.lr_grid_first);
            cfg.search.lr_grid_later = s.value("lr_grid_later", cfg.search.lr_grid_later);
            cfg.search.accuracy_fraction = s.value("accuracy_fraction", cfg.search.accuracy_fraction);
            cfg.search.max_halvings = s.value("max_halvings", cfg.search.max_halvings);
        }
        cfg.fisher_samples = j.value("fisher_samples", cfg.fisher_samples);
        cfg.seeds = j.value("seeds", cfg.seeds);
        cfg.out_dir = j.value("out_dir", cfg.out_dir);
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
}

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return config_to_json(a) == config_to_json(b);
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    return config_from_json(j);
}

// ---- run records ----

struct SeedResult {
    std::uint64_t seed = 0;
    std::optional<AccuracyMatrix> task_il;
    std::optional<AccuracyMatrix> class_il;
    std::vector<double> avg_acc;         // task-IL A_t after each task
    std::vector<double> avg_forgetting;  // mean forgetting over earlier tasks after each task
    std::vector<double> chosen_lrs;
    std::vector<Lambdas> accepted_lambdas;
    std::vector<SearchLog> search;
    std::string task_il_csv;
    std::string class_il_csv;
    bool failed = false;
    std::string failure;
};

struct RunRecord {
    ExperimentConfig config;
    std::string version = kToolkitVersion;
    std::vector<SeedResult> seeds;
    std::vector<double> mean_avg_acc;  // across non-failed seeds, per task step
    std::vector<double> std_avg_acc;
    double wall_clock_seconds = 0.0;
    std::string dir;
    bool failed = false;  // true when any seed failed
};

inline LabeledDataset build_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
    const DatasetSpec& d = cfg.dataset;
    if (d.kind == "synthetic") {
        Rng rng(mix_seed(seed, 0xDA7A5E7ull));
        return make_synthetic(d.num_classes, d.dim, d.per_class, d.separation, rng, d.spread);
    }
    if (d.kind == "csv") {
        LabeledDataset ds = load_csv(d.path);
        if (!d.superclass_path.empty()) load_superclass_map(ds, d.superclass_path);
        return ds;
    }
    if (d.kind == "idx") return load_idx(d.images, d.labels);
    throw ConfigError("unknown dataset.kind '" + d.kind + "'");
}

// The whole per-seed pipeline: sample data, stream tasks, per task spawn ->
// search -> train -> consolidate -> score every seen task under both
// protocols. Numeric blowups mark the seed failed instead of killing the run.
inline SeedResult run_single_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                                  std::ostream* progress = nullptr) {
    SeedResult out;
    out.seed = seed;
    try {
        LabeledDataset ds = build_dataset(cfg, seed);
        TaskStream stream = build_stream(ds, cfg.classes_per_task, ordering_from_name(cfg.ordering),
                                         cfg.ordering_seed, cfg.test_fraction);
        const std::size_t T = stream.tasks.size();
        AccuracyMatrix task_il(T), class_il(T);

        const Method method = effective_method(cfg);
        const LossKind kind = loss_kind(method);
        BackboneConfig bc;
        bc.input_dim = ds.dim;
        bc.hidden = cfg.hidden;
        bc.output_dim = cfg.feature_dim;
        bc.activation = activation_from_name(cfg.activation);
        Rng init_rng(mix_seed(seed, 0x0DE11E7ull));
        ContinualModel model(bc, init_rng, cfg.freeze_backbone);
        model.set_adapters_enabled(cfg.use_adapters);

        RegularizerState state;
        state.temperature = cfg.temperature;
        state.metric = cfg.feature_metric == "squared" ? FeatureMetric::squared : FeatureMetric::cosine;
        PathIntAccumulator pia;
        PathIntAccumulator* pip = method == Method::pathint ? &pia : nullptr;

        for (std::size_t t = 0; t < T; ++t) {
            const TaskSpec& spec = stream.tasks[t];
            model.spawn_task(spec.classes.size(), cfg.bottleneck_width, init_rng, spec.classes,
                             bc.activation);
            const std::uint64_t tseed = mix_seed(mix_seed(seed, 0x7A5Cull), t);

            SearchLog log;
            OptimizerConfig ocfg = cfg.optimizer;
            Lambdas lam = cfg.lambdas;
            if (progress) *progress << "[seed " << seed << "] task " << t << " (" << spec.classes.size()
                                    << " classes)\n";
            if (cfg.hypersearch) {
                ocfg.lr = maximal_plasticity_search(model, ds, spec, t, ocfg, cfg.search, tseed, t == 0,
                                                    log, progress);
                const bool reg_active =
                    (kind == LossKind::weight_anchor && !state.anchors.empty() && lam.lambda > 0.0) ||
                    ((kind == LossKind::lwf || kind == LossKind::lwf_a) && !state.teachers.empty());
                if (reg_active) {
                    DecayResult dr = stability_decay(model, ds, spec, t, kind, state, ocfg, cfg.search,
                                                     lam, log.finetune_accuracy, tseed, log, pip, progress);
                    lam = dr.lambdas;
                } else {
                    Rng rng(mix_seed(tseed, 0x57AB1Eull));
                    TrainReport rep = train_task(model, ds, spec, t, kind, lam, state, ocfg, rng, pip,
                                                 progress);
                    log.attempts.push_back({lam, rep.final_val_accuracy, true});
                }
            } else {
                Rng rng(mix_seed(tseed, 0x57AB1Eull));
                TrainReport rep =
                    train_task(model, ds, spec, t, kind, lam, state, ocfg, rng, pip, progress);
                log.chosen_lr = ocfg.lr;
                log.finetune_accuracy = rep.final_val_accuracy;
            }
            out.search.push_back(log);
            out.chosen_lrs.push_back(ocfg.lr);
            out.accepted_lambdas.push_back(lam);

            Tensor Xt = gather_features(ds, spec.train_idx);
            std::vector<int> locals = to_local_labels(gather_labels(ds, spec.train_idx),
                                                      model.task(t).class_list);
            Rng crng(mix_seed(tseed, 0xC0115ull));
            consolidate_after_task(model, method, t, Xt, &locals, state, crng, pip, cfg.fisher_samples);

            for (std::size_t k = 0; k <= t; ++k) {
                task_il.set(t, k, evaluate_task_il(model, ds, stream.tasks[k], k));
                class_il.set(t, k, evaluate_class_il(model, ds, stream.tasks[k]));
            }
            out.avg_acc.push_back(average_accuracy(task_il, t));
            double f = 0.0;
            for (std::size_t k = 0; t > 0 && k < t; ++k) f += forgetting(task_il, t, k);
            out.avg_forgetting.push_back(t > 0 ? f / static_cast<double>(t) : 0.0);
            if (progress)
                *progress << "[seed " << seed << "] task " << t << " done, avg_acc "
                          << out.avg_acc.back() << "\n";
        }
        out.task_il = std::move(task_il);
        out.class_il = std::move(class_il);
    } catch (const NumericError& e) {
        out.failed = true;
        out.failure = e.what();
    }
    return out;
}

// ---- persistence ----

namespace detail {
inline void write_text_atomic(const std::filesystem::path& p, const std::string& text) {
    std::filesystem::path tmp = p;
    tmp += ".tmp";
    {
        std::ofstream f(tmp);
        if (!f) throw InputError("cannot open '" + tmp.string() + "' for writing");
        f << text;
        if (!f.good()) throw InputError("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, p);
}

inline nlohmann::json lambdas_to_json(const Lambdas& l) {
    return {{"lambda", l.lambda}, {"lambda_distill", l.lambda_distill}, {"lambda_phi", l.lambda_phi}};
}

inline Lambdas lambdas_from_json(const nlohmann::json& j) {
    Lambdas l;
    l.lambda = j.value("lambda", 0.0);
    l.lambda_distill = j.value("lambda_distill", 0.0);
    l.lambda_phi = j.value("lambda_phi", 0.0);
    return l;
}

inline nlohmann::json search_to_json(const SearchLog& s) {
    nlohmann::json probes = nlohmann::json::array();
    for (const LrProbe& p : s.probes) probes.push_back({{"lr", p.lr}, {"val_accuracy", p.val_accuracy}});
    nlohmann::json attempts = nlohmann::json::array();
    for (const DecayAttempt& a : s.attempts)
        attempts.push_back({{"lambdas", lambdas_to_json(a.lambdas)},
                            {"val_accuracy", a.val_accuracy},
                            {"accepted", a.accepted}});
    return {{"probes", probes},          {"chosen_lr", s.chosen_lr},
            {"finetune_accuracy", s.finetune_accuracy}, {"attempts", attempts},
            {"halvings", s.halvings},    {"exhausted", s.exhausted}};
}

inline SearchLog search_from_json(const nlohmann::json& j) {
    SearchLog s;
    for (const auto& p : j.value("probes", nlohmann::json::array()))
        s.probes.push_back({p.value("lr", 0.0), p.value("val_accuracy", 0.0)});
    s.chosen_lr = j.value("chosen_lr", 0.0);
    s.finetune_accuracy = j.value("finetune_accuracy", 0.0);
    for (const auto& a : j.value("attempts", nlohmann::json::array()))
        s.attempts.push_back({lambdas_from_json(a.value("lambdas", nlohmann::json::object())),
                              a.value("val_accuracy", 0.0), a.value("accepted", false)});
    s.halvings = j.value("halvings", std::size_t{0});
    s.exhausted = j.value("exhausted", false);
    return s;
}
}  // namespace detail

inline nlohmann::json record_to_json(const RunRecord& rec) {
    nlohmann::json seeds = nlohmann::json::array();
    for (const SeedResult& s : rec.seeds) {
        nlohmann::json js;
        js["seed"] = s.seed;
        js["failed"] = s.failed;
        js["failure"] = s.failure;
        js["task_il_csv"] = s.task_il_csv;
        js["class_il_csv"] = s.class_il_csv;
        js["avg_acc"] = s.avg_acc;
        js["avg_forgetting"] = s.avg_forgetting;
        js["chosen_lrs"] = s.chosen_lrs;
        nlohmann::json lams = nlohmann::json::array();
        for (const Lambdas& l : s.accepted_lambdas) lams.push_back(detail::lambdas_to_json(l));
        js["accepted_lambdas"] = lams;
        nlohmann::json logs = nlohmann::json::array();
        for (const SearchLog& l : s.search) logs.push_back(detail::search_to_json(l));
        js["search"] = logs;
        seeds.push_back(js);
    }
    nlohmann::json j;
    j["format"] = "lifelong-run";
    j["version"] = 1;
    j["toolkit_version"] = rec.version;
    j["label"] = method_label(rec.config);
    j["config"] = config_to_json(rec.config);
    j["seeds"] = seeds;
    j["mean_avg_acc"] = rec.mean_avg_acc;
    j["std_avg_acc"] = rec.std_avg_acc;
    j["wall_clock_seconds"] = rec.wall_clock_seconds;
    j["failed"] = rec.failed;
    return j;
}

// Multi-seed runner. Seeds share nothing mutable; with jobs > 1 they run on
// worker threads and land in their preassigned slots, so serial and parallel
// execution produce identical records.
inline RunRecord run_experiment(const ExperimentConfig& cfg, std::size_t jobs = 1,
                                std::ostream* progress = nullptr) {
    validate_or_throw(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(cfg.out_dir) / cfg.name;
    fs::create_directories(dir);

    RunRecord rec;
    rec.config = cfg;
    rec.dir = dir.string();
    rec.seeds.resize(cfg.seeds.size());

    if (jobs <= 1 || cfg.seeds.size() == 1) {
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
            rec.seeds[i] = run_single_seed(cfg, cfg.seeds[i], progress);
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= cfg.seeds.size()) return;
                try {
                    rec.seeds[i] = run_single_seed(cfg, cfg.seeds[i], nullptr);
                } catch (const std::exception& e) {  // keep the pool alive; mark and move on
                    rec.seeds[i].seed = cfg.seeds[i];
                    rec.seeds[i].failed = true;
                    rec.seeds[i].failure = e.what();
                }
            }
        };
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < std::min(jobs, cfg.seeds.size()); ++w) pool.emplace_back(worker);
        for (std::thread& th : pool) th.join();
    }

    // persist matrices and aggregate the curves
    std::size_t T = 0;
    for (std::size_t i = 0; i < rec.seeds.size(); ++i) {
        SeedResult& s = rec.seeds[i];
        if (s.failed) {
            rec.failed = true;
            continue;
        }
        char base[64];
        std::snprintf(base, sizeof base, "seed%04zu", i);
        s.task_il_csv = std::string(base) + "_task_il.csv";
        s.class_il_csv = std::string(base) + "_class_il.csv";
        save_accuracy_csv(*s.task_il, (dir / (s.task_il_csv + ".tmp")).string());
        fs::rename(dir / (s.task_il_csv + ".tmp"), dir / s.task_il_csv);
        save_accuracy_csv(*s.class_il, (dir / (s.class_il_csv + ".tmp")).string());
        fs::rename(dir / (s.class_il_csv + ".tmp"), dir / s.class_il_csv);
        T = std::max(T, s.avg_acc.size());
    }
    for (std::size_t t = 0; t < T; ++t) {
        double sum = 0.0, sum2 = 0.0;
        std::size_t n = 0;
        for (const SeedResult& s : rec.seeds) {
            if (s.failed || t >= s.avg_acc.size()) continue;
            sum += s.avg_acc[t];
            sum2 += s.avg_acc[t] * s.avg_acc[t];
            ++n;
        }
        if (n == 0) break;
        const double mean = sum / static_cast<double>(n);
        const double var = std::max(0.0, sum2 / static_cast<double>(n) - mean * mean);
        rec.mean_avg_acc.push_back(mean);
        rec.std_avg_acc.push_back(std::sqrt(var));
    }

    rec.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    detail::write_text_atomic(dir / "manifest.json", record_to_json(rec).dump(1));
    return rec;
}

// Reads a persisted record back, matrices included. Partial records load and
// keep their failure markers.
inline RunRecord load_run_record(const std::string& dir_path) {
    namespace fs = std::filesystem;
    const fs::path dir(dir_path);
    std::ifstream f(dir / "manifest.json");
    if (!f) throw InputError("cannot open '" + (dir / "manifest.json").string() + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(dir_path + "/manifest.json: " + e.what());
    }
    if (j.value("format", "") != "lifelong-run")
        throw ParseError(dir_path + ": not a run manifest");
    RunRecord rec;
    rec.config = config_from_json(j.at("config"));
    rec.version = j.value("toolkit_version", "");
    rec.mean_avg_acc = j.value("mean_avg_acc", std::vector<double>{});
    rec.std_avg_acc = j.value("std_avg_acc", std::vector<double>{});
    rec.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    rec.failed = j.value("failed", false);
    rec.dir = dir_path;
    for (const auto& js : j.value("seeds", nlohmann::json::array())) {
        SeedResult s;
        s.seed = js.value("seed", std::uint64_t{0});
        s.failed = js.value("failed", false);
        s.failure = js.value("failure", "");
        s.task_il_csv = js.value("task_il_csv", "");
        s.class_il_csv = js.value("class_il_csv", "");
        s.avg_acc = js.value("avg_acc", std::vector<double>{});
        s.avg_forgetting = js.value("avg_forgetting", std::vector<double>{});
        s.chosen_lrs = js.value("chosen_lrs", std::vector<double>{});
        for (const auto& l : js.value("accepted_lambdas", nlohmann::json::array()))
            s.accepted_lambdas.push_back(detail::lambdas_from_json(l));
        for (const auto& sl : js.value("search", nlohmann::json::array()))
            s.search.push_back(detail::search_from_json(sl));
        if (!s.failed) {
            s.task_il = load_accuracy_csv((dir / s.task_il_csv).string());
            s.class_il = load_accuracy_csv((dir / s.class_il_csv).string());
        }
        rec.seeds.push_back(std::move(s));
    }
    return rec;
}

// ---- summaries ----

struct SummaryFiles {
    std::string table;
    std::vector<std::string> curves;
};

// One table row per record (average-over-tasks and final average accuracy,
// mean and std over seeds) plus one (t, mean, std) curve file per record.
inline SummaryFiles emit_summary(const std::vector<RunRecord>& records, const std::string& out_dir) {
    if (records.empty()) throw InputError("summary needs at least one run record");
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    char buf[64];

    std::string table = "label,seeds,tasks,avg_acc_mean,avg_acc_std,final_acc_mean,final_acc_std\n";
    SummaryFiles out;
    std::vector<std::string> used;
    for (const RunRecord& rec : records) {
        std::vector<double> per_seed_avg, per_seed_final;
        std::size_t T = 0;
        for (const SeedResult& s : rec.seeds) {
            if (s.failed || s.avg_acc.empty()) continue;
            double m = 0.0;
            for (double a : s.avg_acc) m += a;
            per_seed_avg.push_back(m / static_cast<double>(s.avg_acc.size()));
            per_seed_final.push_back(s.avg_acc.back());
            T = std::max(T, s.avg_acc.size());
        }
        auto mean_std = [](const std::vector<double>& v) {
            if (v.empty()) return std::make_pair(0.0, 0.0);
            double sum = 0.0, sum2 = 0.0;
            for (double x : v) sum += x, sum2 += x * x;
            const double mean = sum / static_cast<double>(v.size());
            return std::make_pair(mean,
                                  std::sqrt(std::max(0.0, sum2 / static_cast<double>(v.size()) - mean * mean)));
        };
        auto [am, as] = mean_std(per_seed_avg);
        auto [fm, fs_] = mean_std(per_seed_final);

        std::string label = method_label(rec.config);
        std::string unique = label;
        for (std::size_t n = 2; std::find(used.begin(), used.end(), unique) != used.end(); ++n)
            unique = label + "_" + std::to_string(n);
        used.push_back(unique);

        table += unique + "," + std::to_string(per_seed_avg.size()) + "," + std::to_string(T);
        for (double v : {am, as, fm, fs_}) {
            std::snprintf(buf, sizeof buf, ",%.17g", v);
            table += buf;
        }
        table += "\n";

        std::string curve = "t,mean_avg_acc,std_avg_acc\n";
        for (std::size_t t = 0; t < rec.mean_avg_acc.size(); ++t) {
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g", t + 1, rec.mean_avg_acc[t],
                          rec.std_avg_acc[t]);
            curve += buf;
            curve += "\n";
        }
        const fs::path cpath = fs::path(out_dir) / (unique + "_curve.csv");
        detail::write_text_atomic(cpath, curve);
        out.curves.push_back(cpath.string());
    }
    const fs::path tpath = fs::path(out_dir) / "summary.csv";
    detail::write_text_atomic(tpath, table);
    out.table = tpath.string();
    return out;
}

// ---- ablation ----

// The four-way flag study over the distillation family: no adapters, adapters
// with a frozen trunk, adapters without the trunk regularizer, and the full
// setup. All four share the base config's data, stream, and optimizer.
inline std::vector<RunRecord> compare_ablation(const ExperimentConfig& base, std::size_t jobs = 1,
                                               std::ostream* progress = nullptr) {
    struct Variant {
        const char* suffix;
        bool adapters, freeze, reg;
    };
    const Variant variants[] = {{"lwf", false, false, false},
                                {"lwf_a_fb", true, true, false},
                                {"lwf_a_wo_reg", true, false, false},
                                {"lwf_a", true, false, true}};
    std::vector<RunRecord> records;
    for (const Variant& v : variants) {
        ExperimentConfig cfg = base;
        cfg.method = v.reg ? "lwf_a" : "lwf";
        cfg.use_adapters = v.adapters;
        cfg.freeze_backbone = v.freeze;
        cfg.use_backbone_reg = v.reg;
        cfg.lambdas = default_lambdas(cfg.method);
        cfg.name = base.name + "_" + v.suffix;
        if (progress) *progress << "=== ablation arm " << v.suffix << " ===\n";
        records.push_back(run_experiment(cfg, jobs, progress));
    }

    // joint curve file in long format, one block per arm
    std::string joint = "label,t,mean_avg_acc,std_avg_acc\n";
    char buf[96];
    for (const RunRecord& rec : records) {
        const std::string label = method_label(rec.config);
        for (std::size_t t = 0; t < rec.mean_avg_acc.size(); ++t) {
            std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%.17g", label.c_str(), t + 1,
                          rec.mean_avg_acc[t], rec.std_avg_acc[t]);
            joint += buf;
            joint += "\n";
        }
    }
    namespace fs = std::filesystem;
    fs::create_directories(base.out_dir);
    detail::write_text_atomic(fs::path(base.out_dir) / (base.name + "_ablation_curves.csv"), joint);
    return records;
}

}  // namespace lifelong
