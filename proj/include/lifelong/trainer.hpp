#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "lifelong/data.hpp"
#include "lifelong/errors.hpp"
#include "lifelong/eval.hpp"
#include "lifelong/nn.hpp"
#include "lifelong/regularizers.hpp"
#include "lifelong/rng.hpp"

namespace lifelong {

struct OptimizerConfig {
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 2e-4;
    double clip_norm = 1.0;  // joint L2 clip across all trainable grads; 0 disables
    double lr_decay_factor = 3.0;
    std::size_t patience_epochs = 10;  // epochs without val improvement before a decay
    double min_lr = 1e-4;              // stop once the decayed lr falls below this
    std::size_t max_epochs = 100;      // 0 is legal and trains nothing
    std::size_t batch_size = 128;

    void validate() const {
        if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive and finite");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
        if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be non-negative (0 disables)");
        if (!(lr_decay_factor > 1.0)) throw ConfigError("lr_decay_factor must exceed 1");
        if (patience_epochs == 0) throw ConfigError("patience_epochs must be positive");
        if (!(min_lr > 0.0)) throw ConfigError("min_lr must be positive");
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
    }
};

// SGD with decoupled-from-nothing classic weight decay folded into the
// gradient, one global norm clip over the whole trainable set, then heavy-ball
// momentum. Parameter gradients are left untouched so callers may reuse the
// raw loss gradients (the path-integral importance does).
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<std::pair<std::string, Tensor>> params, const OptimizerConfig& cfg)
        : params_(std::move(params)), cfg_(cfg) {
        cfg_.validate();
        if (params_.empty()) throw ContractError("optimizer needs at least one parameter");
        for (auto& [path, t] : params_) {
            (void)path;
            velocity_.emplace_back(t.size(), 0.0);
            buf_.emplace_back(t.size(), 0.0);
        }
    }

    const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }

    // returns the post-clip global gradient norm
    double step(double lr) {
        if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("step needs a positive finite lr");
        double norm2 = 0.0;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const auto& [path, t] = params_[i];
            const std::vector<double>& g = t.grad();
            const std::vector<double>& v = t.values();
            for (std::size_t j = 0; j < g.size(); ++j) {
                if (!std::isfinite(g[j])) throw NumericError("non-finite gradient in '" + path + "'");
                buf_[i][j] = g[j] + cfg_.weight_decay * v[j];
                norm2 += buf_[i][j] * buf_[i][j];
            }
        }
        double norm = std::sqrt(norm2);
        const double scale = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            std::vector<double>& v = params_[i].second.values();
            for (std::size_t j = 0; j < v.size(); ++j) {
                velocity_[i][j] = cfg_.momentum * velocity_[i][j] + scale * buf_[i][j];
                v[j] -= lr * velocity_[i][j];
            }
        }
        return norm * scale;
    }

private:
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<std::vector<double>> velocity_;
    std::vector<std::vector<double>> buf_;
    OptimizerConfig cfg_;
};

enum class Method { finetune, ewc, mas, pathint, lwf, lwf_a };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::finetune: return "finetune";
        case Method::ewc: return "ewc";
        case Method::mas: return "mas";
        case Method::pathint: return "pathint";
        case Method::lwf: return "lwf";
        case Method::lwf_a: return "lwf_a";
    }
    return "finetune";
}

inline LossKind loss_kind(Method m) {
    switch (m) {
        case Method::finetune: return LossKind::finetune;
        case Method::ewc:
        case Method::mas:
        case Method::pathint: return LossKind::weight_anchor;
        case Method::lwf: return LossKind::lwf;
        case Method::lwf_a: return LossKind::lwf_a;
    }
    return LossKind::finetune;
}

inline bool uses_weight_anchor(Method m) { return loss_kind(m) == LossKind::weight_anchor; }

struct TrainReport {
    std::size_t epochs_run = 0;
    double final_val_accuracy = 0.0;
    std::vector<double> loss_trace;  // mean batch objective per epoch
    std::vector<double> lr_trace;    // lr in force during each epoch
    double backbone_drift = 0.0;     // L2 distance the trunk moved over the task
    double final_lr = 0.0;
};

namespace detail {
inline Tensor rows_subset(const Tensor& X, const std::vector<std::size_t>& order, std::size_t r0,
                          std::size_t r1) {
    const std::size_t d = X.cols();
    Tensor out = Tensor::zeros({r1 - r0, d});
    for (std::size_t i = r0; i < r1; ++i)
        for (std::size_t j = 0; j < d; ++j) out.values()[(i - r0) * d + j] = X.values()[order[i] * d + j];
    return out;
}

inline std::vector<double> flat_backbone(const ContinualModel& model) {
    std::vector<double> out;
    for (auto& [path, t] : model.named_parameters())
        if (ContinualModel::is_backbone_path(path)) out.insert(out.end(), t.values().begin(), t.values().end());
    return out;
}
}  // namespace detail

// One task's training loop: minibatch SGD on the assembled objective with
// validation-plateau lr decay. The rng drives only the epoch shuffles, so a
// fixed (model, data, config, seed) tuple reproduces the run bitwise.
inline TrainReport train_task(ContinualModel& model, const LabeledDataset& ds, const TaskSpec& spec,
                              std::size_t task_id, LossKind kind, const Lambdas& lam,
                              const RegularizerState& state, const OptimizerConfig& cfg, Rng& rng,
                              PathIntAccumulator* pathint = nullptr, std::ostream* log = nullptr) {
    cfg.validate();
    const TaskBranch& branch = model.task(task_id);
    if (spec.train_idx.empty()) throw InputError("task has no training rows");

    Tensor Xtr = gather_features(ds, spec.train_idx);
    const std::vector<int> ytr = to_local_labels(gather_labels(ds, spec.train_idx), branch.class_list);
    const bool has_val = !spec.val_idx.empty();
    Tensor Xval;
    std::vector<int> yval;
    if (has_val) {
        Xval = gather_features(ds, spec.val_idx);
        yval = to_local_labels(gather_labels(ds, spec.val_idx), branch.class_list);
    }

    const std::vector<double> trunk_start = detail::flat_backbone(model);
    SgdOptimizer opt(model.trainable_parameters(task_id), cfg);
    if (pathint) pathint->begin_task(model);

    TrainReport rep;
    const std::size_t N = spec.train_idx.size();
    std::vector<std::size_t> order(N);
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::vector<double>> before;  // pre-step values when tracking the path integral

    double lr = cfg.lr;
    double best = -1.0;
    std::size_t bad = 0;
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t r0 = 0; r0 < N; r0 += cfg.batch_size) {
            const std::size_t r1 = std::min(N, r0 + cfg.batch_size);
            Tensor Xb = detail::rows_subset(Xtr, order, r0, r1);
            std::vector<int> yb;
            yb.reserve(r1 - r0);
            for (std::size_t i = r0; i < r1; ++i) yb.push_back(ytr[order[i]]);

            Graph g;
            Tensor task_loss = g.softmax_cross_entropy(model.forward(g, Xb, task_id), yb);
            Tensor loss = total_loss(g, kind, task_loss, model, Xb, state, lam);
            model.zero_grad();
            g.backward(loss);

            if (pathint) {
                before.clear();
                for (auto& [path, t] : opt.params()) {
                    (void)path;
                    before.push_back(t.values());
                }
            }
            opt.step(lr);
            if (pathint) {
                for (std::size_t i = 0; i < opt.params().size(); ++i) {
                    const auto& [path, t] = opt.params()[i];
                    std::vector<double> delta = t.values();
                    for (std::size_t j = 0; j < delta.size(); ++j) delta[j] -= before[i][j];
                    pathint->accumulate(path, t.grad(), delta);
                }
            }
            loss_sum += loss.value();
            ++batches;
        }

        rep.loss_trace.push_back(loss_sum / static_cast<double>(batches));
        rep.lr_trace.push_back(lr);
        ++rep.epochs_run;
        const double metric = has_val ? task_il_accuracy(model, Xval, yval, task_id)
                                      : task_il_accuracy(model, Xtr, ytr, task_id);
        rep.final_val_accuracy = metric;
        if (log)
            *log << "epoch " << epoch << " loss " << rep.loss_trace.back() << " val_acc " << metric << " lr "
                 << lr << "\n";

        if (metric > best) {
            best = metric;
            bad = 0;
        } else if (++bad >= cfg.patience_epochs) {
            lr /= cfg.lr_decay_factor;
            bad = 0;
            if (lr < cfg.min_lr) break;
        }
    }
    rep.final_lr = lr;

    const std::vector<double> trunk_end = detail::flat_backbone(model);
    double drift2 = 0.0;
    for (std::size_t i = 0; i < trunk_end.size(); ++i) {
        const double d = trunk_end[i] - trunk_start[i];
        drift2 += d * d;
    }
    rep.backbone_drift = std::sqrt(drift2);
    if (!std::isfinite(rep.backbone_drift)) throw NumericError("backbone drift became non-finite");
    return rep;
}

// Post-task bookkeeping: estimate and store whatever the method needs to
// protect this task while later ones train.
inline void consolidate_after_task(const ContinualModel& model, Method method, std::size_t task_id,
                                   const Tensor& X_train, const std::vector<int>* local_labels,
                                   RegularizerState& state, Rng& rng, PathIntAccumulator* pathint = nullptr,
                                   std::size_t fisher_samples = 256, bool fisher_empirical = false) {
    switch (method) {
        case Method::finetune: return;
        case Method::ewc: {
            ParamDiag diag =
                estimate_fisher_diag(model, X_train, task_id, fisher_samples, rng, fisher_empirical,
                                     local_labels);
            state.anchors.push_back(make_anchor(model, diag));
            return;
        }
        case Method::mas: {
            state.anchors.push_back(make_anchor(model, estimate_mas_importance(model, X_train, task_id)));
            return;
        }
        case Method::pathint: {
            if (!pathint) throw ContractError("path-integral consolidation needs the task's accumulator");
            state.anchors.push_back(make_anchor(model, pathint->finalize(model)));
            pathint->reset();
            return;
        }
        case Method::lwf:
        case Method::lwf_a: {
            state.teachers.push_back(make_teacher(model, rng));
            return;
        }
    }
}

}  // namespace lifelong
