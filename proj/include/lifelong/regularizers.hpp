#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lifelong/errors.hpp"
#include "lifelong/nn.hpp"
#include "lifelong/rng.hpp"
#include "lifelong/tensor.hpp"

namespace lifelong {

// per-parameter diagonal aligned with ContinualModel::named_parameters order
using ParamDiag = std::vector<std::pair<std::string, std::vector<double>>>;

// Post-task snapshot of the shared trunk: parameter values plus an importance
// diagonal. Only backbone paths are stored — adapter and head parameters are
// excluded from every weight penalty by construction, so a penalty gradient
// for them cannot even exist.
struct WeightAnchor {
    struct Entry {
        std::string path;
        std::vector<double> theta_star;
        std::vector<double> importance;
    };
    std::vector<Entry> entries;
};

inline WeightAnchor make_anchor(const ContinualModel& model, const ParamDiag& diag) {
    auto params = model.named_parameters();
    if (diag.size() != params.size())
        throw AnchorError("importance diagonal has " + std::to_string(diag.size()) + " entries, model has " +
                          std::to_string(params.size()));
    WeightAnchor a;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [path, tensor] = params[i];
        if (diag[i].first != path)
            throw AnchorError("importance entry '" + diag[i].first + "' does not match parameter '" + path +
                              "'");
        if (!ContinualModel::is_backbone_path(path)) continue;
        if (diag[i].second.size() != tensor.size())
            throw AnchorError("importance for '" + path + "' has wrong length");
        for (double v : diag[i].second)
            if (!(v >= 0.0) || !std::isfinite(v))
                throw AnchorError("importance for '" + path + "' must be finite and non-negative");
        a.entries.push_back({path, tensor.values(), diag[i].second});
    }
    return a;
}

// sum over anchors of (lambda/2) * F_i * (theta_i - theta*_i)^2, trunk only
inline Tensor ewc_penalty(Graph& g, const ContinualModel& model, const std::vector<WeightAnchor>& anchors,
                          double lambda) {
    if (lambda < 0.0) throw ConfigError("penalty strength must be non-negative");
    std::vector<std::pair<std::string, Tensor>> trunk;
    for (auto& [path, t] : model.named_parameters())
        if (ContinualModel::is_backbone_path(path)) trunk.emplace_back(path, t);

    Tensor total;
    for (const WeightAnchor& a : anchors) {
        if (a.entries.size() != trunk.size())
            throw AnchorError("anchor covers " + std::to_string(a.entries.size()) + " trunk parameters, model has " +
                              std::to_string(trunk.size()));
        for (std::size_t i = 0; i < trunk.size(); ++i) {
            const WeightAnchor::Entry& e = a.entries[i];
            const auto& [path, theta] = trunk[i];
            if (e.path != path || e.theta_star.size() != theta.size())
                throw AnchorError("anchor entry '" + e.path + "' does not align with parameter '" + path + "'");
            Tensor star = Tensor::from(theta.shape(), e.theta_star);
            Tensor imp = Tensor::from(theta.shape(), e.importance);
            Tensor diff = g.sub(theta, star);
            Tensor term = g.sum(g.mul(imp, g.mul(diff, diff)));
            total = total.defined() ? g.add(total, term) : term;
        }
    }
    if (!total.defined()) return Tensor::scalar(0.0);
    return g.scale(total, lambda / 2.0);
}

namespace detail {

inline Tensor const_rows(const Tensor& X, std::size_t r0, std::size_t r1) {
    const std::size_t c = X.shape()[1];
    std::vector<double> v(X.values().begin() + r0 * c, X.values().begin() + r1 * c);
    return Tensor::from({r1 - r0, c}, std::move(v));
}

inline ParamDiag zero_diag(const ContinualModel& model) {
    ParamDiag d;
    for (auto& [path, t] : model.named_parameters()) d.emplace_back(path, std::vector<double>(t.size(), 0.0));
    return d;
}

}  // namespace detail

// Diagonal Fisher estimate: mean over samples of the squared gradient of the
// per-sample log-likelihood. Labels are drawn from the model's own softmax
// unless empirical labels are supplied. Rows are consumed in data order, so
// the chunk size changes neither the label stream nor the sums.
inline ParamDiag estimate_fisher_diag(const ContinualModel& model, const Tensor& X, std::size_t task_id,
                                      std::size_t num_samples, Rng& rng, bool empirical = false,
                                      const std::vector<int>* labels = nullptr, std::size_t chunk = 64) {
    if (X.shape().size() != 2 || X.shape()[0] == 0) throw InputError("fisher estimate needs a non-empty batch");
    const std::size_t n = std::min<std::size_t>(num_samples, X.shape()[0]);
    if (n == 0) throw InputError("fisher estimate needs num_samples >= 1");
    if (empirical && (labels == nullptr || labels->size() < n))
        throw ContractError("empirical fisher needs a label per sample");

    ParamDiag diag = detail::zero_diag(model);
    auto params = model.named_parameters();
    for (std::size_t c0 = 0; c0 < n; c0 += chunk) {
        const std::size_t c1 = std::min(n, c0 + chunk);
        Graph g;
        Tensor logits = model.forward(g, detail::const_rows(X, c0, c1), task_id);
        Tensor lsm = g.log_softmax(logits);
        const std::size_t classes = logits.shape()[1];
        std::vector<int> ys(c1 - c0);
        for (std::size_t r = 0; r < c1 - c0; ++r) {
            if (empirical) {
                ys[r] = (*labels)[c0 + r];
                if (ys[r] < 0 || static_cast<std::size_t>(ys[r]) >= classes)
                    throw IndexError("fisher label " + std::to_string(ys[r]) + " outside " +
                                     std::to_string(classes) + " classes");
            } else {
                std::vector<double> p(classes);
                for (std::size_t j = 0; j < classes; ++j) p[j] = std::exp(lsm.at(r, j));
                ys[r] = static_cast<int>(rng.sample_discrete(p));
            }
        }
        for (std::size_t r = 0; r < c1 - c0; ++r) {
            model.zero_grad();
            Tensor nll = g.scale(g.select(lsm, r, static_cast<std::size_t>(ys[r])), -1.0);
            g.backward(nll);
            for (std::size_t i = 0; i < params.size(); ++i) {
                const std::vector<double>& pg = params[i].second.grad();
                std::vector<double>& acc = diag[i].second;
                for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += pg[k] * pg[k];
            }
        }
    }
    model.zero_grad();
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& [path, v] : diag)
        for (double& x : v) x *= inv;
    return diag;
}

// mean over samples of |d ||logits||^2 / d theta_i| — label-free importance
inline ParamDiag estimate_mas_importance(const ContinualModel& model, const Tensor& X, std::size_t task_id,
                                         std::size_t chunk = 64) {
    if (X.shape().size() != 2 || X.shape()[0] == 0) throw InputError("mas estimate needs a non-empty batch");
    const std::size_t n = X.shape()[0];
    ParamDiag diag = detail::zero_diag(model);
    auto params = model.named_parameters();
    for (std::size_t c0 = 0; c0 < n; c0 += chunk) {
        const std::size_t c1 = std::min(n, c0 + chunk);
        Graph g;
        Tensor logits = model.forward(g, detail::const_rows(X, c0, c1), task_id);
        for (std::size_t r = 0; r < c1 - c0; ++r) {
            model.zero_grad();
            Tensor norm2 = g.sum_sq(g.slice_rows(logits, r, r + 1));
            g.backward(norm2);
            for (std::size_t i = 0; i < params.size(); ++i) {
                const std::vector<double>& pg = params[i].second.grad();
                std::vector<double>& acc = diag[i].second;
                for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += std::fabs(pg[k]);
            }
        }
    }
    model.zero_grad();
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& [path, v] : diag)
        for (double& x : v) x *= inv;
    return diag;
}

// Running path-integral importance: each optimizer step contributes
// -grad_i * delta_i; at task end the total is clamped and normalized by the
// squared parameter displacement plus damping.
struct PathIntAccumulator {
    ParamDiag omega;
    ParamDiag theta_start;
    double xi = 0.1;  // damping
    bool started = false;
    bool stepped = false;

    void begin_task(const ContinualModel& model) {
        omega = detail::zero_diag(model);
        theta_start.clear();
        for (auto& [path, t] : model.named_parameters()) theta_start.emplace_back(path, t.values());
        started = true;
        stepped = false;
    }

    // grads: the loss gradients the step consumed; delta: theta_after - theta_before
    void accumulate(const std::string& path, const std::vector<double>& grads,
                    const std::vector<double>& delta) {
        if (!started) throw StateError("path integral: accumulate before begin_task");
        for (auto& [p, om] : omega) {
            if (p != path) continue;
            if (grads.size() != om.size() || delta.size() != om.size())
                throw ContractError("path integral: size mismatch on '" + path + "'");
            for (std::size_t i = 0; i < om.size(); ++i) om[i] += -grads[i] * delta[i];
            stepped = true;
            return;
        }
        throw LookupError("path integral: unknown parameter '" + path + "'");
    }

    void reset() {
        omega.clear();
        theta_start.clear();
        started = false;
        stepped = false;
    }

    ParamDiag finalize(const ContinualModel& model) const {
        if (!started || !stepped) throw StateError("path integral: finalize before any accumulated step");
        ParamDiag out = detail::zero_diag(model);
        auto params = model.named_parameters();
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].first != omega[i].first || params[i].first != theta_start[i].first)
                throw AnchorError("path integral: parameter paths shifted during task");
            const std::vector<double>& now = params[i].second.values();
            const std::vector<double>& start = theta_start[i].second;
            for (std::size_t k = 0; k < now.size(); ++k) {
                double moved = now[k] - start[k];
                out[i].second[k] = std::max(0.0, omega[i].second[k]) / (moved * moved + xi);
            }
        }
        return out;
    }
};

// Snapshot of the whole model taken right after a task finished training,
// plus that task's fixed random feature projection (entries N(0, 1/d)).
struct FrozenTeacher {
    ContinualModel model;
    Tensor projection;  // feature_dim x classes of the snapshot's last task
    std::size_t task_id = 0;
    std::uint64_t param_checksum = 0;
};

inline FrozenTeacher make_teacher(const ContinualModel& model, Rng& rng) {
    if (model.num_tasks() == 0) throw StateError("teacher snapshot needs at least one trained task");
    FrozenTeacher t;
    t.model = model.deep_copy();
    t.task_id = model.num_tasks() - 1;
    const std::size_t d = model.feature_dim();
    const std::size_t c = model.task(t.task_id).class_list.size();
    if (c > d)
        throw ContractError("projection needs classes <= feature dim (got " + std::to_string(c) + " > " +
                            std::to_string(d) + ")");
    t.projection = Tensor::zeros({d, c});
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    for (double& v : t.projection.values()) v = rng.normal(0.0, sd);
    t.param_checksum = t.model.checksum();
    return t;
}

// Soft-label matching against the newest snapshot: for every old task branch,
// KL(teacher softened || model softened) * T^2, averaged over the batch and
// summed over branches. Identical parameters give exactly zero.
inline Tensor distill_loss(Graph& g, const FrozenTeacher& teacher, const ContinualModel& model,
                           const Tensor& X, double temperature) {
    if (temperature <= 0.0) throw ConfigError("distillation temperature must be positive");
    const std::size_t old_tasks = teacher.model.num_tasks();
    if (model.num_tasks() < old_tasks)
        throw ContractError("model lacks task branches the teacher distills");
    if (old_tasks == 0) return Tensor::scalar(0.0);
    const std::size_t batch = X.shape()[0];
    const double invT = 1.0 / temperature;

    Tensor total;
    Graph inference(false);
    Tensor teacher_feats = teacher.model.features(inference, X);
    Tensor student_feats = model.features(g, X);
    for (std::size_t b = 0; b < old_tasks; ++b) {
        Tensor t_lsm = inference.log_softmax(
            inference.scale(teacher.model.branch_logits(inference, teacher_feats, b), invT));
        Tensor p = Tensor::zeros(t_lsm.shape());
        for (std::size_t i = 0; i < p.size(); ++i) p.values()[i] = std::exp(t_lsm.values()[i]);

        Tensor s_lsm = g.log_softmax(g.scale(model.branch_logits(g, student_feats, b), invT));
        Tensor kl = g.sum(g.mul(p, g.sub(t_lsm, s_lsm)));
        total = total.defined() ? g.add(total, kl) : kl;
    }
    return g.scale(total, temperature * temperature / static_cast<double>(batch));
}

enum class FeatureMetric { cosine, squared };

// Trunk drift penalty: project old and new features through each snapshot's
// frozen random map and compare, mean over the batch, summed over snapshots.
inline Tensor backbone_reg(Graph& g, const std::vector<FrozenTeacher>& teachers, const ContinualModel& model,
                           const Tensor& X, FeatureMetric metric = FeatureMetric::cosine) {
    if (teachers.empty()) return Tensor::scalar(0.0);
    const std::size_t batch = X.shape()[0];
    Tensor feats_new = model.features(g, X);
    Tensor total;
    for (const FrozenTeacher& t : teachers) {
        if (!t.projection.defined()) throw ConfigError("teacher snapshot lacks its feature projection");
        Graph inference(false);
        Tensor proj_old = inference.matmul(t.model.features(inference, X), t.projection);
        Tensor proj_new = g.matmul(feats_new, t.projection);
        Tensor term;
        if (metric == FeatureMetric::cosine)
            term = g.cosine_distance_rows(proj_old, proj_new);
        else
            term = g.scale(g.sum_sq(g.sub(proj_old, proj_new)), 1.0 / static_cast<double>(batch));
        total = total.defined() ? g.add(total, term) : term;
    }
    return total;
}

enum class LossKind { finetune, weight_anchor, lwf, lwf_a };

struct Lambdas {
    double lambda = 0.0;          // weight-anchor strength
    double lambda_distill = 0.0;  // soft-label term strength
    double lambda_phi = 0.0;      // trunk drift term strength
};

struct RegularizerState {
    std::vector<WeightAnchor> anchors;
    std::vector<FrozenTeacher> teachers;
    FeatureMetric metric = FeatureMetric::cosine;
    double temperature = 2.0;
};

// Assembles the training objective. When every applicable extra term is
// absent (first task, or zero strengths) the task loss handle is returned
// unchanged, so the cheap path is bitwise-identical to plain fine-tuning.
inline Tensor total_loss(Graph& g, LossKind kind, Tensor task_loss, const ContinualModel& model,
                         const Tensor& X, const RegularizerState& state, const Lambdas& lam) {
    if (lam.lambda < 0.0 || lam.lambda_distill < 0.0 || lam.lambda_phi < 0.0)
        throw ConfigError("loss strengths must be non-negative");
    switch (kind) {
        case LossKind::finetune: return task_loss;
        case LossKind::weight_anchor: {
            if (state.anchors.empty() || lam.lambda == 0.0) return task_loss;
            return g.add(task_loss, ewc_penalty(g, model, state.anchors, lam.lambda));
        }
        case LossKind::lwf:
        case LossKind::lwf_a: {
            Tensor out = task_loss;
            if (!state.teachers.empty() && lam.lambda_distill > 0.0) {
                if (state.temperature <= 0.0) throw ConfigError("distillation temperature must be positive");
                Tensor d = distill_loss(g, state.teachers.back(), model, X, state.temperature);
                out = g.add(out, g.scale(d, lam.lambda_distill));
            }
            if (kind == LossKind::lwf_a && !state.teachers.empty() && lam.lambda_phi > 0.0) {
                Tensor r = backbone_reg(g, state.teachers, model, X, state.metric);
                out = g.add(out, g.scale(r, lam.lambda_phi));
            }
            return out;
        }
    }
    throw ConfigError("unknown loss kind");
}

}  // namespace lifelong
