#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "lifelong/data.hpp"
#include "lifelong/errors.hpp"
#include "lifelong/nn.hpp"

namespace lifelong {

// Lower-triangular record of test accuracies: entry (t, k) is the accuracy on
// task k's test split measured after training task t. Indices are 0-based.
class AccuracyMatrix {
public:
    explicit AccuracyMatrix(std::size_t num_tasks)
        : T_(num_tasks), a_(num_tasks * num_tasks, 0.0), set_(num_tasks * num_tasks, false) {
        if (num_tasks == 0) throw ContractError("accuracy matrix needs at least one task");
    }

    std::size_t tasks() const { return T_; }

    void set(std::size_t t, std::size_t k, double v) {
        check(t, k);
        if (!(v >= 0.0 && v <= 1.0)) throw DomainError("accuracy must lie in [0, 1]");
        a_[t * T_ + k] = v;
        set_[t * T_ + k] = true;
    }

    double at(std::size_t t, std::size_t k) const {
        check(t, k);
        if (!set_[t * T_ + k])
            throw StateError("accuracy (" + std::to_string(t) + ", " + std::to_string(k) + ") was never measured");
        return a_[t * T_ + k];
    }

    bool is_set(std::size_t t, std::size_t k) const { return t < T_ && k <= t && set_[t * T_ + k]; }

private:
    void check(std::size_t t, std::size_t k) const {
        if (t >= T_) throw IndexError("task index " + std::to_string(t) + " outside " + std::to_string(T_));
        if (k > t)
            throw IndexError("entry (" + std::to_string(t) + ", " + std::to_string(k) +
                             ") lies above the diagonal; task " + std::to_string(k) + " was unseen at step " +
                             std::to_string(t));
    }

    std::size_t T_;
    std::vector<double> a_;
    std::vector<bool> set_;
};

// mean accuracy over all tasks seen so far, measured after task t
inline double average_accuracy(const AccuracyMatrix& m, std::size_t t) {
    double sum = 0.0;
    for (std::size_t k = 0; k <= t; ++k) sum += m.at(t, k);
    return sum / static_cast<double>(t + 1);
}

// best past accuracy on task k minus the current one
inline double forgetting(const AccuracyMatrix& m, std::size_t t, std::size_t k) {
    double best = -1.0;
    for (std::size_t j = k; j <= t; ++j) best = std::max(best, m.at(j, k));
    return best - m.at(t, k);
}

namespace detail {
inline std::size_t argmax(const std::vector<double>& v, std::size_t off, std::size_t n) {
    std::size_t arg = 0;
    double best = v[off];
    for (std::size_t i = 1; i < n; ++i)
        if (v[off + i] > best) best = v[off + i], arg = i;
    return arg;
}
}  // namespace detail

// Task-incremental protocol: the task identity is given at test time, so the
// argmax runs over that branch's classes only.
inline double task_il_accuracy(const ContinualModel& model, const Tensor& X,
                               const std::vector<int>& local_labels, std::size_t task_id) {
    const TaskBranch& branch = model.task(task_id);  // LookupError when unseen
    if (X.rows() != local_labels.size())
        throw DimensionError("batch has " + std::to_string(X.rows()) + " rows but " +
                             std::to_string(local_labels.size()) + " labels");
    if (local_labels.empty()) throw InputError("cannot score an empty test set");
    Graph g(false);
    Tensor logits = model.forward(g, X, task_id);
    const std::size_t C = branch.class_list.size();
    std::size_t hits = 0;
    for (std::size_t r = 0; r < X.rows(); ++r)
        if (detail::argmax(logits.values(), r * C, C) == static_cast<std::size_t>(local_labels[r])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(X.rows());
}

// Class-incremental protocol: no task identity at test time. Every branch
// seen so far scores the batch, and the argmax runs over the concatenated
// logits; a prediction counts only when it lands on the true global class.
inline double class_il_accuracy(const ContinualModel& model, const Tensor& X,
                                const std::vector<int>& global_labels) {
    if (model.num_tasks() == 0) throw StateError("model has no task branches to score with");
    if (X.rows() != global_labels.size())
        throw DimensionError("batch has " + std::to_string(X.rows()) + " rows but " +
                             std::to_string(global_labels.size()) + " labels");
    if (global_labels.empty()) throw InputError("cannot score an empty test set");
    Graph g(false);
    Tensor feats = model.features(g, X);
    std::vector<Tensor> logits;
    for (std::size_t b = 0; b < model.num_tasks(); ++b) logits.push_back(model.branch_logits(g, feats, b));

    std::size_t hits = 0;
    for (std::size_t r = 0; r < X.rows(); ++r) {
        double best = -std::numeric_limits<double>::infinity();
        int pred = -1;
        for (std::size_t b = 0; b < logits.size(); ++b) {
            const auto& cls = model.task(b).class_list;
            for (std::size_t j = 0; j < cls.size(); ++j) {
                double v = logits[b].values()[r * cls.size() + j];
                if (v > best) best = v, pred = cls[j];
            }
        }
        if (pred == global_labels[r]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(X.rows());
}

// conveniences over a task stream's test splits
inline double evaluate_task_il(const ContinualModel& model, const LabeledDataset& ds, const TaskSpec& spec,
                               std::size_t task_id) {
    if (spec.test_idx.empty()) throw InputError("task has an empty test split");
    Tensor X = gather_features(ds, spec.test_idx);
    auto locals = to_local_labels(gather_labels(ds, spec.test_idx), model.task(task_id).class_list);
    return task_il_accuracy(model, X, locals, task_id);
}

inline double evaluate_class_il(const ContinualModel& model, const LabeledDataset& ds, const TaskSpec& spec) {
    if (spec.test_idx.empty()) throw InputError("task has an empty test split");
    Tensor X = gather_features(ds, spec.test_idx);
    return class_il_accuracy(model, X, gather_labels(ds, spec.test_idx));
}

// ---- persistence ----

// CSV layout: header k0..k{T-1}; row t holds accuracies for k <= t and blank
// cells above the diagonal. Values print with %.17g so a reload is bitwise.
inline void save_accuracy_csv(const AccuracyMatrix& m, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw InputError("cannot open '" + path + "' for writing");
    for (std::size_t k = 0; k < m.tasks(); ++k) f << (k ? ",k" : "k") << k;
    f << "\n";
    char buf[64];
    for (std::size_t t = 0; t < m.tasks(); ++t) {
        for (std::size_t k = 0; k < m.tasks(); ++k) {
            if (k) f << ",";
            if (k <= t && m.is_set(t, k)) {
                std::snprintf(buf, sizeof buf, "%.17g", m.at(t, k));
                f << buf;
            }
        }
        f << "\n";
    }
    if (!f.good()) throw InputError("write failed for '" + path + "'");
}

inline AccuracyMatrix load_accuracy_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(f, line)) throw ParseError(path + ":1: missing header row");
    const std::size_t T = 1 + static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
    AccuracyMatrix m(T);
    std::size_t t = 0;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (t >= T) throw ParseError(path + ":" + std::to_string(lineno) + ": more rows than header columns");
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            std::size_t comma = line.find(',', start);
            cells.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (cells.size() != T)
            throw ParseError(path + ":" + std::to_string(lineno) + ": row has " + std::to_string(cells.size()) +
                             " cells, header declares " + std::to_string(T));
        for (std::size_t k = 0; k < T; ++k) {
            if (cells[k].empty()) continue;
            char* end = nullptr;
            double v = std::strtod(cells[k].c_str(), &end);
            if (end == cells[k].c_str() || *end != '\0')
                throw ParseError(path + ":" + std::to_string(lineno) + ": bad accuracy '" + cells[k] + "'");
            if (k > t) throw ParseError(path + ":" + std::to_string(lineno) + ": value above the diagonal");
            if (!(v >= 0.0 && v <= 1.0))
                throw ParseError(path + ":" + std::to_string(lineno) + ": accuracy outside [0, 1]");
            m.set(t, k, v);
        }
        ++t;
    }
    if (t != T)
        throw ParseError(path + ": found " + std::to_string(t) + " data rows for " + std::to_string(T) +
                         " tasks");
    return m;
}

}  // namespace lifelong
