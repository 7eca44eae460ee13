#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "lifelong/errors.hpp"
#include "lifelong/trainer.hpp"

namespace lifelong {

// Per-task hyperparameter protocol: probe a descending lr grid with plain
// finetuning to find the most plastic setting, then halve the regularizer
// strength until the regularized run keeps a set fraction of that reference
// accuracy. The first task gets its own, hotter grid.
struct SearchPolicy {
    std::vector<double> lr_grid_first = {0.5, 0.1, 0.05};
    std::vector<double> lr_grid_later = {0.1, 0.05, 0.01, 0.005, 0.001};
    double accuracy_fraction = 0.95;  // keep at least this share of the finetune reference
    std::size_t max_halvings = 8;

    void validate() const {
        for (const auto* grid : {&lr_grid_first, &lr_grid_later}) {
            if (grid->empty()) throw ConfigError("lr grid must not be empty");
            for (std::size_t i = 0; i < grid->size(); ++i) {
                if (!((*grid)[i] > 0.0)) throw ConfigError("lr grid entries must be positive");
                if (i > 0 && (*grid)[i] >= (*grid)[i - 1])
                    throw ConfigError("lr grid must be strictly descending");
            }
        }
        if (!(accuracy_fraction > 0.0 && accuracy_fraction <= 1.0))
            throw ConfigError("accuracy_fraction must lie in (0, 1]");
    }
};

struct LrProbe {
    double lr = 0.0;
    double val_accuracy = 0.0;
};

struct DecayAttempt {
    Lambdas lambdas;
    double val_accuracy = 0.0;
    bool accepted = false;
};

struct SearchLog {
    std::vector<LrProbe> probes;
    double chosen_lr = 0.0;
    double finetune_accuracy = 0.0;  // reference: the chosen probe's accuracy
    std::vector<DecayAttempt> attempts;
    std::size_t halvings = 0;
    bool exhausted = false;  // halvings ran out (or hit zero) below the threshold
};

// Probes every grid entry on a scratch copy and reports the winner; the live
// model is never touched. Ties break toward the larger lr, which the
// descending grid gives for free.
inline double maximal_plasticity_search(const ContinualModel& model, const LabeledDataset& ds,
                                        const TaskSpec& spec, std::size_t task_id,
                                        const OptimizerConfig& base_cfg, const SearchPolicy& policy,
                                        std::uint64_t seed, bool first_task, SearchLog& log,
                                        std::ostream* progress = nullptr) {
    policy.validate();
    const std::vector<double>& grid = first_task ? policy.lr_grid_first : policy.lr_grid_later;
    const RegularizerState no_state;
    double best_acc = -1.0;
    double best_lr = grid.front();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        ContinualModel probe = model.deep_copy();
        OptimizerConfig cfg = base_cfg;
        cfg.lr = grid[i];
        Rng rng(mix_seed(seed, 0xF1E1D + i));
        TrainReport rep = train_task(probe, ds, spec, task_id, LossKind::finetune, Lambdas{}, no_state,
                                     cfg, rng);
        log.probes.push_back({grid[i], rep.final_val_accuracy});
        if (progress)
            *progress << "probe lr " << grid[i] << " val_acc " << rep.final_val_accuracy << "\n";
        if (rep.final_val_accuracy > best_acc) {
            best_acc = rep.final_val_accuracy;
            best_lr = grid[i];
        }
    }
    log.chosen_lr = best_lr;
    log.finetune_accuracy = best_acc;
    return best_lr;
}

struct DecayResult {
    Lambdas lambdas;
    TrainReport report;
};

// Trains the task at decreasing regularizer strength until validation
// accuracy clears accuracy_fraction * finetune_accuracy. Every attempt
// restarts from a bitwise-identical pre-task checkpoint (checksum-asserted)
// with the same shuffle seed, so attempts differ only in the strengths. The
// accepted attempt's weights are committed into `model`. Running out of
// halvings accepts the last attempt and sets the exhausted flag; it is an
// outcome, not an error.
inline DecayResult stability_decay(ContinualModel& model, const LabeledDataset& ds, const TaskSpec& spec,
                                   std::size_t task_id, LossKind kind, const RegularizerState& state,
                                   const OptimizerConfig& cfg, const SearchPolicy& policy,
                                   const Lambdas& start, double finetune_accuracy, std::uint64_t seed,
                                   SearchLog& log, PathIntAccumulator* pathint = nullptr,
                                   std::ostream* progress = nullptr) {
    policy.validate();
    if (!(finetune_accuracy >= 0.0 && finetune_accuracy <= 1.0))
        throw ConfigError("finetune reference accuracy must lie in [0, 1]");
    const std::uint64_t check0 = model.checksum();
    const ContinualModel snapshot = model.deep_copy();

    Lambdas lam = start;
    for (std::size_t h = 0;; ++h) {
        ContinualModel attempt = snapshot.deep_copy();
        if (attempt.checksum() != check0)
            throw ContractError("pre-task checkpoint drifted between decay attempts");
        Rng rng(mix_seed(seed, 0x57AB1E));
        TrainReport rep = train_task(attempt, ds, spec, task_id, kind, lam, state, cfg, rng, pathint);
        const bool all_zero = lam.lambda == 0.0 && lam.lambda_distill == 0.0 && lam.lambda_phi == 0.0;
        const bool ok = rep.final_val_accuracy >= policy.accuracy_fraction * finetune_accuracy;
        if (progress)
            *progress << "decay attempt " << h << " lambda " << lam.lambda << "/" << lam.lambda_distill
                      << "/" << lam.lambda_phi << " val_acc " << rep.final_val_accuracy
                      << (ok ? " ok" : " low") << "\n";
        if (ok || all_zero || h >= policy.max_halvings) {
            log.attempts.push_back({lam, rep.final_val_accuracy, true});
            log.halvings = h;
            log.exhausted = !ok;
            model = std::move(attempt);
            return {lam, rep};
        }
        log.attempts.push_back({lam, rep.final_val_accuracy, false});
        lam.lambda /= 2.0;  // joint halving: every active strength drops together
        lam.lambda_distill /= 2.0;
        lam.lambda_phi /= 2.0;
    }
}

}  // namespace lifelong
