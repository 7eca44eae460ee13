// command line front end: run / ablate / summarize
//
// exit codes: 0 success, 1 invalid config or arguments, 2 runtime failure
// (missing or malformed input files, filesystem trouble), 3 numeric failure
// during training (a partial record is still persisted).

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lifelong/experiment.hpp"

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<std::uint64_t> seeds;
    std::size_t pos = 0;
    while (pos <= csv.size()) {
        const std::size_t comma = std::min(csv.find(',', pos), csv.size());
        const std::string tok = csv.substr(pos, comma - pos);
        char* end = nullptr;
        const unsigned long long v = std::strtoull(tok.c_str(), &end, 10);
        if (tok.empty() || end == tok.c_str() || *end != '\0')
            throw lifelong::ConfigError("--seeds: '" + tok + "' is not an unsigned integer");
        seeds.push_back(v);
        pos = comma + 1;
    }
    return seeds;
}

lifelong::ExperimentConfig load_and_override(const std::string& config_path, const std::string& seeds_csv,
                                             const std::string& out_override) {
    lifelong::ExperimentConfig cfg;
    try {
        cfg = lifelong::load_config(config_path);
    } catch (const lifelong::ParseError& e) {
        // malformed config is a config problem, not a runtime one
        throw lifelong::ConfigError(e.what());
    }
    if (!seeds_csv.empty()) cfg.seeds = parse_seed_list(seeds_csv);
    if (!out_override.empty()) cfg.out_dir = out_override;
    return cfg;
}

void print_record(const lifelong::RunRecord& rec) {
    std::cout << lifelong::method_label(rec.config) << ": " << rec.dir << "\n";
    for (const lifelong::SeedResult& s : rec.seeds) {
        std::cout << "  seed " << s.seed << ": ";
        if (s.failed) {
            std::cout << "FAILED (" << s.failure << ")\n";
        } else {
            std::cout << "avg_acc";
            for (double a : s.avg_acc) {
                char buf[32];
                std::snprintf(buf, sizeof buf, " %.4f", a);
                std::cout << buf;
            }
            std::cout << "\n";
        }
    }
    if (!rec.mean_avg_acc.empty()) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.4f", rec.mean_avg_acc.back());
        std::cout << "  final mean avg_acc " << buf << " over " << rec.seeds.size() << " seed(s), "
                  << rec.wall_clock_seconds << "s\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"continual-learning experiments with task adapters"};
    app.require_subcommand(1);

    std::string config_path, seeds_csv, out_override;
    std::size_t jobs = 1;
    bool quiet = false;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config (json)")->required();
        sub->add_option("--seeds", seeds_csv, "comma separated seeds, overrides the config");
        sub->add_option("--out", out_override, "output directory, overrides the config");
        sub->add_option("--jobs", jobs, "worker threads across seeds (default 1)");
        sub->add_flag("--quiet", quiet, "suppress progress output");
    };
    CLI::App* cmd_run = app.add_subcommand("run", "train one configuration across its seeds");
    add_common(cmd_run);
    CLI::App* cmd_ablate =
        app.add_subcommand("ablate", "four-way adapter / frozen-trunk / trunk-regularizer study");
    add_common(cmd_ablate);

    CLI::App* cmd_summ = app.add_subcommand("summarize", "aggregate persisted runs into a table");
    std::vector<std::string> dirs;
    std::string summary_out = "summary";
    cmd_summ->add_option("dirs", dirs, "run directories, each holding a manifest.json")->required();
    cmd_summ->add_option("--out", summary_out, "where to write summary.csv and the curve files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*cmd_run) {
            lifelong::ExperimentConfig cfg = load_and_override(config_path, seeds_csv, out_override);
            lifelong::RunRecord rec = lifelong::run_experiment(cfg, jobs, quiet ? nullptr : &std::cerr);
            print_record(rec);
            if (rec.failed) {
                std::cerr << "error: one or more seeds failed; partial record kept in " << rec.dir
                          << "\n";
                return 3;
            }
            return 0;
        }
        if (*cmd_ablate) {
            lifelong::ExperimentConfig base = load_and_override(config_path, seeds_csv, out_override);
            std::vector<lifelong::RunRecord> recs =
                lifelong::compare_ablation(base, jobs, quiet ? nullptr : &std::cerr);
            bool failed = false;
            for (const lifelong::RunRecord& r : recs) {
                print_record(r);
                failed |= r.failed;
            }
            if (failed) {
                std::cerr << "error: one or more arms had failed seeds; partial records kept\n";
                return 3;
            }
            return 0;
        }
        // summarize
        std::vector<lifelong::RunRecord> recs;
        for (const std::string& d : dirs) recs.push_back(lifelong::load_run_record(d));
        lifelong::SummaryFiles files = lifelong::emit_summary(recs, summary_out);
        std::ifstream table(files.table);
        std::cout << table.rdbuf();
        std::cerr << "wrote " << files.table << " and " << files.curves.size() << " curve file(s)\n";
        return 0;
    } catch (const lifelong::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const lifelong::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
