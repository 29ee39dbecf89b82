#pragma once

// Run directories: one experiment's config snapshot, per-task checkpoints and
// masks, accuracy matrix and metrics, plus the table view over several runs.

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ucb/config.hpp"
#include "ucb/harness.hpp"
#include "ucb/persistence.hpp"

namespace ucb {

inline constexpr const char* kConfigFile = "config.txt";
inline constexpr const char* kRMatrixFile = "rmatrix.csv";
inline constexpr const char* kMetricsFile = "metrics.txt";
inline constexpr const char* kLogFile = "training_log.csv";
inline constexpr const char* kPruneFile = "prune_report.csv";

inline std::string checkpoint_name(int task_id) { return "checkpoint_task" + std::to_string(task_id) + ".ucbn"; }
inline std::string mask_name(int task_id) { return "mask_task" + std::to_string(task_id) + ".ucbm"; }

struct RunSummary {
    std::string mode;
    std::string sequence;
    int tasks = 0;
    std::size_t param_count = 0;
    double bwt = 0.0;
    double acc = 0.0;
    std::optional<double> generalized_acc;
};

inline KeyValues summary_key_values(const RunSummary& s) {
    KeyValues kv{{"mode", s.mode},
                 {"sequence", s.sequence},
                 {"tasks", std::to_string(s.tasks)},
                 {"param_count", std::to_string(s.param_count)},
                 {"BWT", format_double(s.bwt)},
                 {"ACC", format_double(s.acc)}};
    if (s.generalized_acc) kv.emplace_back("GeneralizedACC", format_double(*s.generalized_acc));
    return kv;
}

inline RunSummary parse_summary(const std::string& text) {
    RunSummary s;
    bool has_bwt = false, has_acc = false;
    for (const auto& [k, v] : parse_key_values(text, "metrics")) {
        if (k == "mode") s.mode = v;
        else if (k == "sequence") s.sequence = v;
        else if (k == "tasks") s.tasks = std::stoi(v);
        else if (k == "param_count") s.param_count = std::stoull(v);
        else if (k == "BWT") s.bwt = parse_double(v, "BWT"), has_bwt = true;
        else if (k == "ACC") s.acc = parse_double(v, "ACC"), has_acc = true;
        else if (k == "GeneralizedACC") s.generalized_acc = parse_double(v, "GeneralizedACC");
    }
    if (!has_bwt || !has_acc) throw FormatError("metrics file lacks BWT or ACC");
    return s;
}

inline RunSummary read_run_summary(const std::filesystem::path& dir) {
    return parse_summary(read_text(dir / kMetricsFile));
}

struct ExperimentOutcome {
    RunResult run;
    RunSummary summary;
};

/// Runs the experiment and writes its run directory. Progress lines go to `log` when given.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
    const auto& dir = cfg.output_dir;
    std::filesystem::create_directories(dir);
    write_text(dir / kConfigFile, format_experiment_config(cfg));
    const TaskSequence seq = load_sequence(cfg);

    std::ostringstream training_log;
    training_log << "task,epoch,train_nll,validation_nll,base_lr\n";
    const bool keeps_masks = cfg.train.mode == Mode::ucb_p || is_feature_extraction(cfg.train.mode);
    RunHooks hooks;
    hooks.on_epoch = [&](int task, int epoch, double train_nll, double val_nll, double lr) {
        training_log << task << ',' << epoch << ',' << format_double(train_nll) << ',' << format_double(val_nll) << ','
                     << format_double(lr) << '\n';
        if (log)
            *log << "task " << task << " epoch " << epoch << " train_nll " << train_nll << " val_nll " << val_nll
                 << " lr " << lr << std::endl;
    };
    hooks.on_task_end = [&](const TaskEnd& end) {
        save_checkpoint(end.net, dir / checkpoint_name(end.task_id));
        if (keeps_masks && end.freeze.task_count > 0) save_mask(end.freeze, dir / mask_name(end.task_id));
        if (log) {
            *log << "after task " << end.task_id << ":";
            for (int i = 1; i <= end.task_id; ++i)
                if (const auto v = end.r.get(i, end.task_id)) *log << " R" << i << "=" << *v;
            *log << std::endl;
        }
    };

    ExperimentOutcome out;
    out.run = run_sequence(cfg.train, seq, hooks);
    const auto& run = out.run;
    write_text(dir / kRMatrixFile, format_rmatrix_csv(run.r));
    write_text(dir / kLogFile, training_log.str());
    if (!run.prunes.empty()) {
        std::ostringstream pr;
        pr << "task,chosen_ratio,pre_prune_accuracy,post_prune_accuracy,candidate_drops\n";
        for (const auto& p : run.prunes) {
            pr << p.task_id << ',' << format_double(p.chosen_ratio) << ',' << format_double(p.pre_prune_accuracy) << ','
               << format_double(p.post_prune_accuracy) << ',';
            for (std::size_t k = 0; k < p.candidate_drops.size(); ++k)
                pr << (k ? ";" : "") << format_double(p.candidate_drops[k].first) << ':'
                   << format_double(p.candidate_drops[k].second);
            pr << '\n';
        }
        write_text(dir / kPruneFile, pr.str());
    }

    auto& s = out.summary;
    s.mode = to_string(cfg.train.mode);
    s.sequence = detail::sequence_name(cfg.source);
    s.tasks = run.r.size();
    s.param_count = run.param_count;
    s.bwt = run.metrics.bwt;
    s.acc = run.metrics.acc;
    if (cfg.train.head_mode == HeadMode::single_head) s.generalized_acc = generalized_accuracy(run.net, seq, cfg.train.eval);
    write_text(dir / kMetricsFile, format_key_values(summary_key_values(s)));
    return out;
}

// Tables ---------------------------------------------------------------------------

struct TableRow {
    std::string run;
    RunSummary summary;
};

inline std::string fixed2(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v;
    return os.str();
}

/// Fixed-width table: one row per run with BWT and ACC in percent.
inline std::string format_table(const std::vector<TableRow>& rows) {
    const bool any_general = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.summary.generalized_acc.has_value(); });
    std::size_t run_w = 3;
    for (const auto& r : rows) run_w = std::max(run_w, r.run.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(run_w)) << "run" << "  " << std::setw(8) << "mode" << "  "
       << std::setw(14) << "sequence" << "  " << std::right << std::setw(10) << "params" << "  " << std::setw(8)
       << "BWT" << "  " << std::setw(8) << "ACC";
    if (any_general) os << "  " << std::setw(9) << "GenACC";
    os << '\n';
    for (const auto& r : rows) {
        const auto& s = r.summary;
        os << std::left << std::setw(static_cast<int>(run_w)) << r.run << "  " << std::setw(8) << s.mode << "  "
           << std::setw(14) << s.sequence << "  " << std::right << std::setw(10) << s.param_count << "  "
           << std::setw(8) << fixed2(s.bwt) << "  " << std::setw(8) << fixed2(s.acc);
        if (any_general) os << "  " << std::setw(9) << (s.generalized_acc ? fixed2(*s.generalized_acc) : "-");
        os << '\n';
    }
    return os.str();
}

inline std::string format_table_csv(const std::vector<TableRow>& rows) {
    std::ostringstream os;
    os << "run,mode,sequence,param_count,BWT,ACC,GeneralizedACC\n";
    for (const auto& r : rows) {
        const auto& s = r.summary;
        os << r.run << ',' << s.mode << ',' << s.sequence << ',' << s.param_count << ',' << format_double(s.bwt) << ','
           << format_double(s.acc) << ',' << (s.generalized_acc ? format_double(*s.generalized_acc) : "") << '\n';
    }
    return os.str();
}

}  // namespace ucb
