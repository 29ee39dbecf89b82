#pragma once

// Sequential training over a task sequence, with the UCB, UCB-P and baseline
// boundary rules, plateau-driven decay and the accuracy matrix.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ucb/data.hpp"
#include "ucb/errors.hpp"
#include "ucb/gradient.hpp"
#include "ucb/metrics.hpp"
#include "ucb/network.hpp"
#include "ucb/optimizer.hpp"

namespace ucb {

enum class Mode { ucb, ucb_p, bbb_ft, bbb_fe, bbb_jt, ord_ft, ord_fe, ord_jt };

inline constexpr Mode kAllModes[] = {Mode::ucb,    Mode::ucb_p,  Mode::bbb_ft, Mode::bbb_fe,
                                     Mode::bbb_jt, Mode::ord_ft, Mode::ord_fe, Mode::ord_jt};

inline std::string to_string(Mode m) {
    switch (m) {
        case Mode::ucb: return "ucb";
        case Mode::ucb_p: return "ucb_p";
        case Mode::bbb_ft: return "bbb_ft";
        case Mode::bbb_fe: return "bbb_fe";
        case Mode::bbb_jt: return "bbb_jt";
        case Mode::ord_ft: return "ord_ft";
        case Mode::ord_fe: return "ord_fe";
        case Mode::ord_jt: return "ord_jt";
    }
    return "?";
}

inline std::optional<Mode> parse_mode(const std::string& s) {
    for (Mode m : kAllModes)
        if (to_string(m) == s) return m;
    return std::nullopt;
}

inline bool is_ordinary(Mode m) { return m == Mode::ord_ft || m == Mode::ord_fe || m == Mode::ord_jt; }
inline bool is_joint(Mode m) { return m == Mode::bbb_jt || m == Mode::ord_jt; }
inline bool is_feature_extraction(Mode m) { return m == Mode::bbb_fe || m == Mode::ord_fe; }

struct TrainConfig {
    Mode mode = Mode::ucb;
    double base_lr = 0.01;
    int batch_size = 64;
    double decay_factor = 0.3;
    int plateau_patience = 5;
    double plateau_min_delta = 1e-3;
    int plateau_triggers = 2;  // the last trigger ends the task
    int mc_samples = 10;
    int max_epochs = 50;
    std::uint64_t seed = 0;
    ScaleMixturePrior prior{};
    ImportanceConfig importance{};
    bool compound_lr = false;
    bool average_mc = false;

    std::vector<int> hidden_dims{1200, 1200};
    HeadMode head_mode = HeadMode::multi_head;
    double init_mu_std = 0.1;
    double init_rho = -3.0;
    bool match_ordinary_params = true;

    PredictMode eval = PredictMode::mc_average(10, 0x5eed);

    std::vector<double> prune_ratios{0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0};
    double prune_threshold = 1.0;  // accepted accuracy drop, percent

    int eval_workers = 1;

    void validate() const {
        if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw InvalidArgument("base_lr must be positive");
        if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
        if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw InvalidArgument("decay_factor must lie in (0, 1]");
        if (plateau_patience < 1) throw InvalidArgument("plateau_patience must be >= 1");
        if (!(plateau_min_delta >= 0.0)) throw InvalidArgument("plateau_min_delta must be >= 0");
        if (plateau_triggers < 1) throw InvalidArgument("plateau_triggers must be >= 1");
        if (mc_samples < 1) throw InvalidArgument("mc_samples must be >= 1");
        if (max_epochs < 1) throw InvalidArgument("max_epochs must be >= 1");
        if (eval_workers < 1) throw InvalidArgument("eval_workers must be >= 1");
        if (prune_ratios.empty()) throw InvalidArgument("prune_ratios must not be empty");
        for (double r : prune_ratios)
            if (!(r >= 0.0 && r <= 1.0)) throw InvalidArgument("prune ratios must lie in [0, 1]");
        prior.validate();
    }
};

/// Per-task training record.
struct TaskLog {
    int task_id = 0;
    int epochs = 0;
    std::vector<double> train_nll;       // mean per-example negative log-likelihood
    std::vector<double> validation_nll;  // under the evaluation mode
    std::vector<double> base_lr;         // base rate in force during each epoch
};

struct TaskEnd {
    int task_id = 0;
    const Network& net;
    const FreezeMap& freeze;
    const RMatrix& r;
};

struct RunHooks {
    std::function<void(int task_id, int epoch, double train_nll, double validation_nll, double lr)> on_epoch;
    std::function<void(const TaskEnd&)> on_task_end;
};

struct RunResult {
    RMatrix r;
    SequenceMetrics metrics;
    std::vector<PruneReport> prunes;
    std::vector<TaskLog> logs;
    std::vector<double> final_validation_accuracy;  // per task, percent
    Network net;
    FreezeMap freeze;
    std::size_t param_count = 0;
};

// Evaluation ----------------------------------------------------------------------

/// Task-scoped accuracy (percent) of `view` on `ds`, whose labels are local to the task.
inline double task_accuracy(const NetworkView& view, const Dataset& ds, int task_id, const PredictMode& mode) {
    if (ds.size() == 0) throw InvalidArgument("accuracy of an empty dataset");
    const Predictor predictor(view, task_id, mode);
    const ClassRange range = view.net->class_range(task_id);
    const auto pred = argmax_rows(predictor.mean_probs(ds.images), range);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += (pred[i] - range.offset == ds.labels[i]);
    return 100.0 * static_cast<double>(correct) / static_cast<double>(ds.size());
}

/// Mean negative log-likelihood of the task-local labels, clamped away from log(0).
inline double task_nll(const NetworkView& view, const Dataset& ds, int task_id, const PredictMode& mode) {
    const Predictor predictor(view, task_id, mode);
    const ClassRange range = view.net->class_range(task_id);
    const Matrix probs = predictor.mean_probs(ds.images);
    double total = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i)
        total -= std::log(std::max(probs(static_cast<Index>(i), range.offset + ds.labels[i]), 1e-300));
    return total;
}

/// Accuracy over the union of every task's test set with the argmax over all
/// output columns, no task information used. Single-head networks only.
inline double generalized_accuracy(const Network& net, const TaskSequence& seq, const PredictMode& mode) {
    if (net.spec().head_mode != HeadMode::single_head)
        throw InvalidArgument("generalized accuracy needs a single-head network");
    std::size_t correct = 0, total = 0;
    for (const auto& t : seq.tasks) {
        const auto pred = predict(net, t.test.images, mode, std::nullopt);
        const int offset = net.class_range(t.task_id).offset;
        for (std::size_t i = 0; i < pred.size(); ++i) correct += (pred[i] == t.test.labels[i] + offset);
        total += pred.size();
    }
    if (total == 0) throw InvalidArgument("generalized accuracy of empty test sets");
    return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

namespace detail {

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t stream, std::uint32_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream, index};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline std::size_t weight_count_for(int input_dim, const std::vector<int>& hidden, const std::vector<int>& heads) {
    std::size_t n = 0;
    int fan_in = input_dim;
    for (int h : hidden) {
        n += static_cast<std::size_t>(fan_in + 1) * static_cast<std::size_t>(h);
        fan_in = h;
    }
    for (int c : heads) n += static_cast<std::size_t>(fan_in + 1) * static_cast<std::size_t>(c);
    return n;
}

}  // namespace detail

/// Hidden widths for an ordinary network whose weight count is closest to the
/// learnable-parameter count (two per weight) of the Bayesian network with `hidden`.
/// All hidden layers are widened by a common factor.
inline std::vector<int> matched_ordinary_widths(int input_dim, const std::vector<int>& hidden, HeadMode head_mode,
                                                const std::vector<int>& task_classes, bool shared_label_space) {
    if (hidden.empty()) return hidden;
    std::vector<int> heads = task_classes;
    if (head_mode == HeadMode::single_head) {
        NetworkSpec s;
        s.task_classes = task_classes;
        s.shared_label_space = shared_label_space;
        heads = {s.total_classes()};
    }
    const std::size_t target = 2 * detail::weight_count_for(input_dim, hidden, heads);
    std::vector<int> best = hidden;
    std::size_t best_gap = std::numeric_limits<std::size_t>::max();
    for (int w0 = hidden[0]; w0 <= 4 * hidden[0]; ++w0) {
        std::vector<int> widths;
        for (int h : hidden)
            widths.push_back(std::max(1, static_cast<int>(std::lround(static_cast<double>(h) * w0 / hidden[0]))));
        const std::size_t n = detail::weight_count_for(input_dim, widths, heads);
        const std::size_t gap = n > target ? n - target : target - n;
        if (gap < best_gap) {
            best_gap = gap;
            best = widths;
        }
        if (n > target) break;
    }
    return best;
}

inline NetworkSpec network_spec_for(const TrainConfig& cfg, const TaskSequence& seq) {
    NetworkSpec spec;
    spec.input_dim = seq.input_dim();
    spec.task_classes = seq.class_counts();
    spec.head_mode = cfg.head_mode;
    spec.shared_label_space = seq.shared_label_space();
    spec.bayesian = !is_ordinary(cfg.mode);
    spec.init_mu_std = cfg.init_mu_std;
    spec.init_rho = cfg.init_rho;
    spec.hidden_dims = cfg.hidden_dims;
    if (!spec.bayesian && cfg.match_ordinary_params)
        spec.hidden_dims = matched_ordinary_widths(spec.input_dim, cfg.hidden_dims, cfg.head_mode, spec.task_classes,
                                                   spec.shared_label_space);
    return spec;
}

namespace detail {

/// One example of a training pool: its task, its row in that task's set, and the
/// label in the head's output space.
struct PoolEntry {
    int task_id;
    Index row;
    int label;
};

/// Labels in the output space of the head serving the task: local for multi-head,
/// shifted by the task's column offset for a single head.
inline int head_label(const Network& net, int task_id, int local_label) {
    return local_label + net.class_range(task_id).offset;
}

struct Minibatch {
    Matrix x;
    std::vector<int> labels;
    std::vector<RowGroup> groups;
};

inline Minibatch make_minibatch(const Network& net, const TaskSequence& seq, std::span<const PoolEntry> entries) {
    Minibatch mb;
    mb.x.resize(static_cast<Index>(entries.size()), seq.input_dim());
    std::vector<int> tasks;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        mb.x.row(static_cast<Index>(i)) = seq.task(e.task_id).train.images.row(e.row);
        mb.labels.push_back(e.label);
        if (std::find(tasks.begin(), tasks.end(), e.task_id) == tasks.end()) tasks.push_back(e.task_id);
    }
    const bool single_head = net.spec().head_mode == HeadMode::single_head;
    if (tasks.size() == 1 || single_head) {
        mb.groups.push_back({tasks.front(), {}});
        return mb;
    }
    // multi-head joint training: route each row to its own task's head
    std::sort(tasks.begin(), tasks.end());
    for (int t : tasks) {
        RowGroup g{t, {}};
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (entries[i].task_id == t) g.rows.push_back(static_cast<Index>(i));
        mb.groups.push_back(std::move(g));
    }
    return mb;
}

/// Validation loss used for plateau detection: mean NLL over the validation sets of
/// `tasks`, falling back to the training sets when no validation rows exist.
inline double validation_nll(const NetworkView& view, const TaskSequence& seq, const std::vector<int>& tasks,
                             const PredictMode& mode) {
    double total = 0.0;
    std::size_t count = 0;
    for (int t : tasks) {
        const auto& td = seq.task(t);
        const Dataset& ds = td.validation.size() > 0 ? td.validation : td.train;
        total += task_nll(view, ds, t, mode);
        count += ds.size();
    }
    return total / static_cast<double>(count);
}

struct PlateauState {
    double best = std::numeric_limits<double>::infinity();
    int stale = 0;
    int triggers = 0;
};

enum class PlateauAction { none, decay, stop };

inline PlateauAction plateau_step(PlateauState& st, double loss, const TrainConfig& cfg) {
    if (loss < st.best - cfg.plateau_min_delta) {
        st.best = loss;
        st.stale = 0;
        return PlateauAction::none;
    }
    if (++st.stale < cfg.plateau_patience) return PlateauAction::none;
    st.stale = 0;
    ++st.triggers;
    return st.triggers >= cfg.plateau_triggers ? PlateauAction::stop : PlateauAction::decay;
}

/// Trains on `pool` until the validation loss plateaus. `lrs` is decayed in place.
inline TaskLog train_until_plateau(Network& net, const TaskSequence& seq, std::vector<PoolEntry> pool,
                                   const std::vector<int>& tasks, PerParamLR& lrs, const FreezeMap& freeze,
                                   const TrainConfig& cfg, int log_task_id, Rng& rng, const RunHooks& hooks) {
    TaskLog log;
    log.task_id = log_task_id;
    if (pool.empty()) throw InvalidArgument("task " + std::to_string(log_task_id) + " has no training examples");
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    const auto minibatches = static_cast<std::int64_t>((pool.size() + batch - 1) / batch);
    BackwardOptions bo;
    bo.average_samples = cfg.average_mc;
    bo.compute_terms = false;
    PlateauState plateau;
    const auto n_samples = static_cast<std::size_t>(cfg.mc_samples);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(pool.begin(), pool.end(), rng);
        double nll = 0.0;
        for (std::size_t start = 0; start < pool.size(); start += batch) {
            const std::size_t stop = std::min(pool.size(), start + batch);
            const auto mb = make_minibatch(net, seq, std::span<const PoolEntry>(pool).subspan(start, stop - start));
            const auto fr = forward_mc(net, mb.x, mb.groups, n_samples, rng);
            const double batch_ll = log_likelihood(fr.trace, mb.labels) / static_cast<double>(fr.trace.n_samples());
            if (!std::isfinite(batch_ll)) throw DivergenceError(log_task_id, epoch);
            nll -= batch_ll;
            const auto br = backward(net, fr.trace, mb.labels, cfg.prior, minibatches, bo);
            if (!br.grads.all_finite()) throw DivergenceError(log_task_id, epoch);
            sgd_step(net, br.grads, lrs, freeze);
        }
        nll /= static_cast<double>(pool.size());
        const double val = validation_nll(net, seq, tasks, cfg.eval);
        if (!std::isfinite(nll) || !std::isfinite(val)) throw DivergenceError(log_task_id, epoch);
        log.epochs = epoch;
        log.train_nll.push_back(nll);
        log.validation_nll.push_back(val);
        log.base_lr.push_back(lrs.base_lr);
        if (hooks.on_epoch) hooks.on_epoch(log_task_id, epoch, nll, val, lrs.base_lr);
        const auto action = plateau_step(plateau, val, cfg);
        if (action == PlateauAction::stop) break;
        if (action == PlateauAction::decay) lrs.scale(cfg.decay_factor);
    }
    return log;
}

inline std::vector<PoolEntry> task_pool(const Network& net, const TaskSequence& seq, int task_id) {
    std::vector<PoolEntry> pool;
    const auto& ds = seq.task(task_id).train;
    for (std::size_t i = 0; i < ds.size(); ++i)
        pool.push_back({task_id, static_cast<Index>(i), head_label(net, task_id, ds.labels[i])});
    return pool;
}

/// Runs `fn(i)` for i in [0, n), on up to `workers` threads; results keep index order.
template <class Fn>
auto parallel_map(int n, int workers, Fn fn) {
    using T = decltype(fn(0));
    std::vector<T> out(static_cast<std::size_t>(n));
    if (workers <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = fn(i);
        return out;
    }
    for (int start = 0; start < n; start += workers) {
        std::vector<std::future<T>> futures;
        for (int i = start; i < std::min(n, start + workers); ++i) futures.push_back(std::async(std::launch::async, fn, i));
        for (std::size_t k = 0; k < futures.size(); ++k) out[static_cast<std::size_t>(start) + k] = futures[k].get();
    }
    return out;
}

/// UCB-P boundary: chooses the prune ratio on the validation set and prunes.
inline PruneReport prune_boundary(Network& net, FreezeMap& freeze, const TaskSequence& seq, int task_id,
                                  const TrainConfig& cfg) {
    const auto& td = seq.task(task_id);
    const Dataset& val = td.validation.size() > 0 ? td.validation : td.train;
    const auto layers = net.active_layers(task_id);
    PruneReport rep;
    rep.task_id = task_id;
    const double pre_val = task_accuracy(net, val, task_id, cfg.eval);
    std::vector<double> drops;
    for (double ratio : cfg.prune_ratios) {
        Network trial = net;
        FreezeMap trial_freeze = freeze;
        prune_task(trial, task_id, ratio, trial_freeze, cfg.init_rho, layers);
        const auto masked = apply_inference_mask(trial, trial_freeze, task_id);
        const double drop = pre_val - task_accuracy(masked.view(), val, task_id, cfg.eval);
        drops.push_back(drop);
        rep.candidate_drops.emplace_back(ratio, drop);
    }
    rep.chosen_ratio = select_prune_ratio(cfg.prune_ratios, drops, cfg.prune_threshold);
    rep.pre_prune_accuracy = task_accuracy(net, td.test, task_id, cfg.eval);
    prune_task(net, task_id, rep.chosen_ratio, freeze, cfg.init_rho, layers);
    rep.post_prune_accuracy = task_accuracy(apply_inference_mask(net, freeze, task_id).view(), td.test, task_id, cfg.eval);
    return rep;
}

/// Test accuracy of task `i` as seen after the current boundary.
inline double evaluate_task(const Network& net, const FreezeMap& freeze, const TaskSequence& seq, int i,
                            const TrainConfig& cfg, bool validation = false) {
    const auto& td = seq.task(i);
    const Dataset& ds = validation ? (td.validation.size() > 0 ? td.validation : td.train) : td.test;
    if (cfg.mode == Mode::ucb_p && static_cast<std::uint32_t>(i) <= freeze.task_count)
        return task_accuracy(apply_inference_mask(net, freeze, i).view(), ds, i, cfg.eval);
    return task_accuracy(net, ds, i, cfg.eval);
}

}  // namespace detail

/// Trains every task of `seq` in order under `cfg.mode` and fills the accuracy matrix.
inline RunResult run_sequence(const TrainConfig& cfg, const TaskSequence& seq, const RunHooks& hooks = {}) {
    cfg.validate();
    if (seq.size() == 0) throw InvalidArgument("task sequence is empty");
    const int n = static_cast<int>(seq.size());
    Rng init_rng(cfg.seed);
    RunResult res;
    res.net = Network(network_spec_for(cfg, seq), init_rng);
    res.freeze = FreezeMap::for_network(res.net);
    res.r = RMatrix(n);
    res.param_count = res.net.learnable_parameter_count();
    Network& net = res.net;
    FreezeMap& freeze = res.freeze;

    if (is_joint(cfg.mode)) {
        std::vector<detail::PoolEntry> pool;
        std::vector<int> tasks;
        for (int t = 1; t <= n; ++t) {
            const auto p = detail::task_pool(net, seq, t);
            pool.insert(pool.end(), p.begin(), p.end());
            tasks.push_back(t);
        }
        Rng rng(detail::derive_seed(cfg.seed, 1, 0));
        PerParamLR lrs = PerParamLR::uniform(net, cfg.base_lr);
        res.logs.push_back(detail::train_until_plateau(net, seq, std::move(pool), tasks, lrs, freeze, cfg, 0, rng, hooks));
        const auto acc = detail::parallel_map(n, cfg.eval_workers,
                                              [&](int k) { return detail::evaluate_task(net, freeze, seq, k + 1, cfg); });
        // joint training has no sequence: every column holds the final accuracies
        for (int i = 1; i <= n; ++i)
            for (int j = i; j <= n; ++j) res.r.set(i, j, acc[static_cast<std::size_t>(i - 1)]);
        if (hooks.on_task_end) hooks.on_task_end({n, net, freeze, res.r});
    } else {
        PerParamLR next_lrs = PerParamLR::uniform(net, cfg.base_lr);
        std::vector<bool> unscaled(net.layer_count(), false);
        if (net.spec().head_mode == HeadMode::multi_head)
            for (std::size_t k = net.trunk_depth(); k < net.layer_count(); ++k) unscaled[k] = true;

        for (int j = 1; j <= n; ++j) {
            Rng rng(detail::derive_seed(cfg.seed, 1, static_cast<std::uint32_t>(j)));
            PerParamLR lrs = next_lrs;
            res.logs.push_back(
                detail::train_until_plateau(net, seq, detail::task_pool(net, seq, j), {j}, lrs, freeze, cfg, j, rng, hooks));

            std::optional<double> own_accuracy;
            switch (cfg.mode) {
                case Mode::ucb: {
                    UcbLrOptions opt;
                    opt.compound = cfg.compound_lr;
                    opt.unscaled_layers = unscaled;
                    next_lrs = ucb_lr_update(net, cfg.importance, cfg.base_lr, freeze, opt, &lrs);
                    break;
                }
                case Mode::ucb_p: {
                    auto rep = detail::prune_boundary(net, freeze, seq, j, cfg);
                    own_accuracy = rep.pre_prune_accuracy;
                    res.prunes.push_back(std::move(rep));
                    next_lrs = masked_uniform_lr(net, cfg.base_lr, freeze);
                    break;
                }
                case Mode::bbb_fe:
                case Mode::ord_fe:
                    if (j == 1) {
                        const auto offsets = layer_offsets(net);
                        const std::size_t trunk_end = net.trunk_depth() < net.layer_count() ? offsets[net.trunk_depth()]
                                                                                           : net.weight_count();
                        for (std::size_t p = 0; p < trunk_end; ++p) freeze.freeze(p, 1);
                        freeze.task_count = 1;
                    }
                    next_lrs = masked_uniform_lr(net, cfg.base_lr, freeze);
                    break;
                default:
                    next_lrs = PerParamLR::uniform(net, cfg.base_lr);
                    break;
            }

            const auto acc = detail::parallel_map(j, cfg.eval_workers, [&](int k) {
                const int i = k + 1;
                if (i == j && own_accuracy) return *own_accuracy;
                return detail::evaluate_task(net, freeze, seq, i, cfg);
            });
            for (int i = 1; i <= j; ++i) res.r.set(i, j, acc[static_cast<std::size_t>(i - 1)]);
            if (hooks.on_task_end) hooks.on_task_end({j, net, freeze, res.r});
        }
    }

    res.metrics = bwt_acc(res.r);
    res.final_validation_accuracy = detail::parallel_map(
        n, cfg.eval_workers, [&](int k) { return detail::evaluate_task(net, freeze, seq, k + 1, cfg, true); });
    return res;
}

// Hyperparameter search -----------------------------------------------------------

/// The prior grid: -ln sigma1 in {0, 1, 2}, -ln sigma2 in {6, 7, 8}, pi in {0.25, 0.5, 0.75},
/// ordered with pi varying fastest, then sigma2, then sigma1.
inline std::vector<ScaleMixturePrior> default_prior_grid() {
    std::vector<ScaleMixturePrior> grid;
    for (double s1 : {0.0, 1.0, 2.0})
        for (double s2 : {6.0, 7.0, 8.0})
            for (double pi : {0.25, 0.5, 0.75}) grid.push_back(ScaleMixturePrior::from_neg_log(pi, s1, s2));
    return grid;
}

struct TuneTrial {
    ScaleMixturePrior prior;
    double mean_validation_accuracy = 0.0;
};

struct TuneResult {
    TrainConfig best;
    std::size_t best_index = 0;
    std::vector<TuneTrial> trials;
};

/// Trains on tasks 1 and 2 only for every candidate prior and keeps the one with the
/// highest mean validation accuracy over the two tasks; ties go to the earlier candidate.
inline TuneResult tune_hyperparams(const std::vector<ScaleMixturePrior>& search_space, const TaskSequence& seq,
                                   const TrainConfig& base, const RunHooks& hooks = {}) {
    if (seq.size() < 2) throw InvalidArgument("tuning needs at least two tasks");
    if (search_space.empty()) throw InvalidArgument("empty search space");
    const TaskSequence first_two = seq.prefix(2);
    TuneResult out;
    out.best = base;
    double best_score = -1.0;
    for (std::size_t k = 0; k < search_space.size(); ++k) {
        TrainConfig cfg = base;
        cfg.prior = search_space[k];
        const auto run = run_sequence(cfg, first_two, hooks);
        const auto& v = run.final_validation_accuracy;
        const double score = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        out.trials.push_back({cfg.prior, score});
        if (score > best_score) {
            best_score = score;
            out.best = cfg;
            out.best_index = k;
        }
    }
    return out;
}

}  // namespace ucb
