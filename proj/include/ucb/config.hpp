#pragma once

// Flat key=value experiment files. Unknown keys are rejected by name.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ucb/data.hpp"
#include "ucb/errors.hpp"
#include "ucb/harness.hpp"
#include "ucb/persistence.hpp"

namespace ucb {

enum class SequenceSource { synthetic, split_mnist, permuted_mnist };

struct ExperimentConfig {
    TrainConfig train;
    SequenceSource source = SequenceSource::synthetic;
    std::filesystem::path output_dir;
    std::filesystem::path mnist_dir;

    // synthetic blobs
    int n_tasks = 3;
    int classes_per_task = 2;
    int dims = 2;
    int examples_per_class = 200;
    BlobOptions blobs{};

    // split / permuted MNIST
    std::vector<std::vector<int>> class_groups{{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}};
    std::uint64_t data_seed = 1;
    SplitOptions split{};
};

namespace detail {

inline std::string trim_copy(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim_copy(item));
    return out;
}

inline double to_real(const std::string& key, const std::string& v) {
    try {
        return parse_double(v, key);
    } catch (const InvalidArgument&) {
        throw ConfigError(key, key + ": expected a number, got \"" + v + "\"");
    }
}

inline long long to_integer(const std::string& key, const std::string& v) {
    long long out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw ConfigError(key, key + ": expected an integer, got \"" + v + "\"");
    return out;
}

inline int to_int(const std::string& key, const std::string& v) { return static_cast<int>(to_integer(key, v)); }

inline std::uint64_t to_seed(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size())
        throw ConfigError(key, key + ": expected a non-negative integer, got \"" + v + "\"");
    return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key, key + ": expected true or false, got \"" + v + "\"");
}

template <class T>
std::string join(const std::vector<T>& xs, const char* sep, std::function<std::string(const T&)> fmt) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? sep : "") + fmt(xs[i]);
    return out;
}

inline std::string sequence_name(SequenceSource s) {
    switch (s) {
        case SequenceSource::synthetic: return "synthetic";
        case SequenceSource::split_mnist: return "split_mnist";
        case SequenceSource::permuted_mnist: return "permuted_mnist";
    }
    return "?";
}

struct KeyHandler {
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::map<std::string, KeyHandler>& key_handlers() {
    using E = ExperimentConfig;
    static const std::map<std::string, KeyHandler> handlers = [] {
        std::map<std::string, KeyHandler> h;
        auto add = [&](const std::string& k, std::function<void(E&, const std::string&)> set,
                       std::function<std::string(const E&)> get) { h[k] = {std::move(set), std::move(get)}; };
        // `ref` maps a config (const or not) to the field it controls
        auto add_real = [&](const std::string& k, auto ref) {
            add(k, [k, ref](E& c, const std::string& v) { ref(c) = to_real(k, v); },
                [ref](const E& c) { return format_double(ref(c)); });
        };
        auto add_int = [&](const std::string& k, auto ref) {
            add(k, [k, ref](E& c, const std::string& v) { ref(c) = to_int(k, v); },
                [ref](const E& c) { return std::to_string(ref(c)); });
        };
        auto add_seed = [&](const std::string& k, auto ref) {
            add(k, [k, ref](E& c, const std::string& v) { ref(c) = to_seed(k, v); },
                [ref](const E& c) { return std::to_string(ref(c)); });
        };
        auto add_bool = [&](const std::string& k, auto ref) {
            add(k, [k, ref](E& c, const std::string& v) { ref(c) = to_bool(k, v); },
                [ref](const E& c) { return std::string(ref(c) ? "true" : "false"); });
        };

        add("mode",
            [](E& c, const std::string& v) {
                const auto m = parse_mode(v);
                if (!m) throw ConfigError("mode", "mode: unknown mode \"" + v + "\"");
                c.train.mode = *m;
            },
            [](const E& c) { return to_string(c.train.mode); });
        add("sequence",
            [](E& c, const std::string& v) {
                if (v == "synthetic") c.source = SequenceSource::synthetic;
                else if (v == "split_mnist") c.source = SequenceSource::split_mnist;
                else if (v == "permuted_mnist") c.source = SequenceSource::permuted_mnist;
                else throw ConfigError("sequence", "sequence: unknown sequence \"" + v + "\"");
            },
            [](const E& c) { return sequence_name(c.source); });
        add("output_dir", [](E& c, const std::string& v) { c.output_dir = v; },
            [](const E& c) { return c.output_dir.string(); });
        add("mnist_dir", [](E& c, const std::string& v) { c.mnist_dir = v; },
            [](const E& c) { return c.mnist_dir.string(); });

        add_real("base_lr", [](auto& c) -> auto& { return c.train.base_lr; });
        add_int("batch_size", [](auto& c) -> auto& { return c.train.batch_size; });
        add_real("decay_factor", [](auto& c) -> auto& { return c.train.decay_factor; });
        add_int("plateau_patience", [](auto& c) -> auto& { return c.train.plateau_patience; });
        add_real("plateau_min_delta", [](auto& c) -> auto& { return c.train.plateau_min_delta; });
        add_int("plateau_triggers", [](auto& c) -> auto& { return c.train.plateau_triggers; });
        add_int("mc_samples", [](auto& c) -> auto& { return c.train.mc_samples; });
        add_int("max_epochs", [](auto& c) -> auto& { return c.train.max_epochs; });
        add_seed("seed", [](auto& c) -> auto& { return c.train.seed; });
        add_real("prior_pi", [](auto& c) -> auto& { return c.train.prior.pi; });
        add("prior_neg_log_sigma1",
            [](E& c, const std::string& v) { c.train.prior.sigma1 = std::exp(-to_real("prior_neg_log_sigma1", v)); },
            [](const E& c) { return format_double(0.0 - std::log(c.train.prior.sigma1)); });
        add("prior_neg_log_sigma2",
            [](E& c, const std::string& v) { c.train.prior.sigma2 = std::exp(-to_real("prior_neg_log_sigma2", v)); },
            [](const E& c) { return format_double(0.0 - std::log(c.train.prior.sigma2)); });
        add_bool("regularize_mu", [](auto& c) -> auto& { return c.train.importance.regularize_mu; });
        add_bool("regularize_rho", [](auto& c) -> auto& { return c.train.importance.regularize_rho; });
        add("omega_formula",
            [](E& c, const std::string& v) {
                if (v == "inv_sigma") c.train.importance.omega_formula = OmegaFormula::inv_sigma;
                else if (v == "snr") c.train.importance.omega_formula = OmegaFormula::snr;
                else throw ConfigError("omega_formula", "omega_formula: expected inv_sigma or snr, got \"" + v + "\"");
            },
            [](const E& c) {
                return std::string(c.train.importance.omega_formula == OmegaFormula::inv_sigma ? "inv_sigma" : "snr");
            });
        add_bool("compound_lr", [](auto& c) -> auto& { return c.train.compound_lr; });
        add_bool("average_mc", [](auto& c) -> auto& { return c.train.average_mc; });
        add("hidden_dims",
            [](E& c, const std::string& v) {
                c.train.hidden_dims.clear();
                if (v.empty()) return;
                for (const auto& x : split_list(v, ',')) c.train.hidden_dims.push_back(to_int("hidden_dims", x));
            },
            [](const E& c) {
                return join<int>(c.train.hidden_dims, ",", [](const int& x) { return std::to_string(x); });
            });
        add("head_mode",
            [](E& c, const std::string& v) {
                if (v == "multi_head") c.train.head_mode = HeadMode::multi_head;
                else if (v == "single_head") c.train.head_mode = HeadMode::single_head;
                else throw ConfigError("head_mode", "head_mode: expected multi_head or single_head, got \"" + v + "\"");
            },
            [](const E& c) {
                return std::string(c.train.head_mode == HeadMode::multi_head ? "multi_head" : "single_head");
            });
        add_real("init_mu_std", [](auto& c) -> auto& { return c.train.init_mu_std; });
        add_real("init_rho", [](auto& c) -> auto& { return c.train.init_rho; });
        add_bool("match_ordinary_params", [](auto& c) -> auto& { return c.train.match_ordinary_params; });
        add("eval_mode",
            [](E& c, const std::string& v) {
                if (v == "mc_average") c.train.eval.kind = PredictMode::Kind::mc_average;
                else if (v == "mean_weights") c.train.eval.kind = PredictMode::Kind::mean_weights;
                else throw ConfigError("eval_mode", "eval_mode: expected mc_average or mean_weights, got \"" + v + "\"");
            },
            [](const E& c) {
                return std::string(c.train.eval.kind == PredictMode::Kind::mc_average ? "mc_average" : "mean_weights");
            });
        add("eval_samples",
            [](E& c, const std::string& v) {
                const int n = to_int("eval_samples", v);
                if (n < 1) throw ConfigError("eval_samples", "eval_samples: must be >= 1");
                c.train.eval.samples = static_cast<std::size_t>(n);
            },
            [](const E& c) { return std::to_string(c.train.eval.samples); });
        add_seed("eval_seed", [](auto& c) -> auto& { return c.train.eval.seed; });
        add("prune_ratios",
            [](E& c, const std::string& v) {
                c.train.prune_ratios.clear();
                for (const auto& x : split_list(v, ',')) c.train.prune_ratios.push_back(to_real("prune_ratios", x));
            },
            [](const E& c) {
                return join<double>(c.train.prune_ratios, ",", [](const double& x) { return format_double(x); });
            });
        add_real("prune_threshold", [](auto& c) -> auto& { return c.train.prune_threshold; });
        add_int("eval_workers", [](auto& c) -> auto& { return c.train.eval_workers; });

        add_int("n_tasks", [](auto& c) -> auto& { return c.n_tasks; });
        add_int("classes_per_task", [](auto& c) -> auto& { return c.classes_per_task; });
        add_int("dims", [](auto& c) -> auto& { return c.dims; });
        add_int("examples_per_class", [](auto& c) -> auto& { return c.examples_per_class; });
        add_real("blob_radius", [](auto& c) -> auto& { return c.blobs.radius; });
        add_real("blob_noise", [](auto& c) -> auto& { return c.blobs.noise; });
        add("class_groups",
            [](E& c, const std::string& v) {
                c.class_groups.clear();
                for (const auto& g : split_list(v, ';')) {
                    std::vector<int> group;
                    for (const auto& x : split_list(g, ',')) group.push_back(to_int("class_groups", x));
                    c.class_groups.push_back(std::move(group));
                }
            },
            [](const E& c) {
                return join<std::vector<int>>(c.class_groups, ";", [](const std::vector<int>& g) {
                    return join<int>(g, ",", [](const int& x) { return std::to_string(x); });
                });
            });
        add_seed("data_seed", [](auto& c) -> auto& { return c.data_seed; });
        add_seed("split_seed", [](auto& c) -> auto& { return c.split.seed; });
        add_real("validation_fraction", [](auto& c) -> auto& { return c.split.validation_fraction; });
        return h;
    }();
    return handlers;
}

}  // namespace detail

/// Parses an experiment file. `mode`, `sequence` and `output_dir` are required;
/// every other key falls back to its default.
inline ExperimentConfig parse_experiment_config(const std::string& text) {
    const auto kv = parse_key_values(text, "config");
    const auto& handlers = detail::key_handlers();
    ExperimentConfig cfg;
    std::set<std::string> seen;
    for (const auto& [key, value] : kv) {
        const auto it = handlers.find(key);
        if (it == handlers.end()) throw ConfigError(key, "unknown config key \"" + key + "\"");
        if (!seen.insert(key).second) throw ConfigError(key, "duplicate config key \"" + key + "\"");
        it->second.set(cfg, value);
    }
    for (const char* required : {"mode", "sequence", "output_dir"})
        if (!seen.count(required)) throw ConfigError(required, std::string("missing required key \"") + required + "\"");
    if (cfg.source != SequenceSource::synthetic && cfg.mnist_dir.empty())
        throw ConfigError("mnist_dir", "mnist_dir is required for MNIST sequences");
    try {
        cfg.train.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError("", e.what());
    }
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) throw ConfigError("", "cannot read config file " + path.string());
    return parse_experiment_config(read_text(path));
}

/// Every key with its effective value, in sorted key order.
inline std::string format_experiment_config(const ExperimentConfig& cfg) {
    KeyValues kv;
    for (const auto& [key, h] : detail::key_handlers()) kv.emplace_back(key, h.get(cfg));
    return format_key_values(kv);
}

/// Builds the task sequence named by the config.
inline TaskSequence load_sequence(const ExperimentConfig& cfg) {
    switch (cfg.source) {
        case SequenceSource::synthetic:
            return make_synthetic_blobs(cfg.n_tasks, cfg.classes_per_task, cfg.dims, cfg.examples_per_class,
                                        cfg.data_seed, cfg.blobs);
        case SequenceSource::split_mnist: {
            const Dataset train =
                load_idx(cfg.mnist_dir / "train-images-idx3-ubyte", cfg.mnist_dir / "train-labels-idx1-ubyte");
            const Dataset test = load_idx(cfg.mnist_dir / "t10k-images-idx3-ubyte", cfg.mnist_dir / "t10k-labels-idx1-ubyte");
            return split_by_classes(train, test, cfg.class_groups, cfg.split);
        }
        case SequenceSource::permuted_mnist: {
            const Dataset train =
                load_idx(cfg.mnist_dir / "train-images-idx3-ubyte", cfg.mnist_dir / "train-labels-idx1-ubyte");
            const Dataset test = load_idx(cfg.mnist_dir / "t10k-images-idx3-ubyte", cfg.mnist_dir / "t10k-labels-idx1-ubyte");
            return make_permuted_tasks(train, test, cfg.n_tasks, cfg.data_seed, cfg.split);
        }
    }
    throw InvalidArgument("unknown sequence source");
}

}  // namespace ucb
