#pragma once

// Multilayer Bayesian perceptron with per-task or shared classification heads.
//
// Layers are stored trunk first, then heads. In multi-head mode head k serves
// task k (task ids start at 1); in single-head mode one output layer spans the
// classes of every task and each task owns a contiguous column range of it.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ucb/errors.hpp"
#include "ucb/variational.hpp"

namespace ucb {

enum class HeadMode { multi_head, single_head };

struct ClassRange {
    int offset = 0;
    int count = 0;
};

struct NetworkSpec {
    int input_dim = 784;
    std::vector<int> hidden_dims{1200, 1200};
    HeadMode head_mode = HeadMode::multi_head;
    std::vector<int> task_classes;  // class count of task 1, 2, ...
    bool bayesian = true;           // false: ordinary network, sigma treated as 0
    bool shared_label_space = false;  // single head: every task uses columns [0, classes)
    double init_mu_std = 0.1;
    double init_rho = -3.0;

    int task_count() const { return static_cast<int>(task_classes.size()); }
    /// Width of the single shared head.
    int total_classes() const {
        if (shared_label_space) return *std::max_element(task_classes.begin(), task_classes.end());
        return std::accumulate(task_classes.begin(), task_classes.end(), 0);
    }

    void validate() const {
        if (input_dim < 1) throw InvalidArgument("network input_dim must be >= 1");
        for (int h : hidden_dims)
            if (h < 1) throw InvalidArgument("hidden layer width must be >= 1");
        if (task_classes.empty()) throw InvalidArgument("network needs at least one task");
        for (int c : task_classes)
            if (c < 1) throw InvalidArgument("task class count must be >= 1");
    }
};

struct BayesLinearLayer {
    GaussianVariational weights;  // fan_in x fan_out
    GaussianVariational biases;   // 1 x fan_out

    Index fan_in() const { return weights.rows(); }
    Index fan_out() const { return weights.cols(); }
    Index size() const { return weights.size() + biases.size(); }

    friend bool operator==(const BayesLinearLayer&, const BayesLinearLayer&) = default;
};

/// Per-layer keep masks (1 keeps, 0 zeroes the whole weight) used for inference views.
struct LayerMask {
    Matrix weights;
    Matrix biases;
};

class Network {
public:
    Network() = default;

    Network(NetworkSpec spec, Rng& init_rng) : spec_(std::move(spec)) {
        spec_.validate();
        int fan_in = spec_.input_dim;
        for (int width : spec_.hidden_dims) {
            layers_.push_back(make_layer(fan_in, width, init_rng));
            fan_in = width;
        }
        if (spec_.head_mode == HeadMode::multi_head) {
            for (int classes : spec_.task_classes) layers_.push_back(make_layer(fan_in, classes, init_rng));
        } else {
            layers_.push_back(make_layer(fan_in, spec_.total_classes(), init_rng));
        }
    }

    const NetworkSpec& spec() const { return spec_; }
    bool bayesian() const { return spec_.bayesian; }
    std::span<const BayesLinearLayer> layers() const { return layers_; }
    const BayesLinearLayer& layer(std::size_t i) const { return layers_.at(i); }
    std::size_t layer_count() const { return layers_.size(); }
    std::size_t trunk_depth() const { return spec_.hidden_dims.size(); }

    /// Bumps the revision: traces recorded before this call become stale.
    BayesLinearLayer& mutable_layer(std::size_t i) {
        ++revision_;
        return layers_.at(i);
    }
    std::vector<BayesLinearLayer>& mutable_layers() {
        ++revision_;
        return layers_;
    }

    /// Replaces all parameters, e.g. from a checkpoint. Shapes must match the spec.
    void set_layers(std::vector<BayesLinearLayer> layers) {
        if (layers.size() != layers_.size()) throw DimensionError("checkpoint layer count does not match network");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            require_same_shape(layers[i].weights.mu, layers_[i].weights.mu, "checkpoint weights");
            require_same_shape(layers[i].biases.mu, layers_[i].biases.mu, "checkpoint biases");
        }
        layers_ = std::move(layers);
        ++revision_;
    }

    std::uint64_t revision() const { return revision_; }

    void check_task(int task_id) const {
        if (task_id < 1 || task_id > spec_.task_count())
            throw InvalidArgument("unknown task id " + std::to_string(task_id));
    }

    std::size_t head_layer_index(int task_id) const {
        check_task(task_id);
        if (spec_.head_mode == HeadMode::single_head) return trunk_depth();
        return trunk_depth() + static_cast<std::size_t>(task_id - 1);
    }

    bool is_head_layer(std::size_t layer) const { return layer >= trunk_depth(); }

    /// Columns of the head output that belong to `task_id`.
    ClassRange class_range(int task_id) const {
        check_task(task_id);
        if (spec_.head_mode == HeadMode::multi_head || spec_.shared_label_space)
            return {0, spec_.task_classes[task_id - 1]};
        int offset = 0;
        for (int t = 1; t < task_id; ++t) offset += spec_.task_classes[t - 1];
        return {offset, spec_.task_classes[task_id - 1]};
    }

    /// Trunk layers followed by the head serving `task_id`.
    std::vector<std::size_t> active_layers(int task_id) const {
        std::vector<std::size_t> out(trunk_depth());
        std::iota(out.begin(), out.end(), std::size_t{0});
        out.push_back(head_layer_index(task_id));
        return out;
    }

    /// Number of weights and biases, each counted once.
    std::size_t weight_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += static_cast<std::size_t>(l.size());
        return n;
    }

    /// Learnable scalars: two per weight for Bayesian nets, one for ordinary nets.
    std::size_t learnable_parameter_count() const { return weight_count() * (bayesian() ? 2 : 1); }

    friend bool operator==(const Network& a, const Network& b) { return a.layers_ == b.layers_; }

private:
    BayesLinearLayer make_layer(int fan_in, int fan_out, Rng& rng) const {
        BayesLinearLayer l;
        l.weights = GaussianVariational(fan_in, fan_out, 0.0, spec_.init_rho);
        l.biases = GaussianVariational(1, fan_out, 0.0, spec_.init_rho);
        boost::random::normal_distribution<double> normal(0.0, spec_.init_mu_std);
        for (Index i = 0; i < l.weights.size(); ++i) l.weights.mu.data()[i] = normal(rng);
        for (Index i = 0; i < l.biases.size(); ++i) l.biases.mu.data()[i] = normal(rng);
        return l;
    }

    NetworkSpec spec_;
    std::vector<BayesLinearLayer> layers_;
    std::uint64_t revision_ = 0;
};

/// Read-only network plus optional keep masks. Masked weights contribute exactly 0.
struct NetworkView {
    const Network* net = nullptr;
    const std::vector<LayerMask>* masks = nullptr;

    NetworkView(const Network& n) : net(&n) {}  // NOLINT: implicit on purpose
    NetworkView(const Network& n, const std::vector<LayerMask>& m) : net(&n), masks(&m) {}
};

// Forward pass ------------------------------------------------------------

struct LayerNoise {
    Matrix weight_eps;
    Matrix bias_eps;
};

/// Rows of a batch routed to one task's head. Empty `rows` means every row.
struct RowGroup {
    int task_id = 1;
    std::vector<Index> rows;
};

struct SampleRecord {
    std::vector<LayerNoise> noise;        // one entry per active layer; empty when noise-free
    std::vector<Matrix> hidden;           // rectified output of each trunk layer
    std::vector<Matrix> head_log_probs;   // one per row group
};

/// sigma of both parameter blocks of one layer, computed once per pass.
struct LayerSigma {
    Matrix w;
    Matrix b;
};

struct ForwardTrace {
    Matrix input;
    std::vector<RowGroup> groups;
    std::vector<std::size_t> active_layers;
    std::vector<SampleRecord> samples;
    std::uint64_t revision = 0;
    bool noisy = false;
    bool masked = false;
    std::vector<LayerSigma> sigma;  // per active layer, recorded for noisy passes

    std::size_t n_samples() const { return samples.size(); }
    Index group_rows(std::size_t g) const {
        return groups[g].rows.empty() ? input.rows() : static_cast<Index>(groups[g].rows.size());
    }
};

struct ForwardResult {
    std::vector<Matrix> mean_probs;  // one per row group
    ForwardTrace trace;
};

namespace detail {

using ucb::LayerSigma;

inline Matrix gather_rows(const Matrix& m, const std::vector<Index>& rows) {
    if (rows.empty()) return m;
    Matrix out(static_cast<Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
    return out;
}

inline Matrix log_softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Index r = 0; r < logits.rows(); ++r) {
        const double hi = logits.row(r).maxCoeff();
        const double lse = hi + std::log((logits.row(r).array() - hi).exp().sum());
        out.row(r) = logits.row(r).array() - lse;
    }
    return out;
}

/// Concrete weights of one layer for one draw.
struct LayerWeights {
    Matrix w;
    Matrix b;
};

inline LayerSigma layer_sigma(const BayesLinearLayer& l) { return {l.weights.sigma(), l.biases.sigma()}; }

inline void realise(const Matrix& mu, const Matrix* sigma, const Matrix* eps, const Matrix* keep, Matrix& out) {
    if (sigma == nullptr || eps == nullptr) {
        out = mu;
    } else {
        out.resize(mu.rows(), mu.cols());
        out.array() = mu.array() + sigma->array() * eps->array();
    }
    if (keep != nullptr) out.array() *= keep->array();
}

/// Concrete weights for one draw; `sigma`/`noise` null means w = mu.
inline LayerWeights realise_layer(const NetworkView& view, std::size_t layer, const LayerSigma* sigma,
                                  const LayerNoise* noise) {
    const auto& l = view.net->layer(layer);
    const LayerMask* mask = view.masks ? &(*view.masks)[layer] : nullptr;
    const bool draw = sigma != nullptr && noise != nullptr && view.net->bayesian();
    LayerWeights out;
    realise(l.weights.mu, draw ? &sigma->w : nullptr, draw ? &noise->weight_eps : nullptr,
            mask ? &mask->weights : nullptr, out.w);
    realise(l.biases.mu, draw ? &sigma->b : nullptr, draw ? &noise->bias_eps : nullptr,
            mask ? &mask->biases : nullptr, out.b);
    return out;
}

inline Matrix affine(const Matrix& x, const LayerWeights& lw) {
    Matrix z(x.rows(), lw.w.cols());
    z.noalias() = x * lw.w;
    z.rowwise() += lw.b.row(0);
    return z;
}

inline std::vector<std::size_t> active_layers_for(const Network& net, const std::vector<RowGroup>& groups) {
    std::vector<std::size_t> out(net.trunk_depth());
    std::iota(out.begin(), out.end(), std::size_t{0});
    for (const auto& g : groups) {
        const std::size_t h = net.head_layer_index(g.task_id);
        if (std::find(out.begin(), out.end(), h) == out.end()) out.push_back(h);
    }
    return out;
}

inline std::vector<LayerNoise> draw_noise(const Network& net, const std::vector<std::size_t>& active, Rng& rng) {
    std::vector<LayerNoise> noise;
    noise.reserve(active.size());
    for (std::size_t li : active) {
        const auto& l = net.layer(li);
        LayerNoise n{Matrix(l.fan_in(), l.fan_out()), Matrix(1, l.fan_out())};
        fill_standard_normal(n.weight_eps, rng);
        fill_standard_normal(n.bias_eps, rng);
        noise.push_back(std::move(n));
    }
    return noise;
}

inline void validate_groups(const Network& net, const Matrix& batch, const std::vector<RowGroup>& groups) {
    if (batch.cols() != net.spec().input_dim)
        throw DimensionError("batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                             std::to_string(net.spec().input_dim));
    if (groups.empty()) throw InvalidArgument("forward pass needs at least one row group");
    for (const auto& g : groups) {
        net.check_task(g.task_id);
        for (Index r : g.rows)
            if (r < 0 || r >= batch.rows()) throw DimensionError("row group index out of range");
    }
}

/// Runs one draw; `noise` may be null for the noise-free network.
inline SampleRecord run_sample(const NetworkView& view, const Matrix& batch, const std::vector<RowGroup>& groups,
                               const std::vector<std::size_t>& active, const std::vector<LayerSigma>& sigma,
                               std::vector<LayerNoise> noise) {
    const Network& net = *view.net;
    SampleRecord rec;
    rec.noise = std::move(noise);
    const bool has_noise = !rec.noise.empty();
    const Matrix* x = &batch;
    for (std::size_t k = 0; k < net.trunk_depth(); ++k) {
        const auto lw = realise_layer(view, active[k], has_noise ? &sigma[k] : nullptr, has_noise ? &rec.noise[k] : nullptr);
        Matrix h = affine(*x, lw).cwiseMax(0.0);
        rec.hidden.push_back(std::move(h));
        x = &rec.hidden.back();
    }
    for (const auto& g : groups) {
        const std::size_t head = net.head_layer_index(g.task_id);
        const auto pos = static_cast<std::size_t>(std::find(active.begin(), active.end(), head) - active.begin());
        const auto lw =
            realise_layer(view, head, has_noise ? &sigma[pos] : nullptr, has_noise ? &rec.noise[pos] : nullptr);
        rec.head_log_probs.push_back(log_softmax_rows(affine(gather_rows(*x, g.rows), lw)));
    }
    return rec;
}

}  // namespace detail

/// Forward pass with caller-supplied noise (one vector of per-active-layer draws per sample).
/// An empty `noise` list runs a single noise-free pass.
inline ForwardResult forward_replay(const NetworkView& view, const Matrix& batch, std::vector<RowGroup> groups,
                                    std::vector<std::vector<LayerNoise>> noise) {
    const Network& net = *view.net;
    detail::validate_groups(net, batch, groups);
    ForwardResult res;
    auto& tr = res.trace;
    tr.input = batch;
    tr.active_layers = detail::active_layers_for(net, groups);
    tr.revision = net.revision();
    tr.noisy = !noise.empty() && net.bayesian();
    tr.masked = view.masks != nullptr;
    tr.groups = std::move(groups);
    if (!tr.noisy) {
        tr.samples.push_back(detail::run_sample(view, batch, tr.groups, tr.active_layers, {}, {}));
    } else {
        for (std::size_t li : tr.active_layers) tr.sigma.push_back(detail::layer_sigma(net.layer(li)));
        for (auto& n : noise) {
            if (n.size() != tr.active_layers.size()) throw DimensionError("noise does not cover the active layers");
            tr.samples.push_back(detail::run_sample(view, batch, tr.groups, tr.active_layers, tr.sigma, std::move(n)));
        }
    }
    for (std::size_t g = 0; g < tr.groups.size(); ++g) {
        Matrix mean = Matrix::Zero(tr.group_rows(g), tr.samples[0].head_log_probs[g].cols());
        for (const auto& s : tr.samples) mean += s.head_log_probs[g].array().exp().matrix();
        mean /= static_cast<double>(tr.samples.size());
        res.mean_probs.push_back(std::move(mean));
    }
    return res;
}

/// Monte-Carlo forward pass: draws `n_samples` weight sets (trunk and routed heads,
/// layer by layer, weights before biases) and averages the per-head softmax outputs.
/// Ordinary networks ignore the draw count and run once with w = mu.
inline ForwardResult forward_mc(const NetworkView& view, const Matrix& batch, std::vector<RowGroup> groups,
                                std::size_t n_samples, Rng& rng) {
    if (n_samples < 1) throw InvalidArgument("forward_mc needs at least one sample");
    const Network& net = *view.net;
    detail::validate_groups(net, batch, groups);
    std::vector<std::vector<LayerNoise>> noise;
    if (net.bayesian()) {
        const auto active = detail::active_layers_for(net, groups);
        for (std::size_t s = 0; s < n_samples; ++s) noise.push_back(detail::draw_noise(net, active, rng));
    }
    return forward_replay(view, batch, std::move(groups), std::move(noise));
}

inline ForwardResult forward_mc(const NetworkView& view, const Matrix& batch, int task_id, std::size_t n_samples,
                                Rng& rng) {
    return forward_mc(view, batch, std::vector<RowGroup>{{task_id, {}}}, n_samples, rng);
}

/// Forward pass with every eps = 0, i.e. w = mu.
inline ForwardResult forward_mean(const NetworkView& view, const Matrix& batch, int task_id) {
    return forward_replay(view, batch, {{task_id, {}}}, {});
}

// Likelihood ----------------------------------------------------------------

inline void check_labels(std::span<const int> labels, Index rows, Index classes) {
    if (static_cast<Index>(labels.size()) != rows) throw DimensionError("label count does not match batch rows");
    for (int y : labels)
        if (y < 0 || y >= classes)
            throw InvalidArgument("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}

/// Sum over rows of log p(label | row) for one probability matrix.
inline double log_likelihood(const Matrix& probabilities, std::span<const int> labels) {
    check_labels(labels, probabilities.rows(), probabilities.cols());
    double total = 0.0;
    for (Index r = 0; r < probabilities.rows(); ++r) total += std::log(probabilities(r, labels[r]));
    return total;
}

/// l3: log-likelihood summed over rows and over every Monte-Carlo draw of the trace.
/// `labels` is aligned with the batch rows and indexes each row's head output.
inline double log_likelihood(const ForwardTrace& trace, std::span<const int> labels) {
    if (static_cast<Index>(labels.size()) != trace.input.rows())
        throw DimensionError("label count does not match batch rows");
    double total = 0.0;
    for (const auto& s : trace.samples) {
        for (std::size_t g = 0; g < trace.groups.size(); ++g) {
            const Matrix& lp = s.head_log_probs[g];
            const auto& rows = trace.groups[g].rows;
            for (Index r = 0; r < lp.rows(); ++r) {
                const int y = labels[rows.empty() ? r : rows[r]];
                if (y < 0 || y >= lp.cols()) throw InvalidArgument("label " + std::to_string(y) + " out of range");
                total += lp(r, y);
            }
        }
    }
    return total;
}

// Prediction ----------------------------------------------------------------

struct PredictMode {
    enum class Kind { mc_average, mean_weights };
    Kind kind = Kind::mc_average;
    std::size_t samples = 10;
    std::uint64_t seed = 0;

    static PredictMode mc_average(std::size_t n, std::uint64_t seed) { return {Kind::mc_average, n, seed}; }
    static PredictMode mean_weights() { return {Kind::mean_weights, 1, 0}; }
};

/// Scores batches with a fixed set of weight draws: every call replays the same
/// draws from the configured seed, so a dataset can be scored in chunks.
class Predictor {
public:
    /// Uses the trunk and the head serving `task_id`.
    Predictor(const NetworkView& view, int task_id, const PredictMode& mode) : view_(view), mode_(mode) {
        const Network& net = *view.net;
        active_ = net.active_layers(task_id);
        draw_ = mode.kind == PredictMode::Kind::mc_average && net.bayesian();
        if (draw_ && mode.samples < 1) throw InvalidArgument("mc_average needs at least one sample");
        if (draw_)
            for (std::size_t li : active_) sigma_.push_back(detail::layer_sigma(net.layer(li)));
    }

    std::size_t draw_count() const { return draw_ ? mode_.samples : 1; }

    /// Mean over draws of the head's softmax output for each row.
    Matrix mean_probs(const Matrix& batch) const {
        const Network& net = *view_.net;
        if (batch.cols() != net.spec().input_dim) throw DimensionError("batch width does not match network");
        Rng rng(mode_.seed);
        Matrix mean;
        for (std::size_t s = 0; s < draw_count(); ++s) {
            const auto noise = draw_ ? detail::draw_noise(net, active_, rng) : std::vector<LayerNoise>{};
            Matrix x = batch;
            for (std::size_t k = 0; k < active_.size(); ++k) {
                const auto lw = detail::realise_layer(view_, active_[k], draw_ ? &sigma_[k] : nullptr,
                                                      draw_ ? &noise[k] : nullptr);
                if (k + 1 < active_.size()) x = detail::affine(x, lw).cwiseMax(0.0);
                else x = detail::log_softmax_rows(detail::affine(x, lw)).array().exp().matrix();
            }
            if (mean.size() == 0) mean = std::move(x);
            else mean += x;
        }
        return mean / static_cast<double>(draw_count());
    }

private:
    NetworkView view_;
    PredictMode mode_;
    bool draw_ = false;
    std::vector<std::size_t> active_;
    std::vector<detail::LayerSigma> sigma_;
};

/// argmax of each row over columns [range.offset, range.offset + range.count).
inline std::vector<int> argmax_rows(const Matrix& probs, ClassRange range) {
    std::vector<int> out(static_cast<std::size_t>(probs.rows()));
    for (Index r = 0; r < probs.rows(); ++r) {
        Index best = 0;
        probs.row(r).segment(range.offset, range.count).maxCoeff(&best);
        out[static_cast<std::size_t>(r)] = range.offset + static_cast<int>(best);
    }
    return out;
}

/// Predicted classes in the head's output space. Multi-head networks require a task
/// scope. Single-head networks restrict the argmax to the scoped task's classes, or
/// take it over every class when no scope is given.
inline std::vector<int> predict(const NetworkView& view, const Matrix& batch, const PredictMode& mode,
                                std::optional<int> task_scope) {
    const Network& net = *view.net;
    if (net.spec().head_mode == HeadMode::multi_head && !task_scope)
        throw InvalidArgument("multi-head prediction needs a task scope");
    if (task_scope) net.check_task(*task_scope);
    const int head_task = task_scope.value_or(1);
    const Predictor predictor(view, head_task, mode);
    const Matrix probs = predictor.mean_probs(batch);
    const ClassRange range = task_scope ? net.class_range(*task_scope) : ClassRange{0, static_cast<int>(probs.cols())};
    return argmax_rows(probs, range);
}

}  // namespace ucb
