#pragma once

// Reverse-mode gradients of the minibatch loss (l1 - l2 - l3) / M with respect to
// every mu and rho, using closed-form layer rules (affine, rectifier,
// softmax cross-entropy, Gaussian and mixture log densities). For each draw
// w = mu + sigma * eps:
//
//   dL/dmu  = dL/dw + dL/dmu|direct
//   dL/drho = (dL/dw * eps + dL/dsigma|direct) * sigmoid(rho)
//
// and contributions of all draws are summed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ucb/errors.hpp"
#include "ucb/network.hpp"
#include "ucb/variational.hpp"

namespace ucb {

struct ParamGradient {
    Matrix d_mu;
    Matrix d_rho;
};

struct LayerGradient {
    ParamGradient weights;
    ParamGradient biases;
};

/// Gradients for every layer of a network; layers outside the pass stay zero.
struct GradientSet {
    std::vector<LayerGradient> layers;

    static GradientSet zeros_like(const Network& net) {
        GradientSet g;
        for (const auto& l : net.layers()) {
            g.layers.push_back({{Matrix::Zero(l.fan_in(), l.fan_out()), Matrix::Zero(l.fan_in(), l.fan_out())},
                                {Matrix::Zero(1, l.fan_out()), Matrix::Zero(1, l.fan_out())}});
        }
        return g;
    }

    bool all_finite() const {
        for (const auto& l : layers)
            if (!l.weights.d_mu.allFinite() || !l.weights.d_rho.allFinite() || !l.biases.d_mu.allFinite() ||
                !l.biases.d_rho.allFinite())
                return false;
        return true;
    }
};

/// Which terms of the loss to differentiate. Disabling terms is for verification.
struct BackwardOptions {
    bool posterior_term = true;   // l1
    bool prior_term = true;       // l2
    bool likelihood_term = true;  // l3
    bool average_samples = false; // divide the Monte-Carlo sums by N
    bool compute_terms = true;    // also evaluate l1, l2, l3
};

struct BackwardResult {
    GradientSet grads;
    ElboTerms terms;  // scaled neither by M nor by N
    double loss = 0.0;
};

namespace detail {

/// Draw-independent quantities of one parameter block.
struct BlockCache {
    Matrix inv_sigma;
    Matrix sig_rho;  // d sigma / d rho
};

inline BlockCache block_cache(const GaussianVariational& p, const Matrix& sigma) {
    return {sigma.array().inverse().matrix(), p.rho.unaryExpr([](double r) { return sigmoid(r); })};
}

/// Adds one draw's contributions to d_mu and to the running d_sigma sum (kept in
/// out.d_rho until `finish_block`). `w` is the realised weight, `g_w` holds
/// d(scaled -l3)/dw.
///
/// The posterior term -log q(w) contributes -eps/sigma through w and +eps/sigma
/// directly to d_mu, which cancel; its net effect is -1/sigma on d_sigma.
inline void accumulate_block(const Matrix& w, const Matrix* eps, const Matrix& g_w, const BlockCache& cache,
                             const ScaleMixturePrior& prior, double scale, const BackwardOptions& opt, bool bayesian,
                             ParamGradient& out) {
    if (!bayesian) {
        out.d_mu += g_w;
        return;
    }
    const auto wa = w.array();
    if (opt.prior_term) {
        const double c1 = 1.0 / (prior.sigma1 * prior.sigma1);
        const double c2 = 1.0 / (prior.sigma2 * prior.sigma2);
        // log of the two weighted component densities differ by d = a0 - half * w^2
        const double a0 = std::log(prior.pi) - std::log(prior.sigma1) - std::log1p(-prior.pi) + std::log(prior.sigma2);
        const double half = 0.5 * (c1 - c2);
        // responsibility of the first component is logistic(d); below -50 the exp
        // no longer changes 1 + exp(.) and clamping avoids slow subnormal results
        const auto resp1 = ((half * wa.square() - a0).max(-50.0).exp() + 1.0).inverse();
        const auto g_total = g_w.array() + scale * wa * (c2 + resp1 * (c1 - c2));
        out.d_mu.array() += g_total;
        if (eps != nullptr) out.d_rho.array() += g_total * eps->array();
    } else {
        out.d_mu.array() += g_w.array();
        if (eps != nullptr) out.d_rho.array() += g_w.array() * eps->array();
    }
    if (opt.posterior_term) out.d_rho.array() -= scale * cache.inv_sigma.array();
}

/// Chain rule through sigma = softplus(rho).
inline void finish_block(const BlockCache& cache, bool bayesian, ParamGradient& out) {
    if (bayesian) out.d_rho.array() *= cache.sig_rho.array();
}

/// l1 and l2 contributions of one block for one draw.
inline std::pair<double, double> block_terms(const Matrix& w, const Matrix& sigma, const Matrix* eps,
                                             const ScaleMixturePrior& prior) {
    const Index rows = w.rows(), cols = w.cols();
    using Arr = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Arr e = eps ? Arr(eps->array()) : Arr(Arr::Zero(rows, cols));
    const double l1 = (-kLogSqrt2Pi - sigma.array().log() - 0.5 * e.square()).sum();
    const double c1 = 1.0 / (prior.sigma1 * prior.sigma1);
    const double c2 = 1.0 / (prior.sigma2 * prior.sigma2);
    const double log_a0 = std::log(prior.pi) - std::log(prior.sigma1) - kLogSqrt2Pi;
    const double log_b0 = std::log1p(-prior.pi) - std::log(prior.sigma2) - kLogSqrt2Pi;
    const Arr w2 = w.array().square();
    const Arr a = log_a0 - 0.5 * c1 * w2;
    const Arr b = log_b0 - 0.5 * c2 * w2;
    const Arr hi = a.max(b);
    const Arr lo = a.min(b);
    // hi is finite whenever pi is in [0, 1] and w is finite
    const double l2 = (hi + (lo - hi).exp().log1p()).sum();
    return {l1, l2};
}

}  // namespace detail

/// Exact gradients of (l1 - l2 - l3) / M for the draws recorded in `trace`.
/// `labels` is aligned with the batch rows and indexes each row's head output.
inline BackwardResult backward(const Network& net, const ForwardTrace& trace, std::span<const int> labels,
                               const ScaleMixturePrior& prior, std::int64_t minibatches,
                               const BackwardOptions& opt = {}) {
    if (trace.revision != net.revision())
        throw StalenessError("forward trace was recorded against revision " + std::to_string(trace.revision) +
                             ", network is at " + std::to_string(net.revision()));
    if (trace.masked) throw InvalidArgument("backward does not accept traces recorded under an inference mask");
    if (minibatches < 1) throw InvalidArgument("minibatch count must be >= 1");
    if (static_cast<Index>(labels.size()) != trace.input.rows())
        throw DimensionError("label count does not match batch rows");
    prior.validate();

    const bool bayesian = net.bayesian();
    const std::size_t n_draws = trace.n_samples();
    double scale = 1.0 / static_cast<double>(minibatches);
    if (opt.average_samples) scale /= static_cast<double>(n_draws);

    BackwardResult res;
    res.grads = GradientSet::zeros_like(net);
    res.terms.minibatches = minibatches;
    res.terms.samples = static_cast<std::int64_t>(n_draws);

    const auto& active = trace.active_layers;
    std::vector<detail::LayerSigma> sigma;
    struct LayerCache {
        detail::BlockCache w, b;
    };
    std::vector<LayerCache> cache;
    for (std::size_t k = 0; k < active.size(); ++k) {
        const auto& layer = net.layer(active[k]);
        sigma.push_back(trace.sigma.size() == active.size() ? trace.sigma[k] : detail::layer_sigma(layer));
        if (bayesian)
            cache.push_back({detail::block_cache(layer.weights, sigma.back().w), detail::block_cache(layer.biases, sigma.back().b)});
        else
            cache.emplace_back();
    }
    const std::size_t depth = net.trunk_depth();

    for (const auto& rec : trace.samples) {
        const bool has_noise = trace.noisy && !rec.noise.empty();
        // realised weights of this draw
        std::vector<detail::LayerWeights> weights;
        for (std::size_t k = 0; k < active.size(); ++k)
            weights.push_back(detail::realise_layer(NetworkView(net), active[k], has_noise ? &sigma[k] : nullptr,
                                                    has_noise ? &rec.noise[k] : nullptr));

        // d(scaled -l3)/dw for every active layer
        std::vector<detail::LayerWeights> g_w(active.size());
        for (std::size_t k = 0; k < active.size(); ++k) {
            g_w[k].w = Matrix::Zero(weights[k].w.rows(), weights[k].w.cols());
            g_w[k].b = Matrix::Zero(1, weights[k].b.cols());
        }
        const Matrix& top = depth > 0 ? rec.hidden.back() : trace.input;
        Matrix d_top = Matrix::Zero(top.rows(), top.cols());
        if (opt.likelihood_term) {
            for (std::size_t g = 0; g < trace.groups.size(); ++g) {
                const auto& rows = trace.groups[g].rows;
                const Matrix& lp = rec.head_log_probs[g];
                Matrix d_logits = lp.array().exp().matrix();
                for (Index r = 0; r < lp.rows(); ++r) {
                    const int y = labels[static_cast<std::size_t>(rows.empty() ? r : rows[r])];
                    if (y < 0 || y >= lp.cols()) throw InvalidArgument("label " + std::to_string(y) + " out of range");
                    d_logits(r, y) -= 1.0;
                }
                d_logits *= scale;
                const std::size_t head = net.head_layer_index(trace.groups[g].task_id);
                const auto pos = static_cast<std::size_t>(std::find(active.begin(), active.end(), head) - active.begin());
                const Matrix x = detail::gather_rows(top, rows);
                g_w[pos].w.noalias() += x.transpose() * d_logits;
                g_w[pos].b += d_logits.colwise().sum();
                const Matrix d_x = d_logits * weights[pos].w.transpose();
                if (rows.empty()) d_top += d_x;
                else
                    for (std::size_t i = 0; i < rows.size(); ++i) d_top.row(rows[i]) += d_x.row(static_cast<Index>(i));
            }
            Matrix d_h = std::move(d_top);
            for (std::size_t k = depth; k-- > 0;) {
                const Matrix& h = rec.hidden[k];
                Matrix d_z = (h.array() > 0.0).select(d_h.array(), 0.0).matrix();
                const Matrix& x = k == 0 ? trace.input : rec.hidden[k - 1];
                g_w[k].w.noalias() += x.transpose() * d_z;
                g_w[k].b += d_z.colwise().sum();
                if (k > 0) d_h.noalias() = d_z * weights[k].w.transpose();
            }
        }

        for (std::size_t k = 0; k < active.size(); ++k) {
            auto& out = res.grads.layers[active[k]];
            const Matrix* ew = has_noise ? &rec.noise[k].weight_eps : nullptr;
            const Matrix* eb = has_noise ? &rec.noise[k].bias_eps : nullptr;
            detail::accumulate_block(weights[k].w, ew, g_w[k].w, cache[k].w, prior, scale, opt, bayesian, out.weights);
            detail::accumulate_block(weights[k].b, eb, g_w[k].b, cache[k].b, prior, scale, opt, bayesian, out.biases);
            if (opt.compute_terms && bayesian) {
                const auto [w1, w2] = detail::block_terms(weights[k].w, sigma[k].w, ew, prior);
                const auto [b1, b2] = detail::block_terms(weights[k].b, sigma[k].b, eb, prior);
                res.terms.l1 += w1 + b1;
                res.terms.l2 += w2 + b2;
            }
        }
    }
    for (std::size_t k = 0; k < active.size(); ++k) {
        auto& out = res.grads.layers[active[k]];
        detail::finish_block(cache[k].w, bayesian, out.weights);
        detail::finish_block(cache[k].b, bayesian, out.biases);
    }
    res.terms.l3 = log_likelihood(trace, labels);
    if (!opt.posterior_term) res.terms.l1 = 0.0;
    if (!opt.prior_term) res.terms.l2 = 0.0;
    if (!opt.likelihood_term) res.terms.l3 = 0.0;
    const double mc_scale = opt.average_samples ? 1.0 / static_cast<double>(n_draws) : 1.0;
    res.loss = elbo_loss(res.terms) * mc_scale;
    return res;
}

// Finite-difference verification ---------------------------------------------

/// Loss (l1 - l2 - l3) / M recomputed from scratch for fixed draws, through the
/// variational-core densities rather than the backward rules.
inline double evaluate_loss(const Network& net, const Matrix& batch, const std::vector<RowGroup>& groups,
                            std::span<const int> labels, const std::vector<std::vector<LayerNoise>>& noise,
                            const ScaleMixturePrior& prior, std::int64_t minibatches, const BackwardOptions& opt = {}) {
    const auto res = forward_replay(net, batch, groups, noise);
    const auto& tr = res.trace;
    ElboTerms t;
    t.minibatches = minibatches;
    t.samples = static_cast<std::int64_t>(tr.n_samples());
    if (net.bayesian()) {
        for (const auto& rec : tr.samples) {
            for (std::size_t k = 0; k < tr.active_layers.size(); ++k) {
                const auto& layer = net.layer(tr.active_layers[k]);
                const Matrix zw = Matrix::Zero(layer.fan_in(), layer.fan_out());
                const Matrix zb = Matrix::Zero(1, layer.fan_out());
                const Matrix& ew = tr.noisy ? rec.noise[k].weight_eps : zw;
                const Matrix& eb = tr.noisy ? rec.noise[k].bias_eps : zb;
                const WeightSample sw = sample_weights(layer.weights, ew);
                const WeightSample sb = sample_weights(layer.biases, eb);
                if (opt.posterior_term) t.l1 += log_posterior(sw, layer.weights) + log_posterior(sb, layer.biases);
                if (opt.prior_term) t.l2 += log_prior_mixture(sw, prior) + log_prior_mixture(sb, prior);
            }
        }
    }
    if (opt.likelihood_term) t.l3 = log_likelihood(tr, labels);
    double loss = elbo_loss(t);
    if (opt.average_samples) loss /= static_cast<double>(tr.n_samples());
    return loss;
}

struct GroupCheck {
    std::string name;  // e.g. "layer1.weights.rho"
    double max_rel_error = 0.0;
    Index worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<GroupCheck> groups;
    double max_rel_error = 0.0;
    std::string worst_group;
    bool passed = true;
};

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    std::size_t mc_samples = 1;
    std::uint64_t seed = 0;
    BackwardOptions terms{};
    /// Test hook: multiply one analytic entry by `fault_factor` before comparing.
    std::optional<std::pair<std::string, Index>> fault;
    double fault_factor = 1.1;
};

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / (std::abs(numeric) + 1e-8);
}

/// Compares backward() against central differences (L(theta+h) - L(theta-h)) / 2h,
/// one coordinate at a time, with the Monte-Carlo draws frozen.
inline GradCheckReport finite_diff_check(const Network& net, const Matrix& batch, std::span<const int> labels,
                                         int task_id, const ScaleMixturePrior& prior, std::int64_t minibatches,
                                         const GradCheckOptions& opt) {
    const std::vector<RowGroup> groups{{task_id, {}}};
    std::vector<std::vector<LayerNoise>> noise;
    const auto active = detail::active_layers_for(net, groups);
    if (net.bayesian()) {
        Rng rng(opt.seed);
        for (std::size_t s = 0; s < opt.mc_samples; ++s) noise.push_back(detail::draw_noise(net, active, rng));
    }
    const auto fwd = forward_replay(net, batch, groups, noise);
    BackwardOptions bopt = opt.terms;
    bopt.compute_terms = false;
    const auto analytic = backward(net, fwd.trace, labels, prior, minibatches, bopt).grads;

    GradCheckReport report;
    Network probe = net;
    for (std::size_t li : active) {
        for (int part = 0; part < 2; ++part) {
            for (int which = 0; which < (net.bayesian() ? 2 : 1); ++which) {
                GroupCheck gc;
                gc.name = "layer" + std::to_string(li) + (part == 0 ? ".weights" : ".biases") +
                          (which == 0 ? ".mu" : ".rho");
                const auto& pg = part == 0 ? analytic.layers[li].weights : analytic.layers[li].biases;
                const Matrix& an = which == 0 ? pg.d_mu : pg.d_rho;
                for (Index i = 0; i < an.size(); ++i) {
                    auto coord = [&](Network& n) -> double& {
                        auto& l = n.mutable_layer(li);
                        auto& gv = part == 0 ? l.weights : l.biases;
                        return (which == 0 ? gv.mu : gv.rho).data()[i];
                    };
                    const double orig = coord(probe);
                    coord(probe) = orig + opt.step;
                    const double up = evaluate_loss(probe, batch, groups, labels, noise, prior, minibatches, opt.terms);
                    coord(probe) = orig - opt.step;
                    const double down =
                        evaluate_loss(probe, batch, groups, labels, noise, prior, minibatches, opt.terms);
                    coord(probe) = orig;
                    const double numeric = (up - down) / (2.0 * opt.step);
                    double a = an.data()[i];
                    if (opt.fault && opt.fault->first == gc.name && opt.fault->second == i) a *= opt.fault_factor;
                    const double err = relative_error(a, numeric);
                    if (!(err <= gc.max_rel_error) || i == 0) {  // NaN counts as worst
                        gc.max_rel_error = err;
                        gc.worst_index = i;
                        gc.analytic = a;
                        gc.numeric = numeric;
                    }
                }
                gc.passed = gc.max_rel_error < opt.tolerance;
                if (!(gc.max_rel_error < report.max_rel_error)) {
                    report.max_rel_error = gc.max_rel_error;
                    report.worst_group = gc.name;
                }
                report.passed = report.passed && gc.passed;
                report.groups.push_back(std::move(gc));
            }
        }
    }
    return report;
}

/// A freshly initialised one-hidden-layer Bayesian network with random inputs and labels.
struct TinyNetCheck {
    int inputs = 2;
    int hidden = 3;
    int classes = 2;
    int batch = 4;
    std::uint64_t seed = 0;
    std::int64_t minibatches = 1;
    ScaleMixturePrior prior{};
    GradCheckOptions check{};
};

inline GradCheckReport gradcheck_tiny_net(const TinyNetCheck& setup) {
    if (setup.inputs < 1 || setup.hidden < 1 || setup.classes < 1 || setup.batch < 1)
        throw InvalidArgument("gradcheck sizes must be >= 1");
    Rng rng(setup.seed);
    NetworkSpec spec;
    spec.input_dim = setup.inputs;
    spec.hidden_dims = {setup.hidden};
    spec.task_classes = {setup.classes};
    const Network net(spec, rng);
    Matrix x(setup.batch, setup.inputs);
    fill_standard_normal(x, rng);
    std::uniform_int_distribution<int> label(0, setup.classes - 1);
    std::vector<int> y(static_cast<std::size_t>(setup.batch));
    for (auto& v : y) v = label(rng);
    GradCheckOptions opt = setup.check;
    opt.seed = setup.seed;
    return finite_diff_check(net, x, y, 1, setup.prior, setup.minibatches, opt);
}

}  // namespace ucb
