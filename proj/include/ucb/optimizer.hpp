#pragma once

// Per-parameter SGD, uncertainty-scaled learning rates, and SNR-based
// freezing of parameters behind accumulated task masks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ucb/binary_io.hpp"
#include "ucb/errors.hpp"
#include "ucb/gradient.hpp"
#include "ucb/network.hpp"

namespace ucb {

// Learning rates ----------------------------------------------------------------

struct ParamRates {
    Matrix alpha_mu;
    Matrix alpha_rho;
};

struct LayerRates {
    ParamRates weights;
    ParamRates biases;
};

struct PerParamLR {
    std::vector<LayerRates> layers;
    double base_lr = 0.01;

    static PerParamLR uniform(const Network& net, double base_lr) {
        PerParamLR lr;
        lr.base_lr = base_lr;
        for (const auto& l : net.layers()) {
            lr.layers.push_back({{Matrix::Constant(l.fan_in(), l.fan_out(), base_lr),
                                  Matrix::Constant(l.fan_in(), l.fan_out(), base_lr)},
                                 {Matrix::Constant(1, l.fan_out(), base_lr), Matrix::Constant(1, l.fan_out(), base_lr)}});
        }
        return lr;
    }

    /// Plateau decay: every rate, including the base, multiplied by `factor`.
    void scale(double factor) {
        base_lr *= factor;
        for (auto& l : layers)
            for (auto* p : {&l.weights, &l.biases}) {
                p->alpha_mu *= factor;
                p->alpha_rho *= factor;
            }
    }
};

enum class OmegaFormula { inv_sigma, snr };

/// Which learning rates get divided by the importance, and how importance is measured.
struct ImportanceConfig {
    bool regularize_mu = true;
    bool regularize_rho = false;
    OmegaFormula omega_formula = OmegaFormula::inv_sigma;
};

// Freeze map ----------------------------------------------------------------------

/// Per-parameter task index at which the parameter was frozen (0 = free).
/// Parameters are indexed layer by layer, weights row-major before biases.
struct FreezeMap {
    std::vector<std::uint32_t> frozen_at;
    std::uint32_t task_count = 0;

    static FreezeMap for_network(const Network& net) {
        FreezeMap f;
        f.frozen_at.assign(net.weight_count(), 0);
        return f;
    }

    std::size_t size() const { return frozen_at.size(); }
    bool is_frozen(std::size_t i) const { return frozen_at[i] != 0; }

    /// Freezes a free parameter; an earlier owner is never overwritten.
    void freeze(std::size_t i, std::uint32_t task) {
        if (frozen_at[i] == 0) frozen_at[i] = task;
    }

    std::size_t frozen_count() const {
        return static_cast<std::size_t>(std::count_if(frozen_at.begin(), frozen_at.end(), [](auto v) { return v != 0; }));
    }

    friend bool operator==(const FreezeMap&, const FreezeMap&) = default;
};

/// Flat offset of each layer's first weight within a FreezeMap.
inline std::vector<std::size_t> layer_offsets(const Network& net) {
    std::vector<std::size_t> out;
    std::size_t off = 0;
    for (const auto& l : net.layers()) {
        out.push_back(off);
        off += static_cast<std::size_t>(l.size());
    }
    return out;
}

inline void check_freeze_map(const Network& net, const FreezeMap& freeze) {
    if (freeze.size() != net.weight_count())
        throw DimensionError("freeze map covers " + std::to_string(freeze.size()) + " parameters, network has " +
                             std::to_string(net.weight_count()));
}

// SGD ----------------------------------------------------------------------------

namespace detail {

inline void sgd_block(GaussianVariational& p, const ParamGradient& g, const ParamRates& lr,
                      std::span<const std::uint32_t> frozen) {
    require_same_shape(p.mu, g.d_mu, "sgd_step gradient");
    require_same_shape(p.mu, lr.alpha_mu, "sgd_step learning rate");
    double* mu = p.mu.data();
    double* rho = p.rho.data();
    const double* gm = g.d_mu.data();
    const double* gr = g.d_rho.data();
    const double* am = lr.alpha_mu.data();
    const double* ar = lr.alpha_rho.data();
    for (Index i = 0, n = p.size(); i < n; ++i) {
        if (frozen[static_cast<std::size_t>(i)] != 0) continue;
        mu[i] = mu[i] - am[i] * gm[i];
        rho[i] = rho[i] - ar[i] * gr[i];
    }
}

}  // namespace detail

/// mu -= alpha_mu * dmu, rho -= alpha_rho * drho; frozen parameters are left untouched.
inline void sgd_step(Network& net, const GradientSet& grads, const PerParamLR& lrs, const FreezeMap& freeze) {
    if (grads.layers.size() != net.layer_count() || lrs.layers.size() != net.layer_count())
        throw DimensionError("sgd_step: gradient or learning-rate layer count does not match network");
    check_freeze_map(net, freeze);
    const auto offsets = layer_offsets(net);
    auto& layers = net.mutable_layers();
    for (std::size_t k = 0; k < layers.size(); ++k) {
        auto& l = layers[k];
        const std::span<const std::uint32_t> fz(freeze.frozen_at);
        detail::sgd_block(l.weights, grads.layers[k].weights, lrs.layers[k].weights,
                          fz.subspan(offsets[k], static_cast<std::size_t>(l.weights.size())));
        detail::sgd_block(l.biases, grads.layers[k].biases, lrs.layers[k].biases,
                          fz.subspan(offsets[k] + static_cast<std::size_t>(l.weights.size()),
                                     static_cast<std::size_t>(l.biases.size())));
    }
}

// Importance ----------------------------------------------------------------------

/// Signal-to-noise ratio |mu| / sigma, elementwise.
inline Matrix snr_importance(const GaussianVariational& p) {
    return (p.mu.array().abs() / p.sigma().array()).matrix();
}

struct UcbLrOptions {
    /// Divide the previous rates instead of recomputing from the base rate.
    bool compound = false;
    /// Layers whose rates stay at the base rate (per-task heads); empty = none.
    std::vector<bool> unscaled_layers;
    /// Lower bound on the SNR importance so that mu = 0 does not yield an infinite rate.
    double min_omega = 1e-6;
};

/// Learning rates for the next task: alpha = base / Omega for the regularised
/// parameter kinds, base otherwise. Frozen parameters get rate 0.
inline PerParamLR ucb_lr_update(const Network& net, const ImportanceConfig& config, double base_lr,
                                const FreezeMap& freeze, const UcbLrOptions& opt = {},
                                const PerParamLR* previous = nullptr) {
    check_freeze_map(net, freeze);
    if (opt.compound && previous == nullptr) throw InvalidArgument("compounding update needs the previous rates");
    PerParamLR out = PerParamLR::uniform(net, base_lr);
    const auto offsets = layer_offsets(net);
    for (std::size_t k = 0; k < net.layer_count(); ++k) {
        const auto& layer = net.layer(k);
        const bool scaled = opt.unscaled_layers.empty() || !opt.unscaled_layers[k];
        std::size_t flat = offsets[k];
        for (int part = 0; part < 2; ++part) {
            const auto& p = part == 0 ? layer.weights : layer.biases;
            auto& rates = part == 0 ? out.layers[k].weights : out.layers[k].biases;
            const ParamRates* prev = previous ? (part == 0 ? &previous->layers[k].weights : &previous->layers[k].biases)
                                              : nullptr;
            const Matrix sigma = p.sigma();
            for (Index i = 0; i < p.size(); ++i, ++flat) {
                if (freeze.is_frozen(flat)) {
                    rates.alpha_mu.data()[i] = 0.0;
                    rates.alpha_rho.data()[i] = 0.0;
                    continue;
                }
                const double s = sigma.data()[i];
                if (!(s > 0.0)) throw InvalidState("non-positive sigma in learning-rate update");
                const double omega = config.omega_formula == OmegaFormula::inv_sigma
                                         ? 1.0 / s
                                         : std::max(std::abs(p.mu.data()[i]) / s, opt.min_omega);
                const double from_mu = opt.compound ? prev->alpha_mu.data()[i] : base_lr;
                const double from_rho = opt.compound ? prev->alpha_rho.data()[i] : base_lr;
                rates.alpha_mu.data()[i] = scaled && config.regularize_mu ? from_mu / omega : from_mu;
                rates.alpha_rho.data()[i] = scaled && config.regularize_rho ? from_rho / omega : from_rho;
            }
        }
    }
    return out;
}

/// Base rate everywhere except frozen parameters, which get 0.
inline PerParamLR masked_uniform_lr(const Network& net, double base_lr, const FreezeMap& freeze) {
    check_freeze_map(net, freeze);
    PerParamLR out = PerParamLR::uniform(net, base_lr);
    const auto offsets = layer_offsets(net);
    for (std::size_t k = 0; k < net.layer_count(); ++k) {
        std::size_t flat = offsets[k];
        for (auto* p : {&out.layers[k].weights, &out.layers[k].biases})
            for (Index i = 0; i < p->alpha_mu.size(); ++i, ++flat)
                if (freeze.is_frozen(flat)) p->alpha_mu.data()[i] = p->alpha_rho.data()[i] = 0.0;
    }
    return out;
}

// Pruning -------------------------------------------------------------------------

struct PruneReport {
    int task_id = 0;
    double chosen_ratio = 0.0;
    double pre_prune_accuracy = 0.0;
    double post_prune_accuracy = 0.0;
    std::vector<std::pair<double, double>> candidate_drops;  // (ratio, accuracy drop)
};

/// Within each listed layer, ranks the still-free parameters (weights and biases
/// together) by SNR. The top (1 - ratio) fraction is frozen at `task_id`; the rest
/// is released with mu = 0 and rho = `rho_init`. Ties rank by ascending index.
inline void prune_task(Network& net, int task_id, double ratio, FreezeMap& freeze, double rho_init,
                       const std::vector<std::size_t>& layers) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw InvalidArgument("prune ratio must lie in [0, 1]");
    if (task_id < 1) throw InvalidArgument("prune task id must be >= 1");
    check_freeze_map(net, freeze);
    const auto offsets = layer_offsets(net);
    for (std::size_t k : layers) {
        auto& layer = net.mutable_layer(k);
        const Index nw = layer.weights.size();
        const Matrix snr_w = snr_importance(layer.weights);
        const Matrix snr_b = snr_importance(layer.biases);
        auto snr_at = [&](Index i) { return i < nw ? snr_w.data()[i] : snr_b.data()[i - nw]; };

        std::vector<Index> free;
        for (Index i = 0; i < layer.size(); ++i)
            if (!freeze.is_frozen(offsets[k] + static_cast<std::size_t>(i))) free.push_back(i);
        std::stable_sort(free.begin(), free.end(), [&](Index a, Index b) { return snr_at(a) > snr_at(b); });

        const auto n_release = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(free.size())));
        const std::size_t n_keep = free.size() - n_release;
        for (std::size_t j = 0; j < free.size(); ++j) {
            const Index i = free[j];
            if (j < n_keep) {
                freeze.freeze(offsets[k] + static_cast<std::size_t>(i), static_cast<std::uint32_t>(task_id));
            } else {
                auto& gv = i < nw ? layer.weights : layer.biases;
                const Index local = i < nw ? i : i - nw;
                gv.mu.data()[local] = 0.0;
                gv.rho.data()[local] = rho_init;
            }
        }
    }
    freeze.task_count = std::max(freeze.task_count, static_cast<std::uint32_t>(task_id));
}

/// Largest candidate ratio whose accuracy drop is within `threshold` (percent); if
/// none qualifies, the candidate with the smallest drop.
inline double select_prune_ratio(std::span<const double> candidate_ratios, std::span<const double> drops,
                                 double threshold) {
    if (candidate_ratios.empty()) throw InvalidArgument("select_prune_ratio: no candidates");
    if (candidate_ratios.size() != drops.size()) throw InvalidArgument("select_prune_ratio: ratio/drop count mismatch");
    std::optional<double> best;
    for (std::size_t i = 0; i < drops.size(); ++i)
        if (drops[i] <= threshold && (!best || candidate_ratios[i] > *best)) best = candidate_ratios[i];
    if (best) return *best;
    std::size_t arg = 0;
    for (std::size_t i = 1; i < drops.size(); ++i)
        if (drops[i] < drops[arg]) arg = i;
    return candidate_ratios[arg];
}

/// Network plus keep masks: parameters frozen at tasks 1..task_id keep their value,
/// every other weight contributes exactly zero.
class MaskedNetwork {
public:
    MaskedNetwork(const Network& net, std::vector<LayerMask> masks) : net_(&net), masks_(std::move(masks)) {}
    NetworkView view() const { return NetworkView(*net_, masks_); }
    const std::vector<LayerMask>& masks() const { return masks_; }

private:
    const Network* net_;
    std::vector<LayerMask> masks_;
};

inline MaskedNetwork apply_inference_mask(const Network& net, const FreezeMap& freeze, int task_id) {
    check_freeze_map(net, freeze);
    if (task_id < 1 || static_cast<std::uint32_t>(task_id) > freeze.task_count)
        throw InvalidArgument("task " + std::to_string(task_id) + " has no recorded mask");
    std::vector<LayerMask> masks;
    std::size_t flat = 0;
    for (const auto& l : net.layers()) {
        LayerMask m{Matrix(l.fan_in(), l.fan_out()), Matrix(1, l.fan_out())};
        for (auto* block : {&m.weights, &m.biases})
            for (Index i = 0; i < block->size(); ++i, ++flat) {
                const auto t = freeze.frozen_at[flat];
                block->data()[i] = (t >= 1 && t <= static_cast<std::uint32_t>(task_id)) ? 1.0 : 0.0;
            }
        masks.push_back(std::move(m));
    }
    return MaskedNetwork(net, std::move(masks));
}

// Mask encoding -------------------------------------------------------------------

/// ceil(log2(task_count + 1)): enough bits for the values 0..task_count.
inline std::uint8_t mask_bits_per_entry(std::uint32_t task_count) {
    std::uint8_t bits = 0;
    while ((std::uint64_t{1} << bits) < std::uint64_t{task_count} + 1) ++bits;
    return bits;
}

inline constexpr std::uint32_t kMaskFormatVersion = 1;
inline constexpr std::size_t kMaskHeaderBytes = 4 + 4 + 4 + 8 + 1;
inline constexpr std::size_t kMaskTrailerBytes = 4;

/// Mask file: "UCBM", version u32, task_count u32, parameter count u64, bits u8,
/// LSB-first packed bitstream, CRC-32 of the bitstream. All little-endian.
inline Bytes encode_freeze_map(const FreezeMap& freeze) {
    const std::uint8_t bits = mask_bits_per_entry(freeze.task_count);
    const std::size_t n = freeze.size();
    Bytes stream((n * bits + 7) / 8, 0);
    std::size_t bit = 0;
    for (std::uint32_t v : freeze.frozen_at) {
        if (v > freeze.task_count)
            throw InvalidArgument("frozen_at value " + std::to_string(v) + " exceeds task count");
        for (std::uint8_t b = 0; b < bits; ++b, ++bit)
            if ((v >> b) & 1u) stream[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
    }
    ByteWriter w;
    w.magic("UCBM");
    w.u32(kMaskFormatVersion);
    w.u32(freeze.task_count);
    w.u64(n);
    w.u8(bits);
    w.raw(stream);
    w.u32(crc32(stream));
    return std::move(w).take();
}

inline FreezeMap decode_freeze_map(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    r.expect_magic("UCBM", "mask file");
    const auto version = r.u32("mask file");
    if (version != kMaskFormatVersion) throw FormatError("mask file: unsupported version " + std::to_string(version));
    FreezeMap f;
    f.task_count = r.u32("mask file");
    const auto n = r.u64("mask file");
    const auto bits = r.u8("mask file");
    if (bits != mask_bits_per_entry(f.task_count)) throw CorruptionError("mask file: bit width does not match task count");
    const std::size_t stream_bytes = static_cast<std::size_t>((n * bits + 7) / 8);
    const auto stream = r.raw(stream_bytes, "mask file");
    const auto stored_crc = r.u32("mask file");
    if (crc32(stream) != stored_crc) throw CorruptionError("mask file: checksum mismatch");
    f.frozen_at.assign(static_cast<std::size_t>(n), 0);
    std::size_t bit = 0;
    for (auto& v : f.frozen_at) {
        for (std::uint8_t b = 0; b < bits; ++b, ++bit)
            if ((stream[bit / 8] >> (bit % 8)) & 1u) v |= 1u << b;
        if (v > f.task_count) throw CorruptionError("mask file: entry exceeds task count");
    }
    return f;
}

}  // namespace ucb
