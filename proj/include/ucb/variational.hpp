#pragma once

// Gaussian variational posterior, scale-mixture prior and the Monte-Carlo
// evidence-lower-bound terms built from them. Everything here is a pure
// function of its arguments.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>

#include <Eigen/Dense>
#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>

#include "ucb/errors.hpp"

namespace ucb {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

/// Every numerical path draws from this engine; seeds come from configuration only.
/// MT19937-64; the standard library algorithms need constexpr bounds, which the
/// Boost engine does not declare.
struct Rng : boost::random::mt19937_64 {
    using boost::random::mt19937_64::mt19937_64;
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }
};

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)

/// Overwrites `out` with independent standard normal draws in row-major order.
inline void fill_standard_normal(Matrix& out, Rng& rng) {
    boost::random::normal_distribution<double> normal(0.0, 1.0);
    double* data = out.data();
    for (Index i = 0, n = out.size(); i < n; ++i) data[i] = normal(rng);
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(what) + ": shape " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                             std::to_string(b.cols()));
    }
}

// softplus ---------------------------------------------------------------

/// log(1 + exp(rho)) without overflow. Never returns 0 for finite input.
inline double softplus(double rho) {
    if (!std::isfinite(rho)) throw InvalidArgument("softplus of non-finite rho");
    if (rho > 20.0) return rho + std::log1p(std::exp(-rho));
    const double s = std::log1p(std::exp(rho));
    return s > 0.0 ? s : std::numeric_limits<double>::denorm_min();
}

/// d softplus / d rho.
inline double sigmoid(double rho) {
    if (rho >= 0.0) return 1.0 / (1.0 + std::exp(-rho));
    const double e = std::exp(rho);
    return e / (1.0 + e);
}

inline Matrix softplus_sigma(const Matrix& rho) {
    Matrix sigma(rho.rows(), rho.cols());
    const double* in = rho.data();
    double* out = sigma.data();
    for (Index i = 0, n = rho.size(); i < n; ++i) out[i] = softplus(in[i]);
    return sigma;
}

// Posterior and prior ----------------------------------------------------

/// Diagonal Gaussian q(w | mu, rho) with sigma = softplus(rho).
struct GaussianVariational {
    Matrix mu;
    Matrix rho;

    GaussianVariational() = default;
    GaussianVariational(Matrix mu_in, Matrix rho_in) : mu(std::move(mu_in)), rho(std::move(rho_in)) {
        require_same_shape(mu, rho, "GaussianVariational mu/rho");
    }
    GaussianVariational(Index rows, Index cols, double mu_value, double rho_value)
        : mu(Matrix::Constant(rows, cols, mu_value)), rho(Matrix::Constant(rows, cols, rho_value)) {}

    Index rows() const { return mu.rows(); }
    Index cols() const { return mu.cols(); }
    Index size() const { return mu.size(); }
    Matrix sigma() const { return softplus_sigma(rho); }

    friend bool operator==(const GaussianVariational& a, const GaussianVariational& b) {
        return a.mu.rows() == b.mu.rows() && a.mu.cols() == b.mu.cols() && a.mu == b.mu && a.rho == b.rho;
    }
};

/// pi * N(0, sigma1^2) + (1 - pi) * N(0, sigma2^2).
struct ScaleMixturePrior {
    double pi = 0.5;
    double sigma1 = 1.0;
    double sigma2 = std::exp(-6.0);

    void validate() const {
        if (!(pi >= 0.0 && pi <= 1.0)) throw InvalidArgument("prior pi must lie in [0, 1]");
        if (!(sigma1 > 0.0) || !(sigma2 > 0.0)) throw InvalidArgument("prior sigmas must be positive");
    }

    /// Builds the prior from the -ln(sigma) parameterisation used by hyperparameter grids.
    static ScaleMixturePrior from_neg_log(double pi, double neg_log_sigma1, double neg_log_sigma2) {
        ScaleMixturePrior p{pi, std::exp(-neg_log_sigma1), std::exp(-neg_log_sigma2)};
        p.validate();
        return p;
    }

    friend bool operator==(const ScaleMixturePrior&, const ScaleMixturePrior&) = default;
};

inline double gaussian_log_pdf(double w, double mean, double sigma) {
    const double z = (w - mean) / sigma;
    return -kLogSqrt2Pi - std::log(sigma) - 0.5 * z * z;
}

inline double log_sum_exp(double a, double b) {
    const double hi = std::max(a, b);
    if (hi == -std::numeric_limits<double>::infinity()) return hi;
    return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

/// Log density of the mixture prior and its derivative with respect to w.
struct MixtureEval {
    double log_pdf;
    double d_log_pdf;
};

inline MixtureEval mixture_log_pdf(double w, const ScaleMixturePrior& prior) {
    const double a = std::log(prior.pi) + gaussian_log_pdf(w, 0.0, prior.sigma1);
    const double b = std::log1p(-prior.pi) + gaussian_log_pdf(w, 0.0, prior.sigma2);
    const double lse = log_sum_exp(a, b);
    // responsibilities of the two components, computed in log space
    const double r1 = std::exp(a - lse);
    const double r2 = std::exp(b - lse);
    const double grad = -w * (r1 / (prior.sigma1 * prior.sigma1) + r2 / (prior.sigma2 * prior.sigma2));
    return {lse, grad};
}

/// One reparameterised draw w = mu + sigma * eps; eps is kept for the backward pass.
struct WeightSample {
    Matrix w;
    Matrix eps;
};

inline WeightSample sample_weights(const GaussianVariational& params, const Matrix& eps) {
    require_same_shape(params.mu, eps, "sample_weights eps");
    WeightSample s{Matrix(params.rows(), params.cols()), eps};
    const double* mu = params.mu.data();
    const double* rho = params.rho.data();
    const double* e = eps.data();
    double* w = s.w.data();
    for (Index i = 0, n = params.size(); i < n; ++i) w[i] = mu[i] + softplus(rho[i]) * e[i];
    return s;
}

inline WeightSample sample_weights(const GaussianVariational& params, Rng& rng) {
    Matrix eps(params.rows(), params.cols());
    fill_standard_normal(eps, rng);
    return sample_weights(params, eps);
}

/// l1 contribution: sum_i log N(w_i | mu_i, sigma_i^2).
inline double log_posterior(const WeightSample& sample, const GaussianVariational& params) {
    require_same_shape(sample.w, params.mu, "log_posterior");
    const double* w = sample.w.data();
    const double* mu = params.mu.data();
    const double* rho = params.rho.data();
    double total = 0.0;
    for (Index i = 0, n = params.size(); i < n; ++i) total += gaussian_log_pdf(w[i], mu[i], softplus(rho[i]));
    return total;
}

inline double log_posterior(std::span<const WeightSample> samples, const GaussianVariational& params) {
    double total = 0.0;
    for (const auto& s : samples) total += log_posterior(s, params);
    return total;
}

/// l2 contribution: sum_i log(pi N(w_i|0,s1^2) + (1-pi) N(w_i|0,s2^2)).
inline double log_prior_mixture(const WeightSample& sample, const ScaleMixturePrior& prior) {
    prior.validate();
    const double* w = sample.w.data();
    double total = 0.0;
    for (Index i = 0, n = sample.w.size(); i < n; ++i) total += mixture_log_pdf(w[i], prior).log_pdf;
    return total;
}

inline double log_prior_mixture(std::span<const WeightSample> samples, const ScaleMixturePrior& prior) {
    double total = 0.0;
    for (const auto& s : samples) total += log_prior_mixture(s, prior);
    return total;
}

/// The three Monte-Carlo sums of one minibatch plus the normalising counts.
struct ElboTerms {
    double l1 = 0.0;  // log-posterior
    double l2 = 0.0;  // log-prior
    double l3 = 0.0;  // log-likelihood
    std::int64_t minibatches = 1;
    std::int64_t samples = 1;
};

/// (l1 - l2 - l3) / M. Every term is divided by M, data term included.
inline double elbo_loss(const ElboTerms& t) {
    if (t.minibatches < 1) throw InvalidArgument("elbo_loss: minibatch count must be >= 1");
    return (t.l1 - t.l2 - t.l3) / static_cast<double>(t.minibatches);
}

}  // namespace ucb
