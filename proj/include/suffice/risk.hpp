#pragma once

// Regret / improvement metrics and finite-sample value-at-risk bounds built
// from order statistics.

#include "suffice/errors.hpp"
#include "suffice/mdp.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace suffice {

enum class IndexMethod {
    automatic,       ///< exact for n < 1000, Gaussian approximation otherwise
    exact_binomial,
    gaussian_approx,
};

struct RiskConfig {
    double alpha = 0.95;
    double delta = 0.05;
    IndexMethod index_method = IndexMethod::automatic;
    double degenerate_tolerance = 1e-8;

    void validate() const {
        if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("alpha", "must lie in (0, 1)");
        if (!(delta > 0.0 && delta < 0.5)) throw InvalidInput("delta", "must lie in (0, 0.5)");
        if (!(degenerate_tolerance > 0.0)) throw InvalidInput("degenerate_tolerance", "must be positive");
    }
};

/// Metric values, one per posterior sample. Non-finite values are dropped
/// and counted in excluded().
class MetricSamples {
public:
    MetricSamples() = default;

    explicit MetricSamples(std::vector<double> values, std::size_t already_excluded = 0)
        : excluded_(already_excluded) {
        values_.reserve(values.size());
        for (double x : values) {
            if (std::isfinite(x))
                values_.push_back(x);
            else
                ++excluded_;
        }
        sorted_ = values_;
        std::sort(sorted_.begin(), sorted_.end());
    }

    const std::vector<double>& values() const noexcept { return values_; }
    const std::vector<double>& sorted() const noexcept { return sorted_; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }
    std::size_t excluded() const noexcept { return excluded_; }

    /// 1-based order statistic Z_j.
    double order_statistic(std::size_t j) const { return sorted_.at(j - 1); }

    MetricSamples negated() const {
        std::vector<double> neg(values_.size());
        std::transform(values_.begin(), values_.end(), neg.begin(), [](double x) { return -x; });
        return MetricSamples(std::move(neg), excluded_);
    }

private:
    std::vector<double> values_;
    std::vector<double> sorted_;
    std::size_t excluded_ = 0;
};

// ---------------------------------------------------------------------------
// Order statistics

namespace detail {

/// ceil() that ignores representation noise such as 0.95 * 100 = 95.00000000000001.
inline std::size_t robust_ceil(double x) {
    const double r = std::round(x);
    if (std::abs(x - r) < 1e-9 * std::max(1.0, std::abs(x))) return static_cast<std::size_t>(std::max(r, 0.0));
    return static_cast<std::size_t>(std::max(std::ceil(x), 0.0));
}

} // namespace detail

/// P(X <= k) for X ~ Binomial(n, p), summed in log space.
inline double binomial_cdf(std::size_t k, std::size_t n, double p) {
    if (k >= n) return 1.0;
    if (p <= 0.0) return 1.0;
    if (p >= 1.0) return 0.0;
    const double ln = std::lgamma(static_cast<double>(n) + 1.0);
    const double lp = std::log(p), lq = std::log1p(-p);
    double sum = 0.0;
    for (std::size_t i = 0; i <= k; ++i) {
        const double di = static_cast<double>(i);
        const double lpmf = ln - std::lgamma(di + 1.0) - std::lgamma(static_cast<double>(n - i) + 1.0) + di * lp +
                            static_cast<double>(n - i) * lq;
        sum += std::exp(lpmf);
    }
    return std::min(sum, 1.0);
}

/// Point estimate index k = ceil(alpha * n), 1-based, clamped to [1, n].
inline std::size_t var_point_index(std::size_t n, double alpha) {
    return std::clamp<std::size_t>(detail::robust_ceil(alpha * static_cast<double>(n)), 1, n);
}

/// Smallest 1-based j with P(v_alpha < Z_j) = F(j - 1; n, alpha) >= 1 - delta.
/// Returns n + 1 when no order statistic qualifies.
inline std::size_t exact_confidence_index(std::size_t n, double alpha, double delta) {
    if (alpha <= 0.0) return 1;
    if (alpha >= 1.0) return n + 1;
    // Accumulate the pmf term by term rather than calling binomial_cdf per j.
    const double ln = std::lgamma(static_cast<double>(n) + 1.0);
    const double lp = std::log(alpha), lq = std::log1p(-alpha);
    double cdf = 0.0;
    for (std::size_t j = 1; j <= n; ++j) {
        const double i = static_cast<double>(j - 1);
        const double rest = static_cast<double>(n) - i;
        cdf += std::exp(ln - std::lgamma(i + 1.0) - std::lgamma(rest + 1.0) + i * lp + rest * lq);
        if (std::min(cdf, 1.0) >= 1.0 - delta) return j;
    }
    return n + 1;
}

/// ceil(n alpha + z_{1-delta} sqrt(n alpha (1 - alpha)) - 1/2).
inline std::size_t gaussian_confidence_index(std::size_t n, double alpha, double delta) {
    const double z = boost::math::quantile(boost::math::normal(), 1.0 - delta);
    const double nd = static_cast<double>(n);
    return detail::robust_ceil(nd * alpha + z * std::sqrt(nd * alpha * (1.0 - alpha)) - 0.5);
}

inline std::size_t confidence_index(std::size_t n, double alpha, double delta, IndexMethod method) {
    if (method == IndexMethod::automatic)
        method = n < 1000 ? IndexMethod::exact_binomial : IndexMethod::gaussian_approx;
    return method == IndexMethod::exact_binomial ? exact_confidence_index(n, alpha, delta)
                                                 : gaussian_confidence_index(n, alpha, delta);
}

struct VarBound {
    double value = 0.0;
    std::size_t index = 0;             ///< 1-based order statistic actually used
    bool insufficient_samples = false; ///< requested index exceeded n; value is Z_n
};

inline double var_point_estimate(const MetricSamples& ms, double alpha) {
    if (ms.empty()) throw InvalidInput("samples", "need at least one sample");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("alpha", "must lie in (0, 1)");
    return ms.order_statistic(var_point_index(ms.size(), alpha));
}

/// High-confidence upper bound on the alpha-VaR.
inline VarBound var_confidence_bound(const MetricSamples& ms, const RiskConfig& cfg) {
    cfg.validate();
    if (ms.empty()) throw InvalidInput("samples", "need at least one sample");
    const std::size_t n = ms.size();
    const std::size_t j = std::max<std::size_t>(confidence_index(n, cfg.alpha, cfg.delta, cfg.index_method), 1);
    if (j > n) return {ms.order_statistic(n), n, true};
    return {ms.order_statistic(j), j, false};
}

/// High-confidence lower bound on the (1 - alpha)-worst-case value, via the
/// upper bound on the negated samples.
inline VarBound piob_lower_bound(const MetricSamples& ms, const RiskConfig& cfg) {
    auto b = var_confidence_bound(ms.negated(), cfg);
    b.value = -b.value;
    b.index = ms.size() + 1 - b.index;
    return b;
}

// ---------------------------------------------------------------------------
// Metrics

/// (V* - V^robot) / (V* - V^rand) from expected returns. nullopt when the
/// normalizer vanishes but the robot is measurably suboptimal.
inline std::optional<double> nevd_from_returns(double optimal, double robot, double random, double tau) {
    const double num = optimal - robot;
    const double den = optimal - random;
    if (den < tau) {
        if (num < tau) return 0.0;
        return std::nullopt;
    }
    return num / den;
}

/// (V^robot - V^base) / |V^base|. nullopt when |V^base| is below tau.
inline std::optional<double> piob_from_returns(double robot, double base, double tau) {
    if (std::abs(base) < tau) return std::nullopt;
    return (robot - base) / std::abs(base);
}

inline std::optional<double> nevd(const TabularMdp& mdp, const Policy& robot_pi, std::span<const double> rewards,
                                  const RiskConfig& cfg = {}) {
    const auto opt = value_iteration(mdp, rewards);
    const double v_opt = expected_return(opt.value, mdp);
    const double v_robot = expected_return(policy_evaluation(mdp, robot_pi, rewards), mdp);
    const double v_rand = expected_return(policy_evaluation(mdp, uniform_random_policy(mdp), rewards), mdp);
    return nevd_from_returns(v_opt, v_robot, v_rand, cfg.degenerate_tolerance);
}

inline std::optional<double> nevd(const TabularMdp& mdp, const Policy& robot_pi, const RewardWeights& rw,
                                  const RiskConfig& cfg = {}) {
    return nevd(mdp, robot_pi, mdp.rewards(rw.values()), cfg);
}

/// Unnormalized per-state regret V*(s) - V^robot(s).
inline std::vector<double> evd_per_state(const TabularMdp& mdp, const Policy& robot_pi,
                                         std::span<const double> rewards) {
    const auto opt = value_iteration(mdp, rewards);
    const auto robot = policy_evaluation(mdp, robot_pi, rewards);
    std::vector<double> out(mdp.num_states());
    for (std::size_t s = 0; s < out.size(); ++s) out[s] = opt.value[s] - robot[s];
    return out;
}

inline std::vector<double> evd_per_state(const TabularMdp& mdp, const Policy& robot_pi, const RewardWeights& rw) {
    return evd_per_state(mdp, robot_pi, mdp.rewards(rw.values()));
}

inline std::optional<double> piob(const TabularMdp& mdp, const Policy& robot_pi, const Policy& base_pi,
                                  std::span<const double> rewards, const RiskConfig& cfg = {}) {
    const double v_robot = expected_return(policy_evaluation(mdp, robot_pi, rewards), mdp);
    const double v_base = expected_return(policy_evaluation(mdp, base_pi, rewards), mdp);
    return piob_from_returns(v_robot, v_base, cfg.degenerate_tolerance);
}

inline std::optional<double> piob(const TabularMdp& mdp, const Policy& robot_pi, const Policy& base_pi,
                                  const RewardWeights& rw, const RiskConfig& cfg = {}) {
    return piob(mdp, robot_pi, base_pi, mdp.rewards(rw.values()), cfg);
}

} // namespace suffice
