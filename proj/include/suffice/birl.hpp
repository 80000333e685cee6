#pragma once

// Bayesian IRL: adaptive random-walk Metropolis-Hastings over unit-norm
// reward weights with a uniform prior on the sphere.

#include "suffice/errors.hpp"
#include "suffice/mdp.hpp"
#include "suffice/rng.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <set>
#include <stdexcept>
#include <vector>

namespace suffice {

struct McmcConfig {
    std::size_t num_samples = 1000;
    std::size_t burn_in = 200;
    std::size_t skip = 5;
    double beta = 10.0;
    double initial_step = 0.1;
    double target_accept = 0.4;
    std::size_t adapt_window = 100; ///< proposals per step-size update
    std::size_t start_candidates = 64; ///< sphere draws screened for the starting point
    double tolerance = kDefaultTolerance;
    std::uint64_t seed = 0;

    std::size_t chain_length() const noexcept { return burn_in + skip * num_samples; }

    void validate() const {
        if (num_samples < 2) throw InvalidInput("num_samples", "need at least 2 samples");
        if (skip < 1) throw InvalidInput("skip", "must be positive");
        if (!(beta >= 0.0)) throw InvalidInput("beta", "must be non-negative");
        if (!(initial_step > 0.0)) throw InvalidInput("initial_step", "must be positive");
        if (!(target_accept > 0.0 && target_accept < 1.0)) throw InvalidInput("target_accept", "must lie in (0, 1)");
        if (adapt_window < 1) throw InvalidInput("adapt_window", "must be positive");
        if (start_candidates < 1) throw InvalidInput("start_candidates", "must be positive");
    }
};

struct PosteriorBatch {
    std::vector<RewardWeights> samples;
    /// Optimal state values under each retained sample, computed by the chain.
    std::vector<std::vector<double>> sample_values;
    std::vector<double> sample_log_likelihood;
    RewardWeights map_weights;
    double map_log_likelihood = -std::numeric_limits<double>::infinity();
    Policy map_policy;
    std::vector<double> map_values;
    double accept_rate = 0.0;
    double final_step = 0.0;
    std::size_t proposals = 0;

    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }
};

struct ChainTraceRow {
    std::size_t iteration;
    double log_posterior;
    double step;
    bool accepted;
};

/// Thrown when the proposal budget runs out before the requested sample count.
class BudgetExceeded : public std::runtime_error {
public:
    BudgetExceeded(const std::string& what, PosteriorBatch partial)
        : std::runtime_error(what), partial_(std::move(partial)) {}
    const PosteriorBatch& partial() const noexcept { return partial_; }

private:
    PosteriorBatch partial_;
};

/// sigma + sigma / sqrt(i + 1) * (r - r*): widens the proposal while the
/// acceptance rate is above target, narrows it below. Floored at 1e-6.
inline double adapt_step_size(double sigma, std::size_t i, double accept_rate, double target) {
    if (!(sigma > 0.0)) throw InvalidInput("sigma", "must be positive");
    const double delta = sigma / std::sqrt(static_cast<double>(i) + 1.0) * (accept_rate - target);
    return std::max(sigma + delta, 1e-6);
}

namespace detail {

struct ChainPoint {
    std::vector<double> w;
    std::vector<double> values;
    std::vector<std::size_t> actions;
    double log_likelihood = -std::numeric_limits<double>::infinity();
};

inline bool evaluate_point(const TabularMdp& mdp, const Demonstration& demos, const McmcConfig& cfg,
                           ChainPoint& p, std::span<const std::size_t> warm) {
    const auto r = mdp.rewards(p.w);
    auto sol = policy_iteration(mdp, r, warm);
    p.log_likelihood = demo_log_likelihood_from_q(mdp, demos, sol.q, cfg.beta);
    p.values = std::move(sol.value.values);
    p.actions = sol.policy.actions();
    return std::isfinite(p.log_likelihood);
}

} // namespace detail

/// Distinct pairs in first-seen order. A repeated pair restates evidence the
/// learner already has, so the likelihood counts it once.
inline Demonstration distinct_pairs(const Demonstration& demos) {
    Demonstration out;
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& sa : demos.pairs)
        if (seen.emplace(sa.state, sa.action).second) out.push_back(sa);
    return out;
}

/// Samples P(w | demos) with proposals w' = normalize(w + N(0, sigma^2 I)).
/// The prior is uniform on the sphere, so acceptance uses the likelihood
/// ratio alone, taken over the distinct pairs of `demos`. The MAP estimate is
/// the best point evaluated by the chain.
inline PosteriorBatch run_mcmc(const TabularMdp& mdp, const Demonstration& all_demos, const McmcConfig& cfg,
                               std::vector<ChainTraceRow>* trace = nullptr) {
    cfg.validate();
    if (all_demos.empty()) throw InvalidInput("demos", "need at least one demonstration");
    check_demonstration(mdp, all_demos);
    const Demonstration demos = distinct_pairs(all_demos);

    const std::size_t K = mdp.num_features();
    const std::size_t total = cfg.chain_length();
    const std::size_t budget = 50 * total;
    Rng rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    PosteriorBatch batch;
    batch.samples.reserve(cfg.num_samples);
    batch.sample_values.reserve(cfg.num_samples);
    batch.sample_log_likelihood.reserve(cfg.num_samples);

    detail::ChainPoint current, proposal, best;
    std::size_t proposals = 0;
    // Start from the most likely of several uniform draws so burn-in is spent
    // near the posterior mass rather than climbing out of a random corner.
    std::size_t screened = 0;
    while (screened < cfg.start_candidates && proposals < budget) {
        proposal.w = sample_unit_sphere(K, rng);
        ++proposals;
        if (!detail::evaluate_point(mdp, demos, cfg, proposal, current.actions)) continue;
        ++screened;
        if (current.w.empty() || proposal.log_likelihood > current.log_likelihood) std::swap(current, proposal);
    }
    if (current.w.empty()) {
        batch.proposals = proposals;
        batch.final_step = cfg.initial_step;
        throw BudgetExceeded("no starting point with finite likelihood", std::move(batch));
    }
    proposal.w.resize(K);
    best = current;

    double sigma = cfg.initial_step;
    std::size_t window_accepts = 0, window_count = 0, adaptations = 0, accepted_total = 0;
    std::size_t t = 0;
    while (t < total) {
        if (proposals >= budget) {
            batch.proposals = proposals;
            batch.final_step = sigma;
            batch.map_weights = RewardWeights(best.w);
            batch.map_log_likelihood = best.log_likelihood;
            throw BudgetExceeded("MCMC proposal budget exhausted", std::move(batch));
        }
        double norm = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            proposal.w[k] = current.w[k] + sigma * normal(rng);
            norm += proposal.w[k] * proposal.w[k];
        }
        norm = std::sqrt(norm);
        ++proposals;
        if (norm < 1e-12) continue;
        for (auto& x : proposal.w) x /= norm;
        if (!detail::evaluate_point(mdp, demos, cfg, proposal, current.actions)) continue;

        ++t;
        const double log_ratio = proposal.log_likelihood - current.log_likelihood;
        const bool accept = log_ratio >= 0.0 || std::log(unif(rng)) < log_ratio;
        if (proposal.log_likelihood > best.log_likelihood) best = proposal;
        if (accept) {
            std::swap(current, proposal);
            ++window_accepts;
            ++accepted_total;
        }
        if (trace) trace->push_back({t, current.log_likelihood, sigma, accept});

        if (++window_count == cfg.adapt_window) {
            const double rate = static_cast<double>(window_accepts) / static_cast<double>(window_count);
            sigma = adapt_step_size(sigma, adaptations++, rate, cfg.target_accept);
            window_accepts = window_count = 0;
        }

        if (t > cfg.burn_in && (t - cfg.burn_in) % cfg.skip == 0) {
            batch.samples.emplace_back(current.w);
            batch.sample_values.push_back(current.values);
            batch.sample_log_likelihood.push_back(current.log_likelihood);
        }
    }

    batch.map_weights = RewardWeights(best.w);
    batch.map_log_likelihood = best.log_likelihood;
    const auto map_solution = value_iteration(mdp, mdp.rewards(batch.map_weights.values()), cfg.tolerance);
    batch.map_policy = map_solution.policy;
    batch.map_values = map_solution.value.values;
    batch.accept_rate = static_cast<double>(accepted_total) / static_cast<double>(total);
    batch.final_step = sigma;
    batch.proposals = proposals;
    return batch;
}

/// Greedy policy under the MAP weights.
inline Policy map_policy(const PosteriorBatch& batch, const TabularMdp& mdp,
                         double tol = kDefaultTolerance) {
    if (batch.map_weights.size() == 0) throw InvalidInput("batch", "posterior batch is empty");
    return value_iteration(mdp, batch.map_weights, tol).policy;
}

inline void write_chain_trace(std::ostream& os, const std::vector<ChainTraceRow>& rows) {
    os << "iteration,log_posterior,step,accepted\n";
    os.precision(17);
    for (const auto& r : rows) os << r.iteration << ',' << r.log_posterior << ',' << r.step << ',' << (r.accepted ? 1 : 0) << '\n';
}

} // namespace suffice
