#pragma once

// The teaching loop: one demonstration per round, posterior refresh, and a
// stopping rule that decides when the learner has seen enough.

#include "suffice/birl.hpp"
#include "suffice/environments.hpp"
#include "suffice/errors.hpp"
#include "suffice/mdp.hpp"
#include "suffice/risk.hpp"
#include "suffice/rng.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace suffice {

enum class Condition { nevd, piob, convergence, validation };
enum class Selection { passive, active };
enum class StopReason { sufficient, exhausted, cap };

inline std::string to_string(Condition c) {
    switch (c) {
    case Condition::nevd: return "nevd";
    case Condition::piob: return "piob";
    case Condition::convergence: return "convergence";
    case Condition::validation: return "validation";
    }
    return "nevd";
}

inline Condition condition_from_string(const std::string& s) {
    if (s == "nevd") return Condition::nevd;
    if (s == "piob") return Condition::piob;
    if (s == "convergence") return Condition::convergence;
    if (s == "validation") return Condition::validation;
    throw InvalidInput("condition", "unknown condition '" + s + "'");
}

inline std::string to_string(Selection s) { return s == Selection::active ? "active" : "passive"; }

inline Selection selection_from_string(const std::string& s) {
    if (s == "passive") return Selection::passive;
    if (s == "active") return Selection::active;
    throw InvalidInput("selection", "unknown selection '" + s + "'");
}

inline std::string to_string(StopReason r) {
    switch (r) {
    case StopReason::sufficient: return "sufficient";
    case StopReason::exhausted: return "exhausted";
    case StopReason::cap: return "cap";
    }
    return "cap";
}

struct SufficiencyConfig {
    Condition condition = Condition::nevd;
    double epsilon = 0.3;
    std::size_t patience = 3;
    std::size_t interval = 5;
    RiskConfig risk;
    McmcConfig mcmc; ///< mcmc.seed is the session seed; each round derives its own
    Selection selection = Selection::passive;
    std::optional<std::size_t> max_demos; ///< defaults to the number of states

    void validate() const {
        risk.validate();
        mcmc.validate();
        if ((condition == Condition::nevd || condition == Condition::piob) && !(epsilon > 0.0))
            throw InvalidInput("epsilon", "must be positive");
        if (condition == Condition::convergence && patience < 1) throw InvalidInput("patience", "must be positive");
        if (condition == Condition::validation && interval < 2)
            throw InvalidInput("interval", "must be at least 2 so that some demos train the learner");
        if (max_demos && *max_demos < 1) throw InvalidInput("max_demos", "must be positive");
    }
};

struct Assessment {
    std::size_t round = 0; ///< demonstrations received so far, held-out ones included
    /// nEVD / PIOB: the risk bound. Convergence: rounds the MAP policy has been
    /// stable. Validation: fraction of held-out pairs matched. NaN if undefined.
    double bound = std::numeric_limits<double>::quiet_NaN();
    double threshold = 0.0;
    bool sufficient = false;
    std::size_t excluded_samples = 0;
    bool insufficient_samples = false;
    bool degenerate = false;
    Condition condition = Condition::nevd;

    bool operator==(const Assessment& o) const {
        const bool same_bound = (std::isnan(bound) && std::isnan(o.bound)) || bound == o.bound;
        return same_bound && round == o.round && threshold == o.threshold && sufficient == o.sufficient &&
               excluded_samples == o.excluded_samples && insufficient_samples == o.insufficient_samples &&
               degenerate == o.degenerate && condition == o.condition;
    }
};

/// One row of the session trace.
struct TraceRecord {
    Assessment assessment;
    StateAction demo;
    bool held_out = false;
    std::size_t unique_states = 0;
};

// ---------------------------------------------------------------------------
// Per-sample metrics over a posterior batch. Policy returns are linear in the
// weights through feature expectations, so each sample costs one dot product.

namespace detail {

/// Feature expectations weighted by the start distribution: the return of
/// `pi` under w is dot(start_features, w).
inline std::vector<double> start_features(const TabularMdp& mdp, const Policy& pi) {
    const auto psi = feature_expectations(mdp, pi);
    const std::size_t K = mdp.num_features();
    std::vector<double> out(K, 0.0);
    const auto& init = mdp.initial_dist();
    for (std::size_t s = 0; s < mdp.num_states(); ++s)
        for (std::size_t k = 0; k < K; ++k) out[k] += init[s] * psi[s * K + k];
    return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline void check_batch(const PosteriorBatch& batch) {
    if (batch.empty()) throw InvalidInput("batch", "posterior batch is empty");
    if (batch.sample_values.size() != batch.samples.size())
        throw InvalidInput("batch", "sample values missing from posterior batch");
}

inline Assessment finish_assessment(const MetricSamples& ms, Condition c, double eps, bool upper, const RiskConfig& risk) {
    Assessment a;
    a.condition = c;
    a.threshold = eps;
    a.excluded_samples = ms.excluded();
    if (ms.empty()) {
        a.degenerate = true;
        return a;
    }
    const VarBound b = upper ? var_confidence_bound(ms, risk) : piob_lower_bound(ms, risk);
    a.bound = b.value;
    a.insufficient_samples = b.insufficient_samples;
    a.sufficient = !b.insufficient_samples && (upper ? b.value <= eps : b.value >= eps);
    return a;
}

} // namespace detail

/// nEVD of `robot_pi` under every posterior sample; degenerate samples are excluded.
inline MetricSamples nevd_samples(const TabularMdp& mdp, const PosteriorBatch& batch, const Policy& robot_pi,
                                  double tau = 1e-8) {
    detail::check_batch(batch);
    const auto robot = detail::start_features(mdp, robot_pi);
    const auto rand = detail::start_features(mdp, uniform_random_policy(mdp));
    std::vector<double> xs;
    xs.reserve(batch.size());
    std::size_t excluded = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& w = batch.samples[i].values();
        const auto x = nevd_from_returns(expected_return(batch.sample_values[i], mdp), detail::dot(robot, w),
                                         detail::dot(rand, w), tau);
        if (x)
            xs.push_back(*x);
        else
            ++excluded;
    }
    return MetricSamples(std::move(xs), excluded);
}

inline MetricSamples piob_samples(const TabularMdp& mdp, const PosteriorBatch& batch, const Policy& robot_pi,
                                  const Policy& base_pi, double tau = 1e-8) {
    detail::check_batch(batch);
    const auto robot = detail::start_features(mdp, robot_pi);
    const auto base = detail::start_features(mdp, base_pi);
    std::vector<double> xs;
    xs.reserve(batch.size());
    std::size_t excluded = 0;
    for (const auto& w : batch.samples) {
        const auto x = piob_from_returns(detail::dot(robot, w.values()), detail::dot(base, w.values()), tau);
        if (x)
            xs.push_back(*x);
        else
            ++excluded;
    }
    return MetricSamples(std::move(xs), excluded);
}

inline Assessment assess_nevd(const TabularMdp& mdp, const Demonstration& demos, const PosteriorBatch& batch,
                              const SufficiencyConfig& cfg) {
    auto a = detail::finish_assessment(nevd_samples(mdp, batch, batch.map_policy, cfg.risk.degenerate_tolerance),
                                       Condition::nevd, cfg.epsilon, true, cfg.risk);
    a.round = demos.size();
    return a;
}

inline Assessment assess_piob(const TabularMdp& mdp, const Demonstration& demos, const PosteriorBatch& batch,
                              const Policy& base_pi, const SufficiencyConfig& cfg) {
    auto a = detail::finish_assessment(
        piob_samples(mdp, batch, batch.map_policy, base_pi, cfg.risk.degenerate_tolerance), Condition::piob,
        cfg.epsilon, false, cfg.risk);
    a.round = demos.size();
    return a;
}

/// Number of trailing rounds over which the action map has not changed.
inline std::size_t stable_rounds(const std::vector<std::vector<std::size_t>>& action_history) {
    if (action_history.empty()) return 0;
    std::size_t n = 0;
    for (std::size_t i = action_history.size() - 1; i > 0 && action_history[i - 1] == action_history.back(); --i) ++n;
    return n;
}

inline bool assess_convergence(const std::vector<std::vector<std::size_t>>& action_history, std::size_t p) {
    return p >= 1 && stable_rounds(action_history) >= p;
}

inline bool assess_convergence(const std::vector<Policy>& history, std::size_t p) {
    std::vector<std::vector<std::size_t>> actions;
    actions.reserve(history.size());
    for (const auto& pi : history) actions.push_back(pi.actions());
    return assess_convergence(actions, p);
}

inline std::size_t validation_matches(const Demonstration& held_out, const Policy& pi_map) {
    std::size_t m = 0;
    for (const auto& sa : held_out.pairs)
        if (pi_map.action(sa.state) == sa.action) ++m;
    return m;
}

inline bool assess_validation(const Demonstration& held_out, const Policy& pi_map) {
    return !held_out.empty() && validation_matches(held_out, pi_map) == held_out.size();
}

/// Per-state regret of π_MAP under each sample, scored by its VaR bound.
/// Returns scores for every state (NaN for excluded states).
inline std::vector<double> active_query_scores(const TabularMdp& mdp, const PosteriorBatch& batch,
                                               const RiskConfig& risk, const std::vector<bool>& excluded) {
    detail::check_batch(batch);
    const std::size_t S = mdp.num_states(), K = mdp.num_features();
    const auto psi = feature_expectations(mdp, batch.map_policy);
    std::vector<double> scores(S, std::numeric_limits<double>::quiet_NaN());
    std::vector<double> xs(batch.size());
    for (std::size_t s = 0; s < S; ++s) {
        if (s < excluded.size() && excluded[s]) continue;
        std::span<const double> row(psi.data() + s * K, K);
        for (std::size_t i = 0; i < batch.size(); ++i)
            xs[i] = batch.sample_values[i][s] - detail::dot(row, batch.samples[i].values());
        scores[s] = var_confidence_bound(MetricSamples(xs), risk).value;
    }
    return scores;
}

/// State with the highest regret bound among those not yet demonstrated,
/// lowest index on ties. Scores within `tie_tolerance` (relative, floored at
/// 1 in absolute terms) of each other count as tied, so that value-iteration
/// residue cannot decide the query. Throws StreamExhausted when every state
/// is taken.
inline std::size_t select_active_query(const TabularMdp& mdp, const PosteriorBatch& batch, const RiskConfig& risk,
                                       const std::vector<bool>& demonstrated = {}, double tie_tolerance = 1e-6) {
    const auto scores = active_query_scores(mdp, batch, risk, demonstrated);
    std::optional<std::size_t> best;
    for (std::size_t s = 0; s < scores.size(); ++s) {
        if (std::isnan(scores[s])) continue;
        if (!best || scores[s] > scores[*best] + tie_tolerance * std::max(1.0, std::abs(scores[*best]))) best = s;
    }
    if (!best) throw StreamExhausted("every state has already been demonstrated");
    return *best;
}

// ---------------------------------------------------------------------------
// Round-by-round learner state

struct RoundOutcome {
    Assessment assessment;
    bool held_out = false;
    bool posterior_refreshed = false;
};

/// Learner state for one teaching session. Each add_demo() call is one round:
/// record the pair, refresh the posterior on the training pairs (unless the
/// pair was held out for validation), and evaluate the stopping condition.
class LearnerSession {
public:
    LearnerSession(TabularMdp mdp, SufficiencyConfig cfg, std::optional<Policy> base_pi = std::nullopt)
        : mdp_(std::move(mdp)), cfg_(std::move(cfg)), base_pi_(std::move(base_pi)),
          demonstrated_(mdp_.num_states(), false) {
        cfg_.validate();
        if (cfg_.condition == Condition::piob) {
            if (!base_pi_) throw InvalidInput("base_policy", "PIOB condition needs a baseline policy");
            detail::check_policy(mdp_, *base_pi_);
        }
        if (!cfg_.max_demos) cfg_.max_demos = mdp_.num_states();
    }

    RoundOutcome add_demo(StateAction sa) {
        if (sa.state >= mdp_.num_states()) throw InvalidInput("state", "state index out of range");
        if (sa.action >= mdp_.num_actions()) throw InvalidInput("action", "action index out of range");
        if (at_cap()) throw Conflict("demonstration cap reached");

        all_.push_back(sa);
        if (!demonstrated_[sa.state]) {
            demonstrated_[sa.state] = true;
            ++unique_states_;
        }
        const std::size_t round = all_.size();
        RoundOutcome out;
        out.held_out = cfg_.condition == Condition::validation && round % cfg_.interval == 0;
        if (out.held_out) {
            held_out_.push_back(sa);
        } else {
            training_.push_back(sa);
            McmcConfig mc = cfg_.mcmc;
            mc.seed = derive_seed(cfg_.mcmc.seed, round);
            batch_ = std::make_shared<const PosteriorBatch>(run_mcmc(mdp_, training_, mc));
            action_history_.push_back(batch_->map_policy.actions());
            out.posterior_refreshed = true;
        }
        out.assessment = evaluate(round);
        assessments_.push_back(out.assessment);
        trace_.push_back({out.assessment, sa, out.held_out, unique_states_});
        return out;
    }

    /// State to ask about next in active mode; nullopt before the first posterior.
    std::optional<std::size_t> active_query() const {
        if (!batch_) return std::nullopt;
        return select_active_query(mdp_, *batch_, cfg_.risk, demonstrated_);
    }

    bool at_cap() const noexcept { return all_.size() >= *cfg_.max_demos; }
    bool sufficient() const noexcept { return !assessments_.empty() && assessments_.back().sufficient; }

    const TabularMdp& mdp() const noexcept { return mdp_; }
    const SufficiencyConfig& config() const noexcept { return cfg_; }
    const std::optional<Policy>& base_policy() const noexcept { return base_pi_; }
    const Demonstration& demos() const noexcept { return all_; }
    const Demonstration& training_demos() const noexcept { return training_; }
    const Demonstration& held_out() const noexcept { return held_out_; }
    const std::vector<Assessment>& assessments() const noexcept { return assessments_; }
    const std::vector<TraceRecord>& trace() const noexcept { return trace_; }
    const std::vector<std::vector<std::size_t>>& action_history() const noexcept { return action_history_; }
    std::shared_ptr<const PosteriorBatch> batch() const noexcept { return batch_; }
    std::size_t unique_states() const noexcept { return unique_states_; }
    const std::vector<bool>& demonstrated() const noexcept { return demonstrated_; }

private:
    Assessment evaluate(std::size_t round) const {
        Assessment a;
        switch (cfg_.condition) {
        case Condition::nevd:
            a = assess_nevd(mdp_, training_, *batch_, cfg_);
            break;
        case Condition::piob:
            a = assess_piob(mdp_, training_, *batch_, *base_pi_, cfg_);
            break;
        case Condition::convergence:
            a.condition = Condition::convergence;
            a.threshold = static_cast<double>(cfg_.patience);
            a.bound = static_cast<double>(stable_rounds(action_history_));
            a.sufficient = assess_convergence(action_history_, cfg_.patience);
            break;
        case Condition::validation:
            a.condition = Condition::validation;
            a.threshold = 1.0;
            if (!held_out_.empty() && batch_)
                a.bound = static_cast<double>(validation_matches(held_out_, batch_->map_policy)) /
                          static_cast<double>(held_out_.size());
            a.sufficient = batch_ && assess_validation(held_out_, batch_->map_policy);
            break;
        }
        a.round = round;
        return a;
    }

    TabularMdp mdp_;
    SufficiencyConfig cfg_;
    std::optional<Policy> base_pi_;
    Demonstration all_, training_, held_out_;
    std::vector<bool> demonstrated_;
    std::size_t unique_states_ = 0;
    std::shared_ptr<const PosteriorBatch> batch_;
    std::vector<std::vector<std::size_t>> action_history_;
    std::vector<Assessment> assessments_;
    std::vector<TraceRecord> trace_;
};

/// Next demonstration for the session: a query at the highest-risk state in
/// active mode once a posterior exists, otherwise the source's own order.
/// nullopt when the source (or the set of unqueried states) is exhausted.
inline std::optional<StateAction> obtain_demo(const LearnerSession& session, DemoSource& source) {
    if (session.config().selection == Selection::active) {
        try {
            if (auto s = session.active_query()) return source.query(*s);
        } catch (const StreamExhausted&) {
            return std::nullopt;
        }
    }
    return source.next();
}

struct SessionResult {
    std::size_t demos_used = 0;
    std::size_t unique_states = 0;
    std::vector<Assessment> assessments;
    std::vector<TraceRecord> trace;
    Policy final_policy;
    RewardWeights map_weights;
    double map_log_likelihood = -std::numeric_limits<double>::infinity();
    double accept_rate = 0.0;
    StopReason stop_reason = StopReason::cap;
    Demonstration demos;
    Demonstration held_out;
};

inline SessionResult summarize(const LearnerSession& session, StopReason reason) {
    SessionResult r;
    r.demos_used = session.demos().size();
    r.unique_states = session.unique_states();
    r.assessments = session.assessments();
    r.trace = session.trace();
    if (auto b = session.batch()) {
        r.final_policy = b->map_policy;
        r.map_weights = b->map_weights;
        r.map_log_likelihood = b->map_log_likelihood;
        r.accept_rate = b->accept_rate;
    }
    r.stop_reason = reason;
    r.demos = session.demos();
    r.held_out = session.held_out();
    return r;
}

inline SessionResult teaching_loop(const TabularMdp& mdp, DemoSource& source, const SufficiencyConfig& cfg,
                                   std::optional<Policy> base_pi = std::nullopt) {
    LearnerSession session(mdp, cfg, std::move(base_pi));
    while (!session.at_cap()) {
        const auto demo = obtain_demo(session, source);
        if (!demo) return summarize(session, StopReason::exhausted);
        if (session.add_demo(*demo).assessment.sufficient) return summarize(session, StopReason::sufficient);
    }
    return summarize(session, StopReason::cap);
}

} // namespace suffice
