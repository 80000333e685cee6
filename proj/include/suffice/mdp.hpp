#pragma once

// Tabular MDPs with linear state rewards, dynamic programming, and the
// Boltzmann-rational demonstration likelihood.

#include "suffice/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace suffice {

inline constexpr double kDefaultTolerance = 1e-6;

struct TransitionTriple {
    std::size_t state;
    std::size_t action;
    std::size_t next;
    double prob;
};

struct Transition {
    std::size_t next;
    double prob;
};

struct StateAction {
    std::size_t state;
    std::size_t action;

    friend bool operator==(const StateAction&, const StateAction&) = default;
};

/// Ordered (state, action) pairs. Repeats are allowed.
struct Demonstration {
    std::vector<StateAction> pairs;

    std::size_t size() const noexcept { return pairs.size(); }
    bool empty() const noexcept { return pairs.empty(); }
    void push_back(StateAction sa) { pairs.push_back(sa); }

    friend bool operator==(const Demonstration&, const Demonstration&) = default;
};

/// Finite MDP with state features. Transitions are stored sparsely, one
/// contiguous run per (state, action). Immutable after construction.
class TabularMdp {
public:
    TabularMdp() = default;

    TabularMdp(std::size_t num_states, std::size_t num_actions,
               const std::vector<TransitionTriple>& triples,
               std::vector<std::vector<double>> features, double discount,
               std::vector<double> initial_dist, std::vector<std::size_t> terminal_states = {})
        : num_states_(num_states), num_actions_(num_actions), discount_(discount),
          initial_dist_(std::move(initial_dist)), terminal_states_(std::move(terminal_states)) {
        if (num_states == 0) throw InvalidInput("num_states", "must be positive");
        if (num_actions == 0) throw InvalidInput("num_actions", "must be positive");
        if (!(discount >= 0.0 && discount < 1.0)) throw InvalidInput("discount", "must lie in [0, 1)");
        build_transitions(triples);
        build_features(std::move(features));
        validate_initial();
        validate_terminals();
    }

    std::size_t num_states() const noexcept { return num_states_; }
    std::size_t num_actions() const noexcept { return num_actions_; }
    std::size_t num_features() const noexcept { return num_features_; }
    double discount() const noexcept { return discount_; }
    const std::vector<double>& initial_dist() const noexcept { return initial_dist_; }
    const std::vector<std::size_t>& terminal_states() const noexcept { return terminal_states_; }

    bool is_terminal(std::size_t s) const noexcept {
        return std::find(terminal_states_.begin(), terminal_states_.end(), s) != terminal_states_.end();
    }

    std::span<const Transition> transitions(std::size_t s, std::size_t a) const noexcept {
        const std::size_t idx = s * num_actions_ + a;
        return {entries_.data() + offsets_[idx], offsets_[idx + 1] - offsets_[idx]};
    }

    double transition_prob(std::size_t s, std::size_t a, std::size_t next) const noexcept {
        for (const auto& t : transitions(s, a))
            if (t.next == next) return t.prob;
        return 0.0;
    }

    std::span<const double> feature(std::size_t s) const noexcept {
        return {features_.data() + s * num_features_, num_features_};
    }

    /// All (s, a, s', p) entries with p > 0, ordered by (s, a, s').
    std::vector<TransitionTriple> triples() const {
        std::vector<TransitionTriple> out;
        out.reserve(entries_.size());
        for (std::size_t s = 0; s < num_states_; ++s)
            for (std::size_t a = 0; a < num_actions_; ++a)
                for (const auto& t : transitions(s, a)) out.push_back({s, a, t.next, t.prob});
        return out;
    }

    std::vector<std::vector<double>> feature_rows() const {
        std::vector<std::vector<double>> rows(num_states_);
        for (std::size_t s = 0; s < num_states_; ++s) {
            auto f = feature(s);
            rows[s].assign(f.begin(), f.end());
        }
        return rows;
    }

    /// Per-state reward R(s) = w . phi(s).
    std::vector<double> rewards(std::span<const double> weights) const {
        if (weights.size() != num_features_)
            throw InvalidInput("weights", "dimension " + std::to_string(weights.size()) +
                                              " does not match feature dimension " +
                                              std::to_string(num_features_));
        std::vector<double> r(num_states_, 0.0);
        for (std::size_t s = 0; s < num_states_; ++s) {
            const double* f = features_.data() + s * num_features_;
            double acc = 0.0;
            for (std::size_t k = 0; k < num_features_; ++k) acc += f[k] * weights[k];
            r[s] = acc;
        }
        return r;
    }

    friend bool operator==(const TabularMdp& a, const TabularMdp& b) {
        return a.num_states_ == b.num_states_ && a.num_actions_ == b.num_actions_ &&
               a.num_features_ == b.num_features_ && a.discount_ == b.discount_ &&
               a.initial_dist_ == b.initial_dist_ && a.terminal_states_ == b.terminal_states_ &&
               a.offsets_ == b.offsets_ && a.features_ == b.features_ &&
               std::equal(a.entries_.begin(), a.entries_.end(), b.entries_.begin(), b.entries_.end(),
                          [](const Transition& x, const Transition& y) {
                              return x.next == y.next && x.prob == y.prob;
                          });
    }

private:
    void build_transitions(const std::vector<TransitionTriple>& triples) {
        const std::size_t rows = num_states_ * num_actions_;
        std::vector<std::vector<Transition>> dense(rows);
        for (const auto& t : triples) {
            if (t.state >= num_states_ || t.next >= num_states_ || t.action >= num_actions_)
                throw InvalidInput("transitions", "index out of range");
            if (!(t.prob >= 0.0) || !std::isfinite(t.prob))
                throw InvalidInput("transitions", "probabilities must be finite and non-negative");
            if (t.prob == 0.0) continue;
            auto& row = dense[t.state * num_actions_ + t.action];
            auto it = std::find_if(row.begin(), row.end(), [&](const Transition& x) { return x.next == t.next; });
            if (it != row.end())
                it->prob += t.prob;
            else
                row.push_back({t.next, t.prob});
        }
        offsets_.assign(rows + 1, 0);
        entries_.clear();
        for (std::size_t idx = 0; idx < rows; ++idx) {
            auto& row = dense[idx];
            std::sort(row.begin(), row.end(), [](const Transition& x, const Transition& y) { return x.next < y.next; });
            double sum = 0.0;
            for (const auto& t : row) sum += t.prob;
            if (std::abs(sum - 1.0) > 1e-9)
                throw InvalidInput("transitions", "row (" + std::to_string(idx / num_actions_) + ", " +
                                                      std::to_string(idx % num_actions_) + ") sums to " +
                                                      std::to_string(sum));
            entries_.insert(entries_.end(), row.begin(), row.end());
            offsets_[idx + 1] = entries_.size();
        }
    }

    void build_features(std::vector<std::vector<double>> rows) {
        if (rows.size() != num_states_) throw InvalidInput("features", "need one row per state");
        num_features_ = rows.front().size();
        if (num_features_ == 0) throw InvalidInput("features", "feature dimension must be positive");
        features_.reserve(num_states_ * num_features_);
        for (const auto& row : rows) {
            if (row.size() != num_features_) throw InvalidInput("features", "ragged feature matrix");
            for (double x : row)
                if (!std::isfinite(x)) throw InvalidInput("features", "non-finite entry");
            features_.insert(features_.end(), row.begin(), row.end());
        }
    }

    void validate_initial() {
        if (initial_dist_.size() != num_states_) throw InvalidInput("initial_dist", "need one entry per state");
        double sum = 0.0;
        for (double p : initial_dist_) {
            if (!(p >= 0.0)) throw InvalidInput("initial_dist", "entries must be non-negative");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("initial_dist", "must sum to 1");
    }

    void validate_terminals() {
        std::sort(terminal_states_.begin(), terminal_states_.end());
        terminal_states_.erase(std::unique(terminal_states_.begin(), terminal_states_.end()), terminal_states_.end());
        for (std::size_t s : terminal_states_) {
            if (s >= num_states_) throw InvalidInput("terminal_states", "index out of range");
            for (std::size_t a = 0; a < num_actions_; ++a)
                if (std::abs(transition_prob(s, a, s) - 1.0) > 1e-9)
                    throw InvalidInput("terminal_states", "terminal state " + std::to_string(s) +
                                                              " must self-loop under every action");
        }
    }

    std::size_t num_states_ = 0;
    std::size_t num_actions_ = 0;
    std::size_t num_features_ = 0;
    double discount_ = 0.0;
    std::vector<double> initial_dist_;
    std::vector<std::size_t> terminal_states_;
    std::vector<std::size_t> offsets_;
    std::vector<Transition> entries_;
    std::vector<double> features_;
};

/// Unit-norm feature weights.
class RewardWeights {
public:
    RewardWeights() = default;

    /// Normalizes `w` to unit L2 norm.
    explicit RewardWeights(std::vector<double> w) : w_(std::move(w)) {
        if (w_.empty()) throw InvalidInput("weights", "empty weight vector");
        double norm = 0.0;
        for (double x : w_) {
            if (!std::isfinite(x)) throw InvalidInput("weights", "non-finite entry");
            norm += x * x;
        }
        norm = std::sqrt(norm);
        if (norm < 1e-300) throw InvalidInput("weights", "zero weight vector cannot be normalized");
        for (auto& x : w_) x /= norm;
    }

    const std::vector<double>& values() const noexcept { return w_; }
    std::size_t size() const noexcept { return w_.size(); }
    double operator[](std::size_t i) const { return w_[i]; }

    friend bool operator==(const RewardWeights&, const RewardWeights&) = default;

private:
    std::vector<double> w_;
};

/// Row-stochastic |S| x |A| action distribution.
class Policy {
public:
    Policy() = default;

    Policy(std::size_t num_states, std::size_t num_actions, std::vector<double> probs)
        : num_states_(num_states), num_actions_(num_actions), probs_(std::move(probs)) {
        if (probs_.size() != num_states_ * num_actions_) throw InvalidInput("policy", "shape mismatch");
        for (std::size_t s = 0; s < num_states_; ++s) {
            double sum = 0.0;
            for (std::size_t a = 0; a < num_actions_; ++a) {
                const double p = probs_[s * num_actions_ + a];
                if (!(p >= 0.0)) throw InvalidInput("policy", "negative probability");
                sum += p;
            }
            if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("policy", "row does not sum to 1");
        }
    }

    static Policy deterministic(std::size_t num_actions, const std::vector<std::size_t>& actions) {
        std::vector<double> probs(actions.size() * num_actions, 0.0);
        for (std::size_t s = 0; s < actions.size(); ++s) {
            if (actions[s] >= num_actions) throw InvalidInput("policy", "action index out of range");
            probs[s * num_actions + actions[s]] = 1.0;
        }
        return Policy(actions.size(), num_actions, std::move(probs));
    }

    std::size_t num_states() const noexcept { return num_states_; }
    std::size_t num_actions() const noexcept { return num_actions_; }
    double prob(std::size_t s, std::size_t a) const noexcept { return probs_[s * num_actions_ + a]; }
    std::span<const double> row(std::size_t s) const noexcept {
        return {probs_.data() + s * num_actions_, num_actions_};
    }

    /// Most probable action, lowest index on ties.
    std::size_t action(std::size_t s) const noexcept {
        auto r = row(s);
        return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    }

    std::vector<std::size_t> actions() const {
        std::vector<std::size_t> out(num_states_);
        for (std::size_t s = 0; s < num_states_; ++s) out[s] = action(s);
        return out;
    }

    bool is_deterministic() const noexcept {
        return std::all_of(probs_.begin(), probs_.end(), [](double p) { return p == 0.0 || p == 1.0; });
    }

    friend bool operator==(const Policy&, const Policy&) = default;

private:
    std::size_t num_states_ = 0;
    std::size_t num_actions_ = 0;
    std::vector<double> probs_;
};

struct ValueFunction {
    std::vector<double> values;
    double residual = 0.0; ///< sup-norm change of the final sweep
    std::size_t sweeps = 0;

    double operator[](std::size_t s) const { return values[s]; }
    std::size_t size() const noexcept { return values.size(); }
};

struct OptimalSolution {
    ValueFunction value;
    Policy policy;
    std::vector<double> q; ///< |S| x |A|, row-major
};

namespace detail {

inline void check_rewards(const TabularMdp& mdp, std::span<const double> rewards) {
    if (rewards.size() != mdp.num_states()) throw InvalidInput("rewards", "need one reward per state");
    for (double r : rewards)
        if (!std::isfinite(r)) throw InvalidInput("rewards", "non-finite reward entry");
}

/// Stop once the iterate is within tol/2 of the fixed point in sup-norm.
inline double stopping_delta(double discount, double tol) {
    if (discount == 0.0) return std::numeric_limits<double>::infinity();
    return 0.5 * tol * (1.0 - discount) / discount;
}

inline void check_policy(const TabularMdp& mdp, const Policy& pi) {
    if (pi.num_states() != mdp.num_states() || pi.num_actions() != mdp.num_actions())
        throw InvalidInput("policy", "policy shape does not match the MDP");
}

} // namespace detail

/// Q(s,a) = R(s) + gamma * sum_s' T(s,a,s') V(s').
inline std::vector<double> q_values(const TabularMdp& mdp, std::span<const double> rewards,
                                    std::span<const double> values) {
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    const double g = mdp.discount();
    std::vector<double> q(S * A);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            double acc = 0.0;
            for (const auto& t : mdp.transitions(s, a)) acc += t.prob * values[t.next];
            q[s * A + a] = rewards[s] + g * acc;
        }
    return q;
}

/// Deterministic greedy policy; ties go to the lowest action index.
inline Policy greedy_policy(const TabularMdp& mdp, std::span<const double> q) {
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    std::vector<std::size_t> actions(S, 0);
    for (std::size_t s = 0; s < S; ++s) {
        std::size_t best = 0;
        for (std::size_t a = 1; a < A; ++a)
            if (q[s * A + a] > q[s * A + best]) best = a;
        actions[s] = best;
    }
    return Policy::deterministic(A, actions);
}

/// Value iteration on state rewards. `warm_start`, when non-empty, seeds the
/// iterate. When `sweep_deltas` is given it receives ||V_{k+1} - V_k|| per sweep.
inline OptimalSolution value_iteration(const TabularMdp& mdp, std::span<const double> rewards,
                                       double tol = kDefaultTolerance,
                                       std::span<const double> warm_start = {},
                                       std::vector<double>* sweep_deltas = nullptr) {
    if (!(tol > 0.0)) throw InvalidInput("tol", "must be positive");
    detail::check_rewards(mdp, rewards);
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    const double g = mdp.discount();
    const double stop = detail::stopping_delta(g, tol);

    std::vector<double> v(S, 0.0), next(S);
    if (!warm_start.empty()) {
        if (warm_start.size() != S) throw InvalidInput("warm_start", "need one value per state");
        std::copy(warm_start.begin(), warm_start.end(), v.begin());
    }
    std::size_t sweeps = 0;
    double delta = 0.0;
    do {
        delta = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < A; ++a) {
                double acc = 0.0;
                for (const auto& t : mdp.transitions(s, a)) acc += t.prob * v[t.next];
                best = std::max(best, acc);
            }
            next[s] = rewards[s] + g * best;
            delta = std::max(delta, std::abs(next[s] - v[s]));
        }
        v.swap(next);
        ++sweeps;
        if (sweep_deltas) sweep_deltas->push_back(delta);
    } while (delta > stop);

    OptimalSolution out;
    out.q = q_values(mdp, rewards, v);
    out.policy = greedy_policy(mdp, out.q);
    out.value = ValueFunction{std::move(v), delta, sweeps};
    return out;
}

inline OptimalSolution value_iteration(const TabularMdp& mdp, const RewardWeights& rw,
                                       double tol = kDefaultTolerance) {
    const auto r = mdp.rewards(rw.values());
    return value_iteration(mdp, r, tol);
}

/// Exact values of a deterministic policy. Deterministic dynamics are solved
/// on the successor graph in O(|S|); anything else goes through a dense LU.
inline std::vector<double> exact_policy_values(const TabularMdp& mdp, std::span<const std::size_t> actions,
                                               std::span<const double> rewards) {
    const std::size_t S = mdp.num_states();
    const double g = mdp.discount();
    bool deterministic = true;
    for (std::size_t s = 0; s < S && deterministic; ++s) deterministic = mdp.transitions(s, actions[s]).size() == 1;

    if (!deterministic) {
        Eigen::MatrixXd a = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(S));
        Eigen::VectorXd b(static_cast<Eigen::Index>(S));
        for (std::size_t s = 0; s < S; ++s) {
            b(static_cast<Eigen::Index>(s)) = rewards[s];
            for (const auto& t : mdp.transitions(s, actions[s]))
                a(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t.next)) -= g * t.prob;
        }
        const Eigen::VectorXd v = a.partialPivLu().solve(b);
        return {v.data(), v.data() + v.size()};
    }

    // Each state has one successor: solve every cycle in closed form, then
    // unwind the paths that lead into it.
    constexpr unsigned char kUnseen = 0, kOnPath = 1, kDone = 2;
    std::vector<double> v(S, 0.0);
    std::vector<unsigned char> mark(S, kUnseen);
    std::vector<std::size_t> path;
    for (std::size_t start = 0; start < S; ++start) {
        if (mark[start] == kDone) continue;
        path.clear();
        std::size_t u = start;
        while (mark[u] == kUnseen) {
            mark[u] = kOnPath;
            path.push_back(u);
            u = mdp.transitions(u, actions[u])[0].next;
        }
        std::size_t tail_end = path.size();
        if (mark[u] == kOnPath) {
            const auto cycle_begin =
                static_cast<std::size_t>(std::find(path.begin(), path.end(), u) - path.begin());
            const std::size_t m = path.size() - cycle_begin;
            double acc = 0.0, disc = 1.0;
            for (std::size_t i = 0; i < m; ++i) {
                acc += disc * rewards[path[cycle_begin + i]];
                disc *= g;
            }
            v[path[cycle_begin]] = acc / (1.0 - disc);
            for (std::size_t i = m - 1; i >= 1; --i) {
                const std::size_t s = path[cycle_begin + i];
                const std::size_t nxt = path[cycle_begin + (i + 1) % m];
                v[s] = rewards[s] + g * v[nxt];
            }
            for (std::size_t i = cycle_begin; i < path.size(); ++i) mark[path[i]] = kDone;
            tail_end = cycle_begin;
        }
        for (std::size_t i = tail_end; i-- > 0;) {
            const std::size_t s = path[i];
            v[s] = rewards[s] + g * v[mdp.transitions(s, actions[s])[0].next];
            mark[s] = kDone;
        }
    }
    return v;
}

/// Howard policy iteration with exact evaluation. `warm_actions`, when
/// non-empty, is the starting policy. Returns exact V*, Q* and the greedy
/// policy with lowest-index tie-breaking.
inline OptimalSolution policy_iteration(const TabularMdp& mdp, std::span<const double> rewards,
                                        std::span<const std::size_t> warm_actions = {}) {
    detail::check_rewards(mdp, rewards);
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    const double g = mdp.discount();
    std::vector<std::size_t> actions(S, 0);
    if (!warm_actions.empty()) {
        if (warm_actions.size() != S) throw InvalidInput("warm_actions", "need one action per state");
        actions.assign(warm_actions.begin(), warm_actions.end());
    }
    double scale = 0.0;
    for (double r : rewards) scale = std::max(scale, std::abs(r));
    const double margin = 1e-12 * std::max(1.0, scale / (1.0 - g));

    std::vector<double> v;
    std::size_t iterations = 0;
    for (;;) {
        v = exact_policy_values(mdp, actions, rewards);
        ++iterations;
        bool changed = false;
        for (std::size_t s = 0; s < S; ++s) {
            double current = 0.0;
            for (const auto& t : mdp.transitions(s, actions[s])) current += t.prob * v[t.next];
            std::size_t best = actions[s];
            double best_val = current;
            for (std::size_t a = 0; a < A; ++a) {
                double acc = 0.0;
                for (const auto& t : mdp.transitions(s, a)) acc += t.prob * v[t.next];
                if (acc > best_val + margin) {
                    best_val = acc;
                    best = a;
                }
            }
            if (best != actions[s]) {
                actions[s] = best;
                changed = true;
            }
        }
        if (!changed || iterations > 10 * S + 100) break;
    }

    OptimalSolution out;
    out.q = q_values(mdp, rewards, v);
    out.policy = greedy_policy(mdp, out.q);
    out.value = ValueFunction{std::move(v), 0.0, iterations};
    return out;
}

/// Iterative evaluation of a (possibly stochastic) policy.
inline ValueFunction policy_evaluation(const TabularMdp& mdp, const Policy& pi, std::span<const double> rewards,
                                       double tol = kDefaultTolerance) {
    if (!(tol > 0.0)) throw InvalidInput("tol", "must be positive");
    detail::check_policy(mdp, pi);
    detail::check_rewards(mdp, rewards);
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    const double g = mdp.discount();
    const double stop = detail::stopping_delta(g, tol);

    // Collapse the policy into one sparse next-state distribution per state.
    std::vector<std::vector<Transition>> step(S);
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t a = 0; a < A; ++a) {
            const double p = pi.prob(s, a);
            if (p == 0.0) continue;
            for (const auto& t : mdp.transitions(s, a)) {
                auto it = std::find_if(step[s].begin(), step[s].end(),
                                       [&](const Transition& x) { return x.next == t.next; });
                if (it != step[s].end())
                    it->prob += p * t.prob;
                else
                    step[s].push_back({t.next, p * t.prob});
            }
        }
    }

    std::vector<double> v(rewards.begin(), rewards.end()), next(S);
    std::size_t sweeps = 0;
    double delta = 0.0;
    do {
        delta = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
            double acc = 0.0;
            for (const auto& t : step[s]) acc += t.prob * v[t.next];
            next[s] = rewards[s] + g * acc;
            delta = std::max(delta, std::abs(next[s] - v[s]));
        }
        v.swap(next);
        ++sweeps;
    } while (delta > stop);
    return ValueFunction{std::move(v), delta, sweeps};
}

inline ValueFunction policy_evaluation(const TabularMdp& mdp, const Policy& pi, const RewardWeights& rw,
                                       double tol = kDefaultTolerance) {
    const auto r = mdp.rewards(rw.values());
    return policy_evaluation(mdp, pi, r, tol);
}

/// Expected return under the initial-state distribution.
inline double expected_return(std::span<const double> values, const TabularMdp& mdp) {
    if (values.size() != mdp.num_states()) throw InvalidInput("values", "need one value per state");
    const auto& d = mdp.initial_dist();
    double acc = 0.0;
    for (std::size_t s = 0; s < values.size(); ++s) acc += d[s] * values[s];
    return acc;
}

inline double expected_return(const ValueFunction& v, const TabularMdp& mdp) {
    return expected_return(std::span<const double>(v.values), mdp);
}

inline Policy uniform_random_policy(const TabularMdp& mdp) {
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    return Policy(S, A, std::vector<double>(S * A, 1.0 / static_cast<double>(A)));
}

/// Discounted feature expectations of a fixed policy, |S| x k row-major:
/// V^pi_w(s) = row(s) . w for every weight vector w. Solved exactly.
inline std::vector<double> feature_expectations(const TabularMdp& mdp, const Policy& pi) {
    detail::check_policy(mdp, pi);
    const std::size_t S = mdp.num_states(), K = mdp.num_features(), A = mdp.num_actions();
    std::vector<double> psi(S * K);
    std::vector<double> column(S);
    if (pi.is_deterministic()) {
        const auto actions = pi.actions();
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t s = 0; s < S; ++s) column[s] = mdp.feature(s)[k];
            const auto v = exact_policy_values(mdp, actions, column);
            for (std::size_t s = 0; s < S; ++s) psi[s * K + k] = v[s];
        }
        return psi;
    }
    const auto n = static_cast<Eigen::Index>(S);
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd phi(n, static_cast<Eigen::Index>(K));
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t k = 0; k < K; ++k) phi(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k)) = mdp.feature(s)[k];
        for (std::size_t a = 0; a < A; ++a) {
            const double p = pi.prob(s, a);
            if (p == 0.0) continue;
            for (const auto& t : mdp.transitions(s, a))
                m(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t.next)) -= mdp.discount() * p * t.prob;
        }
    }
    const Eigen::MatrixXd sol = m.partialPivLu().solve(phi);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t k = 0; k < K; ++k) psi[s * K + k] = sol(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(k));
    return psi;
}

/// Per-state values w . psi(s) from feature expectations.
inline std::vector<double> values_from_features(std::span<const double> psi, std::span<const double> weights) {
    const std::size_t K = weights.size();
    const std::size_t S = psi.size() / K;
    std::vector<double> v(S, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        double acc = 0.0;
        for (std::size_t k = 0; k < K; ++k) acc += psi[s * K + k] * weights[k];
        v[s] = acc;
    }
    return v;
}

inline void check_demonstration(const TabularMdp& mdp, const Demonstration& demos) {
    for (const auto& sa : demos.pairs)
        if (sa.state >= mdp.num_states() || sa.action >= mdp.num_actions())
            throw InvalidInput("demonstration", "pair (" + std::to_string(sa.state) + ", " +
                                                    std::to_string(sa.action) + ") out of range");
}

/// Log of the Boltzmann likelihood given precomputed optimal Q-values.
inline double demo_log_likelihood_from_q(const TabularMdp& mdp, const Demonstration& demos,
                                         std::span<const double> q, double beta) {
    if (!(beta >= 0.0)) throw InvalidInput("beta", "must be non-negative");
    const std::size_t A = mdp.num_actions();
    double total = 0.0;
    for (const auto& sa : demos.pairs) {
        const double* row = q.data() + sa.state * A;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t b = 0; b < A; ++b) mx = std::max(mx, beta * row[b]);
        double z = 0.0;
        for (std::size_t b = 0; b < A; ++b) z += std::exp(beta * row[b] - mx);
        total += beta * row[sa.action] - mx - std::log(z);
    }
    return total;
}

inline double demo_log_likelihood(const TabularMdp& mdp, const Demonstration& demos,
                                  std::span<const double> rewards, double beta,
                                  double tol = kDefaultTolerance) {
    if (!(beta >= 0.0)) throw InvalidInput("beta", "must be non-negative");
    check_demonstration(mdp, demos);
    const auto sol = value_iteration(mdp, rewards, tol);
    return demo_log_likelihood_from_q(mdp, demos, sol.q, beta);
}

inline double demo_log_likelihood(const TabularMdp& mdp, const Demonstration& demos, const RewardWeights& rw,
                                  double beta, double tol = kDefaultTolerance) {
    const auto r = mdp.rewards(rw.values());
    return demo_log_likelihood(mdp, demos, r, beta, tol);
}

} // namespace suffice
