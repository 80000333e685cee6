#pragma once

// Randomized gridworld and driving MDPs plus simulated demonstrators.

#include "suffice/errors.hpp"
#include "suffice/mdp.hpp"
#include "suffice/rng.hpp"

#include <algorithm>
#include <cstdint>
#include <deque>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <vector>

namespace suffice {

inline constexpr double kDefaultDiscount = 0.9;

enum class EnvironmentKind { gridworld, driving };

inline std::string to_string(EnvironmentKind k) { return k == EnvironmentKind::gridworld ? "gridworld" : "driving"; }

/// Rendering metadata shared by both environments: states laid out on a
/// rows x cols grid, state = row * cols + col.
struct EnvironmentLayout {
    EnvironmentKind kind = EnvironmentKind::gridworld;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::string> action_names;
    std::vector<std::string> feature_names;
    std::vector<int> feature_class; ///< dominant feature index per state, -1 when none
    std::optional<std::size_t> goal_state;
};

struct Environment {
    TabularMdp mdp;
    RewardWeights true_weights;
    EnvironmentLayout layout;
};

struct GridworldConfig {
    std::size_t rows = 5;
    std::size_t cols = 5;
    /// Total feature dimension: num_features - 1 terrain classes plus the goal feature.
    std::size_t num_features = 4;
    std::optional<std::size_t> goal_state;
    std::uint64_t seed = 0;
    double discount = kDefaultDiscount;
};

struct DrivingConfig {
    std::size_t road_length = 6;
    std::size_t num_lanes = 3;
    double obstacle_density = 0.2;
    double dirt_density = 0.2;
    std::uint64_t seed = 0;
    double discount = kDefaultDiscount;
};

enum GridAction : std::size_t { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };
enum DriveAction : std::size_t { kStraight = 0, kTurnLeft = 1, kTurnRight = 2 };

inline Environment generate_gridworld(const GridworldConfig& cfg) {
    const std::size_t S = cfg.rows * cfg.cols;
    if (cfg.rows == 0 || cfg.cols == 0 || S < 2) throw InvalidInput("rows/cols", "grid needs at least 2 cells");
    if (cfg.num_features < 2) throw InvalidInput("num_features", "need at least 2 features");
    if (cfg.num_features > S) throw InvalidInput("num_features", "more features than cells");
    if (cfg.goal_state && *cfg.goal_state >= S) throw InvalidInput("goal_state", "out of range");

    Rng rng(derive_seed(cfg.seed, 0x67726964ULL));
    const std::size_t terrain = cfg.num_features - 1;
    const std::size_t goal_feature = terrain;
    const std::size_t goal =
        cfg.goal_state ? *cfg.goal_state : std::uniform_int_distribution<std::size_t>(0, S - 1)(rng);

    std::vector<int> cls(S);
    std::uniform_int_distribution<std::size_t> pick(0, terrain - 1);
    for (std::size_t s = 0; s < S; ++s) cls[s] = static_cast<int>(pick(rng));
    cls[goal] = static_cast<int>(goal_feature);

    std::vector<std::vector<double>> features(S, std::vector<double>(cfg.num_features, 0.0));
    for (std::size_t s = 0; s < S; ++s) features[s][static_cast<std::size_t>(cls[s])] = 1.0;

    std::vector<TransitionTriple> triples;
    triples.reserve(S * 4);
    for (std::size_t r = 0; r < cfg.rows; ++r)
        for (std::size_t c = 0; c < cfg.cols; ++c) {
            const std::size_t s = r * cfg.cols + c;
            if (s == goal) {
                for (std::size_t a = 0; a < 4; ++a) triples.push_back({s, a, s, 1.0});
                continue;
            }
            triples.push_back({s, kUp, r > 0 ? s - cfg.cols : s, 1.0});
            triples.push_back({s, kDown, r + 1 < cfg.rows ? s + cfg.cols : s, 1.0});
            triples.push_back({s, kLeft, c > 0 ? s - 1 : s, 1.0});
            triples.push_back({s, kRight, c + 1 < cfg.cols ? s + 1 : s, 1.0});
        }

    std::vector<double> init(S, 1.0 / static_cast<double>(S - 1));
    init[goal] = 0.0;

    // Goal weight must be the strict maximum; swap it with the largest entry.
    std::vector<double> w;
    for (;;) {
        w = sample_unit_sphere(cfg.num_features, rng);
        const auto top = static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
        std::swap(w[top], w[goal_feature]);
        const bool strict = std::all_of(w.begin(), w.end() - 1, [&](double x) { return x < w[goal_feature]; });
        if (strict) break;
    }

    Environment env{TabularMdp(S, 4, triples, std::move(features), cfg.discount, std::move(init), {goal}),
                    RewardWeights(std::move(w)),
                    {}};
    env.layout.kind = EnvironmentKind::gridworld;
    env.layout.rows = cfg.rows;
    env.layout.cols = cfg.cols;
    env.layout.action_names = {"up", "down", "left", "right"};
    for (std::size_t k = 0; k < terrain; ++k) env.layout.feature_names.push_back("terrain" + std::to_string(k));
    env.layout.feature_names.push_back("goal");
    env.layout.feature_class = std::move(cls);
    env.layout.goal_state = goal;
    return env;
}

/// Road positions are rows, columns are [offroad, lane 0..L-1, offroad].
/// Every action advances one row (wrapping); turns also shift one column.
inline Environment generate_driving(const DrivingConfig& cfg) {
    if (cfg.road_length < 2) throw InvalidInput("road_length", "must be at least 2");
    if (cfg.num_lanes < 1) throw InvalidInput("num_lanes", "must be at least 1");
    if (!(cfg.obstacle_density >= 0.0 && cfg.obstacle_density <= 1.0))
        throw InvalidInput("obstacle_density", "must lie in [0, 1]");
    if (!(cfg.dirt_density >= 0.0 && cfg.dirt_density <= 1.0))
        throw InvalidInput("dirt_density", "must lie in [0, 1]");

    Rng rng(derive_seed(cfg.seed, 0x64726976ULL));
    const std::size_t L = cfg.num_lanes;
    const std::size_t C = L + 2;
    const std::size_t S = cfg.road_length * C;
    const std::size_t K = L + 3;
    const std::size_t f_collision = L, f_dirt = L + 1, f_offroad = L + 2;

    std::vector<std::vector<double>> features(S, std::vector<double>(K, 0.0));
    std::vector<int> cls(S, -1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t p = 0; p < cfg.road_length; ++p)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t s = p * C + c;
            if (c == 0 || c == C - 1) {
                features[s][f_offroad] = 1.0;
                cls[s] = static_cast<int>(f_offroad);
                continue;
            }
            features[s][c - 1] = 1.0;
            cls[s] = static_cast<int>(c - 1);
            const double u = unif(rng);
            if (u < cfg.obstacle_density) {
                features[s][f_collision] = 1.0;
                cls[s] = static_cast<int>(f_collision);
            } else if (unif(rng) < cfg.dirt_density) {
                features[s][f_dirt] = 1.0;
                cls[s] = static_cast<int>(f_dirt);
            }
        }

    std::vector<TransitionTriple> triples;
    triples.reserve(S * 3);
    for (std::size_t p = 0; p < cfg.road_length; ++p) {
        const std::size_t np = (p + 1) % cfg.road_length;
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t s = p * C + c;
            triples.push_back({s, kStraight, np * C + c, 1.0});
            triples.push_back({s, kTurnLeft, np * C + (c > 0 ? c - 1 : c), 1.0});
            triples.push_back({s, kTurnRight, np * C + (c + 1 < C ? c + 1 : c), 1.0});
        }
    }
    std::vector<double> init(S, 1.0 / static_cast<double>(S));

    std::vector<double> w;
    do {
        w = sample_unit_sphere(K, rng);
    } while (std::abs(w[f_collision]) < 1e-12);
    if (w[f_collision] > 0.0) w[f_collision] = -w[f_collision];

    Environment env{TabularMdp(S, 3, triples, std::move(features), cfg.discount, std::move(init)),
                    RewardWeights(std::move(w)),
                    {}};
    env.layout.kind = EnvironmentKind::driving;
    env.layout.rows = cfg.road_length;
    env.layout.cols = C;
    env.layout.action_names = {"straight", "left", "right"};
    for (std::size_t l = 0; l < L; ++l) env.layout.feature_names.push_back("lane" + std::to_string(l));
    env.layout.feature_names.insert(env.layout.feature_names.end(), {"collision", "dirt", "offroad"});
    env.layout.feature_class = std::move(cls);
    return env;
}

// ---------------------------------------------------------------------------
// Demonstrators

struct DemonstratorConfig {
    enum class Mode { optimal, boltzmann, noisy };
    Mode mode = Mode::optimal;
    double beta = 10.0;
    double noise = 0.0; ///< fraction of suboptimal actions in noisy mode
    std::uint64_t seed = 0;
};

/// Anything that can hand out demonstrations one at a time.
class DemoSource {
public:
    virtual ~DemoSource() = default;
    /// Next pair in the source's own order; nullopt when exhausted.
    virtual std::optional<StateAction> next() = 0;
    /// Demonstration at a state chosen by the learner.
    virtual StateAction query(std::size_t state) = 0;
};

/// Simulated demonstrator acting under a ground-truth reward. Holds private
/// cursor state; not for concurrent use.
class Demonstrator : public DemoSource {
public:
    Demonstrator(const TabularMdp& mdp, const RewardWeights& truth, DemonstratorConfig cfg,
                 std::optional<std::vector<std::size_t>> visit_order = std::nullopt)
        : cfg_(cfg), num_actions_(mdp.num_actions()), action_rng_(derive_seed(cfg.seed, 2)) {
        if (cfg.mode == DemonstratorConfig::Mode::noisy && !(cfg.noise >= 0.0 && cfg.noise < 1.0))
            throw InvalidInput("noise", "must lie in [0, 1)");
        if (cfg.mode == DemonstratorConfig::Mode::boltzmann && !(cfg.beta >= 0.0))
            throw InvalidInput("beta", "must be non-negative");
        q_ = value_iteration(mdp, truth).q;
        if (visit_order) {
            for (std::size_t s : *visit_order)
                if (s >= mdp.num_states()) throw InvalidInput("visit_order", "state out of range");
            order_ = std::move(*visit_order);
        } else {
            order_.resize(mdp.num_states());
            std::iota(order_.begin(), order_.end(), std::size_t{0});
            Rng shuffle_rng(derive_seed(cfg.seed, 1));
            std::shuffle(order_.begin(), order_.end(), shuffle_rng);
        }
    }

    std::optional<StateAction> next() override {
        if (cursor_ >= order_.size()) return std::nullopt;
        return query(order_[cursor_++]);
    }

    StateAction query(std::size_t state) override {
        if (state * num_actions_ >= q_.size()) throw InvalidInput("state", "out of range");
        switch (cfg_.mode) {
        case DemonstratorConfig::Mode::optimal: return {state, optimal_action(state)};
        case DemonstratorConfig::Mode::boltzmann: return {state, boltzmann_action(state)};
        case DemonstratorConfig::Mode::noisy: return {state, noisy_action(state)};
        }
        return {state, optimal_action(state)};
    }

    std::size_t remaining() const noexcept { return order_.size() - cursor_; }

    bool is_optimal(StateAction sa) const {
        const double* row = q_.data() + sa.state * num_actions_;
        const double best = *std::max_element(row, row + num_actions_);
        return row[sa.action] >= best - 1e-9;
    }

private:
    std::size_t optimal_action(std::size_t s) const {
        const double* row = q_.data() + s * num_actions_;
        return static_cast<std::size_t>(std::max_element(row, row + num_actions_) - row);
    }

    std::size_t boltzmann_action(std::size_t s) {
        const double* row = q_.data() + s * num_actions_;
        const double mx = *std::max_element(row, row + num_actions_);
        std::vector<double> p(num_actions_);
        for (std::size_t a = 0; a < num_actions_; ++a) p[a] = std::exp(cfg_.beta * (row[a] - mx));
        std::discrete_distribution<std::size_t> dist(p.begin(), p.end());
        return dist(action_rng_);
    }

    std::size_t noisy_action(std::size_t s) {
        const std::size_t best = optimal_action(s);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        if (!(unif(action_rng_) < cfg_.noise)) return best;
        std::vector<std::size_t> worse;
        for (std::size_t a = 0; a < num_actions_; ++a)
            if (!is_optimal({s, a})) worse.push_back(a);
        if (worse.empty()) return best;
        std::uniform_int_distribution<std::size_t> pick(0, worse.size() - 1);
        return worse[pick(action_rng_)];
    }

    DemonstratorConfig cfg_;
    std::size_t num_actions_;
    std::vector<double> q_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    Rng action_rng_;
};

/// Replays a fixed list of pairs, then defers to another source.
class PrefixedSource : public DemoSource {
public:
    PrefixedSource(Demonstration prefix, DemoSource& rest) : prefix_(std::move(prefix)), rest_(rest) {}

    std::optional<StateAction> next() override {
        if (cursor_ < prefix_.size()) return prefix_.pairs[cursor_++];
        return rest_.next();
    }
    StateAction query(std::size_t state) override { return rest_.query(state); }

private:
    Demonstration prefix_;
    DemoSource& rest_;
    std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// Ambiguous / informative demonstration sets

enum class DemoKind { ambiguous, informative };

namespace detail {

inline std::vector<std::vector<std::size_t>> successors(const TabularMdp& mdp) {
    std::vector<std::vector<std::size_t>> out(mdp.num_states());
    for (std::size_t s = 0; s < mdp.num_states(); ++s) {
        std::set<std::size_t> nb;
        for (std::size_t a = 0; a < mdp.num_actions(); ++a)
            for (const auto& t : mdp.transitions(s, a))
                if (t.next != s) nb.insert(t.next);
        out[s].assign(nb.begin(), nb.end());
    }
    return out;
}

inline bool same_features(const TabularMdp& mdp, std::size_t a, std::size_t b) {
    auto fa = mdp.feature(a), fb = mdp.feature(b);
    return std::equal(fa.begin(), fa.end(), fb.begin());
}

/// Hops from `s` to the nearest non-terminal state with different features.
inline std::size_t boundary_distance(const TabularMdp& mdp, const std::vector<std::vector<std::size_t>>& nb,
                                     std::size_t s) {
    std::vector<std::size_t> dist(mdp.num_states(), SIZE_MAX);
    std::queue<std::size_t> q;
    dist[s] = 0;
    q.push(s);
    while (!q.empty()) {
        const std::size_t u = q.front();
        q.pop();
        if (!mdp.is_terminal(u) && !same_features(mdp, u, s)) return dist[u];
        for (std::size_t v : nb[u])
            if (dist[v] == SIZE_MAX) {
                dist[v] = dist[u] + 1;
                q.push(v);
            }
    }
    return SIZE_MAX;
}

/// Distinct feature rows met when following the greedy policy from `s`.
inline std::size_t path_feature_diversity(const TabularMdp& mdp, const Policy& pi, std::size_t s) {
    std::vector<std::vector<double>> seen;
    std::vector<bool> visited(mdp.num_states(), false);
    std::size_t u = s;
    while (!visited[u]) {
        visited[u] = true;
        auto f = mdp.feature(u);
        std::vector<double> row(f.begin(), f.end());
        if (std::find(seen.begin(), seen.end(), row) == seen.end()) seen.push_back(std::move(row));
        if (mdp.is_terminal(u)) break;
        const auto ts = mdp.transitions(u, pi.action(u));
        u = std::max_element(ts.begin(), ts.end(), [](const Transition& a, const Transition& b) {
                return a.prob < b.prob;
            })->next;
    }
    return seen.size();
}

} // namespace detail

/// Ambiguous: `count` copies of one optimal pair from the state deepest inside
/// a single-feature region. Informative: optimal pairs from the `count`
/// states whose greedy paths cross the most distinct features.
inline Demonstration ambiguity_demo_set(const TabularMdp& mdp, const RewardWeights& truth, DemoKind kind,
                                        std::size_t count) {
    if (count == 0) throw InvalidInput("count", "must be at least 1");
    const auto opt = value_iteration(mdp, truth);
    std::vector<std::size_t> candidates;
    for (std::size_t s = 0; s < mdp.num_states(); ++s)
        if (!mdp.is_terminal(s)) candidates.push_back(s);
    if (candidates.empty()) candidates.push_back(0);

    Demonstration out;
    if (kind == DemoKind::ambiguous) {
        const auto nb = detail::successors(mdp);
        std::size_t best = candidates.front(), best_d = 0;
        bool first = true;
        for (std::size_t s : candidates) {
            const std::size_t d = detail::boundary_distance(mdp, nb, s);
            if (first || d > best_d) {
                best = s;
                best_d = d;
                first = false;
            }
        }
        for (std::size_t i = 0; i < count; ++i) out.push_back({best, opt.policy.action(best)});
        return out;
    }

    std::vector<std::pair<std::size_t, std::size_t>> scored; // (diversity, state)
    for (std::size_t s : candidates) scored.emplace_back(detail::path_feature_diversity(mdp, opt.policy, s), s);
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; i < std::min(count, scored.size()); ++i) {
        const std::size_t s = scored[i].second;
        out.push_back({s, opt.policy.action(s)});
    }
    return out;
}

/// States reachable from `s` under some policy (breadth-first).
inline std::vector<bool> reachable_from(const TabularMdp& mdp, std::size_t s) {
    const auto nb = detail::successors(mdp);
    std::vector<bool> seen(mdp.num_states(), false);
    std::deque<std::size_t> q{s};
    seen[s] = true;
    while (!q.empty()) {
        const std::size_t u = q.front();
        q.pop_front();
        for (std::size_t v : nb[u])
            if (!seen[v]) {
                seen[v] = true;
                q.push_back(v);
            }
    }
    return seen;
}

} // namespace suffice
