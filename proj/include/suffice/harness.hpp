#pragma once

// Batch experiments over randomized MDP replicates. Each replicate records one
// teaching trajectory; every stopping rule and threshold is then evaluated on
// that trajectory, so compared methods see identical MDPs, demonstrations and
// posteriors.

#include "suffice/birl.hpp"
#include "suffice/environments.hpp"
#include "suffice/errors.hpp"
#include "suffice/mdp.hpp"
#include "suffice/risk.hpp"
#include "suffice/rng.hpp"
#include "suffice/serialization.hpp"
#include "suffice/sufficiency.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace suffice {

// ---------------------------------------------------------------------------
// Classification metrics

enum class Classification { tp, fp, fn, tn };

inline std::string to_string(Classification c) {
    switch (c) {
    case Classification::tp: return "TP";
    case Classification::fp: return "FP";
    case Classification::fn: return "FN";
    case Classification::tn: return "TN";
    }
    return "TN";
}

/// nEVD: the learner is good enough when regret <= epsilon. PIOB: when the
/// improvement >= epsilon. A NaN metric counts as not good enough.
inline Classification classify_outcome(bool declared, double true_metric, double epsilon, Condition condition) {
    const bool good = condition == Condition::piob ? true_metric >= epsilon : true_metric <= epsilon;
    if (declared) return good ? Classification::tp : Classification::fp;
    return good ? Classification::fn : Classification::tn;
}

struct F1Result {
    double value = 0.0;
    bool undefined = false; ///< tp + fp + fn == 0
};

inline F1Result f1_score(std::size_t tp, std::size_t fp, std::size_t fn) {
    if (tp + fp + fn == 0) return {0.0, true};
    return {static_cast<double>(tp) / (static_cast<double>(tp) + 0.5 * static_cast<double>(fp + fn)), false};
}

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

    void add(Classification c) {
        switch (c) {
        case Classification::tp: ++tp; break;
        case Classification::fp: ++fp; break;
        case Classification::fn: ++fn; break;
        case Classification::tn: ++tn; break;
        }
    }
    void remove(Classification c) {
        switch (c) {
        case Classification::tp: --tp; break;
        case Classification::fp: --fp; break;
        case Classification::fn: --fn; break;
        case Classification::tn: --tn; break;
        }
    }
    std::optional<double> f1() const {
        const auto r = f1_score(tp, fp, fn);
        return r.undefined ? std::nullopt : std::optional<double>(r.value);
    }
    std::optional<double> tpr() const {
        if (tp + fn == 0) return std::nullopt;
        return static_cast<double>(tp) / static_cast<double>(tp + fn);
    }
    std::optional<double> fpr() const {
        if (fp + tn == 0) return std::nullopt;
        return static_cast<double>(fp) / static_cast<double>(fp + tn);
    }
};

// ---------------------------------------------------------------------------
// Configuration

struct ExperimentConfig {
    std::string name = "experiment";
    EnvironmentKind environment = EnvironmentKind::gridworld;
    GridworldConfig gridworld;
    DrivingConfig driving;
    std::size_t num_replicates = 100;
    std::uint64_t seed = 0;
    std::vector<Condition> methods{Condition::nevd, Condition::piob, Condition::convergence};
    std::vector<double> nevd_thresholds{0.1, 0.2, 0.3, 0.4, 0.5};
    std::vector<double> piob_thresholds{0.2, 0.4, 0.6};
    std::vector<std::size_t> patience{1, 2, 3, 4, 5};
    std::vector<std::size_t> intervals{3, 4, 5, 6, 7};
    std::vector<double> alphas{0.95};
    double delta = 0.05;
    DemonstratorConfig demonstrator;
    Selection selection = Selection::passive;
    McmcConfig mcmc;
    std::optional<std::size_t> max_demos;
    /// Bound-curve mode: run exactly this many rounds and report bound
    /// quality per demonstration count instead of stopping-rule outcomes.
    std::optional<std::size_t> fixed_rounds;
    /// Optional seed demonstrations given before the demonstrator's stream.
    std::optional<DemoKind> seeding;
    std::size_t seeding_count = 5;

    void validate() const {
        if (num_replicates < 1) throw InvalidInput("num_replicates", "must be at least 1");
        if (alphas.empty()) throw InvalidInput("alphas", "need at least one alpha");
        for (double a : alphas) RiskConfig{a, delta}.validate();
        for (double e : nevd_thresholds)
            if (!(e > 0.0)) throw InvalidInput("nevd_thresholds", "must be positive");
        for (std::size_t p : patience)
            if (p < 1) throw InvalidInput("patience", "must be positive");
        for (std::size_t i : intervals)
            if (i < 2) throw InvalidInput("intervals", "must be at least 2");
        if (methods.empty() && !fixed_rounds) throw InvalidInput("methods", "need at least one method");
        if (fixed_rounds && *fixed_rounds < 1) throw InvalidInput("fixed_rounds", "must be positive");
        if (seeding && seeding_count < 1) throw InvalidInput("seeding_count", "must be positive");
        mcmc.validate();
    }

    bool has(Condition c) const { return std::find(methods.begin(), methods.end(), c) != methods.end(); }
};

inline Json to_json(const ExperimentConfig& c) {
    Json methods = Json::array();
    for (auto m : c.methods) methods.push_back(to_string(m));
    Json j{{"name", c.name},
           {"environment", to_string(c.environment)},
           {"gridworld",
            {{"rows", c.gridworld.rows},
             {"cols", c.gridworld.cols},
             {"num_features", c.gridworld.num_features},
             {"discount", c.gridworld.discount}}},
           {"driving",
            {{"road_length", c.driving.road_length},
             {"num_lanes", c.driving.num_lanes},
             {"obstacle_density", c.driving.obstacle_density},
             {"dirt_density", c.driving.dirt_density},
             {"discount", c.driving.discount}}},
           {"num_replicates", c.num_replicates},
           {"seed", c.seed},
           {"methods", methods},
           {"nevd_thresholds", c.nevd_thresholds},
           {"piob_thresholds", c.piob_thresholds},
           {"patience", c.patience},
           {"intervals", c.intervals},
           {"alphas", c.alphas},
           {"delta", c.delta},
           {"demonstrator", to_json(c.demonstrator)},
           {"selection", to_string(c.selection)},
           {"mcmc", to_json(c.mcmc)},
           {"seeding_count", c.seeding_count}};
    j["max_demos"] = c.max_demos ? Json(*c.max_demos) : Json(nullptr);
    j["fixed_rounds"] = c.fixed_rounds ? Json(*c.fixed_rounds) : Json(nullptr);
    j["seeding"] = c.seeding ? Json(*c.seeding == DemoKind::ambiguous ? "ambiguous" : "informative") : Json(nullptr);
    return j;
}

inline ExperimentConfig experiment_config_from_json(const Json& j) {
    ExperimentConfig c;
    try {
        c.name = detail::field_or<std::string>(j, "name", c.name);
        const auto env = detail::field_or<std::string>(j, "environment", "gridworld");
        if (env == "gridworld")
            c.environment = EnvironmentKind::gridworld;
        else if (env == "driving")
            c.environment = EnvironmentKind::driving;
        else
            throw InvalidInput("environment", "unknown environment '" + env + "'");
        if (j.contains("gridworld")) c.gridworld = gridworld_config_from_json(j.at("gridworld"));
        if (j.contains("driving")) c.driving = driving_config_from_json(j.at("driving"));
        c.num_replicates = detail::field_or(j, "num_replicates", c.num_replicates);
        c.seed = detail::field_or(j, "seed", c.seed);
        if (j.contains("methods")) {
            c.methods.clear();
            for (const auto& m : j.at("methods")) c.methods.push_back(condition_from_string(m.get<std::string>()));
        }
        c.nevd_thresholds = detail::field_or(j, "nevd_thresholds", c.nevd_thresholds);
        c.piob_thresholds = detail::field_or(j, "piob_thresholds", c.piob_thresholds);
        c.patience = detail::field_or(j, "patience", c.patience);
        c.intervals = detail::field_or(j, "intervals", c.intervals);
        c.alphas = detail::field_or(j, "alphas", c.alphas);
        c.delta = detail::field_or(j, "delta", c.delta);
        if (j.contains("demonstrator")) c.demonstrator = demonstrator_config_from_json(j.at("demonstrator"));
        if (j.contains("selection")) c.selection = selection_from_string(j.at("selection").get<std::string>());
        if (j.contains("mcmc")) c.mcmc = mcmc_config_from_json(j.at("mcmc"));
        if (j.contains("max_demos") && !j.at("max_demos").is_null())
            c.max_demos = j.at("max_demos").get<std::size_t>();
        if (j.contains("fixed_rounds") && !j.at("fixed_rounds").is_null())
            c.fixed_rounds = j.at("fixed_rounds").get<std::size_t>();
        if (j.contains("seeding") && !j.at("seeding").is_null()) {
            const auto s = j.at("seeding").get<std::string>();
            if (s == "ambiguous")
                c.seeding = DemoKind::ambiguous;
            else if (s == "informative")
                c.seeding = DemoKind::informative;
            else
                throw InvalidInput("seeding", "unknown seeding '" + s + "'");
        }
        c.seeding_count = detail::field_or(j, "seeding_count", c.seeding_count);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("config", e.what());
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Replicate seeds and ground truth

struct ReplicateSeeds {
    std::uint64_t environment, demonstrator, mcmc;
};

/// Depends only on (master seed, replicate), so every configuration sharing
/// a master seed sees the same MDPs and demonstrators.
inline ReplicateSeeds replicate_seeds(std::uint64_t master, std::size_t replicate) {
    return {derive_seed(master, replicate, 1), derive_seed(master, replicate, 2), derive_seed(master, replicate, 3)};
}

inline Environment make_environment(const ExperimentConfig& cfg, std::uint64_t seed) {
    if (cfg.environment == EnvironmentKind::gridworld) {
        auto g = cfg.gridworld;
        g.seed = seed;
        return generate_gridworld(g);
    }
    auto d = cfg.driving;
    d.seed = seed;
    return generate_driving(d);
}

/// Ground-truth quantities for scoring a learned policy.
class GroundTruth {
public:
    GroundTruth(const TabularMdp& mdp, const RewardWeights& truth, double tau = 1e-8)
        : mdp_(mdp), rewards_(mdp.rewards(truth.values())), tau_(tau) {
        const auto opt = value_iteration(mdp, rewards_);
        q_ = opt.q;
        v_opt_ = expected_return(opt.value, mdp);
        base_ = uniform_random_policy(mdp);
        v_rand_ = expected_return(policy_evaluation(mdp, base_, rewards_), mdp);
    }

    double policy_return(const std::vector<std::size_t>& actions) const {
        return expected_return(exact_policy_values(mdp_, actions, rewards_), mdp_);
    }
    /// NaN when the normalizer is degenerate.
    double nevd(const std::vector<std::size_t>& actions) const {
        const auto x = nevd_from_returns(v_opt_, policy_return(actions), v_rand_, tau_);
        return x ? *x : std::numeric_limits<double>::quiet_NaN();
    }
    /// Improvement over the uniform-random baseline; NaN when degenerate.
    double piob(const std::vector<std::size_t>& actions) const {
        const auto x = piob_from_returns(policy_return(actions), v_rand_, tau_);
        return x ? *x : std::numeric_limits<double>::quiet_NaN();
    }
    /// Fraction of states whose chosen action is optimal under the true reward.
    double policy_optimality(const std::vector<std::size_t>& actions) const {
        const std::size_t A = mdp_.num_actions();
        std::size_t good = 0;
        for (std::size_t s = 0; s < actions.size(); ++s) {
            const double* row = q_.data() + s * A;
            const double best = *std::max_element(row, row + A);
            if (row[actions[s]] >= best - 1e-5 * std::max(1.0, std::abs(best))) ++good;
        }
        return static_cast<double>(good) / static_cast<double>(actions.size());
    }
    const Policy& baseline() const noexcept { return base_; }

private:
    const TabularMdp& mdp_;
    std::vector<double> rewards_;
    std::vector<double> q_;
    Policy base_;
    double v_opt_ = 0.0, v_rand_ = 0.0, tau_;
};

// ---------------------------------------------------------------------------
// Trajectories

/// Everything about one teaching round that the stopping rules need.
struct RoundRecord {
    std::size_t round = 0;
    std::size_t unique_states = 0;
    std::vector<double> nevd_bound; ///< per alpha; NaN when every sample was degenerate
    std::vector<bool> nevd_certified;
    std::vector<double> piob_bound;
    std::vector<bool> piob_certified;
    std::size_t stable_rounds = 0;
    double true_nevd = 0.0;
    double true_piob = 0.0;
    double policy_optimality = 0.0;
};

struct ValidationRecord {
    std::size_t round = 0;
    std::size_t unique_states = 0;
    bool sufficient = false;
    double true_nevd = 0.0;
    double true_piob = 0.0;
    double policy_optimality = 0.0;
};

inline std::vector<RiskConfig> risk_grid(const ExperimentConfig& cfg) {
    std::vector<RiskConfig> out;
    for (double a : cfg.alphas) out.push_back(RiskConfig{a, cfg.delta});
    return out;
}

inline SufficiencyConfig trajectory_config(const ExperimentConfig& cfg, std::uint64_t mcmc_seed,
                                           Condition condition = Condition::nevd) {
    SufficiencyConfig sc;
    sc.condition = condition;
    sc.epsilon = cfg.nevd_thresholds.empty() ? 0.1 : cfg.nevd_thresholds.front();
    sc.risk = RiskConfig{cfg.alphas.front(), cfg.delta};
    sc.mcmc = cfg.mcmc;
    sc.mcmc.seed = mcmc_seed;
    sc.selection = cfg.selection;
    sc.max_demos = cfg.max_demos;
    return sc;
}

namespace detail {

/// Source order: optional seeding prefix, then the demonstrator.
struct ReplicateSource {
    Demonstrator demonstrator;
    std::optional<PrefixedSource> prefixed;

    ReplicateSource(const ExperimentConfig& cfg, const Environment& env, std::uint64_t seed)
        : demonstrator(env.mdp, env.true_weights, [&] {
              auto d = cfg.demonstrator;
              d.seed = seed;
              return d;
          }()) {
        if (cfg.seeding)
            prefixed.emplace(ambiguity_demo_set(env.mdp, env.true_weights, *cfg.seeding, cfg.seeding_count),
                             demonstrator);
    }
    DemoSource& source() { return prefixed ? static_cast<DemoSource&>(*prefixed) : demonstrator; }
};

/// Whether every configured stopping rule has already fired, in which case
/// later rounds cannot change any outcome.
inline bool all_rules_fired(const ExperimentConfig& cfg, const RoundRecord& r) {
    if (cfg.has(Condition::nevd) && !cfg.nevd_thresholds.empty()) {
        const double eps = *std::min_element(cfg.nevd_thresholds.begin(), cfg.nevd_thresholds.end());
        for (std::size_t k = 0; k < cfg.alphas.size(); ++k)
            if (!(r.nevd_certified[k] && r.nevd_bound[k] <= eps)) return false;
    }
    if (cfg.has(Condition::piob) && !cfg.piob_thresholds.empty()) {
        const double eps = *std::max_element(cfg.piob_thresholds.begin(), cfg.piob_thresholds.end());
        for (std::size_t k = 0; k < cfg.alphas.size(); ++k)
            if (!(r.piob_certified[k] && r.piob_bound[k] >= eps)) return false;
    }
    if (cfg.has(Condition::convergence) && !cfg.patience.empty()) {
        if (r.stable_rounds < *std::max_element(cfg.patience.begin(), cfg.patience.end())) return false;
    }
    return true;
}

} // namespace detail

/// One teaching run with per-round bounds for every alpha. Stops once every
/// configured rule has fired, at the demo cap, or when the source runs dry;
/// in bound-curve mode it runs exactly fixed_rounds rounds (or until the cap).
inline std::vector<RoundRecord> run_trajectory(const ExperimentConfig& cfg, const Environment& env,
                                               const ReplicateSeeds& seeds) {
    const auto& mdp = env.mdp;
    const GroundTruth truth(mdp, env.true_weights);
    const auto risks = risk_grid(cfg);
    detail::ReplicateSource src(cfg, env, seeds.demonstrator);
    auto sc = trajectory_config(cfg, seeds.mcmc);
    if (cfg.fixed_rounds) sc.max_demos = std::min(*cfg.fixed_rounds, cfg.max_demos.value_or(*cfg.fixed_rounds));
    LearnerSession session(mdp, sc);

    std::vector<RoundRecord> out;
    while (!session.at_cap()) {
        const auto demo = obtain_demo(session, src.source());
        if (!demo) break;
        session.add_demo(*demo);
        const auto& batch = *session.batch();
        const auto actions = batch.map_policy.actions();

        RoundRecord r;
        r.round = session.demos().size();
        r.unique_states = session.unique_states();
        const auto nevd_ms = nevd_samples(mdp, batch, batch.map_policy);
        const bool need_piob = cfg.has(Condition::piob) && !cfg.fixed_rounds;
        const auto piob_ms = need_piob ? piob_samples(mdp, batch, batch.map_policy, truth.baseline()) : MetricSamples{};
        for (const auto& risk : risks) {
            if (nevd_ms.empty()) {
                r.nevd_bound.push_back(std::numeric_limits<double>::quiet_NaN());
                r.nevd_certified.push_back(false);
            } else {
                const auto b = var_confidence_bound(nevd_ms, risk);
                r.nevd_bound.push_back(b.value);
                r.nevd_certified.push_back(!b.insufficient_samples);
            }
            if (piob_ms.empty()) {
                r.piob_bound.push_back(std::numeric_limits<double>::quiet_NaN());
                r.piob_certified.push_back(false);
            } else {
                const auto b = piob_lower_bound(piob_ms, risk);
                r.piob_bound.push_back(b.value);
                r.piob_certified.push_back(!b.insufficient_samples);
            }
        }
        r.stable_rounds = stable_rounds(session.action_history());
        r.true_nevd = truth.nevd(actions);
        r.true_piob = truth.piob(actions);
        r.policy_optimality = truth.policy_optimality(actions);
        out.push_back(std::move(r));
        if (!cfg.fixed_rounds && detail::all_rules_fired(cfg, out.back())) break;
    }
    return out;
}

/// Validation-baseline run for one interval; stops at the first sufficient round.
inline std::vector<ValidationRecord> run_validation(const ExperimentConfig& cfg, const Environment& env,
                                                    const ReplicateSeeds& seeds, std::size_t interval) {
    const GroundTruth truth(env.mdp, env.true_weights);
    detail::ReplicateSource src(cfg, env, seeds.demonstrator);
    auto sc = trajectory_config(cfg, seeds.mcmc, Condition::validation);
    sc.interval = interval;
    LearnerSession session(env.mdp, sc);
    std::vector<ValidationRecord> out;
    while (!session.at_cap()) {
        const auto demo = obtain_demo(session, src.source());
        if (!demo) break;
        const auto outcome = session.add_demo(*demo);
        const auto actions = session.batch()->map_policy.actions();
        out.push_back({outcome.assessment.round, session.unique_states(), outcome.assessment.sufficient,
                       truth.nevd(actions), truth.piob(actions), truth.policy_optimality(actions)});
        if (outcome.assessment.sufficient) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Outcomes

/// One (replicate, method, hyperparameter) result.
struct ReplicateOutcome {
    std::size_t replicate = 0;
    std::string method;
    std::string hyperparameter;
    bool declared = false;
    std::size_t demos_used = 0;
    std::size_t unique_states = 0;
    double sample_efficiency = 0.0;
    double bound = std::numeric_limits<double>::quiet_NaN(); ///< NaN for rules without a bound
    double true_metric = 0.0;
    double policy_optimality = 0.0;
    /// Set for threshold rules only; bound-curve rows leave it empty.
    std::optional<Classification> classification;

    bool has_bound() const { return std::isfinite(bound); }
    double bound_error() const { return bound - true_metric; }
};

namespace detail {

inline std::string fmt_param(const char* name, double v) {
    std::ostringstream os;
    os << name << '=' << v;
    return os.str();
}

inline std::string hyper(std::initializer_list<std::string> parts) {
    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) out += ';';
        out += p;
    }
    return out;
}

} // namespace detail

/// Scores every configured stopping rule against one recorded trajectory.
inline std::vector<ReplicateOutcome> evaluate_trajectory(const ExperimentConfig& cfg, std::size_t replicate,
                                                         std::size_t num_states,
                                                         const std::vector<RoundRecord>& rounds) {
    std::vector<ReplicateOutcome> out;
    if (rounds.empty()) return out;
    const double S = static_cast<double>(num_states);
    auto base = [&](const RoundRecord& r, const std::string& method, std::string hp, bool declared) {
        ReplicateOutcome o;
        o.replicate = replicate;
        o.method = method;
        o.hyperparameter = std::move(hp);
        o.declared = declared;
        o.demos_used = r.round;
        o.unique_states = r.unique_states;
        o.sample_efficiency = static_cast<double>(r.unique_states) / S;
        o.policy_optimality = r.policy_optimality;
        return o;
    };

    if (cfg.fixed_rounds) {
        for (std::size_t k = 0; k < cfg.alphas.size(); ++k)
            for (const auto& r : rounds) {
                auto o = base(r, "nevd_curve",
                              detail::hyper({detail::fmt_param("alpha", cfg.alphas[k]),
                                             "demos=" + std::to_string(r.round)}),
                              false);
                o.bound = r.nevd_bound[k];
                o.true_metric = r.true_nevd;
                out.push_back(std::move(o));
            }
        return out;
    }

    auto first_round = [&](auto&& fired) -> const RoundRecord* {
        for (const auto& r : rounds)
            if (fired(r)) return &r;
        return nullptr;
    };

    for (std::size_t k = 0; k < cfg.alphas.size(); ++k) {
        const auto alpha = detail::fmt_param("alpha", cfg.alphas[k]);
        if (cfg.has(Condition::nevd))
            for (double eps : cfg.nevd_thresholds) {
                const auto* hit = first_round([&](const RoundRecord& r) { return r.nevd_certified[k] && r.nevd_bound[k] <= eps; });
                const auto& r = hit ? *hit : rounds.back();
                auto o = base(r, "nevd", detail::hyper({detail::fmt_param("eps", eps), alpha}), hit != nullptr);
                o.bound = r.nevd_bound[k];
                o.true_metric = r.true_nevd;
                o.classification = classify_outcome(o.declared, o.true_metric, eps, Condition::nevd);
                out.push_back(std::move(o));
            }
        if (cfg.has(Condition::piob))
            for (double eps : cfg.piob_thresholds) {
                const auto* hit = first_round([&](const RoundRecord& r) { return r.piob_certified[k] && r.piob_bound[k] >= eps; });
                const auto& r = hit ? *hit : rounds.back();
                auto o = base(r, "piob", detail::hyper({detail::fmt_param("eps", eps), alpha}), hit != nullptr);
                o.bound = r.piob_bound[k];
                o.true_metric = r.true_piob;
                o.classification = classify_outcome(o.declared, o.true_metric, eps, Condition::piob);
                out.push_back(std::move(o));
            }
    }
    if (cfg.has(Condition::convergence))
        for (std::size_t p : cfg.patience) {
            const auto* hit = first_round([&](const RoundRecord& r) { return r.stable_rounds >= p; });
            const auto& r = hit ? *hit : rounds.back();
            for (double eps : cfg.nevd_thresholds) {
                auto o = base(r, "convergence",
                              detail::hyper({"p=" + std::to_string(p), detail::fmt_param("eps", eps)}), hit != nullptr);
                o.true_metric = r.true_nevd;
                o.classification = classify_outcome(o.declared, o.true_metric, eps, Condition::nevd);
                out.push_back(std::move(o));
            }
        }
    return out;
}

inline std::vector<ReplicateOutcome> evaluate_validation(const ExperimentConfig& cfg, std::size_t replicate,
                                                         std::size_t num_states, std::size_t interval,
                                                         const std::vector<ValidationRecord>& rounds) {
    std::vector<ReplicateOutcome> out;
    if (rounds.empty()) return out;
    const auto& r = rounds.back();
    for (double eps : cfg.nevd_thresholds) {
        ReplicateOutcome o;
        o.replicate = replicate;
        o.method = "validation";
        o.hyperparameter = detail::hyper({"i=" + std::to_string(interval), detail::fmt_param("eps", eps)});
        o.declared = r.sufficient;
        o.demos_used = r.round;
        o.unique_states = r.unique_states;
        o.sample_efficiency = static_cast<double>(r.unique_states) / static_cast<double>(num_states);
        o.policy_optimality = r.policy_optimality;
        o.true_metric = r.true_nevd;
        o.classification = classify_outcome(o.declared, o.true_metric, eps, Condition::nevd);
        out.push_back(std::move(o));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation

struct ResultRow {
    std::string method;
    std::string hyperparameter;
    std::string metric;
    double mean = 0.0;
    double stderr_ = 0.0;
    std::size_t n = 0;

    friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

class ResultsTable {
public:
    void add(ResultRow row) { rows_.push_back(std::move(row)); }
    const std::vector<ResultRow>& rows() const noexcept { return rows_; }
    bool empty() const noexcept { return rows_.empty(); }

    const ResultRow* find(const std::string& method, const std::string& hyperparameter,
                          const std::string& metric) const {
        for (const auto& r : rows_)
            if (r.method == method && r.hyperparameter == hyperparameter && r.metric == metric) return &r;
        return nullptr;
    }
    double value(const std::string& method, const std::string& hyperparameter, const std::string& metric) const {
        const auto* r = find(method, hyperparameter, metric);
        if (!r) throw NotFound("no result for " + method + " / " + hyperparameter + " / " + metric);
        return r->mean;
    }

    friend bool operator==(const ResultsTable&, const ResultsTable&) = default;

private:
    std::vector<ResultRow> rows_;
};

struct MeanStderr {
    double mean = 0.0, stderr_ = 0.0;
};

/// Mean and sample standard deviation / sqrt(n).
inline MeanStderr mean_stderr(const std::vector<double>& xs) {
    if (xs.empty()) return {};
    const double n = static_cast<double>(xs.size());
    double m = 0.0;
    for (double x : xs) m += x;
    m /= n;
    if (xs.size() < 2) return {m, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

namespace detail {

/// Jackknife standard error of a statistic of the confusion counts.
template <class Stat>
std::optional<MeanStderr> jackknife(const std::vector<Classification>& cs, Stat stat) {
    ConfusionCounts all;
    for (auto c : cs) all.add(c);
    const auto full = stat(all);
    if (!full) return std::nullopt;
    if (cs.size() < 2) return MeanStderr{*full, 0.0};
    std::vector<double> loo;
    loo.reserve(cs.size());
    for (auto c : cs) {
        auto counts = all;
        counts.remove(c);
        if (auto v = stat(counts)) loo.push_back(*v);
    }
    if (loo.size() < 2) return MeanStderr{*full, 0.0};
    double m = 0.0;
    for (double x : loo) m += x;
    m /= static_cast<double>(loo.size());
    double ss = 0.0;
    for (double x : loo) ss += (x - m) * (x - m);
    const double n = static_cast<double>(loo.size());
    return MeanStderr{*full, std::sqrt((n - 1.0) / n * ss)};
}

} // namespace detail

/// Groups outcomes by (method, hyperparameter) in first-seen order.
inline ResultsTable aggregate(const std::vector<ReplicateOutcome>& outcomes) {
    std::vector<std::pair<std::string, std::string>> keys;
    std::map<std::pair<std::string, std::string>, std::vector<const ReplicateOutcome*>> groups;
    for (const auto& o : outcomes) {
        auto key = std::make_pair(o.method, o.hyperparameter);
        auto [it, inserted] = groups.try_emplace(key);
        if (inserted) keys.push_back(key);
        it->second.push_back(&o);
    }

    ResultsTable table;
    for (const auto& key : keys) {
        const auto& g = groups.at(key);
        auto add = [&](const std::string& metric, const std::vector<double>& xs) {
            if (xs.empty()) return;
            const auto ms = mean_stderr(xs);
            table.add({key.first, key.second, metric, ms.mean, ms.stderr_, xs.size()});
        };
        auto collect = [&](auto&& f) {
            std::vector<double> xs;
            for (const auto* o : g)
                if (auto v = f(*o)) xs.push_back(*v);
            return xs;
        };
        using Opt = std::optional<double>;

        add("sample_efficiency", collect([](const ReplicateOutcome& o) -> Opt { return o.sample_efficiency; }));
        add("demos_used", collect([](const ReplicateOutcome& o) -> Opt { return static_cast<double>(o.demos_used); }));
        add("policy_optimality", collect([](const ReplicateOutcome& o) -> Opt { return o.policy_optimality; }));
        add("true_metric", collect([](const ReplicateOutcome& o) -> Opt {
                return std::isfinite(o.true_metric) ? Opt(o.true_metric) : std::nullopt;
            }));
        add("bound", collect([](const ReplicateOutcome& o) -> Opt { return o.has_bound() ? Opt(o.bound) : std::nullopt; }));
        add("bound_error", collect([](const ReplicateOutcome& o) -> Opt {
                return o.has_bound() && std::isfinite(o.true_metric) ? Opt(o.bound_error()) : std::nullopt;
            }));
        const bool piob = key.first == "piob";
        add("accuracy", collect([&](const ReplicateOutcome& o) -> Opt {
                if (!o.has_bound() || !std::isfinite(o.true_metric)) return std::nullopt;
                return piob ? (o.bound <= o.true_metric ? 1.0 : 0.0) : (o.bound >= o.true_metric ? 1.0 : 0.0);
            }));
        add("declared", collect([](const ReplicateOutcome& o) -> Opt {
                return o.classification ? Opt(o.declared ? 1.0 : 0.0) : std::nullopt;
            }));

        std::vector<Classification> cs;
        for (const auto* o : g)
            if (o->classification) cs.push_back(*o->classification);
        if (cs.empty()) continue;
        auto add_rate = [&](const std::string& metric, auto stat) {
            if (auto r = detail::jackknife(cs, stat)) table.add({key.first, key.second, metric, r->mean, r->stderr_, cs.size()});
        };
        add_rate("f1", [](const ConfusionCounts& c) { return c.f1(); });
        add_rate("tpr", [](const ConfusionCounts& c) { return c.tpr(); });
        add_rate("fpr", [](const ConfusionCounts& c) { return c.fpr(); });
    }
    return table;
}

// ---------------------------------------------------------------------------
// Runner

struct ReplicateFailure {
    std::size_t replicate = 0;
    std::string message;
};

struct ExperimentResults {
    ExperimentConfig config;
    std::vector<ReplicateOutcome> outcomes;
    std::vector<ReplicateFailure> failures;
    ResultsTable table;
};

/// All outcomes for one replicate.
inline std::vector<ReplicateOutcome> run_replicate(const ExperimentConfig& cfg, std::size_t replicate) {
    const auto seeds = replicate_seeds(cfg.seed, replicate);
    const auto env = make_environment(cfg, seeds.environment);
    const std::size_t S = env.mdp.num_states();
    std::vector<ReplicateOutcome> out;
    const bool trajectory_methods =
        cfg.fixed_rounds || cfg.has(Condition::nevd) || cfg.has(Condition::piob) || cfg.has(Condition::convergence);
    if (trajectory_methods) out = evaluate_trajectory(cfg, replicate, S, run_trajectory(cfg, env, seeds));
    if (!cfg.fixed_rounds && cfg.has(Condition::validation))
        for (std::size_t i : cfg.intervals) {
            auto v = evaluate_validation(cfg, replicate, S, i, run_validation(cfg, env, seeds, i));
            out.insert(out.end(), v.begin(), v.end());
        }
    return out;
}

/// Runs all replicates on `jobs` worker threads. A replicate that throws is
/// recorded as a failure and the rest continue.
inline ExperimentResults run_replicates(const ExperimentConfig& cfg, std::size_t jobs = 1,
                                        const std::function<void(std::size_t)>& on_done = {}) {
    cfg.validate();
    jobs = std::max<std::size_t>(1, std::min(jobs, cfg.num_replicates));
    std::vector<std::vector<ReplicateOutcome>> per(cfg.num_replicates);
    std::vector<std::optional<std::string>> errors(cfg.num_replicates);
    std::atomic<std::size_t> next{0};
    std::mutex progress_mutex;

    auto worker = [&] {
        for (std::size_t r = next++; r < cfg.num_replicates; r = next++) {
            try {
                per[r] = run_replicate(cfg, r);
            } catch (const std::exception& e) {
                errors[r] = e.what();
            }
            if (on_done) {
                std::lock_guard lock(progress_mutex);
                on_done(r);
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
        worker();
    }

    ExperimentResults res;
    res.config = cfg;
    for (std::size_t r = 0; r < cfg.num_replicates; ++r) {
        if (errors[r]) res.failures.push_back({r, *errors[r]});
        res.outcomes.insert(res.outcomes.end(), per[r].begin(), per[r].end());
    }
    res.table = aggregate(res.outcomes);
    return res;
}

// ---------------------------------------------------------------------------
// Export

enum class ExportFormat { csv, json };

inline constexpr const char* kResultsCsvHeader = "method,hyperparameter,metric,mean,stderr,n";

inline void write_results(std::ostream& os, const ResultsTable& table, ExportFormat format) {
    if (format == ExportFormat::csv) {
        os << kResultsCsvHeader << '\n';
        for (const auto& r : table.rows())
            os << r.method << ',' << r.hyperparameter << ',' << r.metric << ',' << detail::format_double(r.mean) << ','
               << detail::format_double(r.stderr_) << ',' << r.n << '\n';
        return;
    }
    Json rows = Json::array();
    for (const auto& r : table.rows())
        rows.push_back({{"method", r.method},
                        {"hyperparameter", r.hyperparameter},
                        {"metric", r.metric},
                        {"mean", r.mean},
                        {"stderr", r.stderr_},
                        {"n", r.n}});
    os << rows.dump(2) << '\n';
}

inline ResultsTable read_results(std::istream& is, ExportFormat format) {
    ResultsTable table;
    if (format == ExportFormat::json) {
        Json rows;
        try {
            is >> rows;
        } catch (const nlohmann::json::exception& e) {
            throw InvalidInput("results", e.what());
        }
        for (const auto& r : rows)
            table.add({r.at("method").get<std::string>(), r.at("hyperparameter").get<std::string>(),
                       r.at("metric").get<std::string>(), r.at("mean").get<double>(), r.at("stderr").get<double>(),
                       r.at("n").get<std::size_t>()});
        return table;
    }
    std::string line;
    if (!std::getline(is, line) || line != kResultsCsvHeader) throw InvalidInput("results", "unexpected header");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 6) throw InvalidInput("results", "expected 6 columns");
        table.add({f[0], f[1], f[2], std::stod(f[3]), std::stod(f[4]), std::stoull(f[5])});
    }
    return table;
}

inline void export_results(const ResultsTable& table, const std::string& path, ExportFormat format) {
    if (table.empty()) throw InvalidInput("table", "nothing to export");
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    write_results(os, table, format);
    if (!os) throw std::runtime_error("failed writing " + path);
}

inline constexpr const char* kOutcomesCsvHeader =
    "replicate,method,hyperparameter,declared,demos_used,unique_states,sample_efficiency,bound,true_metric,"
    "policy_optimality,classification";

inline void write_outcomes_csv(std::ostream& os, const std::vector<ReplicateOutcome>& outcomes) {
    os << kOutcomesCsvHeader << '\n';
    for (const auto& o : outcomes)
        os << o.replicate << ',' << o.method << ',' << o.hyperparameter << ',' << o.declared << ',' << o.demos_used
           << ',' << o.unique_states << ',' << detail::format_double(o.sample_efficiency) << ','
           << detail::format_double(o.bound) << ',' << detail::format_double(o.true_metric) << ','
           << detail::format_double(o.policy_optimality) << ','
           << (o.classification ? to_string(*o.classification) : std::string()) << '\n';
}

} // namespace suffice
