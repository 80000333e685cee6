#pragma once

// JSON documents for MDPs, demonstrations, configs and session traces, plus
// the delimited-text trace format.

#include "suffice/birl.hpp"
#include "suffice/environments.hpp"
#include "suffice/errors.hpp"
#include "suffice/mdp.hpp"
#include "suffice/risk.hpp"
#include "suffice/sufficiency.hpp"

#include <json.hpp>

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace suffice {

using Json = nlohmann::json;

namespace detail {

/// NaN and infinities become JSON null.
inline Json number_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

inline double number_from(const Json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

template <class T>
T field_or(const Json& j, const char* key, T fallback) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return fallback;
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(key, e.what());
    }
}

/// Shortest text that reads back to the same double.
inline std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    std::ostringstream os;
    os.precision(17);
    os << x;
    return os.str();
}

} // namespace detail

// ---------------------------------------------------------------------------
// MDP

inline Json to_json(const TabularMdp& mdp) {
    Json transitions = Json::array();
    for (const auto& t : mdp.triples()) transitions.push_back({t.state, t.action, t.next, t.prob});
    return {{"num_states", mdp.num_states()},         {"num_actions", mdp.num_actions()},
            {"discount", mdp.discount()},             {"initial_dist", mdp.initial_dist()},
            {"terminal_states", mdp.terminal_states()}, {"transitions", std::move(transitions)},
            {"features", mdp.feature_rows()}};
}

inline TabularMdp mdp_from_json(const Json& j) {
    try {
        std::vector<TransitionTriple> triples;
        for (const auto& t : j.at("transitions"))
            triples.push_back({t.at(0).get<std::size_t>(), t.at(1).get<std::size_t>(), t.at(2).get<std::size_t>(),
                               t.at(3).get<double>()});
        return TabularMdp(j.at("num_states").get<std::size_t>(), j.at("num_actions").get<std::size_t>(), triples,
                          j.at("features").get<std::vector<std::vector<double>>>(), j.at("discount").get<double>(),
                          j.at("initial_dist").get<std::vector<double>>(),
                          detail::field_or(j, "terminal_states", std::vector<std::size_t>{}));
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("mdp", e.what());
    }
}

inline Json to_json(const Demonstration& d) {
    Json out = Json::array();
    for (const auto& sa : d.pairs) out.push_back({sa.state, sa.action});
    return out;
}

inline Demonstration demonstration_from_json(const Json& j) {
    Demonstration d;
    try {
        for (const auto& p : j) d.push_back({p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>()});
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("demos", e.what());
    }
    return d;
}

inline Json to_json(const EnvironmentLayout& l) {
    Json j{{"kind", to_string(l.kind)},
           {"rows", l.rows},
           {"cols", l.cols},
           {"action_names", l.action_names},
           {"feature_names", l.feature_names},
           {"feature_class", l.feature_class}};
    j["goal_state"] = l.goal_state ? Json(*l.goal_state) : Json(nullptr);
    return j;
}

inline Json to_json(const Environment& env) {
    return {{"mdp", to_json(env.mdp)}, {"true_weights", env.true_weights.values()}, {"layout", to_json(env.layout)}};
}

inline Environment environment_from_json(const Json& j) {
    try {
        Environment env{mdp_from_json(j.at("mdp")),
                        RewardWeights(j.at("true_weights").get<std::vector<double>>()),
                        {}};
        const auto& l = j.at("layout");
        env.layout.kind = l.at("kind").get<std::string>() == "driving" ? EnvironmentKind::driving
                                                                       : EnvironmentKind::gridworld;
        env.layout.rows = l.at("rows").get<std::size_t>();
        env.layout.cols = l.at("cols").get<std::size_t>();
        env.layout.action_names = l.at("action_names").get<std::vector<std::string>>();
        env.layout.feature_names = l.at("feature_names").get<std::vector<std::string>>();
        env.layout.feature_class = l.at("feature_class").get<std::vector<int>>();
        if (l.contains("goal_state") && !l.at("goal_state").is_null())
            env.layout.goal_state = l.at("goal_state").get<std::size_t>();
        return env;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("environment", e.what());
    }
}

// ---------------------------------------------------------------------------
// Configs

inline Json to_json(const RiskConfig& r) {
    const char* method = r.index_method == IndexMethod::exact_binomial    ? "exact_binomial"
                         : r.index_method == IndexMethod::gaussian_approx ? "gaussian_approx"
                                                                          : "automatic";
    return {{"alpha", r.alpha},
            {"delta", r.delta},
            {"index_method", method},
            {"degenerate_tolerance", r.degenerate_tolerance}};
}

inline RiskConfig risk_config_from_json(const Json& j, RiskConfig r = {}) {
    r.alpha = detail::field_or(j, "alpha", r.alpha);
    r.delta = detail::field_or(j, "delta", r.delta);
    r.degenerate_tolerance = detail::field_or(j, "degenerate_tolerance", r.degenerate_tolerance);
    const auto m = detail::field_or<std::string>(j, "index_method", "");
    if (m == "exact_binomial")
        r.index_method = IndexMethod::exact_binomial;
    else if (m == "gaussian_approx")
        r.index_method = IndexMethod::gaussian_approx;
    else if (m == "automatic")
        r.index_method = IndexMethod::automatic;
    else if (!m.empty())
        throw InvalidInput("index_method", "unknown index method '" + m + "'");
    r.validate();
    return r;
}

inline Json to_json(const McmcConfig& m) {
    return {{"num_samples", m.num_samples}, {"burn_in", m.burn_in},
            {"skip", m.skip},               {"beta", m.beta},
            {"initial_step", m.initial_step}, {"target_accept", m.target_accept},
            {"adapt_window", m.adapt_window}, {"start_candidates", m.start_candidates},
            {"tolerance", m.tolerance},
            {"seed", m.seed}};
}

inline McmcConfig mcmc_config_from_json(const Json& j, McmcConfig m = {}) {
    m.num_samples = detail::field_or(j, "num_samples", m.num_samples);
    m.burn_in = detail::field_or(j, "burn_in", m.burn_in);
    m.skip = detail::field_or(j, "skip", m.skip);
    m.beta = detail::field_or(j, "beta", m.beta);
    m.initial_step = detail::field_or(j, "initial_step", m.initial_step);
    m.target_accept = detail::field_or(j, "target_accept", m.target_accept);
    m.adapt_window = detail::field_or(j, "adapt_window", m.adapt_window);
    m.start_candidates = detail::field_or(j, "start_candidates", m.start_candidates);
    m.tolerance = detail::field_or(j, "tolerance", m.tolerance);
    m.seed = detail::field_or(j, "seed", m.seed);
    m.validate();
    return m;
}

inline GridworldConfig gridworld_config_from_json(const Json& j, GridworldConfig g = {}) {
    g.rows = detail::field_or(j, "rows", g.rows);
    g.cols = detail::field_or(j, "cols", g.cols);
    g.num_features = detail::field_or(j, "num_features", g.num_features);
    if (j.contains("goal_state") && !j.at("goal_state").is_null()) g.goal_state = j.at("goal_state").get<std::size_t>();
    g.seed = detail::field_or(j, "seed", g.seed);
    g.discount = detail::field_or(j, "discount", g.discount);
    return g;
}

inline DrivingConfig driving_config_from_json(const Json& j, DrivingConfig d = {}) {
    d.road_length = detail::field_or(j, "road_length", d.road_length);
    d.num_lanes = detail::field_or(j, "num_lanes", d.num_lanes);
    d.obstacle_density = detail::field_or(j, "obstacle_density", d.obstacle_density);
    d.dirt_density = detail::field_or(j, "dirt_density", d.dirt_density);
    d.seed = detail::field_or(j, "seed", d.seed);
    d.discount = detail::field_or(j, "discount", d.discount);
    return d;
}

inline DemonstratorConfig demonstrator_config_from_json(const Json& j, DemonstratorConfig d = {}) {
    const auto mode = detail::field_or<std::string>(j, "mode", "");
    if (mode == "optimal")
        d.mode = DemonstratorConfig::Mode::optimal;
    else if (mode == "boltzmann")
        d.mode = DemonstratorConfig::Mode::boltzmann;
    else if (mode == "noisy")
        d.mode = DemonstratorConfig::Mode::noisy;
    else if (!mode.empty())
        throw InvalidInput("mode", "unknown demonstrator mode '" + mode + "'");
    d.beta = detail::field_or(j, "beta", d.beta);
    d.noise = detail::field_or(j, "noise", d.noise);
    d.seed = detail::field_or(j, "seed", d.seed);
    return d;
}

inline Json to_json(const DemonstratorConfig& d) {
    const char* mode = d.mode == DemonstratorConfig::Mode::optimal     ? "optimal"
                       : d.mode == DemonstratorConfig::Mode::boltzmann ? "boltzmann"
                                                                       : "noisy";
    return {{"mode", mode}, {"beta", d.beta}, {"noise", d.noise}, {"seed", d.seed}};
}

inline Json to_json(const SufficiencyConfig& c) {
    Json j{{"condition", to_string(c.condition)},
           {"epsilon", c.epsilon},
           {"patience", c.patience},
           {"interval", c.interval},
           {"risk", to_json(c.risk)},
           {"mcmc", to_json(c.mcmc)},
           {"selection", to_string(c.selection)}};
    j["max_demos"] = c.max_demos ? Json(*c.max_demos) : Json(nullptr);
    return j;
}

inline SufficiencyConfig sufficiency_config_from_json(const Json& j, SufficiencyConfig c = {}) {
    if (j.contains("condition")) c.condition = condition_from_string(j.at("condition").get<std::string>());
    c.epsilon = detail::field_or(j, "epsilon", c.epsilon);
    c.patience = detail::field_or(j, "patience", c.patience);
    c.interval = detail::field_or(j, "interval", c.interval);
    if (j.contains("risk")) c.risk = risk_config_from_json(j.at("risk"), c.risk);
    if (j.contains("alpha")) c.risk.alpha = j.at("alpha").get<double>();
    if (j.contains("mcmc")) c.mcmc = mcmc_config_from_json(j.at("mcmc"), c.mcmc);
    if (j.contains("selection")) c.selection = selection_from_string(j.at("selection").get<std::string>());
    if (j.contains("max_demos") && !j.at("max_demos").is_null()) c.max_demos = j.at("max_demos").get<std::size_t>();
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Assessments and traces

inline Json to_json(const Assessment& a) {
    return {{"round", a.round},
            {"condition", to_string(a.condition)},
            {"bound", detail::number_or_null(a.bound)},
            {"threshold", a.threshold},
            {"sufficient", a.sufficient},
            {"excluded_samples", a.excluded_samples},
            {"insufficient_samples", a.insufficient_samples},
            {"degenerate", a.degenerate}};
}

inline Assessment assessment_from_json(const Json& j) {
    Assessment a;
    a.round = j.at("round").get<std::size_t>();
    a.condition = condition_from_string(j.at("condition").get<std::string>());
    a.bound = detail::number_from(j.at("bound"));
    a.threshold = j.at("threshold").get<double>();
    a.sufficient = j.at("sufficient").get<bool>();
    a.excluded_samples = j.at("excluded_samples").get<std::size_t>();
    a.insufficient_samples = j.at("insufficient_samples").get<bool>();
    a.degenerate = j.at("degenerate").get<bool>();
    return a;
}

inline Json to_json(const TraceRecord& r) {
    Json j = to_json(r.assessment);
    j["state"] = r.demo.state;
    j["action"] = r.demo.action;
    j["held_out"] = r.held_out;
    j["unique_states"] = r.unique_states;
    return j;
}

inline Json trace_to_json(const std::vector<TraceRecord>& trace) {
    Json out = Json::array();
    for (const auto& r : trace) out.push_back(to_json(r));
    return out;
}

inline std::vector<TraceRecord> trace_from_json(const Json& j) {
    std::vector<TraceRecord> out;
    for (const auto& row : j)
        out.push_back({assessment_from_json(row),
                       {row.at("state").get<std::size_t>(), row.at("action").get<std::size_t>()},
                       row.at("held_out").get<bool>(),
                       row.at("unique_states").get<std::size_t>()});
    return out;
}

inline constexpr const char* kTraceCsvHeader =
    "round,condition,bound,threshold,sufficient,state,action,held_out,unique_states,excluded_samples,"
    "insufficient_samples,degenerate";

inline void write_trace_csv(std::ostream& os, const std::vector<TraceRecord>& trace) {
    os << kTraceCsvHeader << '\n';
    for (const auto& r : trace) {
        const auto& a = r.assessment;
        os << a.round << ',' << to_string(a.condition) << ',' << detail::format_double(a.bound) << ','
           << detail::format_double(a.threshold) << ',' << a.sufficient << ',' << r.demo.state << ','
           << r.demo.action << ',' << r.held_out << ',' << r.unique_states << ',' << a.excluded_samples << ','
           << a.insufficient_samples << ',' << a.degenerate << '\n';
    }
}

inline std::vector<TraceRecord> read_trace_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kTraceCsvHeader) throw InvalidInput("trace", "unexpected header");
    std::vector<TraceRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 12) throw InvalidInput("trace", "expected 12 columns");
        TraceRecord r;
        r.assessment.round = std::stoull(f[0]);
        r.assessment.condition = condition_from_string(f[1]);
        r.assessment.bound = f[2] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[2]);
        r.assessment.threshold = std::stod(f[3]);
        r.assessment.sufficient = f[4] == "1";
        r.demo = {std::stoull(f[5]), std::stoull(f[6])};
        r.held_out = f[7] == "1";
        r.unique_states = std::stoull(f[8]);
        r.assessment.excluded_samples = std::stoull(f[9]);
        r.assessment.insufficient_samples = f[10] == "1";
        r.assessment.degenerate = f[11] == "1";
        out.push_back(r);
    }
    return out;
}

} // namespace suffice
