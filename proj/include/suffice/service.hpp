#pragma once

// Interactive teaching sessions over HTTP. Sessions live in memory and are
// mirrored to an append-only JSON-lines log so a restart can rebuild them by
// replaying every demonstration.

#include "suffice/environments.hpp"
#include "suffice/errors.hpp"
#include "suffice/serialization.hpp"
#include "suffice/sufficiency.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <sstream>
#include <string>

namespace suffice {

enum class SessionStatus { collecting, sufficient, capped };

inline std::string to_string(SessionStatus s) {
    switch (s) {
    case SessionStatus::collecting: return "collecting";
    case SessionStatus::sufficient: return "sufficient";
    case SessionStatus::capped: return "capped";
    }
    return "collecting";
}

/// Append-only JSON-lines event log. An empty path keeps nothing on disk.
class SessionLog {
public:
    SessionLog() = default;
    explicit SessionLog(std::filesystem::path path) : path_(std::move(path)) {
        if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    }

    bool persistent() const noexcept { return !path_.empty(); }

    void append(const Json& event) {
        if (!persistent()) return;
        std::lock_guard lock(mutex_);
        std::ofstream os(path_, std::ios::app);
        if (!os) throw std::runtime_error("cannot append to session log " + path_.string());
        os << event.dump() << '\n';
        os.flush();
        if (!os) throw std::runtime_error("failed writing session log " + path_.string());
    }

    std::vector<Json> read_all() const {
        std::vector<Json> out;
        if (!persistent() || !std::filesystem::exists(path_)) return out;
        std::ifstream is(path_);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                out.push_back(Json::parse(line));
            } catch (const nlohmann::json::exception& e) {
                throw std::runtime_error("session log line " + std::to_string(lineno) + ": " + e.what());
            }
        }
        return out;
    }

private:
    std::filesystem::path path_;
    std::mutex mutex_;
};

/// Session-oriented front end to the teaching loop. Every public method takes
/// and returns JSON documents and reports failures with the exceptions from
/// errors.hpp; the HTTP layer maps those to status codes.
class TeachingService {
public:
    explicit TeachingService(std::filesystem::path log_path = {}) : log_(std::move(log_path)) { replay(); }

    Json create_session(const Json& request) {
        std::shared_ptr<Session> session;
        try {
            session = build_session(request);
        } catch (const nlohmann::json::exception& e) {
            throw InvalidInput("body", e.what());
        }
        session->id = new_id();
        const Json event{{"type", "create"}, {"id", session->id}, {"request", session->request}};
        {
            std::unique_lock lock(sessions_mutex_);
            sessions_.emplace(session->id, session);
        }
        log_.append(event);
        std::lock_guard lock(session->mutex);
        return describe(*session);
    }

    Json submit_demo(const std::string& id, const Json& request) {
        auto session = find(id);
        std::lock_guard lock(session->mutex);
        std::optional<std::string> request_id;
        if (request.contains("request_id") && !request.at("request_id").is_null()) {
            if (!request.at("request_id").is_string())
                throw InvalidInput("request_id", "must be a string");
            request_id = request.at("request_id").get<std::string>();
            if (auto it = session->responses.find(*request_id); it != session->responses.end()) return it->second;
        }
        if (session->status != SessionStatus::collecting)
            throw Conflict("session is " + to_string(session->status) + "; no more demonstrations accepted");
        const StateAction sa{index_field(request, "state", session->learner->mdp().num_states()),
                             index_field(request, "action", session->learner->mdp().num_actions())};
        Json response = apply_demo(*session, sa);
        if (request_id) session->responses.emplace(*request_id, response);

        Json event{{"type", "demo"},
                   {"id", session->id},
                   {"state", sa.state},
                   {"action", sa.action},
                   {"assessment", response.at("assessment")}};
        event["request_id"] = request_id ? Json(*request_id) : Json(nullptr);
        log_.append(event);
        return response;
    }

    Json get_assessments(const std::string& id) {
        auto session = find(id);
        std::lock_guard lock(session->mutex);
        Json list = Json::array();
        for (const auto& a : session->learner->assessments()) list.push_back(to_json(a));
        return {{"id", id}, {"status", to_string(session->status)}, {"assessments", list}};
    }

    Json get_policy(const std::string& id) {
        auto session = find(id);
        std::lock_guard lock(session->mutex);
        const auto batch = session->learner->batch();
        if (!batch) throw PreconditionFailed("no demonstrations processed yet");
        const auto actions = batch->map_policy.actions();
        Json names = Json::array();
        for (auto a : actions) names.push_back(session->env.layout.action_names.at(a));
        return {{"id", id},
                {"actions", actions},
                {"action_names", names},
                {"values", batch->map_values},
                {"map_weights", batch->map_weights.values()}};
    }

    Json submit_rating(const std::string& id, const Json& request) {
        auto session = find(id);
        std::lock_guard lock(session->mutex);
        if (!request.contains("rating") || !request.at("rating").is_number_integer())
            throw InvalidInput("rating", "must be an integer from 1 to 5");
        const auto rating = request.at("rating").get<long long>();
        if (rating < 1 || rating > 5) throw InvalidInput("rating", "must be an integer from 1 to 5");
        if (session->status == SessionStatus::collecting)
            throw Conflict("rating is only accepted once teaching has stopped");
        if (session->rating) throw Conflict("session already rated");
        session->rating = static_cast<int>(rating);
        log_.append({{"type", "rating"}, {"id", id}, {"rating", rating}});
        return {{"id", id}, {"rating", rating}, {"status", to_string(session->status)}};
    }

    /// Full session record: environment, demos, assessments and rating.
    Json export_session(const std::string& id) {
        auto session = find(id);
        std::lock_guard lock(session->mutex);
        Json j = describe(*session);
        j["demos"] = to_json(session->learner->demos());
        j["trace"] = trace_to_json(session->learner->trace());
        j["rating"] = session->rating ? Json(*session->rating) : Json(nullptr);
        return j;
    }

    std::vector<std::string> session_ids() const {
        std::shared_lock lock(sessions_mutex_);
        std::vector<std::string> out;
        for (const auto& [id, _] : sessions_) out.push_back(id);
        return out;
    }

private:
    struct Session {
        std::string id;
        Json request; ///< normalized creation request, enough to rebuild the session
        Environment env;
        std::unique_ptr<LearnerSession> learner;
        SessionStatus status = SessionStatus::collecting;
        std::optional<int> rating;
        std::map<std::string, Json> responses; ///< by request_id
        std::mutex mutex;
    };

    static std::size_t index_field(const Json& j, const char* key, std::size_t limit) {
        if (!j.contains(key) || !j.at(key).is_number_integer()) throw InvalidInput(key, "must be an integer");
        const auto v = j.at(key).get<long long>();
        if (v < 0 || static_cast<unsigned long long>(v) >= limit)
            throw InvalidInput(key, "must lie in [0, " + std::to_string(limit) + ")");
        return static_cast<std::size_t>(v);
    }

    static std::shared_ptr<Session> build_session(const Json& request) {
        if (!request.is_object()) throw InvalidInput("body", "expected a JSON object");
        auto s = std::make_shared<Session>();
        const Json env_spec = request.value("environment", Json::object());
        if (!env_spec.is_object()) throw InvalidInput("environment", "expected an object");
        const auto kind = env_spec.value("kind", std::string("gridworld"));
        try {
            if (kind == "gridworld")
                s->env = generate_gridworld(gridworld_config_from_json(env_spec));
            else if (kind == "driving")
                s->env = generate_driving(driving_config_from_json(env_spec));
            else
                throw InvalidInput("environment.kind", "must be 'gridworld' or 'driving'");
        } catch (const nlohmann::json::exception& e) {
            throw InvalidInput("environment", e.what());
        }
        if (request.contains("weights") && !request.at("weights").is_null()) {
            std::vector<double> w;
            try {
                w = request.at("weights").get<std::vector<double>>();
            } catch (const nlohmann::json::exception&) {
                throw InvalidInput("weights", "must be an array of numbers");
            }
            if (w.size() != s->env.mdp.num_features())
                throw InvalidInput("weights", "need " + std::to_string(s->env.mdp.num_features()) + " entries");
            s->env.true_weights = RewardWeights(std::move(w));
        }

        SufficiencyConfig cfg;
        const Json cond = request.value("condition", Json::object());
        if (!cond.is_object()) throw InvalidInput("condition", "expected an object");
        try {
            cfg = sufficiency_config_from_json(cond, cfg);
        } catch (const nlohmann::json::exception& e) {
            throw InvalidInput("condition", e.what());
        }
        if (cfg.condition == Condition::piob)
            throw InvalidInput("condition.condition", "sessions support nevd, convergence or validation");
        cfg.selection = Selection::passive;
        cfg.mcmc.seed = request.value("seed", static_cast<std::uint64_t>(env_spec.value("seed", 0ULL)));

        s->learner = std::make_unique<LearnerSession>(s->env.mdp, cfg);
        s->request = {{"environment", env_spec},
                      {"weights", s->env.true_weights.values()},
                      {"condition", to_json(cfg)},
                      {"seed", cfg.mcmc.seed}};
        return s;
    }

    static Json describe(const Session& s) {
        const auto& l = s.env.layout;
        Json cells = Json::array();
        for (std::size_t st = 0; st < s.env.mdp.num_states(); ++st)
            cells.push_back({{"state", st},
                             {"row", l.cols ? st / l.cols : 0},
                             {"col", l.cols ? st % l.cols : st},
                             {"feature_class", l.feature_class.at(st)},
                             {"terminal", s.env.mdp.is_terminal(st)}});
        Json env = to_json(l);
        env["num_states"] = s.env.mdp.num_states();
        env["num_actions"] = s.env.mdp.num_actions();
        env["weights"] = s.env.true_weights.values();
        env["cells"] = std::move(cells);
        return {{"id", s.id},
                {"status", to_string(s.status)},
                {"config", s.request.at("condition")},
                {"environment", std::move(env)}};
    }

    Json apply_demo(Session& s, StateAction sa) {
        const auto outcome = s.learner->add_demo(sa);
        if (outcome.assessment.sufficient)
            s.status = SessionStatus::sufficient;
        else if (s.learner->at_cap())
            s.status = SessionStatus::capped;
        const auto batch = s.learner->batch();
        return {{"assessment", to_json(outcome.assessment)},
                {"status", to_string(s.status)},
                {"held_out", outcome.held_out},
                {"progress",
                 {{"mcmc_iterations", outcome.posterior_refreshed ? s.learner->config().mcmc.chain_length() : 0},
                  {"proposals", outcome.posterior_refreshed && batch ? batch->proposals : 0}}}};
    }

    std::shared_ptr<Session> find(const std::string& id) const {
        std::shared_lock lock(sessions_mutex_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
        return it->second;
    }

    std::string new_id() {
        std::lock_guard lock(id_mutex_);
        for (;;) {
            std::ostringstream os;
            os << std::hex;
            os.width(16);
            os.fill('0');
            os << id_rng_();
            std::shared_lock slock(sessions_mutex_);
            if (!sessions_.count(os.str())) return os.str();
        }
    }

    /// Rebuilds sessions from the log, re-running each round and checking the
    /// result against the recorded assessment.
    void replay() {
        for (const auto& ev : log_.read_all()) {
            const auto type = ev.at("type").get<std::string>();
            const auto id = ev.at("id").get<std::string>();
            if (type == "create") {
                auto s = build_session(ev.at("request"));
                s->id = id;
                sessions_.emplace(id, std::move(s));
                continue;
            }
            auto it = sessions_.find(id);
            if (it == sessions_.end()) throw std::runtime_error("session log references unknown session " + id);
            auto& s = *it->second;
            if (type == "demo") {
                Json response = apply_demo(s, {ev.at("state").get<std::size_t>(), ev.at("action").get<std::size_t>()});
                if (!(assessment_from_json(response.at("assessment")) == assessment_from_json(ev.at("assessment"))))
                    throw std::runtime_error("replayed round diverged from the log for session " + id);
                if (ev.contains("request_id") && !ev.at("request_id").is_null())
                    s.responses.emplace(ev.at("request_id").get<std::string>(), std::move(response));
            } else if (type == "rating") {
                s.rating = ev.at("rating").get<int>();
            } else {
                throw std::runtime_error("unknown session log event '" + type + "'");
            }
        }
    }

    SessionLog log_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::mutex id_mutex_;
    std::mt19937_64 id_rng_{std::random_device{}()};
};

// ---------------------------------------------------------------------------
// HTTP binding

namespace detail {

inline void send_json(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message,
                       const std::string& field = {}) {
    Json body{{"code", code}, {"message", message}};
    if (!field.empty()) body["field"] = field;
    send_json(res, status, body);
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
    try {
        f();
    } catch (const InvalidInput& e) {
        send_error(res, 400, "validation_error", e.what(), e.field());
    } catch (const NotFound& e) {
        send_error(res, 404, "not_found", e.what());
    } catch (const Conflict& e) {
        send_error(res, 409, "conflict", e.what());
    } catch (const PreconditionFailed& e) {
        send_error(res, 412, "precondition_failed", e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
    }
}

inline Json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return Json::object();
    try {
        return Json::parse(req.body);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("body", std::string("malformed JSON: ") + e.what());
    }
}

} // namespace detail

/// Registers the /v1 routes (and an unversioned /healthz) on `server`.
inline void mount_routes(httplib::Server& server, TeachingService& service) {
    using httplib::Request;
    using httplib::Response;
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    auto health = [](const Request&, Response& res) { detail::send_json(res, 200, {{"status", "ok"}}); };
    server.Get("/healthz", health);
    server.Get("/v1/healthz", health);

    server.Post("/v1/sessions", [&service](const Request& req, Response& res) {
        detail::guarded(res, [&] { detail::send_json(res, 201, service.create_session(detail::parse_body(req))); });
    });
    server.Post(R"(/v1/sessions/([0-9a-f]+)/demos)", [&service](const Request& req, Response& res) {
        detail::guarded(res, [&] {
            detail::send_json(res, 200, service.submit_demo(req.matches[1], detail::parse_body(req)));
        });
    });
    server.Get(R"(/v1/sessions/([0-9a-f]+)/assessments)", [&service](const Request& req, Response& res) {
        detail::guarded(res, [&] { detail::send_json(res, 200, service.get_assessments(req.matches[1])); });
    });
    server.Get(R"(/v1/sessions/([0-9a-f]+)/policy)", [&service](const Request& req, Response& res) {
        detail::guarded(res, [&] { detail::send_json(res, 200, service.get_policy(req.matches[1])); });
    });
    server.Post(R"(/v1/sessions/([0-9a-f]+)/rating)", [&service](const Request& req, Response& res) {
        detail::guarded(res, [&] {
            detail::send_json(res, 200, service.submit_rating(req.matches[1], detail::parse_body(req)));
        });
    });
    server.Get(R"(/v1/sessions/([0-9a-f]+))", [&service](const Request& req, Response& res) {
        detail::guarded(res, [&] { detail::send_json(res, 200, service.export_session(req.matches[1])); });
    });
    server.set_error_handler([](const Request&, Response& res) {
        if (res.body.empty()) detail::send_error(res, res.status, "not_found", "no such route");
    });
}

/// Listen port from SUFFICE_PORT, falling back to 8080.
inline int default_port() {
    if (const char* p = std::getenv("SUFFICE_PORT")) {
        try {
            const int port = std::stoi(p);
            if (port > 0 && port < 65536) return port;
        } catch (const std::exception&) {
        }
        throw InvalidInput("SUFFICE_PORT", "not a valid port number");
    }
    return 8080;
}

} // namespace suffice
