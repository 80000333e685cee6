#include <suffice/service.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <thread>

using namespace suffice;

namespace {

Json quick_request(std::uint64_t seed = 3, Json condition = Json::object()) {
    condition["mcmc"] = {{"num_samples", 150}, {"burn_in", 50}, {"skip", 2}};
    return {{"environment", {{"kind", "gridworld"}, {"seed", seed}}}, {"condition", condition}, {"seed", seed}};
}

std::filesystem::path temp_log(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("suffice_test_" + name + ".jsonl");
    std::filesystem::remove(p);
    return p;
}

Json without_id(Json j) {
    j.erase("id");
    return j;
}

} // namespace

TEST(TeachingService, CreateDescribesTheGrid) {
    TeachingService svc;
    const auto s = svc.create_session(quick_request());
    EXPECT_EQ(s.at("id").get<std::string>().size(), 16u);
    EXPECT_EQ(s.at("status"), "collecting");
    EXPECT_EQ(s.at("environment").at("cells").size(), 25u);
    EXPECT_EQ(s.at("environment").at("num_actions"), 4);
    EXPECT_EQ(s.at("config").at("condition"), "nevd");
    EXPECT_EQ(without_id(svc.create_session(quick_request())), without_id(s));
    EXPECT_NE(without_id(svc.create_session(quick_request(4))), without_id(s));
}

TEST(TeachingService, RejectsInvalidRequests) {
    TeachingService svc;
    EXPECT_THROW(svc.create_session(Json::array()), InvalidInput);
    EXPECT_THROW(svc.create_session({{"environment", {{"kind", "moon"}}}}), InvalidInput);
    EXPECT_THROW(svc.create_session({{"condition", {{"condition", "piob"}}}}), InvalidInput);
    EXPECT_THROW(svc.create_session({{"condition", {{"epsilon", "big"}}}}), InvalidInput);
    EXPECT_THROW(svc.create_session({{"weights", {1.0, 2.0}}}), InvalidInput);
    EXPECT_THROW(svc.submit_demo("0123456789abcdef", {{"state", 0}, {"action", 0}}), NotFound);

    const auto id = svc.create_session(quick_request()).at("id").get<std::string>();
    EXPECT_THROW(svc.submit_demo(id, {{"state", 25}, {"action", 0}}), InvalidInput);
    EXPECT_THROW(svc.submit_demo(id, {{"state", -1}, {"action", 0}}), InvalidInput);
    EXPECT_THROW(svc.submit_demo(id, {{"state", 0}}), InvalidInput);
    EXPECT_THROW(svc.submit_demo(id, {{"state", 0}, {"action", 0}, {"request_id", 5}}), InvalidInput);
    EXPECT_THROW(svc.get_policy(id), PreconditionFailed);
    EXPECT_THROW(svc.submit_rating(id, {{"rating", 3}}), Conflict);
}

TEST(TeachingService, CustomWeightsAreNormalized) {
    TeachingService svc;
    auto req = quick_request();
    req["weights"] = {3.0, 0.0, 0.0, 4.0};
    const auto w = svc.create_session(req).at("environment").at("weights").get<std::vector<double>>();
    EXPECT_NEAR(w[0], 0.6, 1e-12);
    EXPECT_NEAR(w[3], 0.8, 1e-12);
}

TEST(TeachingService, RequestIdMakesSubmissionIdempotent) {
    TeachingService svc;
    const auto id = svc.create_session(quick_request()).at("id").get<std::string>();
    const auto a = svc.submit_demo(id, {{"state", 0}, {"action", 1}, {"request_id", "r1"}});
    const auto b = svc.submit_demo(id, {{"state", 0}, {"action", 1}, {"request_id", "r1"}});
    EXPECT_EQ(a, b);
    EXPECT_EQ(svc.get_assessments(id).at("assessments").size(), 1u);
    EXPECT_EQ(a.at("progress").at("mcmc_iterations"), 50 + 2 * 150);
    EXPECT_EQ(svc.get_policy(id).at("actions").size(), 25u);
}

TEST(TeachingService, CapThenRatingFlow) {
    TeachingService svc;
    Json cond{{"condition", "convergence"}, {"patience", 50}, {"max_demos", 2}};
    const auto id = svc.create_session(quick_request(3, cond)).at("id").get<std::string>();
    svc.submit_demo(id, {{"state", 0}, {"action", 1}});
    const auto last = svc.submit_demo(id, {{"state", 1}, {"action", 1}});
    EXPECT_EQ(last.at("status"), "capped");
    EXPECT_THROW(svc.submit_demo(id, {{"state", 2}, {"action", 1}}), Conflict);
    EXPECT_THROW(svc.submit_rating(id, {{"rating", 6}}), InvalidInput);
    EXPECT_THROW(svc.submit_rating(id, {{"rating", 2.5}}), InvalidInput);
    EXPECT_EQ(svc.submit_rating(id, {{"rating", 4}}).at("rating"), 4);
    EXPECT_THROW(svc.submit_rating(id, {{"rating", 5}}), Conflict);
    EXPECT_EQ(svc.export_session(id).at("rating"), 4);
}

TEST(TeachingService, MatchesTheTeachingLoop) {
    TeachingService svc;
    Json cond{{"epsilon", 0.2}, {"max_demos", 6}};
    const auto req = quick_request(8, cond);
    const auto id = svc.create_session(req).at("id").get<std::string>();
    const auto env = generate_gridworld({.seed = 8});
    Demonstrator d(env.mdp, env.true_weights, {.seed = 1});
    std::vector<Assessment> served;
    while (svc.get_assessments(id).at("status") == "collecting") {
        const auto sa = *d.next();
        served.push_back(
            assessment_from_json(svc.submit_demo(id, {{"state", sa.state}, {"action", sa.action}}).at("assessment")));
    }

    auto cfg = sufficiency_config_from_json(req.at("condition"));
    cfg.mcmc.seed = 8;
    Demonstrator d2(env.mdp, env.true_weights, {.seed = 1});
    const auto loop = teaching_loop(env.mdp, d2, cfg);
    EXPECT_EQ(served, loop.assessments);

    std::vector<Assessment> listed;
    const auto listing = svc.get_assessments(id);
    for (const auto& a : listing.at("assessments")) listed.push_back(assessment_from_json(a));
    EXPECT_EQ(listed, served);
    const auto trace = trace_from_json(svc.export_session(id).at("trace"));
    ASSERT_EQ(trace.size(), served.size());
    for (std::size_t i = 0; i < trace.size(); ++i) EXPECT_EQ(trace[i].assessment, served[i]);
}

TEST(TeachingService, ReplaysTheLogAfterRestart) {
    const auto log = temp_log("replay");
    std::string id;
    Json before;
    {
        TeachingService svc(log);
        Json cond{{"condition", "validation"}, {"interval", 3}, {"max_demos", 3}};
        id = svc.create_session(quick_request(5, cond)).at("id").get<std::string>();
        svc.submit_demo(id, {{"state", 3}, {"action", 0}, {"request_id", "a"}});
        svc.submit_demo(id, {{"state", 4}, {"action", 2}});
        svc.submit_demo(id, {{"state", 5}, {"action", 3}});
        svc.submit_rating(id, {{"rating", 2}});
        before = svc.export_session(id);
    }
    TeachingService restarted(log);
    EXPECT_EQ(restarted.session_ids(), std::vector<std::string>{id});
    EXPECT_EQ(restarted.export_session(id), before);
    const auto again = restarted.submit_demo(id, {{"state", 3}, {"action", 0}, {"request_id", "a"}});
    EXPECT_EQ(assessment_from_json(again.at("assessment")), assessment_from_json(before.at("trace")[0]));
}

TEST(TeachingService, DivergentLogIsRejected) {
    const auto log = temp_log("tamper");
    {
        TeachingService svc(log);
        const auto id = svc.create_session(quick_request()).at("id").get<std::string>();
        svc.submit_demo(id, {{"state", 0}, {"action", 1}});
    }
    std::vector<Json> events = SessionLog(log).read_all();
    events.back()["assessment"]["bound"] = 123.0;
    std::filesystem::remove(log);
    SessionLog rewrite(log);
    for (const auto& e : events) rewrite.append(e);
    EXPECT_THROW(TeachingService{log}, std::runtime_error);
}

TEST(Http, RoutesAndErrorEnvelope) {
    TeachingService svc;
    httplib::Server server;
    mount_routes(server, svc);
    const int port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    httplib::Client cli("127.0.0.1", port);
    auto health = cli.Get("/v1/healthz");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);

    auto created = cli.Post("/v1/sessions", quick_request().dump(), "application/json");
    ASSERT_TRUE(created);
    EXPECT_EQ(created->status, 201);
    const auto id = Json::parse(created->body).at("id").get<std::string>();
    const auto base = "/v1/sessions/" + id;

    auto early = cli.Get(base + "/policy");
    EXPECT_EQ(early->status, 412);
    EXPECT_EQ(Json::parse(early->body).at("code"), "precondition_failed");

    auto bad = cli.Post(base + "/demos", "{not json", "application/json");
    EXPECT_EQ(bad->status, 400);
    EXPECT_EQ(Json::parse(bad->body).at("code"), "validation_error");
    EXPECT_EQ(Json::parse(bad->body).at("field"), "body");

    auto out_of_range = cli.Post(base + "/demos", R"({"state": 99, "action": 0})", "application/json");
    EXPECT_EQ(out_of_range->status, 400);
    EXPECT_EQ(Json::parse(out_of_range->body).at("field"), "state");

    auto demo = cli.Post(base + "/demos", R"({"state": 0, "action": 1})", "application/json");
    EXPECT_EQ(demo->status, 200);
    EXPECT_TRUE(Json::parse(demo->body).contains("assessment"));
    EXPECT_EQ(cli.Get(base + "/policy")->status, 200);
    EXPECT_EQ(cli.Get(base + "/assessments")->status, 200);
    EXPECT_EQ(cli.Get(base)->status, 200);

    auto rating = cli.Post(base + "/rating", R"({"rating": 3})", "application/json");
    EXPECT_EQ(rating->status, 409);
    EXPECT_EQ(Json::parse(rating->body).at("code"), "conflict");

    auto missing = cli.Get("/v1/sessions/00000000deadbeef");
    EXPECT_EQ(missing->status, 404);
    EXPECT_EQ(Json::parse(missing->body).at("code"), "not_found");
    EXPECT_EQ(cli.Get("/v2/nothing")->status, 404);

    server.stop();
    th.join();
}

TEST(Http, DefaultPortReadsEnvironment) {
    ::unsetenv("SUFFICE_PORT");
    EXPECT_EQ(default_port(), 8080);
    ::setenv("SUFFICE_PORT", "9123", 1);
    EXPECT_EQ(default_port(), 9123);
    ::setenv("SUFFICE_PORT", "nope", 1);
    EXPECT_THROW(default_port(), InvalidInput);
    ::unsetenv("SUFFICE_PORT");
}
