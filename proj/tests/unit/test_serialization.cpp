#include <suffice/serialization.hpp>

#include <gtest/gtest.h>

#include <sstream>

using namespace suffice;

namespace {

std::vector<TraceRecord> sample_trace() {
    std::vector<TraceRecord> t;
    for (std::size_t i = 0; i < 5; ++i) {
        TraceRecord r;
        r.assessment.round = i + 1;
        r.assessment.condition = i % 2 ? Condition::validation : Condition::nevd;
        r.assessment.bound = i == 0 ? std::numeric_limits<double>::quiet_NaN() : 1.0 / 3.0 + 0.1 * i;
        r.assessment.threshold = 0.1 * (i + 1);
        r.assessment.sufficient = i == 4;
        r.assessment.excluded_samples = i;
        r.assessment.insufficient_samples = i == 2;
        r.assessment.degenerate = i == 0;
        r.demo = {i * 3, i % 4};
        r.held_out = i == 3;
        r.unique_states = i + 1;
        t.push_back(r);
    }
    return t;
}

bool same_trace(const std::vector<TraceRecord>& a, const std::vector<TraceRecord>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!(a[i].assessment == b[i].assessment && a[i].demo == b[i].demo && a[i].held_out == b[i].held_out &&
              a[i].unique_states == b[i].unique_states))
            return false;
    return true;
}

} // namespace

TEST(TraceCsv, RoundTripsExactly) {
    const auto t = sample_trace();
    std::stringstream ss;
    write_trace_csv(ss, t);
    EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), kTraceCsvHeader);
    EXPECT_TRUE(same_trace(read_trace_csv(ss), t));
}

TEST(TraceCsv, RejectsMalformedInput) {
    std::stringstream bad_header("round,bound\n");
    EXPECT_THROW(read_trace_csv(bad_header), InvalidInput);
    std::stringstream short_row(std::string(kTraceCsvHeader) + "\n1,nevd,0.5\n");
    EXPECT_THROW(read_trace_csv(short_row), InvalidInput);
}

TEST(TraceJson, RoundTripsThroughText) {
    const auto t = sample_trace();
    const auto j = Json::parse(trace_to_json(t).dump());
    EXPECT_TRUE(j[0]["bound"].is_null());
    EXPECT_TRUE(same_trace(trace_from_json(j), t));
}

TEST(Demonstration, RoundTrips) {
    const Demonstration d{{{0, 1}, {4, 2}, {4, 2}}};
    EXPECT_EQ(demonstration_from_json(Json::parse(to_json(d).dump())), d);
}

TEST(SufficiencyConfigJson, RoundTripsAndKeepsDefaults) {
    SufficiencyConfig c;
    c.condition = Condition::validation;
    c.interval = 4;
    c.risk.alpha = 0.9;
    c.risk.index_method = IndexMethod::gaussian_approx;
    c.mcmc.seed = 99;
    c.mcmc.num_samples = 300;
    c.selection = Selection::active;
    c.max_demos = 12;
    const auto back = sufficiency_config_from_json(Json::parse(to_json(c).dump()));
    EXPECT_EQ(to_json(back), to_json(c));

    const auto d = sufficiency_config_from_json(Json::object());
    EXPECT_EQ(d.condition, Condition::nevd);
    EXPECT_EQ(d.mcmc.num_samples, 1000u);
    EXPECT_FALSE(d.max_demos.has_value());
    EXPECT_DOUBLE_EQ(sufficiency_config_from_json({{"alpha", 0.99}}).risk.alpha, 0.99);
}

TEST(SufficiencyConfigJson, RejectsInvalidValues) {
    EXPECT_THROW(sufficiency_config_from_json({{"condition", "vibes"}}), InvalidInput);
    EXPECT_THROW(sufficiency_config_from_json({{"alpha", 1.5}}), InvalidInput);
    EXPECT_THROW(sufficiency_config_from_json({{"condition", "validation"}, {"interval", 1}}), InvalidInput);
    EXPECT_THROW(sufficiency_config_from_json({{"risk", {{"index_method", "fancy"}}}}), InvalidInput);
    EXPECT_THROW(sufficiency_config_from_json({{"mcmc", {{"num_samples", 1}}}}), InvalidInput);
}

TEST(DemonstratorConfigJson, RoundTrips) {
    DemonstratorConfig d{.mode = DemonstratorConfig::Mode::noisy, .beta = 3.0, .noise = 0.2, .seed = 5};
    EXPECT_EQ(to_json(demonstrator_config_from_json(to_json(d))), to_json(d));
    EXPECT_THROW(demonstrator_config_from_json({{"mode", "sleepy"}}), InvalidInput);
}
