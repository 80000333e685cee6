#include "../support/fixtures.hpp"

#include <suffice/environments.hpp>
#include <suffice/serialization.hpp>

#include <gtest/gtest.h>

#include <set>

using namespace suffice;

TEST(Gridworld, ShapeMatchesConfig) {
    const auto env = generate_gridworld({.rows = 5, .cols = 5, .num_features = 4, .seed = 0});
    EXPECT_EQ(env.mdp.num_states(), 25u);
    EXPECT_EQ(env.mdp.num_actions(), 4u);
    EXPECT_EQ(env.mdp.num_features(), 4u);
    EXPECT_EQ(env.layout.action_names, (std::vector<std::string>{"up", "down", "left", "right"}));
}

TEST(Gridworld, SameSeedSameEnvironment) {
    const auto a = generate_gridworld({.seed = 0});
    const auto b = generate_gridworld({.seed = 0});
    EXPECT_TRUE(a.mdp == b.mdp);
    EXPECT_EQ(a.true_weights, b.true_weights);
    const auto c = generate_gridworld({.seed = 1});
    EXPECT_FALSE(a.mdp == c.mdp && a.true_weights == c.true_weights);
}

TEST(Gridworld, GoalIsAbsorbingAndReachableFromEveryState) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto env = generate_gridworld({.seed = seed});
        const std::size_t goal = *env.layout.goal_state;
        EXPECT_TRUE(env.mdp.is_terminal(goal));
        for (std::size_t s = 0; s < env.mdp.num_states(); ++s) EXPECT_TRUE(reachable_from(env.mdp, s)[goal]);
    }
}

TEST(Gridworld, GoalWeightIsStrictMaximumAndFeaturesAreOneHot) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto env = generate_gridworld({.seed = seed});
        const auto& w = env.true_weights.values();
        for (std::size_t k = 0; k + 1 < w.size(); ++k) EXPECT_LT(w[k], w.back());
        EXPECT_NEAR(l2_norm(w), 1.0, 1e-9);
        for (std::size_t s = 0; s < env.mdp.num_states(); ++s) {
            auto f = env.mdp.feature(s);
            EXPECT_DOUBLE_EQ(std::accumulate(f.begin(), f.end(), 0.0), 1.0);
            EXPECT_EQ(f.back() == 1.0, s == *env.layout.goal_state);
        }
    }
}

TEST(Gridworld, OffGridMovesStayInPlace) {
    const auto env = generate_gridworld({.goal_state = 24, .seed = 0});
    EXPECT_EQ(env.mdp.transitions(0, kUp)[0].next, 0u);
    EXPECT_EQ(env.mdp.transitions(0, kLeft)[0].next, 0u);
    EXPECT_EQ(env.mdp.transitions(0, kRight)[0].next, 1u);
    EXPECT_EQ(env.mdp.transitions(0, kDown)[0].next, 5u);
}

TEST(Gridworld, ImpossibleConfigsThrow) {
    EXPECT_THROW(generate_gridworld({.rows = 2, .cols = 2, .num_features = 5}), InvalidInput);
    EXPECT_THROW(generate_gridworld({.rows = 1, .cols = 1}), InvalidInput);
    EXPECT_THROW(generate_gridworld({.num_features = 1}), InvalidInput);
}

TEST(Driving, ThreeLanesGiveSixFeatures) {
    const auto env = generate_driving({.num_lanes = 3, .seed = 0});
    EXPECT_EQ(env.mdp.num_features(), 6u);
    EXPECT_EQ(env.mdp.num_actions(), 3u);
    EXPECT_LT(env.true_weights[3], 0.0); // collision
}

TEST(Driving, StraightWrapsAroundTheRoad) {
    const DrivingConfig cfg{.road_length = 6, .num_lanes = 3, .seed = 2};
    const auto env = generate_driving(cfg);
    const std::size_t C = cfg.num_lanes + 2;
    for (std::size_t c = 0; c < C; ++c) {
        const std::size_t s = (cfg.road_length - 1) * C + c;
        EXPECT_EQ(env.mdp.transitions(s, kStraight)[0].next, c);
    }
    EXPECT_EQ(env.mdp.transitions(0, kTurnLeft)[0].next, C + 0);
    EXPECT_EQ(env.mdp.transitions(1, kTurnLeft)[0].next, C + 0);
    EXPECT_EQ(env.mdp.transitions(1, kTurnRight)[0].next, C + 2);
}

TEST(Driving, SameSeedSameEnvironmentAndInvalidDensityThrows) {
    EXPECT_TRUE(generate_driving({.seed = 5}).mdp == generate_driving({.seed = 5}).mdp);
    EXPECT_THROW(generate_driving({.obstacle_density = 1.5}), InvalidInput);
    EXPECT_THROW(generate_driving({.dirt_density = -0.1}), InvalidInput);
}

TEST(Driving, CollisionWeightAlwaysNegative) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto env = generate_driving({.seed = seed});
        EXPECT_LT(env.true_weights[env.mdp.num_features() - 3], 0.0);
    }
}

TEST(Demonstrator, OptimalActionsAreGreedyOptimal) {
    const auto env = generate_gridworld({.seed = 3});
    const auto opt = value_iteration(env.mdp, env.true_weights);
    Demonstrator demo(env.mdp, env.true_weights, {.seed = 1});
    std::set<std::size_t> seen;
    while (auto sa = demo.next()) {
        EXPECT_TRUE(seen.insert(sa->state).second);
        const double* row = opt.q.data() + sa->state * 4;
        EXPECT_NEAR(row[sa->action], *std::max_element(row, row + 4), 1e-9);
    }
    EXPECT_EQ(seen.size(), 25u);
    EXPECT_FALSE(demo.next().has_value());
}

TEST(Demonstrator, ZeroNoiseMatchesOptimal) {
    const auto env = generate_driving({.seed = 1});
    Demonstrator a(env.mdp, env.true_weights, {.mode = DemonstratorConfig::Mode::optimal, .seed = 4});
    Demonstrator b(env.mdp, env.true_weights, {.mode = DemonstratorConfig::Mode::noisy, .noise = 0.0, .seed = 4});
    while (auto x = a.next()) EXPECT_EQ(*x, *b.next());
}

TEST(Demonstrator, NoiseFractionMatchesRate) {
    // Gridworld with the goal in a corner so every non-goal state has a
    // strictly worse action available.
    const auto env = generate_gridworld({.goal_state = 0, .seed = 8});
    Demonstrator demo(env.mdp, env.true_weights, {.mode = DemonstratorConfig::Mode::noisy, .noise = 0.3, .seed = 9});
    std::size_t bad = 0;
    const std::size_t draws = 1000;
    for (std::size_t i = 0; i < draws; ++i) {
        const std::size_t s = 1 + i % 24;
        if (!demo.is_optimal(demo.query(s))) ++bad;
    }
    EXPECT_NEAR(static_cast<double>(bad) / draws, 0.3, 0.05);
}

TEST(Demonstrator, BoltzmannPrefersBetterActions) {
    const auto env = generate_gridworld({.goal_state = 0, .seed = 8});
    Demonstrator demo(env.mdp, env.true_weights, {.mode = DemonstratorConfig::Mode::boltzmann, .beta = 50.0, .seed = 3});
    std::size_t good = 0;
    for (std::size_t i = 0; i < 500; ++i)
        if (demo.is_optimal(demo.query(1 + i % 24))) ++good;
    EXPECT_GT(good, 250u);
}

TEST(AmbiguityDemoSet, AmbiguousRepeatsOnePairAndInformativeUsesDistinctStates) {
    const auto env = generate_gridworld({.seed = 6});
    const auto amb = ambiguity_demo_set(env.mdp, env.true_weights, DemoKind::ambiguous, 5);
    ASSERT_EQ(amb.size(), 5u);
    for (const auto& sa : amb.pairs) EXPECT_EQ(sa, amb.pairs.front());
    const auto inf = ambiguity_demo_set(env.mdp, env.true_weights, DemoKind::informative, 5);
    std::set<std::size_t> states;
    for (const auto& sa : inf.pairs) states.insert(sa.state);
    EXPECT_EQ(states.size(), 5u);
    const auto opt = value_iteration(env.mdp, env.true_weights);
    for (const auto& sa : inf.pairs) EXPECT_EQ(sa.action, opt.policy.action(sa.state));
}

TEST(PrefixedSource, ReplaysPrefixThenDefers) {
    const auto env = generate_gridworld({.seed = 6});
    Demonstrator demo(env.mdp, env.true_weights, {.seed = 2});
    Demonstrator ref(env.mdp, env.true_weights, {.seed = 2});
    Demonstration prefix;
    prefix.push_back({3, 1});
    PrefixedSource src(prefix, demo);
    EXPECT_EQ(*src.next(), (StateAction{3, 1}));
    EXPECT_EQ(*src.next(), *ref.next());
}

TEST(Serialization, MdpRoundTripIsLossless) {
    for (const auto& env : {generate_gridworld({.seed = 1}), generate_driving({.seed = 1})}) {
        const auto text = to_json(env).dump();
        const auto back = environment_from_json(Json::parse(text));
        EXPECT_TRUE(back.mdp == env.mdp);
        for (std::size_t k = 0; k < env.true_weights.size(); ++k)
            EXPECT_NEAR(back.true_weights[k], env.true_weights[k], 1e-12);
        EXPECT_EQ(back.layout.feature_class, env.layout.feature_class);
    }
}
