#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"

#include <suffice/birl.hpp>
#include <suffice/environments.hpp>
#include <suffice/risk.hpp>
#include <suffice/sufficiency.hpp>

#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

using namespace suffice;

TEST(AdaptStepSize, WorkedExamples) {
    EXPECT_DOUBLE_EQ(adapt_step_size(0.1, 0, 0.4, 0.4), 0.1);
    EXPECT_NEAR(adapt_step_size(0.1, 0, 0.7, 0.4), 0.13, 1e-15);
    EXPECT_NEAR(adapt_step_size(0.1, 3, 0.2, 0.4), 0.09, 1e-15);
}

TEST(AdaptStepSize, FlooredAndValidated) {
    EXPECT_DOUBLE_EQ(adapt_step_size(1e-6, 0, 0.0, 0.99), 1e-6);
    EXPECT_THROW(adapt_step_size(0.0, 0, 0.5, 0.4), InvalidInput);
}

namespace {

/// One state, two self-loop actions, two features: every reward explains the
/// demonstrations equally well.
TabularMdp flat_mdp() {
    return TabularMdp(1, 2, {{0, 0, 0, 1.0}, {0, 1, 0, 1.0}}, {{1.0, 0.5}}, 0.9, {1.0});
}

Demonstration optimal_demos(const Environment& env, std::size_t n, std::uint64_t seed) {
    Demonstrator d(env.mdp, env.true_weights, {.seed = seed});
    Demonstration out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(*d.next());
    return out;
}

} // namespace

TEST(RunMcmc, FlatLikelihoodReturnsThePrior) {
    Demonstration d;
    d.push_back({0, 1});
    const auto batch = run_mcmc(flat_mdp(), d, {.seed = 17});
    ASSERT_EQ(batch.size(), 1000u);
    std::vector<double> hist(36, 0.0), uniform(36, 1.0);
    double mx = 0.0, my = 0.0;
    for (const auto& w : batch.samples) {
        hist[oracle::angle_bin(w[0], w[1], 36)] += 1.0;
        mx += w[0];
        my += w[1];
    }
    EXPECT_LE(oracle::total_variation(hist, uniform), 0.1);
    EXPECT_LE(std::hypot(mx, my) / 1000.0, 0.15);
}

TEST(RunMcmc, MatchesGridPosteriorOnTwoFeatureGridworld) {
    const auto env = generate_gridworld({.rows = 3, .cols = 3, .num_features = 2, .seed = 21});
    const auto demos = optimal_demos(env, 5, 5);
    const auto batch = run_mcmc(env.mdp, demos, {.beta = 10.0, .seed = 99});
    std::vector<double> hist(36, 0.0);
    for (const auto& w : batch.samples) hist[oracle::angle_bin(w[0], w[1], 36)] += 1.0;

    std::vector<std::vector<double>> features;
    for (std::size_t s = 0; s < env.mdp.num_states(); ++s) {
        auto f = env.mdp.feature(s);
        features.emplace_back(f.begin(), f.end());
    }
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (const auto& sa : demos.pairs) pairs.emplace_back(sa.state, sa.action);
    const auto ref = oracle::angular_posterior(fixtures::to_tensor(env.mdp), features, env.mdp.discount(), pairs, 10.0,
                                               360, 36);
    EXPECT_LE(oracle::total_variation(hist, ref), 0.1);
}

TEST(RunMcmc, SameSeedSameSamples) {
    const auto env = generate_gridworld({.seed = 2});
    const auto demos = optimal_demos(env, 3, 1);
    const auto a = run_mcmc(env.mdp, demos, {.seed = 5});
    const auto b = run_mcmc(env.mdp, demos, {.seed = 5});
    EXPECT_EQ(a.samples, b.samples);
    EXPECT_EQ(a.map_weights, b.map_weights);
}

TEST(RunMcmc, BatchInvariants) {
    const auto env = generate_driving({.seed = 3});
    const auto demos = optimal_demos(env, 4, 2);
    const McmcConfig cfg{.num_samples = 300, .seed = 8};
    const auto batch = run_mcmc(env.mdp, demos, cfg);
    ASSERT_EQ(batch.size(), 300u);
    ASSERT_EQ(batch.sample_values.size(), 300u);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        EXPECT_NEAR(l2_norm(batch.samples[i].values()), 1.0, 1e-9);
        EXPECT_TRUE(std::isfinite(batch.sample_log_likelihood[i]));
        EXPECT_GE(batch.map_log_likelihood, batch.sample_log_likelihood[i]);
        // Cached optimal values agree with an independent solve.
        const auto vi = value_iteration(env.mdp, batch.samples[i], 1e-9);
        for (std::size_t s = 0; s < env.mdp.num_states(); s += 7)
            EXPECT_NEAR(batch.sample_values[i][s], vi.value[s], 1e-7);
        EXPECT_NEAR(demo_log_likelihood(env.mdp, demos, batch.samples[i], cfg.beta, 1e-9),
                    batch.sample_log_likelihood[i], 1e-6);
    }
    EXPECT_GT(batch.accept_rate, 0.0);
    EXPECT_LT(batch.accept_rate, 1.0);
}

TEST(RunMcmc, EmptyDemosThrow) {
    EXPECT_THROW(run_mcmc(flat_mdp(), Demonstration{}, {}), InvalidInput);
}

TEST(RunMcmc, BudgetExceededCarriesPartialBatch) {
    Demonstration d;
    d.push_back({0, 0});
    const McmcConfig cfg{.num_samples = 2, .burn_in = 0, .skip = 1, .beta = INFINITY};
    try {
        run_mcmc(flat_mdp(), d, cfg);
        FAIL() << "expected BudgetExceeded";
    } catch (const BudgetExceeded& e) {
        EXPECT_EQ(e.partial().proposals, 100u);
        EXPECT_TRUE(e.partial().samples.empty());
    }
}

TEST(MapPolicy, TrueMapGivesZeroRegret) {
    const auto env = generate_gridworld({.seed = 12});
    PosteriorBatch batch;
    batch.map_weights = env.true_weights;
    const auto pi = map_policy(batch, env.mdp);
    EXPECT_NEAR(*nevd(env.mdp, pi, env.true_weights), 0.0, 1e-6);
    EXPECT_EQ(pi, map_policy(batch, env.mdp));
    std::vector<double> scaled(env.true_weights.values());
    for (auto& x : scaled) x *= 3.0;
    batch.map_weights = RewardWeights(scaled);
    EXPECT_EQ(pi.actions(), map_policy(batch, env.mdp).actions());
}

TEST(RunMcmc, PosteriorConcentratesWithMoreDemos) {
    double var[3] = {0, 0, 0};
    const std::size_t counts[3] = {1, 5, 10};
    const std::size_t seeds = 20;
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
        const auto env = generate_gridworld({.seed = 100 + seed});
        for (int c = 0; c < 3; ++c) {
            const auto batch = run_mcmc(env.mdp, optimal_demos(env, counts[c], seed), {.num_samples = 500, .seed = seed});
            const auto ms = nevd_samples(env.mdp, batch, batch.map_policy);
            double m = 0.0, ss = 0.0;
            for (double x : ms.values()) m += x;
            m /= static_cast<double>(ms.size());
            for (double x : ms.values()) ss += (x - m) * (x - m);
            var[c] += ss / static_cast<double>(ms.size() - 1) / seeds;
        }
    }
    EXPECT_GE(var[0], var[1]);
    EXPECT_GE(var[1], var[2]);
}

TEST(ChainTrace, WritesOneRowPerIteration) {
    Demonstration d;
    d.push_back({0, 0});
    std::vector<ChainTraceRow> rows;
    const McmcConfig cfg{.num_samples = 10, .burn_in = 5, .skip = 2, .seed = 1};
    run_mcmc(flat_mdp(), d, cfg, &rows);
    EXPECT_EQ(rows.size(), cfg.chain_length());
    std::ostringstream os;
    write_chain_trace(os, rows);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "iteration,log_posterior,step,accepted");
    std::size_t n = 0;
    while (std::getline(is, line)) ++n;
    EXPECT_EQ(n, rows.size());
}

TEST(RunMcmc, RepeatedPairsAddNoEvidence) {
    const auto env = generate_gridworld({.seed = 4});
    const auto demos = optimal_demos(env, 2, 3);
    Demonstration repeated = demos;
    for (int i = 0; i < 4; ++i) repeated.push_back(demos.pairs[0]);
    EXPECT_EQ(distinct_pairs(repeated), demos);
    const McmcConfig cfg{.num_samples = 100, .seed = 6};
    EXPECT_EQ(run_mcmc(env.mdp, repeated, cfg).samples, run_mcmc(env.mdp, demos, cfg).samples);
}

TEST(RunMcmc, StartsFromTheMostLikelyScreenedDraw) {
    const auto env = generate_gridworld({.seed = 5});
    const auto demos = optimal_demos(env, 4, 9);
    const McmcConfig cfg{.num_samples = 2, .burn_in = 0, .skip = 1, .start_candidates = 32, .seed = 21};

    Rng rng(cfg.seed);
    double best = -INFINITY;
    for (std::size_t i = 0; i < cfg.start_candidates; ++i) {
        const auto w = sample_unit_sphere(env.mdp.num_features(), rng);
        best = std::max(best, demo_log_likelihood(env.mdp, demos, RewardWeights(w), cfg.beta));
    }
    EXPECT_GE(run_mcmc(env.mdp, demos, cfg).map_log_likelihood, best - 1e-9);
    EXPECT_THROW((McmcConfig{.start_candidates = 0}.validate()), InvalidInput);
}

TEST(RunMcmc, RetainedSamplesShowNoBurnInTransient) {
    for (std::uint64_t seed : {1, 2, 3, 4}) {
        const auto env = generate_gridworld({.seed = seed});
        const auto batch = run_mcmc(env.mdp, optimal_demos(env, 9, seed + 10), {.seed = seed + 100});
        const auto& ll = batch.sample_log_likelihood;
        const auto head = std::accumulate(ll.begin(), ll.begin() + 100, 0.0) / 100.0;
        const auto tail = std::accumulate(ll.end() - 100, ll.end(), 0.0) / 100.0;
        EXPECT_GT(head, tail - 1.0) << "seed " << seed;
    }
}
