#pragma once

// Small hand-built MDPs and adapters from library types to oracle inputs.

#include "oracles.hpp"

#include <suffice/mdp.hpp>

#include <random>
#include <vector>

namespace fixtures {

using namespace suffice;

inline oracle::Tensor to_tensor(const TabularMdp& mdp) {
    const std::size_t S = mdp.num_states(), A = mdp.num_actions();
    oracle::Tensor P(S, std::vector<std::vector<double>>(A, std::vector<double>(S, 0.0)));
    for (const auto& t : mdp.triples()) P[t.state][t.action][t.next] += t.prob;
    return P;
}

inline std::vector<std::vector<double>> to_rows(const Policy& pi) {
    std::vector<std::vector<double>> out(pi.num_states());
    for (std::size_t s = 0; s < pi.num_states(); ++s) {
        auto r = pi.row(s);
        out[s].assign(r.begin(), r.end());
    }
    return out;
}

/// One state, `actions` self-loops, single feature equal to 1.
inline TabularMdp single_state(std::size_t actions = 1, double discount = 0.9) {
    std::vector<TransitionTriple> t;
    for (std::size_t a = 0; a < actions; ++a) t.push_back({0, a, 0, 1.0});
    return TabularMdp(1, actions, t, {{1.0}}, discount, {1.0});
}

/// A -> B deterministically, B absorbing. Features: A = (1, 0), B = (0, 1).
inline TabularMdp two_state_chain(double discount = 0.5) {
    return TabularMdp(2, 1, {{0, 0, 1, 1.0}, {1, 0, 1, 1.0}}, {{1.0, 0.0}, {0.0, 1.0}}, discount, {1.0, 0.0}, {1});
}

/// Random dense stochastic MDP, for checks that should not depend on structure.
inline TabularMdp random_mdp(std::size_t S, std::size_t A, std::size_t K, std::uint64_t seed, double discount = 0.9) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<TransitionTriple> t;
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            std::vector<double> p(S);
            double sum = 0.0;
            for (auto& x : p) sum += (x = u(rng) < 0.5 ? 0.0 : u(rng));
            if (sum == 0.0) {
                p[s] = 1.0;
                sum = 1.0;
            }
            for (std::size_t n = 0; n < S; ++n)
                if (p[n] > 0.0) t.push_back({s, a, n, p[n] / sum});
        }
    std::vector<std::vector<double>> f(S, std::vector<double>(K));
    for (auto& row : f)
        for (auto& x : row) x = u(rng);
    return TabularMdp(S, A, t, f, discount, std::vector<double>(S, 1.0 / static_cast<double>(S)));
}

} // namespace fixtures
