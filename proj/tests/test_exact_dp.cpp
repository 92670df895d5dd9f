#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "gms/env.hpp"
#include "gms/exact_dp.hpp"
#include "gms/mdp.hpp"

using namespace gms;

namespace {

QTable random_q(int S, int A, std::mt19937_64& rng, double lo = -10.0, double hi = 10.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    QTable q(S, A);
    for (double& v : q.data()) v = dist(rng);
    return q;
}

TabularPolicy random_stochastic_policy(int S, int A, RngSeed seed) {
    std::mt19937_64 rng(seed);
    std::exponential_distribution<double> exp1(1.0);
    std::vector<double> probs(static_cast<size_t>(S) * A);
    for (int s = 0; s < S; ++s) {
        double total = 0.0;
        for (int a = 0; a < A; ++a) {
            probs[static_cast<size_t>(s) * A + a] = exp1(rng);
            total += probs[static_cast<size_t>(s) * A + a];
        }
        for (int a = 0; a < A; ++a) probs[static_cast<size_t>(s) * A + a] /= total;
    }
    return TabularPolicy::from_probs(S, A, std::move(probs));
}

/// Uniform plus two seeded deterministic policies, sized for `m`.
PolicySet policy_pair_for_test(const TabularMdp& m) {
    const int S = m.num_states(), A = m.num_actions();
    std::mt19937_64 rng(static_cast<RngSeed>(S) * 1000 + A);
    std::uniform_int_distribution<int> pick(0, A - 1);
    std::vector<TabularPolicy> out;
    out.push_back(TabularPolicy::uniform(S, A));
    for (int k = 0; k < 2; ++k) {
        std::vector<int> actions(S);
        for (int& a : actions) a = pick(rng);
        out.push_back(TabularPolicy::deterministic(S, A, actions));
    }
    return PolicySet(std::move(out));
}

/// One-step sweeps past eps convergence until the table stops changing, so
/// the result is an exact fixed point of the optimality backup in doubles.
QTable settled_optimal_q(const TabularMdp& mdp) {
    QTable q = solve_optimal_q(mdp, 1e-9);
    for (int i = 0; i < 20000; ++i) {
        QTable next = bellman_optimality(mdp, q);
        if (next.data() == q.data()) break;
        q = std::move(next);
    }
    return q;
}

/// Hand-built 2-state, 2-action model with dyadic numbers throughout so the
/// expected backups are exact in floating point.
TabularMdp dyadic_mdp() {
    TabularMdp m(2, 2, 0.5);
    m.add_transition(0, 0, 0, 0.5);
    m.add_transition(0, 0, 1, 0.5);
    m.set_reward(0, 0, 1.0);
    m.add_transition(0, 1, 1, 1.0);
    m.set_reward(0, 1, 8.0);
    m.add_transition(1, 0, 0, 1.0);
    m.set_reward(1, 0, 2.0);
    m.add_transition(1, 1, 0, 0.25);
    m.add_transition(1, 1, 1, 0.75);
    m.set_reward(1, 1, 2.5);
    return m;
}

}  // namespace

TEST_CASE("one-step backups on dyadic numbers are exact") {
    TabularMdp m = dyadic_mdp();
    REQUIRE(validate(m).ok());
    QTable q(2, 2);
    q(0, 0) = 1.0;
    q(0, 1) = 2.0;
    q(1, 0) = 3.0;
    q(1, 1) = 4.0;

    QTable b = bellman_optimality(m, q);
    CHECK(b(0, 0) == 2.5);
    CHECK(b(0, 1) == 10.0);
    CHECK(b(1, 0) == 3.0);
    CHECK(b(1, 1) == 4.25);

    QTable e = bellman_expectation(m, TabularPolicy::uniform(2, 2), q);
    CHECK(e(0, 0) == 2.25);
    CHECK(e(0, 1) == 9.75);
    CHECK(e(1, 0) == 2.75);
    CHECK(e(1, 1) == 4.0);
}

TEST_CASE("expectation fixed point matches a direct linear solve") {
    TabularMdp m = make_random_mdp(3, 6, 3, 2);
    TabularPolicy pi = random_stochastic_policy(6, 3, 17);
    const int S = 6, A = 3, n = S * A;
    const double gamma = m.gamma();

    // Q^pi solves (I - gamma P Pi) q = r over (s,a) unknowns.
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd r(n);
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            int row = s * A + a;
            r(row) = m.reward(s, a);
            for (const auto& t : m.transitions(s, a))
                for (int a2 = 0; a2 < A; ++a2)
                    M(row, t.next_state * A + a2) -= gamma * t.prob * pi.prob(t.next_state, a2);
        }
    }
    Eigen::VectorXd x = M.partialPivLu().solve(r);

    SolveResult res = value_iteration(m, OperatorSpec::expectation(pi), QTable(S, A, 0.0), 1e-13);
    REQUIRE(res.converged);
    double worst = 0.0;
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) worst = std::max(worst, std::abs(res.q(s, a) - x(s * A + a)));
    CHECK(worst < 1e-10);
}

TEST_CASE("greedy operator dominates and collapses at depth one") {
    TabularMdp m = make_random_mdp(21, 7, 3, 3);
    PolicySet set = policy_pair_for_test(m);
    std::mt19937_64 rng(5);
    QTable q = random_q(7, 3, rng);

    QTable b = bellman_optimality(m, q);
    QTable g1 = greedy_multistep_operator(m, set, 1, q);
    CHECK(g1.data() == b.data());  // depth 1 candidates only

    QTable g4 = greedy_multistep_operator(m, set, 4, q);
    QTable bn4 = multi_step_operator(m, set, 4, q);
    for (size_t i = 0; i < q.data().size(); ++i) {
        CHECK(g4.data()[i] >= b.data()[i]);
        CHECK(g4.data()[i] >= bn4.data()[i]);
    }
}

TEST_CASE("settled optimal table is a bitwise fixed point of both backups") {
    TabularMdp m = make_random_mdp(8, 7, 3, 2);
    QTable qs = settled_optimal_q(m);
    QTable b = bellman_optimality(m, qs);
    CHECK(b.data() == qs.data());

    // The greedy policy of the fixed point reproduces the same backup: the
    // expectation sum collapses onto the argmax entry.
    TabularPolicy star = greedy_policy_from_q(qs);
    QTable e = bellman_expectation(m, star, qs);
    CHECK(e.data() == b.data());
}

TEST_CASE("one greedy application spans the chain") {
    auto [env, policies] = make_highway_chain(10);
    QTable zero(11, 2, 0.0);
    QTable g = greedy_multistep_operator(env.mdp(), policies, 10, zero);
    CHECK(std::abs(g(0, 0) - std::pow(0.9, 9)) < 1e-12);
}

TEST_CASE("fixed-depth fixed points undershoot unless the optimal policy is offered") {
    QTable qc_star = settled_optimal_q(make_choice(3).mdp());
    QTable qd_star = settled_optimal_q(make_delayed_choice(3).mdp());

    SUBCASE("forced corridors leave nothing to lose") {
        TabularMdp m = make_choice(3).mdp();
        PolicySet uniform_only(std::vector<TabularPolicy>{TabularPolicy::uniform(6, 2)});
        SolveResult res = value_iteration(m, OperatorSpec::multi_step(uniform_only, 3),
                                          QTable(6, 2, 0.0), 1e-13);
        REQUIRE(res.converged);
        CHECK(inf_dist(res.q, qc_star) < 1e-7);
    }

    SUBCASE("a genuine downstream decision is diluted") {
        TabularMdp m = make_delayed_choice(3).mdp();
        PolicySet uniform_only(std::vector<TabularPolicy>{TabularPolicy::uniform(5, 2)});
        SolveResult res = value_iteration(m, OperatorSpec::multi_step(uniform_only, 3),
                                          QTable(5, 2, 0.0), 1e-13);
        REQUIRE(res.converged);
        // Never above the optimum, but strictly below it at the start state.
        for (int s = 0; s < 5; ++s)
            for (int a = 0; a < 2; ++a) CHECK(res.q(s, a) <= qd_star(s, a) + 1e-9);
        CHECK(std::abs(res.q(0, 0) - 5.5 * 0.81) < 1e-9);
        CHECK(qd_star(0, 0) - res.q(0, 0) >= 1e-3);
    }

    SUBCASE("offering the greedy optimal policy restores the optimum") {
        TabularMdp m = make_delayed_choice(3).mdp();
        PolicySet star_only(std::vector<TabularPolicy>{greedy_policy_from_q(qd_star)});
        SolveResult res = value_iteration(m, OperatorSpec::multi_step(star_only, 3),
                                          QTable(5, 2, 0.0), 1e-13);
        REQUIRE(res.converged);
        CHECK(inf_dist(res.q, qd_star) < 1e-7);
    }
}

TEST_CASE("value iteration accounting") {
    auto [env, policies] = make_highway_chain(10);
    const TabularMdp& m = env.mdp();

    QTable fixed = settled_optimal_q(m);
    SolveResult one = value_iteration(m, OperatorSpec::optimality(), fixed, 1e-12);
    CHECK(one.converged);
    CHECK(one.iterations == 1);
    CHECK(one.residuals.size() == 1);
    CHECK(one.iter_wall_ns.size() == 1);
    CHECK(one.residuals[0] == 0.0);

    SolveResult cut = value_iteration(m, OperatorSpec::optimality(), QTable(11, 2, 0.0),
                                      1e-12, 3);
    CHECK_FALSE(cut.converged);
    CHECK(cut.iterations == 3);
    REQUIRE(cut.residuals.size() == 3);
    REQUIRE(cut.iter_wall_ns.size() == 3);
    CHECK(cut.iter_wall_ns[0] <= cut.iter_wall_ns[1]);
    CHECK(cut.iter_wall_ns[1] <= cut.iter_wall_ns[2]);
    CHECK(cut.residuals[0] == 1.0);  // the reward entry appears on sweep one

    CHECK_THROWS_AS(value_iteration(m, OperatorSpec::optimality(), QTable(11, 2), 0.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(value_iteration(m, OperatorSpec::optimality(), QTable(11, 2), 1e-9, 0),
                    std::invalid_argument);
}

TEST_CASE("matrix-form iteration agrees with the table form") {
    auto run_both = [](const TabularMdp& m, const PolicySet& set, int N) {
        VSolveResult mv = greedy_multistep_vi_matrix(m, set, N, 1e-12);
        REQUIRE(mv.converged);
        SolveResult qv = value_iteration(m, OperatorSpec::greedy(set, N),
                                         QTable(m.num_states(), m.num_actions(), 0.0), 1e-12);
        REQUIRE(qv.converged);
        CHECK(inf_dist(max_over_actions(qv.q), mv.v) < 1e-9);
    };

    TabularMdp grid = make_gridworld(2).mdp();
    PolicySet grid_set = policy_pair_for_test(grid);
    run_both(grid, grid_set, 1);
    run_both(grid, grid_set, 3);

    TabularMdp rnd = make_random_mdp(31, 6, 3, 2);
    PolicySet rnd_set = policy_pair_for_test(rnd);
    run_both(rnd, rnd_set, 3);

    TabularMdp big(2001, 1, 0.9);
    for (int s = 0; s < 2001; ++s) big.mark_terminal(s);
    PolicySet big_set(std::vector<TabularPolicy>{TabularPolicy::uniform(2001, 1)});
    CHECK_THROWS_AS(greedy_multistep_vi_matrix(big, big_set, 2, 1e-9), std::invalid_argument);
}

TEST_CASE("greedy policy extraction breaks ties downward") {
    QTable q(2, 3, 1.0);
    q(1, 2) = 2.0;
    TabularPolicy pi = greedy_policy_from_q(q);
    CHECK(pi.is_deterministic());
    CHECK(pi.action(0) == 0);
    CHECK(pi.action(1) == 2);
}

TEST_CASE("probes and monotonicity") {
    TabularMdp m = make_random_mdp(41, 8, 3, 3);
    PolicySet set = policy_pair_for_test(m);
    std::mt19937_64 rng(9);

    for (int trial = 0; trial < 20; ++trial) {
        QTable q1 = random_q(8, 3, rng);
        QTable q2 = random_q(8, 3, rng);
        for (auto spec : {OperatorSpec::optimality(), OperatorSpec::greedy(set, 3)}) {
            ContractionProbe probe = contraction_probe(m, spec, q1, q2);
            CHECK(probe.operator_dist <= m.gamma() * probe.input_dist + 1e-12);
        }

        // Raising the input can never lower any output entry.
        QTable up = q1;
        std::uniform_real_distribution<double> bump(0.0, 2.0);
        for (double& v : up.data()) v += bump(rng);
        QTable b1 = bellman_optimality(m, q1);
        QTable b2 = bellman_optimality(m, up);
        QTable g1 = greedy_multistep_operator(m, set, 3, q1);
        QTable g2 = greedy_multistep_operator(m, set, 3, up);
        for (size_t i = 0; i < b1.data().size(); ++i) {
            CHECK(b1.data()[i] <= b2.data()[i]);
            CHECK(g1.data()[i] <= g2.data()[i]);
        }
    }
}

TEST_CASE("per-successor maxima dominate the default form and keep the optimum fixed") {
    TabularMdp m = make_random_mdp(51, 7, 3, 3);
    PolicySet set = policy_pair_for_test(m);
    std::mt19937_64 rng(3);

    double largest_gap = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        QTable q = random_q(7, 3, rng);
        QTable plain = greedy_multistep_operator(m, set, 3, q);
        QTable succ = greedy_multistep_operator(m, set, 3, q, true);
        for (size_t i = 0; i < q.data().size(); ++i) {
            CHECK(plain.data()[i] <= succ.data()[i] + 1e-12);
            largest_gap = std::max(largest_gap, succ.data()[i] - plain.data()[i]);
        }
    }
    CHECK(largest_gap > 0.0);  // the forms genuinely differ on branching dynamics

    QTable qs = settled_optimal_q(m);
    QTable fixed = greedy_multistep_operator(m, set, 3, qs, true);
    CHECK(inf_dist(fixed, qs) < 1e-9);
}

TEST_CASE("operator spec names and input validation") {
    PolicySet set(std::vector<TabularPolicy>{TabularPolicy::uniform(3, 2)});
    CHECK(OperatorSpec::optimality().name() == "b");
    CHECK(OperatorSpec::expectation(TabularPolicy::uniform(3, 2)).name() == "b-pi");
    CHECK(OperatorSpec::multi_step(set, 3).name() == "bn[N=3]");
    CHECK(OperatorSpec::greedy(set, 5).name() == "g[N=5]");
    CHECK(OperatorSpec::greedy(set, 2, true).name() == "g-succmax[N=2]");

    TabularMdp m = make_random_mdp(61, 3, 2, 2);
    QTable q(3, 2, 0.0);
    CHECK_THROWS_AS(greedy_multistep_operator(m, PolicySet(), 2, q), std::invalid_argument);
    CHECK_THROWS_AS(greedy_multistep_operator(m, set, 0, q), std::invalid_argument);
    CHECK_THROWS_AS(greedy_multistep_operator(m, set, 2, QTable(4, 2, 0.0)),
                    std::invalid_argument);
    PolicySet wrong(std::vector<TabularPolicy>{TabularPolicy::uniform(4, 2)});
    CHECK_THROWS_AS(greedy_multistep_operator(m, wrong, 2, q), std::invalid_argument);
    CHECK_THROWS_AS(bellman_expectation(m, TabularPolicy::uniform(4, 2), q),
                    std::invalid_argument);
}
