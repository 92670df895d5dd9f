#include "gms/env.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace gms {

namespace {

/// Walk the greedy policy of `q` along most-probable successors. Returns the
/// number of steps needed to enter a terminal state, or -1 if the walk does
/// not get there within `cap` steps.
long greedy_path_steps(const TabularMdp& mdp, const QTable& q, int start, long cap) {
    int s = start;
    for (long steps = 1; steps <= cap; ++steps) {
        int a = q.argmax_action(s);
        const auto& row = mdp.transitions(s, a);
        if (row.empty()) return -1;
        int next = row[0].next_state;
        double best = row[0].prob;
        for (const auto& t : row) {
            if (t.prob > best) {
                best = t.prob;
                next = t.next_state;
            }
        }
        if (mdp.is_terminal(next)) return steps;
        s = next;
    }
    return -1;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    parts.push_back(cur);
    return parts;
}

long parse_long(const std::string& tok, const std::string& spec) {
    try {
        size_t used = 0;
        long v = std::stol(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("bad env spec '" + spec + "': expected integer, got '" + tok + "'");
    }
}

}  // namespace

int Env::sample_next(int s, int a, std::mt19937_64& rng) const {
    const auto& row = mdp_.transitions(s, a);
    if (row.empty()) throw std::logic_error("Env: no transitions from sampled pair");
    if (row.size() == 1) return row[0].next_state;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double u = unit(rng);
    double acc = 0.0;
    for (const auto& t : row) {
        acc += t.prob;
        if (u < acc) return t.next_state;
    }
    return row.back().next_state;
}

Env make_gridworld(int n) {
    if (n < 2) throw std::invalid_argument("make_gridworld: n must be at least 2");
    const int S = n * n;
    const int goal = S - 1;
    double gamma = n >= 10 ? 0.99 : 0.9;
    TabularMdp mdp(S, 4, gamma);

    auto id = [n](int row, int col) { return row * n + col; };
    for (int row = 0; row < n; ++row) {
        for (int col = 0; col < n; ++col) {
            int s = id(row, col);
            if (s == goal) continue;
            const int dr[4] = {-1, 1, 0, 0};
            const int dc[4] = {0, 0, -1, 1};
            for (int a = 0; a < 4; ++a) {
                int r2 = row + dr[a], c2 = col + dc[a];
                if (r2 < 0 || r2 >= n || c2 < 0 || c2 >= n) {
                    r2 = row;
                    c2 = col;
                }
                mdp.add_transition(s, a, id(r2, c2), 1.0);
                mdp.set_reward(s, a, -1.0);
            }
        }
    }
    mdp.mark_terminal(goal);

    const long shortest = 2L * (n - 1);
    auto solved = [shortest](const TabularMdp& m, const QTable& q) {
        return greedy_path_steps(m, q, 0, 10L * m.num_states()) == shortest;
    };
    std::ostringstream name;
    name << "gridworld:" << n;
    return Env(std::move(mdp), 0, 10L * S, name.str(), solved);
}

Env make_traceback(int T) {
    if (T < 3) throw std::invalid_argument("make_traceback: T must be at least 3");
    // State 0 is the start; level t in [1, T-1] has a "on the rewarded
    // prefix" state 2t-1 and an "off it" state 2t; state 2T-1 is terminal.
    const int S = 2 * T;
    const int term = S - 1;
    TabularMdp mdp(S, 2, 0.9);
    auto good = [](int t) { return 2 * t - 1; };
    auto bad = [](int t) { return 2 * t; };

    mdp.add_transition(0, 1, good(1), 1.0);
    mdp.add_transition(0, 0, bad(1), 1.0);
    // Second action decides the prefix; afterwards the branch is frozen.
    mdp.add_transition(good(1), 0, good(2), 1.0);
    mdp.add_transition(good(1), 1, bad(2), 1.0);
    mdp.add_transition(bad(1), 0, bad(2), 1.0);
    mdp.add_transition(bad(1), 1, bad(2), 1.0);
    for (int t = 2; t < T - 1; ++t) {
        for (int a = 0; a < 2; ++a) {
            mdp.add_transition(good(t), a, good(t + 1), 1.0);
            mdp.add_transition(bad(t), a, bad(t + 1), 1.0);
        }
    }
    for (int a = 0; a < 2; ++a) {
        mdp.add_transition(good(T - 1), a, term, 1.0);
        mdp.add_transition(bad(T - 1), a, term, 1.0);
        mdp.set_reward(good(T - 1), a, 10.0);
        mdp.set_reward(bad(T - 1), a, -1.0);
    }
    mdp.mark_terminal(term);

    auto solved = [](const TabularMdp&, const QTable& q) {
        return q.argmax_action(0) == 1 && q.argmax_action(1) == 0;
    };
    std::ostringstream name;
    name << "traceback:" << T;
    return Env(std::move(mdp), 0, T, name.str(), solved);
}

Env make_choice(int T) {
    if (T < 2) throw std::invalid_argument("make_choice: T must be at least 2");
    // State 0 is the start; corridor c position j in [1, T-1] is state
    // 2(j-1)+c+1; the last state is terminal.
    const int S = 2 * T;
    const int term = S - 1;
    TabularMdp mdp(S, 2, 0.9);
    auto cell = [](int c, int j) { return 2 * (j - 1) + c + 1; };

    for (int c = 0; c < 2; ++c) {
        mdp.add_transition(0, c, cell(c, 1), 1.0);
        for (int j = 1; j < T - 1; ++j)
            for (int a = 0; a < 2; ++a) mdp.add_transition(cell(c, j), a, cell(c, j + 1), 1.0);
        for (int a = 0; a < 2; ++a) {
            mdp.add_transition(cell(c, T - 1), a, term, 1.0);
            mdp.set_reward(cell(c, T - 1), a, c == 1 ? 10.0 : 1.0);
        }
    }
    mdp.mark_terminal(term);

    auto solved = [](const TabularMdp&, const QTable& q) { return q.argmax_action(0) == 1; };
    std::ostringstream name;
    name << "choice:" << T;
    return Env(std::move(mdp), 0, T, name.str(), solved);
}

Env make_delayed_choice(int T) {
    if (T < 3) throw std::invalid_argument("make_delayed_choice: T must be at least 3");
    // State 0 forces into fork state 1; the action taken at the fork picks
    // corridor c, whose position j in [1, T-2] is state 2(j-1)+c+2.
    const int S = 2 * T - 1;
    const int term = S - 1;
    TabularMdp mdp(S, 2, 0.9);
    auto cell = [](int c, int j) { return 2 * (j - 1) + c + 2; };

    for (int a = 0; a < 2; ++a) mdp.add_transition(0, a, 1, 1.0);
    for (int c = 0; c < 2; ++c) {
        mdp.add_transition(1, c, cell(c, 1), 1.0);
        for (int j = 1; j < T - 2; ++j)
            for (int a = 0; a < 2; ++a) mdp.add_transition(cell(c, j), a, cell(c, j + 1), 1.0);
        for (int a = 0; a < 2; ++a) {
            mdp.add_transition(cell(c, T - 2), a, term, 1.0);
            mdp.set_reward(cell(c, T - 2), a, c == 1 ? 10.0 : 1.0);
        }
    }
    mdp.mark_terminal(term);

    auto solved = [](const TabularMdp&, const QTable& q) { return q.argmax_action(1) == 1; };
    std::ostringstream name;
    name << "delayed-choice:" << T;
    return Env(std::move(mdp), 0, T, name.str(), solved);
}

std::pair<Env, PolicySet> make_highway_chain(int N) {
    if (N < 2) throw std::invalid_argument("make_highway_chain: N must be at least 2");
    const int S = N + 1;
    TabularMdp mdp(S, 2, 0.9);
    for (int s = 0; s < N; ++s) {
        mdp.add_transition(s, 0, s + 1, 1.0);  // advance
        mdp.add_transition(s, 1, s, 1.0);      // stray
        if (s == N - 1) mdp.set_reward(s, 0, 1.0);
    }
    mdp.mark_terminal(N);

    auto solved = [N](const TabularMdp& m, const QTable& q) {
        return greedy_path_steps(m, q, 0, 10L * m.num_states()) == N;
    };
    std::ostringstream name;
    name << "chain:" << N;
    Env env(std::move(mdp), 0, 10L * N, name.str(), solved);

    std::vector<int> advance(S, 0);
    PolicySet policies({TabularPolicy::deterministic(S, 2, advance), TabularPolicy::uniform(S, 2)});
    return {std::move(env), std::move(policies)};
}

TabularMdp make_random_mdp(RngSeed seed, int num_states, int num_actions, int branching) {
    if (num_states < 2) throw std::invalid_argument("make_random_mdp: need at least 2 states");
    if (num_actions < 1) throw std::invalid_argument("make_random_mdp: need at least 1 action");
    if (branching < 1 || branching > num_states)
        throw std::invalid_argument("make_random_mdp: branching must lie in [1, num_states]");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> reward_dist(-1.0, 1.0);
    std::exponential_distribution<double> exp1(1.0);

    TabularMdp mdp(num_states, num_actions, 0.9);
    std::vector<int> all_states(num_states);
    std::iota(all_states.begin(), all_states.end(), 0);

    const int term = num_states - 1;
    for (int s = 0; s < num_states; ++s) {
        if (s == term) continue;
        for (int a = 0; a < num_actions; ++a) {
            std::vector<int> succ;
            std::sample(all_states.begin(), all_states.end(), std::back_inserter(succ),
                        branching, rng);
            std::vector<double> weights(succ.size());
            double total = 0.0;
            for (auto& w : weights) {
                w = exp1(rng);
                total += w;
            }
            for (size_t i = 0; i < succ.size(); ++i)
                mdp.add_transition(s, a, succ[i], weights[i] / total);
            mdp.set_reward(s, a, reward_dist(rng));
        }
    }
    mdp.mark_terminal(term);
    return mdp;
}

TrajectoryPtr sample_episode(const Env& env, const ActionSelector& select, std::mt19937_64& rng) {
    if (!select) throw std::invalid_argument("sample_episode: null action selector");
    const TabularMdp& mdp = env.mdp();
    if (mdp.is_terminal(env.start_state()))
        throw std::logic_error("sample_episode: start state is terminal");

    int s = env.start_state();
    int a = select(s, rng);
    const int s0 = s, a0 = a;
    std::vector<TrajectoryStep> steps;
    bool terminated = false;

    for (long t = 0;; ++t) {
        double r = mdp.reward(s, a);
        int s2 = env.sample_next(s, a, rng);
        steps.push_back({r, s2, -1});
        if (mdp.is_terminal(s2)) {
            terminated = true;
            break;
        }
        if (t + 1 >= env.step_cap()) break;
        int a2 = select(s2, rng);
        steps.back().next_action = a2;
        s = s2;
        a = a2;
    }
    return std::make_shared<Trajectory>(s0, a0, std::move(steps), terminated);
}

TrajectoryPtr sample_episode(const Env& env, const ActionSelector& select, RngSeed seed) {
    std::mt19937_64 rng(seed);
    return sample_episode(env, select, rng);
}

TrajectoryPtr sample_episode(const Env& env, const TabularPolicy& policy, RngSeed seed) {
    return sample_episode(
        env, [&policy](int s, std::mt19937_64& rng) { return policy.sample(s, rng); }, seed);
}

bool is_env_spec(const std::string& spec) {
    auto head = spec.substr(0, spec.find(':'));
    return head == "gridworld" || head == "traceback" || head == "choice" ||
           head == "delayed-choice" || head == "chain" || head == "random";
}

EnvBundle parse_env_spec(const std::string& spec) {
    auto parts = split(spec, ':');
    const std::string& kind = parts[0];
    auto want = [&](size_t n) {
        if (parts.size() != n)
            throw std::invalid_argument("bad env spec '" + spec + "': wrong number of fields");
    };

    if (kind == "gridworld") {
        want(2);
        return {make_gridworld(static_cast<int>(parse_long(parts[1], spec))), std::nullopt};
    }
    if (kind == "traceback") {
        want(2);
        return {make_traceback(static_cast<int>(parse_long(parts[1], spec))), std::nullopt};
    }
    if (kind == "choice") {
        want(2);
        return {make_choice(static_cast<int>(parse_long(parts[1], spec))), std::nullopt};
    }
    if (kind == "delayed-choice") {
        want(2);
        return {make_delayed_choice(static_cast<int>(parse_long(parts[1], spec))), std::nullopt};
    }
    if (kind == "chain") {
        want(2);
        auto [env, pol] = make_highway_chain(static_cast<int>(parse_long(parts[1], spec)));
        return {std::move(env), std::move(pol)};
    }
    if (kind == "random") {
        want(5);
        RngSeed seed = static_cast<RngSeed>(parse_long(parts[1], spec));
        int S = static_cast<int>(parse_long(parts[2], spec));
        int A = static_cast<int>(parse_long(parts[3], spec));
        int b = static_cast<int>(parse_long(parts[4], spec));
        TabularMdp mdp = make_random_mdp(seed, S, A, b);
        std::ostringstream name;
        name << "random:" << seed << ':' << S << ':' << A << ':' << b;
        return {Env(std::move(mdp), 0, 10L * S, name.str()), std::nullopt};
    }
    throw std::invalid_argument("unknown env spec '" + spec + "'");
}

}  // namespace gms
