#include "gms/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>
#include <utility>

namespace gms {

namespace {

QTable random_qtable(int num_states, int num_actions, double lo, double hi,
                     std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    QTable q(num_states, num_actions);
    for (int s = 0; s < num_states; ++s)
        for (int a = 0; a < num_actions; ++a) q(s, a) = dist(rng);
    return q;
}

double pessimistic_fill(const TabularMdp& mdp) {
    return mdp.min_reward() / (1.0 - mdp.gamma());
}

RngSeed mix_seed(RngSeed a, RngSeed b) {
    RngSeed x = a + 0x9E3779B97F4A7C15ULL * (b + 1);
    x ^= x >> 30;
    x *= 0xBF58476D1CE4E5B9ULL;
    x ^= x >> 27;
    x *= 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

// ------------------------------------------------------------------ battery

std::vector<BatteryEntry> standard_battery() {
    std::vector<BatteryEntry> out;
    for (int i = 0; i < 20; ++i) {
        RngSeed seed = 100 + static_cast<RngSeed>(i);
        int S = 3 + i % 8;
        int A = 2 + i % 3;
        int b = 1 + i % 3;
        std::ostringstream name;
        name << "random:" << seed << ':' << S << ':' << A << ':' << b;
        out.push_back({name.str(), make_random_mdp(seed, S, A, b), std::nullopt});
    }
    out.push_back({"gridworld:2", make_gridworld(2).mdp(), std::nullopt});
    out.push_back({"gridworld:5", make_gridworld(5).mdp(), std::nullopt});
    out.push_back({"traceback:5", make_traceback(5).mdp(), std::nullopt});
    out.push_back({"choice:3", make_choice(3).mdp(), std::nullopt});
    out.push_back({"delayed-choice:3", make_delayed_choice(3).mdp(), std::nullopt});
    auto [chain, chain_policies] = make_highway_chain(10);
    out.push_back({"chain:10", chain.mdp(), std::move(chain_policies)});
    return out;
}

std::vector<BatteryEntry> extended_battery() {
    auto out = standard_battery();
    out.push_back({"gridworld:10", make_gridworld(10).mdp(), std::nullopt});
    return out;
}

PolicySet random_policy_set(int num_states, int num_actions, int k, RngSeed seed,
                            bool deterministic) {
    if (k < 1) throw std::invalid_argument("random_policy_set: need at least one policy");
    std::mt19937_64 rng(seed);
    std::vector<TabularPolicy> policies;
    policies.reserve(k);
    for (int i = 0; i < k; ++i) {
        if (deterministic) {
            std::uniform_int_distribution<int> pick(0, num_actions - 1);
            std::vector<int> actions(num_states);
            for (auto& a : actions) a = pick(rng);
            policies.push_back(TabularPolicy::deterministic(num_states, num_actions, actions));
        } else {
            std::exponential_distribution<double> weight(1.0);
            std::vector<double> probs(static_cast<size_t>(num_states) * num_actions);
            for (int s = 0; s < num_states; ++s) {
                double total = 0.0;
                for (int a = 0; a < num_actions; ++a) {
                    double w = weight(rng);
                    probs[static_cast<size_t>(s) * num_actions + a] = w;
                    total += w;
                }
                for (int a = 0; a < num_actions; ++a)
                    probs[static_cast<size_t>(s) * num_actions + a] /= total;
            }
            policies.push_back(TabularPolicy::from_probs(num_states, num_actions, std::move(probs)));
        }
    }
    return PolicySet(std::move(policies));
}

PolicySet policy_set_with(const PolicySet& set, TabularPolicy extra) {
    std::vector<TabularPolicy> policies(set.begin(), set.end());
    policies.push_back(std::move(extra));
    return PolicySet(std::move(policies));
}

QTable refined_optimal_q(const TabularMdp& mdp, double eps, long extra_sweeps) {
    QTable q = solve_optimal_q(mdp, eps);
    for (long i = 0; i < extra_sweeps; ++i) {
        QTable next = bellman_optimality(mdp, q);
        if (next.data() == q.data()) return next;
        q = std::move(next);
    }
    return q;
}

ModelSource load_model(const std::string& spec) {
    if (is_env_spec(spec)) {
        EnvBundle bundle = parse_env_spec(spec);
        std::string name = bundle.env.name();
        return {bundle.env.mdp(), std::move(bundle.policies), std::move(name)};
    }
    return {read_mdp_file(spec), std::nullopt, spec};
}

PolicySet resolve_policy_spec(const std::string& spec, int num_states, int num_actions,
                              const std::optional<PolicySet>& bundled) {
    std::vector<TabularPolicy> policies;
    std::stringstream ss(spec);
    std::string atom;
    while (std::getline(ss, atom, ',')) {
        if (atom == "env") {
            if (!bundled)
                throw std::invalid_argument("policy spec 'env': this model has no bundled set");
            policies.insert(policies.end(), bundled->begin(), bundled->end());
        } else if (atom == "uniform") {
            policies.push_back(TabularPolicy::uniform(num_states, num_actions));
        } else if (atom.rfind("random:", 0) == 0) {
            auto rest = atom.substr(7);
            auto sep = rest.find(':');
            if (sep == std::string::npos)
                throw std::invalid_argument("policy spec '" + atom + "': want random:<k>:<seed>");
            int k = std::stoi(rest.substr(0, sep));
            RngSeed seed = std::stoull(rest.substr(sep + 1));
            PolicySet extra = random_policy_set(num_states, num_actions, k, seed);
            policies.insert(policies.end(), extra.begin(), extra.end());
        } else {
            throw std::invalid_argument("unknown policy spec atom '" + atom + "'");
        }
    }
    if (policies.empty()) throw std::invalid_argument("policy spec '" + spec + "' is empty");
    return PolicySet(std::move(policies));
}

// ------------------------------------------------------------ property suite

namespace {

/// Accumulates the worst violation seen by one property check.
struct Check {
    PropertyResult res;

    Check(std::string name, double tol) {
        res.name = std::move(name);
        res.tolerance = tol;
    }

    void observe(double violation, const std::string& where) {
        if (violation > res.max_violation) {
            res.max_violation = violation;
            res.detail = where;
        }
    }

    PropertyResult finish() {
        res.pass = res.max_violation <= res.tolerance;
        return std::move(res);
    }
};

double max_signed_excess(const QTable& a, const QTable& b) {
    double worst = -std::numeric_limits<double>::infinity();
    const auto& x = a.data();
    const auto& y = b.data();
    for (size_t i = 0; i < x.size(); ++i) worst = std::max(worst, x[i] - y[i]);
    return worst;
}

QTable shifted(const QTable& q, double delta) {
    QTable out = q;
    for (auto& v : out.data()) v += delta;
    return out;
}

/// Direct evaluation of the greedy return at one suffix position, used as
/// the oracle against the backward recurrence.
std::pair<double, int> direct_greedy_return(const TrajectoryView& traj, const QTable& q,
                                            double gamma, int max_step) {
    int limit = traj.length();
    if (max_step >= 1) limit = std::min(limit, max_step);
    double best = -std::numeric_limits<double>::infinity();
    int best_n = 1;
    for (int n = 1; n <= limit; ++n) {
        double acc = 0.0;
        double disc = 1.0;
        for (int i = 0; i < n; ++i) {
            acc += disc * traj.reward_at(i);
            disc *= gamma;
        }
        double boot = (n == traj.length() && traj.terminated())
                          ? 0.0
                          : q.max_over_actions(traj.state_at(n));
        double cand = acc + disc * boot;
        if (cand > best) {
            best = cand;
            best_n = n;
        }
    }
    return {best, best_n};
}

TrajectoryPtr random_trajectory(int num_states, int num_actions, int max_len,
                                std::mt19937_64& rng) {
    std::uniform_int_distribution<int> len_dist(1, max_len);
    std::uniform_int_distribution<int> state(0, num_states - 1);
    std::uniform_int_distribution<int> action(0, num_actions - 1);
    std::uniform_real_distribution<double> reward(-5.0, 5.0);
    int T = len_dist(rng);
    std::vector<TrajectoryStep> steps;
    steps.reserve(T);
    for (int t = 0; t < T; ++t)
        steps.push_back({reward(rng), state(rng), t + 1 < T ? action(rng) : -1});
    bool terminated = (rng() & 1) != 0;
    return std::make_shared<Trajectory>(state(rng), action(rng), std::move(steps), terminated);
}

bool deterministic_dynamics(const TabularMdp& mdp) {
    for (int s = 0; s < mdp.num_states(); ++s)
        for (int a = 0; a < mdp.num_actions(); ++a)
            if (mdp.transitions(s, a).size() != 1) return false;
    return true;
}

double mean_of_slice(const std::vector<int>& v, size_t lo, size_t hi) {
    double sum = 0.0;
    for (size_t i = lo; i < hi; ++i) sum += v[i];
    return sum / static_cast<double>(hi - lo);
}

/// First-decile mean of per-update chosen steps minus the last-decile mean;
/// positive when the run leaned on longer bootstraps early.
double decile_trend(const std::vector<int>& steps) {
    size_t n = steps.size();
    size_t k = std::max<size_t>(1, n / 10);
    if (n < 2 * k) return 0.0;
    return mean_of_slice(steps, 0, k) - mean_of_slice(steps, n - k, n);
}

}  // namespace

PropertyReport property_suite(const PropertyOptions& opt) {
    GreedyOp gop = opt.greedy_op;
    if (!gop)
        gop = [](const TabularMdp& m, const PolicySet& ps, int N, const QTable& q) {
            return greedy_multistep_operator(m, ps, N, q);
        };

    auto battery = extended_battery();
    const int kDepths[3] = {1, 2, 5};

    // Oracles are shared across checks; refine each model once.
    std::vector<QTable> qstar;
    qstar.reserve(battery.size());
    for (const auto& e : battery) qstar.push_back(refined_optimal_q(e.mdp, 1e-9));

    std::vector<PolicySet> sets;
    for (size_t i = 0; i < battery.size(); ++i) {
        const auto& m = battery[i].mdp;
        PolicySet ps = random_policy_set(m.num_states(), m.num_actions(), 3,
                                         opt.seed * 1000 + i);
        sets.push_back(policy_set_with(ps, TabularPolicy::uniform(m.num_states(),
                                                                  m.num_actions())));
    }

    PropertyReport report;

    {
        Check c("contraction-chain", 1e-12);
        for (size_t i = 0; i < battery.size(); ++i) {
            const auto& m = battery[i].mdp;
            std::mt19937_64 rng(mix_seed(opt.seed, i));
            for (int p = 0; p < opt.pairs; ++p) {
                int N = kDepths[p % 3];
                QTable q1 = random_qtable(m.num_states(), m.num_actions(), -10, 10, rng);
                QTable q2 = random_qtable(m.num_states(), m.num_actions(), -10, 10, rng);
                double dg = inf_dist(gop(m, sets[i], N, q1), gop(m, sets[i], N, q2));
                double db = inf_dist(bellman_optimality(m, q1), bellman_optimality(m, q2));
                double dq = inf_dist(q1, q2);
                c.observe(dg - db, battery[i].name + " greedy side");
                c.observe(db - m.gamma() * dq, battery[i].name + " one-step side");
            }
        }
        report.results.push_back(c.finish());
    }

    {
        Check c("multi-step-rate", 1e-12);
        for (size_t i = 0; i < battery.size(); ++i) {
            const auto& m = battery[i].mdp;
            std::mt19937_64 rng(mix_seed(opt.seed + 1, i));
            for (int p = 0; p < opt.pairs; ++p) {
                int N = kDepths[p % 3];
                QTable q1 = random_qtable(m.num_states(), m.num_actions(), -10, 10, rng);
                QTable q2 = random_qtable(m.num_states(), m.num_actions(), -10, 10, rng);
                double dn = inf_dist(multi_step_operator(m, sets[i], N, q1),
                                     multi_step_operator(m, sets[i], N, q2));
                c.observe(dn - std::pow(m.gamma(), N) * inf_dist(q1, q2), battery[i].name);
            }
        }
        report.results.push_back(c.finish());
    }

    {
        Check c("fixed-point", 1e-8);
        for (size_t i = 0; i < battery.size(); ++i) {
            const auto& m = battery[i].mdp;
            for (int N : kDepths)
                c.observe(inf_dist(gop(m, sets[i], N, qstar[i]), qstar[i]), battery[i].name);
        }
        report.results.push_back(c.finish());
    }

    {
        Check c("convergence", 1e-6);
        for (size_t i = 0; i < battery.size(); ++i) {
            const auto& m = battery[i].mdp;
            std::mt19937_64 rng(mix_seed(opt.seed + 2, i));
            QTable starts[2] = {
                QTable(m.num_states(), m.num_actions(), pessimistic_fill(m)),
                random_qtable(m.num_states(), m.num_actions(), -10, 10, rng)};
            for (auto& q0 : starts) {
                QTable q = q0;
                for (long it = 0; it < 5000; ++it) {
                    QTable next = gop(m, sets[i], 3, q);
                    double step = inf_dist(next, q);
                    q = std::move(next);
                    if (step <= 1e-10) break;
                }
                c.observe(inf_dist(q, qstar[i]), battery[i].name);
            }
        }
        report.results.push_back(c.finish());
    }

    {
        Check c("faster-contraction", 1e-12);
        for (size_t i = 0; i < battery.size(); ++i) {
            const auto& m = battery[i].mdp;
            std::mt19937_64 rng(mix_seed(opt.seed + 3, i));
            for (int p = 0; p < opt.pairs; ++p) {
                int N = kDepths[p % 3];
                QTable q = random_qtable(m.num_states(), m.num_actions(), -10, 10, rng);
                double dg = inf_dist(gop(m, sets[i], N, q), qstar[i]);
                double db = inf_dist(bellman_optimality(m, q), qstar[i]);
                c.observe(dg - db, battery[i].name);
            }
        }
        report.results.push_back(c.finish());
    }

    {
        Check c("exponential-rate", 1e-12);
        for (size_t i = 0; i < battery.size(); ++i) {
            const auto& m = battery[i].mdp;
            PolicySet with_opt = policy_set_with(sets[i], greedy_policy_from_q(qstar[i]));
            QTable q = shifted(qstar[i], -1.0);
            double d = inf_dist(q, qstar[i]);
            for (int N : {2, 3, 5})
                c.observe(inf_dist(gop(m, with_opt, N, q), qstar[i]) -
                              std::pow(m.gamma(), N) * d,
                          battery[i].name);
        }
        report.results.push_back(c.finish());
    }

    {
        Check c("monotonicity", 0.0);
        for (size_t i = 0; i < battery.size(); ++i) {
            const auto& m = battery[i].mdp;
            std::mt19937_64 rng(mix_seed(opt.seed + 4, i));
            std::uniform_real_distribution<double> bump(0.0, 2.0);
            int samples = std::max(1, opt.pairs / 4);
            for (int p = 0; p < samples; ++p) {
                int N = kDepths[p % 3];
                QTable q1 = random_qtable(m.num_states(), m.num_actions(), -10, 10, rng);
                QTable q2 = q1;
                for (auto& v : q2.data()) v += bump(rng);
                c.observe(max_signed_excess(gop(m, sets[i], N, q1), gop(m, sets[i], N, q2)),
                          battery[i].name);
            }
        }
        report.results.push_back(c.finish());
    }

    {
        Check c("suboptimal-fixed-point-bound", 1e-9);
        for (size_t i = 0; i < battery.size(); ++i) {
            const auto& m = battery[i].mdp;
            QTable q0(m.num_states(), m.num_actions(), pessimistic_fill(m));
            auto res = value_iteration(m, OperatorSpec::multi_step(sets[i], 3), q0, 1e-13,
                                       200000);
            c.observe(max_signed_excess(res.q, qstar[i]), battery[i].name);
        }
        report.results.push_back(c.finish());
    }

    {
        Check c("suboptimal-fixed-point-gap", 0.0);
        Env env = make_delayed_choice(3);
        const TabularMdp& m = env.mdp();
        QTable qs = refined_optimal_q(m, 1e-9);
        PolicySet uniform_only(
            std::vector<TabularPolicy>{TabularPolicy::uniform(m.num_states(), m.num_actions())});
        QTable q0(m.num_states(), m.num_actions(), pessimistic_fill(m));
        auto res = value_iteration(m, OperatorSpec::multi_step(uniform_only, 3), q0, 1e-13,
                                   200000);
        int best = qs.argmax_action(env.start_state());
        double gap = qs(env.start_state(), best) - res.q(env.start_state(), best);
        c.observe(1e-3 - gap, "delayed-choice:3 start-state gap");
        report.results.push_back(c.finish());
    }

    {
        Check c("optimal-fixed-point-recovery", 1e-7);
        for (const char* name : {"choice:3", "gridworld:5"}) {
            TabularMdp m = load_model(name).mdp;
            QTable qs = refined_optimal_q(m, 1e-9);
            PolicySet only_opt(std::vector<TabularPolicy>{greedy_policy_from_q(qs)});
            QTable q0(m.num_states(), m.num_actions(), pessimistic_fill(m));
            auto res =
                value_iteration(m, OperatorSpec::multi_step(only_opt, 3), q0, 1e-13, 200000);
            c.observe(inf_dist(res.q, qs), name);
        }
        report.results.push_back(c.finish());
    }

    {
        Check c("greedy-return-recurrence", 1e-12);
        std::mt19937_64 rng(mix_seed(opt.seed + 5, 99));
        const int S = 12, A = 3;
        for (int it = 0; it < opt.pairs; ++it) {
            QTable q = random_qtable(S, A, -10, 10, rng);
            TrajectoryPtr traj = random_trajectory(S, A, 50, rng);
            auto vec = greedy_return_backward(TrajectoryView(traj, 0), q, 0.9);
            for (int t = 0; t < traj->length(); ++t) {
                TrajectoryView view(traj, t);
                auto [val, n] = direct_greedy_return(view, q, 0.9, 0);
                c.observe(std::abs(vec.values[t] - val), "uncapped value");
                if (vec.chosen_steps[t] != n) c.observe(1.0, "uncapped chosen step");
            }
            for (int cap : {1, 3}) {
                TrajectoryView head(traj, 0);
                auto got = greedy_return_head(head, q, 0.9, cap);
                auto [val, n] = direct_greedy_return(head, q, 0.9, cap);
                c.observe(std::abs(got.value - val), "capped value");
                if (got.chosen_step != n) c.observe(1.0, "capped chosen step");
            }
        }
        report.results.push_back(c.finish());
    }

    {
        Check c("datastore-operator-equivalence", 1e-12);
        for (size_t i = 0; i < battery.size(); ++i) {
            const auto& m = battery[i].mdp;
            if (!deterministic_dynamics(m)) continue;
            PolicySet dets = random_policy_set(m.num_states(), m.num_actions(), 2,
                                               opt.seed * 77 + i);
            std::mt19937_64 rng(mix_seed(opt.seed + 6, i));
            for (int N : {1, 3}) {
                TrajectoryStore store = exhaustive_rollouts(m, dets, N);
                for (int rep = 0; rep < 5; ++rep) {
                    QTable q = random_qtable(m.num_states(), m.num_actions(), -10, 10, rng);
                    c.observe(inf_dist(greedy_datastore_sweep(store, q, m.gamma(), N),
                                       gop(m, dets, N, q)),
                              battery[i].name);
                }
            }
        }
        report.results.push_back(c.finish());
    }

    {
        // One offline greedy run on gridworld 5 backs two properties: the
        // iterates never cross the optimum, and with optimal suffixes at
        // every pair they land on it.
        Check bound("offline-safety-bound", 1e-9);
        Check conv("offline-convergence", 1e-6);
        Env env = make_gridworld(5);
        const TabularMdp& m = env.mdp();
        QTable qs = refined_optimal_q(m, 1e-9);
        TabularPolicy opt_policy = greedy_policy_from_q(qs);

        std::vector<TrajectoryPtr> dataset;
        for (int s = 0; s < m.num_states(); ++s) {
            if (m.is_terminal(s)) continue;
            for (int a = 0; a < m.num_actions(); ++a) {
                std::vector<TrajectoryStep> steps;
                int cur = s, act = a;
                for (long guard = 0; guard <= 10L * m.num_states(); ++guard) {
                    int nxt = m.transitions(cur, act)[0].next_state;
                    bool done = m.is_terminal(nxt);
                    steps.push_back({m.reward(cur, act), nxt, done ? -1 : opt_policy.action(nxt)});
                    if (done) break;
                    cur = nxt;
                    act = opt_policy.action(nxt);
                }
                dataset.push_back(std::make_shared<Trajectory>(s, a, std::move(steps), true));
            }
        }
        std::mt19937_64 rng(mix_seed(opt.seed + 7, 5));
        std::uniform_int_distribution<int> pick(0, m.num_actions() - 1);
        ActionSelector uniform = [pick](int, std::mt19937_64& r) mutable { return pick(r); };
        for (int e = 0; e < 30; ++e) dataset.push_back(sample_episode(env, uniform, rng));

        LearnerConfig cfg;
        cfg.algo = Algo::greedy_multistep;
        cfg.alpha = 1.0;
        cfg.gamma = m.gamma();
        cfg.store_capacity = 0;
        cfg.seed = opt.seed;
        double worst_bound = -std::numeric_limits<double>::infinity();
        SolvedCheck watch = [&](const QTable& q) {
            worst_bound = std::max(worst_bound, max_signed_excess(q, qs));
            return false;
        };
        auto [q, metrics] = offline_train(dataset, m, cfg, 10, watch);
        bound.observe(worst_bound, "gridworld:5 after-pass excess");
        double worst = 0.0;
        for (int s = 0; s < m.num_states(); ++s) {
            if (m.is_terminal(s)) continue;
            for (int a = 0; a < m.num_actions(); ++a)
                worst = std::max(worst, std::abs(q(s, a) - qs(s, a)));
        }
        conv.observe(worst, "gridworld:5 covered pairs");
        report.results.push_back(bound.finish());
        report.results.push_back(conv.finish());
    }

    {
        Check c("baseline-sanity", 0.0);
        Env env = make_gridworld(5);
        Algo algos[4] = {Algo::q_learning, Algo::nstep_sarsa, Algo::watkins_q_lambda,
                         Algo::uncorrected_nstep_q};
        for (int i = 0; i < 4; ++i) {
            LearnerConfig cfg;
            cfg.algo = algos[i];
            cfg.gamma = env.mdp().gamma();
            cfg.alpha = 0.2;
            // Start fully random: at the default table every one-step target
            // reproduces the initial value, so a mostly greedy walk pins the
            // learner to the start corner and nothing propagates.
            cfg.eps_explore = 1.0;
            cfg.eps_final = 0.05;
            cfg.max_step = 3;
            cfg.episodes = 4000;
            cfg.seed = 11 + static_cast<RngSeed>(i);
            auto [q, metrics] = run_baseline(env, cfg);
            if (!env.solved(q)) c.observe(1.0, algo_name(cfg.algo));
        }
        report.results.push_back(c.finish());
    }

    {
        Check c("chosen-step-trend", 0.0);
        Env env = make_gridworld(5);
        int trending = 0;
        for (RngSeed seed : {21, 22, 23}) {
            LearnerConfig cfg;
            cfg.gamma = env.mdp().gamma();
            cfg.alpha = 0.3;
            // At the default table the depth choice is degenerate: every
            // candidate equals the initial value, so the shallowest depth
            // always wins. Starting strictly below that tie point makes deep
            // bootstraps win until the table has actually learned something.
            cfg.q_init = -12.0;
            cfg.max_step = 8;
            cfg.episodes = 600;
            cfg.seed = seed;
            auto [q, metrics] = run_gm_q_learning(env, cfg);
            if (decile_trend(metrics.chosen_steps) > 0) ++trending;
        }
        c.observe(2.0 - trending, "gridworld:5, 3 seeds");
        report.results.push_back(c.finish());
    }

    return report;
}

void print_property_report(std::ostream& out, const PropertyReport& report) {
    int passed = 0;
    for (const auto& r : report.results) {
        out << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << "  max violation "
            << r.max_violation << " (tol " << r.tolerance << ")";
        if (!r.pass && !r.detail.empty()) out << "  at " << r.detail;
        out << '\n';
        if (r.pass) ++passed;
    }
    out << "properties: " << passed << '/' << report.results.size()
        << (report.all_pass() ? " pass\n" : " pass, FAILURES above\n");
}

// ---------------------------------------------------------------- rate report

RateReport rate_report(const TabularMdp& mdp, const std::vector<OperatorSpec>& specs,
                       const QTable& q0, double eps, long max_iter) {
    RateReport rep;
    rep.q_star = refined_optimal_q(mdp, 1e-9);

    bool below = true;
    for (size_t i = 0; i < q0.data().size(); ++i)
        if (q0.data()[i] > rep.q_star.data()[i] + 1e-12) below = false;

    for (const auto& spec : specs) {
        RateRow row;
        row.op = spec.name();
        int rate_power = spec.kind == OperatorKind::multi_step ? spec.max_step : 1;
        row.guaranteed_log_rate = rate_power * std::log(mdp.gamma());

        QTable q = q0;
        for (long k = 0; k < max_iter; ++k) {
            QTable next = apply_operator(mdp, spec, q);
            double step = inf_dist(next, q);
            row.residuals.push_back(step);
            row.dist_to_opt.push_back(inf_dist(next, rep.q_star));
            q = std::move(next);
            ++row.iterations;
            if (step <= eps) {
                row.converged = true;
                break;
            }
        }

        // Fit log residuals against the iteration index, ignoring the
        // rounding floor; three points make the smallest honest line.
        std::vector<std::pair<double, double>> pts;
        for (size_t k = 0; k < row.residuals.size(); ++k)
            if (row.residuals[k] > 1e-13)
                pts.push_back({static_cast<double>(k), std::log(row.residuals[k])});
        if (pts.size() >= 3) {
            double n = static_cast<double>(pts.size());
            double sx = 0, sy = 0, sxx = 0, sxy = 0;
            for (auto [x, y] : pts) {
                sx += x;
                sy += y;
                sxx += x * x;
                sxy += x * y;
            }
            row.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
            row.has_slope = true;
        }
        rep.rows.push_back(std::move(row));
    }

    // Iterate-by-iterate comparison of greedy rows against the first
    // one-step row; meaningful when the start lies below the optimum.
    const RateRow* base = nullptr;
    for (const auto& row : rep.rows)
        if (row.op == "b") {
            base = &row;
            break;
        }
    if (base && below) {
        bool any = false;
        for (const auto& row : rep.rows) {
            if (row.op.rfind("g[", 0) != 0) continue;
            any = true;
            size_t n = std::min(row.dist_to_opt.size(), base->dist_to_opt.size());
            for (size_t k = 0; k < n; ++k)
                rep.pairwise_max_excess =
                    std::max(rep.pairwise_max_excess, row.dist_to_opt[k] - base->dist_to_opt[k]);
        }
        rep.pairwise_applicable = any;
    }
    return rep;
}

void print_rate_report(std::ostream& out, const RateReport& report) {
    out << "operator        iters  converged  final-residual  slope       guaranteed\n";
    for (const auto& r : report.rows) {
        char buf[160];
        double final_res = r.residuals.empty() ? 0.0 : r.residuals.back();
        if (r.has_slope)
            std::snprintf(buf, sizeof(buf), "%-15s %5ld  %-9s  %-14.3e  %-10.4f  %-10.4f\n",
                          r.op.c_str(), r.iterations, r.converged ? "yes" : "no", final_res,
                          r.slope, r.guaranteed_log_rate);
        else
            std::snprintf(buf, sizeof(buf), "%-15s %5ld  %-9s  %-14.3e  %-10s  %-10.4f\n",
                          r.op.c_str(), r.iterations, r.converged ? "yes" : "no", final_res,
                          "-", r.guaranteed_log_rate);
        out << buf;
    }
    if (report.pairwise_applicable)
        out << "greedy vs one-step per-iterate max excess: " << report.pairwise_max_excess
            << '\n';
}

void write_rate_csv(std::ostream& out, const RateReport& report) {
    out << "op,iter,residual,dist_to_opt\n";
    for (const auto& r : report.rows)
        for (size_t k = 0; k < r.residuals.size(); ++k)
            out << r.op << ',' << k + 1 << ',' << format_double(r.residuals[k]) << ','
                << format_double(r.dist_to_opt[k]) << '\n';
}

// -------------------------------------------------------------- config files

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void config_fail(size_t line_no, const std::string& msg) {
    std::ostringstream os;
    os << "config error at line " << line_no << ": " << msg;
    throw std::runtime_error(os.str());
}

double parse_double(const std::string& v, size_t line_no) {
    try {
        size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return x;
    } catch (const std::exception&) {
        config_fail(line_no, "bad number '" + v + "'");
    }
}

long parse_integer(const std::string& v, size_t line_no) {
    try {
        size_t pos = 0;
        long x = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return x;
    } catch (const std::exception&) {
        config_fail(line_no, "bad integer '" + v + "'");
    }
}

bool parse_flag(const std::string& v, size_t line_no) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    config_fail(line_no, "bad flag '" + v + "' (want true/false)");
}

}  // namespace

ExperimentConfig read_experiment_config(std::istream& in) {
    ExperimentConfig cfg;
    std::string line;
    size_t line_no = 0;
    enum { kGlobal, kArm, kOp } section = kGlobal;

    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') config_fail(line_no, "unterminated section header");
            std::string inner = trim(line.substr(1, line.size() - 2));
            if (inner.rfind("arm ", 0) == 0) {
                std::string name = trim(inner.substr(4));
                if (name.empty()) config_fail(line_no, "arm section needs a name");
                for (const auto& a : cfg.arms)
                    if (a.name == name) config_fail(line_no, "duplicate arm '" + name + "'");
                cfg.arms.push_back({name, LearnerConfig{}, false});
                section = kArm;
            } else if (inner.rfind("op ", 0) == 0) {
                std::string name = trim(inner.substr(3));
                if (name.empty()) config_fail(line_no, "op section needs a name");
                for (const auto& a : cfg.op_arms)
                    if (a.name == name) config_fail(line_no, "duplicate op '" + name + "'");
                OpArmConfig op;
                op.name = name;
                cfg.op_arms.push_back(std::move(op));
                section = kOp;
            } else {
                config_fail(line_no, "unknown section '" + inner + "'");
            }
            continue;
        }

        auto eq = line.find('=');
        if (eq == std::string::npos) config_fail(line_no, "expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) config_fail(line_no, "empty key");

        if (section == kGlobal) {
            if (key == "id") cfg.id = value;
            else if (key == "env") cfg.env_spec = value;
            else if (key == "mode") {
                if (value == "train") cfg.mode = ExperimentMode::train;
                else if (value == "offline") cfg.mode = ExperimentMode::offline;
                else if (value == "operators") cfg.mode = ExperimentMode::operators;
                else config_fail(line_no, "mode must be train, offline or operators");
            } else if (key == "trials") cfg.trials = static_cast<int>(parse_integer(value, line_no));
            else if (key == "seed_base") cfg.seed_base = static_cast<RngSeed>(parse_integer(value, line_no));
            else if (key == "threads") cfg.threads = static_cast<int>(parse_integer(value, line_no));
            else if (key == "eval_every") cfg.eval_every = parse_integer(value, line_no);
            else if (key == "out_dir") cfg.out_dir = value;
            else if (key == "passes") cfg.passes = parse_integer(value, line_no);
            else if (key == "dataset_episodes") cfg.dataset_episodes = parse_integer(value, line_no);
            else if (key == "dataset_max_episodes") cfg.dataset_max_episodes = parse_integer(value, line_no);
            else if (key == "op_eps") cfg.op_eps = parse_double(value, line_no);
            else if (key == "op_max_iter") cfg.op_max_iter = parse_integer(value, line_no);
            else if (key == "op_q0") {
                if (value != "zero" && value != "pessimistic")
                    config_fail(line_no, "op_q0 must be zero or pessimistic");
                cfg.op_q0 = value;
            } else config_fail(line_no, "unknown key '" + key + "'");
        } else if (section == kArm) {
            LearnerConfig& lc = cfg.arms.back().learner;
            if (key == "algo") {
                try {
                    lc.algo = algo_from_name(value);
                } catch (const std::exception& e) {
                    config_fail(line_no, e.what());
                }
            } else if (key == "alpha") lc.alpha = parse_double(value, line_no);
            else if (key == "gamma") {
                lc.gamma = parse_double(value, line_no);
                cfg.arms.back().gamma_from_config = true;
            } else if (key == "eps_explore") lc.eps_explore = parse_double(value, line_no);
            else if (key == "eps_final") lc.eps_final = parse_double(value, line_no);
            else if (key == "max_step") lc.max_step = static_cast<int>(parse_integer(value, line_no));
            else if (key == "lambda") lc.lambda = parse_double(value, line_no);
            else if (key == "q_init") lc.q_init = parse_double(value, line_no);
            else if (key == "episodes") lc.episodes = parse_integer(value, line_no);
            else if (key == "store_capacity") lc.store_capacity = static_cast<size_t>(parse_integer(value, line_no));
            else config_fail(line_no, "unknown arm key '" + key + "'");
        } else {
            OpArmConfig& op = cfg.op_arms.back();
            if (key == "kind") {
                if (value != "b" && value != "bn" && value != "g")
                    config_fail(line_no, "kind must be b, bn or g");
                op.kind = value;
            } else if (key == "n") op.n = static_cast<int>(parse_integer(value, line_no));
            else if (key == "policies") op.policies = value;
            else if (key == "successor_max") op.successor_max = parse_flag(value, line_no);
            else config_fail(line_no, "unknown op key '" + key + "'");
        }
    }

    if (cfg.env_spec.empty()) throw std::runtime_error("config error: no env given");
    if (cfg.trials < 1) throw std::runtime_error("config error: trials must be at least 1");
    if (cfg.mode == ExperimentMode::operators) {
        if (cfg.op_arms.empty()) throw std::runtime_error("config error: no [op ...] sections");
    } else if (cfg.arms.empty()) {
        throw std::runtime_error("config error: no [arm ...] sections");
    }
    return cfg;
}

ExperimentConfig read_experiment_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file: " + path);
    return read_experiment_config(f);
}

// --------------------------------------------------------------- experiments

double greedy_eval_return(const Env& env, const QTable& q, RngSeed seed) {
    std::mt19937_64 rng(seed);
    ActionSelector greedy = [&q](int s, std::mt19937_64&) { return q.argmax_action(s); };
    return sample_episode(env, greedy, rng)->undiscounted_return();
}

std::vector<TrajectoryPtr> collect_dataset(const Env& env, long episodes, long max_episodes,
                                           RngSeed seed) {
    const TabularMdp& mdp = env.mdp();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, mdp.num_actions() - 1);
    ActionSelector uniform = [pick](int, std::mt19937_64& r) mutable { return pick(r); };

    std::vector<TrajectoryPtr> out;
    if (episodes > 0) {
        for (long e = 0; e < episodes; ++e) out.push_back(sample_episode(env, uniform, rng));
        return out;
    }

    long target = 0;
    for (int s = 0; s < mdp.num_states(); ++s)
        if (!mdp.is_terminal(s)) target += mdp.num_actions();
    TrajectoryStore probe(mdp.num_states(), mdp.num_actions(), 1);
    while (static_cast<long>(out.size()) < max_episodes) {
        TrajectoryPtr tr = sample_episode(env, uniform, rng);
        probe.insert(tr);
        out.push_back(tr);
        if (static_cast<long>(probe.covered_keys().size()) >= target) break;
    }
    return out;
}

TrajectoryStore exhaustive_rollouts(const TabularMdp& mdp, const PolicySet& policies,
                                    int depth) {
    if (depth < 1) throw std::invalid_argument("exhaustive_rollouts: depth must be positive");
    for (const auto& p : policies)
        if (!p.is_deterministic())
            throw std::invalid_argument("exhaustive_rollouts: policies must be deterministic");
    auto next_of = [&](int s, int a) {
        const auto& row = mdp.transitions(s, a);
        if (row.size() != 1)
            throw std::invalid_argument("exhaustive_rollouts: dynamics must be deterministic");
        return row[0].next_state;
    };

    TrajectoryStore store(mdp.num_states(), mdp.num_actions(), 0);
    for (int s = 0; s < mdp.num_states(); ++s)
        for (int a = 0; a < mdp.num_actions(); ++a)
            for (const auto& pi : policies) {
                std::vector<TrajectoryStep> steps;
                steps.reserve(depth);
                int cur = s, act = a;
                for (int d = 0; d < depth; ++d) {
                    int nxt = next_of(cur, act);
                    int nact = d + 1 < depth ? pi.action(nxt) : -1;
                    steps.push_back({mdp.reward(cur, act), nxt, nact});
                    cur = nxt;
                    act = nact;
                }
                store.insert(std::make_shared<Trajectory>(s, a, std::move(steps), false));
            }
    return store;
}

namespace {

TrialRow run_one_trial(const ExperimentConfig& cfg, const ArmConfig& arm, int trial) {
    TrialRow row;
    row.arm = arm.name;
    row.trial = trial;
    row.seed = cfg.seed_base + static_cast<RngSeed>(trial);
    try {
        EnvBundle bundle = parse_env_spec(cfg.env_spec);
        const Env& env = bundle.env;
        LearnerConfig lc = arm.learner;
        lc.seed = row.seed;
        const long budget = cfg.mode == ExperimentMode::offline ? cfg.passes : lc.episodes;

        long counter = 0;
        SolvedCheck watch = [&](const QTable& q) {
            ++counter;
            if (cfg.eval_every > 0 && counter % cfg.eval_every == 0)
                row.evals.push_back(
                    {counter, greedy_eval_return(env, q, mix_seed(row.seed, counter))});
            return env.has_solved_check() ? env.solved(q) : false;
        };

        QTable q;
        RunMetrics m;
        if (cfg.mode == ExperimentMode::offline) {
            auto dataset =
                collect_dataset(env, cfg.dataset_episodes, cfg.dataset_max_episodes, row.seed);
            std::tie(q, m) = offline_train(dataset, env.mdp(), lc, cfg.passes, watch);
        } else {
            std::tie(q, m) = run_learner(env, lc, watch);
        }

        row.solved = m.solved;
        row.episodes_to_solve = m.solved ? m.episodes_to_solve : budget;
        row.final_return = m.final_return;
        for (long u : m.updates_per_episode) row.total_updates += u;
        if (!m.chosen_steps.empty()) {
            double sum = 0.0;
            for (int c : m.chosen_steps) sum += c;
            row.mean_chosen_step = sum / static_cast<double>(m.chosen_steps.size());
        }
    } catch (const std::exception& e) {
        row.error = e.what();
    }
    return row;
}

void run_operator_comparison(const ExperimentConfig& cfg, ExperimentResult& result) {
    ModelSource src = load_model(cfg.env_spec);
    QTable qstar = refined_optimal_q(src.mdp, 1e-9);
    double fill = cfg.op_q0 == "pessimistic" ? pessimistic_fill(src.mdp) : 0.0;
    if (cfg.op_q0 != "zero" && cfg.op_q0 != "pessimistic")
        throw std::runtime_error("op_q0 must be zero or pessimistic");
    QTable q0(src.mdp.num_states(), src.mdp.num_actions(), fill);

    for (const auto& oa : cfg.op_arms) {
        OpRow row;
        row.arm = oa.name;
        try {
            OperatorSpec spec = OperatorSpec::optimality();
            if (oa.kind != "b") {
                PolicySet ps = resolve_policy_spec(oa.policies, src.mdp.num_states(),
                                                   src.mdp.num_actions(), src.policies);
                spec = oa.kind == "bn" ? OperatorSpec::multi_step(ps, oa.n)
                                       : OperatorSpec::greedy(ps, oa.n, oa.successor_max);
            }
            SolveResult sr = value_iteration(src.mdp, spec, q0, cfg.op_eps, cfg.op_max_iter);
            row.iterations = sr.iterations;
            row.converged = sr.converged;
            row.final_residual = sr.residuals.empty() ? 0.0 : sr.residuals.back();
            row.dist_to_opt = inf_dist(sr.q, qstar);
        } catch (const std::exception& e) {
            row.error = e.what();
            result.ok = false;
        }
        result.op_rows.push_back(std::move(row));
    }
}

void write_csv_file(const std::filesystem::path& path,
                    const std::function<void(std::ostream&)>& body) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    body(out);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    if (cfg.trials < 1) throw std::invalid_argument("run_experiment: trials must be at least 1");
    ExperimentResult result;
    result.config = cfg;

    if (cfg.mode == ExperimentMode::operators) {
        if (cfg.op_arms.empty())
            throw std::invalid_argument("run_experiment: operators mode without op arms");
        run_operator_comparison(cfg, result);
    } else {
        if (cfg.arms.empty()) throw std::invalid_argument("run_experiment: no learner arms");

        // Arms inherit the environment's discount unless the config pinned one.
        double env_gamma = parse_env_spec(cfg.env_spec).env.mdp().gamma();
        std::vector<ArmConfig> arms = cfg.arms;
        for (auto& a : arms)
            if (!a.gamma_from_config) a.learner.gamma = env_gamma;

        const long total = static_cast<long>(arms.size()) * cfg.trials;
        result.rows.resize(total);
        std::atomic<long> next{0};
        auto worker = [&]() {
            for (;;) {
                long t = next.fetch_add(1);
                if (t >= total) return;
                result.rows[t] =
                    run_one_trial(cfg, arms[t / cfg.trials], static_cast<int>(t % cfg.trials));
            }
        };
        int nthreads = std::max(1, cfg.threads);
        if (nthreads == 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
            for (auto& th : pool) th.join();
        }

        for (size_t ai = 0; ai < arms.size(); ++ai) {
            ArmSummary sum;
            sum.arm = arms[ai].name;
            std::vector<double> ets, ret;
            double chosen = 0.0;
            long ok_rows = 0;
            for (int t = 0; t < cfg.trials; ++t) {
                const TrialRow& row = result.rows[ai * cfg.trials + t];
                ++sum.trials;
                if (!row.error.empty()) {
                    result.ok = false;
                    continue;
                }
                ++ok_rows;
                if (row.solved) ++sum.solved_count;
                ets.push_back(static_cast<double>(row.episodes_to_solve));
                ret.push_back(row.final_return);
                chosen += row.mean_chosen_step;
            }
            if (!ets.empty()) {
                sum.episodes_to_solve = aggregate(ets);
                sum.final_return = aggregate(ret);
                sum.mean_chosen_step = chosen / static_cast<double>(ok_rows);
            }
            result.summaries.push_back(std::move(sum));
        }
    }

    if (!cfg.out_dir.empty()) {
        std::filesystem::path dir(cfg.out_dir);
        std::filesystem::create_directories(dir);
        if (cfg.mode == ExperimentMode::operators) {
            write_csv_file(dir / (cfg.id + "_ops.csv"),
                           [&](std::ostream& o) { write_ops_csv(o, result); });
        } else {
            write_csv_file(dir / (cfg.id + "_trials.csv"),
                           [&](std::ostream& o) { write_trials_csv(o, result); });
            write_csv_file(dir / (cfg.id + "_summary.csv"),
                           [&](std::ostream& o) { write_summary_csv(o, result); });
            if (cfg.eval_every > 0)
                write_csv_file(dir / (cfg.id + "_eval.csv"),
                               [&](std::ostream& o) { write_eval_csv(o, result); });
        }
    }
    return result;
}

void write_trials_csv(std::ostream& out, const ExperimentResult& result) {
    out << "arm,trial,seed,solved,episodes_to_solve,final_return,mean_chosen_step,"
           "total_updates,error\n";
    for (const auto& r : result.rows)
        out << r.arm << ',' << r.trial << ',' << r.seed << ',' << (r.solved ? 1 : 0) << ','
            << r.episodes_to_solve << ',' << format_double(r.final_return) << ','
            << format_double(r.mean_chosen_step) << ',' << r.total_updates << ',' << r.error
            << '\n';
}

void write_summary_csv(std::ostream& out, const ExperimentResult& result) {
    out << "arm,trials,solved,ets_median,ets_mean,ets_q25,ets_q75,return_median,return_mean,"
           "mean_chosen_step\n";
    for (const auto& s : result.summaries)
        out << s.arm << ',' << s.trials << ',' << s.solved_count << ','
            << format_double(s.episodes_to_solve.median) << ','
            << format_double(s.episodes_to_solve.mean) << ','
            << format_double(s.episodes_to_solve.q25) << ','
            << format_double(s.episodes_to_solve.q75) << ','
            << format_double(s.final_return.median) << ',' << format_double(s.final_return.mean)
            << ',' << format_double(s.mean_chosen_step) << '\n';
}

void write_eval_csv(std::ostream& out, const ExperimentResult& result) {
    out << "arm,trial,episode,eval_return\n";
    for (const auto& r : result.rows)
        for (const auto& e : r.evals)
            out << r.arm << ',' << r.trial << ',' << e.episode << ','
                << format_double(e.eval_return) << '\n';
}

void write_ops_csv(std::ostream& out, const ExperimentResult& result) {
    out << "arm,iterations,converged,final_residual,dist_to_opt,error\n";
    for (const auto& r : result.op_rows)
        out << r.arm << ',' << r.iterations << ',' << (r.converged ? 1 : 0) << ','
            << format_double(r.final_residual) << ',' << format_double(r.dist_to_opt) << ','
            << r.error << '\n';
}

}  // namespace gms
