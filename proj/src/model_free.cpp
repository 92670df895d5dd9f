#include "gms/model_free.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace gms {

namespace {

using Clock = std::chrono::steady_clock;

double eps_at(const LearnerConfig& cfg, long episode) {
    if (cfg.episodes <= 1) return cfg.eps_explore;
    double f = static_cast<double>(episode) / static_cast<double>(cfg.episodes - 1);
    return cfg.eps_explore + f * (cfg.eps_final - cfg.eps_explore);
}

ActionSelector eps_greedy(const QTable& q, const double& eps) {
    return [&q, &eps](int s, std::mt19937_64& rng) {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        if (unit(rng) < eps) {
            std::uniform_int_distribution<int> pick(0, q.num_actions() - 1);
            return pick(rng);
        }
        return q.argmax_action(s);
    };
}

void finish_episode(RunMetrics& m, const LearnerConfig& cfg, double ep_return, long steps,
                    long updates, const SolvedCheck& solved, const QTable& q, long episode) {
    (void)cfg;
    m.episode_returns.push_back(ep_return);
    m.episode_steps.push_back(steps);
    m.updates_per_episode.push_back(updates);
    m.final_return = ep_return;
    // The callback runs every episode (it may carry evaluation side effects);
    // only the first positive result is recorded.
    if (solved && solved(q) && !m.solved) {
        m.solved = true;
        m.episodes_to_solve = episode + 1;
    }
}

double bootstrap_max(const TabularMdp& mdp, const QTable& q, int s) {
    return mdp.is_terminal(s) ? 0.0 : q.max_over_actions(s);
}

}  // namespace

Algo algo_from_name(const std::string& name) {
    if (name == "gm") return Algo::greedy_multistep;
    if (name == "q") return Algo::q_learning;
    if (name == "sarsa-n") return Algo::nstep_sarsa;
    if (name == "qlambda") return Algo::watkins_q_lambda;
    if (name == "nstep-q") return Algo::uncorrected_nstep_q;
    throw std::invalid_argument("unknown algorithm '" + name +
                                "' (expected gm, q, sarsa-n, qlambda or nstep-q)");
}

std::string algo_name(Algo algo) {
    switch (algo) {
        case Algo::greedy_multistep: return "gm";
        case Algo::q_learning: return "q";
        case Algo::nstep_sarsa: return "sarsa-n";
        case Algo::watkins_q_lambda: return "qlambda";
        case Algo::uncorrected_nstep_q: return "nstep-q";
    }
    return "?";
}

double resolve_q_init(const LearnerConfig& cfg, const TabularMdp& mdp) {
    if (cfg.q_init) return *cfg.q_init;
    return mdp.min_reward() / (1.0 - cfg.gamma);
}

GreedyReturnVector greedy_return_backward(const TrajectoryView& traj, const QTable& q,
                                          double gamma) {
    const int T = traj.length();
    GreedyReturnVector out;
    out.values.resize(T);
    out.chosen_steps.resize(T);

    double boot_end = traj.terminated() ? 0.0 : q.max_over_actions(traj.state_at(T));
    out.values[T - 1] = traj.reward_at(T - 1) + gamma * boot_end;
    out.chosen_steps[T - 1] = 1;

    for (int t = T - 2; t >= 0; --t) {
        double boot = q.max_over_actions(traj.state_at(t + 1));
        if (boot >= out.values[t + 1]) {
            out.values[t] = traj.reward_at(t) + gamma * boot;
            out.chosen_steps[t] = 1;
        } else {
            out.values[t] = traj.reward_at(t) + gamma * out.values[t + 1];
            out.chosen_steps[t] = 1 + out.chosen_steps[t + 1];
        }
    }
    return out;
}

GreedyReturnVector greedy_return_backward(const Trajectory& traj, const QTable& q, double gamma) {
    auto copy = std::make_shared<Trajectory>(traj);
    return greedy_return_backward(TrajectoryView(copy, 0), q, gamma);
}

GreedyReturnHead greedy_return_head(const TrajectoryView& traj, const QTable& q, double gamma,
                                    int max_step) {
    const int T = traj.length();
    if (max_step <= 0 || max_step >= T) {
        // Same right-to-left fold as the full vector, scalar state only.
        double boot_end = traj.terminated() ? 0.0 : q.max_over_actions(traj.state_at(T));
        double g = traj.reward_at(T - 1) + gamma * boot_end;
        int chosen = 1;
        for (int t = T - 2; t >= 0; --t) {
            double boot = q.max_over_actions(traj.state_at(t + 1));
            if (boot >= g) {
                g = traj.reward_at(t) + gamma * boot;
                chosen = 1;
            } else {
                g = traj.reward_at(t) + gamma * g;
                chosen = 1 + chosen;
            }
        }
        return {g, chosen};
    }

    // Depth-capped: scan candidate depths directly.
    double best = -std::numeric_limits<double>::infinity();
    int best_n = 1;
    double acc = 0.0;
    double disc = 1.0;
    for (int n = 1; n <= max_step; ++n) {
        acc += disc * traj.reward_at(n - 1);
        disc *= gamma;
        double boot = (n == T && traj.terminated()) ? 0.0 : q.max_over_actions(traj.state_at(n));
        double cand = acc + disc * boot;
        if (cand > best) {
            best = cand;
            best_n = n;
        }
    }
    return {best, best_n};
}

GmUpdateResult gm_q_update(QTable& q, TrajectoryStore& store, int s, int a, double alpha,
                           double gamma, int max_step) {
    const auto& entries = store.at(s, a);
    if (entries.empty()) return {};

    GmUpdateResult res;
    res.updated = true;
    double best = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < entries.size(); ++i) {
        GreedyReturnHead head = greedy_return_head(entries[i].view, q, gamma, max_step);
        store.set_score(s, a, i, head.value);
        if (head.value > best) {
            best = head.value;
            res.chosen_step = head.chosen_step;
        }
    }
    res.target = best;
    q(s, a) += alpha * (best - q(s, a));
    return res;
}

QTable greedy_datastore_sweep(const TrajectoryStore& store, const QTable& q, double gamma,
                              int max_step) {
    QTable out = q;
    for (auto [s, a] : store.covered_keys()) {
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& entry : store.at(s, a))
            best = std::max(best, greedy_return_head(entry.view, q, gamma, max_step).value);
        out(s, a) = best;
    }
    return out;
}

std::pair<QTable, RunMetrics> run_gm_q_learning(const Env& env, const LearnerConfig& cfg,
                                                const SolvedCheck& solved) {
    const TabularMdp& mdp = env.mdp();
    QTable q(mdp.num_states(), mdp.num_actions(), resolve_q_init(cfg, mdp));
    TrajectoryStore store(mdp.num_states(), mdp.num_actions(), cfg.store_capacity);
    RunMetrics metrics;
    std::mt19937_64 rng(cfg.seed);

    double eps = cfg.eps_explore;
    ActionSelector select = eps_greedy(q, eps);
    auto t0 = Clock::now();

    for (long ep = 0; ep < cfg.episodes; ++ep) {
        eps = eps_at(cfg, ep);
        TrajectoryPtr traj = sample_episode(env, select, rng);
        store.insert(traj);

        const int T = traj->length();
        for (int t = T - 1; t >= 0; --t) {
            GmUpdateResult r =
                gm_q_update(q, store, traj->state_at(t), traj->action_at(t), cfg.alpha,
                            cfg.gamma, cfg.max_step);
            metrics.chosen_steps.push_back(r.chosen_step);
        }
        finish_episode(metrics, cfg, traj->undiscounted_return(), T, T, solved, q, ep);
    }
    metrics.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return {std::move(q), std::move(metrics)};
}

namespace {

std::pair<QTable, RunMetrics> run_q_learning(const Env& env, const LearnerConfig& cfg,
                                             const SolvedCheck& solved) {
    const TabularMdp& mdp = env.mdp();
    QTable q(mdp.num_states(), mdp.num_actions(), resolve_q_init(cfg, mdp));
    RunMetrics metrics;
    std::mt19937_64 rng(cfg.seed);
    double eps = cfg.eps_explore;
    ActionSelector select = eps_greedy(q, eps);
    auto t0 = Clock::now();

    for (long ep = 0; ep < cfg.episodes; ++ep) {
        eps = eps_at(cfg, ep);
        int s = env.start_state();
        int a = select(s, rng);
        double ep_return = 0.0;
        long steps = 0;
        for (long t = 0; t < env.step_cap(); ++t) {
            double r = mdp.reward(s, a);
            int s2 = env.sample_next(s, a, rng);
            ep_return += r;
            ++steps;
            bool terminal = mdp.is_terminal(s2);
            bool last = terminal || t + 1 >= env.step_cap();
            int a2 = last ? -1 : select(s2, rng);
            double target = r + cfg.gamma * (terminal ? 0.0 : q.max_over_actions(s2));
            q(s, a) += cfg.alpha * (target - q(s, a));
            if (last) break;
            s = s2;
            a = a2;
        }
        finish_episode(metrics, cfg, ep_return, steps, steps, solved, q, ep);
    }
    metrics.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return {std::move(q), std::move(metrics)};
}

std::pair<QTable, RunMetrics> run_watkins_q_lambda(const Env& env, const LearnerConfig& cfg,
                                                   const SolvedCheck& solved) {
    const TabularMdp& mdp = env.mdp();
    const int S = mdp.num_states(), A = mdp.num_actions();
    QTable q(S, A, resolve_q_init(cfg, mdp));
    RunMetrics metrics;
    std::mt19937_64 rng(cfg.seed);
    double eps = cfg.eps_explore;
    ActionSelector select = eps_greedy(q, eps);
    std::vector<double> trace(static_cast<size_t>(S) * A);
    auto t0 = Clock::now();

    for (long ep = 0; ep < cfg.episodes; ++ep) {
        eps = eps_at(cfg, ep);
        std::fill(trace.begin(), trace.end(), 0.0);
        int s = env.start_state();
        int a = select(s, rng);
        double ep_return = 0.0;
        long steps = 0;
        for (long t = 0; t < env.step_cap(); ++t) {
            double r = mdp.reward(s, a);
            int s2 = env.sample_next(s, a, rng);
            ep_return += r;
            ++steps;
            bool terminal = mdp.is_terminal(s2);
            bool last = terminal || t + 1 >= env.step_cap();
            int a2 = last ? -1 : select(s2, rng);

            double delta = r + cfg.gamma * (terminal ? 0.0 : q.max_over_actions(s2)) - q(s, a);
            trace[static_cast<size_t>(s) * A + a] += 1.0;
            for (int i = 0; i < S; ++i)
                for (int j = 0; j < A; ++j) {
                    double e = trace[static_cast<size_t>(i) * A + j];
                    if (e != 0.0) q(i, j) += cfg.alpha * delta * e;
                }
            if (last) break;

            // Accumulate the trace only through greedy actions; an
            // exploratory step invalidates the earlier credit.
            bool greedy_next = q(s2, a2) == q.max_over_actions(s2);
            if (greedy_next) {
                double decay = cfg.gamma * cfg.lambda;
                for (auto& e : trace) e *= decay;
            } else {
                std::fill(trace.begin(), trace.end(), 0.0);
            }
            s = s2;
            a = a2;
        }
        finish_episode(metrics, cfg, ep_return, steps, steps, solved, q, ep);
    }
    metrics.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return {std::move(q), std::move(metrics)};
}

/// Shared skeleton for the n-step baselines: `sarsa` bootstraps with the
/// action actually selected, otherwise with the max (no off-policy
/// correction on the sampled rewards in either case).
std::pair<QTable, RunMetrics> run_nstep(const Env& env, const LearnerConfig& cfg, bool sarsa,
                                        const SolvedCheck& solved) {
    const TabularMdp& mdp = env.mdp();
    QTable q(mdp.num_states(), mdp.num_actions(), resolve_q_init(cfg, mdp));
    RunMetrics metrics;
    std::mt19937_64 rng(cfg.seed);
    double eps = cfg.eps_explore;
    ActionSelector select = eps_greedy(q, eps);
    auto t0 = Clock::now();

    for (long ep = 0; ep < cfg.episodes; ++ep) {
        eps = eps_at(cfg, ep);
        std::vector<int> states{env.start_state()};
        std::vector<int> actions;
        std::vector<double> rewards;
        actions.push_back(select(states[0], rng));

        long T = std::numeric_limits<long>::max();
        bool terminated = false;
        long n = cfg.max_step >= 1 ? cfg.max_step : env.step_cap() + 1;
        double ep_return = 0.0;

        for (long t = 0;; ++t) {
            if (t < T) {
                int s = states[t];
                int a = actions[t];
                double r = mdp.reward(s, a);
                int s2 = env.sample_next(s, a, rng);
                rewards.push_back(r);
                states.push_back(s2);
                ep_return += r;
                if (mdp.is_terminal(s2)) {
                    T = t + 1;
                    terminated = true;
                } else {
                    // At a step-cap cut the selected action still provides
                    // the truncation bootstrap.
                    actions.push_back(select(s2, rng));
                    if (t + 1 >= env.step_cap()) T = t + 1;
                }
            }
            long tau = t - n + 1;
            if (tau >= 0) {
                long m = std::min(n, T - tau);
                double g = 0.0;
                double disc = 1.0;
                for (long i = 0; i < m; ++i) {
                    g += disc * rewards[tau + i];
                    disc *= cfg.gamma;
                }
                long b = tau + m;
                if (b < T || !terminated) {
                    g += disc * (sarsa ? q(states[b], actions[b]) : q.max_over_actions(states[b]));
                }
                q(states[tau], actions[tau]) += cfg.alpha * (g - q(states[tau], actions[tau]));
            }
            if (tau >= T - 1) break;
        }
        finish_episode(metrics, cfg, ep_return, T, T, solved, q, ep);
    }
    metrics.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return {std::move(q), std::move(metrics)};
}

}  // namespace

std::pair<QTable, RunMetrics> run_baseline(const Env& env, const LearnerConfig& cfg,
                                           const SolvedCheck& solved) {
    switch (cfg.algo) {
        case Algo::q_learning: return run_q_learning(env, cfg, solved);
        case Algo::watkins_q_lambda: return run_watkins_q_lambda(env, cfg, solved);
        case Algo::nstep_sarsa: return run_nstep(env, cfg, true, solved);
        case Algo::uncorrected_nstep_q: return run_nstep(env, cfg, false, solved);
        case Algo::greedy_multistep:
            throw std::invalid_argument("run_baseline: use run_gm_q_learning for gm");
    }
    throw std::logic_error("run_baseline: unknown algorithm");
}

std::pair<QTable, RunMetrics> run_learner(const Env& env, const LearnerConfig& cfg,
                                          const SolvedCheck& solved) {
    if (cfg.algo == Algo::greedy_multistep) return run_gm_q_learning(env, cfg, solved);
    return run_baseline(env, cfg, solved);
}

std::pair<QTable, RunMetrics> offline_train(const std::vector<TrajectoryPtr>& dataset,
                                            const TabularMdp& mdp, const LearnerConfig& cfg,
                                            long passes, const SolvedCheck& solved) {
    if (passes < 0) throw std::invalid_argument("offline_train: passes must be >= 0");
    if (cfg.algo != Algo::greedy_multistep && cfg.algo != Algo::q_learning &&
        cfg.algo != Algo::uncorrected_nstep_q)
        throw std::invalid_argument(
            "offline_train: only gm, q and nstep-q have data-only update rules");

    TrajectoryStore store(mdp.num_states(), mdp.num_actions(), cfg.store_capacity);
    for (const auto& tr : dataset) store.insert(tr);

    QTable q(mdp.num_states(), mdp.num_actions(), resolve_q_init(cfg, mdp));
    RunMetrics metrics;
    std::mt19937_64 rng(cfg.seed);
    auto keys = store.covered_keys();
    auto t0 = Clock::now();

    for (long pass = 1; pass <= passes; ++pass) {
        std::shuffle(keys.begin(), keys.end(), rng);
        for (auto [s, a] : keys) {
            if (cfg.algo == Algo::greedy_multistep) {
                GmUpdateResult r = gm_q_update(q, store, s, a, cfg.alpha, cfg.gamma, cfg.max_step);
                metrics.chosen_steps.push_back(r.chosen_step);
                continue;
            }
            const auto& view = store.at(s, a)[0].view;
            double target;
            if (cfg.algo == Algo::q_learning) {
                target = view.reward_at(0) + cfg.gamma * bootstrap_max(mdp, q, view.state_at(1));
            } else {
                long n = cfg.max_step >= 1 ? cfg.max_step : view.length();
                long m = std::min<long>(n, view.length());
                double g = 0.0, disc = 1.0;
                for (long i = 0; i < m; ++i) {
                    g += disc * view.reward_at(i);
                    disc *= cfg.gamma;
                }
                target = g + disc * bootstrap_max(mdp, q, view.state_at(m));
            }
            q(s, a) += cfg.alpha * (target - q(s, a));
        }
        metrics.updates_per_episode.push_back(static_cast<long>(keys.size()));
        // The callback may carry evaluation side effects, so it runs every
        // pass even after the first success.
        if (solved && solved(q) && !metrics.solved) {
            metrics.solved = true;
            metrics.episodes_to_solve = pass;
        }
    }
    metrics.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return {std::move(q), std::move(metrics)};
}

}  // namespace gms
