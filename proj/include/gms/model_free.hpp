#pragma once

#include <optional>
#include <utility>

#include "gms/env.hpp"
#include "gms/metrics.hpp"
#include "gms/trajectory.hpp"

namespace gms {

enum class Algo {
    greedy_multistep,     // backward-pass updates against stored suffixes
    q_learning,           // one-step off-policy
    nstep_sarsa,          // on-policy n-step
    watkins_q_lambda,     // traces cut at non-greedy actions
    uncorrected_nstep_q,  // n raw on-policy rewards, then a max bootstrap
};

Algo algo_from_name(const std::string& name);   // gm | q | sarsa-n | qlambda | nstep-q
std::string algo_name(Algo algo);

struct LearnerConfig {
    Algo algo = Algo::greedy_multistep;
    double alpha = 0.1;
    double gamma = 0.9;
    double eps_explore = 0.1;     // linearly decayed per episode ...
    double eps_final = 0.01;      // ... down to this value
    int max_step = 0;             // bootstrap depth N; 0 = to episode end
    double lambda = 0.9;          // watkins_q_lambda only
    std::optional<double> q_init; // default: min reward / (1 - gamma)
    long episodes = 1000;
    size_t store_capacity = 8;    // suffixes per (s,a); 0 = unbounded
    RngSeed seed = 0;
};

/// Initial table value: explicit q_init, else min_r / (1 - gamma), which
/// never exceeds any policy's return.
double resolve_q_init(const LearnerConfig& cfg, const TabularMdp& mdp);

/**
 * Greedy returns of a trajectory suffix: values[t] is the best achievable
 * mix of observed rewards and a greedy bootstrap,
 *
 *   values[t] = max_{1 <= n <= T-t} sum_{i<n} gamma^i r_{t+i}
 *               + gamma^n boot(s_{t+n}),
 *
 * where boot is max_a Q except at the end of a terminated trajectory, where
 * it is 0. Computed right to left in O(T): each value folds the successor's
 * best continuation against bootstrapping immediately. chosen_steps[t] is
 * the smallest maximising n.
 */
struct GreedyReturnVector {
    std::vector<double> values;
    std::vector<int> chosen_steps;
};

GreedyReturnVector greedy_return_backward(const TrajectoryView& traj, const QTable& q,
                                          double gamma);
GreedyReturnVector greedy_return_backward(const Trajectory& traj, const QTable& q, double gamma);

/// Greedy return at the suffix start only, with depth optionally capped at
/// max_step (0 = no cap). O(T) uncapped, O(T * cap) capped.
struct GreedyReturnHead {
    double value;
    int chosen_step;
};
GreedyReturnHead greedy_return_head(const TrajectoryView& traj, const QTable& q, double gamma,
                                    int max_step = 0);

struct GmUpdateResult {
    bool updated = false;   // false when the key holds no suffixes
    double target = 0.0;
    int chosen_step = 0;
};

/**
 * One greedy multi-step update of q(s,a): the target is the best greedy
 * return over every suffix stored under (s,a), and the table moves toward it
 * by alpha. Suffix scores in the store are refreshed with the returns
 * computed here so eviction keeps the strongest suffix.
 */
GmUpdateResult gm_q_update(QTable& q, TrajectoryStore& store, int s, int a, double alpha,
                           double gamma, int max_step = 0);

/**
 * One pure sweep of the data-driven operator: every covered (s,a) is set to
 * the max over its stored suffixes of their greedy returns against the input
 * table. Uncovered keys keep their input value; the input itself is not
 * modified, so the sweep reads a consistent table throughout.
 */
QTable greedy_datastore_sweep(const TrajectoryStore& store, const QTable& q, double gamma,
                              int max_step = 0);

/// Task-completion predicate evaluated on the learned table after every
/// episode (or sweep). Null means "never solved".
using SolvedCheck = std::function<bool(const QTable&)>;

/**
 * Greedy multi-step Q-learning: act epsilon-greedily, store each episode's
 * suffixes, then run one backward pass over the episode updating every
 * visited pair from the store. Bootstrap depth per update is whatever the
 * stored suffixes support (episode end by default).
 */
std::pair<QTable, RunMetrics> run_gm_q_learning(const Env& env, const LearnerConfig& cfg,
                                                const SolvedCheck& solved = nullptr);

/// Textbook baselines sharing the same exploration schedule; dispatches on
/// cfg.algo (everything except greedy_multistep).
std::pair<QTable, RunMetrics> run_baseline(const Env& env, const LearnerConfig& cfg,
                                           const SolvedCheck& solved = nullptr);

/// Run whichever learner cfg.algo names.
std::pair<QTable, RunMetrics> run_learner(const Env& env, const LearnerConfig& cfg,
                                          const SolvedCheck& solved = nullptr);

/**
 * Batch training: build one store from the dataset, then run `passes` full
 * sweeps over the covered (s,a) keys, each pass in a fresh seeded shuffle
 * order. Supports greedy_multistep, q_learning and uncorrected_nstep_q
 * (their targets need only stored data). episodes_to_solve counts sweeps.
 */
std::pair<QTable, RunMetrics> offline_train(const std::vector<TrajectoryPtr>& dataset,
                                            const TabularMdp& mdp, const LearnerConfig& cfg,
                                            long passes, const SolvedCheck& solved = nullptr);

}  // namespace gms
