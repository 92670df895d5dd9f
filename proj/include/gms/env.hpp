#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>

#include "gms/mdp.hpp"
#include "gms/trajectory.hpp"

namespace gms {

/**
 * Samplable episodic wrapper around a TabularMdp: a start state, a step cap,
 * and (for the benchmark tasks) a predicate that decides whether a value
 * table's greedy policy solves the task.
 */
class Env {
public:
    using SolvedCheck = std::function<bool(const TabularMdp&, const QTable&)>;

    Env(TabularMdp mdp, int start_state, long step_cap, std::string name,
        SolvedCheck solved = nullptr)
        : mdp_(std::move(mdp)), start_state_(start_state), step_cap_(step_cap),
          name_(std::move(name)), solved_(std::move(solved)) {
        if (start_state_ < 0 || start_state_ >= mdp_.num_states())
            throw std::invalid_argument("Env: start state out of range");
        if (step_cap_ < 1) throw std::invalid_argument("Env: step cap must be positive");
    }

    const TabularMdp& mdp() const { return mdp_; }
    int start_state() const { return start_state_; }
    long step_cap() const { return step_cap_; }
    const std::string& name() const { return name_; }

    bool has_solved_check() const { return static_cast<bool>(solved_); }
    bool solved(const QTable& q) const {
        if (!solved_) throw std::logic_error("Env: no solved predicate for " + name_);
        return solved_(mdp_, q);
    }

    /// Sample a successor of (s,a) from the transition row.
    int sample_next(int s, int a, std::mt19937_64& rng) const;

private:
    TabularMdp mdp_;
    int start_state_;
    long step_cap_;
    std::string name_;
    SolvedCheck solved_;
};

/// Env plus any policy set the generator defines alongside it.
struct EnvBundle {
    Env env;
    std::optional<PolicySet> policies;
};

/**
 * n x n deterministic grid, n >= 2. Actions 0..3 move up/down/left/right;
 * off-grid moves stay put. Start is the top-left corner, the opposite corner
 * is terminal. Every step from a non-terminal state costs -1. Step cap
 * 10*n*n. Discount 0.9, or 0.99 for n >= 10 where the longer horizon needs
 * the extra credit depth.
 */
Env make_gridworld(int n);

/**
 * Delayed-credit task with binary actions and episode length exactly T >= 3.
 * Only the first two actions matter: prefix (1,0) earns +10 on the final
 * step, every other prefix earns -1 there; all earlier rewards are 0.
 */
Env make_traceback(int T);

/**
 * Two-corridor task, T >= 2. The first action picks a corridor, then T-1
 * forced steps (both actions behave the same) walk it. Entering the terminal
 * pays +10 from corridor 1, +1 from corridor 0.
 */
Env make_choice(int T);

/**
 * Variant of the corridor task whose corridor decision happens on the
 * second step instead of the first, T >= 3: the first step is forced into a
 * fork state, the action taken there picks the corridor. Used to study
 * operators that roll behavior policies through genuine decision points.
 */
Env make_delayed_choice(int T);

/**
 * Chain of N+1 states, N >= 2. Action 0 advances toward the terminal end,
 * action 1 stays put; the step entering the terminal state pays 1, all else
 * 0. Ships with two candidate policies: always-advance and uniform.
 */
std::pair<Env, PolicySet> make_highway_chain(int N);

/**
 * Seeded random MDP: num_states >= 2 with the last state absorbing terminal.
 * Each non-terminal (s,a) draws `branching` distinct successors with
 * flat-Dirichlet probabilities and a reward uniform in [-1,1]. Identical
 * seeds give identical MDPs. Discount 0.9.
 */
TabularMdp make_random_mdp(RngSeed seed, int num_states, int num_actions, int branching);

/// Action chooser used while sampling episodes.
using ActionSelector = std::function<int(int state, std::mt19937_64& rng)>;

/// Roll one episode from the env's start state until a terminal state or the
/// step cap. The returned trajectory has length >= 1 and terminated set iff
/// a terminal state was reached. The rng overload draws from a caller-owned
/// stream so several episodes can share one.
TrajectoryPtr sample_episode(const Env& env, const ActionSelector& select, std::mt19937_64& rng);
TrajectoryPtr sample_episode(const Env& env, const ActionSelector& select, RngSeed seed);
TrajectoryPtr sample_episode(const Env& env, const TabularPolicy& policy, RngSeed seed);

/**
 * Parse a generator spec:
 *   gridworld:<n> | traceback:<T> | choice:<T> | delayed-choice:<T> |
 *   chain:<N> | random:<seed>:<S>:<A>:<b>
 * Random MDPs are wrapped with start state 0 and step cap 10*S; chain specs
 * carry their policy set in the bundle.
 */
EnvBundle parse_env_spec(const std::string& spec);

/// True if `spec` looks like a generator spec rather than a file path.
bool is_env_spec(const std::string& spec);

}  // namespace gms
