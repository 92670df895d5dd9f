#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gms/env.hpp"
#include "gms/exact_dp.hpp"
#include "gms/io.hpp"
#include "gms/metrics.hpp"
#include "gms/model_free.hpp"

namespace gms {

// --------------------------------------------------------------- batteries

/// Named model plus the policy set its generator ships with (chain only).
struct BatteryEntry {
    std::string name;
    TabularMdp mdp;
    std::optional<PolicySet> policies;
};

/**
 * The standard test battery: twenty seeded random MDPs (|S| in 3..10,
 * |A| in 2..4, branching in 1..3, gamma 0.9) plus every toy environment at
 * reference sizes, all with gamma 0.9.
 */
std::vector<BatteryEntry> standard_battery();

/// standard_battery plus a gamma 0.99 entry (gridworld 10).
std::vector<BatteryEntry> extended_battery();

/// k random policies for an S x A model; deterministic rows by default,
/// otherwise random stochastic rows.
PolicySet random_policy_set(int num_states, int num_actions, int k, RngSeed seed,
                            bool deterministic = true);

/// Copy of `set` with one more policy appended.
PolicySet policy_set_with(const PolicySet& set, TabularPolicy extra);

/**
 * Oracle optimal values pushed past solve_optimal_q(eps): extra one-step
 * sweeps run until the table stops changing bitwise (or the sweep budget is
 * spent), leaving an error on the order of rounding noise.
 */
QTable refined_optimal_q(const TabularMdp& mdp, double eps = 1e-9, long extra_sweeps = 20000);

/**
 * A model named on the command line: a generator spec (gridworld:5, ...) or
 * a path to a text MDP file. Generator specs may carry a bundled policy set.
 */
struct ModelSource {
    TabularMdp mdp;
    std::optional<PolicySet> policies;
    std::string name;
};

ModelSource load_model(const std::string& spec);

/**
 * Build a policy set from a comma-separated spec. Atoms:
 *   env              the set bundled with the model (error if none)
 *   uniform          the uniform-random policy
 *   random:<k>:<s>   k random deterministic policies seeded with s
 */
PolicySet resolve_policy_spec(const std::string& spec, int num_states, int num_actions,
                              const std::optional<PolicySet>& bundled);

// ----------------------------------------------------------- property suite

struct PropertyResult {
    std::string name;
    bool pass = false;
    double max_violation = 0.0;  // worst observed excess over the bound
    double tolerance = 0.0;
    std::string detail;          // where the worst case occurred
};

struct PropertyReport {
    std::vector<PropertyResult> results;
    bool all_pass() const {
        for (const auto& r : results)
            if (!r.pass) return false;
        return !results.empty();
    }
};

/// Operator stand-in: same contract as greedy_multistep_operator. Swapping
/// in a broken implementation must make the suite fail (mutation check).
using GreedyOp =
    std::function<QTable(const TabularMdp&, const PolicySet&, int, const QTable&)>;

struct PropertyOptions {
    int pairs = 1000;        // random (q, q') samples per MDP for sampled checks
    RngSeed seed = 7;
    GreedyOp greedy_op;      // empty: the library implementation
};

/**
 * Runs every operator- and learner-level property on the battery and
 * reports one line per property with the worst observed violation:
 * contraction chain, multi-step rate, fixed point, convergence, faster
 * contraction, exponential rate, monotonicity, suboptimal fixed point,
 * greedy-return recurrence, datastore-operator equivalence, offline
 * safety, baseline sanity, and the chosen-step trend.
 */
PropertyReport property_suite(const PropertyOptions& opt = {});

void print_property_report(std::ostream& out, const PropertyReport& report);

// --------------------------------------------------------------- rate report

struct RateRow {
    std::string op;
    long iterations = 0;
    bool converged = false;
    std::vector<double> residuals;     // ||Q_k - Q_{k-1}||_inf per sweep
    std::vector<double> dist_to_opt;   // ||Q_k - Q*||_inf per sweep
    bool has_slope = false;            // needs at least 3 usable residuals
    double slope = 0.0;                // least-squares slope of log residuals
    double guaranteed_log_rate = 0.0;  // log gamma, or N log gamma for B^N
};

struct RateReport {
    std::vector<RateRow> rows;
    // Per-iterate comparison of every greedy row against the first one-step
    // row, valid only when q0 <= Q* held (the regime the bound covers).
    bool pairwise_applicable = false;
    double pairwise_max_excess = 0.0;
    QTable q_star;
};

/**
 * Iterates every spec from q0, recording residuals and distance to the
 * refined optimal table, and fits an empirical log-rate per operator for
 * comparison against the guaranteed contraction rate.
 */
RateReport rate_report(const TabularMdp& mdp, const std::vector<OperatorSpec>& specs,
                       const QTable& q0, double eps, long max_iter = 100000);

void print_rate_report(std::ostream& out, const RateReport& report);
void write_rate_csv(std::ostream& out, const RateReport& report);

// --------------------------------------------------------------- experiments

enum class ExperimentMode { train, offline, operators };

struct ArmConfig {
    std::string name;
    LearnerConfig learner;
    bool gamma_from_config = false;  // false: use the environment's gamma
};

struct OpArmConfig {
    std::string name;
    std::string kind = "g";          // b | bn | g
    int n = 1;
    std::string policies = "env";
    bool successor_max = false;
};

struct ExperimentConfig {
    std::string id = "experiment";
    std::string env_spec;
    ExperimentMode mode = ExperimentMode::train;
    int trials = 100;
    RngSeed seed_base = 1;           // trial i runs with seed seed_base + i
    int threads = 1;
    long eval_every = 10;            // greedy-rollout cadence in episodes/passes; 0 = off
    std::string out_dir;             // empty: nothing written to disk

    std::vector<ArmConfig> arms;     // train / offline modes

    long passes = 100;               // offline: sweep budget per trial
    long dataset_episodes = 0;       // offline: 0 = collect until full coverage
    long dataset_max_episodes = 10000;

    std::vector<OpArmConfig> op_arms;  // operators mode
    double op_eps = 1e-10;
    long op_max_iter = 100000;
    std::string op_q0 = "zero";        // zero | pessimistic
};

/// Line-oriented config: `key = value` pairs, `[arm <name>]` / `[op <name>]`
/// sections, `#` comments. Unknown keys and sections are errors.
ExperimentConfig read_experiment_config(std::istream& in);
ExperimentConfig read_experiment_config_file(const std::string& path);

struct EvalPoint {
    long episode = 0;       // episode (train) or pass (offline) index, 1-based
    double eval_return = 0.0;
};

struct TrialRow {
    std::string arm;
    int trial = 0;
    RngSeed seed = 0;
    bool solved = false;
    long episodes_to_solve = 0;  // censored at the budget when unsolved
    double final_return = 0.0;
    double mean_chosen_step = 0.0;
    long total_updates = 0;
    std::vector<EvalPoint> evals;
    std::string error;           // exception text when the trial failed
};

struct OpRow {
    std::string arm;
    long iterations = 0;
    bool converged = false;
    double final_residual = 0.0;
    double dist_to_opt = 0.0;
    std::string error;
};

struct ArmSummary {
    std::string arm;
    int trials = 0;
    int solved_count = 0;
    Aggregate episodes_to_solve;
    Aggregate final_return;
    double mean_chosen_step = 0.0;  // mean of per-trial means
};

struct ExperimentResult {
    ExperimentConfig config;
    std::vector<TrialRow> rows;      // arm-major, trial order
    std::vector<ArmSummary> summaries;
    std::vector<OpRow> op_rows;      // operators mode only
    bool ok = true;                  // no trial recorded an error
};

/**
 * Runs trials across a worker pool (each trial owns its env, learner, and
 * rng; results merge in index order, so output does not depend on the
 * partitioning). With out_dir set, writes <id>_trials.csv, <id>_summary.csv
 * and, when evaluations are enabled, <id>_eval.csv; the operators mode
 * writes <id>_ops.csv. No wall-clock times are written, so identical
 * configs produce identical bytes.
 */
ExperimentResult run_experiment(const ExperimentConfig& cfg);

void write_trials_csv(std::ostream& out, const ExperimentResult& result);
void write_summary_csv(std::ostream& out, const ExperimentResult& result);
void write_eval_csv(std::ostream& out, const ExperimentResult& result);
void write_ops_csv(std::ostream& out, const ExperimentResult& result);

/// Undiscounted return of one greedy rollout of q on env. The seed only
/// matters on stochastic dynamics.
double greedy_eval_return(const Env& env, const QTable& q, RngSeed seed);

/// Roll uniform-random episodes until every non-terminal (s,a) pair has
/// been visited (or the episode cap is hit); with episodes > 0, roll exactly
/// that many instead.
std::vector<TrajectoryPtr> collect_dataset(const Env& env, long episodes, long max_episodes,
                                           RngSeed seed);

/**
 * Exhaustive depth-limited rollouts for the data-driven operator check: one
 * cut trajectory of exactly `depth` steps from every (s,a) under every
 * policy in `policies`. Requires deterministic dynamics and deterministic
 * policies; rollouts continue through absorbing states so the bootstrap
 * grid matches the exact operator's.
 */
TrajectoryStore exhaustive_rollouts(const TabularMdp& mdp, const PolicySet& policies, int depth);

}  // namespace gms
