#pragma once

#include <string>
#include <vector>

#include "gms/mdp.hpp"

namespace gms {

enum class OperatorKind {
    one_step_optimality,  // max_a backup
    expectation,          // single-policy backup
    multi_step,           // policy rollout of fixed depth N, then a greedy bootstrap
    greedy_multi_step,    // best policy and best depth n in [1, N]
};

/**
 * Which backup operator to iterate, with its policy inputs. `max_step` is N,
 * the deepest lookahead the operator may use. The greedy multi-step operator
 * defaults to its order-of-maxima form that maximises over depth and policy
 * outside the successor expectation; `successor_max` switches to the variant
 * that takes those maxima per successor state instead. The variant is not
 * a sup-norm contraction in general and is excluded from the property
 * checks, but is kept for comparison runs.
 */
struct OperatorSpec {
    OperatorKind kind = OperatorKind::one_step_optimality;
    int max_step = 1;
    PolicySet policies;     // required for multi_step and greedy_multi_step
    TabularPolicy policy;   // required for expectation
    bool successor_max = false;

    static OperatorSpec optimality();
    static OperatorSpec expectation(TabularPolicy pi);
    static OperatorSpec multi_step(PolicySet set, int N);
    static OperatorSpec greedy(PolicySet set, int N, bool successor_max = false);

    std::string name() const;
};

/// One-step optimality backup: (BQ)(s,a) = r + gamma * E[max_a' Q].
QTable bellman_optimality(const TabularMdp& mdp, const QTable& q);

/// One-step expectation backup under pi: r + gamma * E[sum_a' pi Q].
QTable bellman_expectation(const TabularMdp& mdp, const TabularPolicy& pi, const QTable& q);

/**
 * Greedy multi-step backup over a candidate policy set: the elementwise best,
 * over policies pi and depths n in [1, N], of applying the optimality backup
 * once and the pi-expectation backup n-1 more times. Depth n = 1 is policy
 * independent, so the result always dominates the one-step backup.
 */
QTable greedy_multistep_operator(const TabularMdp& mdp, const PolicySet& policies, int N,
                                 const QTable& q, bool successor_max = false);

/// Fixed-depth variant: best policy, but always the full depth N.
QTable multi_step_operator(const TabularMdp& mdp, const PolicySet& policies, int N,
                           const QTable& q);

/// Dispatch on an OperatorSpec.
QTable apply_operator(const TabularMdp& mdp, const OperatorSpec& spec, const QTable& q);

struct SolveResult {
    QTable q;
    long iterations = 0;
    bool converged = false;
    std::vector<double> residuals;         // sup-norm step sizes, one per iteration
    std::vector<long long> iter_wall_ns;   // cumulative wall clock after each iteration
    double wall_seconds = 0.0;
};

/**
 * Iterate `spec` from q0 until the sup-norm step size drops to eps or
 * max_iter applications have been made. Residual history is returned in
 * application order.
 */
SolveResult value_iteration(const TabularMdp& mdp, const OperatorSpec& spec, QTable q0,
                            double eps, long max_iter = 1000000);

/**
 * Optimal action values via one-step value iteration from zero, run until
 * the step size is at most eps*(1-gamma)/(2*gamma), which brings the result
 * within eps of the fixed point in sup norm.
 */
QTable solve_optimal_q(const TabularMdp& mdp, double eps);

struct VSolveResult {
    VTable v;
    long iterations = 0;
    bool converged = false;
    std::vector<double> residuals;
    double wall_seconds = 0.0;
};

/**
 * State-value form of greedy multi-step value iteration, computed with dense
 * per-policy transition matrices: every iterate takes, over actions a,
 * policies pi and depths n <= N, the best of
 *
 *   R_a + gamma * T_a * (sum_{i<n-1} (gamma T_pi)^i R_pi + (gamma T_pi)^{n-1} V).
 *
 * The rollout constants are assembled once before the loop; each iteration
 * costs O(|A| |Pi| N |S|^2). Dense matrices are built up to 2000 states;
 * larger models are rejected.
 */
VSolveResult greedy_multistep_vi_matrix(const TabularMdp& mdp, const PolicySet& policies, int N,
                                        double eps, long max_iter = 1000000);

/// Deterministic greedy policy of q; ties resolve to the lowest action index.
TabularPolicy greedy_policy_from_q(const QTable& q);

struct ContractionProbe {
    double operator_dist;  // ||Op q1 - Op q2||_inf
    double input_dist;     // ||q1 - q2||_inf
};

/// Measure one operator application's expansion on a pair of tables.
ContractionProbe contraction_probe(const TabularMdp& mdp, const OperatorSpec& spec,
                                   const QTable& q1, const QTable& q2);

}  // namespace gms
