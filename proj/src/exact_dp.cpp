#include "gms/exact_dp.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

namespace gms {

namespace {

using Clock = std::chrono::steady_clock;

void check_policy_dims(const TabularMdp& mdp, const TabularPolicy& pi, const char* where) {
    if (pi.num_states() != mdp.num_states() || pi.num_actions() != mdp.num_actions())
        throw std::invalid_argument(std::string(where) + ": policy dimensions do not match the MDP");
}

void check_set(const TabularMdp& mdp, const PolicySet& set, int max_step, const char* where) {
    if (set.empty()) throw std::invalid_argument(std::string(where) + ": empty policy set");
    if (max_step < 1) throw std::invalid_argument(std::string(where) + ": max step must be >= 1");
    for (const auto& pi : set) check_policy_dims(mdp, pi, where);
}

void check_q_dims(const TabularMdp& mdp, const QTable& q, const char* where) {
    if (q.num_states() != mdp.num_states() || q.num_actions() != mdp.num_actions())
        throw std::invalid_argument(std::string(where) + ": table dimensions do not match the MDP");
}

/// One backup sweep given precomputed successor values: out(s,a) = r + gamma * E[v].
void backup_with_values(const TabularMdp& mdp, const std::vector<double>& v, QTable& out) {
    const double gamma = mdp.gamma();
    for (int s = 0; s < mdp.num_states(); ++s) {
        for (int a = 0; a < mdp.num_actions(); ++a) {
            double exp_v = 0.0;
            for (const auto& t : mdp.transitions(s, a)) exp_v += t.prob * v[t.next_state];
            out(s, a) = mdp.reward(s, a) + gamma * exp_v;
        }
    }
}

std::vector<double> max_values(const QTable& q) {
    std::vector<double> v(q.num_states());
    for (int s = 0; s < q.num_states(); ++s) v[s] = q.max_over_actions(s);
    return v;
}

std::vector<double> policy_values(const TabularPolicy& pi, const QTable& q) {
    std::vector<double> v(q.num_states(), 0.0);
    for (int s = 0; s < q.num_states(); ++s) {
        double acc = 0.0;
        for (int a = 0; a < q.num_actions(); ++a) acc += pi.prob(s, a) * q(s, a);
        v[s] = acc;
    }
    return v;
}

void elementwise_max_inplace(QTable& acc, const QTable& other) {
    auto& x = acc.data();
    const auto& y = other.data();
    for (size_t i = 0; i < x.size(); ++i) x[i] = std::max(x[i], y[i]);
}

/**
 * Variant of the greedy multi-step backup that scores each successor state
 * by its own best policy/depth rollout before taking the expectation:
 *
 *   (s,a) -> r + gamma * E_{s'}[ max_{pi, n} U_{pi,n}(s') ]
 *
 * where U_{pi,1} = max_a Q and U_{pi,n} = r_pi + gamma T_pi U_{pi,n-1}.
 */
QTable greedy_successor_max(const TabularMdp& mdp, const PolicySet& policies, int N,
                            const QTable& q) {
    const int S = mdp.num_states();
    std::vector<double> best = max_values(q);  // depth 1, policy independent

    for (const auto& pi : policies) {
        std::vector<double> u = max_values(q);
        for (int n = 2; n <= N; ++n) {
            std::vector<double> next(S, 0.0);
            for (int s = 0; s < S; ++s) {
                double acc = 0.0;
                for (int a = 0; a < mdp.num_actions(); ++a) {
                    if (pi.prob(s, a) == 0.0) continue;
                    double exp_u = 0.0;
                    for (const auto& t : mdp.transitions(s, a)) exp_u += t.prob * u[t.next_state];
                    acc += pi.prob(s, a) * (mdp.reward(s, a) + mdp.gamma() * exp_u);
                }
                next[s] = acc;
            }
            u = std::move(next);
            for (int s = 0; s < S; ++s) best[s] = std::max(best[s], u[s]);
        }
    }

    QTable out(S, mdp.num_actions());
    backup_with_values(mdp, best, out);
    return out;
}

}  // namespace

OperatorSpec OperatorSpec::optimality() {
    OperatorSpec s;
    s.kind = OperatorKind::one_step_optimality;
    return s;
}

OperatorSpec OperatorSpec::expectation(TabularPolicy pi) {
    OperatorSpec s;
    s.kind = OperatorKind::expectation;
    s.policy = std::move(pi);
    return s;
}

OperatorSpec OperatorSpec::multi_step(PolicySet set, int N) {
    OperatorSpec s;
    s.kind = OperatorKind::multi_step;
    s.policies = std::move(set);
    s.max_step = N;
    return s;
}

OperatorSpec OperatorSpec::greedy(PolicySet set, int N, bool successor_max) {
    OperatorSpec s;
    s.kind = OperatorKind::greedy_multi_step;
    s.policies = std::move(set);
    s.max_step = N;
    s.successor_max = successor_max;
    return s;
}

std::string OperatorSpec::name() const {
    std::ostringstream os;
    switch (kind) {
        case OperatorKind::one_step_optimality: return "b";
        case OperatorKind::expectation: return "b-pi";
        case OperatorKind::multi_step:
            os << "bn[N=" << max_step << "]";
            return os.str();
        case OperatorKind::greedy_multi_step:
            os << (successor_max ? "g-succmax" : "g") << "[N=" << max_step << "]";
            return os.str();
    }
    return "?";
}

QTable bellman_optimality(const TabularMdp& mdp, const QTable& q) {
    check_q_dims(mdp, q, "bellman_optimality");
    QTable out(mdp.num_states(), mdp.num_actions());
    backup_with_values(mdp, max_values(q), out);
    return out;
}

QTable bellman_expectation(const TabularMdp& mdp, const TabularPolicy& pi, const QTable& q) {
    check_policy_dims(mdp, pi, "bellman_expectation");
    check_q_dims(mdp, q, "bellman_expectation");
    QTable out(mdp.num_states(), mdp.num_actions());
    backup_with_values(mdp, policy_values(pi, q), out);
    return out;
}

QTable greedy_multistep_operator(const TabularMdp& mdp, const PolicySet& policies, int N,
                                 const QTable& q, bool successor_max) {
    check_set(mdp, policies, N, "greedy_multistep_operator");
    check_q_dims(mdp, q, "greedy_multistep_operator");
    if (successor_max) return greedy_successor_max(mdp, policies, N, q);

    // Depth 1 is the plain optimality backup; deeper candidates re-apply the
    // expectation backup of each candidate policy and fold in elementwise.
    QTable base = bellman_optimality(mdp, q);
    QTable acc = base;
    for (const auto& pi : policies) {
        QTable cur = base;
        for (int n = 2; n <= N; ++n) {
            cur = bellman_expectation(mdp, pi, cur);
            elementwise_max_inplace(acc, cur);
        }
    }
    return acc;
}

QTable multi_step_operator(const TabularMdp& mdp, const PolicySet& policies, int N,
                           const QTable& q) {
    check_set(mdp, policies, N, "multi_step_operator");
    check_q_dims(mdp, q, "multi_step_operator");

    QTable base = bellman_optimality(mdp, q);
    if (N == 1) return base;  // depth 1 has no policy dependence

    bool first = true;
    QTable acc;
    for (const auto& pi : policies) {
        QTable cur = base;
        for (int n = 2; n <= N; ++n) cur = bellman_expectation(mdp, pi, cur);
        if (first) {
            acc = std::move(cur);
            first = false;
        } else {
            elementwise_max_inplace(acc, cur);
        }
    }
    return acc;
}

QTable apply_operator(const TabularMdp& mdp, const OperatorSpec& spec, const QTable& q) {
    switch (spec.kind) {
        case OperatorKind::one_step_optimality: return bellman_optimality(mdp, q);
        case OperatorKind::expectation: return bellman_expectation(mdp, spec.policy, q);
        case OperatorKind::multi_step:
            return multi_step_operator(mdp, spec.policies, spec.max_step, q);
        case OperatorKind::greedy_multi_step:
            return greedy_multistep_operator(mdp, spec.policies, spec.max_step, q,
                                             spec.successor_max);
    }
    throw std::logic_error("apply_operator: unknown operator kind");
}

SolveResult value_iteration(const TabularMdp& mdp, const OperatorSpec& spec, QTable q0,
                            double eps, long max_iter) {
    if (!(eps > 0.0)) throw std::invalid_argument("value_iteration: eps must be positive");
    if (max_iter < 1) throw std::invalid_argument("value_iteration: max_iter must be positive");
    check_q_dims(mdp, q0, "value_iteration");

    SolveResult res;
    res.q = std::move(q0);
    auto t0 = Clock::now();
    for (long k = 0; k < max_iter; ++k) {
        QTable next = apply_operator(mdp, spec, res.q);
        double step = inf_dist(next, res.q);
        res.q = std::move(next);
        ++res.iterations;
        res.residuals.push_back(step);
        res.iter_wall_ns.push_back(
            std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count());
        if (step <= eps) {
            res.converged = true;
            break;
        }
    }
    res.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return res;
}

QTable solve_optimal_q(const TabularMdp& mdp, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("solve_optimal_q: eps must be positive");
    const double gamma = mdp.gamma();
    double stop = eps * (1.0 - gamma) / (2.0 * gamma);
    QTable q0(mdp.num_states(), mdp.num_actions(), 0.0);
    SolveResult res = value_iteration(mdp, OperatorSpec::optimality(), std::move(q0), stop);
    if (!res.converged)
        throw std::runtime_error("solve_optimal_q: did not converge within the iteration cap");
    return std::move(res.q);
}

VSolveResult greedy_multistep_vi_matrix(const TabularMdp& mdp, const PolicySet& policies, int N,
                                        double eps, long max_iter) {
    check_set(mdp, policies, N, "greedy_multistep_vi_matrix");
    if (!(eps > 0.0)) throw std::invalid_argument("greedy_multistep_vi_matrix: eps must be positive");
    const int S = mdp.num_states();
    const int A = mdp.num_actions();
    if (S > 2000)
        throw std::invalid_argument(
            "greedy_multistep_vi_matrix: dense form is limited to 2000 states");
    const double gamma = mdp.gamma();
    const int P = static_cast<int>(policies.size());

    using Eigen::MatrixXd;
    using Eigen::VectorXd;

    // Per-action reward vectors and discounted transition matrices.
    std::vector<VectorXd> r_a(A, VectorXd::Zero(S));
    std::vector<MatrixXd> gt_a(A, MatrixXd::Zero(S, S));
    for (int a = 0; a < A; ++a) {
        for (int s = 0; s < S; ++s) {
            r_a[a](s) = mdp.reward(s, a);
            for (const auto& t : mdp.transitions(s, a)) gt_a[a](s, t.next_state) += gamma * t.prob;
        }
    }

    // Per-policy aggregates and, per depth n, the partial rollout reward
    // c[p][n] = sum_{i <= n-2} (gamma T_pi)^i r_pi. All fixed across iterations.
    std::vector<MatrixXd> gt_pi(P, MatrixXd::Zero(S, S));
    std::vector<VectorXd> r_pi(P, VectorXd::Zero(S));
    for (int p = 0; p < P; ++p) {
        const TabularPolicy& pi = policies[p];
        for (int a = 0; a < A; ++a) {
            for (int s = 0; s < S; ++s) {
                double w = pi.prob(s, a);
                if (w == 0.0) continue;
                r_pi[p](s) += w * r_a[a](s);
            }
            for (int s = 0; s < S; ++s) {
                double w = pi.prob(s, a);
                if (w == 0.0) continue;
                for (const auto& t : mdp.transitions(s, a))
                    gt_pi[p](s, t.next_state) += w * gamma * t.prob;
            }
        }
    }
    std::vector<std::vector<VectorXd>> c(P);  // c[p][n-1], n in [1, N]
    for (int p = 0; p < P; ++p) {
        c[p].resize(N);
        c[p][0] = VectorXd::Zero(S);
        VectorXd pow_r = r_pi[p];  // (gamma T_pi)^{n-2} r_pi, starting at n = 2
        for (int n = 2; n <= N; ++n) {
            c[p][n - 1] = c[p][n - 2] + pow_r;
            pow_r = gt_pi[p] * pow_r;
        }
    }

    VSolveResult res;
    res.v = VTable(S, 0.0);
    VectorXd v = VectorXd::Zero(S);
    auto t0 = Clock::now();

    for (long k = 0; k < max_iter; ++k) {
        VectorXd best = VectorXd::Constant(S, -std::numeric_limits<double>::infinity());
        for (int p = 0; p < P; ++p) {
            VectorXd w = v;  // (gamma T_pi)^{n-1} v, starting at n = 1
            for (int n = 1; n <= N; ++n) {
                VectorXd inner = c[p][n - 1] + w;
                for (int a = 0; a < A; ++a) {
                    VectorXd cand = r_a[a] + gt_a[a] * inner;
                    best = best.cwiseMax(cand);
                }
                if (n < N) w = gt_pi[p] * w;
            }
        }
        double step = (best - v).lpNorm<Eigen::Infinity>();
        v = best;
        ++res.iterations;
        res.residuals.push_back(step);
        if (step <= eps) {
            res.converged = true;
            break;
        }
    }

    for (int s = 0; s < S; ++s) res.v(s) = v(s);
    res.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return res;
}

TabularPolicy greedy_policy_from_q(const QTable& q) {
    std::vector<int> actions(q.num_states());
    for (int s = 0; s < q.num_states(); ++s) actions[s] = q.argmax_action(s);
    return TabularPolicy::deterministic(q.num_states(), q.num_actions(), actions);
}

ContractionProbe contraction_probe(const TabularMdp& mdp, const OperatorSpec& spec,
                                   const QTable& q1, const QTable& q2) {
    QTable o1 = apply_operator(mdp, spec, q1);
    QTable o2 = apply_operator(mdp, spec, q2);
    return {inf_dist(o1, o2), inf_dist(q1, q2)};
}

}  // namespace gms
