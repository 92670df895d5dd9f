#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gms {

/// Seed for all stochastic components. Identical seeds give identical runs.
using RngSeed = std::uint64_t;

/// One sparse transition entry: probability of landing in next_state.
struct Transition {
    int next_state;
    double prob;
};

/**
 * Finite MDP with 0-based contiguous state/action indices, per-(s,a) scalar
 * rewards and a discount in (0,1). Transition rows are stored sparsely.
 *
 * Terminal states are absorbing: every action self-transitions with
 * probability 1 and reward 0. mark_terminal() installs that wiring.
 */
class TabularMdp {
public:
    TabularMdp(int num_states, int num_actions, double gamma)
        : num_states_(num_states), num_actions_(num_actions), gamma_(gamma),
          transitions_(static_cast<size_t>(num_states) * num_actions),
          rewards_(static_cast<size_t>(num_states) * num_actions, 0.0),
          terminal_(num_states, 0) {
        if (num_states < 1 || num_actions < 1)
            throw std::invalid_argument("TabularMdp: need at least one state and one action");
        if (!(gamma > 0.0 && gamma < 1.0))
            throw std::invalid_argument("TabularMdp: gamma must lie in (0,1)");
    }

    int num_states() const { return num_states_; }
    int num_actions() const { return num_actions_; }
    double gamma() const { return gamma_; }

    /// Append probability mass for (s,a) -> s2. Mass for a repeated s2 accumulates.
    void add_transition(int s, int a, int s2, double p) {
        check_sa(s, a);
        check_state(s2);
        if (p == 0.0) return;
        auto& row = transitions_[idx(s, a)];
        for (auto& t : row) {
            if (t.next_state == s2) {
                t.prob += p;
                return;
            }
        }
        row.push_back({s2, p});
    }

    void set_reward(int s, int a, double r) {
        check_sa(s, a);
        rewards_[idx(s, a)] = r;
    }

    /// Make `s` absorbing: self-loop with probability 1 and reward 0 for every action.
    void mark_terminal(int s) {
        check_state(s);
        terminal_[s] = 1;
        for (int a = 0; a < num_actions_; ++a) {
            transitions_[idx(s, a)] = {{s, 1.0}};
            rewards_[idx(s, a)] = 0.0;
        }
    }

    bool is_terminal(int s) const {
        check_state(s);
        return terminal_[s] != 0;
    }

    double reward(int s, int a) const {
        check_sa(s, a);
        return rewards_[idx(s, a)];
    }

    const std::vector<Transition>& transitions(int s, int a) const {
        check_sa(s, a);
        return transitions_[idx(s, a)];
    }

    /// Smallest reward over all (s,a); used for pessimistic value initialisation.
    double min_reward() const {
        double m = rewards_.empty() ? 0.0 : rewards_[0];
        for (double r : rewards_) m = std::min(m, r);
        return m;
    }

private:
    size_t idx(int s, int a) const { return static_cast<size_t>(s) * num_actions_ + a; }

    void check_state(int s) const {
        if (s < 0 || s >= num_states_)
            throw std::out_of_range("TabularMdp: state index out of range");
    }
    void check_sa(int s, int a) const {
        check_state(s);
        if (a < 0 || a >= num_actions_)
            throw std::out_of_range("TabularMdp: action index out of range");
    }

    int num_states_;
    int num_actions_;
    double gamma_;
    std::vector<std::vector<Transition>> transitions_;
    std::vector<double> rewards_;
    std::vector<std::uint8_t> terminal_;
};

/// One rule violation found by validate().
struct ValidationIssue {
    std::string rule;  // "row-sum", "prob-range", "terminal", "finite", "gamma"
    int state = -1;
    int action = -1;
    std::string detail;
};

struct ValidationReport {
    std::vector<ValidationIssue> issues;
    bool ok() const { return issues.empty(); }
};

/// Check probability rows (sum to 1 within 1e-12, entries in [0,1]),
/// absorbing terminal wiring, and finiteness of every number.
ValidationReport validate(const TabularMdp& mdp);

/// Dense |S| x |A| action-value table.
class QTable {
public:
    QTable() : num_states_(0), num_actions_(0) {}
    QTable(int num_states, int num_actions, double fill = 0.0)
        : num_states_(num_states), num_actions_(num_actions),
          values_(static_cast<size_t>(num_states) * num_actions, fill) {}

    int num_states() const { return num_states_; }
    int num_actions() const { return num_actions_; }

    double& operator()(int s, int a) { return values_[idx(s, a)]; }
    double operator()(int s, int a) const { return values_[idx(s, a)]; }

    double max_over_actions(int s) const {
        double m = values_[idx(s, 0)];
        for (int a = 1; a < num_actions_; ++a) m = std::max(m, values_[idx(s, a)]);
        return m;
    }

    /// Greedy action; ties resolve to the lowest index.
    int argmax_action(int s) const {
        int best = 0;
        double bv = values_[idx(s, 0)];
        for (int a = 1; a < num_actions_; ++a) {
            double v = values_[idx(s, a)];
            if (v > bv) {
                bv = v;
                best = a;
            }
        }
        return best;
    }

    std::vector<double>& data() { return values_; }
    const std::vector<double>& data() const { return values_; }

    bool same_shape(const QTable& o) const {
        return num_states_ == o.num_states_ && num_actions_ == o.num_actions_;
    }

private:
    size_t idx(int s, int a) const { return static_cast<size_t>(s) * num_actions_ + a; }

    int num_states_;
    int num_actions_;
    std::vector<double> values_;
};

/// Dense per-state value table.
class VTable {
public:
    VTable() : num_states_(0) {}
    explicit VTable(int num_states, double fill = 0.0) : num_states_(num_states), values_(num_states, fill) {}

    int num_states() const { return num_states_; }
    double& operator()(int s) { return values_[s]; }
    double operator()(int s) const { return values_[s]; }
    std::vector<double>& data() { return values_; }
    const std::vector<double>& data() const { return values_; }

private:
    int num_states_;
    std::vector<double> values_;
};

/// Sup-norm distance between two equally shaped tables.
double inf_dist(const QTable& a, const QTable& b);
double inf_dist(const VTable& a, const VTable& b);

/// V(s) = max_a Q(s,a).
VTable max_over_actions(const QTable& q);

/**
 * Stationary stochastic policy as a dense |S| x |A| probability table.
 * Rows must sum to 1 within 1e-12. Deterministic policies carry the flag so
 * callers can roll them out without sampling.
 */
class TabularPolicy {
public:
    TabularPolicy() : num_states_(0), num_actions_(0), deterministic_(false) {}

    static TabularPolicy uniform(int num_states, int num_actions);
    static TabularPolicy deterministic(int num_states, int num_actions, const std::vector<int>& actions);
    static TabularPolicy from_probs(int num_states, int num_actions, std::vector<double> probs);

    int num_states() const { return num_states_; }
    int num_actions() const { return num_actions_; }
    bool is_deterministic() const { return deterministic_; }

    double prob(int s, int a) const { return probs_[static_cast<size_t>(s) * num_actions_ + a]; }

    /// Action with the full probability mass; only valid for deterministic policies.
    int action(int s) const;

    int sample(int s, std::mt19937_64& rng) const;

private:
    int num_states_;
    int num_actions_;
    bool deterministic_;
    std::vector<double> probs_;
};

/// Non-empty collection of candidate policies sharing one MDP's dimensions.
class PolicySet {
public:
    PolicySet() = default;
    explicit PolicySet(std::vector<TabularPolicy> policies);

    size_t size() const { return policies_.size(); }
    bool empty() const { return policies_.empty(); }
    const TabularPolicy& operator[](size_t i) const { return policies_[i]; }
    auto begin() const { return policies_.begin(); }
    auto end() const { return policies_.end(); }

private:
    std::vector<TabularPolicy> policies_;
};

}  // namespace gms
