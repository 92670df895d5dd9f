#include "gms/mdp.hpp"

#include <cmath>
#include <sstream>

namespace gms {

namespace {

constexpr double kRowSumTol = 1e-12;

}  // namespace

ValidationReport validate(const TabularMdp& mdp) {
    ValidationReport rep;
    auto add = [&rep](const std::string& rule, int s, int a, const std::string& detail) {
        rep.issues.push_back({rule, s, a, detail});
    };

    if (!(mdp.gamma() > 0.0 && mdp.gamma() < 1.0))
        add("gamma", -1, -1, "discount outside (0,1)");

    for (int s = 0; s < mdp.num_states(); ++s) {
        for (int a = 0; a < mdp.num_actions(); ++a) {
            const auto& row = mdp.transitions(s, a);
            double sum = 0.0;
            for (const auto& t : row) {
                if (!std::isfinite(t.prob)) {
                    add("finite", s, a, "non-finite transition probability");
                    continue;
                }
                if (t.prob < 0.0 || t.prob > 1.0 + kRowSumTol) {
                    std::ostringstream os;
                    os << "probability " << t.prob << " for successor " << t.next_state;
                    add("prob-range", s, a, os.str());
                }
                sum += t.prob;
            }
            if (std::abs(sum - 1.0) > kRowSumTol) {
                std::ostringstream os;
                os << "row sums to " << sum;
                add("row-sum", s, a, os.str());
            }
            if (!std::isfinite(mdp.reward(s, a)))
                add("finite", s, a, "non-finite reward");

            if (mdp.is_terminal(s)) {
                bool self_loop = row.size() == 1 && row[0].next_state == s &&
                                 std::abs(row[0].prob - 1.0) <= kRowSumTol;
                if (!self_loop)
                    add("terminal", s, a, "terminal state must self-transition with probability 1");
                if (mdp.reward(s, a) != 0.0)
                    add("terminal", s, a, "terminal state must have reward 0");
            }
        }
    }
    return rep;
}

double inf_dist(const QTable& a, const QTable& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("inf_dist: shape mismatch");
    double m = 0.0;
    const auto& x = a.data();
    const auto& y = b.data();
    for (size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
    return m;
}

double inf_dist(const VTable& a, const VTable& b) {
    if (a.num_states() != b.num_states()) throw std::invalid_argument("inf_dist: shape mismatch");
    double m = 0.0;
    for (int s = 0; s < a.num_states(); ++s) m = std::max(m, std::abs(a(s) - b(s)));
    return m;
}

VTable max_over_actions(const QTable& q) {
    VTable v(q.num_states());
    for (int s = 0; s < q.num_states(); ++s) v(s) = q.max_over_actions(s);
    return v;
}

TabularPolicy TabularPolicy::uniform(int num_states, int num_actions) {
    TabularPolicy p;
    p.num_states_ = num_states;
    p.num_actions_ = num_actions;
    p.deterministic_ = num_actions == 1;
    p.probs_.assign(static_cast<size_t>(num_states) * num_actions, 1.0 / num_actions);
    return p;
}

TabularPolicy TabularPolicy::deterministic(int num_states, int num_actions,
                                           const std::vector<int>& actions) {
    if (static_cast<int>(actions.size()) != num_states)
        throw std::invalid_argument("TabularPolicy: need one action per state");
    TabularPolicy p;
    p.num_states_ = num_states;
    p.num_actions_ = num_actions;
    p.deterministic_ = true;
    p.probs_.assign(static_cast<size_t>(num_states) * num_actions, 0.0);
    for (int s = 0; s < num_states; ++s) {
        int a = actions[s];
        if (a < 0 || a >= num_actions)
            throw std::invalid_argument("TabularPolicy: action index out of range");
        p.probs_[static_cast<size_t>(s) * num_actions + a] = 1.0;
    }
    return p;
}

TabularPolicy TabularPolicy::from_probs(int num_states, int num_actions, std::vector<double> probs) {
    if (probs.size() != static_cast<size_t>(num_states) * num_actions)
        throw std::invalid_argument("TabularPolicy: probability table has wrong size");
    for (int s = 0; s < num_states; ++s) {
        double sum = 0.0;
        for (int a = 0; a < num_actions; ++a) {
            double pr = probs[static_cast<size_t>(s) * num_actions + a];
            if (!(pr >= 0.0 && pr <= 1.0 + 1e-12))
                throw std::invalid_argument("TabularPolicy: probability out of range");
            sum += pr;
        }
        if (std::abs(sum - 1.0) > 1e-12)
            throw std::invalid_argument("TabularPolicy: row does not sum to 1");
    }
    TabularPolicy p;
    p.num_states_ = num_states;
    p.num_actions_ = num_actions;
    p.deterministic_ = true;
    for (int s = 0; s < num_states && p.deterministic_; ++s) {
        bool has_unit = false;
        for (int a = 0; a < num_actions; ++a) {
            double pr = probs[static_cast<size_t>(s) * num_actions + a];
            if (pr == 1.0) has_unit = true;
            else if (pr != 0.0) p.deterministic_ = false;
        }
        if (!has_unit) p.deterministic_ = false;
    }
    p.probs_ = std::move(probs);
    return p;
}

int TabularPolicy::action(int s) const {
    if (!deterministic_)
        throw std::logic_error("TabularPolicy::action: policy is stochastic");
    for (int a = 0; a < num_actions_; ++a)
        if (prob(s, a) == 1.0) return a;
    throw std::logic_error("TabularPolicy::action: no unit-probability action");
}

int TabularPolicy::sample(int s, std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double u = unit(rng);
    double acc = 0.0;
    for (int a = 0; a < num_actions_; ++a) {
        acc += prob(s, a);
        if (u < acc) return a;
    }
    return num_actions_ - 1;  // guard against accumulated rounding
}

PolicySet::PolicySet(std::vector<TabularPolicy> policies) : policies_(std::move(policies)) {
    if (policies_.empty()) throw std::invalid_argument("PolicySet: must not be empty");
    for (const auto& p : policies_) {
        if (p.num_states() != policies_[0].num_states() ||
            p.num_actions() != policies_[0].num_actions())
            throw std::invalid_argument("PolicySet: policies have mismatched dimensions");
    }
}

}  // namespace gms
