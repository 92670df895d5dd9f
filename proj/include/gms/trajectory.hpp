#pragma once

#include <memory>
#include <vector>

#include "gms/mdp.hpp"

namespace gms {

/// One executed step: reward received, state reached, and the action taken
/// there. next_action is -1 on the final step (no action at the end state).
struct TrajectoryStep {
    double reward;
    int next_state;
    int next_action;
};

/**
 * Episode record s0 a0 r0 s1 a1 r1 ... sT. Length T >= 1. `terminated` is
 * true when sT is a terminal state, false when the episode was cut short.
 */
class Trajectory {
public:
    Trajectory(int start_state, int start_action, std::vector<TrajectoryStep> steps, bool terminated)
        : start_state_(start_state), start_action_(start_action), steps_(std::move(steps)),
          terminated_(terminated) {
        if (steps_.empty()) throw std::invalid_argument("Trajectory: length must be at least 1");
        if (steps_.back().next_action != -1)
            throw std::invalid_argument("Trajectory: final step must not carry a next action");
        for (size_t t = 0; t + 1 < steps_.size(); ++t)
            if (steps_[t].next_action < 0)
                throw std::invalid_argument("Trajectory: interior step is missing its action");
    }

    int length() const { return static_cast<int>(steps_.size()); }
    bool terminated() const { return terminated_; }

    /// s_t for t in [0, length]
    int state_at(int t) const { return t == 0 ? start_state_ : steps_[t - 1].next_state; }
    /// a_t for t in [0, length); the end state has no action
    int action_at(int t) const { return t == 0 ? start_action_ : steps_[t - 1].next_action; }
    /// r_t for t in [0, length)
    double reward_at(int t) const { return steps_[t].reward; }

    double undiscounted_return() const {
        double sum = 0.0;
        for (const auto& s : steps_) sum += s.reward;
        return sum;
    }

private:
    int start_state_;
    int start_action_;
    std::vector<TrajectoryStep> steps_;
    bool terminated_;
};

using TrajectoryPtr = std::shared_ptr<const Trajectory>;

/**
 * Suffix of a shared trajectory starting at step `offset`. Indexing matches
 * Trajectory with everything shifted: state_at(0) is the suffix's start
 * state, length() its remaining step count. Views share storage, so holding
 * many suffixes of one long episode costs O(1) each.
 */
class TrajectoryView {
public:
    TrajectoryView() = default;
    TrajectoryView(TrajectoryPtr traj, int offset) : traj_(std::move(traj)), offset_(offset) {
        if (!traj_) throw std::invalid_argument("TrajectoryView: null trajectory");
        if (offset_ < 0 || offset_ >= traj_->length())
            throw std::invalid_argument("TrajectoryView: offset outside trajectory");
    }

    int length() const { return traj_->length() - offset_; }
    bool terminated() const { return traj_->terminated(); }
    int start_state() const { return traj_->state_at(offset_); }
    int start_action() const { return traj_->action_at(offset_); }
    int state_at(int t) const { return traj_->state_at(offset_ + t); }
    int action_at(int t) const { return traj_->action_at(offset_ + t); }
    double reward_at(int t) const { return traj_->reward_at(offset_ + t); }

    double undiscounted_return() const {
        double sum = 0.0;
        for (int t = 0; t < length(); ++t) sum += reward_at(t);
        return sum;
    }

    /// Copy the suffix out into a standalone Trajectory.
    Trajectory materialize() const;

private:
    TrajectoryPtr traj_;
    int offset_ = 0;
};

/// All suffixes of `traj`, one per step t in [0, length); entry t starts at
/// (state_at(t), action_at(t)).
std::vector<TrajectoryView> suffixes_of(const TrajectoryPtr& traj);

/**
 * Per-(state, action) collection of trajectory suffixes beginning with that
 * pair. Bounded capacity per key; when full, the suffix with the highest
 * score recorded so far is kept and the oldest of the rest is evicted, so
 * the store always holds the best-known suffix plus the most recent ones.
 *
 * Scores default to the suffix's undiscounted return at insertion; learners
 * overwrite them with greedy returns as they evaluate suffixes.
 */
class TrajectoryStore {
public:
    struct Entry {
        TrajectoryView view;
        double score;
        std::uint64_t seq;  // insertion order, monotone across the store
    };

    /// capacity == 0 means unbounded.
    TrajectoryStore(int num_states, int num_actions, size_t capacity = 8)
        : num_states_(num_states), num_actions_(num_actions), capacity_(capacity),
          entries_(static_cast<size_t>(num_states) * num_actions) {}

    int num_states() const { return num_states_; }
    int num_actions() const { return num_actions_; }
    size_t capacity() const { return capacity_; }

    /// Insert every suffix of `traj` under its (s,a) key. Indices are
    /// validated against the store's dimensions.
    void insert(const TrajectoryPtr& traj);

    const std::vector<Entry>& at(int s, int a) const { return entries_[key(s, a)]; }
    size_t size_at(int s, int a) const { return entries_[key(s, a)].size(); }

    void set_score(int s, int a, size_t i, double score) { entries_[key(s, a)][i].score = score; }

    /// Keys that currently hold at least one suffix, in (s,a) index order.
    std::vector<std::pair<int, int>> covered_keys() const;

private:
    size_t key(int s, int a) const {
        if (s < 0 || s >= num_states_ || a < 0 || a >= num_actions_)
            throw std::out_of_range("TrajectoryStore: key out of range");
        return static_cast<size_t>(s) * num_actions_ + a;
    }

    void insert_one(TrajectoryView view);

    int num_states_;
    int num_actions_;
    size_t capacity_;
    std::vector<std::vector<Entry>> entries_;
    std::uint64_t next_seq_ = 0;
};

}  // namespace gms
