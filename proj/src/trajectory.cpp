#include "gms/trajectory.hpp"

#include <algorithm>

namespace gms {

Trajectory TrajectoryView::materialize() const {
    std::vector<TrajectoryStep> steps;
    steps.reserve(length());
    for (int t = 0; t < length(); ++t) {
        int na = (t + 1 < length()) ? action_at(t + 1) : -1;
        steps.push_back({reward_at(t), state_at(t + 1), na});
    }
    return Trajectory(start_state(), start_action(), std::move(steps), terminated());
}

std::vector<TrajectoryView> suffixes_of(const TrajectoryPtr& traj) {
    if (!traj) throw std::invalid_argument("suffixes_of: null trajectory");
    std::vector<TrajectoryView> out;
    out.reserve(traj->length());
    for (int t = 0; t < traj->length(); ++t) out.emplace_back(traj, t);
    return out;
}

void TrajectoryStore::insert(const TrajectoryPtr& traj) {
    if (!traj) throw std::invalid_argument("TrajectoryStore::insert: null trajectory");
    for (int t = 0; t <= traj->length(); ++t) {
        int s = traj->state_at(t);
        if (s < 0 || s >= num_states_)
            throw std::out_of_range("TrajectoryStore::insert: state outside store dimensions");
        if (t < traj->length()) {
            int a = traj->action_at(t);
            if (a < 0 || a >= num_actions_)
                throw std::out_of_range("TrajectoryStore::insert: action outside store dimensions");
        }
    }
    for (int t = 0; t < traj->length(); ++t) insert_one(TrajectoryView(traj, t));
}

void TrajectoryStore::insert_one(TrajectoryView view) {
    auto& bucket = entries_[key(view.start_state(), view.start_action())];
    double score = view.undiscounted_return();
    bucket.push_back({std::move(view), score, next_seq_++});
    if (capacity_ == 0 || bucket.size() <= capacity_) return;

    // Over capacity: locate the best-scored entry (ties favour the oldest),
    // then drop the oldest entry that is not the best.
    size_t best = 0;
    for (size_t i = 1; i < bucket.size(); ++i) {
        if (bucket[i].score > bucket[best].score ||
            (bucket[i].score == bucket[best].score && bucket[i].seq < bucket[best].seq))
            best = i;
    }
    size_t victim = bucket.size();
    for (size_t i = 0; i < bucket.size(); ++i) {
        if (i == best) continue;
        if (victim == bucket.size() || bucket[i].seq < bucket[victim].seq) victim = i;
    }
    bucket.erase(bucket.begin() + victim);
}

std::vector<std::pair<int, int>> TrajectoryStore::covered_keys() const {
    std::vector<std::pair<int, int>> keys;
    for (int s = 0; s < num_states_; ++s)
        for (int a = 0; a < num_actions_; ++a)
            if (!entries_[static_cast<size_t>(s) * num_actions_ + a].empty()) keys.emplace_back(s, a);
    return keys;
}

}  // namespace gms
