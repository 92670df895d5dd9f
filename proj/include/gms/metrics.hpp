#pragma once

#include <map>
#include <vector>

namespace gms {

/**
 * Per-run training statistics. `episodes_to_solve` is the first 1-based
 * episode (or sweep, in offline mode) after which the task's solved
 * predicate held; -1 when it never did or no predicate exists.
 */
struct RunMetrics {
    std::vector<double> episode_returns;  // undiscounted behaviour return per episode
    std::vector<long> episode_steps;
    std::vector<int> chosen_steps;        // per-update bootstrap depth (greedy multi-step runs)
    std::vector<long> updates_per_episode;
    long episodes_to_solve = -1;
    bool solved = false;
    double final_return = 0.0;
    double wall_seconds = 0.0;

    std::map<int, long> chosen_step_histogram() const {
        std::map<int, long> h;
        for (int n : chosen_steps) ++h[n];
        return h;
    }
};

/**
 * Order statistics over one metric across trials. Median of an even count
 * averages the middle pair; quartiles are medians of the lower/upper half,
 * excluding the middle element for odd counts.
 */
struct Aggregate {
    double median = 0.0;
    double mean = 0.0;
    double q25 = 0.0;
    double q75 = 0.0;
    long count = 0;
};

Aggregate aggregate(std::vector<double> values);

}  // namespace gms
