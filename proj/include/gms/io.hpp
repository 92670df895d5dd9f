#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "gms/mdp.hpp"
#include "gms/trajectory.hpp"

namespace gms {

/**
 * Plain-text MDP format, one directive per line, '#' starts a comment:
 *
 *   mdp <num_states> <num_actions> <gamma>
 *   t <s> <a> <s'> <prob>
 *   r <s> <a> <reward>
 *   term <s>
 *
 * The header must come first. Unlisted rewards are 0. Terminal wiring
 * (self-loop, zero reward) is implied by `term` and is not listed as t/r
 * lines. Numbers are written with up to 17 significant digits so a
 * write/read round trip reproduces every double bit for bit.
 *
 * Parsing rejects malformed directives, out-of-range indices, and
 * non-terminal rows whose probabilities do not sum to 1 within 1e-9.
 */
TabularMdp read_mdp(std::istream& in);
TabularMdp read_mdp_file(const std::string& path);
void write_mdp(std::ostream& out, const TabularMdp& mdp);
void write_mdp_file(const std::string& path, const TabularMdp& mdp);

/**
 * Trajectory log: one episode per line,
 *
 *   s0 a0 r0 s1 a1 r1 ... sT term
 *   s0 a0 r0 s1 a1 r1 ... sT cut
 *
 * `term` marks episodes that reached a terminal state, `cut` episodes that
 * were stopped by a step cap.
 */
std::vector<TrajectoryPtr> read_trajectories(std::istream& in);
std::vector<TrajectoryPtr> read_trajectories_file(const std::string& path);
void write_trajectories(std::ostream& out, const std::vector<TrajectoryPtr>& trajs);
void write_trajectories_file(const std::string& path, const std::vector<TrajectoryPtr>& trajs);

/// Shortest decimal form that parses back to the same double (%.17g with
/// trailing-precision trimming left to the C library). Shared by every text
/// emitter so all files round-trip identically.
std::string format_double(double x);

}  // namespace gms
