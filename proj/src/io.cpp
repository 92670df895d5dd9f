#include "gms/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

namespace gms {

namespace {

constexpr double kParseRowSumTol = 1e-9;

[[noreturn]] void parse_fail(size_t line_no, const std::string& msg) {
    std::ostringstream os;
    os << "mdp parse error at line " << line_no << ": " << msg;
    throw std::runtime_error(os.str());
}

std::string strip_comment(const std::string& line) {
    auto pos = line.find('#');
    return pos == std::string::npos ? line : line.substr(0, pos);
}

}  // namespace

TabularMdp read_mdp(std::istream& in) {
    std::optional<TabularMdp> mdp;
    std::vector<int> terminals;
    std::string raw;
    size_t line_no = 0;

    while (std::getline(in, raw)) {
        ++line_no;
        std::istringstream ls(strip_comment(raw));
        std::string tag;
        if (!(ls >> tag)) continue;  // blank or comment-only line

        if (tag == "mdp") {
            if (mdp) parse_fail(line_no, "duplicate header");
            int ns, na;
            double gamma;
            if (!(ls >> ns >> na >> gamma)) parse_fail(line_no, "malformed header");
            if (ns < 1 || na < 1) parse_fail(line_no, "state/action counts must be positive");
            if (!(gamma > 0.0 && gamma < 1.0)) parse_fail(line_no, "gamma must lie in (0,1)");
            mdp.emplace(ns, na, gamma);
            continue;
        }
        if (!mdp) parse_fail(line_no, "directive before 'mdp' header");

        if (tag == "t") {
            int s, a, s2;
            double p;
            if (!(ls >> s >> a >> s2 >> p)) parse_fail(line_no, "malformed transition");
            if (s < 0 || s >= mdp->num_states() || s2 < 0 || s2 >= mdp->num_states() ||
                a < 0 || a >= mdp->num_actions())
                parse_fail(line_no, "transition index out of range");
            if (!(p >= 0.0 && p <= 1.0 + kParseRowSumTol))
                parse_fail(line_no, "transition probability out of range");
            mdp->add_transition(s, a, s2, p);
        } else if (tag == "r") {
            int s, a;
            double r;
            if (!(ls >> s >> a >> r)) parse_fail(line_no, "malformed reward");
            if (s < 0 || s >= mdp->num_states() || a < 0 || a >= mdp->num_actions())
                parse_fail(line_no, "reward index out of range");
            if (!std::isfinite(r)) parse_fail(line_no, "non-finite reward");
            mdp->set_reward(s, a, r);
        } else if (tag == "term") {
            int s;
            if (!(ls >> s)) parse_fail(line_no, "malformed terminal directive");
            if (s < 0 || s >= mdp->num_states()) parse_fail(line_no, "terminal index out of range");
            terminals.push_back(s);
        } else {
            parse_fail(line_no, "unknown directive '" + tag + "'");
        }
        std::string extra;
        if (ls >> extra) parse_fail(line_no, "trailing tokens");
    }

    if (!mdp) throw std::runtime_error("mdp parse error: missing 'mdp' header");
    for (int s : terminals) mdp->mark_terminal(s);

    for (int s = 0; s < mdp->num_states(); ++s) {
        if (mdp->is_terminal(s)) continue;
        for (int a = 0; a < mdp->num_actions(); ++a) {
            double sum = 0.0;
            for (const auto& t : mdp->transitions(s, a)) sum += t.prob;
            if (std::abs(sum - 1.0) > kParseRowSumTol) {
                std::ostringstream os;
                os << "mdp parse error: probabilities for state " << s << " action " << a
                   << " sum to " << sum;
                throw std::runtime_error(os.str());
            }
        }
    }
    return *mdp;
}

TabularMdp read_mdp_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open mdp file: " + path);
    return read_mdp(f);
}

std::string format_double(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

void write_mdp(std::ostream& out, const TabularMdp& mdp) {
    out << "mdp " << mdp.num_states() << ' ' << mdp.num_actions() << ' '
        << format_double(mdp.gamma()) << '\n';
    for (int s = 0; s < mdp.num_states(); ++s)
        if (mdp.is_terminal(s)) out << "term " << s << '\n';
    for (int s = 0; s < mdp.num_states(); ++s) {
        if (mdp.is_terminal(s)) continue;
        for (int a = 0; a < mdp.num_actions(); ++a) {
            auto row = mdp.transitions(s, a);
            std::sort(row.begin(), row.end(),
                      [](const Transition& x, const Transition& y) { return x.next_state < y.next_state; });
            for (const auto& t : row)
                out << "t " << s << ' ' << a << ' ' << t.next_state << ' ' << format_double(t.prob) << '\n';
            if (mdp.reward(s, a) != 0.0)
                out << "r " << s << ' ' << a << ' ' << format_double(mdp.reward(s, a)) << '\n';
        }
    }
}

void write_mdp_file(const std::string& path, const TabularMdp& mdp) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open mdp file for writing: " + path);
    write_mdp(f, mdp);
}

std::vector<TrajectoryPtr> read_trajectories(std::istream& in) {
    std::vector<TrajectoryPtr> out;
    std::string raw;
    size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::istringstream ls(strip_comment(raw));
        std::vector<std::string> tok;
        std::string t;
        while (ls >> t) tok.push_back(t);
        if (tok.empty()) continue;

        auto fail = [line_no](const std::string& msg) -> void {
            std::ostringstream os;
            os << "trajectory parse error at line " << line_no << ": " << msg;
            throw std::runtime_error(os.str());
        };

        if (tok.size() < 5 || (tok.size() - 2) % 3 != 0) fail("malformed episode line");
        bool terminated = false;
        if (tok.back() == "term") terminated = true;
        else if (tok.back() == "cut") terminated = false;
        else fail("episode must end with 'term' or 'cut'");

        size_t nsteps = (tok.size() - 2) / 3;
        try {
            int s0 = std::stoi(tok[0]);
            int a0 = std::stoi(tok[1]);
            std::vector<TrajectoryStep> steps;
            steps.reserve(nsteps);
            for (size_t k = 0; k < nsteps; ++k) {
                double r = std::stod(tok[2 + 3 * k]);
                int s_next = std::stoi(tok[3 + 3 * k]);
                int a_next = (k + 1 < nsteps) ? std::stoi(tok[4 + 3 * k]) : -1;
                steps.push_back({r, s_next, a_next});
            }
            out.push_back(std::make_shared<Trajectory>(s0, a0, std::move(steps), terminated));
        } catch (const std::invalid_argument&) {
            fail("non-numeric token");
        } catch (const std::out_of_range&) {
            fail("numeric token out of range");
        }
    }
    return out;
}

std::vector<TrajectoryPtr> read_trajectories_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open trajectory file: " + path);
    return read_trajectories(f);
}

void write_trajectories(std::ostream& out, const std::vector<TrajectoryPtr>& trajs) {
    for (const auto& tr : trajs) {
        out << tr->state_at(0) << ' ' << tr->action_at(0);
        for (int t = 0; t < tr->length(); ++t) {
            out << ' ' << format_double(tr->reward_at(t)) << ' ' << tr->state_at(t + 1);
            if (t + 1 < tr->length()) out << ' ' << tr->action_at(t + 1);
        }
        out << (tr->terminated() ? " term" : " cut") << '\n';
    }
}

void write_trajectories_file(const std::string& path, const std::vector<TrajectoryPtr>& trajs) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open trajectory file for writing: " + path);
    write_trajectories(f, trajs);
}

}  // namespace gms
