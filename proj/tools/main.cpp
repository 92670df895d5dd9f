#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gms/harness.hpp"

namespace {

using namespace gms;

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    return f;
}

/// Mean bootstrap depth per episode, sliced out of the flat per-update log.
std::vector<double> per_episode_mean_step(const RunMetrics& m) {
    std::vector<double> out(m.updates_per_episode.size(), 0.0);
    if (m.chosen_steps.empty()) return out;
    size_t off = 0;
    for (size_t e = 0; e < m.updates_per_episode.size(); ++e) {
        size_t take = std::min<size_t>(static_cast<size_t>(m.updates_per_episode[e]),
                                       m.chosen_steps.size() - off);
        double sum = 0.0;
        for (size_t i = 0; i < take; ++i) sum += m.chosen_steps[off + i];
        if (take > 0) out[e] = sum / static_cast<double>(take);
        off += take;
    }
    return out;
}

void write_train_csv(std::ostream& out, const RunMetrics& m) {
    auto mean_step = per_episode_mean_step(m);
    out << "episode,return,steps,solved,mean_chosen_step\n";
    for (size_t e = 0; e < m.episode_returns.size(); ++e) {
        long ep = static_cast<long>(e) + 1;
        int solved = m.solved && ep >= m.episodes_to_solve ? 1 : 0;
        out << ep << ',' << format_double(m.episode_returns[e]) << ',' << m.episode_steps[e]
            << ',' << solved << ',' << format_double(mean_step[e]) << '\n';
    }
}

void write_offline_csv(std::ostream& out, const RunMetrics& m) {
    auto mean_step = per_episode_mean_step(m);
    out << "pass,updates,solved,mean_chosen_step\n";
    for (size_t p = 0; p < m.updates_per_episode.size(); ++p) {
        long pass = static_cast<long>(p) + 1;
        int solved = m.solved && pass >= m.episodes_to_solve ? 1 : 0;
        out << pass << ',' << m.updates_per_episode[p] << ',' << solved << ','
            << format_double(mean_step[p]) << '\n';
    }
}

struct LearnerArgs {
    std::string env_spec;
    std::string algo = "gm";
    long episodes = 1000;
    double alpha = 0.1;
    double gamma = -1.0;  // <= 0: take the environment's discount
    double eps_explore = 0.1;
    double eps_final = 0.01;
    int max_step = 0;
    double lambda = 0.9;
    std::optional<double> q_init;
    long seed = 0;
    long store_capacity = 8;
    bool unbounded_store = false;
    std::string out;
};

void add_learner_options(CLI::App* cmd, LearnerArgs& a, bool online) {
    cmd->add_option("--env", a.env_spec, "environment spec (gridworld:<n>, chain:<N>, ...)")
        ->required();
    cmd->add_option("--algo", a.algo, "gm | q | sarsa-n | qlambda | nstep-q");
    cmd->add_option("--alpha", a.alpha, "step size")->capture_default_str();
    cmd->add_option("--gamma", a.gamma, "discount; default: the environment's");
    cmd->add_option("--n", a.max_step, "bootstrap depth cap; 0 = to episode end")->capture_default_str();
    cmd->add_option("--q-init", a.q_init, "initial table value; default: min reward / (1 - gamma)");
    cmd->add_option("--seed", a.seed, "rng seed")->capture_default_str();
    cmd->add_option("--store-capacity", a.store_capacity, "stored suffixes per (s,a)")->capture_default_str();
    cmd->add_flag("--unbounded-store", a.unbounded_store, "keep every stored suffix");
    cmd->add_option("--out", a.out, "per-episode csv path");
    if (online) {
        cmd->add_option("--episodes", a.episodes, "training episodes")->capture_default_str();
        cmd->add_option("--eps-explore", a.eps_explore, "initial exploration rate")->capture_default_str();
        cmd->add_option("--eps-final", a.eps_final, "final exploration rate")->capture_default_str();
        cmd->add_option("--lambda", a.lambda, "trace decay (qlambda)")->capture_default_str();
    }
}

LearnerConfig to_learner_config(const LearnerArgs& a, const Env& env) {
    LearnerConfig lc;
    lc.algo = algo_from_name(a.algo);
    lc.alpha = a.alpha;
    lc.gamma = a.gamma > 0.0 ? a.gamma : env.mdp().gamma();
    lc.eps_explore = a.eps_explore;
    lc.eps_final = a.eps_final;
    lc.max_step = a.max_step;
    lc.lambda = a.lambda;
    lc.q_init = a.q_init;
    lc.episodes = a.episodes;
    lc.store_capacity = a.unbounded_store ? 0 : static_cast<size_t>(a.store_capacity);
    lc.seed = static_cast<RngSeed>(a.seed);
    return lc;
}

void print_run_summary(const std::string& env_name, const LearnerConfig& cfg,
                       const RunMetrics& m, const char* unit, bool with_return) {
    std::cout << algo_name(cfg.algo) << " on " << env_name << ": ";
    if (m.solved)
        std::cout << "solved after " << m.episodes_to_solve << ' ' << unit << (m.episodes_to_solve == 1 ? "" : "s");
    else
        std::cout << "not solved";
    if (with_return) std::cout << ", final return " << m.final_return;
    if (!m.chosen_steps.empty()) {
        double sum = 0.0;
        for (int c : m.chosen_steps) sum += c;
        std::cout << ", mean chosen step " << sum / static_cast<double>(m.chosen_steps.size());
    }
    std::cout << ", " << m.wall_seconds << "s\n";
}

int cmd_solve(const std::string& mdp_spec, const std::string& op, bool succmax,
              const std::string& policies, int n, double eps, long max_iter,
              const std::string& q0_kind, bool matrix, const std::string& out) {
    ModelSource src = load_model(mdp_spec);
    const TabularMdp& mdp = src.mdp;

    OperatorSpec spec = OperatorSpec::optimality();
    PolicySet ps;
    if (op != "b") {
        ps = resolve_policy_spec(policies, mdp.num_states(), mdp.num_actions(), src.policies);
        spec = op == "bn" ? OperatorSpec::multi_step(ps, n) : OperatorSpec::greedy(ps, n, succmax);
    }

    if (matrix) {
        if (op != "g" || succmax)
            throw std::runtime_error("--matrix covers the greedy operator's default form only");
        VSolveResult vres = greedy_multistep_vi_matrix(mdp, ps, n, eps, max_iter);
        SolveResult qres = value_iteration(mdp, spec, QTable(mdp.num_states(), mdp.num_actions()),
                                           eps, max_iter);
        double cross = inf_dist(max_over_actions(qres.q), vres.v);
        std::cout << "matrix form:   " << vres.iterations << " iterations, "
                  << (vres.converged ? "converged" : "not converged") << ", "
                  << vres.wall_seconds << "s\n";
        std::cout << "table form:    " << qres.iterations << " iterations, "
                  << (qres.converged ? "converged" : "not converged") << ", "
                  << qres.wall_seconds << "s\n";
        std::cout << "state-value cross-check distance: " << cross << '\n';
        if (!out.empty())
            std::cout << "note: --matrix writes no per-iteration log; --out ignored\n";
        return 0;
    }

    double fill = q0_kind == "pessimistic" ? mdp.min_reward() / (1.0 - mdp.gamma()) : 0.0;
    SolveResult res =
        value_iteration(mdp, spec, QTable(mdp.num_states(), mdp.num_actions(), fill), eps, max_iter);
    QTable ref = refined_optimal_q(mdp);

    std::cout << spec.name() << " on " << src.name << ": " << res.iterations << " iterations, "
              << (res.converged ? "converged" : "not converged") << ", final residual "
              << (res.residuals.empty() ? 0.0 : res.residuals.back()) << ", distance to optimal "
              << inf_dist(res.q, ref) << ", " << res.wall_seconds << "s\n";

    if (!out.empty()) {
        auto f = open_out(out);
        f << "iter,residual,wall_ns\n";
        for (size_t i = 0; i < res.residuals.size(); ++i)
            f << i + 1 << ',' << format_double(res.residuals[i]) << ',' << res.iter_wall_ns[i]
              << '\n';
    }
    return 0;
}

int cmd_train(const LearnerArgs& a) {
    EnvBundle bundle = parse_env_spec(a.env_spec);
    const Env& env = bundle.env;
    LearnerConfig lc = to_learner_config(a, env);
    SolvedCheck watch = [&env](const QTable& q) {
        return env.has_solved_check() && env.solved(q);
    };
    auto [q, m] = run_learner(env, lc, watch);
    print_run_summary(env.name(), lc, m, "episode", true);
    if (!a.out.empty()) {
        auto f = open_out(a.out);
        write_train_csv(f, m);
    }
    return 0;
}

int cmd_offline(const LearnerArgs& a, const std::string& data, long passes) {
    EnvBundle bundle = parse_env_spec(a.env_spec);
    const Env& env = bundle.env;
    std::vector<TrajectoryPtr> dataset = read_trajectories_file(data);
    LearnerConfig lc = to_learner_config(a, env);
    SolvedCheck watch = [&env](const QTable& q) {
        return env.has_solved_check() && env.solved(q);
    };
    auto [q, m] = offline_train(dataset, env.mdp(), lc, passes, watch);
    std::cout << dataset.size() << " episodes from " << data << '\n';
    print_run_summary(env.name(), lc, m, "pass", false);
    if (!a.out.empty()) {
        auto f = open_out(a.out);
        write_offline_csv(f, m);
    }
    return 0;
}

int cmd_bench(const std::string& config_path) {
    ExperimentConfig cfg = read_experiment_config_file(config_path);
    ExperimentResult result = run_experiment(cfg);

    if (cfg.mode == ExperimentMode::operators) {
        for (const auto& r : result.op_rows) {
            std::cout << r.arm << ": ";
            if (!r.error.empty()) {
                std::cout << "error: " << r.error << '\n';
                continue;
            }
            std::cout << r.iterations << " iterations, "
                      << (r.converged ? "converged" : "not converged") << ", final residual "
                      << r.final_residual << ", distance to optimal " << r.dist_to_opt << '\n';
        }
    } else {
        for (const auto& s : result.summaries) {
            std::cout << s.arm << ": " << s.solved_count << '/' << s.trials << " solved, median "
                      << s.episodes_to_solve.median << " [" << s.episodes_to_solve.q25 << ", "
                      << s.episodes_to_solve.q75 << "], median return " << s.final_return.median
                      << ", mean chosen step " << s.mean_chosen_step << '\n';
        }
        long failed = 0;
        for (const auto& r : result.rows)
            if (!r.error.empty()) ++failed;
        if (failed > 0) std::cout << failed << " trial(s) failed\n";
    }
    if (!cfg.out_dir.empty())
        std::cout << "wrote " << cfg.out_dir << "/" << cfg.id << "_*.csv\n";
    return result.ok ? 0 : 1;
}

int cmd_props(int pairs, long seed, bool quick) {
    PropertyOptions opt;
    opt.pairs = quick ? 100 : pairs;
    opt.seed = static_cast<RngSeed>(seed);
    PropertyReport report = property_suite(opt);
    print_property_report(std::cout, report);
    return report.all_pass() ? 0 : 1;
}

int cmd_stats(const LearnerArgs& a) {
    EnvBundle bundle = parse_env_spec(a.env_spec);
    const Env& env = bundle.env;
    LearnerArgs args = a;
    args.algo = "gm";
    LearnerConfig lc = to_learner_config(args, env);
    auto [q, m] = run_gm_q_learning(env, lc);
    print_run_summary(env.name(), lc, m, "episode", true);

    auto hist = m.chosen_step_histogram();
    if (!a.out.empty()) {
        auto f = open_out(a.out);
        f << "step,count\n";
        for (auto [step, count] : hist) f << step << ',' << count << '\n';
    } else {
        std::cout << "step,count\n";
        for (auto [step, count] : hist) std::cout << step << ',' << count << '\n';
    }

    const auto& cs = m.chosen_steps;
    if (!cs.empty()) {
        std::cout << "chosen-step decile means:";
        size_t n = cs.size();
        for (int d = 0; d < 10; ++d) {
            size_t lo = n * d / 10, hi = n * (d + 1) / 10;
            if (lo >= hi) continue;
            double sum = 0.0;
            for (size_t i = lo; i < hi; ++i) sum += cs[i];
            std::cout << ' ' << sum / static_cast<double>(hi - lo);
        }
        std::cout << '\n';
    }
    return 0;
}

int cmd_export(const std::string& env_spec, const std::string& out) {
    ModelSource src = load_model(env_spec);
    write_mdp_file(out, src.mdp);
    std::cout << "wrote " << src.name << " (" << src.mdp.num_states() << " states, "
              << src.mdp.num_actions() << " actions) to " << out << '\n';
    return 0;
}

int cmd_collect(const std::string& env_spec, long episodes, long max_episodes, long seed,
                const std::string& out) {
    EnvBundle bundle = parse_env_spec(env_spec);
    auto dataset = collect_dataset(bundle.env, episodes, max_episodes, static_cast<RngSeed>(seed));
    write_trajectories_file(out, dataset);
    std::cout << "wrote " << dataset.size() << " episodes to " << out << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"greedy multi-step value iteration and Q-learning toolkit"};
    app.require_subcommand(1);
    int rc = 0;

    // solve
    std::string s_mdp, s_op = "g", s_policies = "uniform", s_q0 = "zero", s_out;
    int s_n = 5;
    double s_eps = 1e-8;
    long s_max_iter = 1000000;
    bool s_succmax = false, s_matrix = false;
    auto* solve = app.add_subcommand("solve", "iterate a backup operator to its fixed point");
    solve->add_option("--mdp", s_mdp, "model file or generator spec")->required();
    solve->add_option("--operator", s_op, "b | bn | g")
        ->check(CLI::IsMember({"b", "bn", "g"}));
    solve->add_flag("--succmax", s_succmax, "per-successor maxima variant of g");
    solve->add_option("--policies", s_policies, "env | uniform | random:<k>:<seed>, comma-joined");
    solve->add_option("--n", s_n, "lookahead depth N")->capture_default_str();
    solve->add_option("--eps", s_eps, "residual threshold")->capture_default_str();
    solve->add_option("--max-iter", s_max_iter, "iteration cap")->capture_default_str();
    solve->add_option("--q0", s_q0, "zero | pessimistic")
        ->check(CLI::IsMember({"zero", "pessimistic"}));
    solve->add_flag("--matrix", s_matrix, "dense state-value form plus cross-check");
    solve->add_option("--out", s_out, "per-iteration csv path");
    solve->callback([&]() {
        rc = cmd_solve(s_mdp, s_op, s_succmax, s_policies, s_n, s_eps, s_max_iter, s_q0,
                       s_matrix, s_out);
    });

    // train
    LearnerArgs t_args;
    auto* train = app.add_subcommand("train", "run a model-free learner on an environment");
    add_learner_options(train, t_args, true);
    train->callback([&]() { rc = cmd_train(t_args); });

    // offline
    LearnerArgs o_args;
    o_args.alpha = 1.0;
    std::string o_data;
    long o_passes = 100;
    auto* offline = app.add_subcommand("offline", "sweep a learner over a fixed trajectory log");
    add_learner_options(offline, o_args, false);
    offline->add_option("--data", o_data, "trajectory log path")->required();
    offline->add_option("--passes", o_passes, "full sweeps over the covered pairs")->capture_default_str();
    offline->callback([&]() { rc = cmd_offline(o_args, o_data, o_passes); });

    // bench
    std::string b_config;
    auto* bench = app.add_subcommand("bench", "run a multi-trial experiment from a config file");
    bench->add_option("--config", b_config, "experiment config path")->required();
    bench->callback([&]() { rc = cmd_bench(b_config); });

    // props
    int p_pairs = 1000;
    long p_seed = 7;
    bool p_quick = false;
    auto* props = app.add_subcommand("props", "check operator and learner properties");
    props->add_option("--pairs", p_pairs, "random table pairs per model")->capture_default_str();
    props->add_option("--seed", p_seed, "rng seed")->capture_default_str();
    props->add_flag("--quick", p_quick, "100 pairs per model");
    props->callback([&]() { rc = cmd_props(p_pairs, p_seed, p_quick); });

    // stats
    LearnerArgs st_args;
    auto* stats = app.add_subcommand("stats", "chosen-step histogram of a greedy multi-step run");
    add_learner_options(stats, st_args, true);
    stats->callback([&]() { rc = cmd_stats(st_args); });

    // export
    std::string e_env, e_out;
    auto* exp = app.add_subcommand("export", "write a model to the text format");
    exp->add_option("--env", e_env, "model file or generator spec")->required();
    exp->add_option("--out", e_out, "output path")->required();
    exp->callback([&]() { rc = cmd_export(e_env, e_out); });

    // collect
    std::string c_env, c_out;
    long c_episodes = 0, c_max_episodes = 10000, c_seed = 0;
    auto* collect = app.add_subcommand("collect", "log uniform-random episodes to a file");
    collect->add_option("--env", c_env, "environment spec")->required();
    collect->add_option("--episodes", c_episodes, "episode count; 0 = until full coverage")->capture_default_str();
    collect->add_option("--max-episodes", c_max_episodes, "cap in coverage mode")->capture_default_str();
    collect->add_option("--seed", c_seed, "rng seed")->capture_default_str();
    collect->add_option("--out", c_out, "output path")->required();
    collect->callback([&]() { rc = cmd_collect(c_env, c_episodes, c_max_episodes, c_seed, c_out); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return rc;
}
