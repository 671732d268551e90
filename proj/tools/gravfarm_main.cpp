#include <CLI11.hpp>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include "gravfarm/bench.hpp"
#include "gravfarm/fabric.hpp"
#include "gravfarm/verify.hpp"

namespace {

std::atomic<bool> g_stop{false};

void handle_signal(int) { g_stop = true; }

void wait_for_signal() {
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

std::string env_or(const char* name, const std::string& fallback) {
    const char* v = std::getenv(name);
    return v ? std::string(v) : fallback;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gravfarm: Barnes-Hut N-body engine with sequential, shared-memory, "
                 "ORB-rank and GridRPC-style execution"};
    app.require_subcommand(1);

    // --- bench ---------------------------------------------------------------
    auto* bench = app.add_subcommand("bench", "run the benchmark matrix and write a CSV");
    std::string spec_file;
    std::vector<int> bench_n, bench_workers;
    std::vector<std::string> bench_modes;
    gravfarm::BenchSpec spec;
    std::string dist_name = "uniform";
    bool paper_matrix = false;
    bench->add_option("--spec", spec_file, "flat key = value spec file");
    bench->add_option("--n", bench_n, "body counts")->delimiter(',');
    bench->add_option("--workers", bench_workers, "worker counts")->delimiter(',');
    bench->add_option("--modes", bench_modes, "modes: sequential,shared,orb_ranks,gridrpc")
        ->delimiter(',');
    bench->add_option("--steps", spec.steps, "steps per run");
    bench->add_option("--reps", spec.reps, "repetitions per cell");
    bench->add_option("--seed", spec.seed, "dataset seed");
    bench->add_option("--dist", dist_name, "uniform|plummer");
    bench->add_option("--theta", spec.params.theta, "opening angle");
    bench->add_option("--eps", spec.params.eps, "softening length");
    bench->add_option("--dt", spec.params.dt, "timestep");
    bench->add_option("--leaf-cap", spec.params.leaf_capacity, "leaf capacity");
    bench->add_option("--rank-threads", spec.rank_threads, "threads inside each orb rank");
    bench->add_option("--out", spec.out, "output CSV path");
    bench->add_option("--self-host", spec.self_host, "launch agent plus K local servers for gridrpc");
    bench->add_option("--fabric", spec.fabric, "external agent host:port for gridrpc");
    bench->add_option("--energy-max-n", spec.energy_max_n, "energy diagnostics cutoff");
    bench->add_flag("--paper-matrix", paper_matrix, "n = 10k/50k/100k, workers = 1..24");

    // --- agent / server --------------------------------------------------------
    auto* agent_cmd = app.add_subcommand("agent", "run the registry/scheduler daemon");
    std::string agent_listen = "127.0.0.1:7711";
    agent_cmd->add_option("--listen", agent_listen, "listen address host:port");

    auto* server_cmd = app.add_subcommand("server", "run a ComputeForces server daemon");
    gravfarm::ServerConfig server_cfg;
    server_cfg.agent = env_or("GRAVFARM_AGENT", "");
    server_cfg.capacity = std::atoi(env_or("GRAVFARM_CAPACITY", "1").c_str());
    if (server_cfg.capacity < 1) server_cfg.capacity = 1;
    server_cmd->add_option("--agent", server_cfg.agent, "agent address host:port");
    server_cmd->add_option("--capacity", server_cfg.capacity, "concurrent task slots");
    server_cmd->add_option("--listen", server_cfg.listen, "optional direct-task listen address");

    // --- verify ----------------------------------------------------------------
    auto* verify_cmd = app.add_subcommand("verify", "run the oracle and property suite");
    bool skip_fabric = false;
    bool verbose = false;
    verify_cmd->add_flag("--skip-fabric", skip_fabric, "skip socket-backed checks");
    verify_cmd->add_flag("-v,--verbose", verbose, "print per-check measurements");

    // --- plot ------------------------------------------------------------------
    auto* plot_cmd = app.add_subcommand("plot", "emit a gnuplot script from a results CSV");
    std::string csv_path, script_path = "plot_results.gp";
    plot_cmd->add_option("csv", csv_path, "results CSV")->required();
    plot_cmd->add_option("--out", script_path, "script path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*bench) {
            if (!spec_file.empty()) {
                spec = gravfarm::parse_spec_file(spec_file);
            }
            if (!bench_n.empty()) spec.body_counts = bench_n;
            if (!bench_workers.empty()) spec.worker_counts = bench_workers;
            if (!bench_modes.empty()) {
                spec.modes.clear();
                for (const auto& s : bench_modes) {
                    gravfarm::Mode m;
                    if (!gravfarm::parse_mode(s, m)) {
                        std::cerr << "unknown mode " << s << "\n";
                        return 2;
                    }
                    spec.modes.push_back(m);
                }
            }
            if (!gravfarm::parse_distribution(dist_name, spec.dist)) {
                std::cerr << "unknown distribution " << dist_name << "\n";
                return 2;
            }
            if (paper_matrix) gravfarm::apply_paper_matrix(spec);
            std::ofstream out(spec.out);
            if (!out) {
                std::cerr << "cannot write " << spec.out << "\n";
                return 2;
            }
            gravfarm::run_bench(spec, out, &std::cerr);
            std::cerr << "wrote " << spec.out << "\n";
            return 0;
        }
        if (*agent_cmd) {
            gravfarm::AgentConfig cfg;
            cfg.listen = agent_listen;
            cfg.log = true;
            gravfarm::AgentDaemon daemon(cfg);
            daemon.start();
            std::cerr << "agent listening on " << daemon.address() << "\n";
            wait_for_signal();
            daemon.stop();
            return 0;
        }
        if (*server_cmd) {
            if (server_cfg.agent.empty() && server_cfg.listen.empty()) {
                std::cerr << "server needs --agent or --listen (or GRAVFARM_AGENT)\n";
                return 2;
            }
            server_cfg.log = true;
            gravfarm::ServerDaemon daemon(server_cfg);
            daemon.start();
            if (!server_cfg.agent.empty())
                std::cerr << "server registered with agent " << server_cfg.agent << "\n";
            if (!daemon.listen_address().empty())
                std::cerr << "server accepting direct tasks on " << daemon.listen_address() << "\n";
            wait_for_signal();
            daemon.stop();
            return 0;
        }
        if (*verify_cmd) {
            gravfarm::VerifyOptions opts;
            opts.skip_fabric = skip_fabric;
            std::ofstream devnull("/dev/null");
            std::ostream& log = verbose ? std::cerr : devnull;
            auto results = gravfarm::run_verification(opts, log);
            bool ok = gravfarm::report_verification(results, std::cout);
            return ok ? 0 : 1;
        }
        if (*plot_cmd) {
            gravfarm::emit_plot_script(csv_path, script_path);
            std::cerr << "wrote " << script_path << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
