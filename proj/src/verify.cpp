#include "gravfarm/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "gravfarm/bench.hpp"
#include "gravfarm/fabric.hpp"
#include "gravfarm/orb.hpp"
#include "gravfarm/strategies.hpp"
#include "gravfarm/tree.hpp"
#include "gravfarm/wire.hpp"

namespace gravfarm {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double rel_l2(const std::vector<Vec3>& a, const std::vector<Vec3>& ref) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - ref[i]).norm2();
        den += ref[i].norm2();
    }
    return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

CheckResult guard(const std::string& name, const std::function<CheckResult()>& body) {
    try {
        return body();
    } catch (const std::exception& e) {
        return {name, false, std::string("exception: ") + e.what()};
    }
}

// --- criterion 1: theta = 0 equivalence across all four modes ---------------

CheckResult check_oracle_equivalence(std::ostream& log) {
    return guard("oracle-equivalence", [&]() -> CheckResult {
        auto t0 = Clock::now();
        SimParams params;
        params.theta = 0.0;
        params.leaf_capacity = 1;
        auto bodies = generate_bodies(256, Distribution::Uniform, 11);
        auto oracle = brute_force_accels(bodies, params.eps, params.g_const);

        SelfHostedFabric fabric(2);
        std::vector<std::pair<const char*, StrategyConfig>> configs;
        StrategyConfig c;
        configs.emplace_back("sequential", c);
        c.mode = Mode::Shared;
        c.workers = 4;
        configs.emplace_back("shared", c);
        c.mode = Mode::OrbRanks;
        c.workers = 4;
        configs.emplace_back("orb_ranks", c);
        c.mode = Mode::GridRpc;
        c.fabric_endpoint = fabric.agent_address();
        configs.emplace_back("gridrpc", c);

        double worst = 0.0;
        std::string worst_mode = "-";
        for (auto& [name, config] : configs) {
            auto acc = compute_accels(bodies, params, config);
            double err = rel_l2(acc, oracle);
            log << "  theta=0 " << name << " rel L2 = " << err << "\n";
            if (err > worst) {
                worst = err;
                worst_mode = name;
            }
        }
        fabric.stop();
        double elapsed = since(t0);
        bool pass = worst <= 1e-10 && elapsed < 10.0;
        return {"oracle-equivalence",
                pass,
                "worst rel L2 " + fmt(worst) + " (" + worst_mode + ") in " + fmt(elapsed) + " s"};
    });
}

// --- criterion 2: treecode accuracy and theta monotonicity ------------------

CheckResult check_treecode_accuracy(std::ostream& log) {
    return guard("treecode-accuracy", [&]() -> CheckResult {
        SimParams params;
        params.leaf_capacity = 1;
        auto bodies = generate_bodies(512, Distribution::Uniform, 12);
        auto oracle = brute_force_accels(bodies, params.eps, params.g_const);

        Tree tree = build_tree(bodies, params.leaf_capacity);
        compute_mass_moments(tree);

        auto accels_at = [&](double theta) {
            std::vector<Vec3> acc(bodies.size());
            for (std::size_t i = 0; i < bodies.size(); ++i) {
                auto list = build_interaction_list(tree, bodies[i], theta);
                acc[i] = compute_force(bodies[i], list, params.eps, params.g_const);
            }
            return acc;
        };

        const double thetas[] = {1.0, 0.75, 0.5, 0.25};
        double prev = -1.0;
        bool monotone = true;
        for (double theta : thetas) {
            double err = rel_l2(accels_at(theta), oracle);
            log << "  theta=" << theta << " rel L2 error = " << err << "\n";
            if (prev >= 0 && err > prev) monotone = false;
            prev = err;
        }

        auto acc05 = accels_at(0.5);
        std::vector<double> per_body;
        per_body.reserve(bodies.size());
        for (std::size_t i = 0; i < bodies.size(); ++i) {
            double ref = oracle[i].norm();
            per_body.push_back(ref > 0 ? (acc05[i] - oracle[i]).norm() / ref : 0.0);
        }
        std::nth_element(per_body.begin(), per_body.begin() + per_body.size() / 2, per_body.end());
        double med = per_body[per_body.size() / 2];
        log << "  theta=0.5 median per-body error = " << med << "\n";

        bool pass = monotone && med <= 2e-2;
        return {"treecode-accuracy",
                pass,
                "median err " + fmt(med) + (monotone ? ", monotone in theta" : ", NOT monotone")};
    });
}

// --- criterion 3: momentum, orbit energy, reversibility ---------------------

CheckResult check_conservation(std::ostream& log) {
    return guard("conservation", [&]() -> CheckResult {
        auto bodies = generate_bodies(128, Distribution::Uniform, 13);
        auto acc = brute_force_accels(bodies, 0.025, 1.0);
        Vec3 net{};
        for (std::size_t i = 0; i < bodies.size(); ++i) net += bodies[i].mass * acc[i];
        double momentum = std::max({std::fabs(net.x), std::fabs(net.y), std::fabs(net.z)});
        log << "  momentum residual = " << momentum << "\n";

        // two unit masses on a circular orbit: relative acceleration 2, so
        // each body moves on radius 0.5 at speed sqrt(0.5)
        std::vector<Body> orbit(2);
        orbit[0] = {0, 1.0, {0.5, 0, 0}, {0, std::sqrt(0.5), 0}, {}};
        orbit[1] = {1, 1.0, {-0.5, 0, 0}, {0, -std::sqrt(0.5), 0}, {}};
        SimParams op;
        op.eps = 0.0;
        op.dt = 1e-3;
        AccelFn orbit_fn = [&](const std::vector<Body>& b) { return brute_force_accels(b, 0.0, 1.0); };
        auto a0 = orbit_fn(orbit);
        for (int i = 0; i < 2; ++i) orbit[i].acc = a0[i];
        double e0 = total_energy(orbit, 0.0, 1.0);
        for (int s = 0; s < 1000; ++s) orbit = step_leapfrog(orbit, op, orbit_fn);
        double drift = std::fabs((total_energy(orbit, 0.0, 1.0) - e0) / e0);
        log << "  orbit energy drift over 1000 steps = " << drift << "\n";

        // time reversal over 100 + 100 steps
        auto rev = generate_bodies(32, Distribution::Uniform, 14);
        SimParams rp;
        rp.dt = 1e-3;
        AccelFn rev_fn = [&](const std::vector<Body>& b) { return brute_force_accels(b, 0.025, 1.0); };
        auto start = rev;
        auto ra = rev_fn(rev);
        for (std::size_t i = 0; i < rev.size(); ++i) rev[i].acc = ra[i];
        for (int s = 0; s < 100; ++s) rev = step_leapfrog(rev, rp, rev_fn);
        for (Body& b : rev) b.vel = -1.0 * b.vel;
        for (int s = 0; s < 100; ++s) rev = step_leapfrog(rev, rp, rev_fn);
        double max_return = 0.0;
        for (std::size_t i = 0; i < rev.size(); ++i) {
            Vec3 d = rev[i].pos - start[i].pos;
            max_return = std::max({max_return, std::fabs(d.x), std::fabs(d.y), std::fabs(d.z)});
        }
        log << "  reversal position residual = " << max_return << "\n";

        bool pass = momentum <= 1e-12 && drift <= 1e-4 && max_return <= 1e-8;
        return {"conservation",
                pass,
                "momentum " + fmt(momentum) + ", drift " + fmt(drift) + ", reversal " +
                    fmt(max_return)};
    });
}

// --- criterion 4: orb balance, essential soundness/completeness -------------

bool check_split_balance(const OrbPartition& part, const std::vector<int>& rank_of_body,
                         std::ostream& log) {
    std::vector<std::int64_t> rank_count(part.rank_count, 0);
    for (int r : rank_of_body) rank_count[r]++;

    // ranks under each split-tree node, then per-split imbalance
    std::function<std::pair<std::int64_t, int>(std::int32_t)> walk =
        [&](std::int32_t ni) -> std::pair<std::int64_t, int> {
        const OrbNode& node = part.nodes[ni];
        if (node.axis < 0) return {rank_count[node.rank], 1};
        auto [n_low, r_low] = walk(node.low);
        auto [n_high, r_high] = walk(node.high);
        if (n_low < 0 || n_high < 0) return {-1, 0};
        if (r_low == r_high && (n_low > n_high ? n_low - n_high : n_high - n_low) > 1) {
            log << "  split imbalance " << n_low << " vs " << n_high << "\n";
            return {-1, 0};
        }
        return {n_low + n_high, r_low + r_high};
    };
    return walk(0).first >= 0;
}

struct EssentialCheck {
    bool sound = true;
    bool complete = true;
};

EssentialCheck check_essential_pair(const Tree& src_tree, const BoundingBox& dst_domain,
                                    const std::vector<Body>& dst_bodies, double theta) {
    EssentialCheck out;
    auto set = collect_essential_nodes(src_tree, dst_domain, theta);

    // index the set
    std::vector<const EssentialEntry*> summaries;
    std::vector<std::uint64_t> body_ids;
    for (const EssentialEntry& e : set.entries) {
        if (e.tag == 0x01) summaries.push_back(&e);
        else body_ids.push_back(e.body.id);
    }
    std::sort(body_ids.begin(), body_ids.end());
    auto has_body = [&](std::uint64_t id) {
        return std::binary_search(body_ids.begin(), body_ids.end(), id);
    };
    auto find_cell = [&](const EssentialEntry& e) -> std::int32_t {
        for (std::size_t ci = 0; ci < src_tree.cells.size(); ++ci) {
            const Cell& c = src_tree.cells[ci];
            if (c.com.x == e.com.x && c.com.y == e.com.y && c.com.z == e.com.z &&
                c.total_mass == e.mass && c.box.side() == e.side)
                return static_cast<std::int32_t>(ci);
        }
        return -1;
    };
    auto has_summary_for = [&](const Cell& c) {
        for (const EssentialEntry* e : summaries)
            if (e->com.x == c.com.x && e->com.y == c.com.y && e->com.z == c.com.z &&
                e->mass == c.total_mass && e->side == c.box.side())
                return true;
        return false;
    };

    // soundness: each summary passes the domain test and its parent does not
    std::vector<std::int32_t> parent(src_tree.cells.size(), -1);
    for (std::size_t ci = 0; ci < src_tree.cells.size(); ++ci) {
        const Cell& c = src_tree.cells[ci];
        for (std::int32_t k = 0; k < c.child_count; ++k)
            parent[c.first_child + k] = static_cast<std::int32_t>(ci);
    }
    for (const EssentialEntry* e : summaries) {
        double dmin = std::sqrt(dst_domain.dist2(e->com));
        if (!(e->side < theta * dmin)) out.sound = false;
        std::int32_t ci = find_cell(*e);
        if (ci < 0) {
            out.sound = false;
            continue;
        }
        if (parent[ci] >= 0) {
            const Cell& p = src_tree.cells[parent[ci]];
            double p_dmin = std::sqrt(dst_domain.dist2(p.com));
            if (p.box.side() < theta * p_dmin) out.sound = false;  // parent also accepted
        }
    }

    // completeness: everything a per-body walk accepts is covered by the set
    std::function<bool(std::int32_t)> covered = [&](std::int32_t ci) -> bool {
        const Cell& c = src_tree.cells[ci];
        if (has_summary_for(c)) return true;
        if (c.is_leaf()) {
            for (std::int32_t k = c.body_begin; k < c.body_begin + c.body_count; ++k)
                if (!has_body(src_tree.bodies[src_tree.body_order[k]].id)) return false;
            return true;
        }
        for (std::int32_t k = 0; k < c.child_count; ++k)
            if (!covered(c.first_child + k)) return false;
        return true;
    };
    for (const Body& b : dst_bodies) {
        std::vector<std::int32_t> stack = {0};
        while (!stack.empty() && out.complete) {
            std::int32_t ci = stack.back();
            stack.pop_back();
            const Cell& c = src_tree.cells[ci];
            double s = c.box.side();
            double d2 = (b.pos - c.com).norm2();
            if (s * s < theta * theta * d2 && !c.box.contains(b.pos)) {
                if (!covered(ci)) out.complete = false;
                continue;
            }
            if (c.is_leaf()) {
                for (std::int32_t k = c.body_begin; k < c.body_begin + c.body_count; ++k)
                    if (!has_body(src_tree.bodies[src_tree.body_order[k]].id)) out.complete = false;
                continue;
            }
            for (std::int32_t k = 0; k < c.child_count; ++k) stack.push_back(c.first_child + k);
        }
    }
    return out;
}

CheckResult check_orb_balance(std::ostream& log) {
    return guard("orb-balance", [&]() -> CheckResult {
        auto bodies = generate_bodies(1000, Distribution::Uniform, 15);
        auto res = orb_partition(bodies, 8);
        std::vector<int> counts(8, 0);
        for (int r : res.rank_of_body) counts[r]++;
        bool exact = std::all_of(counts.begin(), counts.end(), [](int c) { return c == 125; });
        log << "  N=1000 P=8: " << (exact ? "125 per rank" : "uneven!") << "\n";

        bool split_ok = true;
        for (int P : {3, 5, 7}) {
            auto r = orb_partition(bodies, P);
            if (!check_split_balance(r.partition, r.rank_of_body, log)) split_ok = false;
            std::vector<int> c(P, 0);
            for (int rk : r.rank_of_body) c[rk]++;
            int lo = *std::min_element(c.begin(), c.end());
            int hi = *std::max_element(c.begin(), c.end());
            if (hi - lo > 1) split_ok = false;
            log << "  N=1000 P=" << P << ": counts in [" << lo << "," << hi << "]\n";
        }

        bool sound = true, complete = true;
        const double theta = 0.5;
        for (int P : {2, 4}) {
            auto pb = generate_bodies(128, Distribution::Uniform, 16);
            auto part = orb_partition(pb, P);
            std::vector<std::vector<Body>> local(P);
            for (std::size_t i = 0; i < pb.size(); ++i) local[part.rank_of_body[i]].push_back(pb[i]);
            for (int src = 0; src < P; ++src) {
                Tree t = build_tree(local[src], 1, part.partition.root_box);
                compute_mass_moments(t);
                for (int dst = 0; dst < P; ++dst) {
                    if (dst == src) continue;
                    auto chk = check_essential_pair(t, part.partition.rank_domain[dst], local[dst],
                                                    theta);
                    sound = sound && chk.sound;
                    complete = complete && chk.complete;
                }
            }
            log << "  N=128 P=" << P << " essential sets: sound=" << sound
                << " complete=" << complete << "\n";
        }

        bool pass = exact && split_ok && sound && complete;
        return {"orb-balance", pass,
                std::string(exact ? "125/rank" : "BAD counts") + ", splits " +
                    (split_ok ? "ok" : "BAD") + ", essential " +
                    (sound && complete ? "sound+complete" : "BAD")};
    });
}

// --- criterion 5: fault tolerance on the self-hosted fabric -----------------

CheckResult check_fault_tolerance(std::ostream& log) {
    return guard("fault-tolerance", [&]() -> CheckResult {
        SimParams params;
        params.leaf_capacity = 8;
        auto bodies = generate_bodies(2048, Distribution::Uniform, 17);

        auto run = [&](bool kill_one, SchedulerStats& stats) {
            SelfHostedFabric fabric(4, 1, 0.05);
            StrategyConfig config;
            config.mode = Mode::GridRpc;
            config.fabric_endpoint = fabric.agent_address();
            config.chunk_count = 32;
            std::thread killer;
            if (kill_one)
                killer = std::thread([&] {
                    std::this_thread::sleep_for(std::chrono::milliseconds(120));
                    fabric.kill_server(1);
                });
            auto acc = compute_accels(bodies, params, config);
            if (killer.joinable()) killer.join();
            stats = fabric.agent().stats();
            fabric.stop();
            return acc;
        };

        SchedulerStats clean_stats, kill_stats;
        auto clean = run(false, clean_stats);
        auto with_kill = run(true, kill_stats);
        double err = rel_l2(with_kill, clean);
        bool identity = kill_stats.submitted == kill_stats.completed + kill_stats.permanently_failed;
        log << "  clean vs killed rel L2 = " << err << "\n";
        log << "  accounting: submitted " << kill_stats.submitted << " = completed "
            << kill_stats.completed << " + failed " << kill_stats.permanently_failed << "\n";

        bool pass = err <= 1e-12 && identity && kill_stats.permanently_failed == 0 &&
                    kill_stats.submitted == 32;
        return {"fault-tolerance",
                pass,
                "rel err " + fmt(err) + ", " + std::to_string(kill_stats.completed) + "/" +
                    std::to_string(kill_stats.submitted) + " completed after kill"};
    });
}

// --- criterion 6: force-phase share of the sequential step ------------------

CheckResult check_force_profile(std::ostream& log) {
    return guard("force-profile", [&]() -> CheckResult {
        SimParams params;  // theta 0.5, leaf capacity 1
        auto bodies = generate_bodies(10000, Distribution::Uniform, 18);
        StrategyConfig config;  // sequential

        auto acc = compute_accels(bodies, params, config);
        for (std::size_t i = 0; i < bodies.size(); ++i) bodies[i].acc = acc[i];

        std::vector<double> fractions;
        for (int s = 0; s < 3; ++s) {
            auto [next, report] = run_step(bodies, params, config);
            bodies = std::move(next);
            double frac = report.total_s > 0 ? report.force_s / report.total_s : 0.0;
            log << "  step " << s << ": force " << report.force_s << " s of " << report.total_s
                << " s (" << 100.0 * frac << "%)\n";
            fractions.push_back(frac);
        }
        std::sort(fractions.begin(), fractions.end());
        double med = fractions[fractions.size() / 2];
        bool pass = med >= 0.80;
        return {"force-profile", pass, "median force fraction " + fmt(100.0 * med) + "%"};
    });
}

// --- criterion 7: gridrpc overhead amortization ------------------------------

CheckResult check_overhead_amortization(std::ostream& log) {
    return guard("overhead-amortization", [&]() -> CheckResult {
        SimParams params;
        params.theta = 0.7;
        params.leaf_capacity = 16;
        const int ns[] = {1000, 10000, 50000};

        SelfHostedFabric fabric(4);
        std::vector<double> overhead_ratio, mode_ratio;
        for (int n : ns) {
            auto bodies = generate_bodies(n, Distribution::Uniform, 19);
            // one async call per body, the granularity the time-chart
            // analysis is about
            StrategyConfig grpc;
            grpc.mode = Mode::GridRpc;
            grpc.fabric_endpoint = fabric.agent_address();
            grpc.per_body_calls = true;
            StrategyConfig shared;
            shared.mode = Mode::Shared;
            shared.workers = 4;

            auto seed = compute_accels(bodies, params, shared);
            for (std::size_t i = 0; i < bodies.size(); ++i) bodies[i].acc = seed[i];

            std::vector<double> grpc_totals, shared_totals, overheads;
            for (int rep = 0; rep < 3; ++rep) {
                auto [b1, r1] = run_step(bodies, params, grpc);
                auto [b2, r2] = run_step(bodies, params, shared);
                grpc_totals.push_back(r1.total_s);
                shared_totals.push_back(r2.total_s);
                overheads.push_back((r1.init_s + r1.finalize_s) / r1.total_s);
            }
            auto median = [](std::vector<double> v) {
                std::sort(v.begin(), v.end());
                return v[v.size() / 2];
            };
            overhead_ratio.push_back(median(overheads));
            mode_ratio.push_back(median(grpc_totals) / median(shared_totals));
            log << "  n=" << n << ": (init+finalize)/total = " << overhead_ratio.back()
                << ", gridrpc/shared = " << mode_ratio.back() << "\n";
        }

        bool overhead_decreasing =
            overhead_ratio[0] > overhead_ratio[1] && overhead_ratio[1] > overhead_ratio[2];
        bool mode_decreasing = mode_ratio[0] >= mode_ratio[1] && mode_ratio[1] >= mode_ratio[2];
        fabric.stop();

        bool pass = overhead_decreasing && mode_decreasing;
        return {"overhead-amortization",
                pass,
                std::string("overhead ") + (overhead_decreasing ? "strictly decreasing" : "NOT decreasing") +
                    ", gridrpc/shared " + (mode_decreasing ? "non-increasing" : "NOT monotone")};
    });
}

// --- criterion 8: wire protocol ----------------------------------------------

CheckResult check_wire_protocol(std::ostream& log) {
    return guard("wire-protocol", [&]() -> CheckResult {
        const std::uint8_t expected[] = {0x4E, 0x53, 0x01, 0x03, 0x00, 0x00, 0x00, 0x00};
        auto hb = wire::encode_message(wire::kHeartbeat, {});
        bool frame_ok = hb.size() == 8 && std::equal(hb.begin(), hb.end(), expected);
        log << "  heartbeat frame " << (frame_ok ? "matches" : "MISMATCH") << "\n";

        std::mt19937_64 gen(20);
        const std::uint8_t types[] = {wire::kRegister,   wire::kRegisterAck, wire::kHeartbeat,
                                      wire::kTaskSubmit, wire::kTaskAssign,  wire::kTaskResult,
                                      wire::kTaskError,  wire::kSessionOpen, wire::kSessionClose,
                                      wire::kServerList};
        int failures = 0;
        const int cases = 10000;
        for (int i = 0; i < cases; ++i) {
            std::uint8_t type = types[gen() % std::size(types)];
            std::vector<std::uint8_t> payload(gen() % 1024);
            for (auto& b : payload) b = static_cast<std::uint8_t>(gen());
            auto frame = wire::encode_message(type, payload);
            auto [t2, p2] = wire::decode_message(frame);
            if (t2 != type || p2 != payload) ++failures;
        }
        log << "  " << cases << " round-trips, " << failures << " failures\n";

        bool pass = frame_ok && failures == 0;
        return {"wire-protocol", pass,
                std::to_string(cases) + " round-trips clean, heartbeat frame " +
                    (frame_ok ? "exact" : "WRONG")};
    });
}

// --- criterion 9: interaction count vs subdomain count ----------------------

CheckResult check_interaction_count(std::ostream& log) {
    return guard("interaction-count", [&]() -> CheckResult {
        SimParams params;
        params.leaf_capacity = 8;
        // clustered data, where domain decomposition actually has to work
        auto bodies = generate_bodies(4096, Distribution::Plummer, 21);

        StrategyConfig seq;
        StepReport seq_report;
        compute_accels(bodies, params, seq, &seq_report);

        bool monotone = true;
        std::uint64_t prev = 0;
        std::uint64_t p1_count = 0;
        for (int P : {1, 2, 4, 8}) {
            StrategyConfig orb;
            orb.mode = Mode::OrbRanks;
            orb.workers = P;
            StepReport report;
            compute_accels(bodies, params, orb, &report);
            log << "  P=" << P << ": interactions = " << report.interactions << "\n";
            if (P == 1) p1_count = report.interactions;
            if (prev > 0 && report.interactions < prev) monotone = false;
            prev = report.interactions;
        }
        log << "  sequential interactions = " << seq_report.interactions << "\n";

        bool pass = monotone && p1_count == seq_report.interactions;
        return {"interaction-count",
                pass,
                std::string(monotone ? "non-decreasing in P" : "NOT monotone") + ", P=1 " +
                    (p1_count == seq_report.interactions ? "equals" : "differs from") +
                    " sequential"};
    });
}

}  // namespace

std::vector<CheckResult> run_verification(const VerifyOptions& opts, std::ostream& log) {
    std::vector<CheckResult> results;
    results.push_back(check_oracle_equivalence(log));
    results.push_back(check_treecode_accuracy(log));
    results.push_back(check_conservation(log));
    results.push_back(check_orb_balance(log));
    if (!opts.skip_fabric) results.push_back(check_fault_tolerance(log));
    results.push_back(check_force_profile(log));
    if (!opts.skip_fabric) results.push_back(check_overhead_amortization(log));
    results.push_back(check_wire_protocol(log));
    results.push_back(check_interaction_count(log));
    return results;
}

bool report_verification(const std::vector<CheckResult>& results, std::ostream& out) {
    bool all = true;
    for (const CheckResult& r : results) {
        out << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  (" << r.detail << ")\n";
        all = all && r.pass;
    }
    out << (all ? "all criteria passed" : "CRITERIA FAILED") << "\n";
    return all;
}

}  // namespace gravfarm
