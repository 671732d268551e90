#include <doctest.h>

#include <cmath>
#include <numeric>

#include "gravfarm/bench.hpp"
#include "gravfarm/fabric.hpp"
#include "gravfarm/strategies.hpp"
#include "gravfarm/tree.hpp"

using namespace gravfarm;

namespace {

double rel_l2(const std::vector<Vec3>& a, const std::vector<Vec3>& ref) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - ref[i]).norm2();
        den += ref[i].norm2();
    }
    return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("sequential and shared with one worker are bit-identical") {
    auto bodies = generate_bodies(128, Distribution::Uniform, 1);
    SimParams params;
    StrategyConfig seq;
    StrategyConfig sh;
    sh.mode = Mode::Shared;
    sh.workers = 1;
    auto a = compute_accels(bodies, params, seq);
    auto b = compute_accels(bodies, params, sh);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].x == b[i].x);
        CHECK(a[i].y == b[i].y);
        CHECK(a[i].z == b[i].z);
    }
}

TEST_CASE("shared accelerations are invariant across worker counts") {
    auto bodies = generate_bodies(256, Distribution::Uniform, 2);
    SimParams params;
    StrategyConfig base;
    base.mode = Mode::Shared;
    base.workers = 1;
    auto ref = compute_accels(bodies, params, base);
    for (int w : {2, 4, 8}) {
        StrategyConfig c = base;
        c.workers = w;
        auto acc = compute_accels(bodies, params, c);
        CHECK(rel_l2(acc, ref) <= 1e-12);
    }
}

TEST_CASE("all four modes agree with the oracle at theta = 0") {
    auto bodies = generate_bodies(256, Distribution::Uniform, 3);
    SimParams params;
    params.theta = 0.0;
    params.leaf_capacity = 1;
    auto oracle = brute_force_accels(bodies, params.eps, params.g_const);

    SelfHostedFabric fabric(2);
    StrategyConfig c;
    CHECK(rel_l2(compute_accels(bodies, params, c), oracle) <= 1e-10);
    c.mode = Mode::Shared;
    c.workers = 4;
    CHECK(rel_l2(compute_accels(bodies, params, c), oracle) <= 1e-10);
    c.mode = Mode::OrbRanks;
    c.workers = 4;
    CHECK(rel_l2(compute_accels(bodies, params, c), oracle) <= 1e-10);
    c.mode = Mode::GridRpc;
    c.fabric_endpoint = fabric.agent_address();
    CHECK(rel_l2(compute_accels(bodies, params, c), oracle) <= 1e-10);
    fabric.stop();
}

TEST_CASE("shared and gridrpc reproduce sequential accelerations at theta = 0.5") {
    auto bodies = generate_bodies(256, Distribution::Uniform, 4);
    SimParams params;
    StrategyConfig seq;
    auto ref = compute_accels(bodies, params, seq);

    StrategyConfig sh;
    sh.mode = Mode::Shared;
    sh.workers = 4;
    CHECK(rel_l2(compute_accels(bodies, params, sh), ref) <= 1e-12);

    StepReport seq_report;
    compute_accels(bodies, params, seq, &seq_report);

    SelfHostedFabric fabric(2);
    StrategyConfig g;
    g.mode = Mode::GridRpc;
    g.fabric_endpoint = fabric.agent_address();
    StepReport g_report;
    CHECK(rel_l2(compute_accels(bodies, params, g, &g_report), ref) <= 1e-12);
    CHECK(g_report.interactions == seq_report.interactions);  // same tree, same lists
    fabric.stop();
}

TEST_CASE("orb_ranks with rank_threads reproduces single-threaded ranks") {
    auto bodies = generate_bodies(256, Distribution::Uniform, 5);
    SimParams params;
    StrategyConfig orb;
    orb.mode = Mode::OrbRanks;
    orb.workers = 4;
    auto ref = compute_accels(bodies, params, orb);
    orb.rank_threads = 4;  // the hybrid two-level layout
    auto hybrid = compute_accels(bodies, params, orb);
    CHECK(rel_l2(hybrid, ref) <= 1e-12);
}

TEST_CASE("step reports add up") {
    auto bodies = generate_bodies(512, Distribution::Uniform, 6);
    SimParams params;

    StrategyConfig seq;
    StepReport seq_report;
    compute_accels(bodies, params, seq, &seq_report);
    CHECK(std::accumulate(seq_report.unit_body_counts.begin(), seq_report.unit_body_counts.end(),
                          std::uint64_t{0}) == bodies.size());

    StrategyConfig sh;
    sh.mode = Mode::Shared;
    sh.workers = 4;
    StepReport sh_report;
    compute_accels(bodies, params, sh, &sh_report);
    CHECK(sh_report.interactions == seq_report.interactions);
    CHECK(std::accumulate(sh_report.unit_body_counts.begin(), sh_report.unit_body_counts.end(),
                          std::uint64_t{0}) == bodies.size());

    StrategyConfig orb;
    orb.mode = Mode::OrbRanks;
    orb.workers = 4;
    StepReport orb_report;
    compute_accels(bodies, params, orb, &orb_report);
    CHECK(orb_report.interactions >= seq_report.interactions);
    CHECK(std::accumulate(orb_report.unit_body_counts.begin(), orb_report.unit_body_counts.end(),
                          std::uint64_t{0}) == bodies.size());
}

TEST_CASE("orb_ranks with one rank equals sequential exactly") {
    auto bodies = generate_bodies(200, Distribution::Uniform, 7);
    SimParams params;
    StrategyConfig seq;
    StepReport seq_report;
    auto a = compute_accels(bodies, params, seq, &seq_report);

    StrategyConfig orb;
    orb.mode = Mode::OrbRanks;
    orb.workers = 1;
    StepReport orb_report;
    auto b = compute_accels(bodies, params, orb, &orb_report);

    CHECK(orb_report.interactions == seq_report.interactions);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].x == b[i].x);
        CHECK(a[i].z == b[i].z);
    }
}

TEST_CASE("run_step advances the system like step_leapfrog") {
    auto bodies = generate_bodies(64, Distribution::Uniform, 8);
    SimParams params;
    StrategyConfig seq;
    auto seed = compute_accels(bodies, params, seq);
    for (std::size_t i = 0; i < bodies.size(); ++i) bodies[i].acc = seed[i];

    auto [stepped, report] = run_step(bodies, params, seq);
    REQUIRE(stepped.size() == bodies.size());
    CHECK(report.total_s > 0);

    AccelFn fn = [&](const std::vector<Body>& bs) { return compute_accels(bs, params, seq); };
    auto expected = step_leapfrog(bodies, params, fn);
    for (std::size_t i = 0; i < bodies.size(); ++i) {
        CHECK(stepped[i].pos.x == expected[i].pos.x);
        CHECK(stepped[i].vel.y == expected[i].vel.y);
        CHECK(stepped[i].acc.z == expected[i].acc.z);
    }
}

TEST_CASE("run_simulation is deterministic for the reference path") {
    auto bodies = generate_bodies(64, Distribution::Uniform, 9);
    SimParams params;
    StrategyConfig seq;
    auto r1 = run_simulation(bodies, params, seq, 5);
    auto r2 = run_simulation(bodies, params, seq, 5);
    REQUIRE(r1.bodies.size() == r2.bodies.size());
    for (std::size_t i = 0; i < r1.bodies.size(); ++i) {
        CHECK(r1.bodies[i].pos.x == r2.bodies[i].pos.x);
        CHECK(r1.bodies[i].vel.z == r2.bodies[i].vel.z);
    }
    CHECK(r1.steps.size() == 5);
}

TEST_CASE("run_simulation conserves energy on the circular orbit in every mode") {
    std::vector<Body> orbit(2);
    orbit[0] = {0, 1.0, {0.5, 0, 0}, {0, std::sqrt(0.5), 0}, {}};
    orbit[1] = {1, 1.0, {-0.5, 0, 0}, {0, -std::sqrt(0.5), 0}, {}};
    SimParams params;
    params.theta = 0.0;  // two bodies: exact pair force
    params.eps = 0.0;
    params.dt = 1e-3;
    params.leaf_capacity = 1;

    for (Mode mode : {Mode::Sequential, Mode::Shared, Mode::OrbRanks}) {
        StrategyConfig c;
        c.mode = mode;
        c.workers = mode == Mode::Sequential ? 1 : 2;
        double e0 = total_energy(orbit, params.eps, params.g_const);
        auto sim = run_simulation(orbit, params, c, 1000);
        double e1 = total_energy(sim.bodies, params.eps, params.g_const);
        CHECK(std::fabs((e1 - e0) / e0) <= 1e-4);
    }
}
