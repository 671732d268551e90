#include "gravfarm/strategies.hpp"

#include <algorithm>
#include <chrono>
#include <mutex>
#include <thread>

#include "gravfarm/error.hpp"
#include "gravfarm/fabric.hpp"
#include "gravfarm/orb.hpp"

namespace gravfarm {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Contiguous block partition: unit w covers [bounds[w], bounds[w+1]).
std::vector<std::size_t> block_bounds(std::size_t n, int units) {
    std::vector<std::size_t> b(units + 1);
    for (int w = 0; w <= units; ++w) b[w] = n * static_cast<std::size_t>(w) / units;
    return b;
}

// Per-body force evaluation over [begin, end): walk the tree into a scratch
// list, then sum it. Writes accelerations into their global slots; returns
// the interaction count. Pure reads on a frozen tree.
//
// The walk and the sum together are the treecode's force calculation, so
// in-process strategies book them as one force phase; only gridrpc, which
// ships lists to remote servers, has a standalone list phase.
std::uint64_t walk_and_force(const Tree& tree, const std::vector<Body>& bodies, std::size_t begin,
                             std::size_t end, const SimParams& params, std::vector<Vec3>& acc,
                             const std::vector<std::size_t>* global_index = nullptr) {
    std::uint64_t interactions = 0;
    InteractionList scratch;
    for (std::size_t i = begin; i < end; ++i) {
        build_interaction_list(tree, bodies[i], params.theta, scratch);
        acc[global_index ? (*global_index)[i] : i] =
            compute_force(bodies[i], scratch, params.eps, params.g_const);
        interactions += scratch.size();
    }
    return interactions;
}

std::vector<Vec3> accels_shared(const std::vector<Body>& bodies, const SimParams& params,
                                int workers, StepReport& report) {
    auto t0 = Clock::now();
    Tree tree = build_tree(bodies, params.leaf_capacity);
    compute_mass_moments(tree);
    report.tree_s += since(t0);

    const std::size_t n = bodies.size();
    std::vector<Vec3> acc(n);
    workers = std::max(1, std::min<int>(workers, static_cast<int>(n)));
    auto bounds = block_bounds(n, workers);
    std::vector<std::uint64_t> counts(workers, 0);

    auto t1 = Clock::now();
    if (workers == 1) {
        counts[0] = walk_and_force(tree, bodies, 0, n, params, acc);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                counts[w] = walk_and_force(tree, bodies, bounds[w], bounds[w + 1], params, acc);
            });
        for (auto& t : pool) t.join();
    }
    report.force_s += since(t1);

    for (int w = 0; w < workers; ++w) {
        report.interactions += counts[w];
        report.unit_body_counts.push_back(bounds[w + 1] - bounds[w]);
    }
    return acc;
}

std::vector<Vec3> accels_orb(const std::vector<Body>& bodies, const SimParams& params, int ranks,
                             int rank_threads, StepReport& report) {
    const std::size_t n = bodies.size();
    auto t0 = Clock::now();
    OrbResult orb = orb_partition(bodies, ranks);

    std::vector<std::vector<Body>> local(ranks);
    std::vector<std::vector<std::size_t>> global_index(ranks);
    for (std::size_t i = 0; i < n; ++i) {
        int r = orb.rank_of_body[i];
        local[r].push_back(bodies[i]);
        global_index[r].push_back(i);
    }

    // Local trees share the global root box so foreign data always fits and
    // cell geometry matches the sequential tree.
    const BoundingBox& root = orb.partition.root_box;
    std::vector<Tree> trees(ranks);
    std::vector<std::mutex> inbox_mu(ranks);
    std::vector<std::vector<std::vector<std::uint8_t>>> inbox(ranks);

    auto per_rank = [&](auto&& fn) {
        if (ranks == 1) {
            fn(0);
            return;
        }
        std::vector<std::thread> pool;
        pool.reserve(ranks);
        for (int r = 0; r < ranks; ++r) pool.emplace_back([&fn, r] { fn(r); });
        for (auto& t : pool) t.join();
    };

    per_rank([&](int r) {
        trees[r] = build_tree(local[r], params.leaf_capacity, root);
        compute_mass_moments(trees[r]);
    });

    // Collect and exchange essential nodes through byte-encoded channels.
    per_rank([&](int src) {
        for (int dst = 0; dst < ranks; ++dst) {
            if (dst == src) continue;
            EssentialNodeSet set = collect_essential_nodes(
                trees[src], orb.partition.rank_domain[dst], params.theta, src, dst);
            auto bytes = encode_essential_set(set);
            std::lock_guard lock(inbox_mu[dst]);
            inbox[dst].push_back(std::move(bytes));
        }
    });

    per_rank([&](int dst) {
        std::vector<EssentialNodeSet> sets;
        sets.reserve(inbox[dst].size());
        for (const auto& bytes : inbox[dst]) sets.push_back(decode_essential_set(bytes));
        // arrival order is racy; merge in source order for reproducibility
        std::sort(sets.begin(), sets.end(),
                  [](const EssentialNodeSet& a, const EssentialNodeSet& b) {
                      return a.source_rank < b.source_rank;
                  });
        merge_essential(trees[dst], sets);
    });
    report.tree_s += since(t0);

    std::vector<Vec3> acc(n);
    std::vector<std::uint64_t> counts(ranks, 0);
    auto t1 = Clock::now();
    per_rank([&](int r) {
        const std::size_t ln = local[r].size();
        int threads = std::max(1, std::min<int>(rank_threads, static_cast<int>(ln)));
        if (threads == 1) {
            counts[r] = walk_and_force(trees[r], local[r], 0, ln, params, acc, &global_index[r]);
            return;
        }
        // second parallel level inside the rank
        auto bounds = block_bounds(ln, threads);
        std::vector<std::uint64_t> sub(threads, 0);
        std::vector<std::thread> pool;
        for (int w = 0; w < threads; ++w)
            pool.emplace_back([&, w] {
                sub[w] = walk_and_force(trees[r], local[r], bounds[w], bounds[w + 1], params, acc,
                                        &global_index[r]);
            });
        for (auto& t : pool) t.join();
        for (std::uint64_t s : sub) counts[r] += s;
    });
    report.force_s += since(t1);

    for (int r = 0; r < ranks; ++r) {
        report.interactions += counts[r];
        report.unit_body_counts.push_back(local[r].size());
    }
    return acc;
}

std::vector<Vec3> accels_gridrpc(const std::vector<Body>& bodies, const SimParams& params,
                                 const StrategyConfig& config, StepReport& report) {
    if (config.fabric_endpoint.empty())
        fail(Err::ConnectionFailed, "gridrpc mode needs a fabric endpoint");

    ClientSession session;
    session.initialize(config.fabric_endpoint);
    FunctionHandle handle = session.handle_default("ComputeForces");

    auto t0 = Clock::now();
    Tree tree = build_tree(bodies, params.leaf_capacity);
    compute_mass_moments(tree);
    report.tree_s += since(t0);

    const std::size_t n = bodies.size();
    int chunks;
    if (config.per_body_calls) {
        chunks = static_cast<int>(n);
    } else if (config.chunk_count > 0) {
        chunks = config.chunk_count;
    } else {
        int slots = 0;
        for (const ServerRecord& rec : fabric_server_list(config.fabric_endpoint))
            if (rec.alive) slots += rec.capacity;
        chunks = 4 * std::max(1, slots);
    }
    chunks = std::max(1, std::min<int>(chunks, static_cast<int>(n)));

    auto bounds = block_bounds(n, chunks);
    std::vector<std::uint64_t> request_of_chunk(chunks);
    double list_seconds = 0.0;

    auto t_work = Clock::now();
    {
        TaskChunk chunk;
        chunk.eps = params.eps;
        chunk.g_const = params.g_const;
        chunk.dt = params.dt;
        for (int c = 0; c < chunks; ++c) {
            auto tl = Clock::now();
            chunk.bodies.assign(bodies.begin() + bounds[c], bodies.begin() + bounds[c + 1]);
            chunk.lists.resize(chunk.bodies.size());
            for (std::size_t i = 0; i < chunk.bodies.size(); ++i) {
                build_interaction_list(tree, chunk.bodies[i], params.theta, chunk.lists[i]);
                report.interactions += chunk.lists[i].size();
            }
            list_seconds += since(tl);
            request_of_chunk[c] = session.call_async(handle, chunk);
            report.unit_body_counts.push_back(chunk.bodies.size());
        }
    }
    auto results = session.wait_all();
    double work_wall = since(t_work);
    report.list_s += list_seconds;
    report.force_s += work_wall - list_seconds;

    session.handle_destruct(handle);
    session.finalize();
    SessionTimes times = session.times();
    report.init_s += times.init_s;
    report.finalize_s += times.finalize_s;

    std::vector<Vec3> acc(n);
    for (int c = 0; c < chunks; ++c) {
        auto it = results.find(request_of_chunk[c]);
        if (it == results.end()) fail(Err::ConnectionFailed, "missing result for chunk");
        const CallResult& res = it->second;
        if (!res.ok) fail(res.error, "remote force task failed");
        if (res.accels.size() != bounds[c + 1] - bounds[c])
            fail(Err::MalformedTask, "result length mismatch");
        std::copy(res.accels.begin(), res.accels.end(), acc.begin() + bounds[c]);
    }
    return acc;
}

}  // namespace

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::Sequential: return "sequential";
        case Mode::Shared: return "shared";
        case Mode::OrbRanks: return "orb_ranks";
        case Mode::GridRpc: return "gridrpc";
    }
    return "?";
}

bool parse_mode(const std::string& s, Mode& out) {
    if (s == "sequential") out = Mode::Sequential;
    else if (s == "shared") out = Mode::Shared;
    else if (s == "orb_ranks") out = Mode::OrbRanks;
    else if (s == "gridrpc") out = Mode::GridRpc;
    else return false;
    return true;
}

StepReport& StepReport::operator+=(const StepReport& o) {
    tree_s += o.tree_s;
    list_s += o.list_s;
    force_s += o.force_s;
    update_s += o.update_s;
    init_s += o.init_s;
    finalize_s += o.finalize_s;
    total_s += o.total_s;
    interactions += o.interactions;
    if (unit_body_counts.size() < o.unit_body_counts.size())
        unit_body_counts.resize(o.unit_body_counts.size(), 0);
    for (std::size_t i = 0; i < o.unit_body_counts.size(); ++i)
        unit_body_counts[i] += o.unit_body_counts[i];
    return *this;
}

std::vector<Vec3> compute_accels(const std::vector<Body>& bodies, const SimParams& params,
                                 const StrategyConfig& config, StepReport* report) {
    if (bodies.empty()) fail(Err::EmptyInput, "no bodies");
    StepReport local;
    StepReport& rep = report ? *report : local;
    switch (config.mode) {
        case Mode::Sequential: return accels_shared(bodies, params, 1, rep);
        case Mode::Shared: return accels_shared(bodies, params, config.workers, rep);
        case Mode::OrbRanks: return accels_orb(bodies, params, config.workers, config.rank_threads, rep);
        case Mode::GridRpc: return accels_gridrpc(bodies, params, config, rep);
    }
    fail(Err::InvalidInput, "unknown mode");
}

std::pair<std::vector<Body>, StepReport> run_step(const std::vector<Body>& bodies,
                                                  const SimParams& params,
                                                  const StrategyConfig& config) {
    auto step_start = Clock::now();
    StepReport report;
    std::vector<Body> out = bodies;
    const double half_dt = 0.5 * params.dt;

    auto u0 = Clock::now();
    for (Body& b : out) {
        b.vel += half_dt * b.acc;
        b.pos += params.dt * b.vel;
    }
    report.update_s += since(u0);

    std::vector<Vec3> acc = compute_accels(out, params, config, &report);

    auto u1 = Clock::now();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].acc = acc[i];
        out[i].vel += half_dt * acc[i];
    }
    report.update_s += since(u1);
    report.total_s = since(step_start);
    return {std::move(out), report};
}

SimulationResult run_simulation(const std::vector<Body>& bodies, const SimParams& params,
                                const StrategyConfig& config, int steps, int energy_every) {
    if (steps < 1) fail(Err::InvalidInput, "steps must be >= 1");
    SimulationResult result;
    result.bodies = bodies;

    // Seed accelerations for the first kick.
    std::vector<Vec3> acc0 = compute_accels(result.bodies, params, config);
    for (std::size_t i = 0; i < result.bodies.size(); ++i) result.bodies[i].acc = acc0[i];

    if (energy_every > 0)
        result.energy_samples.push_back(total_energy(result.bodies, params.eps, params.g_const));

    for (int s = 0; s < steps; ++s) {
        auto [next, report] = run_step(result.bodies, params, config);
        result.bodies = std::move(next);
        result.totals += report;
        result.steps.push_back(std::move(report));
        if (energy_every > 0 && (s + 1) % energy_every == 0)
            result.energy_samples.push_back(total_energy(result.bodies, params.eps, params.g_const));
    }
    return result;
}

}  // namespace gravfarm
