#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gravfarm/tree.hpp"
#include "gravfarm/types.hpp"

namespace gravfarm {

enum class Mode { Sequential, Shared, OrbRanks, GridRpc };

const char* mode_name(Mode m);
bool parse_mode(const std::string& s, Mode& out);

struct StrategyConfig {
    Mode mode = Mode::Sequential;
    int workers = 1;       // threads (shared) or ranks (orb_ranks); unused by gridrpc
    int rank_threads = 1;  // shared pool inside each orb rank (the hybrid layout)
    int chunk_count = 0;   // gridrpc; 0 means 4 x total server slots
    bool per_body_calls = false;  // gridrpc: one call per body, for overhead runs
    std::string fabric_endpoint;  // gridrpc agent address
};

struct StepReport {
    double tree_s = 0.0;
    double list_s = 0.0;
    double force_s = 0.0;
    double update_s = 0.0;
    double init_s = 0.0;
    double finalize_s = 0.0;
    double total_s = 0.0;
    std::uint64_t interactions = 0;
    std::vector<std::uint64_t> unit_body_counts;  // per worker / rank / chunk

    StepReport& operator+=(const StepReport& o);
};

// Strategy-dispatched force evaluation at the given positions: tree build,
// per-body lists, force loop. Fills the report's tree/list/force phases.
std::vector<Vec3> compute_accels(const std::vector<Body>& bodies, const SimParams& params,
                                 const StrategyConfig& config, StepReport* report = nullptr);

// One KDK step under the chosen strategy; input bodies must carry
// accelerations for their current positions.
std::pair<std::vector<Body>, StepReport> run_step(const std::vector<Body>& bodies,
                                                  const SimParams& params,
                                                  const StrategyConfig& config);

struct SimulationResult {
    std::vector<Body> bodies;
    std::vector<StepReport> steps;
    StepReport totals;
    std::vector<double> energy_samples;  // filled when energy_every > 0
};

SimulationResult run_simulation(const std::vector<Body>& bodies, const SimParams& params,
                                const StrategyConfig& config, int steps, int energy_every = 0);

}  // namespace gravfarm
