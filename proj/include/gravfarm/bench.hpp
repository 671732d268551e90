#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gravfarm/strategies.hpp"
#include "gravfarm/types.hpp"

namespace gravfarm {

enum class Distribution { Uniform, Plummer };

const char* distribution_name(Distribution d);
bool parse_distribution(const std::string& s, Distribution& out);

// Deterministic initial conditions. Uniform: positions in the unit cube,
// mass 1/n, zero velocity. Plummer: standard sphere with virial velocities,
// total mass 1, recentred so the centre of mass and net momentum vanish.
std::vector<Body> generate_bodies(int n, Distribution dist, std::uint64_t seed);

struct BenchSpec {
    std::vector<int> body_counts = {1000, 10000, 50000};
    std::vector<int> worker_counts = {1, 2, 4, 8};
    std::vector<Mode> modes = {Mode::Sequential, Mode::Shared, Mode::OrbRanks};
    int steps = 5;
    int reps = 3;
    std::uint64_t seed = 1;
    Distribution dist = Distribution::Uniform;
    SimParams params;
    int rank_threads = 1;  // second parallel level inside each orb rank
    int self_host = 0;        // launch agent + K local servers for gridrpc
    std::string fabric;       // or point gridrpc at an external agent
    int energy_max_n = 2048;  // O(N^2) energy diagnostics only below this
    std::string out = "results.csv";
};

// The large benchmark matrix; needs a capable machine.
void apply_paper_matrix(BenchSpec& spec);

// Flat key = value file, keys matching the CLI's long flags.
BenchSpec parse_spec_file(const std::string& path);

extern const char* const kCsvHeader;

struct CsvRow {
    std::string run_id;
    std::string mode;
    int n = 0;
    int workers = 0;
    std::string step;  // step index, or "summary"
    StepReport report;
    double energy_drift = 0.0;
    bool has_energy = false;
    std::string status = "ok";
};

std::string format_csv_row(const CsvRow& row);

// One cell per (mode, n, workers); per step per repetition one CSV row plus
// a median summary row per cell. Failures are recorded in the status column
// and the run continues.
void run_bench(const BenchSpec& spec, std::ostream& csv, std::ostream* log);

// Self-contained gnuplot script: one chart per body count, execution time
// against workers, one series per mode, data inlined from the CSV medians.
void emit_plot_script(const std::string& csv_path, const std::string& script_path);

}  // namespace gravfarm
