#include "gravfarm/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "gravfarm/error.hpp"
#include "gravfarm/fabric.hpp"
#include "gravfarm/tree.hpp"

namespace gravfarm {

namespace {

// mt19937_64 output mapped to [0,1) by hand: uniform_real_distribution is
// implementation-defined, and datasets must be identical everywhere.
struct Rng {
    std::mt19937_64 gen;
    explicit Rng(std::uint64_t seed) : gen(seed) {}
    double uniform() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }
};

std::vector<Body> uniform_cube(int n, Rng& rng) {
    std::vector<Body> bodies(n);
    for (int i = 0; i < n; ++i) {
        Body& b = bodies[i];
        b.id = static_cast<std::uint64_t>(i);
        b.mass = 1.0 / n;
        b.pos = {rng.uniform(), rng.uniform(), rng.uniform()};
    }
    return bodies;
}

Vec3 isotropic(Rng& rng, double radius) {
    double z = 2.0 * rng.uniform() - 1.0;
    double phi = 2.0 * M_PI * rng.uniform();
    double s = std::sqrt(std::fmax(0.0, 1.0 - z * z));
    return {radius * s * std::cos(phi), radius * s * std::sin(phi), radius * z};
}

// Classic rejection recipe for the Plummer sphere in structural units,
// rescaled to standard N-body units. Radii are truncated at 16 scale
// lengths to keep the far tail off the tree.
std::vector<Body> plummer_sphere(int n, Rng& rng) {
    std::vector<Body> bodies(n);
    const double scale = 3.0 * M_PI / 16.0;
    for (int i = 0; i < n; ++i) {
        double r;
        do {
            double u = rng.uniform();
            if (u <= 0.0) continue;
            r = 1.0 / std::sqrt(std::pow(u, -2.0 / 3.0) - 1.0);
        } while (!(r <= 16.0));

        double q, bound;
        do {
            q = rng.uniform();
            bound = 0.1 * rng.uniform();
        } while (bound > q * q * std::pow(1.0 - q * q, 3.5));
        double v_escape = M_SQRT2 * std::pow(1.0 + r * r, -0.25);

        Body& b = bodies[i];
        b.id = static_cast<std::uint64_t>(i);
        b.mass = 1.0 / n;
        b.pos = isotropic(rng, r * scale);
        b.vel = isotropic(rng, q * v_escape / std::sqrt(scale));
    }

    // recentre position and momentum
    Vec3 com{}, mom{};
    for (const Body& b : bodies) {
        com += b.mass * b.pos;
        mom += b.mass * b.vel;
    }
    for (Body& b : bodies) {
        b.pos -= com;        // total mass is 1
        b.vel -= mom;
    }
    return bodies;
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(9);
    os << v;
    return os.str();
}

}  // namespace

const char* distribution_name(Distribution d) {
    return d == Distribution::Uniform ? "uniform" : "plummer";
}

bool parse_distribution(const std::string& s, Distribution& out) {
    if (s == "uniform") out = Distribution::Uniform;
    else if (s == "plummer") out = Distribution::Plummer;
    else return false;
    return true;
}

std::vector<Body> generate_bodies(int n, Distribution dist, std::uint64_t seed) {
    if (n < 1) fail(Err::InvalidInput, "n must be >= 1");
    Rng rng(seed);
    return dist == Distribution::Uniform ? uniform_cube(n, rng) : plummer_sphere(n, rng);
}

void apply_paper_matrix(BenchSpec& spec) {
    spec.body_counts = {10000, 50000, 100000};
    spec.worker_counts = {1, 2, 4, 8, 16, 24};
}

BenchSpec parse_spec_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(Err::InvalidInput, "cannot open spec file " + path);
    BenchSpec spec;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            fail(Err::InvalidInput, "spec line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key == "n") {
            spec.body_counts.clear();
            for (const auto& s : split_list(value)) spec.body_counts.push_back(std::stoi(s));
        } else if (key == "workers") {
            spec.worker_counts.clear();
            for (const auto& s : split_list(value)) spec.worker_counts.push_back(std::stoi(s));
        } else if (key == "modes") {
            spec.modes.clear();
            for (const auto& s : split_list(value)) {
                Mode m;
                if (!parse_mode(s, m)) fail(Err::InvalidInput, "unknown mode " + s);
                spec.modes.push_back(m);
            }
        } else if (key == "steps") spec.steps = std::stoi(value);
        else if (key == "reps") spec.reps = std::stoi(value);
        else if (key == "seed") spec.seed = std::stoull(value);
        else if (key == "dist") {
            if (!parse_distribution(value, spec.dist))
                fail(Err::InvalidInput, "unknown distribution " + value);
        } else if (key == "theta") spec.params.theta = std::stod(value);
        else if (key == "eps") spec.params.eps = std::stod(value);
        else if (key == "dt") spec.params.dt = std::stod(value);
        else if (key == "leaf-cap") spec.params.leaf_capacity = std::stoi(value);
        else if (key == "rank-threads") spec.rank_threads = std::stoi(value);
        else if (key == "self-host") spec.self_host = std::stoi(value);
        else if (key == "fabric") spec.fabric = value;
        else if (key == "energy-max-n") spec.energy_max_n = std::stoi(value);
        else if (key == "out") spec.out = value;
        else if (key == "paper-matrix") {
            if (value == "true" || value == "1") apply_paper_matrix(spec);
        } else {
            fail(Err::InvalidInput, "unknown spec key " + key);
        }
    }
    return spec;
}

const char* const kCsvHeader =
    "run_id,mode,n,workers,step,tree_s,list_s,force_s,update_s,init_s,finalize_s,total_s,"
    "interactions,energy_drift,status";

std::string format_csv_row(const CsvRow& row) {
    std::ostringstream os;
    os << row.run_id << ',' << row.mode << ',' << row.n << ',' << row.workers << ',' << row.step
       << ',' << fmt(row.report.tree_s) << ',' << fmt(row.report.list_s) << ','
       << fmt(row.report.force_s) << ',' << fmt(row.report.update_s) << ','
       << fmt(row.report.init_s) << ',' << fmt(row.report.finalize_s) << ','
       << fmt(row.report.total_s) << ',' << row.report.interactions << ','
       << (row.has_energy ? fmt(row.energy_drift) : "nan") << ',' << row.status;
    return os.str();
}

void run_bench(const BenchSpec& spec, std::ostream& csv, std::ostream* log) {
    if (spec.steps < 1 || spec.reps < 1) fail(Err::InvalidInput, "steps and reps must be >= 1");

    std::unique_ptr<SelfHostedFabric> fabric;
    std::string endpoint = spec.fabric;
    bool wants_gridrpc =
        std::find(spec.modes.begin(), spec.modes.end(), Mode::GridRpc) != spec.modes.end();
    if (wants_gridrpc && endpoint.empty() && spec.self_host > 0) {
        fabric = std::make_unique<SelfHostedFabric>(spec.self_host);
        endpoint = fabric->agent_address();
        if (log) *log << "self-hosted fabric at " << endpoint << " with " << spec.self_host
                      << " servers\n";
    }

    csv << kCsvHeader << '\n';
    for (Mode mode : spec.modes) {
        for (int n : spec.body_counts) {
            // gridrpc parallelism comes from the fabric's servers, so the
            // worker sweep collapses to a single cell labelled with the
            // fabric size.
            std::vector<int> sweep = spec.worker_counts;
            if (mode == Mode::GridRpc) sweep = {spec.self_host > 0 ? spec.self_host : 0};

            for (int workers : sweep) {
                std::string cell = std::string(mode_name(mode)) + "-n" + std::to_string(n) + "-w" +
                                   std::to_string(workers);
                std::vector<double> rep_totals;
                StepReport median_report;
                std::vector<StepReport> rep_reports;
                std::vector<double> rep_drifts;
                bool any_energy = false;
                std::string cell_status = "ok";

                for (int rep = 0; rep < spec.reps; ++rep) {
                    std::string run_id = cell + "-r" + std::to_string(rep);
                    if (log) *log << "running " << run_id << "\n";
                    StrategyConfig config;
                    config.mode = mode;
                    config.workers = workers;
                    config.rank_threads = spec.rank_threads;
                    config.fabric_endpoint = endpoint;
                    bool energy_on = n <= spec.energy_max_n;
                    try {
                        std::vector<Body> bodies = generate_bodies(n, spec.dist, spec.seed);
                        double e0 = 0.0;
                        if (energy_on) e0 = total_energy(bodies, spec.params.eps, spec.params.g_const);
                        SimulationResult sim =
                            run_simulation(bodies, spec.params, config, spec.steps);
                        StepReport run_total;
                        for (int s = 0; s < spec.steps; ++s) {
                            const StepReport& r = sim.steps[s];
                            run_total += r;
                            CsvRow row{run_id, mode_name(mode), n, workers, std::to_string(s), r};
                            if (energy_on && s == spec.steps - 1) {
                                double e1 =
                                    total_energy(sim.bodies, spec.params.eps, spec.params.g_const);
                                row.energy_drift = e0 != 0.0 ? std::fabs((e1 - e0) / e0)
                                                             : std::fabs(e1 - e0);
                                row.has_energy = true;
                                rep_drifts.push_back(row.energy_drift);
                                any_energy = true;
                            }
                            csv << format_csv_row(row) << '\n';
                        }
                        rep_totals.push_back(run_total.total_s);
                        rep_reports.push_back(run_total);
                    } catch (const std::exception& e) {
                        CsvRow row{run_id, mode_name(mode), n, workers, "error"};
                        row.status = e.what();
                        std::replace(row.status.begin(), row.status.end(), ',', ';');
                        csv << format_csv_row(row) << '\n';
                        cell_status = "error";
                        if (log) *log << "  failed: " << e.what() << "\n";
                    }
                }

                if (!rep_reports.empty()) {
                    auto field_median = [&](auto getter) {
                        std::vector<double> v;
                        for (const StepReport& r : rep_reports) v.push_back(getter(r));
                        return median(v);
                    };
                    median_report.tree_s = field_median([](const StepReport& r) { return r.tree_s; });
                    median_report.list_s = field_median([](const StepReport& r) { return r.list_s; });
                    median_report.force_s = field_median([](const StepReport& r) { return r.force_s; });
                    median_report.update_s =
                        field_median([](const StepReport& r) { return r.update_s; });
                    median_report.init_s = field_median([](const StepReport& r) { return r.init_s; });
                    median_report.finalize_s =
                        field_median([](const StepReport& r) { return r.finalize_s; });
                    median_report.total_s = median(rep_totals);
                    median_report.interactions = rep_reports.front().interactions;
                    CsvRow row{cell + "-median", mode_name(mode), n, workers, "summary",
                               median_report};
                    row.status = cell_status;
                    if (any_energy) {
                        row.energy_drift = median(rep_drifts);
                        row.has_energy = true;
                    }
                    csv << format_csv_row(row) << '\n';
                } else {
                    CsvRow row{cell + "-median", mode_name(mode), n, workers, "summary"};
                    row.status = cell_status;
                    csv << format_csv_row(row) << '\n';
                }
                csv.flush();
            }
        }
    }
    if (fabric) fabric->stop();
}

namespace {

struct MedianPoint {
    std::string mode;
    int n = 0;
    int workers = 0;
    double total_s = 0.0;
};

std::vector<MedianPoint> read_csv_medians(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) fail(Err::MalformedCsv, "cannot open " + csv_path);
    std::string header;
    if (!std::getline(in, header)) fail(Err::MalformedCsv, "empty file");
    if (trim(header) != kCsvHeader) fail(Err::MalformedCsv, "unexpected header");

    std::vector<MedianPoint> points;
    std::string line;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto fields = split_list(line);
        if (fields.size() < 15) fail(Err::MalformedCsv, "short row at line " + std::to_string(lineno));
        if (fields[4] != "summary" || fields[14] != "ok") continue;
        MedianPoint p;
        p.mode = fields[1];
        p.n = std::stoi(fields[2]);
        p.workers = std::stoi(fields[3]);
        p.total_s = std::stod(fields[11]);
        points.push_back(std::move(p));
    }
    return points;
}

}  // namespace

void emit_plot_script(const std::string& csv_path, const std::string& script_path) {
    auto points = read_csv_medians(csv_path);

    std::vector<int> ns;
    std::vector<std::string> modes;
    for (const MedianPoint& p : points) {
        if (std::find(ns.begin(), ns.end(), p.n) == ns.end()) ns.push_back(p.n);
        if (std::find(modes.begin(), modes.end(), p.mode) == modes.end()) modes.push_back(p.mode);
    }
    std::sort(ns.begin(), ns.end());

    std::ofstream out(script_path);
    if (!out) fail(Err::InvalidInput, "cannot write " + script_path);
    out << "#!/usr/bin/env gnuplot\n";
    out << "# generated from " << csv_path << "; execution time vs workers, one chart per n\n";
    out << "set terminal pngcairo size 900,600\n";
    out << "set key top right\n";
    out << "set xlabel 'workers'\n";
    out << "set ylabel 'median execution time (s)'\n";
    out << "set grid\n\n";

    for (int n : ns) {
        for (const std::string& mode : modes) {
            out << "$data_" << mode << "_" << n << " << EOD\n";
            for (const MedianPoint& p : points)
                if (p.n == n && p.mode == mode)
                    out << p.workers << " " << fmt(p.total_s) << "\n";
            out << "EOD\n";
        }
        out << "set output 'bench_n" << n << ".png'\n";
        out << "set title 'execution time, n = " << n << "'\n";
        out << "plot ";
        for (std::size_t m = 0; m < modes.size(); ++m) {
            if (m) out << ", \\\n     ";
            out << "$data_" << modes[m] << "_" << n << " using 1:2 with linespoints title '"
                << modes[m] << "'";
        }
        out << "\n\n";
    }
}

}  // namespace gravfarm
