#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "gravfarm/bench.hpp"
#include "gravfarm/fabric.hpp"
#include "gravfarm/orb.hpp"
#include "gravfarm/strategies.hpp"
#include "gravfarm/tree.hpp"
#include "gravfarm/verify.hpp"
#include "gravfarm/wire.hpp"

namespace py = pybind11;
using namespace gravfarm;

namespace {

std::tuple<double, double, double> to_tuple(const Vec3& v) { return {v.x, v.y, v.z}; }

Vec3 from_seq(const std::tuple<double, double, double>& t) {
    return {std::get<0>(t), std::get<1>(t), std::get<2>(t)};
}

}  // namespace

PYBIND11_MODULE(_gravfarm, m) {
    m.doc() = "Barnes-Hut N-body engine with sequential, shared-memory, ORB-rank and "
              "GridRPC-style force strategies";

    py::register_exception<Error>(m, "GravfarmError");

    py::class_<Vec3>(m, "Vec3")
        .def(py::init<>())
        .def(py::init([](double x, double y, double z) { return Vec3{x, y, z}; }))
        .def_readwrite("x", &Vec3::x)
        .def_readwrite("y", &Vec3::y)
        .def_readwrite("z", &Vec3::z)
        .def("norm", &Vec3::norm)
        .def("as_tuple", [](const Vec3& v) { return to_tuple(v); })
        .def("__repr__", [](const Vec3& v) {
            std::ostringstream os;
            os << "Vec3(" << v.x << ", " << v.y << ", " << v.z << ")";
            return os.str();
        });

    py::class_<Body>(m, "Body")
        .def(py::init<>())
        .def(py::init([](std::uint64_t id, double mass, std::tuple<double, double, double> pos,
                         std::tuple<double, double, double> vel) {
                 Body b;
                 b.id = id;
                 b.mass = mass;
                 b.pos = from_seq(pos);
                 b.vel = from_seq(vel);
                 return b;
             }),
             py::arg("id"), py::arg("mass"), py::arg("pos"),
             py::arg("vel") = std::tuple<double, double, double>{0, 0, 0})
        .def_readwrite("id", &Body::id)
        .def_readwrite("mass", &Body::mass)
        .def_readwrite("pos", &Body::pos)
        .def_readwrite("vel", &Body::vel)
        .def_readwrite("acc", &Body::acc);

    py::class_<SimParams>(m, "SimParams")
        .def(py::init<>())
        .def_readwrite("theta", &SimParams::theta)
        .def_readwrite("eps", &SimParams::eps)
        .def_readwrite("g_const", &SimParams::g_const)
        .def_readwrite("dt", &SimParams::dt)
        .def_readwrite("leaf_capacity", &SimParams::leaf_capacity);

    py::enum_<Mode>(m, "Mode")
        .value("SEQUENTIAL", Mode::Sequential)
        .value("SHARED", Mode::Shared)
        .value("ORB_RANKS", Mode::OrbRanks)
        .value("GRIDRPC", Mode::GridRpc);

    py::enum_<Distribution>(m, "Distribution")
        .value("UNIFORM", Distribution::Uniform)
        .value("PLUMMER", Distribution::Plummer);

    py::class_<StrategyConfig>(m, "StrategyConfig")
        .def(py::init<>())
        .def_readwrite("mode", &StrategyConfig::mode)
        .def_readwrite("workers", &StrategyConfig::workers)
        .def_readwrite("rank_threads", &StrategyConfig::rank_threads)
        .def_readwrite("chunk_count", &StrategyConfig::chunk_count)
        .def_readwrite("per_body_calls", &StrategyConfig::per_body_calls)
        .def_readwrite("fabric_endpoint", &StrategyConfig::fabric_endpoint);

    py::class_<StepReport>(m, "StepReport")
        .def_readonly("tree_s", &StepReport::tree_s)
        .def_readonly("list_s", &StepReport::list_s)
        .def_readonly("force_s", &StepReport::force_s)
        .def_readonly("update_s", &StepReport::update_s)
        .def_readonly("init_s", &StepReport::init_s)
        .def_readonly("finalize_s", &StepReport::finalize_s)
        .def_readonly("total_s", &StepReport::total_s)
        .def_readonly("interactions", &StepReport::interactions)
        .def_readonly("unit_body_counts", &StepReport::unit_body_counts);

    py::class_<Tree>(m, "Tree")
        .def_property_readonly("cell_count", [](const Tree& t) { return t.cells.size(); })
        .def_property_readonly("max_depth", [](const Tree& t) { return t.max_depth; })
        .def_property_readonly("depth_capped", [](const Tree& t) { return t.depth_capped; })
        .def_property_readonly("root_mass", [](const Tree& t) { return t.cells[0].total_mass; })
        .def_property_readonly("root_com", [](const Tree& t) { return t.cells[0].com; });

    m.def("generate_bodies", &generate_bodies, py::arg("n"), py::arg("dist"), py::arg("seed"));

    m.def(
        "build_tree",
        [](const std::vector<Body>& bodies, int leaf_capacity) {
            Tree t = build_tree(bodies, leaf_capacity);
            compute_mass_moments(t);
            return t;
        },
        py::arg("bodies"), py::arg("leaf_capacity") = 1,
        "Build the oct-tree and annotate mass moments");

    m.def(
        "interaction_list",
        [](const Tree& tree, const Body& body, double theta) {
            auto list = build_interaction_list(tree, body, theta);
            std::vector<std::pair<double, std::tuple<double, double, double>>> out;
            out.reserve(list.size());
            for (const InteractionEntry& e : list) out.emplace_back(e.mass, to_tuple(e.pos));
            return out;
        },
        py::arg("tree"), py::arg("body"), py::arg("theta"));

    m.def(
        "accelerations",
        [](const std::vector<Body>& bodies, const SimParams& params, const StrategyConfig& config) {
            py::gil_scoped_release release;
            return compute_accels(bodies, params, config);
        },
        py::arg("bodies"), py::arg("params") = SimParams{},
        py::arg("config") = StrategyConfig{},
        "Strategy-dispatched accelerations at the bodies' current positions");

    m.def(
        "brute_force_accels",
        [](const std::vector<Body>& bodies, double eps, double g_const) {
            py::gil_scoped_release release;
            return brute_force_accels(bodies, eps, g_const);
        },
        py::arg("bodies"), py::arg("eps") = 0.025, py::arg("g_const") = 1.0,
        "O(N^2) oracle accelerations");

    m.def("total_energy", &total_energy, py::arg("bodies"), py::arg("eps") = 0.025,
          py::arg("g_const") = 1.0);

    m.def(
        "run_step",
        [](const std::vector<Body>& bodies, const SimParams& params, const StrategyConfig& config) {
            py::gil_scoped_release release;
            return run_step(bodies, params, config);
        },
        py::arg("bodies"), py::arg("params") = SimParams{}, py::arg("config") = StrategyConfig{},
        "One kick-drift-kick step; returns (bodies, StepReport)");

    m.def(
        "run_simulation",
        [](const std::vector<Body>& bodies, const SimParams& params, const StrategyConfig& config,
           int steps, int energy_every) {
            py::gil_scoped_release release;
            SimulationResult r = run_simulation(bodies, params, config, steps, energy_every);
            return std::make_tuple(r.bodies, r.totals, r.energy_samples);
        },
        py::arg("bodies"), py::arg("params") = SimParams{}, py::arg("config") = StrategyConfig{},
        py::arg("steps") = 1, py::arg("energy_every") = 0,
        "Advance several steps; returns (bodies, totals, energy_samples)");

    m.def(
        "orb_ranks",
        [](const std::vector<Body>& bodies, int rank_count) {
            auto res = orb_partition(bodies, rank_count);
            return res.rank_of_body;
        },
        py::arg("bodies"), py::arg("rank_count"), "Rank id per body under ORB partitioning");

    m.def(
        "encode_message",
        [](std::uint8_t msg_type, py::bytes payload) {
            std::string s = payload;
            auto frame = wire::encode_message(
                msg_type, std::span<const std::uint8_t>(
                              reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
            return py::bytes(reinterpret_cast<const char*>(frame.data()), frame.size());
        },
        py::arg("msg_type"), py::arg("payload"));

    m.def(
        "decode_message",
        [](py::bytes frame) {
            std::string s = frame;
            auto [type, payload] = wire::decode_message(std::span<const std::uint8_t>(
                reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
            return std::make_pair(type, py::bytes(reinterpret_cast<const char*>(payload.data()),
                                                  payload.size()));
        },
        py::arg("frame"));

    py::class_<SelfHostedFabric>(m, "SelfHostedFabric")
        .def(py::init<int, int, double>(), py::arg("servers"), py::arg("capacity_each") = 1,
             py::arg("min_task_seconds") = 0.0)
        .def_property_readonly("agent_address", &SelfHostedFabric::agent_address)
        .def("kill_server", &SelfHostedFabric::kill_server)
        .def("stop", &SelfHostedFabric::stop)
        .def("__enter__", [](SelfHostedFabric& f) -> SelfHostedFabric& { return f; })
        .def("__exit__", [](SelfHostedFabric& f, py::object, py::object, py::object) {
            f.stop();
            return false;
        });

    m.def("verify", [](bool skip_fabric) {
        VerifyOptions opts;
        opts.skip_fabric = skip_fabric;
        std::ostringstream log;
        auto results = run_verification(opts, log);
        std::vector<std::tuple<std::string, bool, std::string>> out;
        for (const CheckResult& r : results) out.emplace_back(r.name, r.pass, r.detail);
        return out;
    }, py::arg("skip_fabric") = false);
}
