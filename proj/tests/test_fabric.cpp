#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <thread>

#include "gravfarm/bench.hpp"
#include "gravfarm/fabric.hpp"
#include "gravfarm/tree.hpp"

using namespace gravfarm;

namespace {

TaskChunk make_chunk(int n, std::uint64_t seed) {
    TaskChunk chunk;
    chunk.bodies = generate_bodies(n, Distribution::Uniform, seed);
    chunk.eps = 0.025;
    chunk.g_const = 1.0;
    chunk.dt = 0.01;
    Tree t = build_tree(chunk.bodies, 1);
    compute_mass_moments(t);
    chunk.lists.resize(chunk.bodies.size());
    for (std::size_t i = 0; i < chunk.bodies.size(); ++i)
        build_interaction_list(t, chunk.bodies[i], 0.5, chunk.lists[i]);
    return chunk;
}

}  // namespace

TEST_CASE("task payloads round-trip") {
    TaskChunk chunk = make_chunk(16, 1);
    auto bytes = encode_task(chunk);
    TaskChunk back = decode_task(bytes);
    REQUIRE(back.bodies.size() == chunk.bodies.size());
    CHECK(back.eps == chunk.eps);
    for (std::size_t i = 0; i < chunk.bodies.size(); ++i) {
        CHECK(back.bodies[i].id == chunk.bodies[i].id);
        CHECK(back.bodies[i].pos.x == chunk.bodies[i].pos.x);
        REQUIRE(back.lists[i].size() == chunk.lists[i].size());
    }
    bytes.pop_back();
    CHECK_THROWS_AS(decode_task(bytes), Error);
}

TEST_CASE("server_compute_forces matches the local path bit for bit") {
    TaskChunk chunk = make_chunk(64, 2);
    auto remote = server_compute_forces(chunk);
    for (std::size_t i = 0; i < chunk.bodies.size(); ++i) {
        Vec3 local = compute_force(chunk.bodies[i], chunk.lists[i], chunk.eps, chunk.g_const);
        CHECK(remote[i].x == local.x);
        CHECK(remote[i].y == local.y);
        CHECK(remote[i].z == local.z);
    }
}

TEST_CASE("empty and symmetric chunks behave like the local math") {
    TaskChunk chunk;
    chunk.bodies.push_back({0, 1.0, {0, 0, 0}, {}, {}});
    chunk.lists.resize(1);
    auto acc = server_compute_forces(chunk);
    CHECK(acc[0].norm() == 0.0);

    TaskChunk sym;
    sym.g_const = 1.0;
    sym.bodies.push_back({0, 1.0, {0, 0, 0}, {}, {}});
    sym.lists.push_back({{1.0, {1, 0, 0}}, {1.0, {-1, 0, 0}}});
    auto acc2 = server_compute_forces(sym);
    CHECK(acc2[0].norm() == 0.0);
}

TEST_CASE("session lifecycle with zero calls") {
    SelfHostedFabric fabric(1);
    ClientSession session;
    session.initialize(fabric.agent_address());
    session.finalize();
    auto t = session.times();
    CHECK(t.total_s >= 0.0);
    CHECK(t.init_s + t.compute_s + t.finalize_s == doctest::Approx(t.total_s).epsilon(0.01));
}

TEST_CASE("lifecycle violations are rejected") {
    SelfHostedFabric fabric(1);
    ClientSession session;
    CHECK_THROWS_AS(session.handle_default("ComputeForces"), Error);
    session.initialize(fabric.agent_address());
    auto handle = session.handle_default("ComputeForces");
    session.handle_destruct(handle);
    TaskChunk chunk = make_chunk(4, 3);
    CHECK_THROWS_AS(session.call_async(handle, chunk), Error);
    session.finalize();
    CHECK_THROWS_AS(session.finalize(), Error);
}

TEST_CASE("three async calls produce results matching local evaluation") {
    SelfHostedFabric fabric(3);
    ClientSession session;
    session.initialize(fabric.agent_address());
    auto handle = session.handle_default("ComputeForces");

    std::vector<TaskChunk> chunks;
    std::vector<std::uint64_t> requests;
    for (int c = 0; c < 3; ++c) {
        chunks.push_back(make_chunk(24, 10 + c));
        requests.push_back(session.call_async(handle, chunks.back()));
    }
    auto results = session.wait_all();
    REQUIRE(results.size() == 3);
    for (int c = 0; c < 3; ++c) {
        const CallResult& res = results.at(requests[c]);
        REQUIRE(res.ok);
        auto local = server_compute_forces(chunks[c]);
        REQUIRE(res.accels.size() == local.size());
        for (std::size_t i = 0; i < local.size(); ++i) {
            CHECK(res.accels[i].x == local[i].x);
            CHECK(res.accels[i].z == local[i].z);
        }
    }
    session.handle_destruct(handle);
    session.finalize();
    auto t = session.times();
    CHECK(t.init_s + t.compute_s + t.finalize_s == doctest::Approx(t.total_s).epsilon(0.01));

    auto stats = fabric.agent().stats();
    CHECK(stats.submitted == 3);
    CHECK(stats.completed == 3);
    fabric.stop();
}

TEST_CASE("unknown functions are rejected through TASK_ERROR") {
    SelfHostedFabric fabric(1);
    ClientSession session;
    session.initialize(fabric.agent_address());
    auto handle = session.handle_default("SolveRiemann");
    auto req = session.call_async(handle, make_chunk(4, 4));
    auto results = session.wait_all();
    REQUIRE(results.count(req) == 1);
    CHECK_FALSE(results.at(req).ok);
    CHECK(results.at(req).error == Err::UnknownFunction);
    session.handle_destruct(handle);
    session.finalize();
}

TEST_CASE("a killed server's tasks are rescheduled to the survivors") {
    SelfHostedFabric fabric(2, 1, 0.05);
    ClientSession session;
    session.initialize(fabric.agent_address());
    auto handle = session.handle_default("ComputeForces");

    std::vector<TaskChunk> chunks;
    std::vector<std::uint64_t> requests;
    for (int c = 0; c < 6; ++c) {
        chunks.push_back(make_chunk(16, 20 + c));
        requests.push_back(session.call_async(handle, chunks.back()));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(60));
    fabric.kill_server(0);

    auto results = session.wait_all();
    REQUIRE(results.size() == 6);
    for (int c = 0; c < 6; ++c) {
        const CallResult& res = results.at(requests[c]);
        REQUIRE(res.ok);
        auto local = server_compute_forces(chunks[c]);
        for (std::size_t i = 0; i < local.size(); ++i) CHECK(res.accels[i].x == local[i].x);
    }
    session.handle_destruct(handle);
    session.finalize();

    auto stats = fabric.agent().stats();
    CHECK(stats.submitted == 6);
    CHECK(stats.submitted == stats.completed + stats.permanently_failed);
    CHECK(stats.permanently_failed == 0);
    fabric.stop();
}

TEST_CASE("when every server dies wait_all reports NoServersAvailable") {
    SelfHostedFabric fabric(1, 1, 0.2);
    ClientSession session;
    session.initialize(fabric.agent_address());
    auto handle = session.handle_default("ComputeForces");
    std::vector<std::uint64_t> requests;
    for (int c = 0; c < 3; ++c) requests.push_back(session.call_async(handle, make_chunk(8, 30 + c)));
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    fabric.kill_server(0);
    auto results = session.wait_all();
    REQUIRE(results.size() == 3);
    bool any_unavailable = false;
    for (auto& [req, res] : results) {
        CHECK_FALSE(res.ok);
        if (res.error == Err::NoServersAvailable) any_unavailable = true;
    }
    CHECK(any_unavailable);
    session.handle_destruct(handle);
    session.finalize();
}

TEST_CASE("direct listen port serves TASK_ASSIGN without an agent") {
    ServerConfig cfg;
    cfg.listen = "127.0.0.1:0";
    cfg.capacity = 1;
    ServerDaemon server(cfg);
    server.start();
    REQUIRE_FALSE(server.listen_address().empty());

    // speak the wire protocol by hand
    TaskChunk chunk = make_chunk(8, 5);
    auto task = encode_task(chunk);
    wire::Writer w;
    w.u64(77);
    auto head = w.take();
    std::vector<std::uint8_t> payload(head);
    payload.insert(payload.end(), task.begin(), task.end());
    auto frame = wire::encode_message(wire::kTaskAssign, payload);

    // minimal blocking client
    auto addr = server.listen_address();
    auto colon = addr.rfind(':');
    std::string host = addr.substr(0, colon);
    int port = std::stoi(addr.substr(colon + 1));
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(fd >= 0);
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(static_cast<std::uint16_t>(port));
    inet_pton(AF_INET, host.c_str(), &sa.sin_addr);
    REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) == 0);
    REQUIRE(::send(fd, frame.data(), frame.size(), 0) == static_cast<ssize_t>(frame.size()));

    std::vector<std::uint8_t> reply(8);
    size_t got = 0;
    while (got < 8) {
        auto n = ::recv(fd, reply.data() + got, 8 - got, 0);
        REQUIRE(n > 0);
        got += static_cast<size_t>(n);
    }
    auto [type, len] = wire::decode_header(std::span<const std::uint8_t, 8>(reply.data(), 8));
    CHECK(type == wire::kTaskResult);
    std::vector<std::uint8_t> body(len);
    got = 0;
    while (got < len) {
        auto n = ::recv(fd, body.data() + got, len - got, 0);
        REQUIRE(n > 0);
        got += static_cast<size_t>(n);
    }
    wire::Reader r(body);
    CHECK(r.u64() == 77);
    auto count = r.u32();
    REQUIRE(count == chunk.bodies.size());
    auto local = server_compute_forces(chunk);
    for (std::uint32_t i = 0; i < count; ++i) {
        Vec3 a = r.vec3();
        CHECK(a.x == local[i].x);
    }
    ::close(fd);
    server.stop();
}
