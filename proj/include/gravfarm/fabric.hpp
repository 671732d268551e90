#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "gravfarm/registry.hpp"
#include "gravfarm/types.hpp"
#include "gravfarm/wire.hpp"

namespace gravfarm {

// A unit of remote work: a chunk of bodies with their interaction lists and
// the force parameters the server needs.
struct TaskChunk {
    std::vector<Body> bodies;
    std::vector<InteractionList> lists;
    double eps = 0.0;
    double g_const = 1.0;
    double dt = 0.0;
};

std::vector<std::uint8_t> encode_task(const TaskChunk& chunk);
TaskChunk decode_task(std::span<const std::uint8_t> payload);

// The ComputeForces server routine: one acceleration per chunk body, summed
// in list order, identical to the local evaluation path.
std::vector<Vec3> server_compute_forces(const TaskChunk& chunk);

struct AgentConfig {
    std::string listen = "127.0.0.1:0";
    double heartbeat_interval = 2.0;
    int missed_heartbeats = 3;
    int max_attempts = 3;
    bool log = false;
};

class AgentDaemon {
public:
    explicit AgentDaemon(AgentConfig cfg = {});
    ~AgentDaemon();

    AgentDaemon(const AgentDaemon&) = delete;
    AgentDaemon& operator=(const AgentDaemon&) = delete;

    void start();
    void stop();
    std::string address() const;  // actual host:port after bind
    SchedulerStats stats() const;
    std::vector<ServerRecord> server_records() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct ServerConfig {
    std::string agent;
    int capacity = 1;
    std::string listen;  // optional: accept direct TASK_ASSIGN connections
    double heartbeat_interval = 2.0;
    double min_task_seconds = 0.0;  // floor on task duration, for failure tests
    std::string address_hint;       // registry address; defaults to the socket's local name
    bool log = false;
};

class ServerDaemon {
public:
    explicit ServerDaemon(ServerConfig cfg);
    ~ServerDaemon();

    ServerDaemon(const ServerDaemon&) = delete;
    ServerDaemon& operator=(const ServerDaemon&) = delete;

    void start();
    void stop();   // graceful: finish inflight tasks, then disconnect
    void kill();   // abrupt: drop the agent connection mid-work
    std::string listen_address() const;
    std::uint64_t server_id() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct FunctionHandle {
    std::string function;
    std::string agent_address;
    std::uint64_t session_id = 0;
    bool valid = false;
};

struct CallResult {
    bool ok = false;
    std::vector<Vec3> accels;
    Err error = Err::TaskPermanentlyFailed;
    int attempts = 0;
};

// Fig-4 style decomposition: the three intervals partition the session wall
// time, so init + compute + finalize == total by construction.
struct SessionTimes {
    double init_s = 0.0;
    double compute_s = 0.0;
    double finalize_s = 0.0;
    double total_s = 0.0;
};

// Client side of the fabric. Lifecycle: initialize -> handle_default ->
// call_async* -> wait_all -> handle_destruct -> finalize. Out-of-order use
// raises LifecycleViolation.
class ClientSession {
public:
    ClientSession();
    ~ClientSession();

    ClientSession(const ClientSession&) = delete;
    ClientSession& operator=(const ClientSession&) = delete;

    void initialize(const std::string& agent_address);
    FunctionHandle handle_default(const std::string& function);
    std::uint64_t call_async(const FunctionHandle& handle, const TaskChunk& chunk);
    std::map<std::uint64_t, CallResult> wait_all();
    void handle_destruct(FunctionHandle& handle);
    void finalize();

    SessionTimes times() const;
    std::uint64_t session_id() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// One-shot SERVER_LIST query against an agent.
std::vector<ServerRecord> fabric_server_list(const std::string& agent_address);

// Agent plus K local servers on loopback, torn down join-clean in stop().
// Everything runs in this process; no child processes are spawned.
class SelfHostedFabric {
public:
    explicit SelfHostedFabric(int servers, int capacity_each = 1, double min_task_seconds = 0.0);
    ~SelfHostedFabric();

    std::string agent_address() const;
    AgentDaemon& agent() { return *agent_; }
    int server_count() const { return static_cast<int>(servers_.size()); }
    ServerDaemon& server(int i) { return *servers_.at(i); }
    void kill_server(int i) { servers_.at(i)->kill(); }
    void stop();

private:
    std::unique_ptr<AgentDaemon> agent_;
    std::vector<std::unique_ptr<ServerDaemon>> servers_;
};

}  // namespace gravfarm
