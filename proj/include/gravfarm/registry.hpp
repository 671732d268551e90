#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "gravfarm/error.hpp"

namespace gravfarm {

struct ServerRecord {
    std::uint64_t server_id = 0;
    std::string address;
    int capacity = 1;
    int inflight = 0;
    std::uint64_t completed = 0;
    double failed_at = -1.0;  // < 0 while never failed
    bool alive = true;
    double last_heartbeat = 0.0;
};

// Agent-side server database. Time is passed in explicitly (seconds on any
// monotonic scale) so liveness can be tested with a simulated clock.
class ServerRegistry {
public:
    std::uint64_t register_server(const std::string& address, int capacity, double now = 0.0);
    void heartbeat(std::uint64_t id, double now);

    // Marks servers whose heartbeat is older than missed * interval as
    // failed and returns their ids.
    std::vector<std::uint64_t> check_liveness(double now, double interval, int missed);

    // Least-loaded alive server by inflight/capacity; ties broken by fewest
    // completed tasks, then lowest id. Reserves one slot on the winner.
    std::optional<std::uint64_t> pick_server();

    void mark_failed(std::uint64_t id, double now = 0.0);
    void mark_completed(std::uint64_t id);  // releases the slot, bumps completed
    void release_slot(std::uint64_t id);

    bool contains(std::uint64_t id) const { return index_.count(id) != 0; }
    const ServerRecord& record(std::uint64_t id) const;
    std::vector<ServerRecord> snapshot() const;
    int alive_count() const;
    bool has_idle() const;

private:
    ServerRecord& mut(std::uint64_t id);

    std::vector<ServerRecord> records_;
    std::unordered_map<std::uint64_t, std::size_t> index_;
    std::uint64_t next_id_ = 0;
};

enum class TaskStatus { Pending, Assigned, Done, PermanentlyFailed };

struct TaskState {
    std::uint64_t uid = 0;
    std::uint64_t session_id = 0;
    std::uint64_t request_id = 0;
    // Encoded task, opaque here. Shared so a send can outlive bookkeeping
    // updates without copying the buffer.
    std::shared_ptr<const std::vector<std::uint8_t>> payload;
    TaskStatus status = TaskStatus::Pending;
    std::uint64_t assigned_server = 0;
    int attempts = 0;  // server failures so far
    Err error = Err::TaskPermanentlyFailed;
};

struct SchedulerStats {
    std::uint64_t submitted = 0;
    std::uint64_t completed = 0;
    std::uint64_t permanently_failed = 0;
    std::uint64_t pending = 0;
    std::uint64_t assigned = 0;
};

struct Assignment {
    std::uint64_t uid = 0;
    std::uint64_t server_id = 0;
};

struct FailedTask {
    std::uint64_t uid = 0;
    std::uint64_t session_id = 0;
    std::uint64_t request_id = 0;
    Err error = Err::TaskPermanentlyFailed;
    int attempts = 0;
};

// Task bookkeeping on top of the registry: self-scheduling of pending work,
// requeueing on server failure, permanent failure after max_attempts distinct
// servers. Pure state machine; the daemon layer adds sockets and threads.
class Scheduler {
public:
    explicit Scheduler(int max_attempts = 3) : max_attempts_(max_attempts) {}

    ServerRegistry& registry() { return registry_; }
    const ServerRegistry& registry() const { return registry_; }

    std::uint64_t submit(std::uint64_t session_id, std::uint64_t request_id,
                         std::vector<std::uint8_t> payload);

    // Next (task, server) pair, or nullopt when nothing is schedulable.
    // Tasks that can never run (no alive servers) fail permanently and are
    // reported through take_failures().
    std::optional<Assignment> next_assignment();

    // Result arrived for uid from the given server; returns (session,
    // request), or nullopt for a stale report (task already reassigned).
    std::optional<std::pair<std::uint64_t, std::uint64_t>> on_result(std::uint64_t uid,
                                                                     std::uint64_t server_id);

    // A server rejected or crashed on this task only (task-level error).
    void on_task_error(std::uint64_t uid, Err error);

    // Server died: mark it failed, requeue its tasks (attempts + 1).
    void on_server_failed(std::uint64_t server_id, double now = 0.0);

    // Permanently failed tasks not yet reported, for delivery to clients.
    std::vector<FailedTask> take_failures();

    const TaskState& task(std::uint64_t uid) const;
    SchedulerStats stats() const;
    bool has_pending() const { return !pending_.empty(); }
    void drop_session(std::uint64_t session_id);

private:
    void fail_permanently(TaskState& t, Err error);

    ServerRegistry registry_;
    std::unordered_map<std::uint64_t, TaskState> tasks_;
    std::deque<std::uint64_t> pending_;
    std::vector<FailedTask> unreported_failures_;
    SchedulerStats stats_;
    std::uint64_t next_uid_ = 0;
    int max_attempts_ = 3;
};

}  // namespace gravfarm
