#include "gravfarm/registry.hpp"

#include <algorithm>
#include <utility>

namespace gravfarm {

std::uint64_t ServerRegistry::register_server(const std::string& address, int capacity, double now) {
    if (capacity < 1) fail(Err::InvalidInput, "capacity must be >= 1");
    for (const ServerRecord& r : records_) {
        if (r.alive && r.address == address)
            fail(Err::DuplicateAddress, address);
    }
    ServerRecord rec;
    rec.server_id = next_id_++;
    rec.address = address;
    rec.capacity = capacity;
    rec.last_heartbeat = now;
    index_[rec.server_id] = records_.size();
    records_.push_back(std::move(rec));
    return records_.back().server_id;
}

ServerRecord& ServerRegistry::mut(std::uint64_t id) {
    auto it = index_.find(id);
    if (it == index_.end()) fail(Err::InvalidInput, "unknown server id " + std::to_string(id));
    return records_[it->second];
}

const ServerRecord& ServerRegistry::record(std::uint64_t id) const {
    return const_cast<ServerRegistry*>(this)->mut(id);
}

void ServerRegistry::heartbeat(std::uint64_t id, double now) {
    ServerRecord& r = mut(id);
    if (r.alive) r.last_heartbeat = now;
}

std::vector<std::uint64_t> ServerRegistry::check_liveness(double now, double interval, int missed) {
    std::vector<std::uint64_t> failed;
    for (ServerRecord& r : records_) {
        if (r.alive && now - r.last_heartbeat > interval * missed) {
            r.alive = false;
            r.failed_at = now;
            r.inflight = 0;
            failed.push_back(r.server_id);
        }
    }
    return failed;
}

std::optional<std::uint64_t> ServerRegistry::pick_server() {
    const ServerRecord* best = nullptr;
    for (const ServerRecord& r : records_) {
        if (!r.alive || r.inflight >= r.capacity) continue;
        if (!best) {
            best = &r;
            continue;
        }
        // compare inflight/capacity without dividing
        long lhs = static_cast<long>(r.inflight) * best->capacity;
        long rhs = static_cast<long>(best->inflight) * r.capacity;
        if (lhs < rhs ||
            (lhs == rhs && (r.completed < best->completed ||
                            (r.completed == best->completed && r.server_id < best->server_id))))
            best = &r;
    }
    if (!best) return std::nullopt;
    mut(best->server_id).inflight++;
    return best->server_id;
}

void ServerRegistry::mark_failed(std::uint64_t id, double now) {
    ServerRecord& r = mut(id);
    r.alive = false;
    r.failed_at = now;
    r.inflight = 0;
}

void ServerRegistry::mark_completed(std::uint64_t id) {
    ServerRecord& r = mut(id);
    if (r.inflight > 0) r.inflight--;
    r.completed++;
}

void ServerRegistry::release_slot(std::uint64_t id) {
    ServerRecord& r = mut(id);
    if (r.inflight > 0) r.inflight--;
}

std::vector<ServerRecord> ServerRegistry::snapshot() const { return records_; }

int ServerRegistry::alive_count() const {
    return static_cast<int>(std::count_if(records_.begin(), records_.end(),
                                          [](const ServerRecord& r) { return r.alive; }));
}

bool ServerRegistry::has_idle() const {
    return std::any_of(records_.begin(), records_.end(), [](const ServerRecord& r) {
        return r.alive && r.inflight < r.capacity;
    });
}

std::uint64_t Scheduler::submit(std::uint64_t session_id, std::uint64_t request_id,
                                std::vector<std::uint8_t> payload) {
    TaskState t;
    t.uid = next_uid_++;
    t.session_id = session_id;
    t.request_id = request_id;
    t.payload = std::make_shared<const std::vector<std::uint8_t>>(std::move(payload));
    pending_.push_back(t.uid);
    tasks_.emplace(t.uid, std::move(t));
    stats_.submitted++;
    return next_uid_ - 1;
}

void Scheduler::fail_permanently(TaskState& t, Err error) {
    t.status = TaskStatus::PermanentlyFailed;
    t.error = error;
    t.payload.reset();
    stats_.permanently_failed++;
    unreported_failures_.push_back({t.uid, t.session_id, t.request_id, error, t.attempts});
}

std::optional<Assignment> Scheduler::next_assignment() {
    while (!pending_.empty()) {
        std::uint64_t uid = pending_.front();
        auto it = tasks_.find(uid);
        if (it == tasks_.end() || it->second.status != TaskStatus::Pending) {
            pending_.pop_front();
            continue;
        }
        if (registry_.alive_count() == 0) {
            // nothing can ever run these
            pending_.pop_front();
            fail_permanently(it->second, Err::NoServersAvailable);
            continue;
        }
        auto server = registry_.pick_server();
        if (!server) return std::nullopt;  // all alive servers busy; caller retries later
        pending_.pop_front();
        it->second.status = TaskStatus::Assigned;
        it->second.assigned_server = *server;
        return Assignment{uid, *server};
    }
    return std::nullopt;
}

std::optional<std::pair<std::uint64_t, std::uint64_t>> Scheduler::on_result(
    std::uint64_t uid, std::uint64_t server_id) {
    auto it = tasks_.find(uid);
    if (it == tasks_.end()) return std::nullopt;
    TaskState& t = it->second;
    // A stale report: the server was declared dead and the task moved on.
    if (t.status != TaskStatus::Assigned || t.assigned_server != server_id) return std::nullopt;
    t.status = TaskStatus::Done;
    t.payload.reset();
    registry_.mark_completed(t.assigned_server);
    stats_.completed++;
    return std::make_pair(t.session_id, t.request_id);
}

void Scheduler::on_task_error(std::uint64_t uid, Err error) {
    TaskState& t = tasks_.at(uid);
    if (t.status != TaskStatus::Assigned) return;
    registry_.release_slot(t.assigned_server);
    fail_permanently(t, error);
}

void Scheduler::on_server_failed(std::uint64_t server_id, double now) {
    if (!registry_.contains(server_id)) return;
    registry_.mark_failed(server_id, now);
    for (auto& [uid, t] : tasks_) {
        if (t.status != TaskStatus::Assigned || t.assigned_server != server_id) continue;
        t.attempts++;
        if (t.attempts >= max_attempts_) {
            fail_permanently(t, Err::TaskPermanentlyFailed);
        } else {
            t.status = TaskStatus::Pending;
            t.assigned_server = 0;
            pending_.push_back(uid);
        }
    }
}

std::vector<FailedTask> Scheduler::take_failures() { return std::exchange(unreported_failures_, {}); }

const TaskState& Scheduler::task(std::uint64_t uid) const { return tasks_.at(uid); }

SchedulerStats Scheduler::stats() const {
    SchedulerStats s = stats_;
    for (const auto& [uid, t] : tasks_) {
        if (t.status == TaskStatus::Pending) s.pending++;
        else if (t.status == TaskStatus::Assigned) s.assigned++;
    }
    return s;
}

void Scheduler::drop_session(std::uint64_t session_id) {
    for (auto it = tasks_.begin(); it != tasks_.end();) {
        if (it->second.session_id == session_id &&
            (it->second.status == TaskStatus::Done ||
             it->second.status == TaskStatus::PermanentlyFailed)) {
            it = tasks_.erase(it);
        } else {
            ++it;
        }
    }
}

}  // namespace gravfarm
