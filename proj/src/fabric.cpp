#include "gravfarm/fabric.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstddef>
#include <cstring>
#include <deque>
#include <iostream>
#include <unordered_map>

#include "gravfarm/tree.hpp"

namespace gravfarm {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct HostPort {
    std::string host;
    std::uint16_t port = 0;
};

HostPort split_address(const std::string& addr) {
    auto colon = addr.rfind(':');
    if (colon == std::string::npos) fail(Err::InvalidInput, "address must be host:port: " + addr);
    HostPort hp;
    hp.host = addr.substr(0, colon);
    hp.port = static_cast<std::uint16_t>(std::stoi(addr.substr(colon + 1)));
    return hp;
}

class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) : fd_(fd) {}
    ~Fd() { reset(); }
    Fd(Fd&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
    Fd& operator=(Fd&& o) noexcept {
        if (this != &o) {
            reset();
            fd_ = o.fd_;
            o.fd_ = -1;
        }
        return *this;
    }
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;

    int get() const { return fd_; }
    bool valid() const { return fd_ >= 0; }
    void reset() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }
    // Unblocks any thread stuck in recv/send on this fd.
    void shutdown_both() {
        if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
    }

private:
    int fd_ = -1;
};

int listen_on(const std::string& addr, std::string& bound) {
    HostPort hp = split_address(addr);
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) fail(Err::ConnectionFailed, "socket: " + std::string(std::strerror(errno)));
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);

    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(hp.port);
    if (hp.host.empty() || hp.host == "0.0.0.0" || hp.host == "*") {
        sa.sin_addr.s_addr = INADDR_ANY;
    } else if (hp.host == "localhost") {
        sa.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    } else if (::inet_pton(AF_INET, hp.host.c_str(), &sa.sin_addr) != 1) {
        ::close(fd);
        fail(Err::InvalidInput, "cannot parse listen host " + hp.host);
    }
    if (::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0 || ::listen(fd, 64) != 0) {
        int e = errno;
        ::close(fd);
        fail(Err::ConnectionFailed, "bind/listen " + addr + ": " + std::strerror(e));
    }
    sockaddr_in actual{};
    socklen_t len = sizeof actual;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&actual), &len);
    char buf[INET_ADDRSTRLEN] = {};
    ::inet_ntop(AF_INET, &actual.sin_addr, buf, sizeof buf);
    std::string host = (actual.sin_addr.s_addr == INADDR_ANY) ? "127.0.0.1" : buf;
    bound = host + ":" + std::to_string(ntohs(actual.sin_port));
    return fd;
}

// Modest fixed socket buffers. Autotuned buffers balloon to several MB per
// flow; a task flood can then push kernel TCP memory into its global limit,
// which wedges loopback flows in persist-mode crawl. Backlog belongs in the
// agent's queue, not in socket buffers.
inline constexpr int kSocketBuffer = 256 * 1024;

void tune_socket(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    int buf = kSocketBuffer;
    ::setsockopt(fd, SOL_SOCKET, SO_SNDBUF, &buf, sizeof buf);
    ::setsockopt(fd, SOL_SOCKET, SO_RCVBUF, &buf, sizeof buf);
}

int connect_to(const std::string& addr) {
    HostPort hp = split_address(addr);
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    std::string port = std::to_string(hp.port);
    if (::getaddrinfo(hp.host.c_str(), port.c_str(), &hints, &res) != 0 || res == nullptr)
        fail(Err::ConnectionFailed, "cannot resolve " + addr);
    int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd < 0) {
        ::freeaddrinfo(res);
        fail(Err::ConnectionFailed, "socket: " + std::string(std::strerror(errno)));
    }
    if (::connect(fd, res->ai_addr, res->ai_addrlen) != 0) {
        int e = errno;
        ::freeaddrinfo(res);
        ::close(fd);
        fail(Err::ConnectionFailed, "connect " + addr + ": " + std::strerror(e));
    }
    ::freeaddrinfo(res);
    tune_socket(fd);
    return fd;
}

bool send_all(int fd, const std::uint8_t* data, std::size_t size) {
    while (size > 0) {
        ssize_t n = ::send(fd, data, size, MSG_NOSIGNAL);
        if (n <= 0) {
            if (n < 0 && errno == EINTR) continue;
            return false;
        }
        data += n;
        size -= static_cast<std::size_t>(n);
    }
    return true;
}

bool recv_exact(int fd, std::uint8_t* data, std::size_t size) {
    while (size > 0) {
        ssize_t n = ::recv(fd, data, size, 0);
        if (n <= 0) {
            if (n < 0 && errno == EINTR) continue;
            return false;
        }
        data += n;
        size -= static_cast<std::size_t>(n);
    }
    return true;
}

// A frame split into header+extra and a shared payload tail, so large task
// buffers go out without concatenation. The descriptor is read under the
// write lock, so closing a connection under the same lock cannot race a
// send onto a reused fd number.
bool send_frame(const Fd& fd, std::mutex& write_mu, std::uint8_t type,
                std::span<const std::uint8_t> head, std::span<const std::uint8_t> tail = {}) {
    std::uint8_t hdr[wire::kHeaderSize];
    std::size_t len = head.size() + tail.size();
    if (len > wire::kMaxPayload) return false;
    hdr[0] = wire::kMagic0;
    hdr[1] = wire::kMagic1;
    hdr[2] = wire::kVersion;
    hdr[3] = type;
    hdr[4] = static_cast<std::uint8_t>(len >> 24);
    hdr[5] = static_cast<std::uint8_t>(len >> 16);
    hdr[6] = static_cast<std::uint8_t>(len >> 8);
    hdr[7] = static_cast<std::uint8_t>(len);
    std::lock_guard lock(write_mu);
    if (!fd.valid()) return false;
    if (!send_all(fd.get(), hdr, sizeof hdr)) return false;
    if (!head.empty() && !send_all(fd.get(), head.data(), head.size())) return false;
    if (!tail.empty() && !send_all(fd.get(), tail.data(), tail.size())) return false;
    return true;
}

// Received frame; the payload buffer is allocated without zero-fill since
// recv overwrites it anyway (large task frames make the memset measurable).
struct Frame {
    std::uint8_t type = 0;
    std::size_t size = 0;
    std::unique_ptr<std::uint8_t[]> data;

    std::span<const std::uint8_t> payload() const { return {data.get(), size}; }
};

// nullopt on EOF or protocol violation; connections are dropped either way.
std::optional<Frame> recv_frame(int fd) {
    std::uint8_t hdr[wire::kHeaderSize];
    if (!recv_exact(fd, hdr, sizeof hdr)) return std::nullopt;
    std::uint8_t type;
    std::uint32_t len;
    try {
        auto parsed = wire::decode_header(std::span<const std::uint8_t, wire::kHeaderSize>(hdr));
        type = parsed.first;
        len = parsed.second;
    } catch (const Error&) {
        return std::nullopt;
    }
    Frame f;
    f.type = type;
    f.size = len;
    if (len > 0) {
        f.data.reset(new std::uint8_t[len]);
        if (!recv_exact(fd, f.data.get(), len)) return std::nullopt;
    }
    return f;
}

std::vector<std::uint8_t> u64_payload(std::uint64_t v) {
    wire::Writer w;
    w.u64(v);
    return w.take();
}

}  // namespace

// Body wire image (id, mass, pos, vel) and InteractionEntry (mass, pos) are
// bulk-copied; the asserts pin the struct layouts the fast path relies on.
static_assert(offsetof(Body, mass) == 8 && offsetof(Body, pos) == 16 &&
              offsetof(Body, vel) == 40);
static_assert(sizeof(InteractionEntry) == 32 && offsetof(InteractionEntry, pos) == 8);
static_assert(sizeof(Vec3) == 24);

std::vector<std::uint8_t> encode_task(const TaskChunk& chunk) {
    if (chunk.lists.size() != chunk.bodies.size())
        fail(Err::InvalidInput, "lists/bodies length mismatch");
    std::size_t total = 28 + 64 * chunk.bodies.size();
    for (const InteractionList& list : chunk.lists) total += 4 + 32 * list.size();

    wire::Writer w;
    w.reserve(total);
    w.f64(chunk.eps);
    w.f64(chunk.g_const);
    w.f64(chunk.dt);
    w.u32(static_cast<std::uint32_t>(chunk.bodies.size()));
    for (const Body& b : chunk.bodies) {
        w.u64(b.id);
        w.f64_block(&b.mass, 7);  // mass, pos, vel
    }
    for (const InteractionList& list : chunk.lists) {
        w.u32(static_cast<std::uint32_t>(list.size()));
        w.f64_block(reinterpret_cast<const double*>(list.data()), 4 * list.size());
    }
    return w.take();
}

TaskChunk decode_task(std::span<const std::uint8_t> payload) {
    wire::Reader r(payload, Err::MalformedTask);
    TaskChunk chunk;
    chunk.eps = r.f64();
    chunk.g_const = r.f64();
    chunk.dt = r.f64();
    auto n = r.u32();
    if (r.remaining() < 64ull * n) fail(Err::MalformedTask, "body count exceeds payload");
    chunk.bodies.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        chunk.bodies[i].id = r.u64();
        r.f64_block(&chunk.bodies[i].mass, 7);
    }
    chunk.lists.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        auto m = r.u32();
        if (r.remaining() < 32ull * m) fail(Err::MalformedTask, "list length exceeds payload");
        chunk.lists[i].resize(m);
        r.f64_block(reinterpret_cast<double*>(chunk.lists[i].data()), 4 * m);
    }
    if (!r.done()) fail(Err::MalformedTask, "trailing bytes in task");
    return chunk;
}

std::vector<Vec3> server_compute_forces(const TaskChunk& chunk) {
    std::vector<Vec3> acc(chunk.bodies.size());
    for (std::size_t i = 0; i < chunk.bodies.size(); ++i)
        acc[i] = compute_force(chunk.bodies[i], chunk.lists[i], chunk.eps, chunk.g_const);
    return acc;
}

// ---------------------------------------------------------------------------
// Agent daemon
// ---------------------------------------------------------------------------

struct AgentDaemon::Impl {
    explicit Impl(AgentConfig c) : cfg(std::move(c)) {}

    AgentConfig cfg;
    Fd listener;
    std::string bound_address;
    Clock::time_point epoch = Clock::now();

    std::mutex mu;
    std::condition_variable cv;
    Scheduler scheduler{3};
    bool stopping = false;

    struct Conn {
        Fd fd;
        std::mutex write_mu;
        enum class Kind { Unknown, Server, Session } kind = Kind::Unknown;
        std::uint64_t id = 0;
        std::thread reader;
    };
    std::vector<std::shared_ptr<Conn>> conns;
    std::unordered_map<std::uint64_t, std::shared_ptr<Conn>> server_conns;
    std::unordered_map<std::uint64_t, std::shared_ptr<Conn>> session_conns;
    std::uint64_t next_session_id = 1;

    std::thread accept_thread;
    std::thread dispatch_thread;

    double now() const { return seconds_since(epoch); }

    void log(const std::string& msg) {
        if (cfg.log) std::cerr << "[agent] " << msg << "\n";
    }

    void start() {
        scheduler = Scheduler(cfg.max_attempts);
        listener = Fd(listen_on(cfg.listen, bound_address));
        accept_thread = std::thread([this] { accept_loop(); });
        dispatch_thread = std::thread([this] { dispatch_loop(); });
    }

    void stop() {
        {
            std::lock_guard lock(mu);
            if (stopping) return;
            stopping = true;
        }
        cv.notify_all();
        listener.shutdown_both();
        listener.reset();
        std::vector<std::shared_ptr<Conn>> snapshot;
        {
            std::lock_guard lock(mu);
            snapshot = conns;
        }
        for (auto& c : snapshot) c->fd.shutdown_both();
        if (accept_thread.joinable()) accept_thread.join();
        if (dispatch_thread.joinable()) dispatch_thread.join();
        for (auto& c : snapshot)
            if (c->reader.joinable()) c->reader.join();
        std::lock_guard lock(mu);
        conns.clear();
        server_conns.clear();
        session_conns.clear();
    }

    void accept_loop() {
        for (;;) {
            int fd = ::accept(listener.get(), nullptr, nullptr);
            if (fd < 0) {
                if (errno == EINTR) continue;
                return;  // listener closed
            }
            tune_socket(fd);
            auto conn = std::make_shared<Conn>();
            conn->fd = Fd(fd);
            {
                std::lock_guard lock(mu);
                if (stopping) return;
                conns.push_back(conn);
            }
            conn->reader = std::thread([this, conn] { serve_connection(conn); });
        }
    }

    void serve_connection(const std::shared_ptr<Conn>& conn) {
        for (;;) {
            auto frame = recv_frame(conn->fd.get());
            if (!frame) break;
            try {
                handle_frame(conn, *frame);
            } catch (const Error& e) {
                log(std::string("dropping connection: ") + e.what());
                break;
            }
        }
        on_disconnect(conn);
    }

    void handle_frame(const std::shared_ptr<Conn>& conn, Frame& frame) {
        switch (frame.type) {
            case wire::kRegister: {
                wire::Reader r(frame.payload());
                auto capacity = static_cast<int>(r.u32());
                std::string address = r.str();
                std::uint64_t id;
                {
                    std::lock_guard lock(mu);
                    id = scheduler.registry().register_server(address, capacity, now());
                    conn->kind = Conn::Kind::Server;
                    conn->id = id;
                    server_conns[id] = conn;
                }
                log("registered server " + address + " as id " + std::to_string(id));
                auto ack = u64_payload(id);
                send_frame(conn->fd, conn->write_mu, wire::kRegisterAck, ack);
                cv.notify_all();
                break;
            }
            case wire::kHeartbeat: {
                std::lock_guard lock(mu);
                if (conn->kind == Conn::Kind::Server)
                    scheduler.registry().heartbeat(conn->id, now());
                break;
            }
            case wire::kSessionOpen: {
                std::uint64_t id;
                {
                    std::lock_guard lock(mu);
                    id = next_session_id++;
                    conn->kind = Conn::Kind::Session;
                    conn->id = id;
                    session_conns[id] = conn;
                }
                auto ack = u64_payload(id);
                send_frame(conn->fd, conn->write_mu, wire::kRegisterAck, ack);
                break;
            }
            case wire::kSessionClose: {
                std::lock_guard lock(mu);
                session_conns.erase(conn->id);
                scheduler.drop_session(conn->id);
                break;
            }
            case wire::kTaskSubmit: {
                wire::Reader r(frame.payload());
                std::uint64_t session = r.u64();
                std::uint64_t request = r.u64();
                std::string function = r.str();
                std::size_t task_offset = frame.size - r.remaining();
                if (function != "ComputeForces") {
                    wire::Writer w;
                    w.u64(request);
                    w.u32(static_cast<std::uint32_t>(Err::UnknownFunction));
                    w.u32(0);
                    auto payload = w.take();
                    send_frame(conn->fd, conn->write_mu, wire::kTaskError, payload);
                    break;
                }
                std::vector<std::uint8_t> task_bytes(frame.data.get() + task_offset,
                                                     frame.data.get() + frame.size);
                {
                    std::lock_guard lock(mu);
                    scheduler.submit(session, request, std::move(task_bytes));
                }
                log("task submitted by session " + std::to_string(session));
                cv.notify_all();
                break;
            }
            case wire::kTaskResult: {
                if (conn->kind != Conn::Kind::Server) break;
                wire::Reader r(frame.payload());
                std::uint64_t uid = r.u64();
                std::shared_ptr<Conn> session_conn;
                std::uint64_t request = 0;
                {
                    std::lock_guard lock(mu);
                    auto routed = scheduler.on_result(uid, conn->id);
                    if (!routed) break;  // stale result after reassignment
                    request = routed->second;
                    auto it = session_conns.find(routed->first);
                    if (it != session_conns.end()) session_conn = it->second;
                }
                if (session_conn) {
                    wire::Writer w;
                    w.u64(request);
                    auto head = w.take();
                    std::span<const std::uint8_t> rest(frame.data.get() + 8, frame.size - 8);
                    send_frame(session_conn->fd, session_conn->write_mu, wire::kTaskResult,
                               head, rest);
                }
                cv.notify_all();
                break;
            }
            case wire::kTaskError: {
                if (conn->kind != Conn::Kind::Server) break;
                wire::Reader r(frame.payload());
                std::uint64_t uid = r.u64();
                auto code = static_cast<Err>(r.u32());
                {
                    std::lock_guard lock(mu);
                    scheduler.on_task_error(uid, code);
                }
                cv.notify_all();
                break;
            }
            case wire::kServerList: {
                std::vector<ServerRecord> records;
                {
                    std::lock_guard lock(mu);
                    records = scheduler.registry().snapshot();
                }
                wire::Writer w;
                w.u32(static_cast<std::uint32_t>(records.size()));
                for (const ServerRecord& rec : records) {
                    w.u64(rec.server_id);
                    w.str(rec.address);
                    w.u32(static_cast<std::uint32_t>(rec.capacity));
                    w.u32(static_cast<std::uint32_t>(rec.inflight));
                    w.u64(rec.completed);
                    w.u8(rec.alive ? 1 : 0);
                }
                auto payload = w.take();
                send_frame(conn->fd, conn->write_mu, wire::kServerList, payload);
                break;
            }
            default:
                fail(Err::UnknownType, "unexpected msg_type " + std::to_string(frame.type));
        }
    }

    void on_disconnect(const std::shared_ptr<Conn>& conn) {
        {
            std::lock_guard lock(mu);
            if (conn->kind == Conn::Kind::Server) {
                server_conns.erase(conn->id);
                scheduler.on_server_failed(conn->id, now());
                log("server " + std::to_string(conn->id) + " disconnected");
            } else if (conn->kind == Conn::Kind::Session) {
                session_conns.erase(conn->id);
            }
        }
        {
            // close now so dead connections do not pile up; the write lock
            // keeps the close from racing an in-flight send
            std::lock_guard wlock(conn->write_mu);
            conn->fd.reset();
        }
        cv.notify_all();
    }

    void dispatch_loop() {
        std::unique_lock lock(mu);
        while (!stopping) {
            cv.wait_for(lock, std::chrono::milliseconds(20));
            if (stopping) break;

            for (std::uint64_t id :
                 scheduler.registry().check_liveness(now(), cfg.heartbeat_interval, cfg.missed_heartbeats)) {
                log("server " + std::to_string(id) + " missed heartbeats");
                scheduler.on_server_failed(id, now());
                auto it = server_conns.find(id);
                if (it != server_conns.end()) it->second->fd.shutdown_both();
                server_conns.erase(id);
            }

            deliver_failures(lock);

            while (auto assignment = scheduler.next_assignment()) {
                auto it = server_conns.find(assignment->server_id);
                auto payload = scheduler.task(assignment->uid).payload;
                std::uint64_t uid = assignment->uid;
                std::uint64_t server_id = assignment->server_id;
                if (!payload) {
                    scheduler.on_task_error(uid, Err::MalformedTask);
                    continue;
                }
                if (it == server_conns.end()) {
                    scheduler.on_server_failed(server_id, now());
                    continue;
                }
                auto conn = it->second;
                lock.unlock();
                log("assigning task " + std::to_string(uid) + " to server " +
                    std::to_string(server_id));
                wire::Writer w;
                w.u64(uid);
                auto head = w.take();
                bool sent = send_frame(conn->fd, conn->write_mu, wire::kTaskAssign, head,
                                       std::span<const std::uint8_t>(payload->data(), payload->size()));
                lock.lock();
                if (!sent) scheduler.on_server_failed(server_id, now());
                deliver_failures(lock);
            }
        }
    }

    // Reports permanently failed tasks back to their sessions.
    void deliver_failures(std::unique_lock<std::mutex>& lock) {
        auto failures = scheduler.take_failures();
        if (failures.empty()) return;
        std::vector<std::pair<std::shared_ptr<Conn>, FailedTask>> outbox;
        for (const FailedTask& f : failures) {
            auto it = session_conns.find(f.session_id);
            if (it != session_conns.end()) outbox.emplace_back(it->second, f);
        }
        lock.unlock();
        for (auto& [conn, f] : outbox) {
            wire::Writer w;
            w.u64(f.request_id);
            w.u32(static_cast<std::uint32_t>(f.error));
            w.u32(static_cast<std::uint32_t>(f.attempts));
            auto payload = w.take();
            send_frame(conn->fd, conn->write_mu, wire::kTaskError, payload);
        }
        lock.lock();
    }
};

AgentDaemon::AgentDaemon(AgentConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) {}
AgentDaemon::~AgentDaemon() { stop(); }
void AgentDaemon::start() { impl_->start(); }
void AgentDaemon::stop() { impl_->stop(); }
std::string AgentDaemon::address() const { return impl_->bound_address; }

SchedulerStats AgentDaemon::stats() const {
    std::lock_guard lock(impl_->mu);
    return impl_->scheduler.stats();
}

std::vector<ServerRecord> AgentDaemon::server_records() const {
    std::lock_guard lock(impl_->mu);
    return impl_->scheduler.registry().snapshot();
}

// ---------------------------------------------------------------------------
// Server daemon
// ---------------------------------------------------------------------------

struct ServerDaemon::Impl {
    explicit Impl(ServerConfig c) : cfg(std::move(c)) {}

    ServerConfig cfg;
    Fd agent_fd;
    std::mutex agent_write_mu;
    std::uint64_t id = 0;

    Fd listener;
    std::string listen_bound;

    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::pair<std::uint64_t, Frame>> queue;
    int busy = 0;
    bool stopping = false;
    bool killed = false;

    std::vector<std::thread> workers;
    std::thread agent_reader;
    std::thread heartbeat_thread;
    std::thread accept_thread;
    std::vector<std::thread> direct_threads;
    std::vector<int> direct_fds;
    std::mutex direct_mu;

    void log(const std::string& msg) {
        if (cfg.log) std::cerr << "[server " << id << "] " << msg << "\n";
    }

    void start() {
        if (!cfg.listen.empty()) {
            listener = Fd(listen_on(cfg.listen, listen_bound));
            accept_thread = std::thread([this] { accept_loop(); });
        }
        if (!cfg.agent.empty()) {
            agent_fd = Fd(connect_to(cfg.agent));
            std::string address = cfg.address_hint;
            if (address.empty()) address = !listen_bound.empty() ? listen_bound : local_name();
            wire::Writer w;
            w.u32(static_cast<std::uint32_t>(cfg.capacity));
            w.str(address);
            auto payload = w.take();
            if (!send_frame(agent_fd, agent_write_mu, wire::kRegister, payload))
                fail(Err::ConnectionFailed, "cannot register with agent");
            auto ack = recv_frame(agent_fd.get());
            if (!ack || ack->type != wire::kRegisterAck)
                fail(Err::ConnectionFailed, "no registration ack from agent");
            wire::Reader r(ack->payload());
            id = r.u64();
            agent_reader = std::thread([this] { agent_loop(); });
            heartbeat_thread = std::thread([this] { heartbeat_loop(); });
        }
        for (int i = 0; i < cfg.capacity; ++i)
            workers.emplace_back([this] { worker_loop(); });
    }

    std::string local_name() const {
        sockaddr_in sa{};
        socklen_t len = sizeof sa;
        ::getsockname(agent_fd.get(), reinterpret_cast<sockaddr*>(&sa), &len);
        char buf[INET_ADDRSTRLEN] = {};
        ::inet_ntop(AF_INET, &sa.sin_addr, buf, sizeof buf);
        return std::string(buf) + ":" + std::to_string(ntohs(sa.sin_port));
    }

    void agent_loop() {
        for (;;) {
            auto frame = recv_frame(agent_fd.get());
            if (!frame) {
                log("agent connection closed");
                break;
            }
            if (frame->type == wire::kTaskAssign) {
                wire::Reader r(frame->payload());
                std::uint64_t uid = r.u64();
                log("received task " + std::to_string(uid));
                {
                    std::lock_guard lock(mu);
                    if (stopping) break;
                    queue.emplace_back(uid, std::move(*frame));
                }
                // heartbeat and workers share the cv; wake everyone
                cv.notify_all();
            }
        }
        cv.notify_all();
    }

    void heartbeat_loop() {
        auto interval = std::chrono::duration<double>(cfg.heartbeat_interval);
        std::unique_lock lock(mu);
        while (!stopping) {
            cv.wait_for(lock, interval);
            if (stopping) break;
            lock.unlock();
            send_frame(agent_fd, agent_write_mu, wire::kHeartbeat, {});
            lock.lock();
        }
    }

    void worker_loop() {
        std::unique_lock lock(mu);
        for (;;) {
            cv.wait(lock, [this] { return stopping || !queue.empty(); });
            if (stopping && (killed || queue.empty())) return;
            if (queue.empty()) continue;
            auto [uid, frame] = std::move(queue.front());
            queue.pop_front();
            ++busy;
            lock.unlock();
            run_task(uid, std::span<const std::uint8_t>(frame.data.get() + 8, frame.size - 8));
            lock.lock();
            --busy;
            cv.notify_all();
        }
    }

    void run_task(std::uint64_t uid, std::span<const std::uint8_t> task) {
        auto started = Clock::now();
        wire::Writer w;
        std::uint8_t reply_type = wire::kTaskResult;
        try {
            TaskChunk chunk = decode_task(task);
            std::vector<Vec3> acc = server_compute_forces(chunk);
            w.u64(uid);
            w.u32(static_cast<std::uint32_t>(acc.size()));
            for (const Vec3& a : acc) w.vec3(a);
        } catch (const Error& e) {
            w = wire::Writer{};
            w.u64(uid);
            w.u32(static_cast<std::uint32_t>(e.code()));
            w.u32(0);
            reply_type = wire::kTaskError;
        }
        if (cfg.min_task_seconds > 0) {
            double remain = cfg.min_task_seconds - seconds_since(started);
            if (remain > 0)
                std::this_thread::sleep_for(std::chrono::duration<double>(remain));
        }
        {
            std::lock_guard lock(mu);
            if (killed) return;  // dropped mid-run; the agent reschedules
        }
        auto payload = w.take();
        send_frame(agent_fd, agent_write_mu, reply_type, payload);
    }

    // Direct path: accept a connection, serve TASK_ASSIGN frames on it.
    void accept_loop() {
        for (;;) {
            int fd = ::accept(listener.get(), nullptr, nullptr);
            if (fd < 0) {
                if (errno == EINTR) continue;
                return;
            }
            tune_socket(fd);
            std::lock_guard lock(direct_mu);
            direct_fds.push_back(fd);
            direct_threads.emplace_back([this, fd] { direct_loop(fd); });
        }
    }

    void direct_loop(int raw_fd) {
        Fd fd(raw_fd);
        std::mutex write_mu;
        for (;;) {
            auto frame = recv_frame(fd.get());
            if (!frame) return;
            if (frame->type != wire::kTaskAssign) return;
            wire::Reader r(frame->payload());
            std::uint64_t uid = r.u64();
            wire::Writer w;
            std::uint8_t reply_type = wire::kTaskResult;
            try {
                TaskChunk chunk = decode_task(
                    std::span<const std::uint8_t>(frame->data.get() + 8, frame->size - 8));
                std::vector<Vec3> acc = server_compute_forces(chunk);
                w.u64(uid);
                w.u32(static_cast<std::uint32_t>(acc.size()));
                for (const Vec3& a : acc) w.vec3(a);
            } catch (const Error& e) {
                w = wire::Writer{};
                w.u64(uid);
                w.u32(static_cast<std::uint32_t>(e.code()));
                w.u32(0);
                reply_type = wire::kTaskError;
            }
            auto payload = w.take();
            if (!send_frame(fd, write_mu, reply_type, payload)) return;
        }
    }

    void shutdown(bool abrupt) {
        {
            std::unique_lock lock(mu);
            if (stopping) return;
            if (abrupt) killed = true;
            else
                cv.wait(lock, [this] { return queue.empty() && busy == 0; });  // drain
            stopping = true;
        }
        cv.notify_all();
        agent_fd.shutdown_both();
        listener.shutdown_both();
        listener.reset();
        if (agent_reader.joinable()) agent_reader.join();
        if (heartbeat_thread.joinable()) heartbeat_thread.join();
        if (accept_thread.joinable()) accept_thread.join();
        for (auto& t : workers)
            if (t.joinable()) t.join();
        std::lock_guard lock(direct_mu);
        for (int fd : direct_fds) ::shutdown(fd, SHUT_RDWR);
        for (auto& t : direct_threads)
            if (t.joinable()) t.join();
        agent_fd.reset();
    }
};

ServerDaemon::ServerDaemon(ServerConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) {}
ServerDaemon::~ServerDaemon() { impl_->shutdown(true); }
void ServerDaemon::start() { impl_->start(); }
void ServerDaemon::stop() { impl_->shutdown(false); }
void ServerDaemon::kill() { impl_->shutdown(true); }
std::string ServerDaemon::listen_address() const { return impl_->listen_bound; }
std::uint64_t ServerDaemon::server_id() const { return impl_->id; }

// ---------------------------------------------------------------------------
// Client session
// ---------------------------------------------------------------------------

struct ClientSession::Impl {
    enum class State { Created, Initialized, HandleOpen, HandleDestructed, Finalized };

    Fd fd;
    std::mutex write_mu;
    std::uint64_t session_id = 0;
    State state = State::Created;

    std::mutex mu;
    std::condition_variable cv;
    std::map<std::uint64_t, CallResult> results;
    std::size_t outstanding = 0;
    bool connection_lost = false;
    std::uint64_t next_request_id = 1;
    std::thread reader;

    Clock::time_point t_init_start{}, t_init_end{}, t_final_start{}, t_final_end{};
    bool finalized_times = false;

    void require(State expected, const char* op) {
        if (state != expected)
            fail(Err::LifecycleViolation, std::string(op) + " called out of lifecycle order");
    }

    void reader_loop() {
        for (;;) {
            auto frame = recv_frame(fd.get());
            if (!frame) break;
            if (frame->type == wire::kTaskResult) {
                wire::Reader r(frame->payload());
                std::uint64_t request = r.u64();
                auto count = r.u32();
                CallResult res;
                res.ok = true;
                res.accels.reserve(count);
                for (std::uint32_t i = 0; i < count; ++i) res.accels.push_back(r.vec3());
                std::lock_guard lock(mu);
                if (results.emplace(request, std::move(res)).second && outstanding > 0)
                    --outstanding;
                cv.notify_all();
            } else if (frame->type == wire::kTaskError) {
                wire::Reader r(frame->payload());
                std::uint64_t request = r.u64();
                CallResult res;
                res.ok = false;
                res.error = static_cast<Err>(r.u32());
                res.attempts = static_cast<int>(r.u32());
                std::lock_guard lock(mu);
                if (results.emplace(request, std::move(res)).second && outstanding > 0)
                    --outstanding;
                cv.notify_all();
            }
        }
        std::lock_guard lock(mu);
        connection_lost = true;
        cv.notify_all();
    }
};

ClientSession::ClientSession() : impl_(std::make_unique<Impl>()) {}

ClientSession::~ClientSession() {
    if (impl_->state != Impl::State::Created && impl_->state != Impl::State::Finalized) {
        impl_->fd.shutdown_both();
        if (impl_->reader.joinable()) impl_->reader.join();
    }
}

void ClientSession::initialize(const std::string& agent_address) {
    impl_->require(Impl::State::Created, "initialize");
    impl_->t_init_start = Clock::now();
    impl_->fd = Fd(connect_to(agent_address));
    if (!send_frame(impl_->fd, impl_->write_mu, wire::kSessionOpen, {}))
        fail(Err::ConnectionFailed, "cannot open session");
    auto ack = recv_frame(impl_->fd.get());
    if (!ack || ack->type != wire::kRegisterAck) fail(Err::ConnectionFailed, "no session ack");
    wire::Reader r(ack->payload());
    impl_->session_id = r.u64();
    impl_->reader = std::thread([impl = impl_.get()] { impl->reader_loop(); });
    impl_->state = Impl::State::Initialized;
    impl_->t_init_end = Clock::now();
}

FunctionHandle ClientSession::handle_default(const std::string& function) {
    impl_->require(Impl::State::Initialized, "handle_default");
    impl_->state = Impl::State::HandleOpen;
    FunctionHandle h;
    h.function = function;
    h.session_id = impl_->session_id;
    h.valid = true;
    return h;
}

std::uint64_t ClientSession::call_async(const FunctionHandle& handle, const TaskChunk& chunk) {
    if (impl_->state != Impl::State::HandleOpen || !handle.valid ||
        handle.session_id != impl_->session_id)
        fail(Err::LifecycleViolation, "call_async requires a live handle");

    std::uint64_t request;
    {
        std::lock_guard lock(impl_->mu);
        if (impl_->connection_lost) fail(Err::ConnectionFailed, "agent connection lost");
        request = impl_->next_request_id++;
        ++impl_->outstanding;
    }
    wire::Writer w;
    w.u64(impl_->session_id);
    w.u64(request);
    w.str(handle.function);
    auto head = w.take();
    auto task = encode_task(chunk);
    if (!send_frame(impl_->fd, impl_->write_mu, wire::kTaskSubmit, head, task)) {
        std::lock_guard lock(impl_->mu);
        --impl_->outstanding;
        fail(Err::ConnectionFailed, "agent connection lost");
    }
    return request;
}

std::map<std::uint64_t, CallResult> ClientSession::wait_all() {
    if (impl_->state != Impl::State::HandleOpen && impl_->state != Impl::State::Initialized &&
        impl_->state != Impl::State::HandleDestructed)
        fail(Err::LifecycleViolation, "wait_all outside an initialized session");
    std::unique_lock lock(impl_->mu);
    impl_->cv.wait(lock, [&] { return impl_->outstanding == 0 || impl_->connection_lost; });
    if (impl_->outstanding > 0)
        fail(Err::ConnectionFailed, "agent connection lost with calls outstanding");
    auto out = std::move(impl_->results);
    impl_->results.clear();
    return out;
}

void ClientSession::handle_destruct(FunctionHandle& handle) {
    impl_->require(Impl::State::HandleOpen, "handle_destruct");
    handle.valid = false;
    impl_->state = Impl::State::HandleDestructed;
}

void ClientSession::finalize() {
    if (impl_->state == Impl::State::Created || impl_->state == Impl::State::Finalized)
        fail(Err::LifecycleViolation, "finalize requires an initialized session");
    impl_->t_final_start = Clock::now();
    auto payload = u64_payload(impl_->session_id);
    send_frame(impl_->fd, impl_->write_mu, wire::kSessionClose, payload);
    impl_->fd.shutdown_both();
    if (impl_->reader.joinable()) impl_->reader.join();
    impl_->fd.reset();
    impl_->state = Impl::State::Finalized;
    impl_->t_final_end = Clock::now();
    impl_->finalized_times = true;
}

SessionTimes ClientSession::times() const {
    SessionTimes t;
    if (!impl_->finalized_times) return t;
    t.init_s = std::chrono::duration<double>(impl_->t_init_end - impl_->t_init_start).count();
    t.compute_s = std::chrono::duration<double>(impl_->t_final_start - impl_->t_init_end).count();
    t.finalize_s = std::chrono::duration<double>(impl_->t_final_end - impl_->t_final_start).count();
    t.total_s = std::chrono::duration<double>(impl_->t_final_end - impl_->t_init_start).count();
    return t;
}

std::uint64_t ClientSession::session_id() const { return impl_->session_id; }

std::vector<ServerRecord> fabric_server_list(const std::string& agent_address) {
    Fd fd(connect_to(agent_address));
    std::mutex write_mu;
    if (!send_frame(fd, write_mu, wire::kServerList, {}))
        fail(Err::ConnectionFailed, "cannot query agent");
    auto frame = recv_frame(fd.get());
    if (!frame || frame->type != wire::kServerList)
        fail(Err::ConnectionFailed, "no server list from agent");
    wire::Reader r(frame->payload());
    auto count = r.u32();
    std::vector<ServerRecord> records;
    records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        ServerRecord rec;
        rec.server_id = r.u64();
        rec.address = r.str();
        rec.capacity = static_cast<int>(r.u32());
        rec.inflight = static_cast<int>(r.u32());
        rec.completed = r.u64();
        rec.alive = r.u8() != 0;
        records.push_back(std::move(rec));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Self-hosted fabric
// ---------------------------------------------------------------------------

SelfHostedFabric::SelfHostedFabric(int servers, int capacity_each, double min_task_seconds) {
    AgentConfig acfg;
    acfg.listen = "127.0.0.1:0";
    agent_ = std::make_unique<AgentDaemon>(acfg);
    agent_->start();
    for (int i = 0; i < servers; ++i) {
        ServerConfig scfg;
        scfg.agent = agent_->address();
        scfg.capacity = capacity_each;
        scfg.min_task_seconds = min_task_seconds;
        scfg.address_hint = "local-server-" + std::to_string(i);
        auto server = std::make_unique<ServerDaemon>(scfg);
        // start() blocks on the registration ack, so the agent's registry
        // already lists the server when this returns.
        server->start();
        servers_.push_back(std::move(server));
    }
}

SelfHostedFabric::~SelfHostedFabric() { stop(); }

std::string SelfHostedFabric::agent_address() const { return agent_->address(); }

void SelfHostedFabric::stop() {
    for (auto& s : servers_)
        if (s) s->kill();
    servers_.clear();
    if (agent_) agent_->stop();
    agent_.reset();
}

}  // namespace gravfarm
