#include <doctest.h>

#include "gravfarm/registry.hpp"

using namespace gravfarm;

TEST_CASE("registration assigns monotonically increasing ids") {
    ServerRegistry reg;
    CHECK(reg.register_server("a:1", 2) == 0);
    CHECK(reg.register_server("b:1", 2) == 1);
    CHECK(reg.record(0).alive);
    CHECK(reg.record(0).inflight == 0);
}

TEST_CASE("a live duplicate address is rejected, a failed one may re-register") {
    ServerRegistry reg;
    auto id = reg.register_server("a:1", 2);
    CHECK_THROWS_AS(reg.register_server("a:1", 4), Error);
    reg.mark_failed(id, 1.0);
    auto id2 = reg.register_server("a:1", 4);
    CHECK(id2 == 1);                    // fresh id
    CHECK(reg.record(id).alive == false);  // old record retained for statistics
    CHECK(reg.record(id).failed_at == 1.0);
}

TEST_CASE("pick_server balances by inflight over capacity") {
    ServerRegistry reg;
    auto a = reg.register_server("a:1", 2);
    auto b = reg.register_server("b:1", 4);
    // drive the registry to A 0/2, B 3/4 through picks and completions
    for (int i = 0; i < 6; ++i) REQUIRE(reg.pick_server().has_value());
    reg.mark_completed(a);
    reg.mark_completed(a);
    reg.mark_completed(b);
    REQUIRE(reg.record(a).inflight == 0);
    REQUIRE(reg.record(b).inflight == 3);

    auto pick = reg.pick_server();
    REQUIRE(pick);
    CHECK(*pick == a);  // 0/2 beats 3/4
}

TEST_CASE("single alive server is always picked; none leaves nullopt") {
    ServerRegistry reg;
    CHECK_FALSE(reg.pick_server().has_value());
    auto id = reg.register_server("a:1", 1);
    auto pick = reg.pick_server();
    REQUIRE(pick);
    CHECK(*pick == id);
    CHECK_FALSE(reg.pick_server().has_value());  // capacity exhausted
}

TEST_CASE("heartbeat timeout marks servers failed with a simulated clock") {
    ServerRegistry reg;
    auto a = reg.register_server("a:1", 1, 0.0);
    auto b = reg.register_server("b:1", 1, 0.0);
    reg.heartbeat(a, 5.0);
    // interval 2 s, 3 missed -> cutoff is 6 s of silence
    auto failed = reg.check_liveness(6.5, 2.0, 3);
    REQUIRE(failed.size() == 1);
    CHECK(failed[0] == b);
    CHECK(reg.record(b).alive == false);
    CHECK(reg.record(a).alive == true);
    CHECK(reg.check_liveness(6.5, 2.0, 3).empty());  // no double fire
}

TEST_CASE("scheduler requeues tasks from a failed server") {
    Scheduler sched(3);
    auto a = sched.registry().register_server("a:1", 1);
    auto b = sched.registry().register_server("b:1", 1);
    auto uid = sched.submit(1, 100, {1, 2, 3});
    auto assign = sched.next_assignment();
    REQUIRE(assign);
    CHECK(assign->uid == uid);

    sched.on_server_failed(assign->server_id);
    CHECK(sched.take_failures().empty());  // attempts 1 of 3: requeued, not failed
    auto again = sched.next_assignment();
    REQUIRE(again);
    CHECK(again->uid == uid);
    CHECK(again->server_id != assign->server_id);

    auto routed = sched.on_result(uid, again->server_id);
    REQUIRE(routed);
    CHECK(routed->first == 1);
    CHECK(routed->second == 100);
    auto stats = sched.stats();
    CHECK(stats.submitted == 1);
    CHECK(stats.completed == 1);
    CHECK(stats.permanently_failed == 0);
}

TEST_CASE("a task failing max_attempts times surfaces TaskPermanentlyFailed") {
    Scheduler sched(3);
    for (int i = 0; i < 4; ++i)
        sched.registry().register_server("s" + std::to_string(i) + ":1", 1);
    auto uid = sched.submit(1, 7, {});
    for (int round = 0; round < 3; ++round) {
        auto assign = sched.next_assignment();
        REQUIRE(assign);
        sched.on_server_failed(assign->server_id);
    }
    auto failures = sched.take_failures();
    REQUIRE(failures.size() == 1);
    CHECK(failures[0].uid == uid);
    CHECK(failures[0].error == Err::TaskPermanentlyFailed);
    CHECK(failures[0].attempts == 3);
    auto stats = sched.stats();
    CHECK(stats.submitted == stats.completed + stats.permanently_failed + stats.pending +
                                 stats.assigned);
}

TEST_CASE("when every server is gone pending tasks fail with NoServersAvailable") {
    Scheduler sched(3);
    auto a = sched.registry().register_server("a:1", 1);
    sched.submit(1, 1, {});
    sched.submit(1, 2, {});
    sched.on_server_failed(a);
    CHECK_FALSE(sched.next_assignment().has_value());
    auto failures = sched.take_failures();
    CHECK(failures.size() == 2);
    for (const auto& f : failures) CHECK(f.error == Err::NoServersAvailable);
}

TEST_CASE("stale results after reassignment are ignored") {
    Scheduler sched(3);
    auto a = sched.registry().register_server("a:1", 1);
    auto b = sched.registry().register_server("b:1", 1);
    auto uid = sched.submit(1, 5, {});
    auto first = sched.next_assignment();
    REQUIRE(first);
    sched.on_server_failed(first->server_id);
    auto second = sched.next_assignment();
    REQUIRE(second);
    CHECK_FALSE(sched.on_result(uid, first->server_id).has_value());
    CHECK(sched.on_result(uid, second->server_id).has_value());
    CHECK(sched.stats().completed == 1);
}

TEST_CASE("accounting identity holds through a random op mix") {
    Scheduler sched(3);
    std::uint64_t s0 = sched.registry().register_server("a:1", 2);
    std::uint64_t s1 = sched.registry().register_server("b:1", 2);
    std::uint64_t s2 = sched.registry().register_server("c:1", 2);
    std::uint64_t seed = 12345;
    auto rng = [&seed] {
        seed = seed * 6364136223846793005ull + 1442695040888963407ull;
        return seed >> 33;
    };
    std::vector<Assignment> live;
    int submitted = 0;
    for (int step = 0; step < 500; ++step) {
        switch (rng() % 4) {
            case 0:
                sched.submit(1, step, {});
                ++submitted;
                break;
            case 1:
                if (auto a = sched.next_assignment()) live.push_back(*a);
                break;
            case 2:
                if (!live.empty()) {
                    auto a = live.back();
                    live.pop_back();
                    sched.on_result(a.uid, a.server_id);
                }
                break;
            case 3:
                if (step % 97 == 0) {
                    std::uint64_t sid = (rng() % 2) ? s0 : s1;
                    sched.on_server_failed(sid);
                    std::erase_if(live, [&](const Assignment& a) { return a.server_id == sid; });
                    // bring it back under a fresh id so work keeps flowing
                    std::uint64_t fresh = sched.registry().register_server(
                        "r" + std::to_string(step) + ":1", 2);
                    (s0 == sid ? s0 : s1) = fresh;
                }
                break;
        }
        auto st = sched.stats();
        CHECK(st.submitted == st.completed + st.permanently_failed + st.pending + st.assigned);
        CHECK(st.submitted == static_cast<std::uint64_t>(submitted));
        for (const ServerRecord& r : sched.registry().snapshot()) {
            CHECK(r.inflight >= 0);
            if (r.alive) CHECK(r.inflight <= r.capacity);
        }
    }
    (void)s2;
}

TEST_CASE("100 tasks over 4 equal servers stay within ten percent of even") {
    Scheduler sched(3);
    std::vector<std::uint64_t> servers;
    for (int i = 0; i < 4; ++i)
        servers.push_back(sched.registry().register_server("s" + std::to_string(i) + ":1", 1));

    std::vector<int> completed(4, 0);
    for (int i = 0; i < 100; ++i) sched.submit(1, i, {});
    // equal-latency simulation: assign until full, then complete in fifo order
    std::deque<Assignment> running;
    while (true) {
        while (auto a = sched.next_assignment()) running.push_back(*a);
        if (running.empty()) break;
        auto a = running.front();
        running.pop_front();
        sched.on_result(a.uid, a.server_id);
        for (std::size_t s = 0; s < servers.size(); ++s)
            if (servers[s] == a.server_id) completed[s]++;
    }
    for (int c : completed) {
        CHECK(c >= 22);  // 25 +- 10%
        CHECK(c <= 28);
    }
}
