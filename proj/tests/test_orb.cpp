#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "gravfarm/bench.hpp"
#include "gravfarm/error.hpp"
#include "gravfarm/orb.hpp"

using namespace gravfarm;

TEST_CASE("P = 1 keeps everything in rank 0 with the root domain") {
    auto bodies = generate_bodies(32, Distribution::Uniform, 1);
    auto res = orb_partition(bodies, 1);
    CHECK(res.partition.rank_count == 1);
    for (int r : res.rank_of_body) CHECK(r == 0);
    CHECK(locate_rank(res.partition, bodies[5].pos) == 0);
}

TEST_CASE("rank count bounds are enforced") {
    auto bodies = generate_bodies(8, Distribution::Uniform, 2);
    CHECK_THROWS_AS(orb_partition(bodies, 0), Error);
    CHECK_THROWS_AS(orb_partition(bodies, 9), Error);
}

TEST_CASE("four collinear bodies split at the median") {
    std::vector<Body> bodies(4);
    for (int i = 0; i < 4; ++i) {
        bodies[i].id = i;
        bodies[i].mass = 1.0;
        bodies[i].pos = {double(i + 1), 0.1 * i, 0.0};
    }
    auto res = orb_partition(bodies, 2);
    CHECK(res.rank_of_body[0] == 0);
    CHECK(res.rank_of_body[1] == 0);
    CHECK(res.rank_of_body[2] == 1);
    CHECK(res.rank_of_body[3] == 1);
    CHECK(locate_rank(res.partition, {1.5, 0, 0}) == 0);
}

TEST_CASE("1000 bodies over 8 ranks balance exactly") {
    auto bodies = generate_bodies(1000, Distribution::Uniform, 3);
    auto res = orb_partition(bodies, 8);
    std::vector<int> counts(8, 0);
    for (int r : res.rank_of_body) counts[r]++;
    for (int c : counts) CHECK(c == 125);
}

TEST_CASE("uneven rank counts stay within one body") {
    auto bodies = generate_bodies(1000, Distribution::Uniform, 4);
    for (int P : {3, 6, 7}) {
        auto res = orb_partition(bodies, P);
        std::vector<int> counts(P, 0);
        for (int r : res.rank_of_body) counts[r]++;
        int lo = *std::min_element(counts.begin(), counts.end());
        int hi = *std::max_element(counts.begin(), counts.end());
        CHECK(hi - lo <= 1);
    }
}

TEST_CASE("locate_rank agrees with the assignment for every body") {
    auto bodies = generate_bodies(512, Distribution::Uniform, 5);
    auto res = orb_partition(bodies, 4);
    for (std::size_t i = 0; i < bodies.size(); ++i)
        CHECK(locate_rank(res.partition, bodies[i].pos) == res.rank_of_body[i]);
}

TEST_CASE("rank domains tile the root box") {
    auto bodies = generate_bodies(256, Distribution::Uniform, 6);
    auto res = orb_partition(bodies, 8);
    const BoundingBox& root = res.partition.root_box;
    double vol = 0;
    for (const BoundingBox& d : res.partition.rank_domain)
        vol += (d.max.x - d.min.x) * (d.max.y - d.min.y) * (d.max.z - d.min.z);
    double root_vol = (root.max.x - root.min.x) * (root.max.y - root.min.y) *
                      (root.max.z - root.min.z);
    CHECK(vol == doctest::Approx(root_vol).epsilon(1e-12));
    CHECK_THROWS_AS(locate_rank(res.partition, {root.max.x + 1, 0, 0}), Error);
}

TEST_CASE("own-domain collection degenerates to raw bodies") {
    auto bodies = generate_bodies(64, Distribution::Uniform, 7);
    Tree t = build_tree(bodies, 1);
    compute_mass_moments(t);
    auto set = collect_essential_nodes(t, t.root_box(), 0.5);
    CHECK(set.entries.size() == 64);
    for (const EssentialEntry& e : set.entries) CHECK(e.tag == 0x00);
}

TEST_CASE("a far remote domain receives only the root summary") {
    auto bodies = generate_bodies(64, Distribution::Uniform, 8);
    Tree t = build_tree(bodies, 1);
    compute_mass_moments(t);
    BoundingBox far{{100, 0, 0}, {101, 1, 1}};
    auto set = collect_essential_nodes(t, far, 0.5);
    REQUIRE(set.entries.size() == 1);
    CHECK(set.entries[0].tag == 0x01);
    CHECK(set.entries[0].mass == doctest::Approx(t.cells[0].total_mass));
}

TEST_CASE("essential set encoding round-trips") {
    auto bodies = generate_bodies(32, Distribution::Uniform, 9);
    Tree t = build_tree(bodies, 2);
    compute_mass_moments(t);
    BoundingBox box{{2, 2, 2}, {3, 3, 3}};
    auto set = collect_essential_nodes(t, box, 0.5, 1, 2);
    auto bytes = encode_essential_set(set);
    auto back = decode_essential_set(bytes);
    CHECK(back.source_rank == 1);
    CHECK(back.dest_rank == 2);
    REQUIRE(back.entries.size() == set.entries.size());
    for (std::size_t i = 0; i < set.entries.size(); ++i) {
        CHECK(back.entries[i].tag == set.entries[i].tag);
        if (set.entries[i].tag == 0x01) {
            CHECK(back.entries[i].mass == set.entries[i].mass);
            CHECK(back.entries[i].side == set.entries[i].side);
            CHECK(back.entries[i].com.x == set.entries[i].com.x);
        } else {
            CHECK(back.entries[i].body.id == set.entries[i].body.id);
            CHECK(back.entries[i].body.pos.x == set.entries[i].body.pos.x);
        }
    }
}

TEST_CASE("merging an empty set list leaves the tree unchanged") {
    auto bodies = generate_bodies(32, Distribution::Uniform, 10);
    Tree t = build_tree(bodies, 1);
    compute_mass_moments(t);
    auto before = build_interaction_list(t, bodies[3], 0.5);
    merge_essential(t, {});
    auto after = build_interaction_list(t, bodies[3], 0.5);
    CHECK(before.size() == after.size());
    CHECK(t.foreign_count == 0);
}

TEST_CASE("a single far foreign summary adds exactly one entry per body") {
    auto bodies = generate_bodies(32, Distribution::Uniform, 11);
    // widen the root so the foreign node fits inside it
    BoundingBox root{{-10, -10, -10}, {12, 12, 12}};
    Tree t = build_tree(bodies, 1, root);
    compute_mass_moments(t);

    std::vector<std::size_t> before;
    for (const Body& b : bodies) before.push_back(build_interaction_list(t, b, 0.5).size());

    EssentialNodeSet set;
    set.source_rank = 1;
    set.dest_rank = 0;
    EssentialEntry e;
    e.tag = 0x01;
    e.mass = 7.5;
    e.com = {11, 11, 11};
    e.side = 0.5;
    set.entries.push_back(e);
    merge_essential(t, {set});

    for (std::size_t i = 0; i < bodies.size(); ++i) {
        auto list = build_interaction_list(t, bodies[i], 0.5);
        CHECK(list.size() == before[i] + 1);
        int found = 0;
        for (const InteractionEntry& entry : list)
            if (entry.mass == 7.5 && entry.pos.x == 11.0) ++found;
        CHECK(found == 1);
    }
}

TEST_CASE("foreign nodes outside the root box are rejected") {
    auto bodies = generate_bodies(16, Distribution::Uniform, 12);
    Tree t = build_tree(bodies, 1);
    compute_mass_moments(t);
    EssentialNodeSet set;
    EssentialEntry e;
    e.tag = 0x01;
    e.mass = 1.0;
    e.com = {1e6, 0, 0};
    e.side = 1.0;
    set.entries.push_back(e);
    CHECK_THROWS_AS(merge_essential(t, {set}), Error);
}

TEST_CASE("two-domain exchange reproduces every pairwise term at theta = 0") {
    auto bodies = generate_bodies(128, Distribution::Uniform, 13);
    const double eps = 0.025;
    auto res = orb_partition(bodies, 2);

    std::vector<std::vector<Body>> local(2);
    std::vector<std::vector<std::size_t>> gidx(2);
    for (std::size_t i = 0; i < bodies.size(); ++i) {
        local[res.rank_of_body[i]].push_back(bodies[i]);
        gidx[res.rank_of_body[i]].push_back(i);
    }

    std::vector<Tree> trees;
    for (int r = 0; r < 2; ++r) {
        trees.push_back(build_tree(local[r], 1, res.partition.root_box));
        compute_mass_moments(trees.back());
    }
    for (int dst = 0; dst < 2; ++dst) {
        int src = 1 - dst;
        auto set = collect_essential_nodes(trees[src], res.partition.rank_domain[dst], 0.0, src, dst);
        auto decoded = decode_essential_set(encode_essential_set(set));
        merge_essential(trees[dst], {decoded});
    }

    auto oracle = brute_force_accels(bodies, eps, 1.0);
    double num = 0, den = 0;
    for (int r = 0; r < 2; ++r) {
        for (std::size_t i = 0; i < local[r].size(); ++i) {
            auto list = build_interaction_list(trees[r], local[r][i], 0.0);
            CHECK(list.size() == bodies.size() - 1);
            Vec3 a = compute_force(local[r][i], list, eps, 1.0);
            num += (a - oracle[gidx[r][i]]).norm2();
            den += oracle[gidx[r][i]].norm2();
        }
    }
    CHECK(std::sqrt(num / den) <= 1e-10);
}

TEST_CASE("augmented trees are at least as accurate as the sequential treecode") {
    auto bodies = generate_bodies(256, Distribution::Uniform, 14);
    const double eps = 0.025, theta = 0.5;
    auto oracle = brute_force_accels(bodies, eps, 1.0);

    Tree global = build_tree(bodies, 1);
    compute_mass_moments(global);
    double seq_num = 0, den = 0;
    for (std::size_t i = 0; i < bodies.size(); ++i) {
        auto list = build_interaction_list(global, bodies[i], theta);
        Vec3 a = compute_force(bodies[i], list, eps, 1.0);
        seq_num += (a - oracle[i]).norm2();
        den += oracle[i].norm2();
    }
    double seq_err = std::sqrt(seq_num / den);

    for (int P : {2, 4}) {
        auto res = orb_partition(bodies, P);
        std::vector<std::vector<Body>> local(P);
        std::vector<std::vector<std::size_t>> gidx(P);
        for (std::size_t i = 0; i < bodies.size(); ++i) {
            local[res.rank_of_body[i]].push_back(bodies[i]);
            gidx[res.rank_of_body[i]].push_back(i);
        }
        std::vector<Tree> trees;
        for (int r = 0; r < P; ++r) {
            trees.push_back(build_tree(local[r], 1, res.partition.root_box));
            compute_mass_moments(trees.back());
        }
        for (int dst = 0; dst < P; ++dst) {
            std::vector<EssentialNodeSet> sets;
            for (int src = 0; src < P; ++src) {
                if (src == dst) continue;
                sets.push_back(collect_essential_nodes(trees[src], res.partition.rank_domain[dst],
                                                       theta, src, dst));
            }
            merge_essential(trees[dst], sets);
        }
        double num = 0;
        for (int r = 0; r < P; ++r) {
            for (std::size_t i = 0; i < local[r].size(); ++i) {
                auto list = build_interaction_list(trees[r], local[r][i], theta);
                Vec3 a = compute_force(local[r][i], list, eps, 1.0);
                num += (a - oracle[gidx[r][i]]).norm2();
            }
        }
        double orb_err = std::sqrt(num / den);
        CHECK(orb_err <= seq_err * (1.0 + 1e-12));
    }
}
