#include "gravfarm/orb.hpp"

#include <algorithm>
#include <numeric>

#include "gravfarm/error.hpp"
#include "gravfarm/wire.hpp"

namespace gravfarm {

namespace {

struct SplitJob {
    std::int32_t node = -1;
    std::int32_t begin = 0, count = 0;  // span of body indices
    int rank_begin = 0, rank_count = 0;
    BoundingBox box;
};

}  // namespace

OrbResult orb_partition(const std::vector<Body>& bodies, int rank_count) {
    const auto n = static_cast<std::int32_t>(bodies.size());
    if (rank_count < 1 || rank_count > n)
        fail(Err::InvalidRankCount, "P = " + std::to_string(rank_count) + ", N = " + std::to_string(n));

    OrbResult res;
    OrbPartition& part = res.partition;
    part.rank_count = rank_count;
    part.root_box = bounding_cube(bodies);
    part.rank_domain.resize(rank_count);
    res.rank_of_body.assign(n, 0);

    // rank r owns target(r) bodies; the first N % P ranks take the remainder
    auto target = [&](int r) { return n / rank_count + (r < n % rank_count ? 1 : 0); };

    std::vector<std::int32_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    part.nodes.emplace_back();
    std::vector<SplitJob> stack = {{0, 0, n, 0, rank_count, part.root_box}};
    while (!stack.empty()) {
        SplitJob job = stack.back();
        stack.pop_back();
        if (job.rank_count == 1) {
            OrbNode& leaf = part.nodes[job.node];
            leaf.rank = job.rank_begin;
            leaf.domain = job.box;
            part.rank_domain[job.rank_begin] = job.box;
            for (std::int32_t i = job.begin; i < job.begin + job.count; ++i)
                res.rank_of_body[order[i]] = job.rank_begin;
            continue;
        }

        // Longest extent of the current subset keeps domain aspect ratios down.
        Vec3 lo = bodies[order[job.begin]].pos, hi = lo;
        for (std::int32_t i = job.begin; i < job.begin + job.count; ++i) {
            const Vec3& p = bodies[order[i]].pos;
            for (int k = 0; k < 3; ++k) {
                lo[k] = std::fmin(lo[k], p[k]);
                hi[k] = std::fmax(hi[k], p[k]);
            }
        }
        int axis = 0;
        double extent = hi.x - lo.x;
        if (hi.y - lo.y > extent) { axis = 1; extent = hi.y - lo.y; }
        if (hi.z - lo.z > extent) { axis = 2; }

        int ranks_low = (job.rank_count + 1) / 2;
        std::int32_t n_low = 0;
        for (int r = 0; r < ranks_low; ++r) n_low += target(job.rank_begin + r);

        auto first = order.begin() + job.begin;
        auto nth = first + n_low;
        auto last = first + job.count;
        std::nth_element(first, nth, last, [&](std::int32_t a, std::int32_t b) {
            double pa = bodies[a].pos[axis], pb = bodies[b].pos[axis];
            if (pa != pb) return pa < pb;
            return bodies[a].id < bodies[b].id;  // exact count balance on ties
        });
        double coord = bodies[*nth].pos[axis];  // low side takes pos < coord

        OrbNode& node = part.nodes[job.node];
        node.axis = axis;
        node.coord = coord;
        node.low = static_cast<std::int32_t>(part.nodes.size());
        node.high = node.low + 1;
        part.nodes.emplace_back();
        part.nodes.emplace_back();

        BoundingBox low_box = job.box, high_box = job.box;
        low_box.max[axis] = coord;
        high_box.min[axis] = coord;
        stack.push_back({node.low, job.begin, n_low, job.rank_begin, ranks_low, low_box});
        stack.push_back({node.high, job.begin + n_low, job.count - n_low,
                         job.rank_begin + ranks_low, job.rank_count - ranks_low, high_box});
    }

    return res;
}

int locate_rank(const OrbPartition& part, const Vec3& pos) {
    if (!part.root_box.contains(pos)) fail(Err::OutOfDomain, "position outside the root box");
    std::int32_t ni = 0;
    while (part.nodes[ni].axis >= 0) {
        const OrbNode& node = part.nodes[ni];
        ni = pos[node.axis] < node.coord ? node.low : node.high;
    }
    return part.nodes[ni].rank;
}

EssentialNodeSet collect_essential_nodes(const Tree& t, const BoundingBox& remote_domain,
                                         double theta, int source_rank, int dest_rank) {
    EssentialNodeSet set;
    set.source_rank = source_rank;
    set.dest_rank = dest_rank;
    const double theta2 = theta * theta;

    std::vector<std::int32_t> stack = {0};
    while (!stack.empty()) {
        std::int32_t ci = stack.back();
        stack.pop_back();
        const Cell& c = t.cells[ci];

        double s = c.box.side();
        double dmin2 = remote_domain.dist2(c.com);
        // Any remote body is at least d_min away, so it would accept this cell.
        if (s * s < theta2 * dmin2) {
            EssentialEntry e;
            e.tag = 0x01;
            e.mass = c.total_mass;
            e.com = c.com;
            e.side = s;
            set.entries.push_back(e);
            continue;
        }
        if (c.is_leaf()) {
            for (std::int32_t k = c.body_begin; k < c.body_begin + c.body_count; ++k) {
                EssentialEntry e;
                e.tag = 0x00;
                e.body = t.bodies[t.body_order[k]];
                set.entries.push_back(e);
            }
            continue;
        }
        for (std::int32_t k = c.child_count - 1; k >= 0; --k) stack.push_back(c.first_child + k);
    }
    return set;
}

void merge_essential(Tree& t, const std::vector<EssentialNodeSet>& sets) {
    if (t.has_foreign_below.empty()) t.has_foreign_below.assign(t.cells.size(), 0);

    for (const EssentialNodeSet& set : sets) {
        for (const EssentialEntry& e : set.entries) {
            ForeignEntry f;
            if (e.tag == 0x00) {
                f.mass = e.body.mass;
                f.pos = e.body.pos;
                f.side = 0.0;
            } else {
                f.mass = e.mass;
                f.pos = e.com;
                f.side = e.side;
            }
            if (!t.root_box().contains(f.pos))
                fail(Err::ForeignNodeOutsideRoot, "foreign node outside the root box");

            // Route to the deepest existing cell whose box holds the position.
            std::int32_t ci = 0;
            for (;;) {
                t.has_foreign_below[ci] = 1;
                const Cell& c = t.cells[ci];
                if (c.is_leaf()) break;
                Vec3 mid = c.box.center();
                int oct = (f.pos.x >= mid.x ? 1 : 0) | (f.pos.y >= mid.y ? 2 : 0) |
                          (f.pos.z >= mid.z ? 4 : 0);
                std::int32_t next = -1;
                for (std::int32_t k = 0; k < c.child_count; ++k) {
                    if (t.cells[c.first_child + k].octant == oct) {
                        next = c.first_child + k;
                        break;
                    }
                }
                if (next < 0) break;  // empty octant: attach here
                ci = next;
            }
            t.foreign[ci].push_back(f);
            ++t.foreign_count;
        }
    }
}

std::vector<std::uint8_t> encode_essential_set(const EssentialNodeSet& set) {
    wire::Writer w;
    w.u32(static_cast<std::uint32_t>(set.source_rank));
    w.u32(static_cast<std::uint32_t>(set.dest_rank));
    w.u32(static_cast<std::uint32_t>(set.entries.size()));
    for (const EssentialEntry& e : set.entries) {
        w.u8(e.tag);
        if (e.tag == 0x00) {
            w.body(e.body);
        } else {
            w.f64(e.mass);
            w.vec3(e.com);
            w.f64(e.side);
        }
    }
    return w.take();
}

EssentialNodeSet decode_essential_set(std::span<const std::uint8_t> bytes) {
    wire::Reader r(bytes);
    EssentialNodeSet set;
    set.source_rank = static_cast<int>(r.u32());
    set.dest_rank = static_cast<int>(r.u32());
    auto count = r.u32();
    set.entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        EssentialEntry e;
        e.tag = r.u8();
        if (e.tag == 0x00) {
            e.body = r.body();
        } else if (e.tag == 0x01) {
            e.mass = r.f64();
            e.com = r.vec3();
            e.side = r.f64();
        } else {
            fail(Err::MalformedTask, "unknown essential entry tag");
        }
        set.entries.push_back(e);
    }
    if (!r.done()) fail(Err::MalformedTask, "trailing bytes in essential set");
    return set;
}

}  // namespace gravfarm
