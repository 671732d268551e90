#include "gravfarm/tree.hpp"

#include <algorithm>
#include <array>
#include <numeric>

#include "gravfarm/error.hpp"

namespace gravfarm {

namespace {

// Octant index: bit k set when pos[k] >= mid[k]. A body exactly on a
// splitting plane goes to the high child, matching the < / >= tie rule
// used everywhere a plane is compared.
int octant_of(const Vec3& p, const Vec3& mid) {
    return (p.x >= mid.x ? 1 : 0) | (p.y >= mid.y ? 2 : 0) | (p.z >= mid.z ? 4 : 0);
}

BoundingBox octant_box(const BoundingBox& box, const Vec3& mid, int oct) {
    BoundingBox b = box;
    for (int k = 0; k < 3; ++k) {
        if (oct & (1 << k)) b.min[k] = mid[k];
        else b.max[k] = mid[k];
    }
    return b;
}

}  // namespace

BoundingBox bounding_cube(const std::vector<Body>& bodies) {
    if (bodies.empty()) fail(Err::EmptyInput, "no bodies");
    Vec3 lo = bodies.front().pos, hi = bodies.front().pos;
    for (const Body& b : bodies) {
        if (!b.pos.finite()) fail(Err::InvalidInput, "non-finite body position");
        for (int k = 0; k < 3; ++k) {
            lo[k] = std::fmin(lo[k], b.pos[k]);
            hi[k] = std::fmax(hi[k], b.pos[k]);
        }
    }
    Vec3 c = {0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y), 0.5 * (lo.z + hi.z)};
    double side = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
    if (side == 0.0) side = 1.0;  // coincident input; any positive cube works
    side *= 1.0 + 1e-9;           // boundary bodies fall strictly inside
    double h = 0.5 * side;
    return {{c.x - h, c.y - h, c.z - h}, {c.x + h, c.y + h, c.z + h}};
}

Tree build_tree(const std::vector<Body>& bodies, int leaf_capacity) {
    return build_tree(bodies, leaf_capacity, bounding_cube(bodies));
}

Tree build_tree(const std::vector<Body>& bodies, int leaf_capacity, const BoundingBox& root) {
    if (bodies.empty()) fail(Err::EmptyInput, "no bodies");
    if (leaf_capacity < 1) fail(Err::InvalidInput, "leaf_capacity must be >= 1");

    Tree t;
    t.bodies = bodies;
    t.body_order.resize(bodies.size());
    std::iota(t.body_order.begin(), t.body_order.end(), 0);

    Cell rootCell;
    rootCell.box = root;
    rootCell.body_begin = 0;
    rootCell.body_count = static_cast<std::int32_t>(bodies.size());
    t.cells.push_back(rootCell);

    std::vector<std::int32_t> stack = {0};
    std::vector<std::int32_t> scratch(bodies.size());

    while (!stack.empty()) {
        std::int32_t ci = stack.back();
        stack.pop_back();
        // cells may reallocate below; copy the fields we need
        BoundingBox box = t.cells[ci].box;
        std::int32_t begin = t.cells[ci].body_begin;
        std::int32_t count = t.cells[ci].body_count;
        int depth = t.cells[ci].depth;

        t.max_depth = std::max(t.max_depth, depth);
        if (count <= leaf_capacity) continue;
        if (depth >= kMaxTreeDepth) {
            t.depth_capped = true;  // coincident bodies share this leaf
            continue;
        }

        Vec3 mid = box.center();
        std::array<std::int32_t, 8> bucket_count{};
        for (std::int32_t i = begin; i < begin + count; ++i)
            ++bucket_count[octant_of(t.bodies[t.body_order[i]].pos, mid)];

        std::array<std::int32_t, 8> offset{};
        std::int32_t run = begin;
        for (int o = 0; o < 8; ++o) {
            offset[o] = run;
            run += bucket_count[o];
        }

        std::array<std::int32_t, 8> cursor = offset;
        for (std::int32_t i = begin; i < begin + count; ++i) {
            std::int32_t bi = t.body_order[i];
            scratch[cursor[octant_of(t.bodies[bi].pos, mid)]++] = bi;
        }
        std::copy(scratch.begin() + begin, scratch.begin() + begin + count,
                  t.body_order.begin() + begin);

        auto first_child = static_cast<std::int32_t>(t.cells.size());
        std::int32_t created = 0;
        for (int o = 0; o < 8; ++o) {
            if (bucket_count[o] == 0) continue;
            Cell child;
            child.box = octant_box(box, mid, o);
            child.body_begin = offset[o];
            child.body_count = bucket_count[o];
            child.octant = static_cast<std::uint8_t>(o);
            child.depth = static_cast<std::uint8_t>(depth + 1);
            t.cells.push_back(child);
            ++created;
        }
        t.cells[ci].first_child = first_child;
        t.cells[ci].child_count = created;
        for (std::int32_t c = 0; c < created; ++c) stack.push_back(first_child + c);
    }

    return t;
}

void compute_mass_moments(Tree& t) {
    // Children always sit after their parent, so a reverse sweep is bottom-up.
    for (auto i = static_cast<std::int64_t>(t.cells.size()) - 1; i >= 0; --i) {
        Cell& c = t.cells[i];
        double m = 0.0;
        Vec3 weighted{};
        if (c.is_leaf()) {
            for (std::int32_t k = c.body_begin; k < c.body_begin + c.body_count; ++k) {
                const Body& b = t.bodies[t.body_order[k]];
                m += b.mass;
                weighted += b.mass * b.pos;
            }
        } else {
            for (std::int32_t k = 0; k < c.child_count; ++k) {
                const Cell& child = t.cells[c.first_child + k];
                m += child.total_mass;
                weighted += child.total_mass * child.com;
            }
        }
        c.total_mass = m;
        c.com = m > 0.0 ? (1.0 / m) * weighted : c.box.center();
    }
    t.has_moments = true;
}

namespace {

void append_foreign_direct(const Tree& t, std::int32_t ci, InteractionList& out) {
    auto it = t.foreign.find(ci);
    if (it == t.foreign.end()) return;
    for (const ForeignEntry& f : it->second) out.push_back({f.mass, f.pos});
}

// Every foreign entry below ci, each as its own interaction candidate.
void append_foreign_subtree(const Tree& t, std::int32_t ci, InteractionList& out) {
    if (!t.has_foreign_below[ci]) return;
    append_foreign_direct(t, ci, out);
    const Cell& c = t.cells[ci];
    for (std::int32_t k = 0; k < c.child_count; ++k)
        append_foreign_subtree(t, c.first_child + k, out);
}

}  // namespace

void build_interaction_list(const Tree& t, const Body& body, double theta, InteractionList& out) {
    out.clear();
    const double theta2 = theta * theta;
    const bool any_foreign = t.foreign_count > 0;

    std::vector<std::int32_t> stack;
    stack.reserve(64);
    stack.push_back(0);
    while (!stack.empty()) {
        std::int32_t ci = stack.back();
        stack.pop_back();
        const Cell& c = t.cells[ci];

        double s = c.box.side();
        double d2 = (body.pos - c.com).norm2();
        // Accept distant cells whole; a cell around the body is always opened.
        if (s * s < theta2 * d2 && !c.box.contains(body.pos)) {
            out.push_back({c.total_mass, c.com});
            if (any_foreign && t.has_foreign_below[ci]) append_foreign_subtree(t, ci, out);
            continue;
        }
        if (c.is_leaf()) {
            for (std::int32_t k = c.body_begin; k < c.body_begin + c.body_count; ++k) {
                const Body& b = t.bodies[t.body_order[k]];
                if (b.id == body.id) continue;
                out.push_back({b.mass, b.pos});
            }
            if (any_foreign) append_foreign_direct(t, ci, out);
            continue;
        }
        if (any_foreign) append_foreign_direct(t, ci, out);  // entries in empty octants
        for (std::int32_t k = c.child_count - 1; k >= 0; --k) stack.push_back(c.first_child + k);
    }
}

InteractionList build_interaction_list(const Tree& t, const Body& body, double theta) {
    InteractionList out;
    build_interaction_list(t, body, theta, out);
    return out;
}

Vec3 compute_force(const Body& body, const InteractionList& list, double eps, double g_const) {
    const double eps2 = eps * eps;
    Vec3 a{};
    for (const InteractionEntry& e : list) {
        Vec3 dr = e.pos - body.pos;
        double r2 = dr.norm2() + eps2;
        if (r2 == 0.0) fail(Err::SingularInteraction, "zero separation with eps = 0");
        double inv = g_const * e.mass / (r2 * std::sqrt(r2));
        a += inv * dr;
    }
    return a;
}

std::vector<Vec3> brute_force_accels(const std::vector<Body>& bodies, double eps, double g_const) {
    const std::size_t n = bodies.size();
    std::vector<std::size_t> by_id(n);
    std::iota(by_id.begin(), by_id.end(), 0);
    std::sort(by_id.begin(), by_id.end(),
              [&](std::size_t a, std::size_t b) { return bodies[a].id < bodies[b].id; });

    const double eps2 = eps * eps;
    std::vector<Vec3> acc(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Body& bi = bodies[i];
        Vec3 a{};
        for (std::size_t jj = 0; jj < n; ++jj) {
            const Body& bj = bodies[by_id[jj]];
            if (bj.id == bi.id) continue;
            Vec3 dr = bj.pos - bi.pos;
            double r2 = dr.norm2() + eps2;
            if (r2 == 0.0) fail(Err::SingularInteraction, "zero separation with eps = 0");
            a += (g_const * bj.mass / (r2 * std::sqrt(r2))) * dr;
        }
        acc[i] = a;
    }
    return acc;
}

std::vector<Body> step_leapfrog(const std::vector<Body>& bodies, const SimParams& params,
                                const AccelFn& accel_fn) {
    if (params.dt <= 0.0) fail(Err::InvalidInput, "dt must be positive");
    std::vector<Body> out = bodies;
    const double half_dt = 0.5 * params.dt;
    for (Body& b : out) {
        b.vel += half_dt * b.acc;
        b.pos += params.dt * b.vel;
    }
    std::vector<Vec3> acc = accel_fn(out);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].acc = acc[i];
        out[i].vel += half_dt * acc[i];
    }
    return out;
}

double total_energy(const std::vector<Body>& bodies, double eps, double g_const) {
    const std::size_t n = bodies.size();
    std::vector<std::size_t> by_id(n);
    std::iota(by_id.begin(), by_id.end(), 0);
    std::sort(by_id.begin(), by_id.end(),
              [&](std::size_t a, std::size_t b) { return bodies[a].id < bodies[b].id; });

    const double eps2 = eps * eps;
    double kinetic = 0.0, potential = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Body& bi = bodies[by_id[i]];
        kinetic += 0.5 * bi.mass * bi.vel.norm2();
        for (std::size_t j = i + 1; j < n; ++j) {
            const Body& bj = bodies[by_id[j]];
            double r2 = (bj.pos - bi.pos).norm2() + eps2;
            if (r2 == 0.0) fail(Err::SingularInteraction, "zero separation with eps = 0");
            potential -= g_const * bi.mass * bj.mass / std::sqrt(r2);
        }
    }
    return kinetic + potential;
}

}  // namespace gravfarm
