#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "gravfarm/types.hpp"

namespace gravfarm {

// Subdivision stops at this depth even if a leaf is over capacity; coincident
// bodies then share the leaf (softening keeps their forces finite).
inline constexpr int kMaxTreeDepth = 64;

struct Cell {
    BoundingBox box;
    double total_mass = 0.0;
    Vec3 com;
    std::int32_t first_child = -1;  // index of first child; children are contiguous
    std::int32_t child_count = 0;
    std::int32_t body_begin = 0;    // leaf: span into Tree::body_order
    std::int32_t body_count = 0;    // bodies in this subtree
    std::uint8_t octant = 0;        // which octant of the parent this cell occupies
    std::uint8_t depth = 0;

    bool is_leaf() const { return first_child < 0; }
};

// Data merged in from another rank's domain. side == 0 marks a raw body;
// side > 0 is a cell summary keeping its source-side geometry so the s/d
// test is evaluated against the original cell size.
struct ForeignEntry {
    double mass = 0.0;
    Vec3 pos;
    double side = 0.0;
};

// Flattened oct-tree. cells[0] is the root; children always follow their
// parent in the vector, so a reverse index sweep visits children first.
// Once moments are computed the structure is immutable and safe for
// concurrent read-only walks; merging foreign entries is a single-writer
// operation.
struct Tree {
    std::vector<Cell> cells;
    std::vector<std::int32_t> body_order;  // leaf spans index this; values index `bodies`
    std::vector<Body> bodies;              // snapshot of the input, original order
    int max_depth = 0;
    bool depth_capped = false;  // a leaf exceeded capacity at kMaxTreeDepth
    bool has_moments = false;

    // Foreign entries attached by merge_essential, keyed by cell index.
    std::unordered_map<std::int32_t, std::vector<ForeignEntry>> foreign;
    std::vector<std::uint8_t> has_foreign_below;  // per cell, includes the cell itself
    std::size_t foreign_count = 0;

    const BoundingBox& root_box() const { return cells.front().box; }
};

// Cubic root box: the bodies' bounding box expanded to equal side lengths
// about its center and inflated so boundary bodies fall strictly inside.
BoundingBox bounding_cube(const std::vector<Body>& bodies);

Tree build_tree(const std::vector<Body>& bodies, int leaf_capacity);
Tree build_tree(const std::vector<Body>& bodies, int leaf_capacity, const BoundingBox& root);

void compute_mass_moments(Tree& tree);

// Depth-first walk applying the s/d < theta acceptance test. The walking
// body is excluded; a cell whose box contains the body is always opened.
void build_interaction_list(const Tree& tree, const Body& body, double theta, InteractionList& out);
InteractionList build_interaction_list(const Tree& tree, const Body& body, double theta);

// Plummer-softened acceleration from an interaction list, summed in list order.
Vec3 compute_force(const Body& body, const InteractionList& list, double eps, double g_const);

// O(N^2) oracle; inner sums run in ascending body id order.
std::vector<Vec3> brute_force_accels(const std::vector<Body>& bodies, double eps, double g_const);

using AccelFn = std::function<std::vector<Vec3>(const std::vector<Body>&)>;

// Kick-drift-kick step; accel_fn is evaluated once, at the drifted positions.
// Input bodies must carry accelerations for the current positions.
std::vector<Body> step_leapfrog(const std::vector<Body>& bodies, const SimParams& params,
                                const AccelFn& accel_fn);

// KE + softened PE, pairs summed in ascending id order.
double total_energy(const std::vector<Body>& bodies, double eps, double g_const);

}  // namespace gravfarm
