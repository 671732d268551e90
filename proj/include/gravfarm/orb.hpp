#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gravfarm/tree.hpp"
#include "gravfarm/types.hpp"

namespace gravfarm {

// One node of the ORB split tree. Internal nodes carry the split plane;
// leaves carry the rank and its domain box.
struct OrbNode {
    int axis = -1;          // -1 for leaves
    double coord = 0.0;     // pos[axis] < coord goes low, >= coord goes high
    std::int32_t low = -1;
    std::int32_t high = -1;
    int rank = -1;
    BoundingBox domain;
};

struct OrbPartition {
    std::vector<OrbNode> nodes;  // nodes[0] is the root
    int rank_count = 0;
    BoundingBox root_box;
    std::vector<BoundingBox> rank_domain;  // indexed by rank
};

struct OrbResult {
    OrbPartition partition;
    std::vector<int> rank_of_body;  // parallel to the input body vector
};

// Recursive bisection into rank_count equal-population domains. Splits the
// longest extent of the subset's bounding box at the median coordinate;
// uneven rank counts split proportionally (3 -> 2:1).
OrbResult orb_partition(const std::vector<Body>& bodies, int rank_count);

int locate_rank(const OrbPartition& partition, const Vec3& pos);

struct EssentialEntry {
    std::uint8_t tag = 0;  // 0x00 raw body, 0x01 cell summary
    Body body;             // tag 0x00
    double mass = 0.0;     // tag 0x01
    Vec3 com;
    double side = 0.0;
};

struct EssentialNodeSet {
    int source_rank = -1;
    int dest_rank = -1;
    std::vector<EssentialEntry> entries;
};

// Walk the local tree emitting every node a per-body walk from inside
// remote_domain could need: a cell summary once s/d_min < theta holds for
// the whole remote box, raw bodies where the walk reaches leaves.
EssentialNodeSet collect_essential_nodes(const Tree& local_tree, const BoundingBox& remote_domain,
                                         double theta, int source_rank = -1, int dest_rank = -1);

// Insert foreign entries into the local tree. Entries are routed by position
// to the deepest existing cell; local moments are left untouched, so foreign
// data only ever appears as interaction candidates during walks.
void merge_essential(Tree& local_tree, const std::vector<EssentialNodeSet>& sets);

// Canonical byte encoding shared with the rpc wire format: per entry a tag
// byte (0x00 body | 0x01 summary) followed by little-endian binary64 fields.
std::vector<std::uint8_t> encode_essential_set(const EssentialNodeSet& set);
EssentialNodeSet decode_essential_set(std::span<const std::uint8_t> bytes);

}  // namespace gravfarm
