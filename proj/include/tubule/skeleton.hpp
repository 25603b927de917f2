#pragma once

#include <cstddef>
#include <vector>

#include "tubule/volume.hpp"

namespace tubule {

/// Topology-preserving 3-D thinning to a 26-connected centerline.
///
/// Six directional sub-iterations (N, S, E, W, U, B). In each, border voxels
/// facing that direction are collected if they are not line ends (exactly one
/// 26-neighbour) and are simple points; candidates are then re-checked and
/// removed one at a time so no deletion changes the number of objects,
/// cavities or tunnels. Repeats until a full cycle deletes nothing.
LabelMap skeletonize(const LabelMap& mask);

/// True when deleting voxel (z,y,x) from the mask preserves topology under
/// (26, 6) adjacency. Out-of-volume voxels count as background.
bool is_simple_point(const LabelMap& mask, std::size_t z, std::size_t y, std::size_t x);

/// Number of 26-neighbours set in the mask.
int neighbor_count(const LabelMap& mask, std::size_t z, std::size_t y, std::size_t x);

enum class NodeKind {
    Terminal,     // exactly one incident branch
    Bifurcation,  // three or more incident branches
    Passage,      // a merged cluster that ends up with exactly two branches
    Isolated,     // a lone voxel, no branches
    Cycle,        // synthetic node anchoring an isolated loop
};

struct SkeletonNode {
    std::vector<std::size_t> voxels;  // linear indices; bifurcation clusters may hold several
    NodeKind kind = NodeKind::Terminal;
    std::size_t degree = 0;  // incident branch ends
};

struct SkeletonBranch {
    std::size_t from = 0;  // node ids
    std::size_t to = 0;
    std::vector<std::size_t> voxels;  // ordered path; first/last voxels belong to the end nodes
    double length = 0.0;              // mm

    /// Voxels strictly between the two end nodes, or the whole path when the
    /// branch has no interior.
    std::vector<std::size_t> detection_voxels() const;
};

struct SkeletonGraph {
    Dims dims;
    Vec3 spacing{1.0, 1.0, 1.0};
    std::vector<SkeletonNode> nodes;
    std::vector<SkeletonBranch> branches;

    std::size_t count(NodeKind kind) const;
    double total_length() const;
};

/// Spacing-weighted Euclidean length of consecutive steps along a path.
double path_length(const std::vector<std::size_t>& path, const Dims& dims, const Vec3& spacing);

/// Decomposes a thin centerline into nodes and branches. Voxels with one
/// neighbour are terminals; 26-connected clusters of voxels with three or more
/// neighbours become one node; maximal runs of two-neighbour voxels between
/// nodes become branches; leftover loops become one branch on a synthetic node.
/// Throws DataError on input containing a solid 2x2x2 block.
SkeletonGraph build_skeleton_graph(const LabelMap& centerline);

}  // namespace tubule
