#pragma once

#include <cstdint>
#include <vector>

#include "tubule/volume.hpp"

namespace tubule {

enum class Connectivity { Face6 = 6, Edge18 = 18, Full26 = 26 };

/// Neighbour offsets (z,y,x) for the given connectivity, excluding the centre.
const std::vector<Index3>& neighbor_offsets(Connectivity c);

struct Components {
    std::vector<std::int32_t> label;  // -1 for background, else component id
    std::vector<std::size_t> sizes;   // voxel count per component id
};

/// Connected components of the nonzero voxels. Component ids are assigned in
/// raster order of each component's first voxel.
Components connected_components(const LabelMap& mask, Connectivity c);

/// Mask of the largest component (ties: lowest id). Empty input stays empty.
LabelMap largest_component(const LabelMap& mask, Connectivity c);

std::size_t count_components(const LabelMap& mask, Connectivity c);

/// Binary dilation with an arbitrary structuring element given as offsets
/// (the centre offset is implied).
LabelMap dilate(const LabelMap& mask, const std::vector<Index3>& structuring_element);

/// Offsets with Euclidean norm <= radius (centre included).
std::vector<Index3> ball_offsets(double radius);

/// Fills background regions that do not reach the volume border: first per
/// axial slice (4-connected background), then in 3-D (6-connected).
LabelMap fill_holes(const LabelMap& mask);

}  // namespace tubule
