#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "tubule/volume.hpp"

namespace tubule {

/// Lung context labels.
inline constexpr std::uint8_t kContextOutside = 0;
inline constexpr std::uint8_t kContextLumen = 1;
inline constexpr std::uint8_t kContextWall = 2;
inline constexpr std::uint8_t kContextLung = 3;

using ContextMap = LabelMap;
using DistanceMap = Volume;

/// Otsu threshold over a `bins`-bin histogram spanning [min, max]. Returns the
/// upper edge of the last bin of the lower class; ties go to the lower edge.
double otsu_threshold(const Volume& vol, std::size_t bins = 256);

/// Between-class variance (in bin-index units, scaled by n^2) of splitting a
/// histogram after bin k. Exposed for diagnostics.
double otsu_between_class(std::span<const std::uint64_t> histogram, std::size_t k);

/// Histogram bin of a value for the given range; shared by Otsu and callers
/// that need to reproduce its class split.
std::size_t histogram_bin(double v, double lo, double hi, std::size_t bins);

/// Lung mask from a HU-normalised CT: Otsu, interior low-intensity components
/// (26-connected, not touching x/y faces), the two largest kept, hole filled,
/// then replaced by per-slice 2-D convex hulls of each lung.
LabelMap segment_lungs(const Volume& ct_normalized);

/// 2-D convex hull fill of a set of pixels (y,x) in one slice: every integer
/// point inside or on the hull polygon.
std::vector<std::pair<std::ptrdiff_t, std::ptrdiff_t>> convex_hull_fill(
    const std::vector<std::pair<std::ptrdiff_t, std::ptrdiff_t>>& pixels);

/// Structuring element of the wall dilation: offsets with norm <= 1.5.
const std::vector<Index3>& airway_wall_element();

/// dilate(lumen) minus lumen.
LabelMap extract_airway_wall(const LabelMap& lumen);

/// Exact Euclidean distance (mm) to the nearest nonzero seed voxel, using
/// separable lower-envelope passes over squared distances.
Volume euclidean_distance_map(const LabelMap& seed);

struct AnatomyPrior {
    ContextMap context;
    DistanceMap distance;
};

AnatomyPrior build_anatomy_prior(const Volume& ct, const LabelMap& airway_lumen, const LabelMap& lung);

}  // namespace tubule
