#pragma once

#include <functional>
#include <vector>

#include "tubule/net/model.hpp"
#include "tubule/volume.hpp"

namespace tubule::net {

/// Evaluates one window. `x` is [1, C, patch] (zero past the volume) and
/// `origin` the window's first voxel. Returns [1, K, patch] probabilities.
using PatchFn = std::function<Tensor<float>(const Tensor<float>& x, Index3 origin)>;

struct SlidingWindow {
    ad::Triple patch{32, 32, 32};
    std::size_t stride = 64;         // axial
    std::size_t lateral_stride = 0;  // y and x; 0 means the patch extent
};

/// Window start positions along one axis: 0, s, 2s, ... until a window
/// reaches the end. The last window may hang over the edge.
std::vector<std::size_t> window_starts(std::size_t extent, std::size_t patch, std::size_t stride);

/// Tiles the volume, accumulates each window's output with a per-voxel count
/// and divides. Windows are visited in a fixed z, y, x order, so the result
/// is reproducible. Returns K probability volumes on the input geometry.
std::vector<Volume> sliding_window_infer(const std::vector<Volume>& channels, const SlidingWindow& sw,
                                         const PatchFn& fn);

/// Window function that runs the model; the coordinate map is taken
/// relative to the whole input volume of extent `region`. Artery-vein
/// models return their three softmax channels.
PatchFn model_patch_fn(const Model<float>& model, Dims region);

/// Threshold then keep the largest 26-connected component.
LabelMap postprocess_airway(const Volume& prob, double th = 0.5);

/// Per-voxel argmax over background/artery/vein; ties go to the lower class,
/// so background wins any tie it is part of.
LabelMap postprocess_artery_vein(const std::vector<Volume>& probs);

}  // namespace tubule::net
