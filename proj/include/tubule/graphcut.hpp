#pragma once

#include <cstdint>
#include <vector>

#include "tubule/volume.hpp"

namespace tubule {

/// s-t network over vessel voxels. Node i stands for voxel `voxel[i]`; the
/// terminals are implicit.
struct FlowNetwork {
    struct Pair {
        std::uint32_t u = 0, v = 0;
        double cap = 0;  // in both directions
    };
    std::vector<double> source_cap;  // source -> node
    std::vector<double> sink_cap;    // node -> sink
    std::vector<Pair> pairs;
    std::vector<std::size_t> voxel;  // node -> linear voxel index
    Dims dims{};

    std::size_t size() const { return source_cap.size(); }
    /// Throws DataError on negative or non-finite capacities, self pairs or
    /// out-of-range endpoints.
    void validate() const;
};

struct CutAssignment {
    std::vector<std::uint8_t> source_side;  // 1 = source (artery), 0 = sink (vein)
    double flow = 0;
};

/// Capacity of the cut given by `source_side`.
double cut_capacity(const FlowNetwork& net, const std::vector<std::uint8_t>& source_side);

/// Terminal weights from the artery/vein probabilities renormalised per
/// voxel, p1' = p1 / (p1 + p2); neighbour weights kappa * exp(-dI^2 / sigma)
/// between 6-connected mask voxels, with I the raw CT intensity.
FlowNetwork build_vessel_graph(const std::vector<Volume>& probs, const Volume& ct, const LabelMap& vessel_mask,
                               double kappa = 8.0, double sigma = 100.0);

/// Exact maximum flow (Dinic) and a minimum cut. Nodes that may sit on
/// either side go to the source. Throws NumericError when the flow value and
/// the returned cut capacity disagree.
CutAssignment max_flow_min_cut(const FlowNetwork& net);

/// Background outside the mask; artery on the source side, vein on the sink
/// side inside it.
LabelMap refine_artery_vein(const std::vector<Volume>& probs, const Volume& ct, const LabelMap& vessel_mask,
                            double kappa = 8.0, double sigma = 100.0);

enum class UnionMode { ArteryPriority, VeinPriority };

/// Union of the two predictions per class; where they disagree the priority
/// class wins.
LabelMap fuse_union(const LabelMap& before, const LabelMap& after, UnionMode mode);

}  // namespace tubule
