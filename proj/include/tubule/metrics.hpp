#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tubule/skeleton.hpp"
#include "tubule/volume.hpp"

namespace tubule {

struct MetricOptions {
    /// A branch is detected once at least this many of its centerline voxels
    /// are covered by the prediction.
    std::size_t min_branch_overlap = 1;
};

/// All values are percentages.
struct AirwayScores {
    double bd = 0, td = 0, tpr = 0, fpr = 0, dsc = 0;
};

/// BD/TD/TPR/FPR with the `exclude` region (trachea) removed; DSC over the
/// whole volume. `ref_graph` is the centerline graph of `ref`.
AirwayScores airway_scores(const LabelMap& pred, const LabelMap& ref, const SkeletonGraph& ref_graph,
                           const LabelMap& exclude, const MetricOptions& opt = {});

/// Per-scan artery-vein scores (percentages).
struct AVScanScores {
    double acc = 0, tpr = 0, fpr = 0, dsc = 0, bd = 0, td = 0;
};

struct AVGraphs {
    SkeletonGraph artery;
    SkeletonGraph vein;
};

/// Centerline graphs of the artery and vein classes of a reference map.
AVGraphs av_reference_graphs(const LabelMap& ref);

/// pred in {0,1,2}; ref in {0,1,2,255}. Voxels with ref==255 are ignored by
/// every metric. Branch detection requires class-matching coverage.
AVScanScores av_scan_scores(const LabelMap& pred, const LabelMap& ref, const AVGraphs& ref_graphs,
                            const MetricOptions& opt = {});

struct Interval {
    double lo = 0, hi = 0;
};

struct AVScores {
    double acc_mean = 0;
    Interval acc_mean_ci;
    double acc_median = 0;
    Interval acc_median_ci;
    double tpr = 0, fpr = 0, dsc = 0, bd = 0, td = 0;           // means over scans
    double tpr_sd = 0, fpr_sd = 0, dsc_sd = 0, bd_sd = 0, td_sd = 0;  // sample std devs
    std::size_t scans = 0;
};

struct AggregateOptions {
    std::size_t bootstrap_resamples = 10000;
    std::uint64_t seed = 0;
    double confidence = 0.95;
};

/// Mean ACC with a Student-t interval, median ACC with a percentile bootstrap
/// interval. Intervals are widened to contain their point estimate.
AVScores aggregate_av(const std::vector<AVScanScores>& scans, const AggregateOptions& opt = {});

/// Convenience: per-scan scores followed by aggregation.
AVScores av_scores(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& refs,
                   const AggregateOptions& agg = {}, const MetricOptions& opt = {});

struct ErrorBreakdown {
    std::array<std::array<std::uint64_t, 3>, 3> counts{};   // [ref][pred]
    std::array<std::array<double, 3>, 3> normalized{};      // row-normalised; empty rows stay zero
    std::array<double, 5> type_percent{};                   // T1..T5
    std::uint64_t errors = 0;
};

/// T1 background->vessel, T2 artery->background, T3 artery->vein,
/// T4 vein->background, T5 vein->artery. Percentages of all errors.
ErrorBreakdown error_breakdown(const LabelMap& pred, const LabelMap& ref);

}  // namespace tubule
