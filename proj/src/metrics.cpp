#include "tubule/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <boost/math/distributions/students_t.hpp>

namespace tubule {

namespace {

double pct(double num, double den) { return den > 0 ? 100.0 * num / den : 0.0; }

double step_length(std::size_t a, std::size_t b, const Dims& d, const Vec3& s) {
    return path_length({a, b}, d, s);
}

struct CenterlineCoverage {
    double n_seg = 0, n_ref = 0, l_seg = 0, l_ref = 0;
};

// `covered(i)` says whether centerline voxel i counts as segmented;
// `excluded(i)` removes it from both numerator and denominator.
template <class Covered, class Excluded>
CenterlineCoverage coverage(const SkeletonGraph& g, Covered covered, Excluded excluded, std::size_t min_overlap) {
    CenterlineCoverage c;
    for (const auto& b : g.branches) {
        std::size_t kept = 0, hits = 0;
        for (auto v : b.detection_voxels()) {
            if (excluded(v)) continue;
            ++kept;
            hits += covered(v);
        }
        if (kept > 0) {
            c.n_ref += 1;
            c.n_seg += hits >= min_overlap;
        }
        for (std::size_t i = 1; i < b.voxels.size(); ++i) {
            const auto a = b.voxels[i - 1], v = b.voxels[i];
            if (excluded(a) || excluded(v)) continue;
            const double len = step_length(a, v, g.dims, g.spacing);
            c.l_ref += len;
            if (covered(a) && covered(v)) c.l_seg += len;
        }
    }
    return c;
}

double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Linear-interpolation quantile of sorted data.
double quantile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

AirwayScores airway_scores(const LabelMap& pred, const LabelMap& ref, const SkeletonGraph& ref_graph,
                           const LabelMap& exclude, const MetricOptions& opt) {
    require_same_geometry(pred, ref, "airway_scores (pred, ref)");
    require_same_geometry(exclude, ref, "airway_scores (exclude, ref)");
    if (!(ref_graph.dims == ref.dims())) throw DataError("airway_scores: centerline graph does not match reference");
    if (count_nonzero(ref) == 0) throw DataError("airway_scores: empty reference");

    double tp = 0, fp = 0, p = 0, n = 0, tp_all = 0, fp_all = 0, p_all = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const bool r = ref[i] != 0, s = pred[i] != 0;
        tp_all += r && s;
        fp_all += !r && s;
        p_all += r;
        if (exclude[i]) continue;
        tp += r && s;
        fp += !r && s;
        p += r;
        n += !r;
    }
    const auto cov = coverage(
        ref_graph, [&](std::size_t i) { return pred[i] != 0; }, [&](std::size_t i) { return exclude[i] != 0; },
        opt.min_branch_overlap);

    AirwayScores s;
    s.bd = pct(cov.n_seg, cov.n_ref);
    s.td = pct(cov.l_seg, cov.l_ref);
    s.tpr = pct(tp, p);
    s.fpr = pct(fp, n);
    s.dsc = pct(2.0 * tp_all, tp_all + fp_all + p_all);
    return s;
}

AVGraphs av_reference_graphs(const LabelMap& ref) {
    LabelMap artery = LabelMap::like(ref), vein = LabelMap::like(ref);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        artery[i] = ref[i] == kArtery;
        vein[i] = ref[i] == kVein;
    }
    return {build_skeleton_graph(skeletonize(artery)), build_skeleton_graph(skeletonize(vein))};
}

AVScanScores av_scan_scores(const LabelMap& pred, const LabelMap& ref, const AVGraphs& graphs,
                            const MetricOptions& opt) {
    require_same_geometry(pred, ref, "av_scores (pred, ref)");
    require_alphabet(pred, {kBackground, kArtery, kVein}, "artery-vein prediction");
    require_alphabet(ref, {kBackground, kArtery, kVein, kNonDetermined}, "artery-vein reference");

    double labeled = 0, correct = 0, tp = 0, fp = 0, p = 0, n = 0;
    bool has_artery = false, has_vein = false;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const auto r = ref[i];
        if (r == kNonDetermined) continue;
        has_artery |= r == kArtery;
        has_vein |= r == kVein;
        const bool rv = r != kBackground, sv = pred[i] != kBackground;
        if (rv) {
            ++labeled;
            correct += pred[i] == r;
        }
        tp += rv && sv;
        fp += !rv && sv;
        p += rv;
        n += !rv;
    }
    if (!has_artery || !has_vein) throw DataError("av_scores: reference needs both artery and vein voxels");

    const auto non_determined = [&](std::size_t i) { return ref[i] == kNonDetermined; };
    const auto a = coverage(
        graphs.artery, [&](std::size_t i) { return pred[i] == kArtery; }, non_determined, opt.min_branch_overlap);
    const auto v = coverage(
        graphs.vein, [&](std::size_t i) { return pred[i] == kVein; }, non_determined, opt.min_branch_overlap);

    AVScanScores s;
    s.acc = pct(correct, labeled);
    s.tpr = pct(tp, p);
    s.fpr = pct(fp, n);
    s.dsc = pct(2.0 * tp, tp + fp + p);
    const auto frac = [](double num, double den) { return den > 0 ? num / den : 0.0; };
    s.bd = 50.0 * (frac(a.n_seg, a.n_ref) + frac(v.n_seg, v.n_ref));
    s.td = 50.0 * (frac(a.l_seg, a.l_ref) + frac(v.l_seg, v.l_ref));
    return s;
}

AVScores aggregate_av(const std::vector<AVScanScores>& scans, const AggregateOptions& opt) {
    if (scans.empty()) throw DataError("aggregate_av: no scans");
    std::vector<double> acc, tpr, fpr, dsc, bd, td;
    for (const auto& s : scans) {
        acc.push_back(s.acc);
        tpr.push_back(s.tpr);
        fpr.push_back(s.fpr);
        dsc.push_back(s.dsc);
        bd.push_back(s.bd);
        td.push_back(s.td);
    }
    AVScores out;
    out.scans = scans.size();
    out.acc_mean = mean(acc);
    out.acc_median = median(acc);
    const double alpha = 1.0 - opt.confidence;
    if (acc.size() >= 2) {
        const boost::math::students_t dist(static_cast<double>(acc.size() - 1));
        const double t = boost::math::quantile(boost::math::complement(dist, alpha / 2));
        const double half = t * stddev(acc) / std::sqrt(static_cast<double>(acc.size()));
        out.acc_mean_ci = {out.acc_mean - half, out.acc_mean + half};
    } else {
        out.acc_mean_ci = {out.acc_mean, out.acc_mean};
    }

    std::mt19937_64 rng(opt.seed);
    std::uniform_int_distribution<std::size_t> pick(0, acc.size() - 1);
    std::vector<double> medians;
    medians.reserve(opt.bootstrap_resamples);
    std::vector<double> sample(acc.size());
    for (std::size_t b = 0; b < opt.bootstrap_resamples; ++b) {
        for (auto& x : sample) x = acc[pick(rng)];
        medians.push_back(median(sample));
    }
    if (medians.empty()) {
        out.acc_median_ci = {out.acc_median, out.acc_median};
    } else {
        std::sort(medians.begin(), medians.end());
        out.acc_median_ci = {quantile(medians, alpha / 2), quantile(medians, 1.0 - alpha / 2)};
    }
    out.acc_median_ci.lo = std::min(out.acc_median_ci.lo, out.acc_median);
    out.acc_median_ci.hi = std::max(out.acc_median_ci.hi, out.acc_median);

    out.tpr = mean(tpr), out.tpr_sd = stddev(tpr);
    out.fpr = mean(fpr), out.fpr_sd = stddev(fpr);
    out.dsc = mean(dsc), out.dsc_sd = stddev(dsc);
    out.bd = mean(bd), out.bd_sd = stddev(bd);
    out.td = mean(td), out.td_sd = stddev(td);
    return out;
}

AVScores av_scores(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& refs, const AggregateOptions& agg,
                   const MetricOptions& opt) {
    if (preds.size() != refs.size()) throw DataError("av_scores: prediction/reference count mismatch");
    std::vector<AVScanScores> scans;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        scans.push_back(av_scan_scores(preds[i], refs[i], av_reference_graphs(refs[i]), opt));
    }
    return aggregate_av(scans, agg);
}

ErrorBreakdown error_breakdown(const LabelMap& pred, const LabelMap& ref) {
    require_same_geometry(pred, ref, "error_breakdown");
    require_alphabet(pred, {kBackground, kArtery, kVein}, "artery-vein prediction");
    require_alphabet(ref, {kBackground, kArtery, kVein, kNonDetermined}, "artery-vein reference");
    ErrorBreakdown e;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        if (ref[i] == kNonDetermined) continue;
        ++e.counts[ref[i]][pred[i]];
    }
    for (int r = 0; r < 3; ++r) {
        const double row = static_cast<double>(e.counts[r][0] + e.counts[r][1] + e.counts[r][2]);
        for (int c = 0; c < 3; ++c) e.normalized[r][c] = row > 0 ? static_cast<double>(e.counts[r][c]) / row : 0.0;
    }
    const std::array<std::uint64_t, 5> types{e.counts[0][1] + e.counts[0][2], e.counts[1][0], e.counts[1][2],
                                             e.counts[2][0], e.counts[2][1]};
    e.errors = std::accumulate(types.begin(), types.end(), std::uint64_t{0});
    for (int t = 0; t < 5; ++t) e.type_percent[t] = pct(static_cast<double>(types[t]), static_cast<double>(e.errors));
    return e;
}

}  // namespace tubule
