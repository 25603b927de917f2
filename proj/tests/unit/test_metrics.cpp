#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "tubule/metrics.hpp"
#include "tubule/report.hpp"

using namespace tubule;

namespace {

void draw_y(LabelMap& m, std::size_t cy, std::size_t cx, std::uint8_t v) {
    m(0, cy, cx) = v;
    for (std::size_t i = 1; i <= 4; ++i) {
        m(0, cy + i, cx) = v;
        m(0, cy - i, cx - i) = v;
        m(0, cy - i, cx + i) = v;
    }
}

void draw_plus(LabelMap& m, std::size_t cy, std::size_t cx, std::uint8_t v) {
    m(0, cy, cx) = v;
    for (std::size_t i = 1; i <= 4; ++i) m(0, cy + i, cx) = m(0, cy - i, cx) = m(0, cy, cx + i) = m(0, cy, cx - i) = v;
}

LabelMap only(const LabelMap& m, std::uint8_t v) {
    LabelMap o = LabelMap::like(m);
    for (std::size_t i = 0; i < m.size(); ++i) o[i] = m[i] == v;
    return o;
}

}  // namespace

TEST_CASE("airway scores on a perfect prediction") {
    LabelMap ref(Dims{1, 11, 11});
    draw_y(ref, 5, 5, 1);
    const auto g = build_skeleton_graph(skeletonize(ref));
    const auto s = airway_scores(ref, ref, g, LabelMap::like(ref));
    CHECK(s.bd == 100);
    CHECK(s.td == 100);
    CHECK(s.tpr == 100);
    CHECK(s.dsc == 100);
    CHECK(s.fpr == 0);
}

TEST_CASE("half of a single branch") {
    LabelMap ref(Dims{1, 1, 9}, {1, 1, 0.7});
    for (auto& v : ref.data()) v = 1;
    const auto g = build_skeleton_graph(ref);
    LabelMap pred = LabelMap::like(ref);
    for (std::size_t x = 0; x <= 4; ++x) pred(0, 0, x) = 1;
    const auto s = airway_scores(pred, ref, g, LabelMap::like(ref));
    CHECK(s.td == doctest::Approx(50.0));
    CHECK(s.bd == 100.0);
}

TEST_CASE("extra background voxels only move FPR") {
    LabelMap ref(Dims{1, 11, 11});
    draw_y(ref, 5, 5, 1);
    const auto g = build_skeleton_graph(ref);
    auto pred = ref;
    pred(0, 0, 5) = pred(0, 10, 0) = pred(0, 10, 10) = 1;
    const double negatives = double(ref.size() - count_nonzero(ref));
    const auto s = airway_scores(pred, ref, g, LabelMap::like(ref));
    CHECK(s.fpr == doctest::Approx(300.0 / negatives));
    CHECK(s.tpr == 100);
}

TEST_CASE("trachea exclusion applies to everything except DSC") {
    LabelMap ref(Dims{1, 1, 9});
    for (auto& v : ref.data()) v = 1;
    const auto g = build_skeleton_graph(ref);
    LabelMap excl = LabelMap::like(ref), pred = LabelMap::like(ref);
    for (std::size_t x = 0; x < 4; ++x) excl(0, 0, x) = 1;
    for (std::size_t x = 4; x < 9; ++x) pred(0, 0, x) = 1;
    const auto s = airway_scores(pred, ref, g, excl);
    CHECK(s.tpr == 100);
    CHECK(s.td == 100);
    CHECK(s.dsc == doctest::Approx(100.0 * 10 / 14));
    CHECK_THROWS_AS(airway_scores(pred, LabelMap::like(ref), g, excl), DataError);
}

TEST_CASE("artery-vein BD averages the per-class fractions") {
    LabelMap ref(Dims{1, 11, 22});
    draw_y(ref, 5, 5, kArtery);
    draw_plus(ref, 5, 16, kVein);
    const AVGraphs graphs{build_skeleton_graph(only(ref, kArtery)), build_skeleton_graph(only(ref, kVein))};
    REQUIRE(graphs.artery.branches.size() == 3);
    REQUIRE(graphs.vein.branches.size() == 4);

    const auto perfect = av_scan_scores(ref, ref, graphs);
    CHECK(perfect.acc == 100);
    CHECK(perfect.bd == 100);
    CHECK(perfect.td == 100);

    auto pred = ref;
    for (std::size_t i = 1; i <= 4; ++i) pred(0, 5 + i, 5) = kBackground;  // lose the artery stem
    const auto s = av_scan_scores(pred, ref, graphs);
    CHECK(s.bd == doctest::Approx(0.5 * (2.0 / 3.0 + 1.0) * 100.0));
    CHECK(s.bd == doctest::Approx(83.33).epsilon(1e-4));
}

TEST_CASE("swapped classes: ACC 0, vessel TPR 100") {
    LabelMap ref(Dims{1, 11, 22});
    draw_y(ref, 5, 5, kArtery);
    draw_plus(ref, 5, 16, kVein);
    ref(0, 0, 0) = kNonDetermined;
    LabelMap pred = LabelMap::like(ref);
    for (std::size_t i = 0; i < ref.size(); ++i)
        pred[i] = ref[i] == kArtery ? kVein : ref[i] == kVein ? kArtery : kBackground;
    pred(0, 0, 0) = kArtery;  // ignored: non-determined
    const auto s = av_scan_scores(pred, ref, av_reference_graphs(ref));
    CHECK(s.acc == 0);
    CHECK(s.tpr == 100);
    CHECK(s.fpr == 0);
    CHECK(s.bd == 0);

    LabelMap no_vein = only(ref, kArtery);
    CHECK_THROWS_AS(av_scan_scores(pred, no_vein, av_reference_graphs(ref)), DataError);
}

TEST_CASE("error taxonomy") {
    LabelMap ref(Dims{1, 1, 8}), pred(Dims{1, 1, 8});
    const std::uint8_t r[8] = {0, 1, 1, 2, 2, 0, 1, 2};
    const std::uint8_t p[8] = {1, 0, 2, 0, 1, 0, 1, 2};
    for (int i = 0; i < 8; ++i) ref[i] = r[i], pred[i] = p[i];
    const auto e = error_breakdown(pred, ref);
    CHECK(e.errors == 5);
    for (double t : e.type_percent) CHECK(t == doctest::Approx(20.0));
    for (const auto& row : e.normalized) CHECK(row[0] + row[1] + row[2] == doctest::Approx(1.0));

    const auto perfect = error_breakdown(ref, ref);
    for (double t : perfect.type_percent) CHECK(t == 0);
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) CHECK(perfect.normalized[a][b] == (a == b ? 1.0 : 0.0));

    LabelMap t1 = ref;
    t1[5] = kArtery;
    CHECK(error_breakdown(t1, ref).type_percent[0] == 100.0);
}

TEST_CASE("aggregation intervals contain their point estimates") {
    std::vector<AVScanScores> scans;
    for (double a : {91.0, 88.5, 95.2, 70.1, 99.0}) scans.push_back({a, 90, 1, 85, 80, 75});
    AggregateOptions opt;
    opt.seed = 17;
    const auto s = aggregate_av(scans, opt);
    CHECK(s.acc_mean == doctest::Approx(88.76));
    CHECK(s.acc_median == 91.0);
    CHECK(s.acc_mean_ci.lo <= s.acc_mean);
    CHECK(s.acc_mean_ci.hi >= s.acc_mean);
    CHECK(s.acc_median_ci.lo <= s.acc_median);
    CHECK(s.acc_median_ci.hi >= s.acc_median);
    CHECK(s.bd == 80);
    CHECK(s.bd_sd == 0);
    const auto again = aggregate_av(scans, opt);
    CHECK(again.acc_median_ci.lo == s.acc_median_ci.lo);
    CHECK(again.acc_median_ci.hi == s.acc_median_ci.hi);
}

TEST_CASE("randomized scores equal brute-force counting; BD/TD monotone under growth") {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<std::size_t> side(3, 10);
    int cases = 0;
    for (int t = 0; t < 80; ++t) {
        const Dims d{side(rng), side(rng), side(rng)};
        auto ref = oracle::random_blobs(d, 3, 0.8, 2.5, rng);
        if (count_nonzero(ref) == 0) continue;
        const auto g = build_skeleton_graph(skeletonize(ref));
        auto pred = oracle::random_mask(d, 0.5, rng);
        for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = pred[i] && (ref[i] || (i % 5 == 0));
        LabelMap excl = LabelMap::like(ref);
        for (std::size_t y = 0; y < d.y; ++y)
            for (std::size_t x = 0; x < d.x; ++x) excl(0, y, x) = t % 2;

        const auto s = airway_scores(pred, ref, g, excl);
        const auto c = oracle::airway_counts(pred, ref, g, excl);
        REQUIRE(s.bd == c.bd);
        REQUIRE(s.td == c.td);
        REQUIRE(s.tpr == c.tpr);
        REQUIRE(s.fpr == c.fpr);
        REQUIRE(s.dsc == c.dsc);

        auto grown = pred;
        for (std::size_t i = 0; i < grown.size(); ++i) grown[i] |= (i * 13 + t) % 4 == 0;
        const auto s2 = airway_scores(grown, ref, g, excl);
        REQUIRE(s2.bd >= s.bd);
        REQUIRE(s2.td >= s.td);

        // artery-vein: split the blob set by x parity of the component seeds
        LabelMap av = LabelMap::like(ref), avp = LabelMap::like(ref);
        std::uniform_int_distribution<int> cls(0, 2);
        for (std::size_t i = 0; i < ref.size(); ++i) {
            if (ref[i]) av[i] = ref.coords(i)[2] < std::ptrdiff_t(d.x / 2) ? kArtery : kVein;
            if (i % 11 == 3) av[i] = kNonDetermined;
            avp[i] = std::uint8_t(cls(rng));
        }
        if (!std::count(av.data().begin(), av.data().end(), kArtery) ||
            !std::count(av.data().begin(), av.data().end(), kVein))
            continue;
        const auto graphs = av_reference_graphs(av);
        const auto a = av_scan_scores(avp, av, graphs);
        const auto ac = oracle::av_counts(avp, av, graphs.artery, graphs.vein);
        REQUIRE(a.acc == ac.acc);
        REQUIRE(a.tpr == ac.tpr);
        REQUIRE(a.fpr == ac.fpr);
        REQUIRE(a.dsc == ac.dsc);
        REQUIRE(a.bd == ac.bd);
        REQUIRE(a.td == ac.td);
        const auto e = error_breakdown(avp, av);
        std::uint64_t total = 0;
        for (auto n : ac.types) total += n;
        REQUIRE(e.errors == total);
        double sum = 0;
        for (int k = 0; k < 5; ++k) {
            REQUIRE(e.type_percent[k] == doctest::Approx(100.0 * double(ac.types[k]) / double(total)));
            sum += e.type_percent[k];
        }
        REQUIRE(sum == doctest::Approx(100.0).epsilon(1e-12));
        ++cases;
    }
    CHECK(cases >= 50);
}

TEST_CASE("report formatting") {
    AirwayScores s{96.2, 90.7, 88.0, 0.02, 92.5};
    CHECK(format_key_values(fields(s)) == "bd=96.200000\ntd=90.700000\ntpr=88.000000\nfpr=0.020000\ndsc=92.500000\n");
    CHECK(format_table({{"a", fields(s)}}) == "case,bd,td,tpr,fpr,dsc\na,96.200000,90.700000,88.000000,0.020000,92.500000\n");
}
