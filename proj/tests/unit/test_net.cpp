#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "tubule/metrics.hpp"
#include "tubule/net/gradsuite.hpp"
#include "tubule/net/infer.hpp"
#include "tubule/net/model.hpp"
#include "tubule/net/train.hpp"
#include "tubule/phantom.hpp"
#include "tubule/skeleton.hpp"

using namespace tubule;
using namespace tubule::ad;
using namespace tubule::net;
using TD = Tensor<double>;

namespace {

TD rand_tensor(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = u(rng);
    return TD::from(std::move(s), std::move(v), true);
}

double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("uniform combination weights integrate as axis means") {
    std::mt19937_64 rng(1);
    const Shape s{2, 4, 3, 5, 4};
    const auto a = rand_tensor(s, rng);
    auto p = RecalibrationParams<double>::init(4, {3, 5, 4}, 2, rng);
    const auto z = spatial_integration(a, p.d, p.h, p.w);
    const std::size_t vol = 60;
    for (std::size_t inst = 0; inst < 8; ++inst) {
        const std::vector<double> slice(a.values().begin() + inst * vol, a.values().begin() + (inst + 1) * vol);
        const auto ref = oracle::integrate_by_means(slice, 3, 5, 4);
        for (std::size_t i = 0; i < vol; ++i) CHECK(std::abs(z.values()[inst * vol + i] - ref[i]) < 1e-6);
    }

    // The full module: gate from the oracle Z through the two 1x1x1 convs.
    const auto out = feature_recalibration(a, p);
    for (std::size_t n = 0; n < 2; ++n) {
        std::vector<std::vector<double>> zc;
        for (std::size_t c = 0; c < 4; ++c) {
            const std::size_t off = (n * 4 + c) * vol;
            zc.push_back(oracle::integrate_by_means({a.values().begin() + off, a.values().begin() + off + vol}, 3, 5, 4));
        }
        for (std::size_t i = 0; i < vol; ++i) {
            double hid[2];
            for (std::size_t r = 0; r < 2; ++r) {
                double acc = 0;
                for (std::size_t c = 0; c < 4; ++c) acc += p.k1.values()[r * 4 + c] * zc[c][i];
                hid[r] = std::max(acc, 0.0);
            }
            for (std::size_t c = 0; c < 4; ++c) {
                const double u = sigmoid_d(p.k2.values()[c * 2] * hid[0] + p.k2.values()[c * 2 + 1] * hid[1]);
                const std::size_t at = (n * 4 + c) * vol + i;
                CHECK(out.values()[at] == doctest::Approx(u * a.values()[at]).epsilon(1e-12));
                CHECK(std::abs(out.values()[at]) <= std::abs(a.values()[at]));
            }
        }
    }
}

TEST_CASE("one-hot combination weights pick single lines") {
    std::mt19937_64 rng(2);
    const auto a = rand_tensor({2, 2, 2, 2, 2}, rng);
    for (std::size_t i0 = 0; i0 < 2; ++i0)
        for (std::size_t j0 = 0; j0 < 2; ++j0)
            for (std::size_t k0 = 0; k0 < 2; ++k0) {
                std::vector<double> d(2, 0), h(2, 0), w(2, 0);
                d[i0] = h[j0] = w[k0] = 1;
                const auto z = spatial_integration(a, TD::from({2}, d), TD::from({2}, h), TD::from({2}, w));
                for (std::size_t inst = 0; inst < 4; ++inst) {
                    const std::vector<double> slice(a.values().begin() + inst * 8, a.values().begin() + inst * 8 + 8);
                    const auto ref = oracle::integrate_direct(slice, 2, 2, 2, d, h, w);
                    for (std::size_t v = 0; v < 8; ++v) CHECK(z.values()[inst * 8 + v] == ref[v]);
                    // Depth map at (i, *, *) reduces to the single line value.
                    const auto zd = [&](std::size_t i) { return slice[(i * 2 + j0) * 2 + k0]; };
                    CHECK(ref[0] == zd(0) + slice[(i0 * 2 + 0) * 2 + k0] + slice[(i0 * 2 + j0) * 2 + 0]);
                }
            }
}

TEST_CASE("recalibration rejects bad configurations") {
    std::mt19937_64 rng(3);
    CHECK_THROWS_AS(RecalibrationParams<double>::init(6, {2, 2, 2}, 4, rng), DataError);
    auto p = RecalibrationParams<double>::init(4, {2, 2, 2}, 2, rng);
    CHECK_THROWS_AS(feature_recalibration(rand_tensor({1, 4, 3, 2, 2}, rng), p), DataError);
}

TEST_CASE("attention maps and distillation") {
    std::mt19937_64 rng(4);
    SUBCASE("identical features give zero loss") {
        const auto f = rand_tensor({1, 3, 4, 4, 4}, rng);
        const auto d = attention_distillation<double>({f, f, f, f}, 2.0);
        CHECK(std::abs(d.loss.item()) <= 1e-12);
    }
    SUBCASE("single channel with p = 2 squares") {
        const auto f = rand_tensor({1, 1, 2, 3, 2}, rng);
        const auto g = attention_map(f, 2.0);
        for (std::size_t i = 0; i < f.numel(); ++i) CHECK(g.values()[i] == doctest::Approx(f.values()[i] * f.values()[i]));
    }
    SUBCASE("hand computation on two 2x2x2 maps") {
        const std::vector<double> a{0.1, -0.4, 0.7, 0.2, -0.9, 0.3, 0.0, 0.5};
        const std::vector<double> b{0.6, 0.1, -0.2, 0.8, 0.4, -0.3, 0.9, 0.05};
        const auto d = attention_distillation<double>({TD::from({1, 1, 2, 2, 2}, a), TD::from({1, 1, 2, 2, 2}, b)}, 2.0);
        const auto softmax_sq = [](const std::vector<double>& v) {
            std::vector<double> e(v.size());
            double s = 0;
            for (std::size_t i = 0; i < v.size(); ++i) s += e[i] = std::exp(v[i] * v[i]);
            for (auto& x : e) x /= s;
            return e;
        };
        const auto ga = softmax_sq(a), gb = softmax_sq(b);
        double ref = 0;
        for (std::size_t i = 0; i < 8; ++i) ref += (ga[i] - gb[i]) * (ga[i] - gb[i]);
        CHECK(d.loss.item() == doctest::Approx(ref).epsilon(1e-12));
    }
    SUBCASE("maps are distributions and teachers get no gradient") {
        std::vector<TD> feats{rand_tensor({1, 4, 2, 2, 2}, rng), rand_tensor({1, 3, 3, 3, 3}, rng),
                              rand_tensor({1, 2, 5, 4, 5}, rng), rand_tensor({1, 2, 6, 6, 6}, rng)};
        const auto d = attention_distillation(feats, 2.0);
        REQUIRE(d.maps.size() == 4);
        for (const auto& m : d.maps) {
            CHECK(m.shape() == Shape{1, 1, 6, 6, 6});
            double s = 0;
            for (double v : m.values()) s += v;
            CHECK(std::abs(s - 1.0) <= 1e-6);
        }
        auto loss = d.loss;
        loss.backward();
        for (double g : feats.back().grad()) CHECK(g == 0.0);
        double mag = 0;
        for (double g : feats[0].grad()) mag += std::abs(g);
        CHECK(mag > 0);
    }
    SUBCASE("needs a pair") {
        CHECK_THROWS_AS(attention_distillation<double>({rand_tensor({1, 1, 2, 2, 2}, rng)}, 2.0), DataError);
    }
}

TEST_CASE("dice focal anchors") {
    SUBCASE("perfect prediction") {
        const std::vector<double> y{1, 0, 0, 1, 0, 1};
        std::vector<double> p(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) p[i] = y[i] > 0 ? 1.0 - 1e-9 : 1e-9;
        const auto l = dice_focal_loss(TD::from({6}, p), TD::from({6}, y));
        CHECK(std::abs(l.item() + 1.0) < 1e-4);
    }
    SUBCASE("empty label and near-zero prediction") {
        const auto l = dice_focal_loss(TD::full({8}, 1e-9), TD::zeros({8}));
        CHECK(std::abs(l.item()) < 1e-4);
    }
    SUBCASE("two voxels at one half") {
        const auto l = dice_focal_loss(TD::from({2}, {0.5, 0.5}), TD::from({2}, {1.0, 0.0}));
        // Dice 1/(2 + 1e-7); focal mean 0.25 ln 0.5.
        CHECK(l.item() == doctest::Approx(-0.3267132).epsilon(1e-6));
        CHECK(l.item() == doctest::Approx(-(1.0 / (2.0 + 1e-7) + 0.25 * std::log(0.5))).epsilon(1e-12));
    }
    SUBCASE("invalid probabilities") {
        CHECK_THROWS_AS(dice_focal_loss(TD::from({2}, {1.5, 0.2}), TD::from({2}, {1.0, 0.0})), NumericError);
        CHECK_THROWS_AS(dice_focal_loss(TD::from({2}, {0.5, 0.2}), TD::from({3}, {1.0, 0.0, 1.0})), DataError);
    }
    CHECK(kLossEps == 1e-7);
}

TEST_CASE("task objectives") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.02, 0.98);
    const Shape s1{1, 1, 2, 3, 2};
    const std::size_t vox = 12;
    SUBCASE("alpha zero keeps only the segmentation part") {
        std::vector<double> p(vox), y(vox);
        for (std::size_t i = 0; i < vox; ++i) {
            p[i] = u(rng);
            y[i] = i % 3 == 0;
        }
        const auto l = airway_loss(TD::from(s1, p), TD::from(s1, y), TD::scalar(0.7), 0.0);
        CHECK(l.total.item() == l.seg.item());
        const auto l2 = airway_loss(TD::from(s1, p), TD::from(s1, y), TD::scalar(0.7), 0.1);
        CHECK(l2.total.item() == doctest::Approx(l.seg.item() + 0.07));
        CHECK(l.seg.item() == doctest::Approx(oracle::dice_focal(p, y)).epsilon(1e-12));
    }
    SUBCASE("perfect artery-vein prediction") {
        const Shape s3{1, 3, 2, 3, 2};
        std::vector<double> oh(3 * vox, 0), pr(3 * vox, 1e-9), ves(vox);
        for (std::size_t i = 0; i < vox; ++i) {
            const std::size_t c = i % 3;
            oh[c * vox + i] = 1;
            pr[c * vox + i] = 1 - 2e-9;
            ves[i] = c ? 1 - 1e-9 : 1e-9;
        }
        const auto l = artery_vein_loss(TD::from(s3, pr), TD::from(s1, ves), TD::from(s3, oh), TD(), TD::scalar(0.5), 0.1);
        CHECK(std::abs(l.seg.item() + 2.0) < 1e-4);
        CHECK(l.total.item() == doctest::Approx(l.seg.item() + 0.05));
    }
    SUBCASE("random case against a scalar re-evaluation") {
        const Shape s3{1, 3, 2, 3, 2};
        std::vector<double> oh(3 * vox, 0), pr(3 * vox), ves(vox), mask(vox);
        std::vector<std::size_t> cls(vox);
        for (std::size_t i = 0; i < vox; ++i) {
            cls[i] = rng() % 3;
            oh[cls[i] * vox + i] = 1;
            double a = u(rng), b = u(rng), c = u(rng);
            const double t = a + b + c;
            pr[i] = a / t;
            pr[vox + i] = b / t;
            pr[2 * vox + i] = c / t;
            ves[i] = u(rng);
            mask[i] = rng() % 5 != 0;
        }
        const auto l = artery_vein_loss(TD::from(s3, pr), TD::from(s1, ves), TD::from(s3, oh), TD::from(s1, mask),
                                        TD::scalar(0.3), 0.1);
        double ref = 0;
        for (std::size_t c = 0; c < 3; ++c) {
            ref += oracle::dice_focal({pr.begin() + c * vox, pr.begin() + (c + 1) * vox},
                                      {oh.begin() + c * vox, oh.begin() + (c + 1) * vox}, mask) / 3.0;
        }
        std::vector<double> yv(vox);
        for (std::size_t i = 0; i < vox; ++i) yv[i] = cls[i] != 0;
        ref += oracle::dice_focal(ves, yv, mask);
        CHECK(l.seg.item() == doctest::Approx(ref).epsilon(1e-12));
        CHECK(l.total.item() == doctest::Approx(ref + 0.03).epsilon(1e-12));
    }
    SUBCASE("heads must match the task") {
        CHECK_THROWS_AS(airway_loss(TD::full({1, 3, 2, 2, 2}, 0.3), TD::zeros({1, 3, 2, 2, 2}), TD(), 0.1), DataError);
        CHECK_THROWS_AS(artery_vein_loss(TD::full({1, 1, 2, 2, 2}, 0.3), TD::full({1, 1, 2, 2, 2}, 0.3),
                                         TD::zeros({1, 1, 2, 2, 2}), TD(), TD(), 0.1),
                        DataError);
        CHECK_THROWS_AS(artery_vein_loss(TD::full({1, 3, 2, 2, 2}, 0.3), TD(), TD::zeros({1, 3, 2, 2, 2}), TD(), TD(), 0.1),
                        DataError);
    }
}

TEST_CASE("model assembly") {
    ModelConfig cfg;
    CHECK(cfg.alpha == 0.1);
    CHECK(cfg.p == 2.0);
    CHECK(cfg.r == 2);
    CHECK(cfg.ladder == kToyLadder);

    SUBCASE("closed-form parameter counts") {
        // Per block: two 3x3x3 convs with bias, two affine norms, FR weights
        // D + H + W and 2 * (C/2) * C; summed by hand for the 32^3 toy ladder.
        Model<float> airway(cfg);
        CHECK(airway.parameter_count() == 376355);
        CHECK(expected_parameter_count(cfg) == 376355);
        ModelConfig av = cfg;
        av.task = Task::ArteryVein;
        av.in_channels = 3;
        CHECK(Model<float>(av).parameter_count() == 376585);
        CHECK(expected_parameter_count(av) == 376585);
        av.use_coordinate_map = false;
        av.use_aux_vessel_head = false;
        CHECK(Model<float>(av).parameter_count() == expected_parameter_count(av));
    }
    SUBCASE("forward shapes and heads") {
        ModelConfig c = cfg;
        c.ladder = {2, 4, 4, 4, 4};
        c.patch = {9, 6, 7};
        Model<double> m(c);
        const auto x = TD::full({1, 1, 9, 6, 7}, 0.2);
        const auto coords = coordinate_map<double>(c.patch, {0, 0, 0}, c.patch);
        const auto out = m.forward(x, coords);
        CHECK(out.seg.shape() == Shape{1, 1, 9, 6, 7});
        CHECK(!out.vessel.defined());
        REQUIRE(out.decoder.size() == 4);
        CHECK(out.decoder[3].shape() == Shape{1, 2, 9, 6, 7});
        CHECK(out.decoder[0].shape() == Shape{1, 4, 2, 1, 1});
        CHECK_THROWS_AS(m.forward(x), DataError);

        c.task = Task::ArteryVein;
        c.in_channels = 3;
        Model<double> av(c);
        const auto o2 = av.forward(TD::full({1, 3, 9, 6, 7}, 0.2), coords);
        CHECK(o2.seg.shape() == Shape{1, 3, 9, 6, 7});
        CHECK(o2.vessel.shape() == Shape{1, 1, 9, 6, 7});
        for (std::size_t i = 0; i < 9 * 6 * 7; ++i) {
            const double s = o2.seg.values()[i] + o2.seg.values()[378 + i] + o2.seg.values()[756 + i];
            CHECK(s == doctest::Approx(1.0));
        }
    }
    SUBCASE("invalid configurations") {
        ModelConfig c = cfg;
        c.ladder = {3, 6, 12, 24, 48};
        CHECK_THROWS_AS(Model<float>{c}, DataError);
        c = cfg;
        c.p = 0.5;
        CHECK_THROWS_AS(c.validate(), DataError);
        c = cfg;
        c.alpha = -1;
        CHECK_THROWS_AS(c.validate(), DataError);
    }
    SUBCASE("checkpoint arrays rebuild the configuration") {
        ModelConfig c = cfg;
        c.task = Task::ArteryVein;
        c.in_channels = 3;
        c.ladder = {2, 4, 4, 8, 8};
        c.patch = {8, 6, 10};
        c.seed = 5;
        Model<float> a(c);
        const auto arrays = a.to_arrays();
        const auto back = config_from_arrays(arrays);
        CHECK(back.task == Task::ArteryVein);
        CHECK(back.in_channels == 3);
        CHECK(back.ladder == c.ladder);
        CHECK(back.patch == c.patch);
        CHECK(back.r == 2);
        CHECK(back.use_coordinate_map);
        CHECK(back.use_aux_vessel_head);
        ModelConfig other = back;
        other.seed = 99;
        Model<float> b(other);
        b.load_arrays(arrays);
        const auto again = b.to_arrays();
        for (std::size_t i = 0; i < arrays.size(); ++i) CHECK(again[i].values == arrays[i].values);
        auto broken = arrays;
        broken.pop_back();
        CHECK_THROWS_AS(b.load_arrays(broken), DataError);
    }
    SUBCASE("coordinate map normalisation") {
        const auto m = coordinate_map<double>({2, 3, 4}, {1, 0, 2}, {5, 3, 7});
        CHECK(m.values()[0] == doctest::Approx(0.25));                  // z = 1 of 0..4
        CHECK(m.values()[24 + (0 * 3 + 2) * 4] == doctest::Approx(1.0));  // y = 2 of 0..2
        CHECK(m.values()[48 + 3] == doctest::Approx(5.0 / 6.0));          // x = 5 of 0..6
    }
}

TEST_CASE("phantoms") {
    SUBCASE("a straight tube is the set within r of its axis") {
        const double r = 2.3;
        const Dims d{12, 11, 11};
        const auto m = rasterize_capsules({{{-5, 5, 5}, {20, 5, 5}, r}}, d);
        for (std::size_t z = 0; z < d.z; ++z)
            for (std::size_t y = 0; y < d.y; ++y)
                for (std::size_t x = 0; x < d.x; ++x) {
                    const double dist = std::hypot(double(y) - 5, double(x) - 5);
                    CHECK((m(z, y, x) != 0) == (dist <= r));
                }
    }
    SUBCASE("seeded and reproducible") {
        PhantomConfig pc;
        pc.seed = 11;
        const auto a = make_phantom(pc);
        const auto b = make_phantom(pc);
        CHECK(a.ct == b.ct);
        CHECK(a.label == b.label);
        pc.seed = 12;
        CHECK(!(make_phantom(pc).label == a.label));
        CHECK(count_nonzero(a.label) > 100);
        // Lumen is dark, the wall brighter.
        for (std::size_t i = 0; i < a.label.size(); ++i)
            if (a.label[i]) CHECK(a.ct[i] < -900);
    }
    SUBCASE("noise-free label matches capsule membership") {
        PhantomConfig pc;
        pc.noise = 0;
        pc.seed = 4;
        const auto ph = make_phantom(pc);
        CHECK(ph.label == rasterize_capsules(ph.capsules, pc.dims));
        CHECK(ph.capsules.size() == pc.branches);
    }
    SUBCASE("artery-vein phantom") {
        PhantomConfig pc;
        pc.kind = PhantomKind::ArteryVein;
        pc.seed = 8;
        const auto ph = make_phantom(pc);
        std::size_t art = 0, vein = 0, air = 0;
        for (std::size_t i = 0; i < ph.label.size(); ++i) {
            art += ph.label[i] == kArtery;
            vein += ph.label[i] == kVein;
            air += ph.airway[i] != 0;
            if (ph.airway[i]) CHECK(ph.label[i] == 0);
        }
        CHECK(art > 50);
        CHECK(vein > 50);
        CHECK(air > 20);
    }
    SUBCASE("prediction equal to the label scores perfectly") {
        PhantomConfig pc;
        pc.seed = 21;
        const auto ph = make_phantom(pc);
        const auto g = build_skeleton_graph(skeletonize(ph.label));
        const auto s = airway_scores(ph.label, ph.label, g, LabelMap::like(ph.label));
        CHECK(s.bd == 100);
        CHECK(s.td == 100);
        CHECK(s.dsc == 100);
        CHECK(s.fpr == 0);
    }
    SUBCASE("tubes that cannot fit") {
        PhantomConfig pc;
        pc.dims = {10, 10, 10};
        CHECK_THROWS_AS(make_phantom(pc), DataError);
    }
}

namespace {

std::vector<TrainSample> small_dataset(std::size_t n) {
    std::vector<TrainSample> data;
    for (std::size_t i = 0; i < n; ++i) {
        PhantomConfig pc;
        pc.dims = {16, 16, 16};
        pc.radius_max = 2.0;
        pc.radius_min = 1.0;
        pc.seed = 300 + i;
        const auto ph = make_phantom(pc);
        data.push_back({{normalize_hu(ph.ct)}, ph.label});
    }
    return data;
}

ModelConfig small_model() {
    ModelConfig c;
    c.ladder = {2, 4, 4, 4, 4};
    c.patch = {12, 12, 12};
    c.seed = 3;
    return c;
}

}  // namespace

TEST_CASE("training loop") {
    const auto data = small_dataset(2);
    TrainConfig tc;
    tc.epochs = 2;
    tc.seed = 4;
    CHECK(tc.lr == 3e-3);
    CHECK(tc.plateau_patience == 10);
    CHECK(tc.lr_factor == 0.1);

    SUBCASE("zero epochs leave the model untouched") {
        Model<float> m(small_model());
        const auto before = m.to_arrays();
        tc.epochs = 0;
        CHECK(train(m, data, tc).empty());
        const auto after = m.to_arrays();
        for (std::size_t i = 0; i < before.size(); ++i) CHECK(after[i].values == before[i].values);
    }
    SUBCASE("same seed gives identical history and weights") {
        Model<float> a(small_model()), b(small_model());
        const auto ha = train(a, data, tc);
        const auto hb = train(b, data, tc);
        CHECK(history_csv(ha) == history_csv(hb));
        const auto wa = a.to_arrays(), wb = b.to_arrays();
        for (std::size_t i = 0; i < wa.size(); ++i) CHECK(wa[i].values == wb[i].values);
        REQUIRE(ha.size() == 2);
        CHECK(ha[0].epoch == 1);
        CHECK(std::isfinite(ha[1].total));
        CHECK(history_csv(ha).rfind("epoch,lr,total,seg,distill\n", 0) == 0);
    }
    SUBCASE("non-finite input aborts") {
        auto bad = data;
        for (auto& v : bad[0].channels[0].data()) v = std::nanf("");
        Model<float> m(small_model());
        CHECK_THROWS_AS(train(m, bad, tc), NumericError);
    }
    SUBCASE("invalid setups") {
        Model<float> m(small_model());
        CHECK_THROWS_AS(train(m, {}, tc), DataError);
        TrainConfig t2 = tc;
        t2.lr_factor = 1.0;
        CHECK_THROWS_AS(train(m, data, t2), DataError);
        t2 = tc;
        t2.batch_size = 2;
        CHECK_THROWS_AS(train(m, data, t2), DataError);
    }
}

TEST_CASE("plateau schedule and Adam") {
    PlateauSchedule p(10, 0.1);
    double lr = p.update(1.0, 3e-3);
    for (int i = 0; i < 10; ++i) lr = p.update(1.0, lr);
    CHECK(lr == 3e-3);  // ten flat epochs: still waiting
    lr = p.update(1.0, lr);
    CHECK(lr == doctest::Approx(3e-4));
    lr = p.update(0.5, lr);
    CHECK(lr == doctest::Approx(3e-4));

    auto x = TD::from({2}, {1.0, -2.0}, true);
    Adam<double> opt({x}, 0.1);
    auto loss = sum(mul(x, x));
    loss.backward();
    opt.step();
    // The first bias-corrected step has magnitude lr in every coordinate.
    CHECK(x.values()[0] == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(x.values()[1] == doctest::Approx(-1.9).epsilon(1e-6));
}

TEST_CASE("sliding window inference") {
    const auto constant = [](float v, std::size_t k = 1) {
        return [v, k](const Tensor<float>& x, Index3) {
            return Tensor<float>::full({1, k, x.dim(2), x.dim(3), x.dim(4)}, v);
        };
    };
    SUBCASE("window starts") {
        CHECK(window_starts(10, 32, 64) == std::vector<std::size_t>{0});
        CHECK(window_starts(100, 64, 64) == std::vector<std::size_t>{0, 64});
        CHECK(window_starts(130, 64, 32) == std::vector<std::size_t>{0, 32, 64, 96});
        CHECK_THROWS_AS(window_starts(100, 32, 64), DataError);
        CHECK_THROWS_AS(window_starts(100, 32, 0), DataError);
    }
    SUBCASE("volume smaller than the patch") {
        Volume v(Dims{5, 6, 7});
        int calls = 0;
        const auto out = sliding_window_infer({v}, {{8, 8, 8}, 64, 0}, [&](const Tensor<float>& x, Index3 o) {
            ++calls;
            CHECK(o == Index3{0, 0, 0});
            return Tensor<float>::full({1, 2, x.dim(2), x.dim(3), x.dim(4)}, 0.25f);
        });
        CHECK(calls == 1);
        REQUIRE(out.size() == 2);
        CHECK(out[0].dims() == v.dims());
    }
    SUBCASE("constant model for every stride") {
        Volume v(Dims{150, 20, 19});
        for (std::size_t s : {1, 7, 16, 33, 64}) {
            const auto out = sliding_window_infer({v}, {{64, 8, 8}, s, 0}, constant(0.375f));
            for (float x : out[0].data()) CHECK(x == 0.375f);
        }
    }
    SUBCASE("two overlapping windows average") {
        Volume v(Dims{6, 1, 1});
        const auto out = sliding_window_infer({v}, {{4, 1, 1}, 2, 0}, [](const Tensor<float>& x, Index3 o) {
            return Tensor<float>::full({1, 1, x.dim(2), 1, 1}, o[0] == 0 ? 0.2f : 0.8f);
        });
        const float expect[6] = {0.2f, 0.2f, 0.5f, 0.5f, 0.8f, 0.8f};
        for (int i = 0; i < 6; ++i) CHECK(out[0][i] == doctest::Approx(expect[i]));
    }
    SUBCASE("the model sees zero padding past the volume") {
        Volume v(Dims{3, 2, 2}, {1, 1, 1}, {0, 0, 0}, 1.0f);
        sliding_window_infer({v}, {{4, 2, 2}, 4, 0}, [](const Tensor<float>& x, Index3) {
            for (std::size_t i = 0; i < 12; ++i) CHECK(x.values()[i] == 1.0f);
            for (std::size_t i = 12; i < 16; ++i) CHECK(x.values()[i] == 0.0f);
            return Tensor<float>::full({1, 1, 4, 2, 2}, 0.5f);
        });
    }
}

TEST_CASE("postprocessing") {
    SUBCASE("airway keeps the largest component") {
        Volume p(Dims{1, 5, 20});
        CHECK(count_nonzero(postprocess_airway(p)) == 0);
        for (std::size_t x = 0; x < 10; ++x) p(0, 1, x) = 0.9f;
        for (std::size_t x = 14; x < 17; ++x) p(0, 3, x) = 0.8f;
        p(0, 4, 0) = 0.5f;  // not above the threshold
        const auto m = postprocess_airway(p);
        CHECK(count_nonzero(m) == 10);
        CHECK(m(0, 1, 0) == 1);
        CHECK(m(0, 3, 15) == 0);
        CHECK(count_nonzero(postprocess_airway(p, 0.85)) == 10);
    }
    SUBCASE("artery-vein argmax") {
        std::vector<Volume> probs(3, Volume(Dims{1, 1, 4}));
        const float v[4][3] = {{0.2f, 0.5f, 0.3f}, {0.1f, 0.3f, 0.6f}, {0.4f, 0.4f, 0.2f}, {0, 0, 0}};
        for (int i = 0; i < 4; ++i)
            for (int c = 0; c < 3; ++c) probs[c][i] = v[i][c];
        const auto m = postprocess_artery_vein(probs);
        CHECK(m[0] == kArtery);
        CHECK(m[1] == kVein);
        CHECK(m[2] == kBackground);
        CHECK(m[3] == kBackground);
    }
}

TEST_CASE("gradient suite") {
    for (const auto& r : run_gradient_suite(0)) {
        CAPTURE(r.name);
        CHECK(r.max_rel_err < 1e-4);
        CHECK(r.checked > 0);
    }
}
