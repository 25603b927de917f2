#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "oracles.hpp"
#include "tubule/autodiff/checkpoint.hpp"
#include "tubule/autodiff/gradcheck.hpp"
#include "tubule/autodiff/ops.hpp"

using namespace tubule;
using namespace tubule::ad;
using TD = Tensor<double>;

namespace {

TD rand_tensor(Shape s, std::mt19937_64& rng, double lo = -1, double hi = 1, bool grad = true) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = u(rng);
    return TD::from(std::move(s), std::move(v), grad);
}

// Keeps values at least `gap` away from zero (for kinks at the origin).
TD away_from_zero(Shape s, std::mt19937_64& rng, double gap = 0.1) {
    auto t = rand_tensor(std::move(s), rng);
    for (auto& x : t.values()) x = x < 0 ? x - gap : x + gap;
    return t;
}

// Weighted sum with fixed random weights so every output coordinate matters.
TD probe(const TD& y, std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    return sum(mul(y, rand_tensor(y.shape(), rng, -1, 1, false)));
}

void check_grad(const ScalarFn& f, const std::vector<TD>& inputs, double tol = 1e-6) {
    const auto r = gradient_check(f, inputs);
    INFO("worst input " << r.worst_input << " coord " << r.worst_coordinate << " analytic " << r.analytic
                        << " numeric " << r.numeric);
    CHECK(r.max_rel_err < tol);
}

}  // namespace

TEST_CASE("backward basics") {
    std::mt19937_64 rng(1);
    auto x = rand_tensor({2, 3}, rng);
    auto loss = sum(x);
    loss.backward();
    for (double g : x.grad()) CHECK(g == 1.0);
    CHECK_THROWS_AS(loss.backward(), NumericError);
    loss.reset_backward();
    loss.backward();
    for (double g : x.grad()) CHECK(g == 2.0);  // leaf grads accumulate

    auto neg = TD::from({3}, {-1, -2, -0.5}, true);
    auto l2 = sum(relu(neg));
    l2.backward();
    for (double g : neg.grad()) CHECK(g == 0.0);

    CHECK_THROWS_AS(relu(x).backward(), DataError);
}

TEST_CASE("detach stops gradients") {
    auto x = TD::from({2}, {1.0, 2.0}, true);
    auto y = mul(x, x);
    auto loss = sum(add(y, y.detach()));
    loss.backward();
    CHECK(x.grad()[0] == doctest::Approx(2.0));
    CHECK(x.grad()[1] == doctest::Approx(4.0));
    auto only_teacher = sum(y.detach());
    CHECK_FALSE(only_teacher.requires_grad());
}

TEST_CASE("conv3d semantics") {
    std::mt19937_64 rng(2);
    SUBCASE("1x1x1 unit kernel is identity") {
        auto x = rand_tensor({1, 1, 3, 4, 5}, rng);
        auto k = TD::full({1, 1, 1, 1, 1}, 1.0);
        CHECK(conv3d(x, k, TD::zeros({1})).values() == x.values());
    }
    SUBCASE("all-ones kernel on a constant") {
        auto x = TD::full({1, 1, 5, 5, 5}, 0.5);
        auto y = conv3d(x, TD::full({1, 1, 3, 3, 3}, 1.0), TD());
        CHECK(y.shape() == Shape{1, 1, 3, 3, 3});
        for (double v : y.values()) CHECK(v == doctest::Approx(13.5));
    }
    SUBCASE("matches the nested-loop reference") {
        for (int t = 0; t < 6; ++t) {
            const Triple pad{std::size_t(t % 2), std::size_t(t % 3 == 0), 1}, st{1 + std::size_t(t % 2), 1, 1 + std::size_t(t == 5)};
            auto x = rand_tensor({1, 2, 4, 4, 4}, rng);
            auto k = rand_tensor({3, 2, 3, 3, 3}, rng);
            auto b = rand_tensor({3}, rng);
            const auto y = conv3d(x, k, b, pad, st);
            std::array<std::size_t, 3> od{};
            const auto ref = oracle::naive_conv3d(x.values(), {1, 2, 4, 4, 4}, k.values(), {3, 2, 3, 3, 3}, b.values(),
                                                  {long(pad[0]), long(pad[1]), long(pad[2])},
                                                  {long(st[0]), long(st[1]), long(st[2])}, od);
            REQUIRE(y.shape() == Shape{1, 3, od[0], od[1], od[2]});
            for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(y.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
        }
    }
    SUBCASE("linear in x") {
        auto k = rand_tensor({2, 2, 3, 3, 3}, rng, -1, 1, false);
        auto x1 = rand_tensor({1, 2, 3, 4, 5}, rng), x2 = rand_tensor({1, 2, 3, 4, 5}, rng);
        const auto lhs = conv3d(add(affine(x1, 2.0, 0.0), affine(x2, -3.0, 0.0)), k, TD(), {1, 1, 1});
        const auto a = conv3d(x1, k, TD(), {1, 1, 1}), b = conv3d(x2, k, TD(), {1, 1, 1});
        for (std::size_t i = 0; i < lhs.numel(); ++i)
            CHECK(lhs.values()[i] == doctest::Approx(2 * a.values()[i] - 3 * b.values()[i]).epsilon(1e-9));
    }
    CHECK_THROWS_AS(conv3d(TD::zeros({1, 2, 3, 3, 3}), TD::zeros({1, 1, 3, 3, 3}), TD()), DataError);
}

TEST_CASE("instance norm moments") {
    std::mt19937_64 rng(3);
    auto x = rand_tensor({2, 3, 3, 4, 5}, rng, -5, 7);
    auto y = instance_norm(x, TD::full({3}, 1.0), TD::zeros({3}));
    const std::size_t m = 60;
    for (std::size_t idx = 0; idx < 6; ++idx) {
        double mu = 0, var = 0;
        for (std::size_t i = 0; i < m; ++i) mu += y.values()[idx * m + i];
        mu /= m;
        for (std::size_t i = 0; i < m; ++i) var += std::pow(y.values()[idx * m + i] - mu, 2);
        var /= m;
        CHECK(std::abs(mu) < 1e-6);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    }
    auto c = instance_norm(TD::full({1, 1, 2, 2, 2}, 3.0), TD::full({1}, 1.0), TD::zeros({1}));
    for (double v : c.values()) CHECK(v == 0.0);
    auto b = instance_norm(x, TD::zeros({3}), TD::full({3}, 0.25));
    for (double v : b.values()) CHECK(v == 0.25);
}

TEST_CASE("pooling and resizing") {
    auto c = max_pool2(TD::full({1, 1, 4, 6, 2}, 2.5));
    CHECK(c.shape() == Shape{1, 1, 2, 3, 1});
    for (double v : c.values()) CHECK(v == 2.5);
    CHECK(max_pool2(TD::zeros({1, 1, 5, 3, 1})).shape() == Shape{1, 1, 3, 2, 1});

    std::mt19937_64 rng(4);
    auto x = rand_tensor({1, 2, 3, 4, 5}, rng);
    CHECK(trilinear_resize(x, {3, 4, 5}).values() == x.values());

    std::vector<double> ramp(8);
    for (std::size_t z = 0; z < 2; ++z)
        for (std::size_t y = 0; y < 2; ++y)
            for (std::size_t xx = 0; xx < 2; ++xx) ramp[(z * 2 + y) * 2 + xx] = double(z) + 2.0 * y + 4.0 * xx;
    const auto r = trilinear_resize(TD::from({1, 1, 2, 2, 2}, ramp), {4, 4, 4});
    const double t[4] = {0, 0.25, 0.75, 1};
    for (std::size_t z = 0; z < 4; ++z)
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t xx = 0; xx < 4; ++xx)
                CHECK(r.values()[(z * 4 + y) * 4 + xx] == doctest::Approx(t[z] + 2 * t[y] + 4 * t[xx]));

    // ties route to the first maximum in scan order
    auto tie = TD::full({1, 1, 2, 2, 2}, 1.0, true);
    sum(max_pool2(tie)).backward();
    CHECK(tie.grad()[0] == 1.0);
    for (std::size_t i = 1; i < 8; ++i) CHECK(tie.grad()[i] == 0.0);
}

TEST_CASE("softmaxes and reductions") {
    auto u = spatial_softmax(TD::full({1, 2, 2, 3, 4}, 7.0));
    for (double v : u.values()) CHECK(v == doctest::Approx(1.0 / 24));
    CHECK(frobenius_sq(TD::zeros({3, 3})).item() == 0.0);
    std::mt19937_64 rng(5);
    auto cs = channel_softmax(rand_tensor({2, 3, 2, 2, 2}, rng, -4, 4));
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 8; ++i) {
            double s = 0;
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = cs.values()[(n * 3 + c) * 8 + i];
                CHECK(v >= 0);
                s += v;
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
}

TEST_CASE("gradient checks per operator") {
    std::mt19937_64 rng(6);
    SUBCASE("linear map is exact") {
        auto x = rand_tensor({5}, rng);
        const auto r = gradient_check([](const std::vector<TD>& in) { return sum(affine(in[0], 3.0, 1.0)); }, {x});
        CHECK(r.max_rel_err < 1e-9);
    }
    SUBCASE("conv3d") {
        check_grad([](const std::vector<TD>& in) { return probe(conv3d(in[0], in[1], in[2], {1, 0, 1}, {1, 2, 1})); },
                   {rand_tensor({2, 2, 4, 5, 3}, rng), rand_tensor({3, 2, 3, 2, 3}, rng), rand_tensor({3}, rng)});
    }
    SUBCASE("instance_norm") {
        check_grad([](const std::vector<TD>& in) { return probe(instance_norm(in[0], in[1], in[2])); },
                   {rand_tensor({2, 3, 3, 2, 4}, rng), rand_tensor({3}, rng), rand_tensor({3}, rng)});
    }
    SUBCASE("pools") {
        auto x = rand_tensor({1, 2, 5, 4, 3}, rng);
        check_grad([](const std::vector<TD>& in) { return probe(max_pool2(in[0])); }, {x});
        check_grad([](const std::vector<TD>& in) { return probe(avg_pool2(in[0])); }, {x});
    }
    SUBCASE("trilinear") {
        check_grad([](const std::vector<TD>& in) { return probe(trilinear_resize(in[0], {5, 2, 7})); },
                   {rand_tensor({1, 2, 3, 4, 3}, rng)});
    }
    SUBCASE("pointwise") {
        auto x = away_from_zero({2, 3, 4}, rng);
        check_grad([](const std::vector<TD>& in) { return probe(relu(in[0])); }, {x});
        check_grad([](const std::vector<TD>& in) { return probe(sigmoid(in[0])); }, {x});
        for (double p : {1.0, 1.5, 2.0, 4.0})
            check_grad([p](const std::vector<TD>& in) { return probe(abs_pow(in[0], p)); }, {x});
        check_grad([](const std::vector<TD>& in) { return probe(log(abs_pow(in[0], 2.0))); }, {x});
        check_grad([](const std::vector<TD>& in) { return probe(clamp(in[0], -0.5, 0.6)); }, {x});
    }
    SUBCASE("binary with broadcast") {
        auto a = away_from_zero({3, 4}, rng), b = away_from_zero({3, 4}, rng), s = away_from_zero({}, rng);
        for (auto f : {add<double>, sub<double>, mul<double>, div<double>}) {
            check_grad([f](const std::vector<TD>& in) { return probe(f(in[0], in[1])); }, {a, b});
            check_grad([f](const std::vector<TD>& in) { return probe(f(in[0], in[1])); }, {a, s});
            check_grad([f](const std::vector<TD>& in) { return probe(f(in[1], in[0])); }, {a, s});
        }
    }
    SUBCASE("channel ops") {
        auto a = rand_tensor({2, 2, 2, 3, 2}, rng), b = rand_tensor({2, 3, 2, 3, 2}, rng);
        check_grad([](const std::vector<TD>& in) { return probe(concat_channels<double>({in[0], in[1]})); }, {a, b});
        check_grad([](const std::vector<TD>& in) { return probe(slice_channels(in[0], 1, 3)); }, {b});
        check_grad([](const std::vector<TD>& in) { return probe(channel_sum(in[0])); }, {b});
        check_grad([](const std::vector<TD>& in) { return probe(channel_softmax(in[0])); }, {b});
        check_grad([](const std::vector<TD>& in) { return probe(spatial_softmax(in[0])); }, {b});
        check_grad([](const std::vector<TD>& in) { return frobenius_sq(in[0]); }, {b});
        check_grad([](const std::vector<TD>& in) { return mean(mul(in[0], in[0])); }, {b});
    }
    SUBCASE("spatial integration") {
        check_grad([](const std::vector<TD>& in) { return probe(spatial_integration(in[0], in[1], in[2], in[3])); },
                   {rand_tensor({2, 3, 3, 4, 5}, rng), rand_tensor({3}, rng), rand_tensor({4}, rng),
                    rand_tensor({5}, rng)});
    }
}

TEST_CASE("kinks at zero are visible to the checker") {
    auto x = TD::from({1}, {0.0}, true);
    const auto r = gradient_check([](const std::vector<TD>& in) { return sum(relu(in[0])); }, {x});
    CHECK(r.max_rel_err > 0.1);  // analytic 0 vs numeric 0.5
}

TEST_CASE("checkpoint roundtrip") {
    const auto p = std::filesystem::temp_directory_path() / "tubule_ckpt.bin";
    std::vector<NamedArray> arrays{{"enc0.conv1.weight", {2, 1, 3, 3, 3}, std::vector<float>(54, 0.5f)},
                                   {"scalar", {}, {3.25f}}};
    save_checkpoint(arrays, p);
    const auto back = load_checkpoint(p);
    REQUIRE(back.size() == 2);
    CHECK(back[0].name == arrays[0].name);
    CHECK(back[0].shape == arrays[0].shape);
    CHECK(back[0].values == arrays[0].values);
    CHECK(back[1].values == arrays[1].values);
    CHECK(std::filesystem::file_size(p) == (4 + 17 + 4 + 20 + 54 * 4) + (4 + 6 + 4 + 4));
}
