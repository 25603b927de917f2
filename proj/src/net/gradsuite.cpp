#include "tubule/net/gradsuite.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <random>

#include "tubule/autodiff/gradcheck.hpp"
#include "tubule/net/model.hpp"

namespace tubule::net {

using namespace tubule::ad;
using TD = Tensor<double>;
using Fn = std::function<TD(const std::vector<TD>&)>;

namespace {

class Suite {
public:
    explicit Suite(std::uint64_t seed) : rng_(seed) {}

    std::size_t pick(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_); }

    // Random [N,C,D,H,W] within 2 x 4 x 6 x 6 x 6.
    Shape shape5(std::size_t cmin = 1, std::size_t smin = 1) {
        return {pick(1, 2), pick(cmin, 4), pick(smin, 6), pick(smin, 6), pick(smin, 6)};
    }

    TD uniform(Shape s, double lo = -1, double hi = 1, bool grad = true) {
        std::uniform_real_distribution<double> u(lo, hi);
        std::vector<double> v(shape_numel(s));
        for (auto& x : v) x = u(rng_);
        return TD::from(std::move(s), std::move(v), grad);
    }

    // |x| >= 0.1 everywhere.
    TD away_from_zero(Shape s) {
        auto t = uniform(std::move(s));
        for (auto& x : t.values()) x = x < 0 ? x - 0.1 : x + 0.1;
        return t;
    }

    // Distinct values on a lattice with spacing far above the difference step.
    TD distinct(Shape s) {
        std::vector<double> v(shape_numel(s));
        std::iota(v.begin(), v.end(), 0.0);
        std::shuffle(v.begin(), v.end(), rng_);
        for (auto& x : v) x = -1.0 + 2.0 * x / double(v.size());
        return TD::from(std::move(s), std::move(v), true);
    }

    // Weighted sum with fixed random weights so every output coordinate counts.
    TD probe(const TD& y) {
        auto it = weights_.find(shape_str(y.shape()));
        if (it == weights_.end()) it = weights_.emplace(shape_str(y.shape()), uniform(y.shape(), -1, 1, false)).first;
        return sum(mul(y, it->second));
    }

    void check(const std::string& name, const Fn& f, const std::vector<TD>& inputs, std::size_t max_coords = 0,
               const Fn& numeric_f = {}) {
        const auto r = gradient_check(f, numeric_f ? numeric_f : f, inputs, 1e-5, max_coords, rng_());
        results_.push_back({name, r.max_rel_err, r.checked});
    }

    std::vector<GradSuiteResult> results_;
    std::mt19937_64 rng_;
    std::map<std::string, TD> weights_;
};

// Teacher maps of the distillation at the current point, detached.
std::vector<TD> teachers(const std::vector<TD>& feats, double p) {
    std::vector<TD> out;
    for (const auto& m : attention_distillation(feats, p).maps) out.push_back(m.detach());
    return out;
}

// The distillation loss with each teacher held at a fixed value. Its true
// derivative is what the detached graph propagates.
TD frozen_distill(const std::vector<TD>& feats, double p, const std::vector<TD>& fixed) {
    const auto maps = attention_distillation(feats, p).maps;
    TD loss;
    for (std::size_t m = 0; m + 1 < maps.size(); ++m) {
        auto term = frobenius_sq(sub(maps[m], fixed[m + 1]));
        loss = loss.defined() ? add(loss, term) : term;
    }
    return loss;
}

}  // namespace

std::vector<GradSuiteResult> run_gradient_suite(std::uint64_t seed) {
    Suite s(seed);
    const auto P = [&s](const TD& y) { return s.probe(y); };

    {
        const auto xs = s.shape5(1, 3);
        const Shape ks{s.pick(1, 4), xs[1], s.pick(1, 3), s.pick(1, 3), s.pick(1, 3)};
        const Triple pad{s.pick(0, 1), s.pick(0, 1), s.pick(0, 1)};
        const Triple stride{s.pick(1, 2), s.pick(1, 2), s.pick(1, 2)};
        s.check("conv3d", [&](const std::vector<TD>& in) { return P(conv3d(in[0], in[1], in[2], pad, stride)); },
                {s.uniform(xs), s.uniform(ks), s.uniform({ks[0]})});
    }
    {
        const auto xs = s.shape5(1, 2);
        s.check("instance_norm", [&](const std::vector<TD>& in) { return P(instance_norm(in[0], in[1], in[2])); },
                {s.uniform(xs), s.uniform({xs[1]}), s.uniform({xs[1]})});
    }
    {
        const auto xs = s.shape5();
        s.check("max_pool2", [&](const std::vector<TD>& in) { return P(max_pool2(in[0])); }, {s.distinct(xs)});
        s.check("avg_pool2", [&](const std::vector<TD>& in) { return P(avg_pool2(in[0])); }, {s.uniform(xs)});
    }
    {
        const auto xs = s.shape5();
        const Triple out{s.pick(1, 6), s.pick(1, 6), s.pick(1, 6)};
        s.check("trilinear_resize", [&](const std::vector<TD>& in) { return P(trilinear_resize(in[0], out)); },
                {s.uniform(xs)});
    }
    {
        const auto xs = s.shape5();
        s.check("relu", [&](const std::vector<TD>& in) { return P(relu(in[0])); }, {s.away_from_zero(xs)});
        s.check("sigmoid", [&](const std::vector<TD>& in) { return P(sigmoid(in[0])); }, {s.uniform(xs, -4, 4)});
        for (double p : {1.0, 2.0, 4.0, 10.0}) {
            // Large p flattens |x|^p near zero until its slope drowns in roundoff.
            auto x = s.away_from_zero(xs);
            if (p > 4)
                for (auto& v : x.values()) v = v < 0 ? v - 0.4 : v + 0.4;
            s.check("abs_pow(p=" + std::to_string(int(p)) + ")",
                    [&, p](const std::vector<TD>& in) { return P(abs_pow(in[0], p)); }, {x});
        }
        s.check("log", [&](const std::vector<TD>& in) { return P(log(in[0])); }, {s.uniform(xs, 0.1, 2)});
        // Values in [-1, -0.6] u [-0.4, 0.4] u [0.6, 1]: clear of both bounds.
        auto c = s.uniform(xs);
        for (auto& x : c.values())
            if (std::abs(std::abs(x) - 0.5) < 0.1) x = x < 0 ? x - 0.2 : x + 0.2;
        s.check("clamp", [&](const std::vector<TD>& in) { return P(clamp(in[0], -0.5, 0.5)); }, {c});
        s.check("affine", [&](const std::vector<TD>& in) { return P(affine(in[0], -1.7, 0.3)); }, {s.uniform(xs)});
    }
    {
        const auto xs = s.shape5();
        const auto a = s.away_from_zero(xs), b = s.away_from_zero(xs), one = s.away_from_zero({1});
        s.check("add", [&](const std::vector<TD>& in) { return P(add(in[0], in[1])); }, {a, b});
        s.check("sub", [&](const std::vector<TD>& in) { return P(sub(in[0], in[1])); }, {a, b});
        s.check("mul", [&](const std::vector<TD>& in) { return P(mul(in[0], in[1])); }, {a, b});
        s.check("div", [&](const std::vector<TD>& in) { return P(div(in[0], in[1])); }, {a, b});
        s.check("div(broadcast)", [&](const std::vector<TD>& in) { return P(div(in[0], in[1])); }, {a, one});
    }
    {
        auto xs = s.shape5(2);
        auto ys = xs;
        ys[1] = s.pick(1, 4);
        const std::size_t c = xs[1];
        s.check("concat_channels", [&](const std::vector<TD>& in) { return P(concat_channels<double>({in[0], in[1]})); },
                {s.uniform(xs), s.uniform(ys)});
        s.check("slice_channels", [&](const std::vector<TD>& in) { return P(slice_channels(in[0], 1, c)); }, {s.uniform(xs)});
        s.check("channel_sum", [&](const std::vector<TD>& in) { return P(channel_sum(in[0])); }, {s.uniform(xs)});
        s.check("channel_softmax", [&](const std::vector<TD>& in) { return P(channel_softmax(in[0])); }, {s.uniform(xs, -3, 3)});
        s.check("spatial_softmax", [&](const std::vector<TD>& in) { return P(spatial_softmax(in[0])); }, {s.uniform(xs, -3, 3)});
        s.check("sum", [&](const std::vector<TD>& in) { return sum(mul(in[0], in[0])); }, {s.uniform(xs)});
        s.check("mean", [&](const std::vector<TD>& in) { return mean(mul(in[0], in[0])); }, {s.uniform(xs)});
        s.check("frobenius_sq", [&](const std::vector<TD>& in) { return frobenius_sq(in[0]); }, {s.uniform(xs)});
    }
    {
        const auto xs = s.shape5();
        s.check("spatial_integration",
                [&](const std::vector<TD>& in) { return P(spatial_integration(in[0], in[1], in[2], in[3])); },
                {s.uniform(xs), s.uniform({xs[2]}), s.uniform({xs[3]}), s.uniform({xs[4]})});
    }
    {
        // Recalibration: A, d, h, w, k1, k2 are all inputs. The hidden ReLU
        // input is kept clear of zero by choosing k1 from a fixed-sign draw.
        auto xs = s.shape5(2);
        xs[1] = 4;
        const std::size_t r = 2;
        auto a = s.uniform(xs, 0.1, 1.0);
        auto d = s.uniform({xs[2]}, 0.1, 1), h = s.uniform({xs[3]}, 0.1, 1), w = s.uniform({xs[4]}, 0.1, 1);
        auto k1 = s.uniform({xs[1] / r, xs[1], 1, 1, 1}, 0.2, 1);
        auto k2 = s.uniform({xs[1], xs[1] / r, 1, 1, 1});
        s.check("feature_recalibration",
                [&](const std::vector<TD>& in) {
                    RecalibrationParams<double> p{in[1], in[2], in[3], in[4], in[5], r};
                    return P(feature_recalibration(in[0], p));
                },
                {a, d, h, w, k1, k2});
    }
    {
        const std::size_t n = s.pick(1, 2);
        std::vector<TD> feats;
        for (std::size_t m = 0; m < 4; ++m) {
            const std::size_t e = 1 + m + s.pick(0, 2 - std::min<std::size_t>(m, 2));
            feats.push_back(s.away_from_zero({n, s.pick(1, 4), std::min<std::size_t>(e, 6), std::min<std::size_t>(e + 1, 6),
                                              std::min<std::size_t>(e, 6)}));
        }
        for (double p : {1.0, 2.0, 4.0}) {
            const auto fixed = teachers(feats, p);
            s.check("attention_distillation(p=" + std::to_string(int(p)) + ")",
                    [p](const std::vector<TD>& in) { return attention_distillation(in, p).loss; }, feats, 0,
                    [p, fixed](const std::vector<TD>& in) { return frozen_distill(in, p, fixed); });
        }
    }
    {
        const auto xs = s.shape5(1);
        auto ys = xs;
        ys[1] = 1;
        auto y = s.uniform(ys, 0, 1, false);
        for (auto& v : y.values()) v = v < 0.3 ? 1.0 : 0.0;
        auto mask = s.uniform(ys, 0, 1, false);
        for (auto& v : mask.values()) v = v < 0.8 ? 1.0 : 0.0;
        s.check("dice_focal_loss", [&](const std::vector<TD>& in) { return dice_focal_loss(sigmoid(in[0]), y); },
                {s.uniform(ys, -2, 2)});
        s.check("dice_focal_loss(masked)",
                [&](const std::vector<TD>& in) { return dice_focal_loss(sigmoid(in[0]), y, mask); }, {s.uniform(ys, -2, 2)});

        std::vector<TD> feats{s.away_from_zero({ys[0], 2, 2, 2, 2}), s.away_from_zero({ys[0], 2, ys[2], ys[3], ys[4]})};
        const auto fixed = teachers(feats, 2.0);
        s.check(
            "airway_loss",
            [&](const std::vector<TD>& in) {
                const auto d = attention_distillation<double>({in[1], in[2]}, 2.0).loss;
                return airway_loss(sigmoid(in[0]), y, d, 0.1).total;
            },
            {s.uniform(ys, -2, 2), feats[0], feats[1]}, 0,
            [&](const std::vector<TD>& in) {
                return airway_loss(sigmoid(in[0]), y, frozen_distill({in[1], in[2]}, 2.0, fixed), 0.1).total;
            });

        auto cs = ys;
        cs[1] = 3;
        std::vector<double> onehot(shape_numel(cs), 0.0);
        const std::size_t vox = ys[2] * ys[3] * ys[4];
        for (std::size_t b = 0; b < ys[0]; ++b)
            for (std::size_t i = 0; i < vox; ++i) onehot[(b * 3 + s.pick(0, 2)) * vox + i] = 1.0;
        const auto oh = TD::from(cs, onehot);
        const auto av = [&](const std::vector<TD>& in, bool frozen) {
            const auto probs = channel_softmax(in[0]);
            const auto vessel = sigmoid(conv3d(probs, in[1], TD()));
            const auto d = frozen ? frozen_distill({in[2], in[3]}, 2.0, fixed)
                                  : attention_distillation<double>({in[2], in[3]}, 2.0).loss;
            return artery_vein_loss(probs, vessel, oh, mask, d, 0.1).total;
        };
        s.check(
            "artery_vein_loss", [&](const std::vector<TD>& in) { return av(in, false); },
            {s.uniform(cs, -2, 2), s.uniform({1, 3, 1, 1, 1}), feats[0], feats[1]}, 0,
            [&](const std::vector<TD>& in) { return av(in, true); });
    }
    {
        // Whole objectives of tiny models, against every parameter tensor.
        for (Task task : {Task::Airway, Task::ArteryVein}) {
            ModelConfig cfg;
            cfg.task = task;
            cfg.in_channels = task == Task::Airway ? 1 : 3;
            cfg.ladder = {2, 2, 2, 2, 2};
            cfg.patch = {s.pick(4, 6), s.pick(4, 6), s.pick(4, 6)};
            cfg.seed = s.rng_();
            Model<double> model(cfg);
            const Shape xs{1, cfg.in_channels, cfg.patch[0], cfg.patch[1], cfg.patch[2]};
            const auto x = s.uniform(xs, -1, 1, false);
            const auto coords = coordinate_map<double>(cfg.patch, {0, 0, 0}, cfg.patch);
            const std::size_t k = task == Task::Airway ? 1 : 3;
            Shape ys{1, k, cfg.patch[0], cfg.patch[1], cfg.patch[2]};
            std::vector<double> yv(shape_numel(ys), 0.0);
            const std::size_t vox = shape_numel(ys) / k;
            for (std::size_t i = 0; i < vox; ++i) {
                if (k == 1) {
                    yv[i] = s.pick(0, 3) == 0 ? 1.0 : 0.0;
                } else {
                    yv[s.pick(0, 2) * vox + i] = 1.0;
                }
            }
            const auto y = TD::from(ys, yv);
            // On single-voxel scales instance norm outputs beta exactly, so the
            // default beta = 0 would park the following ReLU on its kink.
            std::vector<TD> params;
            for (auto& [name, t] : model.parameters()) {
                if (name.ends_with(".beta")) t.values() = s.away_from_zero(t.shape()).values();
                params.push_back(t);
            }
            const double p = model.config().p, alpha = model.config().alpha;
            const auto fixed = teachers(model.forward(x, coords).decoder, p);
            const auto objective = [&, task](bool frozen) {
                const auto out = model.forward(x, coords);
                const auto d = frozen ? frozen_distill(out.decoder, p, fixed) : attention_distillation(out.decoder, p).loss;
                if (task == Task::Airway) return airway_loss(out.seg, y, d, alpha).total;
                return artery_vein_loss(out.seg, out.vessel, y, TD(), d, alpha).total;
            };
            s.check(
                task == Task::Airway ? "model(airway)" : "model(artery-vein)",
                [&](const std::vector<TD>&) { return objective(false); }, params, 8,
                [&](const std::vector<TD>&) { return objective(true); });
        }
    }
    return s.results_;
}

}  // namespace tubule::net
