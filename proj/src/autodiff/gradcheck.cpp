#include "tubule/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace tubule::ad {

namespace {

double eval(const ScalarFn& f, const std::vector<Tensor<double>>& inputs) {
    const double v = f(inputs).item();
    if (!std::isfinite(v)) throw NumericError("gradient_check: function value is not finite");
    return v;
}

}  // namespace

GradCheckReport gradient_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double step,
                               std::size_t max_coords, std::uint64_t seed) {
    return gradient_check(f, f, inputs, step, max_coords, seed);
}

GradCheckReport gradient_check(const ScalarFn& f, const ScalarFn& numeric_f, const std::vector<Tensor<double>>& inputs,
                               double step, std::size_t max_coords, std::uint64_t seed) {
    for (auto t : inputs) {
        t.zero_grad();
        t.set_requires_grad(true);
    }
    auto out = f(inputs);
    if (out.numel() != 1) throw DataError("gradient_check: function must return a scalar");
    if (!std::isfinite(out.item())) throw NumericError("gradient_check: function value is not finite");
    out.backward();

    GradCheckReport rep;
    std::mt19937_64 rng(seed);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto x = inputs[t];
        const auto analytic = x.grad();
        std::vector<std::size_t> coords(x.numel());
        std::iota(coords.begin(), coords.end(), 0);
        if (max_coords > 0 && coords.size() > max_coords) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(max_coords);
            std::sort(coords.begin(), coords.end());
        }
        for (auto i : coords) {
            const double v = x.values()[i];
            x.values()[i] = v + step;
            const double fp = eval(numeric_f, inputs);
            x.values()[i] = v - step;
            const double fm = eval(numeric_f, inputs);
            x.values()[i] = v;
            const double num = (fp - fm) / (2.0 * step);
            const double a = analytic[i];
            const double rel = std::abs(a - num) / std::max(1e-6, std::abs(a) + std::abs(num));
            ++rep.checked;
            if (rel > rep.max_rel_err || rep.checked == 1) {
                rep.max_rel_err = std::max(rep.max_rel_err, rel);
                if (rel >= rep.max_rel_err) {
                    rep.worst_input = t;
                    rep.worst_coordinate = i;
                    rep.analytic = a;
                    rep.numeric = num;
                }
            }
        }
    }
    return rep;
}

}  // namespace tubule::ad
