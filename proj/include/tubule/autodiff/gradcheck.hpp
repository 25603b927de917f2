#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tubule/autodiff/tensor.hpp"

namespace tubule::ad {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_coordinate = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t checked = 0;  // coordinates compared
};

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares analytic gradients of a scalar f against central differences.
/// Relative error per coordinate is |a - n| / max(1e-6, |a| + |n|). The floor
/// sits above the roundoff of a difference quotient on O(1) values, so
/// gradients that are exactly zero do not read as failures. With
/// `max_coords` > 0 only that many randomly chosen coordinates per input are
/// probed (seeded). Throws NumericError if f is not finite.
GradCheckReport gradient_check(const ScalarFn& f, const std::vector<Tensor<double>>& inputs, double step = 1e-5,
                               std::size_t max_coords = 0, std::uint64_t seed = 0);

/// As above, but the differences are taken of `numeric_f`. Used where f
/// detaches part of its graph on purpose: numeric_f then holds the detached
/// values fixed at the base point, which is what the analytic gradient of f
/// differentiates.
GradCheckReport gradient_check(const ScalarFn& f, const ScalarFn& numeric_f, const std::vector<Tensor<double>>& inputs,
                               double step = 1e-5, std::size_t max_coords = 0, std::uint64_t seed = 0);

}  // namespace tubule::ad
