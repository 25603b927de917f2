#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tubule::net {

struct GradSuiteResult {
    std::string name;
    double max_rel_err = 0;
    std::size_t checked = 0;  // coordinates compared
};

/// Central-difference checks in double precision of every differentiable
/// operator, the recalibration and distillation modules, the losses, and
/// the full objective of tiny airway and artery-vein models. Shapes are
/// drawn at random from the seed, up to 2 x 4 x 6 x 6 x 6; inputs to
/// non-smooth operators are kept clear of their kinks.
std::vector<GradSuiteResult> run_gradient_suite(std::uint64_t seed = 0);

}  // namespace tubule::net
