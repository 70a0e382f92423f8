#pragma once

#include "trifuse/autodiff.hpp"
#include "trifuse/params.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace trifuse {

struct GradCheckOptions {
    double step = 1e-5;
    /// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
    double denominator_floor = 1e-6;
    /// Elements checked per parameter; 0 checks every element.
    std::size_t max_elements_per_param = 0;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_param;
    Index worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
    /// Elements whose +/- step crossed a ReLU kink; their central difference
    /// is not a derivative and they are excluded.
    std::size_t skipped_at_kinks = 0;

    bool passed(double tolerance) const { return checked > 0 && max_relative_error <= tolerance; }
};

/// Builds the forward pass on the given tape and returns a 1x1 loss. Must
/// be deterministic.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares tape gradients against central differences
/// (f(theta + h) - f(theta - h)) / 2h for the named parameters.
GradCheckResult grad_check(ParamStore& params, const std::vector<std::string>& names,
                           const LossBuilder& loss_fn, const GradCheckOptions& options = {});

} // namespace trifuse
