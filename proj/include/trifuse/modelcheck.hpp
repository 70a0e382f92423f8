#pragma once

#include "trifuse/config.hpp"
#include "trifuse/gradcheck.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace trifuse {

/// Parameter groups accepted by model_grad_check: all, pathways,
/// crossattn, decision, losses.
const std::vector<std::string>& grad_check_modules();

/// Reduced widths that keep every layer of the network while making an
/// exhaustive finite-difference sweep cheap.
ModelConfig grad_check_model_config();

struct ModelGradCheckOptions {
    std::uint64_t seed = 0;
    std::string module = "all";
    /// Use the default-size network instead of the reduced one.
    bool full_size = false;
    Index batch = 4;
    /// Elements per parameter; 0 checks all of them.
    std::size_t max_elements_per_param = 0;
    double step = 1e-5;
    double denominator_floor = 1e-6;
    AblationFlags ablation;
    LossConfig loss;
};

/// Random model, inputs and mixed soft targets from `seed`; compares the
/// gradient of the multi-task loss over the whole forward pass (fusion
/// dropout included, with a fixed mask) against central differences.
GradCheckResult model_grad_check(const ModelGradCheckOptions& options);

} // namespace trifuse
