#pragma once

#include "trifuse/autodiff.hpp"
#include "trifuse/config.hpp"
#include "trifuse/pathways.hpp"

#include <array>
#include <string>

namespace trifuse {

struct CrossOutput {
    std::array<Var, kModalityCount> z; // indexed by index_of(ModalityId)
};

/// "cross.face." etc.
std::string cross_prefix(ModalityId target);

void init_cross_params(ParamStore& params, ModalityId target, const ModelConfig& cfg,
                       std::uint64_t seed);

/// proj_t(z_a) + proj_t(z_b) with one shared affine map per target branch.
/// Applying it per term means the bias enters twice; that is intended.
Var cross_project(Tape& tape, ModalityId target, const Var& z_a, const Var& z_b);

/// s = z_t + injected; returns s + Attn(s) with the target's own
/// tokenized attention parameters.
Var cross_attention_block(Tape& tape, ModalityId target, const Var& z_t, const Var& injected,
                          Index tokens);

/// All three branches read the same pathway outputs.
CrossOutput trimodal_cross(Tape& tape, const std::array<PathwayOutput, kModalityCount>& pathways,
                           const ModelConfig& cfg);

} // namespace trifuse
