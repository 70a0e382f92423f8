#pragma once

#include "trifuse/autodiff.hpp"
#include "trifuse/config.hpp"
#include "trifuse/modality.hpp"

#include <string>

namespace trifuse {

/// Per-modality pathway result for a batch.
struct PathwayOutput {
    Var z;          // refined feature, B x D
    Var confidence; // B x 1, strictly inside (0, 1)
    Var logits;     // B x K
};

/// "pathway.face." etc.
std::string pathway_prefix(ModalityId m);

/// Registers q/k/v projections (token_dim x token_dim, with bias) under
/// `prefix` + "attn.".
void init_attention_params(ParamStore& params, const std::string& prefix, Index token_dim,
                           std::uint64_t seed);

void init_pathway_params(ParamStore& params, ModalityId m, const ModelConfig& cfg,
                         std::uint64_t seed);

/// Tokenized single-head attention with residual: x (B x D) is viewed as
/// `tokens` tokens of D/tokens features, attended with learned q/k/v
/// projections, flattened back and added to x.
Var self_attention(Tape& tape, const Var& x, const std::string& prefix, Index tokens);

/// Two dense layers with ReLU between, self-attention, confidence head and
/// classifier. A zero row in `x_raw` is a legal (missing modality) input.
PathwayOutput pathway_forward(Tape& tape, ModalityId m, const Var& x_raw, const ModelConfig& cfg);

} // namespace trifuse
