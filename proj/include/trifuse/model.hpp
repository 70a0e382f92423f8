#pragma once

#include "trifuse/autodiff.hpp"
#include "trifuse/config.hpp"
#include "trifuse/crossattn.hpp"
#include "trifuse/decision.hpp"
#include "trifuse/modality.hpp"
#include "trifuse/pathways.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <vector>

namespace trifuse {

struct EmbeddingTriplet;

/// One raw-embedding matrix per modality, one sample per row.
using ModalityBatch = std::array<Matrix, kModalityCount>;

struct FusionVars {
    Var z_concat;
    Var gate;
    Var z_fused;
    Var p_fusion;
    Var p_conf;
    Var p_ensemble;
    Var p_corr;
    Var p_final;
};

struct ForwardResult {
    std::array<PathwayOutput, kModalityCount> pathways;
    CrossOutput cross;
    FusionVars fusion;
};

/// Materialized fusion values for a batch.
struct FusionState {
    Matrix z_concat;
    Matrix gate;
    Matrix z_fused;
    Matrix p_fusion;
    Matrix p_conf;
    Matrix p_ensemble;
    Matrix p_corr;
    Matrix p_final;

    static FusionState from(const FusionVars& v);
};

struct ForwardOptions {
    AblationFlags ablation;
    /// Enables fusion-MLP dropout; requires `rng`.
    bool training = false;
    std::mt19937_64* rng = nullptr;
};

/// The trimodal identification network and its parameters.
class TrimodalModel {
public:
    TrimodalModel(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    /// Forward pass on `tape`, which must be bound to params(). Masked
    /// modalities are expected to be zero rows already.
    ForwardResult forward(Tape& tape, const ModalityBatch& inputs,
                          const ForwardOptions& options = {}) const;

    /// Inference-only p_final for a batch.
    Matrix predict_logits(const ModalityBatch& inputs, const AblationFlags& ablation = {}) const;

private:
    ModelConfig cfg_;
    ParamStore params_;
};

/// Zeroes absent modalities in place.
void apply_mask(ModalityBatch& inputs, ModalityMask mask);

struct Prediction {
    FusionState state;
    std::vector<std::uint32_t> ranking;
};

/// End-to-end prediction for one sample under a modality mask, intersected
/// with the sample's own availability mask. Throws
/// std::invalid_argument("no modality available") for an empty mask.
Prediction predict(const TrimodalModel& model, const EmbeddingTriplet& sample, ModalityMask mask,
                   const AblationFlags& ablation = {});

} // namespace trifuse
