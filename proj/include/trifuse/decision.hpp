#pragma once

#include "trifuse/autodiff.hpp"
#include "trifuse/config.hpp"

#include <array>
#include <optional>
#include <random>

namespace trifuse {

struct GatedFusionOutput {
    Var z_concat; // B x 3D
    Var gate;     // B x 3D, each entry in (0, 1); all ones when bypassed
    Var z_fused;  // z_concat * gate
    Var p_fusion; // B x K
};

struct CorrectionOutput {
    Var p_corr;
    Var p_final;
};

void init_decision_params(ParamStore& params, const ModelConfig& cfg, std::uint64_t seed);

/// Inverted-dropout keep mask for the fusion MLP hidden layer.
Matrix fusion_dropout_mask(Index rows, Index cols, double rate, std::mt19937_64& rng);

/// Concatenate, gate with sigmoid(W2 relu(W1 z)), then classify with the
/// fusion MLP. `bypass_gate` fixes the gate at one. `dropout_mask`, when
/// given, multiplies the MLP hidden activations.
GatedFusionOutput gated_fusion(Tape& tape, const std::array<Var, kModalityCount>& z_cross,
                               bool bypass_gate, const std::optional<Matrix>& dropout_mask = {});

/// sum_m c_m^2 p_m / sum_m c_m^2, row by row.
Var confidence_weighted_fusion(const std::array<Var, kModalityCount>& logits,
                               const std::array<Var, kModalityCount>& confidences);

/// Plain mean of the three logit vectors (used when confidence is ablated).
Var unweighted_fusion(const std::array<Var, kModalityCount>& logits);

/// 0.5 * (p_conf + p_fusion).
Var ensemble(const Var& p_conf, const Var& p_fusion);

/// p_corr = MLP_corr([p_face, p_gest, p_voice, p_ens]); p_final = p_ens + 0.2 p_corr.
CorrectionOutput mistake_correction(Tape& tape, const std::array<Var, kModalityCount>& logits,
                                    const Var& p_ensemble);

// Single-sample value forms.
Vector confidence_weighted_fusion(const Vector& p_face, const Vector& p_gesture,
                                  const Vector& p_voice, double c_face, double c_gesture,
                                  double c_voice);
Vector ensemble(const Vector& p_conf, const Vector& p_fusion);
Vector apply_correction(const Vector& p_ensemble, const Vector& p_corr);

/// Identity indices ordered by score, highest first; ties go to the lower index.
std::vector<std::uint32_t> rank_identities(const Eigen::Ref<const Eigen::RowVectorXd>& scores);

} // namespace trifuse
