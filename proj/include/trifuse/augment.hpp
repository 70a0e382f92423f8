#pragma once

#include "trifuse/config.hpp"
#include "trifuse/model.hpp"
#include "trifuse/tensor.hpp"

#include <array>
#include <random>
#include <vector>

namespace trifuse {

struct EmbeddingTriplet;

using Rng = std::mt19937_64;

/// x + N(0, std^2) per element.
Vector gaussian_noise(const Vector& x, double std, Rng& rng);
void add_gaussian_noise(Matrix& x, double std, Rng& rng);

/// Inverted dropout: zero with probability `rate`, scale survivors by
/// 1 / (1 - rate). Rates outside [0, 1) are rejected.
Vector feature_dropout(const Vector& x, double rate, Rng& rng);
void apply_feature_dropout(Matrix& x, double rate, Rng& rng);

/// One masking decision. `lost` is the set of modalities hit; it is never
/// all three. A complete loss zeroes the whole embedding, a partial loss
/// zeroes `fraction` of its dimensions.
struct MaskEvent {
    bool applied = false;
    ModalityMask lost = ModalityMask::from_bits(0);
    bool partial = false;
    double fraction = 1.0;
};

MaskEvent draw_mask_event(double prob, Rng& rng);

/// Applies `event` to rows [row, row + count) of the batch. Partial loss
/// picks one random set of dimensions per modality for the whole range.
void apply_mask_event(ModalityBatch& batch, Index row, Index count, const MaskEvent& event,
                      Rng& rng);

struct MaskedSample {
    ModalityBatch sample; // single row per modality
    ModalityMask mask;    // modalities left fully intact
};

MaskedSample modality_mask(const ModalityBatch& sample, double prob, Rng& rng);

/// Masks a batch with one event per batch or one per sample. Returns the
/// per-row fully intact modalities.
std::vector<ModalityMask> mask_batch(ModalityBatch& batch, double prob,
                                     MaskGranularity granularity, Rng& rng);

/// Beta(alpha, alpha) via two gamma draws.
double sample_beta(double alpha, Rng& rng);

struct MixedSample {
    std::array<Vector, kModalityCount> embeddings;
    std::uint32_t label_a = 0;
    std::uint32_t label_b = 0;
    double lambda = 1.0;
};

/// lambda * a + (1 - lambda) * b per modality with lambda ~ Beta(alpha, alpha).
MixedSample mixup(const EmbeddingTriplet& a, const EmbeddingTriplet& b, double alpha, Rng& rng);
MixedSample mixup_with_lambda(const EmbeddingTriplet& a, const EmbeddingTriplet& b, double lambda);

/// Batch mixup against a random permutation of the same batch. `targets`
/// are mixed with the same lambda, so the loss on them equals
/// lambda * L(y_a) + (1 - lambda) * L(y_b). Returns lambda.
double mixup_batch(ModalityBatch& batch, Matrix& targets, double alpha, Rng& rng);

/// Full training-time pipeline: mixup, then noise, dropout and masking,
/// each scaled by `intensity` in [0, 1]. Noise std is relative to
/// `feature_scale` per modality.
void augment_batch(ModalityBatch& batch, Matrix& targets, const AugmentConfig& cfg,
                   const std::array<double, kModalityCount>& feature_scale, double intensity,
                   Rng& rng);

} // namespace trifuse
