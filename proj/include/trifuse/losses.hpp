#pragma once

#include "trifuse/autodiff.hpp"
#include "trifuse/config.hpp"
#include "trifuse/model.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace trifuse {

/// (1 - eps) * onehot(y) + eps / K. Throws std::out_of_range for y >= K.
Vector smoothed_target(std::uint32_t label, Index num_classes, double smoothing);

/// One smoothed target row per label.
Matrix smoothed_targets(std::span<const std::uint32_t> labels, Index num_classes,
                        double smoothing);

/// Applies label smoothing to already-soft targets (e.g. mixup pairs).
Matrix smooth(const Matrix& targets, double smoothing);

/// -sum_k t_k (1 - q_k)^gamma log q_k with q = softmax(logits).
double focal_loss(const Vector& logits, std::uint32_t label, double gamma, double smoothing);
double focal_loss(const Vector& logits, const Vector& target, double gamma);

/// Batch mean of the focal loss of each row against its target row.
Var focal_loss(const Var& logits, const Matrix& targets, double gamma);

/// sum_i 0.5 exp(-s_i) L_i + 0.5 s_i.
double uncertainty_weighted_total(std::span<const double> losses,
                                  std::span<const double> log_variances);
/// `losses` and `log_variances` are both 1 x H.
Var uncertainty_weighted_total(const Var& losses, const Var& log_variances);

inline constexpr const char* kLogVarianceParam = "loss.log_variance";

/// Adds the 1 x H log-variance vector, initialized to zero.
void register_log_variances(ParamStore& params, std::size_t num_heads);

Var head_logits(const ForwardResult& forward, LossHead head);

struct MultiTaskLoss {
    Var total;
    std::vector<double> head_losses; // same order as LossConfig::loss_heads
};

/// Focal loss on every configured head combined with the learned
/// log-variances registered on the tape's parameter store.
MultiTaskLoss multitask_loss(Tape& tape, const ForwardResult& forward, const Matrix& targets,
                             const LossConfig& cfg);

} // namespace trifuse
