#include "trifuse/decision.hpp"

#include "trifuse/layers.hpp"

#include <algorithm>
#include <numeric>

namespace trifuse {

namespace {

void require_same_logit_shapes(const std::array<Var, kModalityCount>& logits)
{
    for (const auto& p : logits) {
        if (p.rows() != logits[0].rows() || p.cols() != logits[0].cols()) {
            throw ShapeError("logit heads disagree: " + shape_str(logits[0].value()) + " vs " +
                             shape_str(p.value()));
        }
    }
}

} // namespace

void init_decision_params(ParamStore& params, const ModelConfig& cfg, std::uint64_t seed)
{
    const Index fused = cfg.fused_dim();
    add_linear(params, "fusion.gate1", cfg.gate_hidden, fused, seed);
    add_linear(params, "fusion.gate2", fused, cfg.gate_hidden, seed);
    add_linear(params, "fusion.mlp1", cfg.fusion_hidden, fused, seed);
    add_linear(params, "fusion.mlp2", cfg.num_classes, cfg.fusion_hidden, seed);
    add_linear(params, "corr.mlp1", cfg.correction_hidden, 4 * cfg.num_classes, seed);
    add_linear(params, "corr.mlp2", cfg.num_classes, cfg.correction_hidden, seed);
}

Matrix fusion_dropout_mask(Index rows, Index cols, double rate, std::mt19937_64& rng)
{
    if (rate <= 0.0) {
        return Matrix::Ones(rows, cols);
    }
    std::bernoulli_distribution drop(rate);
    const double keep_scale = 1.0 / (1.0 - rate);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) {
        m.data()[i] = drop(rng) ? 0.0 : keep_scale;
    }
    return m;
}

GatedFusionOutput gated_fusion(Tape& tape, const std::array<Var, kModalityCount>& z_cross,
                               bool bypass_gate, const std::optional<Matrix>& dropout_mask)
{
    GatedFusionOutput out;
    out.z_concat = concat_cols({z_cross[0], z_cross[1], z_cross[2]});
    if (bypass_gate) {
        out.gate = tape.constant(Matrix(Matrix::Ones(out.z_concat.rows(), out.z_concat.cols())));
        out.z_fused = out.z_concat;
    } else {
        const Var h = relu(linear(tape, out.z_concat, "fusion.gate1"));
        out.gate = sigmoid(linear(tape, h, "fusion.gate2"));
        out.z_fused = hadamard(out.z_concat, out.gate);
    }
    Var hidden = relu(linear(tape, out.z_fused, "fusion.mlp1"));
    if (dropout_mask) {
        hidden = hadamard(hidden, tape.constant(*dropout_mask));
    }
    out.p_fusion = linear(tape, hidden, "fusion.mlp2");
    return out;
}

Var confidence_weighted_fusion(const std::array<Var, kModalityCount>& logits,
                               const std::array<Var, kModalityCount>& confidences)
{
    require_same_logit_shapes(logits);
    Var numerator;
    Var denominator;
    for (std::size_t i = 0; i < kModalityCount; ++i) {
        const Var w = square(confidences[i]);
        const Var term = scale_rows(logits[i], w);
        numerator = i == 0 ? term : add(numerator, term);
        denominator = i == 0 ? w : add(denominator, w);
    }
    return divide_rows(numerator, denominator);
}

Var unweighted_fusion(const std::array<Var, kModalityCount>& logits)
{
    require_same_logit_shapes(logits);
    return scale(add(add(logits[0], logits[1]), logits[2]), 1.0 / 3.0);
}

Var ensemble(const Var& p_conf, const Var& p_fusion) { return scale(add(p_conf, p_fusion), 0.5); }

CorrectionOutput mistake_correction(Tape& tape, const std::array<Var, kModalityCount>& logits,
                                    const Var& p_ensemble)
{
    require_same_logit_shapes(logits);
    const Var input = concat_cols({logits[0], logits[1], logits[2], p_ensemble});
    const Var hidden = relu(linear(tape, input, "corr.mlp1"));
    CorrectionOutput out;
    out.p_corr = linear(tape, hidden, "corr.mlp2");
    out.p_final = add(p_ensemble, scale(out.p_corr, kCorrectionScale));
    return out;
}

Vector confidence_weighted_fusion(const Vector& p_face, const Vector& p_gesture,
                                  const Vector& p_voice, double c_face, double c_gesture,
                                  double c_voice)
{
    Tape tape;
    auto scalar = [&tape](double c) { return tape.constant(Matrix(Matrix::Constant(1, 1, c))); };
    const std::array<Var, kModalityCount> logits = {tape.constant(p_face), tape.constant(p_gesture),
                                                    tape.constant(p_voice)};
    const std::array<Var, kModalityCount> conf = {scalar(c_face), scalar(c_gesture),
                                                  scalar(c_voice)};
    const Var out = confidence_weighted_fusion(logits, conf);
    return row_vector(out.value());
}

Vector ensemble(const Vector& p_conf, const Vector& p_fusion)
{
    Tape tape;
    return row_vector(ensemble(tape.constant(p_conf), tape.constant(p_fusion)).value());
}

Vector apply_correction(const Vector& p_ensemble, const Vector& p_corr)
{
    if (p_ensemble.size() != p_corr.size()) {
        throw ShapeError("apply_correction: sizes " + std::to_string(p_ensemble.size()) + " and " +
                         std::to_string(p_corr.size()) + " differ");
    }
    return p_ensemble + kCorrectionScale * p_corr;
}

std::vector<std::uint32_t> rank_identities(const Eigen::Ref<const Eigen::RowVectorXd>& scores)
{
    std::vector<std::uint32_t> order(static_cast<std::size_t>(scores.size()));
    std::iota(order.begin(), order.end(), 0U);
    std::stable_sort(order.begin(), order.end(),
                     [&scores](std::uint32_t a, std::uint32_t b) { return scores(a) > scores(b); });
    return order;
}

} // namespace trifuse
