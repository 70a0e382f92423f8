#include "trifuse/model.hpp"

#include "trifuse/data.hpp"

#include <algorithm>
#include <stdexcept>

namespace trifuse {

FusionState FusionState::from(const FusionVars& v)
{
    return {v.z_concat.value(), v.gate.value(),       v.z_fused.value(), v.p_fusion.value(),
            v.p_conf.value(),   v.p_ensemble.value(), v.p_corr.value(),  v.p_final.value()};
}

TrimodalModel::TrimodalModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg))
{
    cfg_.validate();
    for (auto m : kModalities) {
        init_pathway_params(params_, m, cfg_, seed);
    }
    for (auto m : kModalities) {
        init_cross_params(params_, m, cfg_, seed);
    }
    init_decision_params(params_, cfg_, seed);
}

ForwardResult TrimodalModel::forward(Tape& tape, const ModalityBatch& inputs,
                                     const ForwardOptions& options) const
{
    if (tape.params() != &params_) {
        throw std::invalid_argument("forward: tape is not bound to this model's parameters");
    }
    const Index batch = inputs[0].rows();
    for (const auto& x : inputs) {
        if (x.rows() != batch) {
            throw ShapeError("forward: modality batches have different row counts");
        }
    }
    if (options.training && options.rng == nullptr && cfg_.fusion_dropout > 0.0) {
        throw std::invalid_argument("forward: training mode needs an rng");
    }

    ForwardResult out;
    for (auto m : kModalities) {
        const auto i = index_of(m);
        out.pathways[i] = pathway_forward(tape, m, tape.constant(inputs[i]), cfg_);
    }

    if (options.ablation.no_cross_attention) {
        for (std::size_t i = 0; i < kModalityCount; ++i) {
            out.cross.z[i] = out.pathways[i].z;
        }
    } else {
        out.cross = trimodal_cross(tape, out.pathways, cfg_);
    }

    std::optional<Matrix> dropout;
    if (options.training && cfg_.fusion_dropout > 0.0) {
        dropout = fusion_dropout_mask(batch, cfg_.fusion_hidden, cfg_.fusion_dropout, *options.rng);
    }
    const auto gated = gated_fusion(tape, out.cross.z, options.ablation.no_gated_fusion, dropout);

    std::array<Var, kModalityCount> logits;
    std::array<Var, kModalityCount> confidences;
    for (std::size_t i = 0; i < kModalityCount; ++i) {
        logits[i] = out.pathways[i].logits;
        confidences[i] = out.pathways[i].confidence;
    }

    FusionVars& f = out.fusion;
    f.z_concat = gated.z_concat;
    f.gate = gated.gate;
    f.z_fused = gated.z_fused;
    f.p_fusion = gated.p_fusion;
    f.p_conf = options.ablation.no_confidence ? unweighted_fusion(logits)
                                              : confidence_weighted_fusion(logits, confidences);
    f.p_ensemble = ensemble(f.p_conf, f.p_fusion);
    if (options.ablation.no_correction) {
        f.p_corr = tape.constant(Matrix(Matrix::Zero(batch, cfg_.num_classes)));
        f.p_final = f.p_ensemble;
    } else {
        const auto corr = mistake_correction(tape, logits, f.p_ensemble);
        f.p_corr = corr.p_corr;
        f.p_final = corr.p_final;
    }
    return out;
}

Matrix TrimodalModel::predict_logits(const ModalityBatch& inputs,
                                     const AblationFlags& ablation) const
{
    constexpr Index kChunk = 256;
    const Index n = inputs[0].rows();
    Matrix out(n, cfg_.num_classes);
    for (Index start = 0; start < n; start += kChunk) {
        const Index rows = std::min(kChunk, n - start);
        ModalityBatch chunk;
        for (std::size_t i = 0; i < kModalityCount; ++i) {
            chunk[i] = inputs[i].middleRows(start, rows);
        }
        Tape tape = Tape::inference(params_);
        const auto result = forward(tape, chunk, {ablation, false, nullptr});
        out.middleRows(start, rows) = result.fusion.p_final.value();
    }
    return out;
}

void apply_mask(ModalityBatch& inputs, ModalityMask mask)
{
    for (auto m : kModalities) {
        if (!mask.has(m)) {
            inputs[index_of(m)].setZero();
        }
    }
}

Prediction predict(const TrimodalModel& model, const EmbeddingTriplet& sample, ModalityMask mask,
                   const AblationFlags& ablation)
{
    mask = ModalityMask::from_bits(mask.bits() & sample.mask.bits());
    if (mask.empty()) {
        throw std::invalid_argument("no modality available");
    }
    ModalityBatch inputs;
    for (auto m : kModalities) {
        const Vector& x = sample[m];
        if (x.size() != model.config().input_dims[index_of(m)]) {
            throw ShapeError(std::string(modality_name(m)) + " embedding has " +
                             std::to_string(x.size()) + " values, expected " +
                             std::to_string(model.config().input_dims[index_of(m)]));
        }
        inputs[index_of(m)] = as_row(x);
    }
    apply_mask(inputs, mask);
    Tape tape = Tape::inference(model.params());
    const auto result = model.forward(tape, inputs, {ablation, false, nullptr});
    Prediction out;
    out.state = FusionState::from(result.fusion);
    out.ranking = rank_identities(out.state.p_final.row(0));
    return out;
}

} // namespace trifuse
