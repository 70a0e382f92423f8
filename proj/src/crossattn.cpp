#include "trifuse/crossattn.hpp"

namespace trifuse {

std::string cross_prefix(ModalityId target)
{
    return "cross." + std::string(modality_name(target)) + ".";
}

void init_cross_params(ParamStore& params, ModalityId target, const ModelConfig& cfg,
                       std::uint64_t seed)
{
    const auto p = cross_prefix(target);
    params.add(p + "proj.weight",
               fan_in_uniform(cfg.feature_dim, cfg.feature_dim, seed, p + "proj.weight"));
    params.add(p + "proj.bias", Matrix::Zero(1, cfg.feature_dim));
    init_attention_params(params, p, cfg.token_dim(), seed);
}

Var cross_project(Tape& tape, ModalityId target, const Var& z_a, const Var& z_b)
{
    const auto p = cross_prefix(target);
    const Var w = tape.param(p + "proj.weight");
    const Var b = tape.param(p + "proj.bias");
    return add(dense(z_a, w, b), dense(z_b, w, b));
}

Var cross_attention_block(Tape& tape, ModalityId target, const Var& z_t, const Var& injected,
                          Index tokens)
{
    const Var s = add(z_t, injected);
    return self_attention(tape, s, cross_prefix(target), tokens);
}

CrossOutput trimodal_cross(Tape& tape, const std::array<PathwayOutput, kModalityCount>& pathways,
                           const ModelConfig& cfg)
{
    CrossOutput out;
    for (auto m : kModalities) {
        const auto [a, b] = others(m);
        const Var injected =
            cross_project(tape, m, pathways[index_of(a)].z, pathways[index_of(b)].z);
        out.z[index_of(m)] =
            cross_attention_block(tape, m, pathways[index_of(m)].z, injected, cfg.attention_tokens);
    }
    return out;
}

} // namespace trifuse
