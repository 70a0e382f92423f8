#include "trifuse/pathways.hpp"

#include "trifuse/layers.hpp"

namespace trifuse {

std::string pathway_prefix(ModalityId m)
{
    return "pathway." + std::string(modality_name(m)) + ".";
}

void init_attention_params(ParamStore& params, const std::string& prefix, Index token_dim,
                           std::uint64_t seed)
{
    for (const char* proj : {"query", "key", "value"}) {
        add_linear(params, prefix + "attn." + proj, token_dim, token_dim, seed);
    }
}

void init_pathway_params(ParamStore& params, ModalityId m, const ModelConfig& cfg,
                         std::uint64_t seed)
{
    const auto p = pathway_prefix(m);
    add_linear(params, p + "dense1", cfg.hidden_dim, cfg.input_dims[index_of(m)], seed);
    add_linear(params, p + "dense2", cfg.feature_dim, cfg.hidden_dim, seed);
    init_attention_params(params, p, cfg.token_dim(), seed);
    add_linear(params, p + "conf.hidden", cfg.confidence_hidden, cfg.feature_dim, seed);
    add_linear(params, p + "conf.out", 1, cfg.confidence_hidden, seed);
    add_linear(params, p + "cls", cfg.num_classes, cfg.feature_dim, seed);
}

Var self_attention(Tape& tape, const Var& x, const std::string& prefix, Index tokens)
{
    const Index batch = x.rows();
    const Index width = x.cols();
    if (tokens < 1 || width % tokens != 0) {
        throw ShapeError("self_attention: feature width " + std::to_string(width) +
                         " is not divisible by " + std::to_string(tokens) + " tokens");
    }
    const Index token_dim = width / tokens;
    const Var seq = reshape(x, batch * tokens, token_dim);
    const Var q = linear(tape, seq, prefix + "attn.query");
    const Var k = linear(tape, seq, prefix + "attn.key");
    const Var v = linear(tape, seq, prefix + "attn.value");
    const Var attended = token_attention(q, k, v, tokens);
    return add(x, reshape(attended, batch, width));
}

PathwayOutput pathway_forward(Tape& tape, ModalityId m, const Var& x_raw, const ModelConfig& cfg)
{
    const auto p = pathway_prefix(m);
    const Index expected = cfg.input_dims[index_of(m)];
    if (x_raw.cols() != expected) {
        throw ShapeError(std::string(modality_name(m)) + " pathway expects " +
                         std::to_string(expected) + "-d input, got " + shape_str(x_raw.value()));
    }
    const Var hidden = relu(linear(tape, x_raw, p + "dense1"));
    const Var x = linear(tape, hidden, p + "dense2");
    const Var z = self_attention(tape, x, p, cfg.attention_tokens);
    const Var conf_hidden = relu(linear(tape, z, p + "conf.hidden"));
    const Var c = sigmoid(linear(tape, conf_hidden, p + "conf.out"));
    const Var logits = linear(tape, z, p + "cls");
    return {z, c, logits};
}

} // namespace trifuse
