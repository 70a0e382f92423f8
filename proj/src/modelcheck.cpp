#include "trifuse/modelcheck.hpp"

#include "trifuse/augment.hpp"
#include "trifuse/losses.hpp"
#include "trifuse/model.hpp"

#include <random>
#include <stdexcept>

namespace trifuse {

const std::vector<std::string>& grad_check_modules()
{
    static const std::vector<std::string> modules = {"all", "pathways", "crossattn", "decision",
                                                     "losses"};
    return modules;
}

ModelConfig grad_check_model_config()
{
    ModelConfig cfg;
    cfg.num_classes = 5;
    cfg.input_dims = {12, 16, 8};
    cfg.hidden_dim = 16;
    cfg.feature_dim = 12;
    cfg.attention_tokens = 3;
    cfg.confidence_hidden = 6;
    cfg.gate_hidden = 9;
    cfg.fusion_hidden = 10;
    cfg.correction_hidden = 7;
    return cfg;
}

namespace {

std::vector<std::string> select_params(const ParamStore& params, const std::string& module)
{
    if (module == "all") {
        return params.names();
    }
    std::vector<std::string> prefixes;
    if (module == "pathways") {
        prefixes = {"pathway."};
    } else if (module == "crossattn") {
        prefixes = {"cross."};
    } else if (module == "decision") {
        prefixes = {"fusion.", "corr."};
    } else if (module == "losses") {
        prefixes = {"loss."};
    } else {
        throw std::invalid_argument("unknown grad-check module '" + module + "'");
    }
    std::vector<std::string> out;
    for (const auto& p : prefixes) {
        const auto part = params.names_with_prefix(p);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

} // namespace

GradCheckResult model_grad_check(const ModelGradCheckOptions& options)
{
    const ModelConfig cfg = options.full_size ? ModelConfig{} : grad_check_model_config();
    if (options.batch < 1) {
        throw std::invalid_argument("grad-check batch must be positive");
    }
    Rng rng(mix_seed(options.seed ^ 0x6772616463686b00ULL));
    TrimodalModel model(cfg, rng());
    register_log_variances(model.params(), options.loss.loss_heads.size());

    std::uniform_real_distribution<double> small(-0.1, 0.1);
    std::uniform_real_distribution<double> logvar(-0.5, 0.5);
    for (auto& e : model.params().entries()) {
        if (e.name == kLogVarianceParam) {
            for (Index i = 0; i < e.value.size(); ++i) {
                e.value.data()[i] = logvar(rng);
            }
        } else if (e.name.ends_with(".bias")) {
            for (Index i = 0; i < e.value.size(); ++i) {
                e.value.data()[i] = small(rng);
            }
        }
    }

    std::normal_distribution<double> unit(0.0, 1.0);
    ModalityBatch inputs;
    for (auto m : kModalities) {
        Matrix& x = inputs[index_of(m)];
        x.resize(options.batch, cfg.input_dims[index_of(m)]);
        for (Index i = 0; i < x.size(); ++i) {
            x.data()[i] = unit(rng);
        }
    }
    std::vector<std::uint32_t> labels;
    std::uniform_int_distribution<std::uint32_t> label(0,
                                                       static_cast<std::uint32_t>(cfg.num_classes - 1));
    for (Index i = 0; i < options.batch; ++i) {
        labels.push_back(label(rng));
    }
    Matrix targets = smoothed_targets(labels, cfg.num_classes, options.loss.label_smoothing);
    mixup_batch(inputs, targets, 0.4, rng);

    const std::uint64_t dropout_seed = rng();
    const LossBuilder loss_fn = [&](Tape& tape) {
        Rng dropout_rng(dropout_seed);
        const auto fwd = model.forward(tape, inputs, {options.ablation, true, &dropout_rng});
        return multitask_loss(tape, fwd, targets, options.loss).total;
    };

    GradCheckOptions gc;
    gc.step = options.step;
    gc.denominator_floor = options.denominator_floor;
    gc.max_elements_per_param = options.max_elements_per_param;
    gc.seed = options.seed;
    return grad_check(model.params(), select_params(model.params(), options.module), loss_fn, gc);
}

} // namespace trifuse
