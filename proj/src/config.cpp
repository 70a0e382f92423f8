#include "trifuse/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace trifuse {

using nlohmann::json;

namespace {

void require(bool ok, const std::string& message)
{
    if (!ok) {
        throw ConfigError(message);
    }
}

/// Reads keys from one JSON object and rejects anything it did not consume.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path))
    {
        require(j_.is_object(), path_ + ": expected an object");
    }

    const json* find(const char* key)
    {
        auto it = j_.find(key);
        if (it == j_.end()) {
            return nullptr;
        }
        used_.insert(key);
        return &*it;
    }

    void number(const char* key, double& out)
    {
        if (const json* v = find(key)) {
            require(v->is_number(), where(key) + ": expected a number");
            out = v->get<double>();
            require(std::isfinite(out), where(key) + ": must be finite");
        }
    }

    template <typename Int>
    void integer(const char* key, Int& out)
    {
        if (const json* v = find(key)) {
            require(v->is_number_integer(), where(key) + ": expected an integer");
            if constexpr (std::is_unsigned_v<Int>) {
                require(v->is_number_unsigned() || v->get<long long>() >= 0,
                        where(key) + ": must be non-negative");
                out = static_cast<Int>(v->get<unsigned long long>());
            } else {
                out = static_cast<Int>(v->get<long long>());
            }
        }
    }

    void boolean(const char* key, bool& out)
    {
        if (const json* v = find(key)) {
            require(v->is_boolean(), where(key) + ": expected true or false");
            out = v->get<bool>();
        }
    }

    void string(const char* key, std::string& out)
    {
        if (const json* v = find(key)) {
            require(v->is_string(), where(key) + ": expected a string");
            out = v->get<std::string>();
        }
    }

    template <typename T>
    void per_modality(const char* key, std::array<T, kModalityCount>& out)
    {
        if (const json* v = find(key)) {
            ObjectReader sub(*v, where(key));
            for (auto m : kModalities) {
                const std::string name(modality_name(m));
                if constexpr (std::is_floating_point_v<T>) {
                    sub.number(name.c_str(), out[index_of(m)]);
                } else {
                    sub.integer(name.c_str(), out[index_of(m)]);
                }
            }
            sub.finish();
        }
    }

    void finish() const
    {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            require(used_.count(it.key()) != 0, where(it.key().c_str()) + ": unknown key");
        }
    }

    std::string where(const char* key) const { return path_ + "." + key; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

template <typename T>
json per_modality_json(const std::array<T, kModalityCount>& values)
{
    json j = json::object();
    for (auto m : kModalities) {
        j[std::string(modality_name(m))] = values[index_of(m)];
    }
    return j;
}

} // namespace

void ModelConfig::validate() const
{
    require(num_classes >= 1, "model.num_classes must be at least 1");
    for (auto d : input_dims) {
        require(d >= 1, "model.input_dims entries must be positive");
    }
    require(hidden_dim >= 1 && feature_dim >= 1, "model widths must be positive");
    require(attention_tokens >= 1, "model.attention_tokens must be positive");
    require(feature_dim % attention_tokens == 0,
            "model.feature_dim (" + std::to_string(feature_dim) +
                ") is not divisible by model.attention_tokens (" +
                std::to_string(attention_tokens) + ")");
    require(confidence_hidden >= 1 && gate_hidden >= 1 && fusion_hidden >= 1 &&
                correction_hidden >= 1,
            "model hidden widths must be positive");
    require(fusion_dropout >= 0.0 && fusion_dropout < 1.0, "model.fusion_dropout must be in [0, 1)");
}

std::string_view head_name(LossHead h)
{
    switch (h) {
    case LossHead::Face:
        return "face";
    case LossHead::Gesture:
        return "gesture";
    case LossHead::Voice:
        return "voice";
    case LossHead::Fusion:
        return "fusion";
    case LossHead::Ensemble:
        return "ensemble";
    case LossHead::Final:
        return "final";
    case LossHead::Confidence:
        return "conf";
    case LossHead::Correction:
        return "corr";
    }
    throw std::invalid_argument("invalid loss head");
}

LossHead parse_head(std::string_view name)
{
    for (auto h : {LossHead::Face, LossHead::Gesture, LossHead::Voice, LossHead::Fusion,
                   LossHead::Ensemble, LossHead::Final, LossHead::Confidence,
                   LossHead::Correction}) {
        if (head_name(h) == name) {
            return h;
        }
    }
    throw ConfigError("unknown loss head '" + std::string(name) + "'");
}

std::vector<LossHead> default_loss_heads()
{
    return {LossHead::Face,   LossHead::Gesture,  LossHead::Voice,
            LossHead::Fusion, LossHead::Ensemble, LossHead::Final};
}

void LossConfig::validate() const
{
    require(focal_gamma >= 0.0, "loss.focal_gamma must be >= 0");
    require(label_smoothing >= 0.0 && label_smoothing < 1.0,
            "loss.label_smoothing must be in [0, 1)");
    require(!loss_heads.empty(), "loss.loss_heads must not be empty");
    std::set<LossHead> seen(loss_heads.begin(), loss_heads.end());
    require(seen.size() == loss_heads.size(), "loss.loss_heads contains duplicates");
}

void AugmentConfig::validate() const
{
    require(noise_std >= 0.0, "augment.noise_std must be >= 0");
    require(dropout_rate >= 0.0 && dropout_rate < 1.0, "augment.dropout_rate must be in [0, 1)");
    require(mask_prob >= 0.0 && mask_prob <= 1.0, "augment.mask_prob must be in [0, 1]");
    require(mixup_alpha >= 0.0, "augment.mixup_alpha must be >= 0");
}

void TrainConfig::validate() const
{
    require(epochs >= 1, "train.epochs must be at least 1");
    require(batch_size >= 1, "train.batch_size must be at least 1");
    require(peak_lr > 0.0, "train.peak_lr must be positive");
    require(lr_floor >= 0.0 && lr_floor <= peak_lr, "train.lr_floor must be in [0, peak_lr]");
    require(warmup_fraction >= 0.0 && warmup_fraction < 1.0,
            "train.warmup_fraction must be in [0, 1)");
    require(weight_decay >= 0.0, "train.weight_decay must be >= 0");
    require(grad_clip >= 0.0, "train.grad_clip must be >= 0");
    require(curriculum_ramp_epochs >= 0, "train.curriculum_ramp_epochs must be >= 0");
}

void SyntheticConfig::validate() const
{
    require(num_identities >= 1, "data.num_identities must be at least 1");
    require(single_session_fraction >= 0.0 && single_session_fraction <= 1.0,
            "data.single_session_fraction must be in [0, 1]");
    require(max_sessions >= 1, "data.max_sessions must be at least 1");
    require(single_session_fraction == 1.0 || max_sessions >= 2,
            "data.max_sessions must be >= 2 when multi-session identities are requested");
    require(train_per_identity >= 1 && test_per_identity >= 1,
            "data needs at least one train and one test sample per identity");
    for (auto m : kModalities) {
        const auto i = index_of(m);
        require(dims[i] >= 1, "data.dims entries must be positive");
        require(noise_std[i] >= 0.0 && std::isfinite(noise_std[i]),
                "data.noise_std." + std::string(modality_name(m)) + " must be a finite value >= 0");
        require(drift_std[i] >= 0.0 && std::isfinite(drift_std[i]),
                "data.drift_std." + std::string(modality_name(m)) + " must be a finite value >= 0");
    }
}

AblationFlags AblationFlags::parse(std::string_view text)
{
    AblationFlags f;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto end = text.find(',', start);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        const auto token = text.substr(start, end - start);
        if (token == "no_correction") {
            f.no_correction = true;
        } else if (token == "no_cross_attention") {
            f.no_cross_attention = true;
        } else if (token == "no_gated_fusion") {
            f.no_gated_fusion = true;
        } else if (token == "no_confidence") {
            f.no_confidence = true;
        } else if (token == "no_augmentation") {
            f.no_augmentation = true;
        } else if (!token.empty() && token != "none") {
            throw ConfigError("unknown ablation flag '" + std::string(token) + "'");
        }
        start = end + 1;
    }
    return f;
}

std::vector<std::string> AblationFlags::names() const
{
    std::vector<std::string> out;
    if (no_correction) {
        out.emplace_back("no_correction");
    }
    if (no_cross_attention) {
        out.emplace_back("no_cross_attention");
    }
    if (no_gated_fusion) {
        out.emplace_back("no_gated_fusion");
    }
    if (no_confidence) {
        out.emplace_back("no_confidence");
    }
    if (no_augmentation) {
        out.emplace_back("no_augmentation");
    }
    return out;
}

std::string AblationFlags::label() const
{
    const auto n = names();
    if (n.empty()) {
        return "full";
    }
    std::string out;
    for (const auto& s : n) {
        out += (out.empty() ? "" : ",") + s;
    }
    return out;
}

AblationFlags AblationFlags::merged(const AblationFlags& o) const
{
    AblationFlags f = *this;
    f.no_correction |= o.no_correction;
    f.no_cross_attention |= o.no_cross_attention;
    f.no_gated_fusion |= o.no_gated_fusion;
    f.no_confidence |= o.no_confidence;
    f.no_augmentation |= o.no_augmentation;
    return f;
}

void RunConfig::validate() const
{
    model.validate();
    data.validate();
    loss.validate();
    augment.validate();
    train.validate();
    require(static_cast<std::size_t>(model.num_classes) == data.num_identities,
            "model.num_classes must equal data.num_identities");
    require(model.input_dims == data.dims, "model.input_dims must equal data.dims");
}

json to_json(const AblationFlags& f)
{
    return json{{"no_correction", f.no_correction},
                {"no_cross_attention", f.no_cross_attention},
                {"no_gated_fusion", f.no_gated_fusion},
                {"no_confidence", f.no_confidence},
                {"no_augmentation", f.no_augmentation}};
}

json to_json(const ModelConfig& m)
{
    return json{{"num_classes", m.num_classes},
                {"input_dims", per_modality_json(m.input_dims)},
                {"hidden_dim", m.hidden_dim},
                {"feature_dim", m.feature_dim},
                {"attention_tokens", m.attention_tokens},
                {"confidence_hidden", m.confidence_hidden},
                {"gate_hidden", m.gate_hidden},
                {"fusion_hidden", m.fusion_hidden},
                {"correction_hidden", m.correction_hidden},
                {"fusion_dropout", m.fusion_dropout}};
}

json to_json(const SyntheticConfig& d)
{
    return json{{"num_identities", d.num_identities},
                {"single_session_fraction", d.single_session_fraction},
                {"max_sessions", d.max_sessions},
                {"train_per_identity", d.train_per_identity},
                {"val_per_identity", d.val_per_identity},
                {"test_per_identity", d.test_per_identity},
                {"dims", per_modality_json(d.dims)},
                {"noise_std", per_modality_json(d.noise_std)},
                {"drift_std", per_modality_json(d.drift_std)},
                {"unit_norm", d.unit_norm}};
}

json to_json(const RunConfig& c)
{
    json heads = json::array();
    for (auto h : c.loss.loss_heads) {
        heads.push_back(std::string(head_name(h)));
    }
    return json{
        {"seed", c.seed},
        {"model", to_json(c.model)},
        {"data", to_json(c.data)},
        {"loss",
         {{"focal_gamma", c.loss.focal_gamma},
          {"label_smoothing", c.loss.label_smoothing},
          {"loss_heads", heads}}},
        {"augment",
         {{"noise_std", c.augment.noise_std},
          {"dropout_rate", c.augment.dropout_rate},
          {"mask_prob", c.augment.mask_prob},
          {"mixup_alpha", c.augment.mixup_alpha},
          {"mask_granularity",
           c.augment.mask_granularity == MaskGranularity::Batch ? "batch" : "sample"}}},
        {"train",
         {{"epochs", c.train.epochs},
          {"batch_size", c.train.batch_size},
          {"peak_lr", c.train.peak_lr},
          {"lr_floor", c.train.lr_floor},
          {"warmup_fraction", c.train.warmup_fraction},
          {"weight_decay", c.train.weight_decay},
          {"grad_clip", c.train.grad_clip},
          {"curriculum",
           c.train.curriculum == CurriculumMode::CleanToHard ? "clean-to-hard" : "uniform"},
          {"curriculum_ramp_epochs", c.train.curriculum_ramp_epochs}}},
        {"ablation", to_json(c.ablation)}};
}

ModelConfig model_config_from_json(const json& j)
{
    ModelConfig m;
    ObjectReader r(j, "model");
    r.integer("num_classes", m.num_classes);
    r.per_modality("input_dims", m.input_dims);
    r.integer("hidden_dim", m.hidden_dim);
    r.integer("feature_dim", m.feature_dim);
    r.integer("attention_tokens", m.attention_tokens);
    r.integer("confidence_hidden", m.confidence_hidden);
    r.integer("gate_hidden", m.gate_hidden);
    r.integer("fusion_hidden", m.fusion_hidden);
    r.integer("correction_hidden", m.correction_hidden);
    r.number("fusion_dropout", m.fusion_dropout);
    r.finish();
    m.validate();
    return m;
}

SyntheticConfig synthetic_config_from_json(const json& j)
{
    SyntheticConfig d;
    ObjectReader r(j, "data");
    r.integer("num_identities", d.num_identities);
    r.number("single_session_fraction", d.single_session_fraction);
    r.integer("max_sessions", d.max_sessions);
    r.integer("train_per_identity", d.train_per_identity);
    r.integer("val_per_identity", d.val_per_identity);
    r.integer("test_per_identity", d.test_per_identity);
    r.per_modality("dims", d.dims);
    r.per_modality("noise_std", d.noise_std);
    r.per_modality("drift_std", d.drift_std);
    r.boolean("unit_norm", d.unit_norm);
    r.finish();
    d.validate();
    return d;
}

AblationFlags ablation_from_json(const json& j)
{
    AblationFlags f;
    ObjectReader r(j, "ablation");
    r.boolean("no_correction", f.no_correction);
    r.boolean("no_cross_attention", f.no_cross_attention);
    r.boolean("no_gated_fusion", f.no_gated_fusion);
    r.boolean("no_confidence", f.no_confidence);
    r.boolean("no_augmentation", f.no_augmentation);
    r.finish();
    return f;
}

RunConfig run_config_from_json(const json& j)
{
    RunConfig c;
    ObjectReader r(j, "config");
    r.integer("seed", c.seed);
    bool classes_given = false;
    bool dims_given = false;
    if (const json* v = r.find("model")) {
        c.model = model_config_from_json(*v);
        classes_given = v->contains("num_classes");
        dims_given = v->contains("input_dims");
    }
    if (const json* v = r.find("data")) {
        c.data = synthetic_config_from_json(*v);
    }
    // The classifier width and input sizes follow the data unless given.
    if (!classes_given) {
        c.model.num_classes = static_cast<Index>(c.data.num_identities);
    }
    if (!dims_given) {
        c.model.input_dims = c.data.dims;
    }
    if (const json* v = r.find("loss")) {
        ObjectReader lr(*v, "loss");
        lr.number("focal_gamma", c.loss.focal_gamma);
        lr.number("label_smoothing", c.loss.label_smoothing);
        if (const json* heads = lr.find("loss_heads")) {
            require(heads->is_array(), "loss.loss_heads: expected an array of head names");
            c.loss.loss_heads.clear();
            for (const auto& h : *heads) {
                require(h.is_string(), "loss.loss_heads: expected strings");
                c.loss.loss_heads.push_back(parse_head(h.get<std::string>()));
            }
        }
        lr.finish();
    }
    if (const json* v = r.find("augment")) {
        ObjectReader ar(*v, "augment");
        ar.number("noise_std", c.augment.noise_std);
        ar.number("dropout_rate", c.augment.dropout_rate);
        ar.number("mask_prob", c.augment.mask_prob);
        ar.number("mixup_alpha", c.augment.mixup_alpha);
        std::string gran = "batch";
        ar.string("mask_granularity", gran);
        require(gran == "batch" || gran == "sample",
                "augment.mask_granularity must be 'batch' or 'sample'");
        c.augment.mask_granularity = gran == "batch" ? MaskGranularity::Batch : MaskGranularity::Sample;
        ar.finish();
    }
    if (const json* v = r.find("train")) {
        ObjectReader tr(*v, "train");
        tr.integer("epochs", c.train.epochs);
        tr.integer("batch_size", c.train.batch_size);
        tr.number("peak_lr", c.train.peak_lr);
        tr.number("lr_floor", c.train.lr_floor);
        tr.number("warmup_fraction", c.train.warmup_fraction);
        tr.number("weight_decay", c.train.weight_decay);
        tr.number("grad_clip", c.train.grad_clip);
        std::string mode = "clean-to-hard";
        tr.string("curriculum", mode);
        require(mode == "clean-to-hard" || mode == "uniform",
                "train.curriculum must be 'clean-to-hard' or 'uniform'");
        c.train.curriculum = mode == "uniform" ? CurriculumMode::Uniform : CurriculumMode::CleanToHard;
        tr.integer("curriculum_ramp_epochs", c.train.curriculum_ramp_epochs);
        tr.finish();
    }
    if (const json* v = r.find("ablation")) {
        c.ablation = ablation_from_json(*v);
    }
    r.finish();
    c.validate();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) {
        throw ConfigError("cannot open config file " + path.string());
    }
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

bool apply_seed_override(RunConfig& cfg)
{
    const char* raw = std::getenv("TRIFUSE_SEED");
    if (raw == nullptr) {
        return false;
    }
    const std::string_view text(raw);
    std::uint64_t value = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (text.empty() || ec != std::errc() || end != text.data() + text.size()) {
        throw ConfigError("TRIFUSE_SEED must be an unsigned integer, got '" + std::string(text) +
                          "'");
    }
    cfg.seed = value;
    return true;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream)
{
    return mix_seed(seed ^ stable_hash(std::string(stream)));
}

} // namespace trifuse
