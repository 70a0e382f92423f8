#pragma once

#include "trifuse/modality.hpp"
#include "trifuse/tensor.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace trifuse {

/// Scale applied to the correction network output before it is added to
/// the ensemble logits. Fixed, not a hyperparameter.
inline constexpr double kCorrectionScale = 0.2;

struct ModelConfig {
    Index num_classes = 50;
    std::array<Index, kModalityCount> input_dims = kDefaultInputDims;
    Index hidden_dim = 512;   // first dense layer of each pathway
    Index feature_dim = 320;  // pathway output D; fused width is 3*D
    Index attention_tokens = 8;
    Index confidence_hidden = 64;
    Index gate_hidden = 240;
    Index fusion_hidden = 512;
    Index correction_hidden = 128;
    double fusion_dropout = 0.1;

    Index token_dim() const { return feature_dim / attention_tokens; }
    Index fused_dim() const { return 3 * feature_dim; }
    void validate() const;
};

enum class LossHead : std::uint8_t {
    Face,
    Gesture,
    Voice,
    Fusion,
    Ensemble,
    Final,
    Confidence,
    Correction
};

std::string_view head_name(LossHead h);
LossHead parse_head(std::string_view name);
std::vector<LossHead> default_loss_heads();

struct LossConfig {
    double focal_gamma = 2.0;
    double label_smoothing = 0.1;
    std::vector<LossHead> loss_heads = default_loss_heads();
    void validate() const;
};

enum class MaskGranularity : std::uint8_t { Batch, Sample };

struct AugmentConfig {
    /// Gaussian noise std as a fraction of each modality's RMS feature scale.
    double noise_std = 0.05;
    double dropout_rate = 0.2;
    double mask_prob = 0.2;
    /// Beta(alpha, alpha) mixup; 0 disables mixup.
    double mixup_alpha = 0.2;
    MaskGranularity mask_granularity = MaskGranularity::Batch;
    void validate() const;
};

enum class CurriculumMode : std::uint8_t { CleanToHard, Uniform };

struct TrainConfig {
    int epochs = 30;
    Index batch_size = 32;
    double peak_lr = 1e-3;
    double lr_floor = 1e-5;
    double warmup_fraction = 0.05;
    double weight_decay = 1e-4;
    /// Global-norm clip; 0 disables.
    double grad_clip = 5.0;
    CurriculumMode curriculum = CurriculumMode::CleanToHard;
    int curriculum_ramp_epochs = 10;
    void validate() const;
};

struct SyntheticConfig {
    std::size_t num_identities = 50;
    /// Fraction of identities recorded in a single session; the rest get
    /// a uniform count in [2, max_sessions].
    double single_session_fraction = 0.5;
    std::size_t max_sessions = 3;
    std::size_t train_per_identity = 40;
    std::size_t val_per_identity = 10;
    std::size_t test_per_identity = 10;
    std::array<Index, kModalityCount> dims = kDefaultInputDims;
    /// Within-session sample noise, per modality (face, gesture, voice).
    std::array<double, kModalityCount> noise_std = {3.0, 5.0, 3.0};
    /// Per-session offset std, per modality. Gesture drifts 3x the others.
    std::array<double, kModalityCount> drift_std = {0.5, 1.5, 0.5};
    bool unit_norm = false;
    void validate() const;
};

struct AblationFlags {
    bool no_correction = false;
    bool no_cross_attention = false;
    bool no_gated_fusion = false;
    bool no_confidence = false;
    bool no_augmentation = false;

    /// Comma-separated flag names, e.g. "no_confidence,no_correction".
    static AblationFlags parse(std::string_view text);
    std::vector<std::string> names() const;
    std::string label() const;
    AblationFlags merged(const AblationFlags& other) const;
    friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct RunConfig {
    std::uint64_t seed = 20240611;
    ModelConfig model;
    SyntheticConfig data;
    LossConfig loss;
    AugmentConfig augment;
    TrainConfig train;
    AblationFlags ablation;

    void validate() const;
};

/// Raised for schema violations: unknown keys, wrong types, bad values.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json to_json(const AblationFlags& flags);
nlohmann::json to_json(const ModelConfig& cfg);
nlohmann::json to_json(const SyntheticConfig& cfg);
/// Strict parse; missing keys take defaults, unknown keys are errors.
RunConfig run_config_from_json(const nlohmann::json& j);
ModelConfig model_config_from_json(const nlohmann::json& j);
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);
AblationFlags ablation_from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);

/// Replaces cfg.seed with $TRIFUSE_SEED when that variable is set.
/// Returns true if it was applied; a malformed value is a ConfigError.
bool apply_seed_override(RunConfig& cfg);

/// Independent stream seeds derived from the run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

} // namespace trifuse
