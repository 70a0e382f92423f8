#pragma once

#include "trifuse/augment.hpp"
#include "trifuse/config.hpp"
#include "trifuse/data.hpp"
#include "trifuse/eval.hpp"
#include "trifuse/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace trifuse {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// Decoupled weight decay Adam. Decay applies to parameters accepted by
/// the filter (by default, names ending in ".weight").
class AdamW {
public:
    using DecayFilter = std::function<bool(const std::string&)>;

    explicit AdamW(AdamWConfig cfg = {}, DecayFilter decays = default_decay_filter);

    void step(ParamStore& params, double lr);
    long steps() const { return t_; }

    static bool default_decay_filter(const std::string& name);

private:
    struct Moments {
        Matrix m;
        Matrix v;
    };

    AdamWConfig cfg_;
    DecayFilter decays_;
    std::unordered_map<std::string, Moments> moments_;
    long t_ = 0;
};

struct LrSchedule {
    double peak = 1e-3;
    double floor = 1e-5;
    long warmup_steps = 0;
    long total_steps = 1;
};

/// Linear warmup 0 -> peak, then cosine decay to floor at total_steps.
double lr_at(long step, const LrSchedule& s);

/// Scales every gradient so the global L2 norm is at most max_norm.
/// Returns the norm before clipping. max_norm <= 0 leaves gradients as is.
double clip_grad_norm(ParamStore& params, double max_norm);

struct EpochPlan {
    std::vector<std::vector<std::size_t>> batches;
    /// Augmentation strength in [0, 1] for this epoch.
    double intensity = 1.0;
};

/// Shuffled mini-batches for one epoch (0-based). In clean-to-hard mode
/// the augmentation intensity is (epoch + 1) / ramp_epochs capped at 1,
/// reaching full strength at epoch ramp_epochs; uniform mode always uses
/// full intensity.
EpochPlan curriculum_sampler(int epoch, std::size_t dataset_size, Index batch_size,
                             CurriculumMode mode, int ramp_epochs, Rng& rng);

/// Model plus its loss log-variances for a run configuration.
std::unique_ptr<TrimodalModel> build_model(const RunConfig& cfg);

struct TrainOptions {
    /// Where metrics.jsonl, checkpoint.bin and config.json go; empty
    /// keeps everything in memory.
    std::filesystem::path out_dir;
    /// Progress lines, one per epoch.
    std::ostream* progress = nullptr;
};

struct TrainResult {
    int best_epoch = -1;
    double best_val_top1 = 0.0;
    std::vector<nlohmann::json> metrics;
};

/// Runs cfg.train.epochs epochs, evaluates on the validation split after
/// each, and leaves the best-by-validation parameters in `model`. Ties in
/// trimodal Top-1 go to the higher mean over all masks, then to the later
/// epoch.
TrainResult train(TrimodalModel& model, const DataDir& data, const RunConfig& cfg,
                  const TrainOptions& options = {});

nlohmann::json checkpoint_metadata(const RunConfig& cfg, const TrainResult& result);

/// Rebuilds the model described by a checkpoint and loads its values.
std::unique_ptr<TrimodalModel> load_model(const std::filesystem::path& checkpoint,
                                          RunConfig* cfg_out = nullptr);

} // namespace trifuse
