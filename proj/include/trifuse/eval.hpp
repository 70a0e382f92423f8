#pragma once

#include "trifuse/config.hpp"
#include "trifuse/data.hpp"
#include "trifuse/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace trifuse {

/// Fraction of rankings whose first k entries contain the label.
double topk_accuracy(std::span<const std::vector<std::uint32_t>> rankings,
                     std::span<const std::uint32_t> labels, std::size_t k);

/// Same, computed straight from score rows with the rank_identities tie
/// rule (equal scores rank the lower index first).
double topk_accuracy(const Matrix& scores, std::span<const std::uint32_t> labels, std::size_t k);

/// Number of hits instead of a fraction.
std::size_t topk_hits(const Matrix& scores, std::span<const std::uint32_t> labels, std::size_t k);

struct EvalCell {
    double top1 = 0.0; // percent
    double top5 = 0.0; // percent
    std::size_t count = 0;

    friend bool operator==(const EvalCell&, const EvalCell&) = default;
};

struct MaskReport {
    ModalityMask mask;
    EvalCell single_session;
    EvalCell multi_session;
    EvalCell overall;

    friend bool operator==(const MaskReport&, const MaskReport&) = default;
};

inline constexpr int kEvalReportVersion = 1;

struct EvalReport {
    std::vector<MaskReport> masks;
    AblationFlags ablation;
    std::string config_hash;

    const MaskReport& at(ModalityMask mask) const;
    /// Mean overall Top-1 across the three single-modality masks.
    double unimodal_mean_top1() const;

    nlohmann::json to_json() const;
    /// Fixed-width table with two-decimal percentages.
    std::string table() const;

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

std::string config_hash(const RunConfig& cfg);

/// Runs the model under each mask with absent modalities zeroed and
/// aggregates Top-1/Top-5 overall and by whether the identity was
/// recorded in one or several sessions. Throws on an empty test set.
EvalReport eval_matrix(const TrimodalModel& model, const Dataset& test,
                       const std::vector<bool>& multi_session, const AblationFlags& ablation,
                       std::span<const ModalityMask> masks = evaluation_masks(),
                       std::string config_hash = {});

enum class LadderMode : std::uint8_t { Cumulative, Single };

std::string_view ladder_mode_name(LadderMode mode);
LadderMode parse_ladder_mode(std::string_view name);

/// full -> -correction -> -cross-attention -> -gated fusion -> -confidence
/// -> -augmentation.
std::vector<std::string> default_ladder_order();

struct LadderRow {
    std::string label;
    AblationFlags flags;
    EvalReport report;
};

struct LadderResult {
    LadderMode mode = LadderMode::Cumulative;
    std::vector<LadderRow> rows;

    nlohmann::json to_json() const;
    /// Per-mask Top-1 with the change against the first (full) row.
    std::string table() const;
};

/// Trains a fresh model under the given flags and returns its test report.
using AblationRunner = std::function<EvalReport(const AblationFlags&)>;

/// Row 0 is always the full model. Cumulative mode removes the modules in
/// `order` one after another; single mode removes each on its own.
LadderResult ablation_ladder(const AblationRunner& run, LadderMode mode,
                             const std::vector<std::string>& order = default_ladder_order());

} // namespace trifuse
