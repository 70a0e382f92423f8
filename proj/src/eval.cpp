#include "trifuse/eval.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace trifuse {

using json = nlohmann::json;

namespace {

bool hit(const Eigen::Ref<const Eigen::RowVectorXd>& scores, std::uint32_t label, std::size_t k)
{
    const double s = scores(label);
    std::size_t ahead = 0;
    for (Index c = 0; c < scores.size(); ++c) {
        if (scores(c) > s || (scores(c) == s && c < static_cast<Index>(label))) {
            if (++ahead >= k) {
                return false;
            }
        }
    }
    return true;
}

void require_k(std::size_t k)
{
    if (k < 1) {
        throw std::invalid_argument("topk_accuracy: k must be at least 1");
    }
}

std::string pct(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string pad(std::string s, std::size_t width)
{
    if (s.size() < width) {
        s.insert(0, width - s.size(), ' ');
    }
    return s;
}

std::string pad_right(std::string s, std::size_t width)
{
    if (s.size() < width) {
        s.append(width - s.size(), ' ');
    }
    return s;
}

json cell_json(const EvalCell& c)
{
    return {{"top1", c.top1}, {"top5", c.top5}, {"count", c.count}};
}

std::string ladder_label(const std::string& flag)
{
    if (flag == "no_correction") {
        return "-correction";
    }
    if (flag == "no_cross_attention") {
        return "-cross-attention";
    }
    if (flag == "no_gated_fusion") {
        return "-gated-fusion";
    }
    if (flag == "no_confidence") {
        return "-confidence";
    }
    if (flag == "no_augmentation") {
        return "-augmentation";
    }
    return "-" + flag;
}

} // namespace

std::size_t topk_hits(const Matrix& scores, std::span<const std::uint32_t> labels, std::size_t k)
{
    require_k(k);
    if (static_cast<std::size_t>(scores.rows()) != labels.size()) {
        throw ShapeError("topk: " + std::to_string(scores.rows()) + " score rows for " +
                         std::to_string(labels.size()) + " labels");
    }
    std::size_t hits = 0;
    for (Index r = 0; r < scores.rows(); ++r) {
        const auto label = labels[static_cast<std::size_t>(r)];
        if (static_cast<Index>(label) >= scores.cols()) {
            throw std::out_of_range("topk: label " + std::to_string(label) + " outside [0, " +
                                    std::to_string(scores.cols()) + ")");
        }
        hits += hit(scores.row(r), label, k) ? 1 : 0;
    }
    return hits;
}

double topk_accuracy(const Matrix& scores, std::span<const std::uint32_t> labels, std::size_t k)
{
    if (labels.empty()) {
        throw std::invalid_argument("topk_accuracy: no samples");
    }
    return static_cast<double>(topk_hits(scores, labels, k)) / static_cast<double>(labels.size());
}

double topk_accuracy(std::span<const std::vector<std::uint32_t>> rankings,
                     std::span<const std::uint32_t> labels, std::size_t k)
{
    require_k(k);
    if (rankings.size() != labels.size()) {
        throw std::invalid_argument("topk_accuracy: rankings and labels differ in length");
    }
    if (labels.empty()) {
        throw std::invalid_argument("topk_accuracy: no samples");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto& r = rankings[i];
        const std::size_t n = std::min(k, r.size());
        for (std::size_t j = 0; j < n; ++j) {
            if (r[j] == labels[i]) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

const MaskReport& EvalReport::at(ModalityMask mask) const
{
    for (const auto& m : masks) {
        if (m.mask == mask) {
            return m;
        }
    }
    throw std::out_of_range("report has no entry for mask " + mask.label());
}

double EvalReport::unimodal_mean_top1() const
{
    double total = 0.0;
    for (auto m : kModalities) {
        total += at(ModalityMask::only(m)).overall.top1;
    }
    return total / static_cast<double>(kModalityCount);
}

json EvalReport::to_json() const
{
    json cells = json::array();
    for (const auto& m : masks) {
        cells.push_back({{"mask", m.mask.label()},
                         {"single_session", cell_json(m.single_session)},
                         {"multi_session", cell_json(m.multi_session)},
                         {"overall", cell_json(m.overall)}});
    }
    return {{"report_version", kEvalReportVersion},
            {"ablation", trifuse::to_json(ablation)},
            {"ablation_label", ablation.label()},
            {"config_hash", config_hash},
            {"masks", cells}};
}

std::string EvalReport::table() const
{
    std::ostringstream os;
    os << "ablation: " << ablation.label() << "\n";
    os << pad_right("mask", 20) << pad("top1", 9) << pad("top5", 9) << pad("single@1", 10)
       << pad("single@5", 10) << pad("multi@1", 10) << pad("multi@5", 10) << pad("n", 7) << "\n";
    for (const auto& m : masks) {
        os << pad_right(m.mask.label(), 20) << pad(pct(m.overall.top1), 9)
           << pad(pct(m.overall.top5), 9) << pad(pct(m.single_session.top1), 10)
           << pad(pct(m.single_session.top5), 10) << pad(pct(m.multi_session.top1), 10)
           << pad(pct(m.multi_session.top5), 10) << pad(std::to_string(m.overall.count), 7)
           << "\n";
    }
    return os.str();
}

std::string config_hash(const RunConfig& cfg)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(stable_hash(to_json(cfg).dump())));
    return buf;
}

EvalReport eval_matrix(const TrimodalModel& model, const Dataset& test,
                       const std::vector<bool>& multi_session, const AblationFlags& ablation,
                       std::span<const ModalityMask> masks, std::string hash)
{
    if (test.samples.empty()) {
        throw std::invalid_argument("eval_matrix: empty test set");
    }
    std::vector<std::uint32_t> labels;
    std::vector<bool> multi;
    labels.reserve(test.size());
    for (const auto& s : test.samples) {
        if (s.identity >= multi_session.size()) {
            throw std::out_of_range("eval_matrix: identity " + std::to_string(s.identity) +
                                    " has no session record");
        }
        labels.push_back(s.identity);
        multi.push_back(multi_session[s.identity]);
    }
    const ModalityBatch inputs = gather(test);

    EvalReport report;
    report.ablation = ablation;
    report.config_hash = std::move(hash);
    for (ModalityMask mask : masks) {
        if (mask.empty()) {
            throw std::invalid_argument("no modality available");
        }
        ModalityBatch masked = inputs;
        apply_mask(masked, mask);
        const Matrix scores = model.predict_logits(masked, ablation);

        std::array<std::size_t, 2> n{};
        std::array<std::size_t, 2> h1{};
        std::array<std::size_t, 2> h5{};
        for (Index r = 0; r < scores.rows(); ++r) {
            const auto group = multi[static_cast<std::size_t>(r)] ? 1 : 0;
            const auto label = labels[static_cast<std::size_t>(r)];
            ++n[group];
            h1[group] += hit(scores.row(r), label, 1) ? 1 : 0;
            h5[group] += hit(scores.row(r), label, 5) ? 1 : 0;
        }
        auto cell = [](std::size_t hits1, std::size_t hits5, std::size_t count) {
            EvalCell c;
            c.count = count;
            if (count > 0) {
                c.top1 = 100.0 * static_cast<double>(hits1) / static_cast<double>(count);
                c.top5 = 100.0 * static_cast<double>(hits5) / static_cast<double>(count);
            }
            return c;
        };
        MaskReport mr;
        mr.mask = mask;
        mr.single_session = cell(h1[0], h5[0], n[0]);
        mr.multi_session = cell(h1[1], h5[1], n[1]);
        mr.overall = cell(h1[0] + h1[1], h5[0] + h5[1], n[0] + n[1]);
        report.masks.push_back(mr);
    }
    return report;
}

std::string_view ladder_mode_name(LadderMode mode)
{
    return mode == LadderMode::Cumulative ? "cumulative" : "single";
}

LadderMode parse_ladder_mode(std::string_view name)
{
    if (name == "cumulative") {
        return LadderMode::Cumulative;
    }
    if (name == "single") {
        return LadderMode::Single;
    }
    throw std::invalid_argument("unknown ladder mode '" + std::string(name) +
                                "' (expected cumulative or single)");
}

std::vector<std::string> default_ladder_order()
{
    return {"no_correction", "no_cross_attention", "no_gated_fusion", "no_confidence",
            "no_augmentation"};
}

LadderResult ablation_ladder(const AblationRunner& run, LadderMode mode,
                             const std::vector<std::string>& order)
{
    LadderResult out;
    out.mode = mode;
    out.rows.push_back({"full", AblationFlags{}, run(AblationFlags{})});
    AblationFlags cumulative;
    for (const auto& flag : order) {
        const AblationFlags one = AblationFlags::parse(flag);
        AblationFlags flags = mode == LadderMode::Cumulative ? cumulative.merged(one) : one;
        if (mode == LadderMode::Cumulative) {
            cumulative = flags;
        }
        out.rows.push_back({ladder_label(flag), flags, run(flags)});
    }
    return out;
}

json LadderResult::to_json() const
{
    json rows_json = json::array();
    for (const auto& r : rows) {
        rows_json.push_back({{"label", r.label}, {"report", r.report.to_json()}});
    }
    return {{"mode", ladder_mode_name(mode)}, {"rows", rows_json}};
}

std::string LadderResult::table() const
{
    std::ostringstream os;
    os << "ablation ladder (" << ladder_mode_name(mode) << ")\n";
    os << pad_right("row", 20);
    const auto& masks = evaluation_masks();
    for (auto m : masks) {
        os << pad(m.label(), 15);
    }
    os << pad("uni-mean", 10) << "\n";
    for (const auto& r : rows) {
        os << pad_right(r.label, 20);
        for (auto m : masks) {
            const double v = r.report.at(m).overall.top1;
            std::string text = pct(v);
            if (&r != &rows.front()) {
                const double d = v - rows.front().report.at(m).overall.top1;
                text += " (" + std::string(d >= 0 ? "+" : "") + pct(d) + ")";
            }
            os << pad(text, 15);
        }
        os << pad(pct(r.report.unimodal_mean_top1()), 10) << "\n";
    }
    return os.str();
}

} // namespace trifuse
