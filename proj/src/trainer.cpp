#include "trifuse/trainer.hpp"

#include "trifuse/losses.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace trifuse {

namespace fs = std::filesystem;
using json = nlohmann::json;

AdamW::AdamW(AdamWConfig cfg, DecayFilter decays) : cfg_(cfg), decays_(std::move(decays))
{
    if (!(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0) || !(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0)) {
        throw std::invalid_argument("AdamW betas must be in [0, 1)");
    }
    if (!(cfg_.eps > 0.0) || !(cfg_.weight_decay >= 0.0)) {
        throw std::invalid_argument("AdamW needs eps > 0 and weight_decay >= 0");
    }
}

bool AdamW::default_decay_filter(const std::string& name)
{
    constexpr std::string_view suffix = ".weight";
    return name.size() >= suffix.size() &&
           name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void AdamW::step(ParamStore& params, double lr)
{
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& e : params.entries()) {
        auto [it, fresh] = moments_.try_emplace(e.name);
        Moments& mom = it->second;
        if (fresh) {
            mom.m = Matrix::Zero(e.value.rows(), e.value.cols());
            mom.v = Matrix::Zero(e.value.rows(), e.value.cols());
        }
        const double decay =
            cfg_.weight_decay > 0.0 && decays_ && decays_(e.name) ? 1.0 - lr * cfg_.weight_decay
                                                                  : 1.0;
        const double b1 = cfg_.beta1;
        const double b2 = cfg_.beta2;
        double* w = e.value.data();
        const double* g = e.grad.data();
        double* m = mom.m.data();
        double* v = mom.v.data();
        for (Index i = 0; i < e.value.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            w[i] = w[i] * decay - lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        }
    }
}

double lr_at(long step, const LrSchedule& s)
{
    if (s.total_steps < 1 || s.warmup_steps < 0 || s.warmup_steps > s.total_steps) {
        throw std::invalid_argument("lr schedule needs 0 <= warmup_steps <= total_steps, total >= 1");
    }
    if (step < s.warmup_steps) {
        return s.peak * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    }
    const long span = s.total_steps - s.warmup_steps;
    const double progress =
        span == 0 ? 1.0
                  : std::clamp(static_cast<double>(step - s.warmup_steps) / static_cast<double>(span),
                               0.0, 1.0);
    return s.floor + 0.5 * (s.peak - s.floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_grad_norm(ParamStore& params, double max_norm)
{
    double sq = 0.0;
    for (const auto& e : params.entries()) {
        sq += e.grad.squaredNorm();
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double f = max_norm / norm;
        for (auto& e : params.entries()) {
            e.grad *= f;
        }
    }
    return norm;
}

EpochPlan curriculum_sampler(int epoch, std::size_t dataset_size, Index batch_size,
                             CurriculumMode mode, int ramp_epochs, Rng& rng)
{
    if (batch_size < 1) {
        throw std::invalid_argument("batch size must be positive");
    }
    EpochPlan plan;
    if (mode == CurriculumMode::CleanToHard && ramp_epochs > 0) {
        plan.intensity =
            std::min(1.0, static_cast<double>(epoch + 1) / static_cast<double>(ramp_epochs));
    }
    std::vector<std::size_t> order(dataset_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const auto b = static_cast<std::size_t>(batch_size);
    for (std::size_t start = 0; start < dataset_size; start += b) {
        const auto end = std::min(dataset_size, start + b);
        plan.batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                                  order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return plan;
}

std::unique_ptr<TrimodalModel> build_model(const RunConfig& cfg)
{
    cfg.validate();
    auto model = std::make_unique<TrimodalModel>(cfg.model, derive_seed(cfg.seed, "model"));
    register_log_variances(model->params(), cfg.loss.loss_heads.size());
    return model;
}

namespace {

struct ValScore {
    double trimodal = -1.0;
    double mean = -1.0;

    bool at_least(const ValScore& o) const
    {
        if (trimodal != o.trimodal) {
            return trimodal > o.trimodal;
        }
        return mean >= o.mean;
    }
};

ValScore score(const EvalReport& r)
{
    ValScore s;
    s.trimodal = r.at(ModalityMask::all()).overall.top1;
    double total = 0.0;
    for (const auto& m : r.masks) {
        total += m.overall.top1;
    }
    s.mean = total / static_cast<double>(r.masks.size());
    return s;
}

json val_json(const EvalReport& r)
{
    json j = json::object();
    for (const auto& m : r.masks) {
        j[m.mask.label()] = {{"top1", m.overall.top1}, {"top5", m.overall.top5}};
    }
    return j;
}

} // namespace

TrainResult train(TrimodalModel& model, const DataDir& data, const RunConfig& cfg,
                  const TrainOptions& options)
{
    cfg.validate();
    if (data.train.samples.empty()) {
        throw std::invalid_argument("train: empty training split");
    }
    if (data.manifest.num_identities != static_cast<std::size_t>(cfg.model.num_classes)) {
        throw std::invalid_argument("train: data has " +
                                    std::to_string(data.manifest.num_identities) +
                                    " identities but the model has " +
                                    std::to_string(cfg.model.num_classes) + " classes");
    }
    const Dataset& val = data.val.samples.empty() ? data.test : data.val;
    const auto multi = data.manifest.multi_session_flags();
    const auto scale = feature_scale(data.train);
    const bool augment = !cfg.ablation.no_augmentation;

    std::ofstream metrics_file;
    if (!options.out_dir.empty()) {
        fs::create_directories(options.out_dir);
        metrics_file.open(options.out_dir / "metrics.jsonl");
        std::ofstream(options.out_dir / "config.json") << to_json(cfg).dump(2) << '\n';
    }

    Rng rng(derive_seed(cfg.seed, "train"));
    const auto batches_per_epoch = static_cast<long>(
        (data.train.size() + static_cast<std::size_t>(cfg.train.batch_size) - 1) /
        static_cast<std::size_t>(cfg.train.batch_size));
    LrSchedule sched;
    sched.peak = cfg.train.peak_lr;
    sched.floor = cfg.train.lr_floor;
    sched.total_steps = std::max(1L, batches_per_epoch * cfg.train.epochs);
    sched.warmup_steps = static_cast<long>(
        std::llround(cfg.train.warmup_fraction * static_cast<double>(sched.total_steps)));
    AdamWConfig adam;
    adam.weight_decay = cfg.train.weight_decay;
    AdamW opt(adam);

    ParamStore& params = model.params();
    ParamStore best;
    for (const auto& e : params.entries()) {
        best.add(e.name, e.value);
    }

    TrainResult result;
    ValScore best_score;
    long step = 0;
    const Index k = cfg.model.num_classes;
    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        const EpochPlan plan = curriculum_sampler(epoch, data.train.size(), cfg.train.batch_size,
                                                  cfg.train.curriculum,
                                                  cfg.train.curriculum_ramp_epochs, rng);
        std::vector<double> head_sums(cfg.loss.loss_heads.size(), 0.0);
        double total_sum = 0.0;
        double lr = 0.0;
        for (const auto& idx : plan.batches) {
            ModalityBatch x = gather(data.train, idx);
            std::vector<std::uint32_t> labels;
            labels.reserve(idx.size());
            for (auto i : idx) {
                labels.push_back(data.train.samples[i].identity);
            }
            Matrix targets = smoothed_targets(labels, k, cfg.loss.label_smoothing);
            if (augment) {
                augment_batch(x, targets, cfg.augment, scale, plan.intensity, rng);
            }

            Tape tape = Tape::training(params);
            const auto fwd = model.forward(tape, x, {cfg.ablation, true, &rng});
            const auto loss = multitask_loss(tape, fwd, targets, cfg.loss);
            tape.backward(loss.total);
            clip_grad_norm(params, cfg.train.grad_clip);
            ++step;
            lr = lr_at(step, sched);
            opt.step(params, lr);

            const auto weight = static_cast<double>(idx.size());
            total_sum += loss.total.scalar() * weight;
            for (std::size_t h = 0; h < head_sums.size(); ++h) {
                head_sums[h] += loss.head_losses[h] * weight;
            }
        }

        const EvalReport report = eval_matrix(model, val, multi, cfg.ablation);
        const ValScore s = score(report);
        const bool improved = result.best_epoch < 0 || s.at_least(best_score);
        if (improved) {
            best_score = s;
            result.best_epoch = epoch;
            result.best_val_top1 = s.trimodal;
            best.copy_values_from(params);
        }

        const auto n = static_cast<double>(data.train.size());
        json heads = json::object();
        for (std::size_t h = 0; h < head_sums.size(); ++h) {
            heads[std::string(head_name(cfg.loss.loss_heads[h]))] = head_sums[h] / n;
        }
        const Matrix& logvar = params.value(kLogVarianceParam);
        json line = {{"epoch", epoch},
                     {"lr", lr},
                     {"intensity", augment ? plan.intensity : 0.0},
                     {"loss_total", total_sum / n},
                     {"loss_heads", heads},
                     {"log_variance", std::vector<double>(logvar.data(), logvar.data() + logvar.size())},
                     {"val", val_json(report)},
                     {"best", improved}};
        if (metrics_file.is_open()) {
            metrics_file << line.dump() << '\n';
            metrics_file.flush();
        }
        if (options.progress != nullptr) {
            char buf[160];
            std::snprintf(buf, sizeof buf,
                          "epoch %3d  loss %.4f  lr %.2e  val trimodal %.2f  face %.2f  gesture "
                          "%.2f  voice %.2f%s\n",
                          epoch + 1, total_sum / n, lr, s.trimodal,
                          report.at(ModalityMask::only(ModalityId::Face)).overall.top1,
                          report.at(ModalityMask::only(ModalityId::Gesture)).overall.top1,
                          report.at(ModalityMask::only(ModalityId::Voice)).overall.top1,
                          improved ? "  *" : "");
            *options.progress << buf << std::flush;
        }
        result.metrics.push_back(std::move(line));
    }

    params.copy_values_from(best);
    if (!options.out_dir.empty()) {
        save_checkpoint(options.out_dir / "checkpoint.bin", params,
                        checkpoint_metadata(cfg, result));
    }
    return result;
}

json checkpoint_metadata(const RunConfig& cfg, const TrainResult& result)
{
    return {{"config", to_json(cfg)},
            {"config_hash", config_hash(cfg)},
            {"best_epoch", result.best_epoch},
            {"best_val_top1", result.best_val_top1}};
}

std::unique_ptr<TrimodalModel> load_model(const fs::path& checkpoint, RunConfig* cfg_out)
{
    const json meta = read_checkpoint_metadata(checkpoint);
    if (!meta.contains("config")) {
        throw std::runtime_error(checkpoint.string() + ": checkpoint carries no run config");
    }
    const RunConfig cfg = run_config_from_json(meta.at("config"));
    auto model = build_model(cfg);
    load_checkpoint(checkpoint, model->params());
    if (cfg_out != nullptr) {
        *cfg_out = cfg;
    }
    return model;
}

} // namespace trifuse
