// Acceptance checks for the trimodal identification stack. Prints one
// PASS/FAIL line per criterion and exits non-zero if any fails.

#include "leak_scan.hpp"

#include "trifuse/autodiff.hpp"
#include "trifuse/decision.hpp"
#include "trifuse/eval.hpp"
#include "trifuse/modelcheck.hpp"
#include "trifuse/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace trifuse;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Run {
    EvalReport report;
    TrainResult train;
    double seconds = 0.0;
};

class Suite {
public:
    explicit Suite(bool verbose) : verbose_(verbose)
    {
        base_ = RunConfig{};
        apply_seed_override(base_);
        base_.validate();
        const Dataset full = generate(base_.data, derive_seed(base_.seed, "data"));
        data_ = make_data_dir(full, build_splits(full, derive_seed(base_.seed, "split")), {});
        multi_ = data_.manifest.multi_session_flags();
    }

    const Run& run(const AblationFlags& flags)
    {
        const std::string key = flags.label();
        if (auto it = runs_.find(key); it != runs_.end()) {
            return it->second;
        }
        return runs_.emplace(key, fresh_run(flags)).first->second;
    }

    Run fresh_run(const AblationFlags& flags)
    {
        RunConfig cfg = base_;
        cfg.ablation = flags;
        if (verbose_) {
            std::cerr << "training " << flags.label() << "\n";
        }
        const auto start = Clock::now();
        auto model = build_model(cfg);
        Run r;
        TrainOptions opts;
        opts.progress = verbose_ ? &std::cerr : nullptr;
        r.train = train(*model, data_, cfg, opts);
        r.seconds = seconds_since(start);
        r.report = eval_matrix(*model, data_.test, multi_, cfg.ablation, evaluation_masks(),
                               config_hash(cfg));
        if (verbose_) {
            std::cerr << r.report.table();
        }
        return r;
    }

    const RunConfig& base() const { return base_; }

private:
    bool verbose_;
    RunConfig base_;
    DataDir data_;
    std::vector<bool> multi_;
    std::map<std::string, Run> runs_;
};

double top1(const EvalReport& r, ModalityMask m) { return r.at(m).overall.top1; }

const ModalityMask kFace = ModalityMask::only(ModalityId::Face);
const ModalityMask kGesture = ModalityMask::only(ModalityId::Gesture);
const ModalityMask kVoice = ModalityMask::only(ModalityId::Voice);

Outcome criterion_grad_check()
{
    const auto start = Clock::now();
    double worst = 0.0;
    std::size_t checked = 0;
    bool ok = true;
    const int seeds = 20;
    for (int s = 1; s <= seeds; ++s) {
        ModelGradCheckOptions opts;
        opts.seed = static_cast<std::uint64_t>(s);
        const auto r = model_grad_check(opts);
        worst = std::max(worst, r.max_relative_error);
        checked += r.checked;
        ok = ok && r.passed(1e-4);
    }
    const double secs = seconds_since(start);
    return {ok && secs < 60.0,
            fmt("%d seeds, %zu gradients, max relative error %.2e (limit 1e-4), %.1f s (limit 60 s)",
                seeds, checked, worst, secs)};
}

Outcome criterion_identities()
{
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> n(0.0, 3.0);
    std::uniform_real_distribution<double> conf(0.01, 0.99);
    std::uniform_real_distribution<double> factor(0.05, 20.0);
    auto vec = [&](Index k) { return Vector(Vector::NullaryExpr(k, [&] { return n(rng); })); };
    std::array<double, 5> worst{};
    const int trials = 1000;
    for (int t = 0; t < trials; ++t) {
        const Index k = 2 + t % 49;
        const Vector a = vec(k), b = vec(k), c = vec(k);
        const double w = conf(rng);
        worst[0] = std::max(worst[0], (confidence_weighted_fusion(a, b, c, w, w, w) - (a + b + c) / 3.0)
                                          .cwiseAbs()
                                          .maxCoeff());
        const double cf = conf(rng), cg = conf(rng), cv = conf(rng), s = factor(rng);
        worst[1] = std::max(worst[1], (confidence_weighted_fusion(a, b, c, cf, cg, cv) -
                                       confidence_weighted_fusion(a, b, c, s * cf, s * cg, s * cv))
                                          .cwiseAbs()
                                          .maxCoeff());
        const Vector e = ensemble(a, b);
        for (Index i = 0; i < k; ++i) {
            worst[2] = std::max(worst[2], std::abs(e(i) - (a(i) + b(i)) / 2.0));
        }
        worst[4] = std::max(worst[4], (softmax_value(a) - softmax_value((a.array() + n(rng) * 10.0).matrix()))
                                          .cwiseAbs()
                                          .maxCoeff());
    }

    // Correction network with all weights zero, inside a full forward pass.
    ModelConfig cfg = grad_check_model_config();
    for (int t = 0; t < 20; ++t) {
        TrimodalModel model(cfg, static_cast<std::uint64_t>(t));
        for (const auto& name : model.params().names_with_prefix("corr.")) {
            model.params().value(name).setZero();
        }
        ModalityBatch x;
        for (auto m : kModalities) {
            x[index_of(m)] = Matrix::NullaryExpr(4, cfg.input_dims[index_of(m)], [&] { return n(rng); });
        }
        Tape tape = Tape::inference(model.params());
        const auto fwd = model.forward(tape, x);
        worst[3] = std::max(worst[3], (fwd.fusion.p_final.value() - fwd.fusion.p_ensemble.value())
                                          .cwiseAbs()
                                          .maxCoeff());
    }
    bool ok = true;
    for (double w : worst) {
        ok = ok && w <= 1e-12;
    }
    return {ok, fmt("max deviation: equal-confidence mean %.1e, confidence scaling %.1e, ensemble "
                    "mean %.1e, zero correction %.1e, softmax shift %.1e (limit 1e-12)",
                    worst[0], worst[1], worst[2], worst[3], worst[4])};
}

Outcome criterion_accuracy(const Run& full, int epochs)
{
    const double t1 = top1(full.report, ModalityMask::all());
    bool top5_ok = true;
    for (const auto& m : full.report.masks) {
        for (const EvalCell* c : {&m.overall, &m.single_session, &m.multi_session}) {
            top5_ok = top5_ok && c->top5 >= c->top1;
        }
    }
    return {t1 >= 95.0 && full.seconds < 300.0 && epochs <= 30 && top5_ok,
            fmt("trimodal Top-1 %.2f%% (limit 95) after %d epochs in %.1f s (limit 300 s); Top-5 >= "
                "Top-1 in every cell: %s",
                t1, epochs, full.seconds, top5_ok ? "yes" : "no")};
}

Outcome criterion_robustness(const Run& full)
{
    const EvalReport& r = full.report;
    const double tri = top1(r, ModalityMask::all());
    const double face = top1(r, kFace);
    const double voice = top1(r, kVoice);
    bool ok = face >= 0.85 * tri && voice >= 0.85 * tri;
    std::ostringstream os;
    os << fmt("face %.2f, voice %.2f vs 0.85 x trimodal = %.2f", face, voice, 0.85 * tri);
    double worst_margin = 1e9;
    std::string worst_pair;
    for (ModalityMask m : evaluation_masks()) {
        if (m.count() != 2) {
            continue;
        }
        for (auto id : kModalities) {
            if (!m.has(id)) {
                continue;
            }
            const double margin = top1(r, m) - (top1(r, ModalityMask::only(id)) - 2.0);
            if (margin < worst_margin) {
                worst_margin = margin;
                worst_pair = m.label() + " vs " + std::string(modality_name(id));
            }
            ok = ok && margin >= 0.0;
        }
    }
    os << fmt("; tightest bimodal margin %.2f (%s)", worst_margin, worst_pair.c_str());
    return {ok, os.str()};
}

Outcome criterion_sessions(const Run& full)
{
    const auto& g = full.report.at(kGesture);
    const auto& f = full.report.at(kFace);
    const double g_drop = g.single_session.top1 - g.multi_session.top1;
    const double f_drop = f.single_session.top1 - f.multi_session.top1;
    return {g_drop >= 20.0 && f_drop < 10.0,
            fmt("gesture same-session %.2f vs cross-session %.2f (drop %.2f, need >= 20); face %.2f "
                "vs %.2f (drop %.2f, need < 10)",
                g.single_session.top1, g.multi_session.top1, g_drop, f.single_session.top1,
                f.multi_session.top1, f_drop)};
}

Outcome criterion_ladder(Suite& suite)
{
    const AblationRunner runner = [&](const AblationFlags& f) { return suite.run(f).report; };
    const LadderResult ladder = ablation_ladder(runner, LadderMode::Cumulative);
    bool monotone = true;
    std::ostringstream os;
    os << "trimodal";
    for (std::size_t i = 0; i < ladder.rows.size(); ++i) {
        const double t = top1(ladder.rows[i].report, ModalityMask::all());
        os << fmt(" %s=%.2f", ladder.rows[i].label.c_str(), t);
        if (i > 0) {
            monotone = monotone && t <= top1(ladder.rows[i - 1].report, ModalityMask::all());
        }
    }
    double drop = 0.0;
    for (std::size_t i = 1; i < ladder.rows.size(); ++i) {
        if (ladder.rows[i].label == "-confidence") {
            drop = ladder.rows[i - 1].report.unimodal_mean_top1() -
                   ladder.rows[i].report.unimodal_mean_top1();
            os << fmt("; unimodal mean %.2f -> %.2f (drop %.2f, need >= 3)",
                      ladder.rows[i - 1].report.unimodal_mean_top1(),
                      ladder.rows[i].report.unimodal_mean_top1(), drop);
        }
    }
    os << (monotone ? "; monotone" : "; not monotone");
    return {monotone && drop >= 3.0, os.str()};
}

Outcome criterion_determinism(Suite& suite, const Run& full)
{
    const Run again = suite.fresh_run(AblationFlags{});
    const bool same = again.report == full.report &&
                      again.report.to_json().dump() == full.report.to_json().dump() &&
                      again.train.metrics == full.train.metrics;
    return {same, same ? "second run reproduced the EvalReport and every metrics line exactly"
                       : "reports or metrics differ between identical runs"};
}

Outcome criterion_leaks()
{
    std::mt19937_64 rng(8);
    const int configs = 100;
    std::size_t samples = 0;
    for (int i = 0; i < configs; ++i) {
        SyntheticConfig cfg;
        cfg.num_identities = std::uniform_int_distribution<std::size_t>(1, 60)(rng);
        cfg.single_session_fraction = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        cfg.max_sessions = std::uniform_int_distribution<std::size_t>(2, 8)(rng);
        cfg.train_per_identity = std::uniform_int_distribution<std::size_t>(1, 40)(rng);
        cfg.val_per_identity = std::uniform_int_distribution<std::size_t>(0, 10)(rng);
        cfg.test_per_identity = std::uniform_int_distribution<std::size_t>(1, 10)(rng);
        cfg.dims = {4, 4, 4};
        const Dataset d = generate(cfg, rng());
        const SplitManifest s = build_splits(d, rng());
        samples += d.size();
        const std::string problem = testing::scan_split(d, s);
        if (!problem.empty()) {
            return {false, fmt("config %d: %s", i, problem.c_str())};
        }
    }
    return {true, fmt("%d random configs, %zu samples scanned, no leaks", configs, samples)};
}

} // namespace

int main(int argc, char** argv)
{
    bool verbose = false;
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--verbose") == 0) {
            verbose = true;
        } else {
            only.push_back(std::atoi(argv[i]));
        }
    }
    auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

    const char* names[] = {"",
                           "gradient check",
                           "arithmetic identities",
                           "trimodal accuracy",
                           "missing-modality robustness",
                           "session dependence",
                           "ablation ladder",
                           "determinism",
                           "split leak scan"};
    int failures = 0;
    auto report = [&](int c, const Outcome& o) {
        std::printf("criterion %d (%s): %s - %s\n", c, names[c], o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    };

    try {
        if (wanted(1)) {
            report(1, criterion_grad_check());
        }
        if (wanted(2)) {
            report(2, criterion_identities());
        }
        std::optional<Suite> suite;
        if (wanted(3) || wanted(4) || wanted(5) || wanted(6) || wanted(7)) {
            suite.emplace(verbose);
            const Run& full = suite->run(AblationFlags{});
            if (wanted(3)) {
                report(3, criterion_accuracy(full, suite->base().train.epochs));
            }
            if (wanted(4)) {
                report(4, criterion_robustness(full));
            }
            if (wanted(5)) {
                report(5, criterion_sessions(full));
            }
            if (wanted(6)) {
                report(6, criterion_ladder(*suite));
            }
            if (wanted(7)) {
                report(7, criterion_determinism(*suite, suite->run(AblationFlags{})));
            }
        }
        if (wanted(8)) {
            report(8, criterion_leaks());
        }
    } catch (const std::exception& e) {
        std::printf("error: %s\n", e.what());
        return 2;
    }
    return failures == 0 ? 0 : 1;
}
