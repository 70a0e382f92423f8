#include "trifuse/decision.hpp"
#include "trifuse/eval.hpp"
#include "trifuse/trainer.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace trifuse;

namespace {

RunConfig small_run()
{
    RunConfig cfg;
    cfg.data.num_identities = 8;
    cfg.data.train_per_identity = 4;
    cfg.data.val_per_identity = 2;
    cfg.data.test_per_identity = 3;
    cfg.data.dims = {6, 7, 5};
    cfg.model.num_classes = 8;
    cfg.model.input_dims = cfg.data.dims;
    cfg.model.hidden_dim = 10;
    cfg.model.feature_dim = 8;
    cfg.model.attention_tokens = 2;
    cfg.model.confidence_hidden = 4;
    cfg.model.gate_hidden = 6;
    cfg.model.fusion_hidden = 9;
    cfg.model.correction_hidden = 7;
    return cfg;
}

EvalReport fake_report(double trimodal, double uni)
{
    EvalReport r;
    for (ModalityMask m : evaluation_masks()) {
        MaskReport mr;
        mr.mask = m;
        mr.overall.top1 = m.count() == 1 ? uni : trimodal;
        mr.overall.count = 10;
        r.masks.push_back(mr);
    }
    return r;
}

} // namespace

TEST_SUITE("eval")
{
    TEST_CASE("top-k examples")
    {
        Matrix s(1, 4);
        s << 0.1, 0.5, 0.2, 0.9;
        const std::vector<std::uint32_t> label = {1};
        CHECK(topk_accuracy(s, label, 2) == 1.0);
        CHECK(topk_accuracy(s, label, 1) == 0.0);
        CHECK(topk_accuracy(s, label, 4) == 1.0);
        const std::vector<std::vector<std::uint32_t>> ranking = {rank_identities(s.row(0))};
        CHECK(ranking[0] == std::vector<std::uint32_t>{3, 1, 2, 0});
        CHECK(topk_accuracy(ranking, label, 2) == 1.0);
        CHECK_THROWS(topk_accuracy(s, label, 0));
        const std::vector<std::uint32_t> bad = {4};
        CHECK_THROWS_AS(topk_accuracy(s, bad, 1), std::out_of_range);
    }

    TEST_CASE("tie rule matches the ranking")
    {
        std::mt19937_64 rng(1);
        std::uniform_int_distribution<int> level(0, 3);
        for (int trial = 0; trial < 200; ++trial) {
            Matrix s(1, 6);
            for (Index c = 0; c < 6; ++c) {
                s(0, c) = level(rng);
            }
            const std::vector<std::uint32_t> label = {static_cast<std::uint32_t>(trial % 6)};
            const std::vector<std::vector<std::uint32_t>> r = {rank_identities(s.row(0))};
            for (std::size_t k = 1; k <= 6; ++k) {
                CHECK(topk_accuracy(s, label, k) == topk_accuracy(r, label, k));
            }
        }
    }

    TEST_CASE("k = K is always a hit and top-5 never trails top-1")
    {
        std::mt19937_64 rng(2);
        std::normal_distribution<double> n(0.0, 1.0);
        const Matrix s = Matrix::NullaryExpr(300, 10, [&] { return n(rng); });
        std::vector<std::uint32_t> labels(300);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            labels[i] = static_cast<std::uint32_t>(i % 10);
        }
        CHECK(topk_accuracy(s, labels, 10) == 1.0);
        for (std::size_t k = 1; k < 10; ++k) {
            CHECK(topk_hits(s, labels, k) <= topk_hits(s, labels, k + 1));
        }
    }

    TEST_CASE("random scores hit at the binomial rate")
    {
        std::mt19937_64 rng(3);
        std::normal_distribution<double> n(0.0, 1.0);
        std::uniform_int_distribution<std::uint32_t> lab(0, 49);
        const Matrix s = Matrix::NullaryExpr(1000, 50, [&] { return n(rng); });
        std::vector<std::uint32_t> labels(1000);
        for (auto& l : labels) {
            l = lab(rng);
        }
        const double acc = topk_accuracy(s, labels, 1);
        CHECK(std::abs(acc - 0.02) <= 3.0 * std::sqrt(0.02 * 0.98 / 1000.0));
    }

    TEST_CASE("accuracy is invariant to permuting samples")
    {
        std::mt19937_64 rng(4);
        std::normal_distribution<double> n(0.0, 1.0);
        const Matrix s = Matrix::NullaryExpr(100, 7, [&] { return n(rng); });
        std::vector<std::uint32_t> labels(100);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            labels[i] = static_cast<std::uint32_t>((i * 3) % 7);
        }
        std::vector<Index> perm(100);
        std::iota(perm.begin(), perm.end(), Index{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        Matrix sp(100, 7);
        std::vector<std::uint32_t> lp(100);
        for (Index i = 0; i < 100; ++i) {
            sp.row(i) = s.row(perm[static_cast<std::size_t>(i)]);
            lp[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
        }
        for (std::size_t k : {1, 3, 5}) {
            CHECK(topk_hits(s, labels, k) == topk_hits(sp, lp, k));
        }
    }

    TEST_CASE("trimodal evaluation agrees with predict")
    {
        const RunConfig cfg = small_run();
        const Dataset full = generate(cfg.data, 5);
        const SplitManifest split = build_splits(full, 6);
        const DataDir dir = make_data_dir(full, split, {});
        auto model = build_model(cfg);
        const EvalReport r = eval_matrix(*model, dir.test, dir.manifest.multi_session_flags(), {});
        REQUIRE(r.masks.size() == 7);
        for (ModalityMask mask : evaluation_masks()) {
            std::size_t hits1 = 0, hits5 = 0;
            for (const auto& s : dir.test.samples) {
                const auto p = predict(*model, s, mask);
                hits1 += p.ranking[0] == s.identity ? 1 : 0;
                hits5 += std::find(p.ranking.begin(), p.ranking.begin() + 5, s.identity) !=
                                 p.ranking.begin() + 5
                             ? 1
                             : 0;
            }
            const auto& cell = r.at(mask).overall;
            CHECK(cell.count == dir.test.size());
            CHECK(cell.top1 == doctest::Approx(100.0 * static_cast<double>(hits1) / static_cast<double>(dir.test.size())));
            CHECK(cell.top5 == doctest::Approx(100.0 * static_cast<double>(hits5) / static_cast<double>(dir.test.size())));
            CHECK(cell.top5 >= cell.top1);
            const auto& m = r.at(mask);
            CHECK(m.single_session.count + m.multi_session.count == cell.count);
        }
    }

    TEST_CASE("face-only results ignore the other modalities")
    {
        const RunConfig cfg = small_run();
        const Dataset full = generate(cfg.data, 7);
        const DataDir dir = make_data_dir(full, build_splits(full, 8), {});
        auto model = build_model(cfg);
        Dataset scrambled = dir.test;
        std::mt19937_64 rng(9);
        std::normal_distribution<double> n(0.0, 10.0);
        for (auto& s : scrambled.samples) {
            for (auto m : {ModalityId::Gesture, ModalityId::Voice}) {
                s[m] = Vector::NullaryExpr(s[m].size(), [&] { return n(rng); });
            }
        }
        const std::array<ModalityMask, 1> face = {ModalityMask::only(ModalityId::Face)};
        const auto flags = dir.manifest.multi_session_flags();
        CHECK(eval_matrix(*model, dir.test, flags, {}, face) == eval_matrix(*model, scrambled, flags, {}, face));
    }

    TEST_CASE("empty test set is an error")
    {
        const RunConfig cfg = small_run();
        auto model = build_model(cfg);
        Dataset empty;
        empty.num_identities = 8;
        empty.dims = cfg.data.dims;
        CHECK_THROWS_AS(eval_matrix(*model, empty, std::vector<bool>(8, false), {}), std::invalid_argument);
    }

    TEST_CASE("report json and table")
    {
        EvalReport r = fake_report(99.5, 80.0);
        r.config_hash = "abc";
        const auto j = r.to_json();
        CHECK(j["report_version"] == kEvalReportVersion);
        CHECK(j["masks"].size() == 7);
        CHECK(j["ablation_label"] == "full");
        CHECK(r.table().find("99.50") != std::string::npos);
        CHECK(r.unimodal_mean_top1() == 80.0);
    }

    TEST_CASE("config hash is stable and sensitive")
    {
        RunConfig a;
        RunConfig b;
        CHECK(config_hash(a) == config_hash(b));
        CHECK(config_hash(a).size() == 16);
        b.train.epochs = 31;
        CHECK(config_hash(a) != config_hash(b));
    }

    TEST_CASE("cumulative ladder accumulates flags")
    {
        std::vector<AblationFlags> seen;
        const AblationRunner run = [&](const AblationFlags& f) {
            seen.push_back(f);
            return fake_report(100.0 - static_cast<double>(seen.size()), 50.0);
        };
        const LadderResult ladder = ablation_ladder(run, LadderMode::Cumulative);
        REQUIRE(ladder.rows.size() == 6);
        CHECK(ladder.rows[0].label == "full");
        CHECK(seen[0] == AblationFlags{});
        CHECK(seen[1] == AblationFlags::parse("no_correction"));
        CHECK(seen[3] == AblationFlags::parse("no_correction,no_cross_attention,no_gated_fusion"));
        CHECK(seen[5].names().size() == 5);
        CHECK(ladder.rows[4].label == "-confidence");
        CHECK(ladder.to_json()["rows"].size() == 6);
        CHECK(ladder.table().find("uni-mean") != std::string::npos);
    }

    TEST_CASE("single ladder removes one module per row")
    {
        std::vector<AblationFlags> seen;
        const AblationRunner run = [&](const AblationFlags& f) {
            seen.push_back(f);
            return fake_report(90.0, 50.0);
        };
        ablation_ladder(run, LadderMode::Single);
        REQUIRE(seen.size() == 6);
        for (std::size_t i = 1; i < seen.size(); ++i) {
            CHECK(seen[i].names().size() == 1);
        }
        CHECK(parse_ladder_mode("single") == LadderMode::Single);
        CHECK_THROWS(parse_ladder_mode("both"));
    }
}
