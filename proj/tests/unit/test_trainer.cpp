#include "trifuse/losses.hpp"
#include "trifuse/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

using namespace trifuse;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run()
{
    RunConfig cfg;
    cfg.seed = 99;
    cfg.data.num_identities = 6;
    cfg.data.train_per_identity = 12;
    cfg.data.val_per_identity = 3;
    cfg.data.test_per_identity = 3;
    cfg.data.dims = {10, 12, 8};
    cfg.data.noise_std = {1.0, 1.0, 1.0};
    cfg.model.num_classes = 6;
    cfg.model.input_dims = cfg.data.dims;
    cfg.model.hidden_dim = 16;
    cfg.model.feature_dim = 8;
    cfg.model.attention_tokens = 2;
    cfg.model.confidence_hidden = 4;
    cfg.model.gate_hidden = 6;
    cfg.model.fusion_hidden = 12;
    cfg.model.correction_hidden = 8;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 8;
    return cfg;
}

DataDir tiny_data(const RunConfig& cfg)
{
    const Dataset full = generate(cfg.data, derive_seed(cfg.seed, "data"));
    return make_data_dir(full, build_splits(full, derive_seed(cfg.seed, "split")), {});
}

std::string read_text(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

} // namespace

TEST_SUITE("trainer")
{
    TEST_CASE("zero gradient applies decoupled decay only")
    {
        ParamStore p;
        p.add("layer.weight", Matrix::Constant(2, 2, 3.0));
        p.add("layer.bias", Matrix::Constant(1, 2, 3.0));
        AdamWConfig cfg;
        cfg.weight_decay = 0.1;
        AdamW opt(cfg);
        opt.step(p, 0.01);
        CHECK(p.value("layer.weight") == Matrix::Constant(2, 2, 3.0 * (1.0 - 0.01 * 0.1)));
        CHECK(p.value("layer.bias") == Matrix::Constant(1, 2, 3.0));
    }

    TEST_CASE("first step moves by lr times the gradient sign")
    {
        for (double g : {0.5, -2.0, 1e-3}) {
            ParamStore p;
            p.add("w", Matrix::Zero(1, 1));
            p.grad("w")(0, 0) = g;
            AdamWConfig cfg;
            AdamW opt(cfg);
            opt.step(p, 0.1);
            // m_hat = g, v_hat = g^2 after bias correction.
            const double expected = -0.1 * g / (std::abs(g) + cfg.eps);
            CHECK(std::abs(p.value("w")(0, 0) - expected) <= 1e-15);
        }
    }

    TEST_CASE("constant gradient keeps steps at lr scale")
    {
        ParamStore p;
        p.add("w", Matrix::Zero(1, 2));
        AdamW opt;
        double last = 0.0;
        for (int i = 0; i < 500; ++i) {
            p.grad("w") << 0.3, -7.0;
            last = p.value("w")(0, 0);
            opt.step(p, 0.01);
        }
        CHECK(std::abs((p.value("w")(0, 0) - last) + 0.01) <= 1e-9);
        CHECK(p.value("w")(0, 1) > 0.0);
    }

    TEST_CASE("learning rate schedule")
    {
        LrSchedule s{1e-3, 1e-5, 100, 1000};
        CHECK(lr_at(0, s) == 0.0);
        CHECK(lr_at(50, s) == doctest::Approx(5e-4).epsilon(1e-15));
        CHECK(lr_at(100, s) == 1e-3);
        CHECK(std::abs(lr_at(1000, s) - 1e-5) <= 1e-18);
        CHECK(std::abs(lr_at(550, s) - (1e-5 + 0.5 * (1e-3 - 1e-5))) <= 1e-15);
        for (long t = 1; t <= 1000; ++t) {
            CHECK(std::abs(lr_at(t, s) - lr_at(t - 1, s)) <= 1e-3 / 100.0 + 1e-15);
            if (t > 100) {
                CHECK(lr_at(t, s) <= lr_at(t - 1, s));
            }
        }
        CHECK_THROWS(lr_at(1, LrSchedule{1e-3, 0.0, 10, 5}));
    }

    TEST_CASE("gradient clipping")
    {
        ParamStore p;
        p.add("a", Matrix::Zero(1, 2));
        p.grad("a") << 3.0, 4.0;
        CHECK(clip_grad_norm(p, 10.0) == 5.0);
        CHECK(p.grad("a")(0, 0) == 3.0);
        CHECK(clip_grad_norm(p, 1.0) == 5.0);
        CHECK(std::abs(p.grad("a").norm() - 1.0) <= 1e-15);
    }

    TEST_CASE("curriculum intensity ramps and batches cover the data")
    {
        Rng rng(1);
        for (int e = 0; e < 15; ++e) {
            const auto plan = curriculum_sampler(e, 103, 10, CurriculumMode::CleanToHard, 10, rng);
            CHECK(plan.intensity == doctest::Approx(std::min(1.0, (e + 1) / 10.0)));
            CHECK(plan.batches.size() == 11);
            std::set<std::size_t> seen;
            for (const auto& b : plan.batches) {
                seen.insert(b.begin(), b.end());
            }
            CHECK(seen.size() == 103);
        }
        CHECK(curriculum_sampler(0, 10, 4, CurriculumMode::Uniform, 10, rng).intensity == 1.0);
        CHECK(curriculum_sampler(0, 10, 4, CurriculumMode::CleanToHard, 0, rng).intensity == 1.0);
    }

    TEST_CASE("a toy problem overfits within 200 steps")
    {
        RunConfig cfg = tiny_run();
        cfg.model.fusion_dropout = 0.0;
        auto model = build_model(cfg);
        std::mt19937_64 rng(3);
        std::normal_distribution<double> n(0.0, 1.0);
        ModalityBatch x;
        for (auto m : kModalities) {
            x[index_of(m)] = Matrix::NullaryExpr(12, cfg.model.input_dims[index_of(m)], [&] { return n(rng); });
        }
        std::vector<std::uint32_t> labels;
        for (std::uint32_t i = 0; i < 12; ++i) {
            labels.push_back(i % 6);
        }
        const Matrix targets = smoothed_targets(labels, 6, 0.0);
        LossConfig loss_cfg;
        loss_cfg.label_smoothing = 0.0;
        loss_cfg.loss_heads = {LossHead::Final};
        ParamStore& params = model->params();
        AdamW opt;
        double final_loss = 1e9;
        for (int step = 0; step < 200; ++step) {
            Tape tape = Tape::training(params);
            const auto fwd = model->forward(tape, x);
            const Var loss = focal_loss(fwd.fusion.p_final, targets, 2.0);
            tape.backward(loss);
            final_loss = loss.scalar();
            opt.step(params, 1e-2);
        }
        CHECK(final_loss < 0.1);
    }

    TEST_CASE("training writes logs and restores the best checkpoint")
    {
        const RunConfig cfg = tiny_run();
        const DataDir data = tiny_data(cfg);
        const fs::path out = fs::temp_directory_path() / "trifuse_unit_train";
        fs::remove_all(out);
        auto model = build_model(cfg);
        TrainOptions opts;
        opts.out_dir = out;
        const auto result = train(*model, data, cfg, opts);
        CHECK(result.metrics.size() == 3);
        CHECK(result.best_epoch >= 0);
        CHECK(fs::exists(out / "metrics.jsonl"));
        CHECK(fs::exists(out / "config.json"));
        REQUIRE(fs::exists(out / "checkpoint.bin"));
        for (const auto& line : result.metrics) {
            CHECK(line.contains("loss_heads"));
            CHECK(line["val"].size() == 7);
        }

        RunConfig loaded_cfg;
        auto loaded = load_model(out / "checkpoint.bin", &loaded_cfg);
        CHECK(to_json(loaded_cfg) == to_json(cfg));
        const ModalityBatch x = gather(data.test);
        CHECK(loaded->predict_logits(x) == model->predict_logits(x));
        const EvalReport r = eval_matrix(*model, data.val, data.manifest.multi_session_flags(), {});
        CHECK(r.at(ModalityMask::all()).overall.top1 == result.best_val_top1);
        fs::remove_all(out);
    }

    TEST_CASE("two runs give identical metrics logs")
    {
        const RunConfig cfg = tiny_run();
        const DataDir data = tiny_data(cfg);
        std::array<std::string, 2> logs;
        for (int i = 0; i < 2; ++i) {
            const fs::path out = fs::temp_directory_path() / ("trifuse_unit_det" + std::to_string(i));
            fs::remove_all(out);
            auto model = build_model(cfg);
            TrainOptions opts;
            opts.out_dir = out;
            train(*model, data, cfg, opts);
            logs[static_cast<std::size_t>(i)] = read_text(out / "metrics.jsonl");
            fs::remove_all(out);
        }
        CHECK(!logs[0].empty());
        CHECK(logs[0] == logs[1]);
    }

    TEST_CASE("mismatched data is rejected")
    {
        RunConfig cfg = tiny_run();
        const DataDir data = tiny_data(cfg);
        cfg.model.num_classes = 7;
        cfg.data.num_identities = 7;
        auto model = build_model(cfg);
        CHECK_THROWS(train(*model, data, cfg));
    }
}
