// trifuse command-line driver.

#include "trifuse/config.hpp"
#include "trifuse/data.hpp"
#include "trifuse/eval.hpp"
#include "trifuse/modelcheck.hpp"
#include "trifuse/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace trifuse;

namespace {

RunConfig resolve_config(const std::string& path)
{
    RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
    apply_seed_override(cfg);
    cfg.validate();
    return cfg;
}

void write_json(const fs::path& path, const json& j)
{
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

void require_matching_data(const RunConfig& cfg, const DataManifest& manifest)
{
    if (manifest.num_identities != static_cast<std::size_t>(cfg.model.num_classes)) {
        throw ConfigError("data has " + std::to_string(manifest.num_identities) +
                          " identities but the config expects " +
                          std::to_string(cfg.model.num_classes));
    }
    for (auto m : kModalities) {
        if (manifest.dims[index_of(m)] != cfg.model.input_dims[index_of(m)]) {
            throw ConfigError(std::string(modality_name(m)) + " dimension " +
                              std::to_string(manifest.dims[index_of(m)]) +
                              " in data differs from config " +
                              std::to_string(cfg.model.input_dims[index_of(m)]));
        }
    }
}

int cmd_gen_data(const std::string& config, const fs::path& out)
{
    const RunConfig cfg = resolve_config(config);
    const Dataset full = generate(cfg.data, derive_seed(cfg.seed, "data"));
    const SplitManifest splits = build_splits(full, derive_seed(cfg.seed, "split"));
    const json generator = {{"seed", cfg.seed}, {"synthetic", to_json(cfg.data)}};
    const DataDir dir = make_data_dir(full, splits, generator);
    write_data_dir(out, dir);
    std::cout << "wrote " << dir.train.size() << " train, " << dir.val.size() << " val, "
              << dir.test.size() << " test samples for " << full.num_identities
              << " identities to " << out.string() << "\n";
    return 0;
}

int cmd_train(const std::string& config, const fs::path& data_dir, const fs::path& out, bool quiet)
{
    const RunConfig cfg = resolve_config(config);
    const DataDir data = read_data_dir(data_dir);
    require_matching_data(cfg, data.manifest);
    auto model = build_model(cfg);
    TrainOptions opts;
    opts.out_dir = out;
    opts.progress = quiet ? nullptr : &std::cout;
    const auto result = train(*model, data, cfg, opts);
    const EvalReport report = eval_matrix(*model, data.test, data.manifest.multi_session_flags(),
                                          cfg.ablation, evaluation_masks(), config_hash(cfg));
    write_json(out / "test_report.json", report.to_json());
    std::cout << "best epoch " << result.best_epoch + 1 << " (val trimodal top1 "
              << result.best_val_top1 << ")\n"
              << report.table();
    return 0;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, const std::string& mask,
             const std::string& ablate, const std::string& format, const fs::path& out)
{
    RunConfig cfg;
    auto model = load_model(checkpoint, &cfg);
    const DataDir data = read_data_dir(data_dir);
    require_matching_data(cfg, data.manifest);
    const AblationFlags flags = cfg.ablation.merged(AblationFlags::parse(ablate));
    std::vector<ModalityMask> masks;
    if (mask.empty()) {
        masks.assign(evaluation_masks().begin(), evaluation_masks().end());
    } else {
        masks.push_back(ModalityMask::parse(mask));
    }
    const EvalReport report = eval_matrix(*model, data.test, data.manifest.multi_session_flags(),
                                          flags, masks, config_hash(cfg));
    if (!out.empty()) {
        fs::create_directories(out);
        write_json(out / "eval_report.json", report.to_json());
    }
    if (format == "json") {
        std::cout << report.to_json().dump(2) << "\n";
    } else {
        std::cout << report.table();
    }
    return 0;
}

int cmd_ablate(const std::string& config, const fs::path& data_dir, const std::string& mode,
               const fs::path& out, bool quiet)
{
    const RunConfig base = resolve_config(config);
    const DataDir data = read_data_dir(data_dir);
    require_matching_data(base, data.manifest);
    const LadderMode ladder_mode = parse_ladder_mode(mode);
    const auto multi = data.manifest.multi_session_flags();
    const AblationRunner run = [&](const AblationFlags& flags) {
        RunConfig cfg = base;
        cfg.ablation = base.ablation.merged(flags);
        auto model = build_model(cfg);
        TrainOptions opts;
        if (!out.empty()) {
            opts.out_dir = out / cfg.ablation.label();
        }
        if (!quiet) {
            std::cout << "== " << cfg.ablation.label() << "\n" << std::flush;
        }
        train(*model, data, cfg, opts);
        return eval_matrix(*model, data.test, multi, cfg.ablation, evaluation_masks(),
                           config_hash(cfg));
    };
    const LadderResult ladder = ablation_ladder(run, ladder_mode);
    if (!out.empty()) {
        fs::create_directories(out);
        write_json(out / "ladder.json", ladder.to_json());
    }
    std::cout << ladder.table();
    return 0;
}

int cmd_grad_check(const std::string& module, int seeds, std::uint64_t first_seed, bool full_size,
                   std::size_t max_elements, double tolerance, double floor)
{
    const auto start = std::chrono::steady_clock::now();
    bool ok = true;
    double worst = 0.0;
    for (int i = 0; i < seeds; ++i) {
        ModelGradCheckOptions opts;
        opts.seed = first_seed + static_cast<std::uint64_t>(i);
        opts.module = module;
        opts.full_size = full_size;
        opts.max_elements_per_param = max_elements;
        opts.denominator_floor = floor;
        const auto r = model_grad_check(opts);
        const bool pass = r.passed(tolerance);
        ok = ok && pass;
        worst = std::max(worst, r.max_relative_error);
        std::printf("seed %llu  checked %zu  skipped %zu  max rel err %.3e at %s[%lld] "
                    "(analytic %.6e, numeric %.6e)  %s\n",
                    static_cast<unsigned long long>(opts.seed), r.checked, r.skipped_at_kinks,
                    r.max_relative_error, r.worst_param.c_str(),
                    static_cast<long long>(r.worst_index), r.worst_analytic, r.worst_numeric,
                    pass ? "ok" : "FAIL");
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("grad-check %s: %d seeds, worst relative error %.3e (tolerance %.1e), %.1f s\n",
                ok ? "passed" : "FAILED", seeds, worst, tolerance, secs);
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Trimodal face/gesture/voice identification"};
    app.require_subcommand(0, 1);
    bool print_config = false;
    std::string print_config_from;
    app.add_flag("--print-config", print_config, "Print the effective configuration as JSON");
    app.add_option("--config", print_config_from, "Config used with --print-config")
        ->check(CLI::ExistingFile);

    std::string config;
    fs::path out;
    fs::path data_dir;
    bool quiet = false;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    gen->add_option("--config", config, "Run config JSON")->check(CLI::ExistingFile);
    gen->add_option("--out", out, "Output directory")->required();

    auto* tr = app.add_subcommand("train", "Train a model");
    tr->add_option("--config", config, "Run config JSON")->check(CLI::ExistingFile);
    tr->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    tr->add_option("--out", out, "Run directory")->required();
    tr->add_flag("--quiet", quiet, "No per-epoch progress");

    fs::path checkpoint;
    std::string mask;
    std::string ablate;
    std::string format = "table";
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--mask", mask, "Available modalities, e.g. face,voice");
    ev->add_option("--ablate", ablate, "Bypassed modules, e.g. no_confidence,no_correction");
    ev->add_option("--format", format, "table or json")->check(CLI::IsMember({"table", "json"}));
    ev->add_option("--out", out, "Also write eval_report.json here");

    std::string mode = "cumulative";
    auto* ab = app.add_subcommand("ablate", "Train and evaluate the ablation ladder");
    ab->add_option("--config", config, "Run config JSON")->check(CLI::ExistingFile);
    ab->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    ab->add_option("--mode", mode, "cumulative or single")
        ->check(CLI::IsMember({"cumulative", "single"}));
    ab->add_option("--out", out, "Directory for per-row runs and ladder.json");
    ab->add_flag("--quiet", quiet, "Less output");

    std::string module = "all";
    int seeds = 20;
    std::uint64_t first_seed = 1;
    bool full_size = false;
    std::size_t max_elements = 0;
    double tolerance = 1e-4;
    double floor = 0.0;
    auto* gc = app.add_subcommand("grad-check", "Verify gradients against finite differences");
    gc->add_option("--module", module, "all, pathways, crossattn, decision or losses")
        ->check(CLI::IsMember(grad_check_modules()));
    gc->add_option("--seeds", seeds, "Number of random models")->check(CLI::PositiveNumber);
    gc->add_option("--first-seed", first_seed, "Seed of the first model");
    gc->add_flag("--full-size", full_size, "Use default layer widths (sample elements)");
    gc->add_option("--max-elements", max_elements, "Elements per parameter, 0 for all");
    gc->add_option("--tolerance", tolerance, "Maximum relative error");
    gc->add_option("--floor", floor,
                   "Denominator floor of the relative error (default 1e-6, 1e-5 with --full-size)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (print_config) {
            std::cout << to_json(resolve_config(print_config_from)).dump(2) << "\n";
            return 0;
        }
        if (gen->parsed()) {
            return cmd_gen_data(config, out);
        }
        if (tr->parsed()) {
            return cmd_train(config, data_dir, out, quiet);
        }
        if (ev->parsed()) {
            return cmd_eval(checkpoint, data_dir, mask, ablate, format, out);
        }
        if (ab->parsed()) {
            return cmd_ablate(config, data_dir, mode, out, quiet);
        }
        if (gc->parsed()) {
            if (full_size && max_elements == 0) {
                max_elements = 8;
            }
            if (floor <= 0.0) {
                floor = full_size ? 1e-5 : 1e-6;
            }
            return cmd_grad_check(module, seeds, first_seed, full_size, max_elements, tolerance,
                                  floor);
        }
        std::cout << app.help();
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
