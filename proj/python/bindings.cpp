#include "trifuse/decision.hpp"
#include "trifuse/eval.hpp"
#include "trifuse/losses.hpp"
#include "trifuse/modelcheck.hpp"
#include "trifuse/trainer.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

namespace py = pybind11;
using namespace trifuse;
using nlohmann::json;

namespace {

RunConfig config_from(const std::string& text)
{
    RunConfig cfg = text.empty() ? RunConfig{} : run_config_from_json(json::parse(text));
    apply_seed_override(cfg);
    cfg.validate();
    return cfg;
}

class Model {
public:
    explicit Model(const std::filesystem::path& checkpoint)
        : model_(load_model(checkpoint, &cfg_))
    {
    }

    std::string config() const { return to_json(cfg_).dump(); }

    py::dict predict(const Vector& face, const Vector& gesture, const Vector& voice,
                     const std::string& mask, const std::string& ablate) const
    {
        EmbeddingTriplet sample;
        sample.embeddings = {face, gesture, voice};
        for (auto m : kModalities) {
            if (sample[m].size() == 0) {
                sample.mask.set(m, false);
                sample[m] = Vector::Zero(cfg_.model.input_dims[index_of(m)]);
            }
        }
        const ModalityMask requested = mask.empty() ? ModalityMask::all() : ModalityMask::parse(mask);
        const Prediction p = trifuse::predict(*model_, sample, requested,
                                     cfg_.ablation.merged(AblationFlags::parse(ablate)));
        py::dict out;
        out["ranking"] = p.ranking;
        out["p_final"] = Vector(p.state.p_final.row(0).transpose());
        out["p_conf"] = Vector(p.state.p_conf.row(0).transpose());
        out["p_fusion"] = Vector(p.state.p_fusion.row(0).transpose());
        out["p_ensemble"] = Vector(p.state.p_ensemble.row(0).transpose());
        return out;
    }

    std::string evaluate(const std::filesystem::path& data_dir, const std::string& ablate) const
    {
        const DataDir data = read_data_dir(data_dir);
        return eval_matrix(*model_, data.test, data.manifest.multi_session_flags(),
                           cfg_.ablation.merged(AblationFlags::parse(ablate)), evaluation_masks(),
                           config_hash(cfg_))
            .to_json()
            .dump();
    }

private:
    RunConfig cfg_;
    std::unique_ptr<TrimodalModel> model_;
};

} // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Trimodal face, gesture and voice identification.";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

    m.def("default_config", [] { return to_json(RunConfig{}).dump(); });
    m.def("resolve_config", &config_from, py::arg("config_json") = "");

    m.def("softmax", [](const Vector& x) { return softmax_value(x); });
    m.def("confidence_weighted_fusion",
          py::overload_cast<const Vector&, const Vector&, const Vector&, double, double, double>(
              &confidence_weighted_fusion));
    m.def("ensemble", py::overload_cast<const Vector&, const Vector&>(&ensemble));
    m.def("apply_correction", &apply_correction);
    m.def("focal_loss",
          py::overload_cast<const Vector&, std::uint32_t, double, double>(&focal_loss),
          py::arg("logits"), py::arg("label"), py::arg("gamma") = 2.0, py::arg("smoothing") = 0.0);
    m.def("uncertainty_weighted_total",
          [](const std::vector<double>& losses, const std::vector<double>& log_variances) {
              return uncertainty_weighted_total(losses, log_variances);
          });

    m.def("generate_data",
          [](const std::string& config_json, const std::filesystem::path& out) {
              const RunConfig cfg = config_from(config_json);
              const Dataset full = generate(cfg.data, derive_seed(cfg.seed, "data"));
              const json generator = {{"seed", cfg.seed}, {"synthetic", to_json(cfg.data)}};
              const DataDir dir =
                  make_data_dir(full, build_splits(full, derive_seed(cfg.seed, "split")), generator);
              write_data_dir(out, dir);
              return py::make_tuple(dir.train.size(), dir.val.size(), dir.test.size());
          },
          py::arg("config_json"), py::arg("out"));

    m.def("train",
          [](const std::string& config_json, const std::filesystem::path& data_dir,
             const std::filesystem::path& out) {
              const RunConfig cfg = config_from(config_json);
              const DataDir data = read_data_dir(data_dir);
              std::string report;
              {
                  py::gil_scoped_release release;
                  auto model = build_model(cfg);
                  TrainOptions opts;
                  opts.out_dir = out;
                  train(*model, data, cfg, opts);
                  report = eval_matrix(*model, data.test, data.manifest.multi_session_flags(),
                                       cfg.ablation, evaluation_masks(), config_hash(cfg))
                               .to_json()
                               .dump();
              }
              return report;
          },
          py::arg("config_json"), py::arg("data_dir"), py::arg("out"));

    m.def("grad_check",
          [](std::uint64_t seed, const std::string& module) {
              ModelGradCheckOptions opts;
              opts.seed = seed;
              opts.module = module;
              const auto r = model_grad_check(opts);
              py::dict out;
              out["max_relative_error"] = r.max_relative_error;
              out["checked"] = r.checked;
              out["worst_param"] = r.worst_param;
              return out;
          },
          py::arg("seed") = 0, py::arg("module") = "all");

    py::class_<Model>(m, "Model")
        .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
        .def("config", &Model::config)
        .def("predict", &Model::predict, py::arg("face"), py::arg("gesture"), py::arg("voice"),
             py::arg("mask") = "", py::arg("ablate") = "")
        .def("evaluate", &Model::evaluate, py::arg("data_dir"), py::arg("ablate") = "");
}
