#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include "haemsa/checkpoint.hpp"
#include "haemsa/dataset.hpp"
#include "haemsa/error.hpp"
#include "haemsa/metrics.hpp"
#include "haemsa/objectives.hpp"
#include "haemsa/trainer.hpp"

namespace py = pybind11;
using namespace haemsa;

namespace {

// JSON crosses the boundary as text; the Python side wraps it with json.loads/dumps.
std::string dump(const nlohmann::ordered_json& j) { return j.dump(); }

RunConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = text.empty() ? nlohmann::json::object() : nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    auto cfg = RunConfig::from_json(j);
    cfg.validate();
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Evolutionary multi-task multimodal sentiment analysis";

    auto base = py::register_exception<Error>(m, "HaemsaError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<FormatError>(m, "FormatError", base.ptr());
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<StateError>(m, "StateError", base.ptr());
    py::register_exception<LabelError>(m, "LabelError", base.ptr());
    py::register_exception<ValueError>(m, "ValueError", base.ptr());

    m.def("ablation_modes", [] {
        std::vector<std::string> out;
        for (auto mode : kAllAblations) out.push_back(to_string(mode));
        return out;
    });

    m.def("default_config_json", [] { return dump(RunConfig{}.to_json()); });

    m.def(
        "resolve_config_json", [](const std::string& text) { return dump(parse_config(text).to_json()); },
        py::arg("config_json"));

    m.def(
        "generate_data",
        [](const std::string& out_dir, std::size_t n, double noise_level, std::uint64_t seed) {
            GeneratorSpec spec;
            spec.n = n;
            spec.noise_level = noise_level;
            spec.seed = seed;
            spec.validate();
            const auto split = generate_synthetic(spec);
            save_dataset_dir(split, out_dir);
            return py::dict(py::arg("train") = split.train.size(), py::arg("val") = split.val.size(),
                            py::arg("test") = split.test.size());
        },
        py::arg("out_dir"), py::arg("n") = 2000, py::arg("noise_level") = 0.3, py::arg("seed") = 1);

    m.def(
        "run_experiment_json",
        [](const std::string& config_json) {
            const auto cfg = parse_config(config_json);
            ExperimentResult r;
            {
                py::gil_scoped_release release;
                r = run_experiment(cfg);
            }
            return dump(summary_to_json(cfg, r));
        },
        py::arg("config_json"),
        "Runs every seed of the configuration and returns the metrics summary as JSON text.");

    m.def(
        "evaluate_checkpoint_json",
        [](const std::string& checkpoint, const std::string& data_dir, const std::string& split) {
            const auto ck = load_checkpoint(checkpoint);
            const auto model = model_from_checkpoint(ck);
            const bool from_class7 = ck.meta.value("score_source", "") == "class7_expectation";
            const auto data = load_dataset_dir(data_dir);
            const std::vector<MultimodalSample>* samples = nullptr;
            if (split == "train") samples = &data.train;
            else if (split == "val") samples = &data.val;
            else if (split == "test") samples = &data.test;
            else throw ConfigError("split must be train, val or test, got '" + split + "'");
            return dump(evaluate_metrics(model, *samples, from_class7).to_json());
        },
        py::arg("checkpoint"), py::arg("data_dir"), py::arg("split") = "test");

    m.def(
        "evaluate_metrics_json",
        [](const std::vector<double>& score_preds, const std::vector<double>& score_labels,
           const std::vector<int>& class_preds, const std::vector<int>& class_labels, int num_classes) {
            return dump(evaluate_metrics(score_preds, score_labels, class_preds, class_labels, num_classes).to_json());
        },
        py::arg("score_preds"), py::arg("score_labels"), py::arg("class_preds"), py::arg("class_labels"),
        py::arg("num_classes"));

    m.def("bin_sentiment", &bin_sentiment, py::arg("score"), py::arg("bins"));

    m.def(
        "kl_divergence",
        [](const std::vector<double>& p, const std::vector<double>& q, double eps) { return kl_divergence(p, q, eps); },
        py::arg("p"), py::arg("q"), py::arg("eps") = 1e-8);
}
