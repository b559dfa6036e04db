#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "flats/cli.hpp"
#include "flats/errors.hpp"
#include "flats/eval.hpp"

namespace py = pybind11;
using namespace flats;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_array(const FloatArray& a) {
    Tensor t;
    t.shape.resize(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) t.shape[i] = static_cast<int>(a.shape(i));
    t.data.assign(a.data(), a.data() + a.size());
    return t;
}

py::array_t<float> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<float> a(shape);
    std::copy(t.data.begin(), t.data.end(), a.mutable_data());
    return a;
}

std::vector<int> labels_from_any(const py::object& labels) {
    return labels.cast<std::vector<int>>();
}

LabeledDataset dataset_from_arrays(const FloatArray& images, const py::object& labels) {
    LabeledDataset ds;
    ds.images = tensor_from_array(images);
    ds.labels = labels_from_any(labels);
    int top = 0;
    for (int y : ds.labels) top = std::max(top, y);
    ds.classes = top + 1;
    validate_dataset(ds);
    return ds;
}

py::list params_to_py(const ParameterSet& p) {
    py::list out;
    for (const auto& [name, tensor] : p.entries) out.append(py::make_tuple(name, array_from_tensor(tensor)));
    return out;
}

ParameterSet params_from_py(const py::list& entries) {
    ParameterSet p;
    for (const auto& item : entries) {
        auto pair = item.cast<py::tuple>();
        p.add(pair[0].cast<std::string>(), tensor_from_array(pair[1].cast<FloatArray>()));
    }
    return p;
}

ExperimentConfig config_from_dict(const py::dict& d) {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& [key, value] : d) overrides.emplace_back(key.cast<std::string>(), py::str(value).cast<std::string>());
    ExperimentConfig cfg = parse_config(std::nullopt, overrides);
    validate_config(cfg);
    return cfg;
}

py::dict record_to_py(const RoundRecord& rec) {
    py::dict out;
    out["round"] = rec.round;
    out["selected"] = rec.selected;
    out["adversarial"] = rec.adversarial;
    out["client_losses"] = rec.client_losses;
    py::list evals;
    for (const auto& ev : rec.evals) {
        py::dict e;
        e["test_set"] = tdt_name(ev.test_set);
        e["mode"] = eval_mode_name(ev.mode);
        e["clean_accuracy"] = ev.clean_accuracy;
        py::dict robust;
        for (const auto& [name, value] : ev.robust) robust[py::str(name)] = value;
        e["robust"] = robust;
        evals.append(e);
    }
    out["evals"] = evals;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "federated adversarial training simulator core";

    py::register_exception<ConfigError>(m, "FlatsConfigError", PyExc_ValueError);
    py::register_exception<InputError>(m, "FlatsInputError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FlatsFormatError", PyExc_ValueError);
    py::register_exception<IoError>(m, "FlatsIoError", PyExc_OSError);

    py::class_<Model>(m, "Model")
        .def_readonly("classes", &Model::classes)
        .def_property_readonly("input_shape",
                               [](const Model& mm) {
                                   return py::make_tuple(mm.in_channels, mm.in_height, mm.in_width);
                               })
        .def("forward",
             [](const Model& mm, const FloatArray& x) { return array_from_tensor(forward(mm, tensor_from_array(x))); })
        .def("parameters", [](const Model& mm) { return params_to_py(mm.params); })
        .def("set_parameters", [](Model& mm, const py::list& entries) {
            ParameterSet p = params_from_py(entries);
            if (!p.compatible_with(mm.params)) throw InputError("parameter list does not match the model");
            mm.params = std::move(p);
        })
        .def("save", [](const Model& mm, const std::string& path) { save_params(mm.params, path); })
        .def("load", [](Model& mm, const std::string& path) {
            ParameterSet p = load_params(path);
            if (!p.compatible_with(mm.params)) throw InputError("checkpoint does not match the model");
            mm.params = std::move(p);
        });

    m.def(
        "make_cnn",
        [](int conv1, int conv2, int hidden, int classes, int channels, int height, int width, uint64_t seed) {
            return make_model(small_cnn(conv1, conv2, hidden, classes), channels, height, width, classes, seed);
        },
        py::arg("conv1") = 8, py::arg("conv2") = 16, py::arg("hidden") = 64, py::arg("classes") = 10,
        py::arg("channels") = 1, py::arg("height") = 32, py::arg("width") = 32, py::arg("seed") = 1);

    m.def(
        "make_mlp",
        [](int hidden, int classes, int channels, int height, int width, uint64_t seed) {
            return make_model(small_mlp(hidden, classes), channels, height, width, classes, seed);
        },
        py::arg("hidden") = 128, py::arg("classes") = 10, py::arg("channels") = 1, py::arg("height") = 32,
        py::arg("width") = 32, py::arg("seed") = 1);

    m.def("cross_entropy", [](const FloatArray& logits, const py::object& labels) {
        return cross_entropy(tensor_from_array(logits), labels_from_any(labels));
    });

    m.def("input_gradient", [](const Model& mm, const FloatArray& x, const py::object& labels) {
        return array_from_tensor(input_gradient(mm, tensor_from_array(x), labels_from_any(labels)));
    });

    m.def(
        "fgsm",
        [](const Model& mm, const FloatArray& x, const py::object& labels, float epsilon) {
            GradientOracle oracle(mm);
            return array_from_tensor(fgsm(oracle, tensor_from_array(x), labels_from_any(labels), epsilon));
        },
        py::arg("model"), py::arg("x"), py::arg("labels"), py::arg("epsilon") = 8.0f / 255.0f);

    m.def(
        "ffgsm",
        [](const Model& mm, const FloatArray& x, const py::object& labels, float epsilon, float step_size,
           uint64_t seed) {
            GradientOracle oracle(mm);
            Rng rng(seed);
            return array_from_tensor(
                ffgsm(oracle, tensor_from_array(x), labels_from_any(labels), epsilon, step_size, rng));
        },
        py::arg("model"), py::arg("x"), py::arg("labels"), py::arg("epsilon") = 8.0f / 255.0f,
        py::arg("step_size") = 10.0f / 255.0f, py::arg("seed") = 1);

    m.def(
        "square_attack",
        [](const Model& mm, const FloatArray& x, int label, float epsilon, int n_queries, int n_restarts,
           const std::string& loss, uint64_t seed) {
            PredictionOracle oracle(mm);
            AttackConfig cfg = AttackConfig::square(epsilon, n_queries, n_restarts,
                                                    loss == "margin" ? AttackConfig::SquareLoss::Margin
                                                                     : AttackConfig::SquareLoss::CrossEntropy);
            Rng rng(seed);
            SquareResult res = square_attack(oracle, tensor_from_array(x), label, cfg, rng);
            return py::make_tuple(array_from_tensor(res.x_adv), res.success, res.queries_used);
        },
        py::arg("model"), py::arg("x"), py::arg("label"), py::arg("epsilon") = 8.0f / 255.0f,
        py::arg("n_queries") = 2000, py::arg("n_restarts") = 1, py::arg("loss") = "ce", py::arg("seed") = 1);

    m.def(
        "synth_dataset",
        [](uint64_t seed, int per_class, int classes, int channels, int height, int width) {
            LabeledDataset ds = synth_dataset(seed, per_class, classes, channels, height, width);
            return py::make_tuple(array_from_tensor(ds.images), ds.labels);
        },
        py::arg("seed") = 1, py::arg("per_class") = 20, py::arg("classes") = 10, py::arg("channels") = 1,
        py::arg("height") = 32, py::arg("width") = 32);

    m.def("load_idx", [](const std::string& images, const std::string& labels) {
        LabeledDataset ds = load_idx(images, labels);
        return py::make_tuple(array_from_tensor(ds.images), ds.labels);
    });

    m.def(
        "partition_iid",
        [](const FloatArray& images, const py::object& labels, int clients, uint64_t seed) {
            return partition_iid(dataset_from_arrays(images, labels), clients, seed).assignments;
        },
        py::arg("images"), py::arg("labels"), py::arg("clients"), py::arg("seed") = 1);

    m.def(
        "partition_noniid",
        [](const FloatArray& images, const py::object& labels, int clients, uint64_t seed, double concentration,
           double size_spread) {
            return partition_noniid(dataset_from_arrays(images, labels), clients, seed, concentration, size_spread)
                .assignments;
        },
        py::arg("images"), py::arg("labels"), py::arg("clients"), py::arg("seed") = 1,
        py::arg("concentration") = 0.5, py::arg("size_spread") = 0.5);

    m.def("apply_brightness", [](const FloatArray& images, float ratio) {
        return array_from_tensor(apply_brightness(tensor_from_array(images), ratio));
    });
    m.def("degrade_pixels", [](const FloatArray& images, int factor) {
        return array_from_tensor(degrade_pixels(tensor_from_array(images), factor));
    });
    m.def("occlude_eyes", [](const FloatArray& images, float fraction) {
        return array_from_tensor(occlude_eyes(tensor_from_array(images), fraction));
    });

    m.def("fedavg", [](const py::list& updates) {
        std::vector<LocalUpdate> ups;
        for (const auto& item : updates) {
            auto pair = item.cast<py::tuple>();
            LocalUpdate u;
            u.params = params_from_py(pair[0].cast<py::list>());
            u.sample_count = pair[1].cast<int>();
            ups.push_back(std::move(u));
        }
        return params_to_py(fedavg(ups));
    });

    m.def(
        "accuracy",
        [](const Model& mm, const FloatArray& images, const py::object& labels, int batch) {
            return accuracy(mm, dataset_from_arrays(images, labels), batch);
        },
        py::arg("model"), py::arg("images"), py::arg("labels"), py::arg("batch") = 32);

    m.def(
        "robust_accuracy",
        [](const Model& mm, const FloatArray& images, const py::object& labels, const py::dict& attack,
           uint64_t seed, int sample_cap, int batch) {
            ExperimentConfig cfg = config_from_dict(attack);
            AttackConfig ac = make_attack(cfg, cfg.attack);
            return robust_accuracy(mm, dataset_from_arrays(images, labels), ac, nullptr, seed, sample_cap, batch);
        },
        py::arg("model"), py::arg("images"), py::arg("labels"), py::arg("attack"), py::arg("seed") = 1,
        py::arg("sample_cap") = 0, py::arg("batch") = 32);

    // full experiment from a config dict (same keys as the CLI); runs entirely
    // in memory, nothing is written to disk
    m.def("run_experiment", [](const py::dict& config) {
        ExperimentConfig cfg = config_from_dict(config);
        ExperimentSetup s = build_setup(cfg);
        ExperimentResult result = run_experiment(to_fed_config(cfg), s.model, s.clients, s.eval_job);
        py::list records;
        for (const auto& rec : result.records) records.append(record_to_py(rec));
        py::dict out;
        out["records"] = records;
        out["final_params"] = params_to_py(result.final_params);
        return out;
    });

    m.def("config_keys", []() { return config_keys(); });
    m.def("default_config", []() {
        py::dict d;
        ExperimentConfig cfg;
        std::string rendered = render_config(cfg);
        size_t pos = 0;
        while (pos < rendered.size()) {
            size_t nl = rendered.find('\n', pos);
            std::string line = rendered.substr(pos, nl - pos);
            size_t eq = line.find('=');
            d[py::str(line.substr(0, eq))] = line.substr(eq + 1);
            pos = nl + 1;
        }
        return d;
    });
}
