#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "sdvae/checkpoint.hpp"
#include "sdvae/cli.hpp"
#include "sdvae/config.hpp"
#include "sdvae/data.hpp"
#include "sdvae/errors.hpp"
#include "sdvae/exports.hpp"
#include "sdvae/gradcheck_suite.hpp"
#include "sdvae/model.hpp"
#include "sdvae/trainer.hpp"

namespace py = pybind11;
using namespace sdvae;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Labels = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    if (a.ndim() != 2) throw ShapeError("expected a 2-D array, got " + std::to_string(a.ndim()) + " dimensions");
    const auto rows = static_cast<std::size_t>(a.shape(0)), cols = static_cast<std::size_t>(a.shape(1));
    return Tensor(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const Tensor& t) {
    Array out({t.rows(), t.cols()});
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

py::array_t<std::int64_t> to_labels(const std::vector<std::size_t>& v) {
    py::array_t<std::int64_t> out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

Dataset to_dataset(const Array& x, const Labels& y, std::size_t classes, const std::string& name) {
    Dataset d;
    d.name = name;
    d.images = to_tensor(x);
    if (y.ndim() != 1) throw ShapeError("labels must be 1-D");
    for (py::ssize_t i = 0; i < y.shape(0); ++i) {
        if (y.data()[i] < 0) throw ValidationError(name + ": negative label");
        d.labels.push_back(static_cast<std::size_t>(y.data()[i]));
    }
    d.classes = classes;
    d.image_rows = 1;
    d.image_cols = d.dim_x();
    d.validate();
    return d;
}

py::tuple dataset_tuple(const Dataset& d) { return py::make_tuple(to_array(d.images), to_labels(d.labels)); }

py::dict metrics_dict(const MetricsRecord& m) {
    py::dict d;
    d["epoch"] = m.epoch;
    d["re"] = m.re;
    d["kl_u"] = m.kl_u;
    d["kl_v"] = m.kl_v;
    d["entropy"] = m.entropy;
    d["elbo"] = m.elbo;
    d["loss"] = m.loss;
    d["train_err"] = m.train_err;
    d["test_err"] = m.test_err;
    d["seconds"] = m.seconds;
    return d;
}

VDecode parse_v_decode(const std::string& s) {
    if (s == "expected") return VDecode::Expected;
    if (s == "sample") return VDecode::Sample;
    throw ConfigError("v_decode", "expected 'expected' or 'sample', got '" + s + "'");
}

}  // namespace

PYBIND11_MODULE(_sdvae, m) {
    m.doc() = "Semi-supervised disentangled VAE core";

    // Later registrations are tried first, so the base class goes first.
    auto& base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    auto& io = py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<ParseError>(m, "ParseError", io.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

    py::class_<TrainingConfig>(m, "Config")
        .def(py::init<>())
        .def_static("from_text", [](const std::string& text) { return parse_config(text); })
        .def_static("load", [](const std::string& name_or_path) { return load_config(resolve_config_path(name_or_path)); })
        .def("set", [](TrainingConfig& c, const std::string& key, const std::string& value) { set_config_value(c, key, value); })
        .def("to_text", &config_to_text)
        .def("validate", &TrainingConfig::validate)
        .def_property_readonly_static("keys", [](py::object) { return config_keys(); })
        .def("__repr__", [](const TrainingConfig& c) { return "Config(\n" + config_to_text(c) + ")"; });

    py::class_<ModelParams>(m, "Model")
        .def_static("load", [](const std::string& path) { return load_checkpoint(path); })
        .def("save", [](const ModelParams& p, const std::string& path) { save_checkpoint(p, path); })
        .def_property_readonly("dim_x", [](const ModelParams& p) { return p.config.dim_x; })
        .def_property_readonly("dim_u", [](const ModelParams& p) { return p.config.dim_u; })
        .def_property_readonly("classes", [](const ModelParams& p) { return p.config.classes; })
        .def("predict", [](const ModelParams& p, const Array& x) { return to_labels(predict(p, to_tensor(x))); })
        .def("latents",
             [](const ModelParams& p, const Array& x) {
                 const LatentSummary s = infer_latents(p, to_tensor(x));
                 return py::make_tuple(to_array(s.v_probs), to_array(s.u_mean));
             },
             "(v_probs, u_mean)")
        .def("reconstruct",
             [](const ModelParams& p, const Array& x, const std::string& mask, const std::string& v_decode) {
                 const Reconstruction r = reconstruct(p, to_tensor(x), parse_latent_mask(mask), parse_v_decode(v_decode));
                 return py::make_tuple(to_array(r.pixel_means), to_array(r.loglik));
             },
             py::arg("x"), py::arg("mask") = "none", py::arg("v_decode") = "expected", "(pixel_means, loglik)")
        .def("named_tensors", [](ModelParams& p) {
            py::dict d;
            for (const auto& [name, t] : p.named_tensors()) d[py::str(name)] = to_array(*t);
            return d;
        });

    m.def(
        "train",
        [](const TrainingConfig& c, const Array& x, const Labels& y, std::optional<Array> test_x,
           std::optional<Labels> test_y) {
            const Dataset train_data = to_dataset(x, y, c.classes, "train");
            std::optional<Dataset> test;
            if (test_x && test_y) test = to_dataset(*test_x, *test_y, c.classes, "test");
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = train(c, train_data, test ? &*test : nullptr);
            }
            py::list metrics;
            for (const auto& rec : r.metrics) metrics.append(metrics_dict(rec));
            return py::make_tuple(std::move(r.params), metrics);
        },
        py::arg("config"), py::arg("x"), py::arg("y"), py::arg("test_x") = py::none(), py::arg("test_y") = py::none(),
        "Train on (x, y); returns (Model, per-epoch metrics). Only config.labeled rows keep their labels.");

    m.def(
        "evaluate",
        [](const ModelParams& p, const Array& x, const Labels& y, const std::string& v_decode) {
            const MetricsRecord r = evaluate(p, to_dataset(x, y, p.config.classes, "eval"), parse_v_decode(v_decode));
            return py::make_tuple(r.test_err, r.re);
        },
        py::arg("model"), py::arg("x"), py::arg("y"), py::arg("v_decode") = "expected", "(error, mean reconstruction log-lik)");

    m.def(
        "synthetic",
        [](std::size_t classes, std::size_t side, double corruption, std::size_t train_count, std::size_t test_count,
           std::uint64_t seed) {
            SyntheticSpec s;
            s.classes = classes;
            s.side = side;
            s.corruption = corruption;
            s.train_count = train_count;
            s.test_count = test_count;
            s.seed = seed;
            const SyntheticData d = make_synthetic(s);
            return py::make_tuple(dataset_tuple(d.train), dataset_tuple(d.test));
        },
        py::arg("classes") = 4, py::arg("side") = 8, py::arg("corruption") = 0.1, py::arg("train_count") = 2000,
        py::arg("test_count") = 500, py::arg("seed") = 1, "((train_x, train_y), (test_x, test_y))");

    m.def(
        "load_idx", [](const std::string& images, const std::string& labels) { return dataset_tuple(load_idx(images, labels)); },
        py::arg("images"), py::arg("labels"));

    m.def(
        "gradcheck",
        [](std::uint64_t seed, std::size_t trials) {
            const GradCheckSuiteResult r = run_gradcheck_suite(seed, trials);
            py::dict entries;
            for (const auto& e : r.entries) entries[py::str(e.name)] = e.report.max_rel_error;
            return py::make_tuple(r.max_rel_error, entries);
        },
        py::arg("seed") = 1, py::arg("trials") = 5, "(max relative error, per-check errors)");

    m.def(
        "cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run the command-line front end in-process; returns (exit code, stdout, stderr).");
}
