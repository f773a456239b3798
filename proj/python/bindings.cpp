#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fusionnet/config.hpp"
#include "fusionnet/errors.hpp"
#include "fusionnet/gradcheck.hpp"
#include "fusionnet/metrics.hpp"
#include "fusionnet/trainer.hpp"

namespace py = pybind11;
using namespace fusionnet;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor<double> to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor<double>(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor<double>& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.data(), t.data() + t.size(), out.mutable_data());
    return out;
}

Image to_image(const Array& a) {
    return to_tensor(a).cast<float>();
}

Array from_image(const Image& img) {
    return to_array(img.cast<double>());
}

py::dict report_dict(const MetricsReport& r) {
    py::dict d;
    d["tp"] = r.cm.tp;
    d["tn"] = r.cm.tn;
    d["fp"] = r.cm.fp;
    d["fn"] = r.cm.fn;
    d["accuracy"] = r.accuracy;
    d["sensitivity"] = r.sensitivity;
    d["specificity"] = r.specificity;
    d["loss"] = r.loss;
    d["n"] = r.n;
    return d;
}

Padding parse_padding(const std::string& s) {
    if (s == "same") return Padding::same;
    if (s == "valid") return Padding::valid;
    throw_error(ErrorKind::config, "padding must be 'same' or 'valid'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Two-branch fused CNN classifier core";
    m.attr("__version__") = "0.1.0";

    static py::exception<Error> error(m, "FusionError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) {
                std::rethrow_exception(p);
            }
        } catch (const Error& e) {
            py::object kind = py::str(std::string(to_string(e.kind())));
            PyErr_SetObject(error.ptr(), py::make_tuple(kind, e.what()).ptr());
        }
    });

    m.def("matmul", [](const Array& a, const Array& b) { return to_array(matmul(to_tensor(a), to_tensor(b))); });
    m.def(
        "conv2d",
        [](const Array& x, const Array& w, const Array& b, std::size_t stride, const std::string& padding) {
            return to_array(conv2d(to_tensor(x), to_tensor(w), to_tensor(b), stride, parse_padding(padding)));
        },
        py::arg("input"), py::arg("weights"), py::arg("bias"), py::arg("stride") = 1, py::arg("padding") = "same");
    m.def("relu", [](const Array& x) { return to_array(relu(to_tensor(x))); });
    m.def("maxpool2", [](const Array& x) { return to_array(maxpool2(to_tensor(x)).output); });
    m.def("global_avg_pool", [](const Array& x) { return to_array(global_avg_pool(to_tensor(x))); });
    m.def("softmax_cross_entropy", [](const Array& logits, std::vector<int> labels) {
        const auto r = softmax_cross_entropy(to_tensor(logits), std::span<const int>(labels));
        return py::make_tuple(r.loss, to_array(r.probs));
    });

    m.def(
        "confusion",
        [](std::vector<int> predicted, std::vector<int> truth) {
            const ConfusionMatrix cm = confusion(predicted, truth);
            return report_dict(make_report(cm, 0.0));
        },
        py::arg("predicted"), py::arg("truth"));

    m.def("center_crop", [](const Array& img, std::size_t h, std::size_t w) {
        return from_image(center_crop(to_image(img), h, w));
    });
    m.def("bicubic_resize", [](const Array& img, std::size_t h, std::size_t w) {
        return from_image(bicubic_resize(to_image(img), h, w));
    });
    m.def(
        "stratified_split",
        [](std::vector<int> labels, std::uint64_t seed) {
            SplitConfig cfg;
            cfg.seed = seed;
            std::vector<std::string> out;
            for (Split s : stratified_split(labels, cfg)) {
                out.emplace_back(to_string(s));
            }
            return out;
        },
        py::arg("labels"), py::arg("seed") = 0);

    m.def("synth_generate", &synth_generate, py::arg("out"), py::arg("per_class"), py::arg("size") = 64,
          py::arg("seed") = 0);

    m.def(
        "gradcheck",
        [](std::uint64_t seed) {
            const GradcheckReport report = cmd_gradcheck({seed});
            py::list items;
            for (const GradcheckItem& item : report.items) {
                py::dict d;
                d["name"] = item.name;
                d["max_relative_error"] = item.max_relative_error;
                d["passed"] = item.passed;
                items.append(d);
            }
            return items;
        },
        py::arg("seed") = 0);

    m.def("default_config", [] { return to_text(RunConfig{}); });
    m.def(
        "train",
        [](const std::string& config_text, const std::filesystem::path& data, const std::filesystem::path& out,
           bool single_thread) {
            const RunConfig config = parse_config(config_text);
            TrainOptions options;
            options.data = data;
            options.out = out;
            options.single_thread = single_thread;
            TrainResult result;
            {
                py::gil_scoped_release release;
                result = cmd_train(config, options);
            }
            py::dict d;
            d["test"] = report_dict(result.test);
            d["best_epoch"] = result.best_epoch;
            d["log"] = result.log;
            return d;
        },
        py::arg("config"), py::arg("data"), py::arg("out"), py::arg("single_thread") = true);
    m.def(
        "evaluate",
        [](const std::filesystem::path& ckpt, const std::filesystem::path& data, const std::string& split) {
            const EvalResult r = cmd_eval(ckpt, data, parse_split(split));
            py::dict d = report_dict(r.report);
            d["row"] = r.row;
            return d;
        },
        py::arg("checkpoint"), py::arg("data"), py::arg("split") = "test");
}
