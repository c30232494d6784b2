// Python bindings for the main operations: tensors, presets, complexity
// analysis, the MBA pipeline, gradient certification, training, and
// Grad-CAM.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "embanet/gradcheck.hpp"
#include "embanet/spec_io.hpp"
#include "embanet/train.hpp"

namespace py = pybind11;
using namespace embanet;

namespace {

Tensor4<float> from_numpy(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 4) throw ShapeMismatch("expected a 4-d array (n,c,h,w)");
    Tensor4<float> t(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)),
                     static_cast<int>(a.shape(2)), static_cast<int>(a.shape(3)));
    std::copy(a.data(), a.data() + t.size(), t.data.begin());
    return t;
}

py::array_t<float> to_numpy(const Tensor4<float>& t) {
    py::array_t<float> a({t.n, t.c, t.h, t.w});
    std::copy(t.data.begin(), t.data.end(), a.mutable_data());
    return a;
}

MBCConfig make_config(const std::string& op, int s, const std::vector<int>& groups) {
    MBCConfig cfg = MBCConfig::auto_config(
        op == "multiplex" ? MBCOperator::Multiplex : MBCOperator::Split, s);
    if (!groups.empty()) cfg.nominal_groups = groups;
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_embanet_core, m) {
    m.doc() = "multi-branch attention network toolkit (C++ core)";

    py::register_exception<Error>(m, "EmbanetError");

    m.def("preset_names", &preset_names);
    m.def("derive_group_size", &derive_group_size, py::arg("kernel"));
    m.def("effective_groups", &effective_groups, py::arg("nominal"), py::arg("c_in"),
          py::arg("c_out"));

    m.def(
        "analyze",
        [](const std::string& preset_name, int c, int h, int w, unsigned seed) {
            Model<float> model(preset(preset_name), seed);
            auto rep = model.count_complexity(c, h, w);
            py::list rows;
            for (const auto& r : rep.rows)
                rows.append(py::make_tuple(r.name, r.params, r.macs,
                                           py::make_tuple(r.out_c, r.out_h, r.out_w)));
            py::dict d;
            d["rows"] = rows;
            d["total_params"] = rep.total_params;
            d["total_macs"] = rep.total_macs;
            return d;
        },
        py::arg("preset"), py::arg("c") = 3, py::arg("h") = 224, py::arg("w") = 224,
        py::arg("seed") = 1);

    m.def(
        "conv2d",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> x,
           py::array_t<float, py::array::c_style | py::array::forcecast> w, int stride, int pad,
           int groups) {
            auto xt = from_numpy(x);
            auto wt = from_numpy(w);
            ConvSpec sp{xt.c, wt.n, wt.h, stride, pad, groups};
            return to_numpy(conv2d(xt, wt, sp));
        },
        py::arg("x"), py::arg("w"), py::arg("stride") = 1, py::arg("pad") = 0,
        py::arg("groups") = 1);

    m.def(
        "mba_forward",
        [](py::array_t<float, py::array::c_style | py::array::forcecast> x, const std::string& op,
           int s, const std::vector<int>& groups, const std::string& recal, unsigned seed) {
            auto xt = from_numpy(x);
            MBCConfig cfg = make_config(op, s, groups);
            std::mt19937 rng(seed);
            MBAParams<float> params(cfg, xt.c, AttentionKind::se(16), rng);
            RecalibrationKind rk =
                recal == "sigmoid" ? RecalibrationKind::Sigmoid : RecalibrationKind::Softmax;
            return to_numpy(mba_forward(xt, cfg, params, rk));
        },
        py::arg("x"), py::arg("op") = "split", py::arg("s") = 4,
        py::arg("groups") = std::vector<int>{}, py::arg("recal") = "softmax", py::arg("seed") = 1);

    m.def(
        "gradcheck",
        [](const std::string& op, unsigned seed, int trials) {
            auto r = gradcheck_op(op, seed, trials);
            return py::make_tuple(r.max_rel_err, r.pass);
        },
        py::arg("op"), py::arg("seed") = 1, py::arg("trials") = 3);

    py::class_<Model<float>>(m, "Model")
        .def(py::init([](const std::string& preset_name, unsigned seed) {
                 return Model<float>(preset(preset_name), seed);
             }),
             py::arg("preset"), py::arg("seed") = 1)
        .def("parameter_count", &Model<float>::parameter_count)
        .def("forward",
             [](Model<float>& self,
                py::array_t<float, py::array::c_style | py::array::forcecast> x, bool training) {
                 Tape<float> tape;
                 auto trace = self.forward(tape, from_numpy(x),
                                           training ? BatchNormMode::Train : BatchNormMode::Infer);
                 return to_numpy(tape.value(trace.logits));
             },
             py::arg("x"), py::arg("training") = false)
        .def("gradcam",
             [](Model<float>& self,
                py::array_t<float, py::array::c_style | py::array::forcecast> x, int target,
                const std::string& layer) {
                 return to_numpy(gradcam(self, from_numpy(x), target,
                                         layer.empty() ? self.default_cam_layer() : layer));
             },
             py::arg("x"), py::arg("target"), py::arg("layer") = "")
        .def("train_blobs",
             [](Model<float>& self, int samples, int side, int epochs, int batch, unsigned seed) {
                 auto ds = synthetic_blobs<float>(self.spec.classes, samples, 3, side, side,
                                                  seed + 1000);
                 auto hist = train<float>(self, ds, nullptr, LrSchedule::step(), epochs, batch,
                                          seed, 0.1, false, nullptr);
                 py::list out;
                 for (const auto& h : hist)
                     out.append(py::make_tuple(h.epoch, h.lr, h.train_loss, h.train_acc));
                 return out;
             },
             py::arg("samples") = 128, py::arg("side") = 8, py::arg("epochs") = 5,
             py::arg("batch") = 64, py::arg("seed") = 1);
}
