#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "coda/awareness.hpp"
#include "coda/edit.hpp"
#include "coda/errors.hpp"
#include "coda/losses.hpp"
#include "coda/synthetic.hpp"
#include "coda/trainer.hpp"

namespace py = pybind11;
using namespace coda;

namespace {

py::array_t<double> image_to_array(const Image& img) {
    py::array_t<double> arr({img.height, img.width, img.channels});
    std::copy(img.data.begin(), img.data.end(), arr.mutable_data());
    return arr;
}

Image array_to_image(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 3) throw ShapeError("expected an HxWxC array");
    Image img(static_cast<int>(arr.shape(1)), static_cast<int>(arr.shape(0)),
              static_cast<int>(arr.shape(2)));
    std::copy(arr.data(), arr.data() + arr.size(), img.data.begin());
    return img;
}

py::dict render_model(const Model& model, const std::string& data_dir, double t, double yaw,
                      double pitch) {
    const SceneSpec spec = load_scene_spec(data_dir + "/spec.txt");
    const Camera cam = orbit_camera(spec, t, yaw, pitch);
    std::vector<double> feat_bg(model.scene.feature_dim, 0.0);
    if (spec.feature_dim == model.scene.feature_dim)
        feat_bg = make_codebook(spec.objects.size() + 1, spec.feature_dim,
                                codebook_seed(spec))[0];
    const RenderOutput ro = model.render_view(cam, t, RasterConfig{}, feat_bg.data());
    py::dict out;
    out["rgb"] = image_to_array(ro.rgb);
    out["depth"] = image_to_array(ro.depth);
    out["feature"] = image_to_array(ro.feature);
    out["accum"] = image_to_array(ro.accum);
    return out;
}

} // namespace

PYBIND11_MODULE(_coda4dgs, m) {
    m.doc() = "differentiable 4D Gaussian splatting core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<SemanticError>(m, "SemanticError", PyExc_ValueError);

    py::class_<Model>(m, "Model")
        .def_property_readonly("count", [](const Model& mm) { return mm.scene.count; })
        .def_property_readonly("feature_dim",
                               [](const Model& mm) { return mm.scene.feature_dim; })
        .def_property_readonly("step", [](const Model& mm) { return mm.step; })
        .def_property_readonly("frames", [](const Model& mm) { return mm.frames; })
        .def("render", &render_model, py::arg("data_dir"), py::arg("t") = 0.0,
             py::arg("yaw") = 0.0, py::arg("pitch") = 0.0)
        .def(
            "segment",
            [](const Model& mm, const std::vector<double>& query, double threshold) {
                return segment_gaussians(mm.scene, query, threshold);
            },
            py::arg("query"), py::arg("threshold") = 0.9)
        .def("save", [](const Model& mm, const std::string& path) {
            save_checkpoint(mm, path);
        });

    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
    m.def(
        "generate_dataset",
        [](const std::string& spec_path, const std::string& out_dir) {
            const SceneSpec spec = load_scene_spec(spec_path);
            generate_dataset(spec, out_dir);
            return spec.frames;
        },
        py::arg("spec_path"), py::arg("out_dir"));
    m.def(
        "train",
        [](const std::string& config_path) {
            const TrainingConfig cfg = load_training_config(config_path);
            const Dataset data = load_dataset(cfg.data, cfg.split);
            Trainer trainer(cfg, data);
            trainer.train();
            return py::make_tuple(trainer.model, trainer.loss_csv);
        },
        py::arg("config_path"));

    m.def(
        "psnr",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
            return psnr(array_to_image(a), array_to_image(b));
        },
        py::arg("a"), py::arg("b"));
    m.def(
        "ssim",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
            return ssim(array_to_image(a), array_to_image(b));
        },
        py::arg("a"), py::arg("b"));
    m.def(
        "time_embedding",
        [](std::uint64_t frame, std::size_t dim) {
            const std::vector<double> v = time_embedding(frame, dim);
            py::array_t<double> arr(static_cast<py::ssize_t>(v.size()));
            std::copy(v.begin(), v.end(), arr.mutable_data());
            return arr;
        },
        py::arg("frame"), py::arg("dim"));
    m.def(
        "pca_visualize",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& features) {
            return image_to_array(pca_visualize(array_to_image(features)));
        },
        py::arg("features"));
}
