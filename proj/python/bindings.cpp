#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "collabod/cten.hpp"
#include "collabod/eval.hpp"
#include "collabod/gradcheck_suite.hpp"
#include "collabod/model.hpp"

namespace py = pybind11;
using namespace collabod;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
    if (a.ndim() != 4) throw Error("expected a 4-d (N, C, H, W) array, got " + std::to_string(a.ndim()) + " dims");
    Shape s{static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)),
            static_cast<int>(a.shape(3))};
    return Tensor(s, std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor& t) {
    const Shape& s = t.shape();
    FloatArray a({s.n(), s.c(), s.h(), s.w()});
    std::memcpy(a.mutable_data(), t.data().data(), t.numel() * sizeof(float));
    return a;
}

Box to_box(const py::handle& h) {
    const auto v = h.cast<std::vector<float>>();
    if (v.size() != 4) throw Error("box must have 4 coordinates");
    return {v[0], v[1], v[2], v[3]};
}

py::list box_list(const Box& b) { return py::cast(std::vector<float>{b.x1, b.y1, b.x2, b.y2}); }

py::object optional_value(const std::optional<double>& v) { return v ? py::object(py::float_(*v)) : py::none(); }

py::dict summary_dict(const eval::ApSummary& s) {
    py::dict d;
    d["AP50"] = s.ap50;
    d["AP75"] = s.ap75;
    d["AP50_95"] = s.ap50_95;
    d["AP_S"] = optional_value(s.ap_small);
    d["AP_M"] = optional_value(s.ap_medium);
    d["AP_L"] = optional_value(s.ap_large);
    d["per_threshold"] = std::vector<double>(s.per_threshold.begin(), s.per_threshold.end());
    py::dict per_class;
    for (const auto& [cls, ap] : s.per_class) per_class[py::int_(cls)] = std::vector<double>(ap.begin(), ap.end());
    d["per_class"] = per_class;
    d["images"] = s.num_images;
    d["ground_truth"] = s.num_gt;
    d["detections"] = s.num_dets;
    return d;
}

py::dict complexity_dict(const HeadComplexity& h) {
    py::dict d;
    d["locations"] = h.locations;
    d["shared_block_macs"] = h.shared_block_macs;
    d["projection_macs"] = h.projection_macs;
    d["dfl_macs"] = h.dfl_macs;
    d["hidden_activations"] = h.hidden_activations;
    d["logits"] = h.logits;
    d["params"] = h.params;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Tensor operators, detector blocks and COCO-style evaluation.";
    py::register_exception<Error>(m, "CollabodError", PyExc_ValueError);

    m.def(
        "conv2d",
        [](const FloatArray& x, const FloatArray& weight, std::optional<std::vector<float>> bias, int stride,
           int padding, int groups) {
            return to_array(ops::conv2d(to_tensor(x), to_tensor(weight), bias.value_or(std::vector<float>{}),
                                        {stride, padding, groups}));
        },
        py::arg("x"), py::arg("weight"), py::arg("bias") = py::none(), py::arg("stride") = 1, py::arg("padding") = 0,
        py::arg("groups") = 1, "Cross-correlation over an NCHW batch.");
    m.def(
        "max_pool2d",
        [](const FloatArray& x, int kernel, int stride, int padding) {
            return to_array(ops::max_pool2d(to_tensor(x), {kernel, kernel, stride, padding}));
        },
        py::arg("x"), py::arg("kernel"), py::arg("stride") = 1, py::arg("padding") = 0);
    m.def(
        "dfl_decode", [](const FloatArray& logits, int bins) { return to_array(dfl_decode(to_tensor(logits), {bins})); },
        py::arg("logits"), py::arg("bins") = 16, "(N, 4R, H, W) logits to (N, 4, H, W) expected distances.");

    m.def("load_cten", [](const std::filesystem::path& p) { return to_array(cten::load(p)); }, py::arg("path"));
    m.def(
        "save_cten", [](const std::filesystem::path& p, const FloatArray& a) { cten::save(p, to_tensor(a)); },
        py::arg("path"), py::arg("array"));

    m.def("gradcheck_targets", &gradcheck_targets);
    m.def(
        "gradcheck", [](const std::string& target, std::uint64_t seed) { return run_gradcheck(target, seed).max_rel_error(); },
        py::arg("target"), py::arg("seed") = 0, "Largest relative gradient error for one seeded trial.");

    m.def(
        "evaluate",
        [](const py::iterable& dets, const py::iterable& gts, std::size_t max_dets) {
            std::vector<eval::ScoredBox> d;
            for (const auto& item : dets) {
                const auto o = item.cast<py::dict>();
                d.push_back({o["image"].cast<std::string>(), to_box(o["box"]), o["class"].cast<int>(),
                             o["score"].cast<double>()});
            }
            std::vector<eval::GroundTruth> g;
            for (const auto& item : gts) {
                const auto o = item.cast<py::dict>();
                g.push_back({o["image"].cast<std::string>(), to_box(o["box"]), o["class"].cast<int>()});
            }
            return summary_dict(eval::summarize(d, g, {max_dets}));
        },
        py::arg("detections"), py::arg("ground_truth"), py::arg("max_dets") = 100,
        "AP summary for lists of {image, box, class[, score]} dicts.");

    py::class_<Model>(m, "Model")
        .def_static("from_file", [](const std::filesystem::path& p) { return Model::build(load_config(p)); },
                    py::arg("path"))
        .def_static("from_string", [](const std::string& text) { return Model::build(parse_config(text)); },
                    py::arg("text"))
        .def_property_readonly("name", [](const Model& md) { return md.config().name; })
        .def_property_readonly("seed", [](const Model& md) { return md.config().seed; })
        .def_property_readonly("input_shape",
                               [](const Model& md) {
                                   const Shape& s = md.config().input;
                                   return py::make_tuple(s.n(), s.c(), s.h(), s.w());
                               })
        .def_property_readonly("has_head", &Model::has_head)
        .def_property_readonly("param_count", &Model::param_count)
        .def(
            "forward",
            [](const Model& md, const FloatArray& image) {
                HeadOutput out;
                {
                    py::gil_scoped_release release;
                    out = md.forward(to_tensor(image));
                }
                py::dict d;
                d["boxes"] = to_array(out.boxes);
                d["scores"] = to_array(out.scores);
                d["distances"] = to_array(out.distances);
                d["merged"] = to_array(out.merged);
                return d;
            },
            py::arg("image"))
        .def(
            "detect",
            [](const Model& md, const FloatArray& image, float iou_thresh, float score_thresh) {
                const HeadOutput out = md.forward(to_tensor(image));
                py::list batches;
                for (int b = 0; b < out.scores.shape().n(); ++b) {
                    py::list dets;
                    for (const Detection& det : nms(extract_detections(out, b, score_thresh), iou_thresh, score_thresh)) {
                        py::dict d;
                        d["box"] = box_list(det.box);
                        d["class"] = det.class_id;
                        d["score"] = det.score;
                        d["row"] = det.row;
                        dets.append(d);
                    }
                    batches.append(dets);
                }
                return batches;
            },
            py::arg("image"), py::arg("iou_thresh") = 0.45f, py::arg("score_thresh") = 0.25f,
            "Per batch element, class-wise NMS detections.")
        .def("flops",
             [](const Model& md) {
                 const FlopsReport r = count_complexity(md);
                 py::dict d;
                 py::list layers;
                 for (const auto& l : r.layers) {
                     py::dict e;
                     e["id"] = l.id;
                     e["kind"] = l.kind;
                     e["params"] = l.params;
                     e["macs"] = l.macs;
                     layers.append(e);
                 }
                 d["layers"] = layers;
                 d["total_params"] = r.total_params;
                 d["total_macs"] = r.total_macs;
                 d["total_flops"] = r.total_flops();
                 d["dominant_layer"] = r.dominant_layer;
                 d["head"] = r.head ? py::object(complexity_dict(*r.head)) : py::none();
                 return d;
             })
        .def(
            "erf",
            [](const Model& md, const std::string& probe, int samples, std::uint64_t seed, double threshold) {
                const ErfMap e = estimate_erf(md, probe, samples, seed, threshold);
                return py::make_tuple(to_array(e.magnitude), e.area_fraction);
            },
            py::arg("probe"), py::arg("samples") = 8, py::arg("seed") = 0, py::arg("threshold") = 0.2,
            "Peak-normalized receptive-field map and the fraction of pixels above threshold.")
        .def("reparameterized", &Model::reparameterized)
        .def("parameters",
             [](const Model& md) {
                 py::dict d;
                 for (const auto& p : md.parameters()) d[py::str(p.name)] = to_array(p.value);
                 return d;
             })
        .def("save_params", [](const Model& md, const std::filesystem::path& p) { save_params_file(md, p); },
             py::arg("path"))
        .def("load_params", [](Model& md, const std::filesystem::path& p) { load_params_file(md, p); },
             py::arg("path"));
}
