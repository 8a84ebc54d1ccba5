#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "evsplat/dataset.hpp"
#include "evsplat/gtjm.hpp"
#include "evsplat/io.hpp"
#include "evsplat/pipeline.hpp"

namespace py = pybind11;
using namespace evsplat;

namespace {

py::array_t<double> image_to_numpy(const Image& img) {
    py::array_t<double> out({img.height, img.width, img.channels});
    std::copy(img.data.begin(), img.data.end(), out.mutable_data());
    return out;
}

py::array_t<double> field_to_numpy(const ThresholdField& f) {
    py::array_t<double> out({f.bins, 2, f.height, f.width});
    std::copy(f.values.begin(), f.values.end(), out.mutable_data());
    return out;
}

py::dict events_to_numpy(const EventStream& ev) {
    const size_t n = ev.events.size();
    py::array_t<double> t(n);
    py::array_t<uint16_t> x(n), y(n);
    py::array_t<int8_t> p(n);
    for (size_t i = 0; i < n; ++i) {
        t.mutable_at(i) = ev.events[i].t;
        x.mutable_at(i) = ev.events[i].x;
        y.mutable_at(i) = ev.events[i].y;
        p.mutable_at(i) = ev.events[i].p;
    }
    py::dict d;
    d["t"] = t;
    d["x"] = x;
    d["y"] = y;
    d["p"] = p;
    return d;
}

}  // namespace

PYBIND11_MODULE(_evsplat, m) {
    m.doc() = "Event-boosted deformable Gaussian splatting (CPU reference)";

    py::class_<ToySceneConfig>(m, "ToySceneConfig")
        .def(py::init<>())
        .def_readwrite("width", &ToySceneConfig::width)
        .def_readwrite("height", &ToySceneConfig::height)
        .def_readwrite("n_frames", &ToySceneConfig::n_frames)
        .def_readwrite("n_heldout", &ToySceneConfig::n_heldout)
        .def_readwrite("substeps", &ToySceneConfig::substeps)
        .def_readwrite("n_objects", &ToySceneConfig::n_objects)
        .def_readwrite("speed", &ToySceneConfig::speed)
        .def_readwrite("c_center", &ToySceneConfig::c_center)
        .def_readwrite("c_range", &ToySceneConfig::c_range)
        .def_readwrite("polarity_sigma", &ToySceneConfig::polarity_sigma)
        .def_readwrite("noise_fraction", &ToySceneConfig::noise_fraction)
        .def_readwrite("bins_per_interval", &ToySceneConfig::bins_per_interval)
        .def_readwrite("update_period", &ToySceneConfig::update_period)
        .def_readwrite("flicker_amp", &ToySceneConfig::flicker_amp)
        .def_readwrite("blurry", &ToySceneConfig::blurry)
        .def_readwrite("blur_latents", &ToySceneConfig::blur_latents)
        .def_readwrite("seed", &ToySceneConfig::seed);

    py::class_<Dataset>(m, "Dataset")
        .def_readonly("width", &Dataset::width)
        .def_readonly("height", &Dataset::height)
        .def_property_readonly(
            "n_frames", [](const Dataset& d) { return d.frames.size(); })
        .def_property_readonly(
            "n_heldout", [](const Dataset& d) { return d.heldout.size(); })
        .def_property_readonly(
            "n_events", [](const Dataset& d) { return d.events.events.size(); })
        .def_property_readonly(
            "has_gt_thresholds",
            [](const Dataset& d) { return d.gt_thresholds.has_value(); })
        .def("frame",
             [](const Dataset& d, size_t i) {
                 return image_to_numpy(d.frames.at(i).image);
             })
        .def("frame_time",
             [](const Dataset& d, size_t i) { return d.frames.at(i).cam.time; })
        .def("heldout_frame",
             [](const Dataset& d, size_t i) {
                 return image_to_numpy(d.heldout.at(i).image);
             })
        .def("events", [](const Dataset& d) { return events_to_numpy(d.events); })
        .def("gt_thresholds",
             [](const Dataset& d) -> py::object {
                 if (!d.gt_thresholds) return py::none();
                 return field_to_numpy(*d.gt_thresholds);
             })
        .def("validate", &Dataset::validate)
        .def("save", [](const Dataset& d, const std::filesystem::path& dir) {
            save_dataset(dir, d);
        });

    m.def("make_toy_scene", &make_toy_scene, py::arg("config"));
    m.def("load_dataset", &load_dataset, py::arg("dir"));

    py::class_<CalibConfig>(m, "CalibConfig")
        .def(py::init<>())
        .def_readwrite("iterations", &CalibConfig::iterations)
        .def_readwrite("lr", &CalibConfig::lr)
        .def_readwrite("pseudo_frames", &CalibConfig::pseudo_frames)
        .def_readwrite("bins_per_interval", &CalibConfig::bins_per_interval)
        .def_readwrite("init_c", &CalibConfig::init_c)
        .def_readwrite("log_every", &CalibConfig::log_every);

    py::class_<CalibResult>(m, "CalibResult")
        .def_readonly("diverged", &CalibResult::diverged)
        .def_property_readonly(
            "field", [](const CalibResult& r) { return field_to_numpy(r.field); })
        .def_property_readonly("log", [](const CalibResult& r) {
            py::list rows;
            for (const auto& row : r.log) {
                py::dict d;
                d["iter"] = row.iter;
                d["l_rgb"] = row.l_rgb;
                d["l_event"] = row.l_event;
                d["l_thres"] = row.l_thres;
                d["thr_mse"] = row.thr_mse;
                rows.append(d);
            }
            return rows;
        });

    m.def(
        "calibrate",
        [](const Dataset& ds, const CalibConfig& cfg) {
            const ThresholdField* gt =
                ds.gt_thresholds ? &*ds.gt_thresholds : nullptr;
            return estimate_threshold_rgb(ds.frames, ds.events, cfg, gt);
        },
        py::arg("dataset"), py::arg("config") = CalibConfig(),
        "Stage-1 threshold estimation from RGB frames and events.");

    py::class_<JointModel>(m, "JointModel")
        .def_property_readonly(
            "n_gaussians", [](const JointModel& m) { return m.cloud.size(); })
        .def_property_readonly("thresholds", [](const JointModel& m) {
            return field_to_numpy(m.thr.thr);
        });

    m.def(
        "render",
        [](const JointModel& model, const Dataset& ds, double time) {
            Camera cam = ds.frames.at(0).cam;
            cam.time = time;
            return image_to_numpy(joint_render(model, cam).color);
        },
        py::arg("model"), py::arg("dataset"), py::arg("time") = 0.0,
        "Render the model through the dataset camera at a normalized time.");

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("desk_scale", &TrainConfig::desk_scale)
        .def_readwrite("stage1_iters", &TrainConfig::stage1_iters)
        .def_readwrite("stage2_iters", &TrainConfig::stage2_iters)
        .def_readwrite("stage3_iters", &TrainConfig::stage3_iters)
        .def_readwrite("stage4_iters", &TrainConfig::stage4_iters)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("n_init", &TrainConfig::n_init)
        .def_readwrite("deform_depth", &TrainConfig::deform_depth)
        .def_readwrite("deform_width", &TrainConfig::deform_width)
        .def_readwrite("pseudo_frames", &TrainConfig::pseudo_frames)
        .def_readwrite("bins_per_interval", &TrainConfig::bins_per_interval)
        .def_readwrite("init_c", &TrainConfig::init_c)
        .def_readwrite("blur_samples", &TrainConfig::blur_samples)
        .def_readwrite("use_events", &TrainConfig::use_events)
        .def_readwrite("constant_threshold", &TrainConfig::constant_threshold)
        .def_readwrite("freeze_threshold", &TrainConfig::freeze_threshold)
        .def_readwrite("skip_dsd", &TrainConfig::skip_dsd)
        .def_readwrite("adc_interval", &TrainConfig::adc_interval)
        .def_readwrite("adc_grad_thresh", &TrainConfig::adc_grad_thresh)
        .def_readwrite("max_gaussians", &TrainConfig::max_gaussians)
        .def_readwrite("lr_scale", &TrainConfig::lr_scale)
        .def_readwrite("log_every", &TrainConfig::log_every);

    py::class_<TrainResult>(m, "TrainResult")
        .def_readonly("model", &TrainResult::model)
        .def_readonly("diverged", &TrainResult::diverged)
        .def_property_readonly("log", [](const TrainResult& r) {
            py::list rows;
            for (const auto& row : r.log) {
                py::dict d;
                d["stage"] = row.stage;
                d["iter"] = row.iter;
                d["l_rgb"] = row.l_rgb;
                d["l_event"] = row.l_event;
                d["l_thres"] = row.l_thres;
                d["thr_mse"] = row.thr_mse;
                d["n_gaussians"] = row.n_gaussians;
                rows.append(d);
            }
            return rows;
        });

    m.def("train", &train, py::arg("dataset"), py::arg("config") = TrainConfig(),
          "Run the four-stage training pipeline.");

    py::class_<EvalResult>(m, "EvalResult")
        .def_readonly("psnr", &EvalResult::psnr)
        .def_readonly("ssim", &EvalResult::ssim)
        .def_readonly("thr_mse", &EvalResult::thr_mse)
        .def_readonly("thr_mse_active", &EvalResult::thr_mse_active)
        .def_readonly("dynamic_recall", &EvalResult::dynamic_recall)
        .def_readonly("median_render_ms", &EvalResult::median_render_ms)
        .def_readonly("fps", &EvalResult::fps)
        .def_readonly("per_frame_psnr", &EvalResult::per_frame_psnr);

    m.def("evaluate", &evaluate, py::arg("model"), py::arg("dataset"),
          py::arg("timing_renders") = 100,
          "Held-out PSNR/SSIM, threshold MSE, dynamic recall, render timing.");

    m.def(
        "save_checkpoint",
        [](const std::filesystem::path& path, const JointModel& model) {
            Checkpoint ck{model, JointOptim{}, ""};
            ck.optim.init(model);
            save_checkpoint(path, ck);
        },
        py::arg("path"), py::arg("model"));
    m.def(
        "load_checkpoint",
        [](const std::filesystem::path& path) {
            return load_checkpoint(path).model;
        },
        py::arg("path"));

    m.def("srgb_encode", py::vectorize(srgb_encode));
    m.def("srgb_decode", py::vectorize(srgb_decode));
}
