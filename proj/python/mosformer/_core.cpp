// Python bindings for the main operations: phantom generation, training,
// evaluation, volume prediction, metrics, and the numeric primitives that are
// convenient to poke from numpy.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mosformer/ablate.hpp"
#include "mosformer/checkpoint.hpp"
#include "mosformer/evaluate.hpp"
#include "mosformer/gradcheck.hpp"
#include "mosformer/optim.hpp"
#include "mosformer/phantom.hpp"
#include "mosformer/train.hpp"

namespace py = pybind11;
using namespace mosf;

namespace {

Tensor<double> tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    Shape shape(arr.ndim());
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[static_cast<std::size_t>(i)] = static_cast<std::size_t>(arr.shape(i));
    std::vector<double> data(arr.data(), arr.data() + arr.size());
    return Tensor<double>::from_data(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor<double>& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

RunConfig config_from(const std::string& preset, const std::string& config_path, std::int64_t seed) {
    RunConfig cfg = RunConfig::preset(preset);
    if (!config_path.empty()) cfg.apply_file(config_path);
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.validate();
    return cfg;
}

Volume volume_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& arr,
                         std::array<double, 3> spacing) {
    if (arr.ndim() != 4) throw InputError("volume array must be [D,C,H,W]");
    Volume vol;
    vol.d = static_cast<std::size_t>(arr.shape(0));
    vol.c = static_cast<std::size_t>(arr.shape(1));
    vol.h = static_cast<std::size_t>(arr.shape(2));
    vol.w = static_cast<std::size_t>(arr.shape(3));
    vol.spacing = spacing;
    vol.voxels.assign(arr.data(), arr.data() + arr.size());
    return vol;
}

py::array_t<std::uint8_t> labels_to_array(const LabelVolume& labels) {
    py::array_t<std::uint8_t> out({static_cast<py::ssize_t>(labels.d), static_cast<py::ssize_t>(labels.h),
                                   static_cast<py::ssize_t>(labels.w)});
    std::copy(labels.v.begin(), labels.v.end(), out.mutable_data());
    return out;
}

LabelVolume labels_from_array(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& arr,
                              std::array<double, 3> spacing, std::uint32_t num_classes) {
    if (arr.ndim() != 3) throw InputError("label array must be [D,H,W]");
    LabelVolume lv;
    lv.d = static_cast<std::size_t>(arr.shape(0));
    lv.h = static_cast<std::size_t>(arr.shape(1));
    lv.w = static_cast<std::size_t>(arr.shape(2));
    lv.spacing = spacing;
    lv.num_classes = num_classes;
    lv.v.assign(arr.data(), arr.data() + arr.size());
    return lv;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "MOSformer 2.5D segmentation core";

    // ---- numeric primitives ----
    m.def("matmul", [](const py::array_t<double>& a, const py::array_t<double>& b) {
        return array_from_tensor(matmul(tensor_from_array(a), tensor_from_array(b)));
    });
    m.def("softmax_lastdim",
          [](const py::array_t<double>& x) { return array_from_tensor(softmax_lastdim(tensor_from_array(x))); });
    m.def(
        "layer_norm",
        [](const py::array_t<double>& x, const py::array_t<double>& g, const py::array_t<double>& b, double eps) {
            return array_from_tensor(layer_norm(tensor_from_array(x), tensor_from_array(g), tensor_from_array(b), eps));
        },
        py::arg("x"), py::arg("gamma"), py::arg("beta"), py::arg("eps") = 1e-5);
    m.def("relative_position_index", [](std::size_t window) {
        const auto idx = relative_position_index(window);
        const auto m2 = static_cast<py::ssize_t>(window * window);
        py::array_t<std::int32_t> out({m2, m2});
        std::copy(idx.begin(), idx.end(), out.mutable_data());
        return out;
    });
    m.def("cyclic_shift", [](const py::array_t<double>& x, std::ptrdiff_t dh, std::ptrdiff_t dw) {
        return array_from_tensor(cyclic_shift(tensor_from_array(x), dh, dw));
    });
    m.def(
        "lr_at",
        [](int epoch, double lr_max, double lr_min, int warmup, int total) {
            LrSchedule s{lr_max, lr_min, warmup, total};
            return lr_at(epoch, s);
        },
        py::arg("epoch"), py::arg("lr_max") = 3e-2, py::arg("lr_min") = 5e-3, py::arg("warmup_epochs") = 5,
        py::arg("total_epochs") = 300);
    m.def("momentum_blend", [](py::array_t<double> theta2, const py::array_t<double>& theta1, double mcoef) {
        auto t2 = tensor_from_array(theta2);
        auto t1 = tensor_from_array(theta1);
        DualEncoderState<double> st;
        st.m = mcoef;
        st.params.push_back({t1, t2});
        momentum_update(st);
        return array_from_tensor(t2);
    });

    // ---- metrics ----
    m.def("dsc", [](const py::array_t<bool>& p, const py::array_t<bool>& g) {
        std::vector<std::uint8_t> pv(p.data(), p.data() + p.size());
        std::vector<std::uint8_t> gv(g.data(), g.data() + g.size());
        if (pv.size() != gv.size()) throw InputError("dsc: masks differ in size");
        return dsc(pv, gv);
    });
    m.def(
        "hd95",
        [](const py::array_t<double>& p, const py::array_t<double>& g) {
            auto to_points = [](const py::array_t<double>& a) {
                if (a.ndim() != 2 || a.shape(1) != 3) throw InputError("hd95: expected [N,3] point arrays");
                std::vector<Point3> pts(static_cast<std::size_t>(a.shape(0)));
                for (py::ssize_t i = 0; i < a.shape(0); ++i)
                    pts[static_cast<std::size_t>(i)] = {a.at(i, 0), a.at(i, 1), a.at(i, 2)};
                return pts;
            };
            return hd95(to_points(p), to_points(g));
        },
        py::arg("p"), py::arg("g"));
    m.def(
        "evaluate_labels",
        [](const py::array_t<std::uint8_t>& pred, const py::array_t<std::uint8_t>& gt, std::uint32_t classes,
           std::array<double, 3> spacing) {
            const LabelVolume pv = labels_from_array(pred, spacing, classes);
            const LabelVolume gv = labels_from_array(gt, spacing, classes);
            auto rows = evaluate_case("case", pv, gv, classes);
            py::list out;
            for (const auto& r : rows) {
                py::dict d;
                d["class_id"] = r.class_id;
                d["dsc_percent"] = r.dsc_percent;
                d["hd95"] = r.hd95_defined ? py::cast(r.hd95_value) : py::none();
                out.append(d);
            }
            return out;
        },
        py::arg("pred"), py::arg("gt"), py::arg("classes"), py::arg("spacing") = std::array<double, 3>{1, 1, 1});

    // ---- volumes ----
    m.def("save_volume", [](const std::string& path, const py::array_t<float>& arr, std::array<double, 3> spacing) {
        save_volume(path, volume_from_array(arr, spacing));
    });
    m.def("load_volume", [](const std::string& path) {
        const Volume vol = load_volume(path);
        py::array_t<float> out({static_cast<py::ssize_t>(vol.d), static_cast<py::ssize_t>(vol.c),
                                static_cast<py::ssize_t>(vol.h), static_cast<py::ssize_t>(vol.w)});
        std::copy(vol.voxels.begin(), vol.voxels.end(), out.mutable_data());
        return py::make_tuple(out, vol.spacing);
    });
    m.def("load_labels", [](const std::string& path) {
        const LabelVolume lv = load_labels(path);
        return py::make_tuple(labels_to_array(lv), lv.spacing, lv.num_classes);
    });

    // ---- pipeline ----
    m.def(
        "gen_phantoms",
        [](const std::string& out_dir, const std::string& spec_path, std::int64_t seed) {
            PhantomSpec spec = spec_path.empty() ? PhantomSpec::desk_default() : PhantomSpec::from_file(spec_path);
            if (seed >= 0) spec.seed = static_cast<std::uint64_t>(seed);
            const auto entries = generate_phantom_dataset(spec, out_dir);
            return entries.size();
        },
        py::arg("out_dir"), py::arg("spec_path") = "", py::arg("seed") = -1);
    m.def(
        "train",
        [](const std::string& preset, const std::string& config_path, const std::string& manifest,
           const std::string& out_dir, std::int64_t seed) {
            RunConfig cfg = config_from(preset, config_path, seed);
            if (!manifest.empty()) cfg.manifest = manifest;
            if (!out_dir.empty()) cfg.out_dir = out_dir;
            TrainResult r = train_dispatch(cfg);
            py::dict d;
            d["checkpoint"] = r.checkpoint_path;
            d["log"] = r.log_path;
            d["epoch_mean_loss"] = r.epoch_mean_loss;
            return d;
        },
        py::arg("preset") = "desk", py::arg("config_path") = "", py::arg("manifest") = "", py::arg("out_dir") = "",
        py::arg("seed") = -1);
    m.def(
        "evaluate",
        [](const std::string& checkpoint, const std::string& manifest, const std::string& preset,
           const std::string& config_path, const std::string& split) {
            RunConfig cfg = config_from(preset, config_path, -1);
            EvalResult r = evaluate_dispatch(cfg, checkpoint, manifest, split);
            py::dict d;
            d["mean_dsc_percent"] = r.mean_dsc_percent;
            d["mean_hd95"] = r.mean_hd95;
            py::list rows;
            for (const auto& row : r.report.rows) {
                py::dict rd;
                rd["case_id"] = row.case_id;
                rd["class_id"] = row.class_id;
                rd["dsc_percent"] = row.dsc_percent;
                rd["hd95"] = row.hd95_defined ? py::cast(row.hd95_value) : py::none();
                rows.append(rd);
            }
            d["rows"] = rows;
            return d;
        },
        py::arg("checkpoint"), py::arg("manifest"), py::arg("preset") = "desk", py::arg("config_path") = "",
        py::arg("split") = "test");
    m.def(
        "init_checkpoint",
        [](const std::string& path, const std::string& preset, const std::string& config_path, std::int64_t seed) {
            RunConfig cfg = config_from(preset, config_path, seed);
            if (cfg.dtype == "f64") {
                MosformerModel<double> model(cfg.model, cfg.seed);
                save_checkpoint(path, model.params());
            } else {
                MosformerModel<float> model(cfg.model, cfg.seed);
                save_checkpoint(path, model.params());
            }
        },
        py::arg("path"), py::arg("preset") = "desk", py::arg("config_path") = "", py::arg("seed") = -1);
    m.def(
        "predict",
        [](const std::string& checkpoint, const py::array_t<float>& volume, std::array<double, 3> spacing,
           const std::string& preset, const std::string& config_path) {
            RunConfig cfg = config_from(preset, config_path, -1);
            const Volume vol = volume_from_array(volume, spacing);
            LabelVolume pred;
            if (cfg.dtype == "f64") {
                MosformerModel<double> model(cfg.model, cfg.seed);
                load_checkpoint(checkpoint, model.params());
                pred = model.predict_volume(vol);
            } else {
                MosformerModel<float> model(cfg.model, cfg.seed);
                load_checkpoint(checkpoint, model.params());
                pred = model.predict_volume(vol);
            }
            return labels_to_array(pred);
        },
        py::arg("checkpoint"), py::arg("volume"), py::arg("spacing") = std::array<double, 3>{1, 1, 1},
        py::arg("preset") = "desk", py::arg("config_path") = "");
    m.def(
        "gradcheck",
        [](std::int64_t seed, bool include_model) {
            GradCheckOptions opt;
            if (seed >= 0) opt.seed = static_cast<std::uint64_t>(seed);
            opt.include_model = include_model;
            GradCheckReport r = run_gradcheck(opt);
            py::list units;
            for (const auto& u : r.units) {
                py::dict d;
                d["unit"] = u.name;
                d["rel_err_f64"] = u.rel_err_f64;
                d["rel_err_f32"] = u.rel_err_f32;
                d["pass"] = u.pass;
                units.append(d);
            }
            py::dict out;
            out["all_pass"] = r.all_pass;
            out["units"] = units;
            return out;
        },
        py::arg("seed") = -1, py::arg("include_model") = false);
    m.def("set_threads", [](int n) { set_max_threads(n); });
}
