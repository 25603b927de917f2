// Python bindings over numpy arrays in z,y,x order.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tubule/anatomy.hpp"
#include "tubule/autodiff/checkpoint.hpp"
#include "tubule/graphcut.hpp"
#include "tubule/metaimage.hpp"
#include "tubule/metrics.hpp"
#include "tubule/net/gradsuite.hpp"
#include "tubule/net/infer.hpp"
#include "tubule/net/train.hpp"
#include "tubule/phantom.hpp"
#include "tubule/preprocess.hpp"
#include "tubule/report.hpp"
#include "tubule/skeleton.hpp"

namespace py = pybind11;
using namespace tubule;

namespace {

template <class T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

Dims dims_of(const py::buffer_info& b) {
    if (b.ndim != 3) throw DataError("expected a 3-D array, got " + std::to_string(b.ndim) + " dimensions");
    return {std::size_t(b.shape[0]), std::size_t(b.shape[1]), std::size_t(b.shape[2])};
}

template <class T>
Grid<T> to_grid(const Array<T>& a, Vec3 spacing) {
    const auto b = a.request();
    const auto d = dims_of(b);
    const T* p = static_cast<const T*>(b.ptr);
    return Grid<T>(d, spacing, {0, 0, 0}, std::vector<T>(p, p + d.count()));
}

template <class T>
py::array_t<T> to_array(const Grid<T>& g) {
    const auto& d = g.dims();
    py::array_t<T> out({d.z, d.y, d.x});
    std::copy(g.data().begin(), g.data().end(), out.mutable_data());
    return out;
}

py::dict to_dict(const Fields& f) {
    py::dict d;
    for (const auto& [k, v] : f) d[py::str(k)] = v;
    return d;
}

std::vector<Volume> to_channels(const Array<float>& a, Vec3 spacing) {
    const auto b = a.request();
    if (b.ndim != 4) throw DataError("expected channels as a C,Z,Y,X array");
    const Dims d{std::size_t(b.shape[1]), std::size_t(b.shape[2]), std::size_t(b.shape[3])};
    const float* p = static_cast<const float*>(b.ptr);
    std::vector<Volume> out;
    for (py::ssize_t c = 0; c < b.shape[0]; ++c)
        out.emplace_back(d, spacing, Vec3{0, 0, 0}, std::vector<float>(p + c * d.count(), p + (c + 1) * d.count()));
    return out;
}

py::array_t<float> from_channels(const std::vector<Volume>& ch) {
    const auto& d = ch.at(0).dims();
    py::array_t<float> out({ch.size(), d.z, d.y, d.x});
    float* p = out.mutable_data();
    for (const auto& v : ch) p = std::copy(v.data().begin(), v.data().end(), p);
    return out;
}

Phantom phantom(const std::string& kind, std::array<std::size_t, 3> dims, std::uint64_t seed, std::size_t branches,
                double rmin, double rmax, double noise) {
    PhantomConfig pc;
    if (kind == "airway") pc.kind = PhantomKind::Airway;
    else if (kind == "artery-vein") pc.kind = PhantomKind::ArteryVein;
    else throw DataError("kind must be airway or artery-vein");
    pc.dims = {dims[0], dims[1], dims[2]};
    pc.seed = seed;
    pc.branches = branches;
    pc.radius_min = rmin;
    pc.radius_max = rmax;
    pc.noise = noise;
    return make_phantom(pc);
}

}  // namespace

PYBIND11_MODULE(_tubule, m) {
    m.doc() = "Airway and artery-vein segmentation primitives";
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    const Vec3 unit{1, 1, 1};

    m.def("read_image", [](const std::string& path) -> py::tuple {
        auto img = read_metaimage(path);
        if (auto* v = std::get_if<Volume>(&img)) return py::make_tuple(to_array(*v), v->spacing(), v->origin());
        const auto& l = std::get<LabelMap>(img);
        return py::make_tuple(to_array(l), l.spacing(), l.origin());
    }, py::arg("path"), "Read a MetaImage as (array, spacing, origin).");
    m.def("write_volume", [](const Array<float>& a, const std::string& path, Vec3 spacing, bool as_short) {
        auto v = to_grid(a, spacing);
        if (as_short) v.set_element_type(ElementType::Short);
        write_metaimage(v, path);
    }, py::arg("array"), py::arg("path"), py::arg("spacing") = unit, py::arg("as_short") = false);
    m.def("write_labels", [](const Array<std::uint8_t>& a, const std::string& path, Vec3 spacing) {
        write_metaimage(to_grid(a, spacing), path);
    }, py::arg("array"), py::arg("path"), py::arg("spacing") = unit);

    m.def("normalize_hu", [](const Array<float>& ct) { return to_array(normalize_hu(to_grid(ct, {1, 1, 1}))); },
          py::arg("ct"), "Clip HU to [-1000, 400] and scale to [0, 1].");
    m.def("otsu_threshold", [](const Array<float>& v, std::size_t bins) { return otsu_threshold(to_grid(v, {1, 1, 1}), bins); },
          py::arg("volume"), py::arg("bins") = 256);
    m.def("segment_lungs", [](const Array<float>& ct) { return to_array(segment_lungs(normalize_hu(to_grid(ct, {1, 1, 1})))); },
          py::arg("ct"));
    m.def("airway_wall", [](const Array<std::uint8_t>& lumen) { return to_array(extract_airway_wall(to_grid(lumen, {1, 1, 1}))); },
          py::arg("lumen"));
    m.def("distance_map", [](const Array<std::uint8_t>& seed, Vec3 spacing) {
        return to_array(euclidean_distance_map(to_grid(seed, spacing)));
    }, py::arg("seed"), py::arg("spacing") = unit, "Exact Euclidean distance (mm) to the nearest nonzero voxel.");
    m.def("anatomy_prior", [](const Array<float>& ct, const Array<std::uint8_t>& lumen, const Array<std::uint8_t>& lung,
                              Vec3 spacing) {
        const auto p = build_anatomy_prior(to_grid(ct, spacing), to_grid(lumen, spacing), to_grid(lung, spacing));
        return py::make_tuple(to_array(p.context), to_array(p.distance));
    }, py::arg("ct"), py::arg("lumen"), py::arg("lung"), py::arg("spacing") = unit,
       "Context map (0 outside, 1 lumen, 2 wall, 3 lung) and distance map.");

    m.def("skeletonize", [](const Array<std::uint8_t>& mask) { return to_array(skeletonize(to_grid(mask, {1, 1, 1}))); },
          py::arg("mask"));
    m.def("skeleton_summary", [](const Array<std::uint8_t>& centerline, Vec3 spacing) {
        const auto g = build_skeleton_graph(to_grid(centerline, spacing));
        py::dict d;
        d["terminals"] = g.count(NodeKind::Terminal);
        d["bifurcations"] = g.count(NodeKind::Bifurcation);
        d["branches"] = g.branches.size();
        d["length"] = g.total_length();
        return d;
    }, py::arg("centerline"), py::arg("spacing") = unit);
    m.def("airway_scores", [](const Array<std::uint8_t>& pred, const Array<std::uint8_t>& ref,
                              std::optional<Array<std::uint8_t>> trachea, Vec3 spacing) {
        const auto r = to_grid(ref, spacing);
        const auto ex = trachea ? to_grid(*trachea, spacing) : LabelMap::like(r);
        const auto g = build_skeleton_graph(skeletonize(r));
        return to_dict(fields(airway_scores(to_grid(pred, spacing), r, g, ex)));
    }, py::arg("pred"), py::arg("ref"), py::arg("trachea") = py::none(), py::arg("spacing") = unit,
       "BD, TD, TPR, FPR and DSC in percent.");
    m.def("av_scores", [](const Array<std::uint8_t>& pred, const Array<std::uint8_t>& ref, Vec3 spacing) {
        const auto r = to_grid(ref, spacing);
        return to_dict(fields(av_scan_scores(to_grid(pred, spacing), r, av_reference_graphs(r))));
    }, py::arg("pred"), py::arg("ref"), py::arg("spacing") = unit);

    m.def("refine_artery_vein", [](const Array<float>& probs, const Array<float>& ct, const Array<std::uint8_t>& mask,
                                   double kappa, double sigma) {
        return to_array(refine_artery_vein(to_channels(probs, {1, 1, 1}), to_grid(ct, {1, 1, 1}),
                                           to_grid(mask, {1, 1, 1}), kappa, sigma));
    }, py::arg("probs"), py::arg("ct"), py::arg("mask"), py::arg("kappa") = 8.0, py::arg("sigma") = 100.0,
       "Min-cut artery (1) / vein (2) labels inside the mask.");
    m.def("fuse_union", [](const Array<std::uint8_t>& before, const Array<std::uint8_t>& after, bool artery_priority) {
        return to_array(fuse_union(to_grid(before, {1, 1, 1}), to_grid(after, {1, 1, 1}),
                                   artery_priority ? UnionMode::ArteryPriority : UnionMode::VeinPriority));
    }, py::arg("before"), py::arg("after"), py::arg("artery_priority") = true);

    m.def("phantom", [](const std::string& kind, std::array<std::size_t, 3> dims, std::uint64_t seed,
                        std::size_t branches, double rmin, double rmax, double noise) {
        const auto ph = phantom(kind, dims, seed, branches, rmin, rmax, noise);
        py::dict d;
        d["ct"] = to_array(ph.ct);
        d["label"] = to_array(ph.label);
        if (!ph.airway.empty()) d["airway"] = to_array(ph.airway);
        return d;
    }, py::arg("kind") = "airway", py::arg("dims") = std::array<std::size_t, 3>{32, 32, 32}, py::arg("seed") = 0,
       py::arg("branches") = 7, py::arg("rmin") = 1.5, py::arg("rmax") = 3.0, py::arg("noise") = 20.0);

    m.def("train_airway", [](const std::vector<Array<float>>& cts, const std::vector<Array<std::uint8_t>>& labels,
                             const std::string& checkpoint, std::size_t epochs, double lr, std::uint64_t seed,
                             bool augment, std::array<std::size_t, 3> patch) {
        if (cts.size() != labels.size()) throw DataError("cts and labels must pair up");
        std::vector<net::TrainSample> data;
        for (std::size_t i = 0; i < cts.size(); ++i)
            data.push_back({net::model_inputs(to_grid(cts[i], {1, 1, 1})), to_grid(labels[i], {1, 1, 1})});
        net::ModelConfig mc;
        mc.patch = patch;
        mc.seed = seed;
        net::TrainConfig tc;
        tc.epochs = epochs;
        tc.lr = lr;
        tc.seed = seed;
        tc.augment_enabled = augment;
        net::Model<float> model(mc);
        net::TrainHistory hist;
        {
            py::gil_scoped_release release;
            hist = net::train(model, data, tc);
        }
        ad::save_checkpoint(model.to_arrays(), checkpoint);
        py::list out;
        for (const auto& e : hist) {
            py::dict d;
            d["epoch"] = e.epoch;
            d["lr"] = e.lr;
            d["total"] = e.total;
            d["seg"] = e.seg;
            d["distill"] = e.distill;
            out.append(d);
        }
        return out;
    }, py::arg("cts"), py::arg("labels"), py::arg("checkpoint"), py::arg("epochs") = 30, py::arg("lr") = 3e-3,
       py::arg("seed") = 0, py::arg("augment") = true, py::arg("patch") = std::array<std::size_t, 3>{32, 32, 32},
       "Train the toy-width airway model on HU volumes; returns the per-epoch loss history.");
    m.def("infer", [](const std::string& checkpoint, const Array<float>& ct, std::optional<Array<std::uint8_t>> context,
                      std::optional<Array<float>> distance, std::size_t stride) {
        const auto arrays = ad::load_checkpoint(checkpoint);
        const auto cfg = net::config_from_arrays(arrays);
        net::Model<float> model(cfg);
        model.load_arrays(arrays);
        const auto v = to_grid(ct, {1, 1, 1});
        std::vector<Volume> inputs;
        if (cfg.task == net::Task::ArteryVein) {
            if (!context || !distance) throw DataError("artery-vein models need context and distance maps");
            AnatomyPrior prior{to_grid(*context, {1, 1, 1}), to_grid(*distance, {1, 1, 1})};
            inputs = net::model_inputs(v, &prior);
        } else {
            inputs = net::model_inputs(v);
        }
        std::vector<Volume> probs;
        {
            py::gil_scoped_release release;
            probs = net::sliding_window_infer(inputs, {cfg.patch, stride, 0}, net::model_patch_fn(model, v.dims()));
        }
        return from_channels(probs);
    }, py::arg("checkpoint"), py::arg("ct"), py::arg("context") = py::none(), py::arg("distance") = py::none(),
       py::arg("stride") = 64, "Sliding-window probabilities as a C,Z,Y,X array.");
    m.def("postprocess_airway", [](const Array<float>& prob, double th) {
        return to_array(net::postprocess_airway(to_grid(prob, {1, 1, 1}), th));
    }, py::arg("prob"), py::arg("th") = 0.5);

    m.def("gradient_suite", [](std::uint64_t seed) {
        std::vector<std::pair<std::string, double>> out;
        for (const auto& r : net::run_gradient_suite(seed)) out.emplace_back(r.name, r.max_rel_err);
        return out;
    }, py::arg("seed") = 0, "Max relative finite-difference error per operation.");
}
