// Command-line front end: one subcommand per pipeline stage.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include "manifest.hpp"
#include "tubule/anatomy.hpp"
#include "tubule/autodiff/checkpoint.hpp"
#include "tubule/graphcut.hpp"
#include "tubule/metaimage.hpp"
#include "tubule/metrics.hpp"
#include "tubule/net/gradsuite.hpp"
#include "tubule/net/infer.hpp"
#include "tubule/net/train.hpp"
#include "tubule/parallel.hpp"
#include "tubule/phantom.hpp"
#include "tubule/preprocess.hpp"
#include "tubule/report.hpp"
#include "tubule/skeleton.hpp"

namespace fs = std::filesystem;
using namespace tubule;
using tubule::cli::Manifest;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// State shared by every subcommand of one invocation.
struct Context {
    Manifest manifest;
    std::string manifest_override;

    template <class F>
    auto timed(const std::string& stage, F&& f) {
        const auto t0 = std::chrono::steady_clock::now();
        auto finish = [&] {
            const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            std::ostringstream os;
            os << std::fixed << std::setprecision(3) << ms;
            manifest.set("timing." + stage + "_ms", os.str());
            std::cout << "stage " << stage << ": " << os.str() << " ms\n";
        };
        if constexpr (std::is_void_v<decltype(f())>) {
            f();
            finish();
        } else {
            auto r = f();
            finish();
            return r;
        }
    }

    void input(const std::string& key, const std::string& path) { manifest.set("input." + key, path); }
    void output(const std::string& key, const std::string& path) { manifest.set("output." + key, path); }

    // Written next to the primary output unless --manifest names a path.
    void finish(const std::string& primary_output) {
        const std::string path = manifest_override.empty() ? primary_output + ".manifest" : manifest_override;
        if (path.empty() || path == ".manifest") return;
        manifest.write(path);
        std::cout << "manifest: " << path << "\n";
    }
};

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
    return out;
}

// Every option of a subcommand with its effective value; flags as true/false.
void record_options(const CLI::App& sub, Manifest& m) {
    for (const CLI::Option* o : sub.get_options()) {
        if (o->get_lnames().empty()) continue;
        const std::string name = o->get_lnames().front();
        if (name == "help") continue;
        if (o->get_expected_max() == 0 || o->get_type_size_max() == 0) {
            m.set("flag." + name, o->count() ? "true" : "false");
        } else {
            m.set("arg." + name, o->count() ? join(o->results()) : o->get_default_str());
        }
    }
}

ad::Triple parse_triple(const std::string& s, const char* what) {
    ad::Triple t{};
    std::stringstream ss(s);
    std::string part;
    std::size_t i = 0;
    while (std::getline(ss, part, ',')) {
        if (i >= 3) throw UsageError(std::string(what) + " takes z,y,x");
        try {
            t[i++] = std::stoul(part);
        } catch (const std::exception&) {
            throw UsageError(std::string(what) + ": '" + part + "' is not a count");
        }
    }
    if (i == 1) t[1] = t[2] = t[0];
    else if (i != 3) throw UsageError(std::string(what) + " takes z,y,x or a single extent");
    return t;
}

std::array<std::size_t, 5> parse_ladder(const std::string& s) {
    if (s == "toy") return net::kToyLadder;
    if (s == "full") return net::kFullLadder;
    std::array<std::size_t, 5> l{};
    std::stringstream ss(s);
    std::string part;
    std::size_t i = 0;
    while (std::getline(ss, part, ',')) {
        if (i >= 5) throw UsageError("--ladder takes five channel counts");
        try {
            l[i++] = std::stoul(part);
        } catch (const std::exception&) {
            throw UsageError("--ladder: '" + part + "' is not a count");
        }
    }
    if (i != 5) throw UsageError("--ladder takes toy, full or five channel counts");
    return l;
}

net::Task parse_task(const std::string& s) {
    if (s == "airway") return net::Task::Airway;
    if (s == "artery-vein") return net::Task::ArteryVein;
    throw UsageError("--task must be airway or artery-vein");
}

void print_fields(const Fields& f) { std::cout << format_key_values(f); }

// ---------------------------------------------------------------- lung-prior

std::function<void()> setup_lung_prior(CLI::App& app, Context& ctx) {
    auto o = std::make_shared<std::tuple<std::string, std::string, std::string, std::string, std::string, std::string>>();
    auto* sub = app.add_subcommand("lung-prior", "Lung mask, airway wall, context map and distance map from a CT");
    sub->add_option("--ct", std::get<0>(*o), "CT volume in HU")->required();
    sub->add_option("--airway", std::get<1>(*o), "Airway lumen mask (0/1)")->required();
    sub->add_option("--out-context", std::get<2>(*o), "Output lung context map")->required();
    sub->add_option("--out-distance", std::get<3>(*o), "Output distance transform map (mm)")->required();
    sub->add_option("--out-lung", std::get<4>(*o), "Optional output lung mask");
    sub->add_option("--lung", std::get<5>(*o), "Use this lung mask instead of segmenting the CT");
    return [o, &ctx] {
        const auto& [ct_path, airway_path, ctx_path, dist_path, lung_path, lung_in] = *o;
        ctx.input("ct", ct_path);
        ctx.input("airway", airway_path);
        const auto ct = read_volume(ct_path);
        const auto lumen = read_labelmap(airway_path);
        LabelMap lung;
        if (lung_in.empty()) {
            lung = ctx.timed("lung_segmentation", [&] { return segment_lungs(normalize_hu(ct)); });
        } else {
            ctx.input("lung", lung_in);
            lung = read_labelmap(lung_in);
            for (auto& v : lung.data()) v = v != 0;
        }
        const auto wall = ctx.timed("airway_wall", [&] { return extract_airway_wall(lumen); });
        std::cout << "airway wall voxels: " << count_nonzero(wall) << "\n";
        const auto prior = ctx.timed("context_and_distance_maps", [&] { return build_anatomy_prior(ct, lumen, lung); });
        write_metaimage(prior.context, ctx_path);
        write_metaimage(prior.distance, dist_path);
        ctx.output("context", ctx_path);
        ctx.output("distance", dist_path);
        if (!lung_path.empty()) {
            write_metaimage(lung, lung_path);
            ctx.output("lung", lung_path);
        }
        ctx.finish(ctx_path);
    };
}

// ---------------------------------------------------------------- phantom

struct PhantomOpts {
    std::string kind = "airway";
    std::string dims = "32";
    std::size_t branches = 7;
    double rmin = 1.5, rmax = 3.0, contrast = 1.0, noise = 20.0;
    std::uint64_t seed = 0;
    std::string out_ct, out_label, out_airway, out_lung;

    void add(CLI::App* sub, bool outputs) {
        sub->add_option("--kind", kind, "airway or artery-vein")->capture_default_str();
        sub->add_option("--dims", dims, "Grid extent z,y,x (or one value for a cube)")->capture_default_str();
        sub->add_option("--branches", branches, "Capsules per tree")->capture_default_str();
        sub->add_option("--rmin", rmin, "Smallest tube radius (voxels)")->capture_default_str();
        sub->add_option("--rmax", rmax, "Root tube radius (voxels)")->capture_default_str();
        sub->add_option("--contrast", contrast, "Scale of HU offsets from parenchyma")->capture_default_str();
        sub->add_option("--noise", noise, "Gaussian noise sigma (HU)")->capture_default_str();
        if (!outputs) return;
        sub->add_option("--seed", seed, "Random seed")->capture_default_str();
        sub->add_option("--out-ct", out_ct, "Output CT (HU)")->required();
        sub->add_option("--out-label", out_label, "Output label map")->required();
        sub->add_option("--out-airway", out_airway, "Output companion airway mask (artery-vein)");
        sub->add_option("--out-lung", out_lung, "Output lung mask (the whole grid is parenchyma)");
    }

    PhantomConfig config(std::uint64_t s) const {
        PhantomConfig pc;
        if (kind == "airway") pc.kind = PhantomKind::Airway;
        else if (kind == "artery-vein") pc.kind = PhantomKind::ArteryVein;
        else throw UsageError("--kind must be airway or artery-vein");
        const auto t = parse_triple(dims, "--dims");
        pc.dims = {t[0], t[1], t[2]};
        pc.branches = branches;
        pc.radius_min = rmin;
        pc.radius_max = rmax;
        pc.contrast = contrast;
        pc.noise = noise;
        pc.seed = s;
        return pc;
    }
};

std::function<void()> setup_phantom(CLI::App& app, Context& ctx) {
    auto o = std::make_shared<PhantomOpts>();
    auto* sub = app.add_subcommand("phantom", "Synthetic tubular-tree CT with exact labels");
    o->add(sub, true);
    return [o, &ctx] {
        const auto ph = ctx.timed("phantom", [&] { return make_phantom(o->config(o->seed)); });
        write_metaimage(ph.ct, o->out_ct);
        write_metaimage(ph.label, o->out_label);
        ctx.output("ct", o->out_ct);
        ctx.output("label", o->out_label);
        if (!o->out_airway.empty()) {
            if (o->kind != "artery-vein") throw UsageError("--out-airway needs --kind artery-vein");
            write_metaimage(ph.airway, o->out_airway);
            ctx.output("airway", o->out_airway);
        }
        if (!o->out_lung.empty()) {
            write_metaimage(LabelMap::like(ph.label, std::uint8_t{1}), o->out_lung);
            ctx.output("lung", o->out_lung);
        }
        std::cout << "label voxels: " << count_nonzero(ph.label) << "\n";
        ctx.finish(o->out_label);
    };
}

// ---------------------------------------------------------------- train

struct TrainOpts {
    std::string task = "airway";
    std::vector<std::string> ct, label, context, distance;
    std::size_t phantoms = 0;
    PhantomOpts phantom;
    std::size_t epochs = 30;
    double lr = 3e-3, factor = 0.1, alpha = 0.1, p = 2.0;
    std::size_t patience = 10, r = 2;
    std::string ladder = "toy", patch = "32";
    bool no_coords = false, no_vessel_head = false, avg_pool = false, no_augment = false;
    std::uint64_t seed = 0;
    std::string out, history;
};

std::function<void()> setup_train(CLI::App& app, Context& ctx) {
    auto o = std::make_shared<TrainOpts>();
    auto* sub = app.add_subcommand("train", "Train a segmentation model (batch size 1, Adam, plateau decay)");
    sub->add_option("--task", o->task, "airway or artery-vein")->capture_default_str();
    auto* ct = sub->add_option("--ct", o->ct, "Training CTs in HU (comma separated)")->delimiter(',');
    sub->add_option("--label", o->label, "Label maps matching --ct")->delimiter(',');
    sub->add_option("--context", o->context, "Context maps (artery-vein)")->delimiter(',');
    sub->add_option("--distance", o->distance, "Distance maps (artery-vein)")->delimiter(',');
    auto* ph = sub->add_option("--phantoms", o->phantoms, "Train on this many seeded phantoms instead of files")
                   ->capture_default_str();
    ph->excludes(ct);
    o->phantom.add(sub, false);
    sub->add_option("--epochs", o->epochs, "Training epochs")->capture_default_str();
    sub->add_option("--lr", o->lr, "Initial learning rate")->capture_default_str();
    sub->add_option("--patience", o->patience, "Plateau epochs before decay")->capture_default_str();
    sub->add_option("--factor", o->factor, "Learning-rate decay factor")->capture_default_str();
    sub->add_option("--alpha", o->alpha, "Weight of the distillation loss")->capture_default_str();
    sub->add_option("--p", o->p, "Attention map exponent")->capture_default_str();
    sub->add_option("--r", o->r, "Recalibration compression factor")->capture_default_str();
    sub->add_option("--ladder", o->ladder, "Channels per scale: toy, full or five counts")->capture_default_str();
    sub->add_option("--patch", o->patch, "Patch extent z,y,x (or one value)")->capture_default_str();
    sub->add_flag("--no-coords", o->no_coords, "Do not feed the coordinate map at decoder 4");
    sub->add_flag("--no-vessel-head", o->no_vessel_head, "Drop the auxiliary vessel head (artery-vein)");
    sub->add_flag("--avg-pool", o->avg_pool, "Average instead of max pooling");
    sub->add_flag("--no-augment", o->no_augment, "Disable flips, shifts, smoothing and jitter");
    sub->add_option("--seed", o->seed, "Seed for initialisation, sampling and phantoms")->capture_default_str();
    sub->add_option("--out", o->out, "Output checkpoint")->required();
    sub->add_option("--history", o->history, "Loss history CSV (default: <out>.history.csv)");
    return [o, &ctx] {
        net::ModelConfig mc;
        mc.task = parse_task(o->task);
        mc.in_channels = mc.task == net::Task::Airway ? 1 : 3;
        mc.ladder = parse_ladder(o->ladder);
        mc.r = o->r;
        mc.p = o->p;
        mc.alpha = o->alpha;
        mc.patch = parse_triple(o->patch, "--patch");
        mc.use_coordinate_map = !o->no_coords;
        mc.use_aux_vessel_head = !o->no_vessel_head;
        mc.max_pooling = !o->avg_pool;
        mc.seed = o->seed;

        std::vector<net::TrainSample> data;
        ctx.timed("load", [&] {
            if (o->phantoms > 0) {
                const bool av = mc.task == net::Task::ArteryVein;
                if (av != (o->phantom.kind == "artery-vein")) o->phantom.kind = av ? "artery-vein" : "airway";
                for (std::size_t i = 0; i < o->phantoms; ++i) {
                    const auto ph = make_phantom(o->phantom.config(o->seed * 1000 + i));
                    if (!av) {
                        data.push_back({net::model_inputs(ph.ct), ph.label});
                    } else {
                        const LabelMap lung(ph.ct.dims(), ph.ct.spacing(), ph.ct.origin(), std::uint8_t{1});
                        const auto prior = build_anatomy_prior(ph.ct, ph.airway, lung);
                        data.push_back({net::model_inputs(ph.ct, &prior), ph.label});
                    }
                }
                return;
            }
            if (o->ct.empty()) throw UsageError("train needs --ct/--label or --phantoms");
            if (o->label.size() != o->ct.size()) throw UsageError("--label must match --ct one to one");
            const bool av = mc.task == net::Task::ArteryVein;
            if (av && (o->context.size() != o->ct.size() || o->distance.size() != o->ct.size())) {
                throw UsageError("artery-vein training needs --context and --distance for every --ct");
            }
            for (std::size_t i = 0; i < o->ct.size(); ++i) {
                ctx.input("ct" + std::to_string(i), o->ct[i]);
                ctx.input("label" + std::to_string(i), o->label[i]);
                const auto ct = read_volume(o->ct[i]);
                auto label = read_labelmap(o->label[i]);
                if (!av) {
                    for (auto& v : label.data()) v = v != 0 && v != kNonDetermined;
                    data.push_back({net::model_inputs(ct), label});
                } else {
                    AnatomyPrior prior{read_labelmap(o->context[i]), read_volume(o->distance[i])};
                    data.push_back({net::model_inputs(ct, &prior), label});
                }
            }
        });

        net::TrainConfig tc;
        tc.lr = o->lr;
        tc.plateau_patience = o->patience;
        tc.lr_factor = o->factor;
        tc.epochs = o->epochs;
        tc.seed = o->seed;
        tc.augment_enabled = !o->no_augment;
        net::Model<float> model(mc);
        std::cout << "parameters: " << model.parameter_count() << "\n";
        const auto hist = ctx.timed("train", [&] {
            return net::train(model, data, tc, [](const net::EpochRecord& e) {
                std::cout << "epoch " << e.epoch << " lr " << e.lr << " loss " << e.total << " seg " << e.seg
                          << " distill " << e.distill << std::endl;
            });
        });
        ad::save_checkpoint(model.to_arrays(), o->out);
        const std::string hist_path = o->history.empty() ? o->out + ".history.csv" : o->history;
        net::write_history_csv(hist, hist_path);
        ctx.output("checkpoint", o->out);
        ctx.output("history", hist_path);
        ctx.finish(o->out);
    };
}

// ---------------------------------------------------------------- infer

std::function<void()> setup_infer(CLI::App& app, Context& ctx) {
    struct Opts {
        std::string model, ct, context, distance, out;
        std::size_t stride = 64, lateral = 0;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("infer", "Sliding-window probability maps from a trained checkpoint");
    sub->add_option("--model", o->model, "Checkpoint written by train")->required();
    sub->add_option("--ct", o->ct, "CT volume in HU")->required();
    sub->add_option("--context", o->context, "Context map (artery-vein models)");
    sub->add_option("--distance", o->distance, "Distance map (artery-vein models)");
    sub->add_option("--stride", o->stride, "Axial window stride")->capture_default_str();
    sub->add_option("--lateral-stride", o->lateral, "In-plane stride; 0 uses the patch extent")->capture_default_str();
    sub->add_option("--out", o->out, "Output probabilities (3 channels for artery-vein)")->required();
    return [o, &ctx] {
        ctx.input("model", o->model);
        ctx.input("ct", o->ct);
        const auto arrays = ad::load_checkpoint(o->model);
        const auto cfg = net::config_from_arrays(arrays);
        net::Model<float> model(cfg);
        model.load_arrays(arrays);
        const auto ct = read_volume(o->ct);
        std::vector<Volume> inputs;
        if (cfg.task == net::Task::ArteryVein) {
            if (o->context.empty() || o->distance.empty()) {
                throw UsageError("artery-vein models need --context and --distance");
            }
            AnatomyPrior prior{read_labelmap(o->context), read_volume(o->distance)};
            inputs = net::model_inputs(ct, &prior);
        } else {
            inputs = net::model_inputs(ct);
        }
        const net::SlidingWindow sw{cfg.patch, o->stride, o->lateral};
        const auto probs = ctx.timed("inference", [&] {
            return net::sliding_window_infer(inputs, sw, net::model_patch_fn(model, ct.dims()));
        });
        if (probs.size() == 1) write_metaimage(probs[0], o->out);
        else write_metaimage_channels(probs, o->out);
        ctx.output("probabilities", o->out);
        ctx.finish(o->out);
    };
}

// ---------------------------------------------------------------- postprocess

std::function<void()> setup_postprocess(CLI::App& app, Context& ctx) {
    struct Opts {
        std::string task = "airway", probs, out;
        double th = 0.5;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("postprocess", "Binarise probabilities into a label map");
    sub->add_option("--task", o->task, "airway or artery-vein")->capture_default_str();
    sub->add_option("--probs", o->probs, "Probability map from infer")->required();
    sub->add_option("--th", o->th, "Airway threshold")->capture_default_str();
    sub->add_option("--out", o->out, "Output label map")->required();
    return [o, &ctx] {
        ctx.input("probabilities", o->probs);
        const auto task = parse_task(o->task);
        const auto channels = read_metaimage_channels(o->probs);
        const auto labels = ctx.timed("postprocess", [&] {
            if (task == net::Task::Airway) {
                if (channels.size() != 1) throw DataError("airway postprocess expects one probability channel");
                return net::postprocess_airway(channels[0], o->th);
            }
            return net::postprocess_artery_vein(channels);
        });
        write_metaimage(labels, o->out);
        ctx.output("labels", o->out);
        ctx.finish(o->out);
    };
}

// ---------------------------------------------------------------- evaluation

std::function<void()> setup_eval_airway(CLI::App& app, Context& ctx) {
    struct Opts {
        std::string pred, ref, trachea, report;
        std::size_t min_overlap = 1;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("eval-airway", "BD, TD, TPR, FPR and DSC of an airway prediction");
    sub->add_option("--pred", o->pred, "Predicted airway mask")->required();
    sub->add_option("--ref", o->ref, "Reference airway mask")->required();
    sub->add_option("--trachea", o->trachea, "Trachea mask excluded from BD/TD/TPR/FPR");
    sub->add_option("--min-overlap", o->min_overlap, "Centerline voxels needed to detect a branch")
        ->capture_default_str();
    sub->add_option("--report", o->report, "Output table (default: <pred>.airway.csv)");
    return [o, &ctx] {
        ctx.input("pred", o->pred);
        ctx.input("ref", o->ref);
        auto pred = read_labelmap(o->pred);
        auto ref = read_labelmap(o->ref);
        for (auto& v : pred.data()) v = v != 0;
        for (auto& v : ref.data()) v = v != 0;
        LabelMap trachea = LabelMap::like(ref);
        if (!o->trachea.empty()) {
            ctx.input("trachea", o->trachea);
            trachea = read_labelmap(o->trachea);
        }
        const auto graph = ctx.timed("centerline", [&] { return build_skeleton_graph(skeletonize(ref)); });
        MetricOptions mo;
        mo.min_branch_overlap = o->min_overlap;
        const auto s = ctx.timed("scores", [&] { return airway_scores(pred, ref, graph, trachea, mo); });
        print_fields(fields(s));
        const std::string report = o->report.empty() ? o->pred + ".airway.csv" : o->report;
        write_table(report, {{fs::path(o->pred).filename().string(), fields(s)}});
        ctx.output("report", report);
        ctx.finish(report);
    };
}

std::function<void()> setup_eval_av(CLI::App& app, Context& ctx) {
    struct Opts {
        std::vector<std::string> pred, ref;
        std::string report;
        std::size_t resamples = 10000;
        std::uint64_t seed = 0;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("eval-av", "Artery-vein ACC, error types and tree scores over scans");
    sub->add_option("--pred", o->pred, "Predicted label maps (comma separated)")->required()->delimiter(',');
    sub->add_option("--ref", o->ref, "Reference label maps, same order")->required()->delimiter(',');
    sub->add_option("--bootstrap", o->resamples, "Bootstrap resamples for the median CI")->capture_default_str();
    sub->add_option("--seed", o->seed, "Bootstrap seed")->capture_default_str();
    sub->add_option("--report", o->report, "Output table (default: <first pred>.av.csv)");
    return [o, &ctx] {
        if (o->pred.size() != o->ref.size()) throw UsageError("--pred and --ref must pair up");
        std::vector<AVScanScores> scans;
        std::vector<std::pair<std::string, Fields>> rows;
        ErrorBreakdown total;
        ctx.timed("scores", [&] {
            for (std::size_t i = 0; i < o->pred.size(); ++i) {
                ctx.input("pred" + std::to_string(i), o->pred[i]);
                ctx.input("ref" + std::to_string(i), o->ref[i]);
                const auto pred = read_labelmap(o->pred[i]);
                const auto ref = read_labelmap(o->ref[i]);
                scans.push_back(av_scan_scores(pred, ref, av_reference_graphs(ref)));
                rows.emplace_back(fs::path(o->pred[i]).filename().string(), fields(scans.back()));
                const auto e = error_breakdown(pred, ref);
                for (int a = 0; a < 3; ++a)
                    for (int b = 0; b < 3; ++b) total.counts[a][b] += e.counts[a][b];
            }
        });
        AggregateOptions ao;
        ao.bootstrap_resamples = o->resamples;
        ao.seed = o->seed;
        const auto agg = aggregate_av(scans, ao);
        print_fields(fields(agg));
        // Pooled error types over all scans.
        const std::uint64_t n[5] = {total.counts[0][1] + total.counts[0][2], total.counts[1][0], total.counts[1][2],
                                    total.counts[2][0], total.counts[2][1]};
        const std::uint64_t errors = n[0] + n[1] + n[2] + n[3] + n[4];
        for (int t = 0; t < 5; ++t) {
            std::cout << "type" << t + 1 << "_pct=" << std::fixed << std::setprecision(6)
                      << (errors ? 100.0 * double(n[t]) / double(errors) : 0.0) << "\n";
        }
        const std::string report = o->report.empty() ? o->pred.front() + ".av.csv" : o->report;
        write_table(report, rows);
        ctx.output("report", report);
        ctx.finish(report);
    };
}

// ---------------------------------------------------------------- graphcut / fuse

std::function<void()> setup_graphcut(CLI::App& app, Context& ctx) {
    struct Opts {
        std::string probs, ct, mask, out;
        double kappa = 8.0, sigma = 100.0;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("graphcut", "Min-cut refinement of artery-vein labels inside a vessel mask");
    sub->add_option("--probs", o->probs, "3-channel probabilities (background, artery, vein)")->required();
    sub->add_option("--ct", o->ct, "CT in HU")->required();
    sub->add_option("--mask", o->mask, "Vessel mask")->required();
    sub->add_option("--kappa", o->kappa, "Boundary term weight")->capture_default_str();
    sub->add_option("--sigma", o->sigma, "Intensity kernel width (HU^2)")->capture_default_str();
    sub->add_option("--out", o->out, "Output label map")->required();
    return [o, &ctx] {
        ctx.input("probabilities", o->probs);
        ctx.input("ct", o->ct);
        ctx.input("mask", o->mask);
        const auto probs = read_metaimage_channels(o->probs);
        const auto ct = read_volume(o->ct);
        auto mask = read_labelmap(o->mask);
        for (auto& v : mask.data()) v = v != 0 && v != kNonDetermined;
        const auto out = ctx.timed("graphcut", [&] { return refine_artery_vein(probs, ct, mask, o->kappa, o->sigma); });
        write_metaimage(out, o->out);
        ctx.output("labels", o->out);
        ctx.finish(o->out);
    };
}

std::function<void()> setup_fuse(CLI::App& app, Context& ctx) {
    struct Opts {
        std::string before, after, mode = "union1", out;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("fuse", "Union of artery-vein labels before and after refinement");
    sub->add_option("--before", o->before, "Labels before refinement")->required();
    sub->add_option("--after", o->after, "Labels after refinement")->required();
    sub->add_option("--mode", o->mode, "union1 (artery priority) or union2 (vein priority)")->capture_default_str();
    sub->add_option("--out", o->out, "Output label map")->required();
    return [o, &ctx] {
        UnionMode mode;
        if (o->mode == "union1") mode = UnionMode::ArteryPriority;
        else if (o->mode == "union2") mode = UnionMode::VeinPriority;
        else throw UsageError("--mode must be union1 or union2");
        ctx.input("before", o->before);
        ctx.input("after", o->after);
        const auto out = fuse_union(read_labelmap(o->before), read_labelmap(o->after), mode);
        write_metaimage(out, o->out);
        ctx.output("labels", o->out);
        ctx.finish(o->out);
    };
}

// ---------------------------------------------------------------- gradcheck

std::function<void()> setup_gradcheck(CLI::App& app, Context& ctx, int& status) {
    struct Opts {
        std::string precision = "f64";
        std::uint64_t seed = 0;
        double tol = 1e-4;
    };
    auto o = std::make_shared<Opts>();
    auto* sub = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operation");
    sub->add_option("--precision", o->precision, "Arithmetic of the check (f64)")->capture_default_str();
    sub->add_option("--seed", o->seed, "Seed for shapes and values")->capture_default_str();
    sub->add_option("--tol", o->tol, "Largest accepted relative error")->capture_default_str();
    return [o, &ctx, &status] {
        if (o->precision != "f64") throw UsageError("gradcheck runs in f64 only; central differences in f32 are noise");
        const auto results = ctx.timed("gradcheck", [&] { return net::run_gradient_suite(o->seed); });
        bool ok = true;
        for (const auto& r : results) {
            const bool pass = r.max_rel_err < o->tol;
            ok = ok && pass;
            std::cout << std::left << std::setw(34) << r.name << " max_rel_err=" << std::scientific
                      << std::setprecision(3) << r.max_rel_err << " coords=" << r.checked << (pass ? "" : "  FAIL")
                      << "\n";
        }
        std::cout << (ok ? "all operations pass" : "some operations fail") << "\n";
        if (!ok) status = kExitNumeric;
        ctx.finish(ctx.manifest_override);
    };
}

int run(std::vector<std::string> args, int depth);

int replay(const std::string& path, const std::string& manifest_override, int depth) {
    if (depth > 0) throw UsageError("a replayed manifest cannot itself request a replay");
    const auto m = Manifest::read(path);
    const auto* sub = m.find("subcommand");
    if (!sub) throw DataError("manifest " + path + " names no subcommand");
    std::vector<std::string> args{"tubule"};
    if (const auto* t = m.find("global.threads")) args.insert(args.end(), {"--threads", *t});
    if (const auto* d = m.find("global.deterministic"); d && *d == "true") args.push_back("--deterministic");
    if (!manifest_override.empty()) args.insert(args.end(), {"--manifest", manifest_override});
    args.push_back(*sub);
    for (const auto& [k, v] : m.entries()) {
        if (k.rfind("arg.", 0) == 0 && !v.empty()) args.insert(args.end(), {"--" + k.substr(4), v});
        if (k.rfind("flag.", 0) == 0 && v == "true") args.push_back("--" + k.substr(5));
    }
    std::cout << "replaying " << path << "\n";
    return run(args, depth + 1);
}

int run(std::vector<std::string> args, int depth) {
    CLI::App app{"tubule: airway and artery-vein segmentation of chest CT", "tubule"};
    app.fallthrough();
    app.require_subcommand(0, 1);
    unsigned threads = std::max(1u, std::thread::hardware_concurrency());
    bool deterministic = false;
    std::string replay_path;
    Context ctx;
    int status = kExitOk;
    app.add_option("--threads", threads, "Cap on worker threads")->capture_default_str();
    app.add_flag("--deterministic", deterministic, "Single-threaded reductions (bit-reproducible runs)");
    app.add_option("--manifest", ctx.manifest_override, "Manifest path (default: next to the primary output)");
    app.add_option("--replay", replay_path, "Re-run the command recorded in a manifest");

    std::vector<std::pair<CLI::App*, std::function<void()>>> commands;
    const auto add = [&](std::function<void()> fn) { commands.emplace_back(app.get_subcommands({}).back(), fn); };
    add(setup_lung_prior(app, ctx));
    add(setup_phantom(app, ctx));
    add(setup_train(app, ctx));
    add(setup_infer(app, ctx));
    add(setup_postprocess(app, ctx));
    add(setup_eval_airway(app, ctx));
    add(setup_eval_av(app, ctx));
    add(setup_graphcut(app, ctx));
    add(setup_fuse(app, ctx));
    add(setup_gradcheck(app, ctx, status));

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    if (!replay_path.empty()) {
        if (!app.get_subcommands().empty()) throw UsageError("--replay cannot be combined with a subcommand");
        return replay(replay_path, ctx.manifest_override, depth);
    }
    if (app.get_subcommands().empty()) {
        std::cerr << app.help();
        return kExitUsage;
    }
    set_thread_count(deterministic ? 1u : threads);

    for (auto& [sub, fn] : commands) {
        if (!sub->parsed()) continue;
        ctx.manifest.set("subcommand", sub->get_name());
        ctx.manifest.set("tool_version", TUBULE_VERSION);
        ctx.manifest.set("global.threads", std::to_string(threads));
        ctx.manifest.set("global.deterministic", deterministic ? "true" : "false");
        record_options(*sub, ctx.manifest);
        fn();
    }
    return status;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(std::vector<std::string>(argv, argv + argc), 0);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
}
