#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "evsplat/io.hpp"
#include "evsplat/pipeline.hpp"

using namespace evsplat;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// JSON config merged with flag overrides; flags win.
struct ConfigSource {
    json cfg = json::object();
    CLI::App* app = nullptr;

    void load(const std::string& path) {
        if (path.empty()) return;
        try {
            cfg = json::parse(read_file(path));
        } catch (const json::parse_error& e) {
            throw IoError(IoErrc::bad_manifest,
                          std::string("config parse error: ") + e.what());
        }
    }
    template <typename T>
    void apply(const std::string& flag, const std::string& key, T& value) {
        const CLI::Option* opt = app->get_option_no_throw("--" + flag);
        if (opt && opt->count() > 0) return;  // flag wins
        if (cfg.contains(key)) value = cfg.at(key).get<T>();
    }
};

json eval_to_json(const EvalResult& ev) {
    json j;
    j["psnr"] = ev.psnr;
    j["ssim"] = ev.ssim;
    j["per_frame_psnr"] = ev.per_frame_psnr;
    if (ev.thr_mse >= 0) j["threshold_mse"] = ev.thr_mse;
    if (ev.thr_mse_active >= 0) j["threshold_mse_active"] = ev.thr_mse_active;
    if (ev.dynamic_recall >= 0) j["dynamic_recall"] = ev.dynamic_recall;
    j["median_render_ms"] = ev.median_render_ms;
    j["fps"] = ev.fps;
    return j;
}

int cmd_simulate(const std::string& out_dir, const ToySceneConfig& sc) {
    const Dataset ds = make_toy_scene(sc);
    save_dataset(out_dir, ds);
    json j;
    j["events"] = ds.events.events.size();
    j["frames"] = ds.frames.size();
    j["heldout"] = ds.heldout.size();
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_calibrate(const std::string& data_dir, const std::string& out_path,
                  const std::string& report_path, const std::string& log_path,
                  CalibConfig cal) {
    const Dataset ds = load_dataset(data_dir);
    ds.validate();
    const ThresholdField* gt =
        ds.gt_thresholds ? &*ds.gt_thresholds : nullptr;
    const CalibResult res =
        estimate_threshold_rgb(ds.frames, ds.events, cal, gt);
    write_threshold_field(out_path, res.field);
    if (!log_path.empty()) {
        std::ostringstream os;
        write_calib_csv(os, res.log);
        atomic_write(log_path, os.str());
    }
    json rep;
    rep["iterations"] = cal.iterations;
    rep["diverged"] = res.diverged;
    if (gt) {
        rep["threshold_mse"] = threshold_mse(res.field, *gt);
        const ThresholdField base = ThresholdField::constant(
            gt->bins, gt->width, gt->height, gt->t_start, gt->t_end,
            cal.init_c);
        rep["constant_baseline_mse"] = threshold_mse(base, *gt);
    }
    if (!report_path.empty()) atomic_write(report_path, rep.dump(2) + "\n");
    std::cout << rep.dump() << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out_path,
              const std::string& log_path, const TrainConfig& tc) {
    const Dataset ds = load_dataset(data_dir);
    const TrainResult res = train(ds, tc);
    Checkpoint ck;
    ck.model = res.model;
    save_checkpoint(out_path, ck);
    if (!log_path.empty()) {
        std::ostringstream os;
        write_train_csv(os, res.log);
        atomic_write(log_path, os.str());
    }
    json j;
    j["gaussians"] = res.model.cloud.size();
    j["diverged"] = res.diverged;
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_decompose(const std::string& ck_path, const std::string& data_dir,
                  const std::string& out_dir, const DecompositionConfig& dc) {
    Checkpoint ck = load_checkpoint(ck_path);
    const Dataset ds = load_dataset(data_dir);
    std::vector<Camera> views;
    std::vector<Image> gts;
    for (const auto& f : ds.frames) {
        views.push_back(f.cam);
        gts.push_back(f.image);
    }
    const DecompositionOutput out =
        decompose(ck.model.cloud, views, gts, dc, ck.model.background);
    fs::create_directories(out_dir);
    char name[64];
    for (size_t i = 0; i < out.masks.size(); ++i) {
        std::snprintf(name, sizeof(name), "mask_%04zu.pgm", i);
        write_pgm(fs::path(out_dir) / name, out.masks[i].mask);
    }
    std::vector<Gaussian3D> kept;
    int n_dynamic = 0, n_pruned = 0;
    for (size_t i = 0; i < ck.model.cloud.size(); ++i) {
        if (out.labels[i] == DecompLabel::Pruned) {
            ++n_pruned;
            continue;
        }
        Gaussian3D g = ck.model.cloud.gaussians[i];
        g.label = out.labels[i] == DecompLabel::Dynamic ? Label::Dynamic
                                                        : Label::Static;
        n_dynamic += g.label == Label::Dynamic;
        kept.push_back(g);
    }
    ck.model.cloud.gaussians = std::move(kept);
    ck.optim = JointOptim();
    ck.optim.init(ck.model);
    save_checkpoint(fs::path(out_dir) / "labeled.evsplat", ck);
    json j;
    j["dynamic"] = n_dynamic;
    j["pruned"] = n_pruned;
    j["basic_unit"] = out.basic_unit;
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_render(const std::string& ck_path, const std::string& views_path,
               const std::string& data_dir, const std::string& out_dir) {
    const Checkpoint ck = load_checkpoint(ck_path);
    std::vector<Camera> cams;
    if (!views_path.empty()) {
        const json j = json::parse(read_file(views_path));
        for (const auto& v : j.at("views")) {
            Camera cam;
            cam.fx = v.at("camera").at("fx");
            cam.fy = v.at("camera").at("fy");
            cam.cx = v.at("camera").at("cx");
            cam.cy = v.at("camera").at("cy");
            const auto& pose = v.at("camera").at("pose");
            for (int r = 0; r < 3; ++r) {
                for (int c = 0; c < 3; ++c)
                    cam.rotation(r, c) = pose[4 * r + c];
                cam.translation[r] = pose[4 * r + 3];
            }
            cam.width = v.at("width");
            cam.height = v.at("height");
            cam.time = v.at("time");
            cams.push_back(cam);
        }
    } else {
        const Dataset ds = load_dataset(data_dir);
        for (const auto& f : ds.heldout.empty() ? ds.frames : ds.heldout)
            cams.push_back(f.cam);
    }
    fs::create_directories(out_dir);
    std::ostringstream timing;
    timing << "frame,time,render_ms\n";
    char name[64];
    for (size_t i = 0; i < cams.size(); ++i) {
        const auto a = std::chrono::steady_clock::now();
        const RenderedImage r = joint_render(ck.model, cams[i]);
        const double ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - a)
                              .count();
        std::snprintf(name, sizeof(name), "render_%04zu.png", i);
        write_png(fs::path(out_dir) / name, r.color);
        timing << i << ',' << cams[i].time << ',' << ms << '\n';
    }
    atomic_write(fs::path(out_dir) / "timing.csv", timing.str());
    return 0;
}

int cmd_eval(const std::string& ck_path, const std::string& data_dir,
             const std::string& out_path, const std::string& csv_path,
             int timing_renders) {
    const Checkpoint ck = load_checkpoint(ck_path);
    const Dataset ds = load_dataset(data_dir);
    const EvalResult ev = evaluate(ck.model, ds, timing_renders);
    const json j = eval_to_json(ev);
    if (!out_path.empty()) atomic_write(out_path, j.dump(2) + "\n");
    if (!csv_path.empty()) {
        std::ostringstream os;
        os << "frame,psnr\n";
        for (size_t i = 0; i < ev.per_frame_psnr.size(); ++i)
            os << i << ',' << ev.per_frame_psnr[i] << '\n';
        atomic_write(csv_path, os.str());
    }
    std::cout << j.dump() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"event-boosted deformable gaussian splatting"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "JSON config file (flags win)");

    // simulate
    auto* sim = app.add_subcommand("simulate", "generate a toy dataset");
    std::string sim_out;
    ToySceneConfig sc;
    sim->add_option("--out", sim_out, "output dataset directory")->required();
    sim->add_option("--width", sc.width);
    sim->add_option("--height", sc.height);
    sim->add_option("--frames", sc.n_frames);
    sim->add_option("--heldout", sc.n_heldout);
    sim->add_option("--substeps", sc.substeps);
    sim->add_option("--objects", sc.n_objects);
    sim->add_option("--speed", sc.speed);
    sim->add_option("--c-center", sc.c_center);
    sim->add_option("--c-range", sc.c_range);
    sim->add_option("--noise", sc.noise_fraction);
    sim->add_option("--bins-per-interval", sc.bins_per_interval);
    sim->add_option("--update-period", sc.update_period);
    sim->add_option("--seed", sc.seed);
    sim->add_flag("--blurry", sc.blurry);

    // calibrate
    auto* cal = app.add_subcommand("calibrate", "stage-1 threshold estimation");
    std::string cal_data, cal_out, cal_report, cal_log;
    CalibConfig cc;
    cal->add_option("--data", cal_data)->required();
    cal->add_option("--out", cal_out)->required();
    cal->add_option("--report", cal_report);
    cal->add_option("--log", cal_log);
    cal->add_option("--iters", cc.iterations);
    cal->add_option("--lr", cc.lr);
    cal->add_option("--bins-per-interval", cc.bins_per_interval);
    cal->add_option("--init-c", cc.init_c);

    // train
    auto* tr = app.add_subcommand("train", "full four-stage pipeline");
    std::string tr_data, tr_out, tr_log;
    TrainConfig tc;
    tr->add_option("--data", tr_data)->required();
    tr->add_option("--out", tr_out)->required();
    tr->add_option("--log", tr_log);
    tr->add_option("--desk-scale", tc.desk_scale);
    tr->add_option("--stage1-iters", tc.stage1_iters);
    tr->add_option("--stage2-iters", tc.stage2_iters);
    tr->add_option("--stage3-iters", tc.stage3_iters);
    tr->add_option("--stage4-iters", tc.stage4_iters);
    tr->add_option("--seed", tc.seed);
    tr->add_option("--n-init", tc.n_init);
    tr->add_option("--deform-depth", tc.deform_depth);
    tr->add_option("--deform-width", tc.deform_width);
    tr->add_option("--blur-samples", tc.blur_samples);
    tr->add_option("--pseudo-frames", tc.pseudo_frames);
    tr->add_option("--bins-per-interval", tc.bins_per_interval);
    tr->add_option("--max-gaussians", tc.max_gaussians);
    tr->add_option("--adc-interval", tc.adc_interval);
    tr->add_flag("--rgb-only", [&tc](int64_t) { tc.use_events = false; },
                 "disable event supervision");
    tr->add_flag("--constant-threshold", tc.constant_threshold);
    tr->add_flag("--freeze-threshold", tc.freeze_threshold);
    tr->add_flag("--skip-dsd", tc.skip_dsd);

    // decompose
    auto* dec = app.add_subcommand("decompose", "dynamic-static decomposition");
    std::string dec_ck, dec_data, dec_out;
    DecompositionConfig dc;
    dec->add_option("--checkpoint", dec_ck)->required();
    dec->add_option("--data", dec_data)->required();
    dec->add_option("--out-dir", dec_out)->required();
    dec->add_option("--r1", dc.r1);
    dec->add_option("--r2", dc.r2);
    dec->add_option("--levels", dc.feature_levels);

    // render
    auto* ren = app.add_subcommand("render", "render a checkpoint");
    std::string ren_ck, ren_views, ren_data, ren_out;
    ren->add_option("--checkpoint", ren_ck)->required();
    ren->add_option("--views", ren_views, "JSON (time, pose) list");
    ren->add_option("--data", ren_data, "dataset supplying views instead");
    ren->add_option("--out-dir", ren_out)->required();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_ck, ev_data, ev_out, ev_csv;
    int ev_renders = 100;
    ev->add_option("--checkpoint", ev_ck)->required();
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--out", ev_out, "JSON summary path");
    ev->add_option("--csv", ev_csv, "per-frame CSV path");
    ev->add_option("--timing-renders", ev_renders);

    CLI11_PARSE(app, argc, argv);

    try {
        ConfigSource cs;
        cs.load(config_path);
        if (sim->parsed()) {
            cs.app = sim;
            cs.apply("width", "width", sc.width);
            cs.apply("height", "height", sc.height);
            cs.apply("frames", "frames", sc.n_frames);
            cs.apply("substeps", "substeps", sc.substeps);
            cs.apply("speed", "speed", sc.speed);
            cs.apply("c-center", "c_center", sc.c_center);
            cs.apply("c-range", "c_range", sc.c_range);
            cs.apply("noise", "noise_fraction", sc.noise_fraction);
            cs.apply("seed", "seed", sc.seed);
            return cmd_simulate(sim_out, sc);
        }
        if (cal->parsed()) {
            cs.app = cal;
            cs.apply("iters", "iterations", cc.iterations);
            cs.apply("lr", "lr", cc.lr);
            cs.apply("bins-per-interval", "bins_per_interval",
                     cc.bins_per_interval);
            cs.apply("init-c", "init_c", cc.init_c);
            return cmd_calibrate(cal_data, cal_out, cal_report, cal_log, cc);
        }
        if (tr->parsed()) {
            cs.app = tr;
            cs.apply("desk-scale", "desk_scale", tc.desk_scale);
            cs.apply("seed", "seed", tc.seed);
            cs.apply("n-init", "n_init", tc.n_init);
            cs.apply("deform-depth", "deform_depth", tc.deform_depth);
            cs.apply("deform-width", "deform_width", tc.deform_width);
            cs.apply("blur-samples", "blur_samples", tc.blur_samples);
            return cmd_train(tr_data, tr_out, tr_log, tc);
        }
        if (dec->parsed()) return cmd_decompose(dec_ck, dec_data, dec_out, dc);
        if (ren->parsed()) {
            if (ren_views.empty() && ren_data.empty())
                throw IoError(IoErrc::bad_manifest,
                              "render: need --views or --data");
            return cmd_render(ren_ck, ren_views, ren_data, ren_out);
        }
        if (ev->parsed())
            return cmd_eval(ev_ck, ev_data, ev_out, ev_csv, ev_renders);
    } catch (const IoError& e) {
        std::cerr << error_json(e) << "\n";
        return static_cast<int>(e.code);
    } catch (const std::exception& e) {
        std::cerr << error_json(e) << "\n";
        return 1;
    }
    return 0;
}
