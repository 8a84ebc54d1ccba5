#include "evsplat/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <numeric>
#include <stdexcept>

#include "evsplat/rng.hpp"

namespace evsplat {
namespace {

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::vector<int> dynamic_indices(const GaussianCloud& cloud) {
    std::vector<int> idx;
    for (size_t i = 0; i < cloud.size(); ++i)
        if (cloud.gaussians[i].label == Label::Dynamic)
            idx.push_back(static_cast<int>(i));
    return idx;
}

void flatten_mlp(const DeformationField& f, std::vector<double>& out) {
    out.clear();
    for (const auto& w : f.weights())
        out.insert(out.end(), w.data(), w.data() + w.size());
    for (const auto& b : f.biases())
        out.insert(out.end(), b.data(), b.data() + b.size());
}

void flatten_mlp_grads(const MlpGradients& g, std::vector<double>& out) {
    out.clear();
    for (const auto& w : g.d_weights)
        out.insert(out.end(), w.data(), w.data() + w.size());
    for (const auto& b : g.d_biases)
        out.insert(out.end(), b.data(), b.data() + b.size());
}

void unflatten_mlp(const std::vector<double>& v, DeformationField& f) {
    size_t p = 0;
    for (auto& w : f.weights()) {
        std::copy(v.begin() + p, v.begin() + p + w.size(), w.data());
        p += w.size();
    }
    for (auto& b : f.biases()) {
        std::copy(v.begin() + p, v.begin() + p + b.size(), b.data());
        p += b.size();
    }
}

}  // namespace

int TrainConfig::resolved_stage_iters(int stage) const {
    static const int paper[4] = {7000, 3000, 5000, 42000};
    const int explicit_iters = stage == 1   ? stage1_iters
                               : stage == 2 ? stage2_iters
                               : stage == 3 ? stage3_iters
                                            : stage4_iters;
    if (explicit_iters >= 0) return explicit_iters;
    return std::max(1, static_cast<int>(std::lround(paper[stage - 1] *
                                                    desk_scale)));
}

CalibConfig TrainConfig::calib_config(int iterations, double lr) const {
    CalibConfig c;
    c.iterations = iterations;
    c.lr = lr * resolved_lr_scale();
    c.pseudo_frames = pseudo_frames;
    c.bins_per_interval = bins_per_interval;
    c.weights = weights;
    if (!use_events) c.weights.lambda_event = c.weights.lambda_thres = 0.0;
    c.init_c = init_c;
    c.log_every = log_every;
    return c;
}

void write_train_csv(std::ostream& os, const std::vector<TrainLogRow>& rows) {
    os << "stage,iter,L_rgb,L_event,L_thres,thr_MSE,n_gaussians\n";
    for (const auto& r : rows)
        os << r.stage << ',' << r.iter << ',' << r.l_rgb << ',' << r.l_event
           << ',' << r.l_thres << ',' << r.thr_mse << ',' << r.n_gaussians
           << '\n';
}

RenderedImage joint_render(const JointModel& model, const Camera& cam,
                           double* deform_ms, GaussianCloud* merged_out,
                           DeformCache* cache_out, std::vector<int>* dyn_out) {
    const std::vector<int> dyn = dynamic_indices(model.cloud);
    GaussianCloud merged = model.cloud;
    DeformCache local_cache;
    if (!dyn.empty()) {
        std::vector<Gaussian3D> subset;
        subset.reserve(dyn.size());
        for (int i : dyn) subset.push_back(model.cloud.gaussians[i]);
        const double t0 = now_ms();
        const std::vector<Gaussian3D> deformed = model.deform.deform(
            subset, cam.time, cache_out ? cache_out : &local_cache);
        if (deform_ms) *deform_ms += now_ms() - t0;
        for (size_t k = 0; k < dyn.size(); ++k)
            merged.gaussians[dyn[k]] = deformed[k];
        merged.canonical = false;
    }
    RenderedImage img = render(merged, cam, model.background);
    if (merged_out) *merged_out = std::move(merged);
    if (dyn_out) *dyn_out = dyn;
    return img;
}

RenderGradients joint_backward(const JointModel& model, const Camera& cam,
                               const Image& upstream,
                               const GaussianCloud& merged,
                               const DeformCache& cache,
                               const std::vector<int>& dyn_idx,
                               MlpGradients* d_mlp) {
    RenderGradients g = render_backward(merged, cam, model.background, upstream);
    if (dyn_idx.empty()) return g;

    DeformUpstream up;
    std::vector<Gaussian3D> subset;
    subset.reserve(dyn_idx.size());
    for (int i : dyn_idx) {
        subset.push_back(model.cloud.gaussians[i]);
        up.d_mu.push_back(g.d_mu[i]);
        up.d_rot.push_back(g.d_rot[i]);
        up.d_log_scale.push_back(g.d_log_scale[i]);
    }
    MlpGradients mg = model.deform.zero_gradients();
    DeformUpstream d_canonical;
    model.deform.backward(subset, cache, up, mg, d_canonical);
    if (d_mlp) d_mlp->add(mg);
    for (size_t k = 0; k < dyn_idx.size(); ++k) {
        g.d_mu[dyn_idx[k]] = d_canonical.d_mu[k];
        g.d_rot[dyn_idx[k]] = d_canonical.d_rot[k];
        g.d_log_scale[dyn_idx[k]] = d_canonical.d_log_scale[k];
    }
    return g;
}

void apply_gauss_step(GaussianCloud& cloud, const RenderGradients& grads,
                      JointOptim& optim, const JointLrs& lr) {
    const size_t n = cloud.size();
    std::vector<double> p, gbuf;

    auto run = [&](Adam& adam, double rate, int k, auto read_p, auto read_g,
                   auto write_p) {
        p.resize(k * n);
        gbuf.resize(k * n);
        for (size_t i = 0; i < n; ++i)
            for (int c = 0; c < k; ++c) {
                p[k * i + c] = read_p(i, c);
                gbuf[k * i + c] = read_g(i, c);
            }
        adam.step(p, gbuf, rate);
        for (size_t i = 0; i < n; ++i)
            for (int c = 0; c < k; ++c) write_p(i, c, p[k * i + c]);
    };

    auto& gs = cloud.gaussians;
    run(optim.mu, lr.pos, 3,
        [&](size_t i, int c) { return gs[i].mu[c]; },
        [&](size_t i, int c) { return grads.d_mu[i][c]; },
        [&](size_t i, int c, double v) { gs[i].mu[c] = v; });
    run(optim.rot, lr.rot, 4,
        [&](size_t i, int c) { return gs[i].rot[c]; },
        [&](size_t i, int c) { return grads.d_rot[i][c]; },
        [&](size_t i, int c, double v) { gs[i].rot[c] = v; });
    // Projections keep parameters in numerically sane ranges: a single bad
    // Adam step can otherwise push a splat to screen-filling scale or a
    // saturated logit that never recovers.
    run(optim.log_scale, lr.scale, 3,
        [&](size_t i, int c) { return gs[i].log_scale[c]; },
        [&](size_t i, int c) { return grads.d_log_scale[i][c]; },
        [&](size_t i, int c, double v) {
            gs[i].log_scale[c] = std::clamp(v, -12.0, 1.5);
        });
    run(optim.opacity, lr.opacity, 1,
        [&](size_t i, int) { return gs[i].opacity_logit; },
        [&](size_t i, int) { return grads.d_opacity_logit[i]; },
        [&](size_t i, int, double v) {
            gs[i].opacity_logit = std::clamp(v, -15.0, 15.0);
        });
    run(optim.color, lr.color, 3,
        [&](size_t i, int c) { return gs[i].color[c]; },
        [&](size_t i, int c) { return grads.d_color[i][c]; },
        [&](size_t i, int c, double v) { gs[i].color[c] = v; });
}

void apply_deform_step(DeformationField& field, const MlpGradients& grads,
                       Adam& adam, double lr) {
    std::vector<double> p, g;
    flatten_mlp(field, p);
    flatten_mlp_grads(grads, g);
    adam.step(p, g, lr);
    unflatten_mlp(p, field);
}

AdcResult adc_step(GaussianCloud& cloud, const RenderGradients& stats,
                   const AdcConfig& cfg) {
    AdcResult res;
    std::vector<Gaussian3D> out;
    out.reserve(cloud.size() + 16);
    int budget = cfg.max_gaussians - static_cast<int>(cloud.size());

    for (size_t i = 0; i < cloud.size(); ++i) {
        const Gaussian3D& g = cloud.gaussians[i];
        if (g.opacity() < cfg.prune_opacity) {
            ++res.n_prune;
            continue;
        }
        const double mean_grad =
            stats.pos_grad_count[i] > 0
                ? stats.pos_grad_accum[i] / stats.pos_grad_count[i]
                : 0.0;
        const bool densify = mean_grad > cfg.grad_thresh && budget > 0;
        int axis = 0;
        g.log_scale.maxCoeff(&axis);
        const double max_scale = std::exp(g.log_scale[axis]);

        if (densify && max_scale > cfg.scale_thresh) {
            const Vec3 dir = quat_to_rot(g.rot).col(axis);
            Gaussian3D child = g;
            child.log_scale.array() -= std::log(1.6);
            for (double s : {0.5, -0.5}) {
                child.mu = g.mu + s * max_scale * dir;
                out.push_back(child);
                res.parent.push_back(static_cast<int>(i));
                res.optim_index.push_back(-1);
            }
            ++res.n_split;
            --budget;
        } else if (densify) {
            out.push_back(g);
            res.parent.push_back(static_cast<int>(i));
            res.optim_index.push_back(static_cast<int>(i));
            out.push_back(g);
            res.parent.push_back(static_cast<int>(i));
            res.optim_index.push_back(-1);
            ++res.n_clone;
            --budget;
        } else {
            out.push_back(g);
            res.parent.push_back(static_cast<int>(i));
            res.optim_index.push_back(static_cast<int>(i));
        }
    }
    cloud.gaussians = std::move(out);
    return res;
}

TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
    ds.validate();
    TrainResult out;
    Rng rng(cfg.seed);

    const int n_frames = static_cast<int>(ds.frames.size());
    const int intervals = n_frames - 1;
    const int bins = intervals * cfg.bins_per_interval;
    const double t0 = ds.t_start(), t1 = ds.t_end();
    const ThresholdField* gt =
        ds.gt_thresholds ? &*ds.gt_thresholds : nullptr;

    JointModel& model = out.model;
    model.background = cfg.background;

    // Stage 1: RGB-assisted threshold estimation.
    if (cfg.use_events && !cfg.constant_threshold) {
        const CalibConfig cal =
            cfg.calib_config(cfg.resolved_stage_iters(1), cfg.lr_thr_stage1);
        out.stage1 = estimate_threshold_rgb(ds.frames, ds.events, cal, gt);
        model.thr = ThresholdParams::from_field(out.stage1.field);
        out.diverged |= out.stage1.diverged;
    } else {
        model.thr = ThresholdParams::init(bins, ds.width, ds.height, t0, t1,
                                          cfg.init_c);
        out.stage1.field = model.thr.thr;
    }

    // Random-point initialization inside the scene bounding box.
    const Vec3 extent = ds.bbox_max - ds.bbox_min;
    const double spacing =
        std::cbrt(extent.x() * extent.y() * extent.z() /
                  std::max(1, cfg.n_init));
    for (int i = 0; i < cfg.n_init; ++i) {
        Gaussian3D g;
        for (int c = 0; c < 3; ++c)
            g.mu[c] = ds.bbox_min[c] + rng.uniform(0.0, 1.0) * extent[c];
        g.rot = Vec4(rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1),
                     rng.normal(0, 1));
        g.rot.normalize();
        g.log_scale = Vec3::Constant(std::log(spacing) +
                                     rng.uniform(-0.3, 0.3));
        g.opacity_logit = -2.2;  // sigmoid ~= 0.1
        g.color = Vec3(rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0),
                       rng.uniform(0.0, 1.0));
        g.label = Label::Static;
        model.cloud.gaussians.push_back(g);
    }
    model.deform = DeformationField(cfg.deform_depth, cfg.deform_width, rng);

    JointOptim optim;
    optim.init(model);

    const double ls = cfg.resolved_lr_scale();
    const AdcConfig adc{cfg.adc_grad_thresh, cfg.adc_scale_frac * extent.norm(),
                        cfg.prune_opacity, cfg.max_gaussians};
    RenderGradients adc_stats;
    adc_stats.resize(model.cloud.size());

    const CalibConfig rgb_only = [&] {
        CalibConfig c = cfg.calib_config(0, 0.0);
        c.weights.lambda_event = c.weights.lambda_thres = 0.0;
        return c;
    }();
    const EventWindows no_windows;

    auto lrs_at = [&](int it, int total) {
        JointLrs l;
        l.pos = exp_decay_lr(cfg.lr_pos0 * ls, cfg.lr_pos1 * ls, it, total);
        l.rot = cfg.lr_rot * ls;
        l.scale = cfg.lr_scaleparam * ls;
        l.opacity = cfg.lr_opacity * ls;
        l.color = cfg.lr_color * ls;
        l.deform =
            exp_decay_lr(cfg.lr_deform0 * ls, cfg.lr_deform1 * ls, it, total);
        l.thr = exp_decay_lr(cfg.lr_thr0 * ls, cfg.lr_thr1 * ls, it, total);
        return l;
    };

    auto run_adc = [&](int it) {
        const AdcResult r = adc_step(model.cloud, adc_stats, adc);
        optim.remap(r.optim_index, model.cloud.size());
        adc_stats.resize(0);
        adc_stats.resize(model.cloud.size());
        (void)it;
    };

    // Smoothed objective for divergence flagging: mean over one frame cycle.
    // The window restarts at stage boundaries and after density control,
    // where the objective legitimately changes shape.
    std::deque<double> cycle;
    DivergenceMonitor monitor;
    auto reset_track = [&] {
        cycle.clear();
        monitor.hist.clear();
    };
    auto track = [&](double total) {
        cycle.push_back(total);
        if (static_cast<int>(cycle.size()) > n_frames) cycle.pop_front();
        if (static_cast<int>(cycle.size()) == n_frames) {
            bool was = monitor.diverged;
            monitor.push(std::accumulate(cycle.begin(), cycle.end(), 0.0) /
                         n_frames);
            if (!was && monitor.diverged && getenv("EVSPLAT_DEBUG_DIV"))
                fprintf(stderr, "DIV: hist size %zu last %.6g min %.6g\n",
                        monitor.hist.size(), monitor.hist.back(),
                        *std::min_element(monitor.hist.begin(), monitor.hist.end()));
        }
    };

    auto log_row = [&](int stage, int it, const JointStepResult& r) {
        if (it % cfg.log_every != 0) return;
        out.log.push_back({stage, it, r.l_rgb, r.l_event, r.l_thres,
                           gt ? threshold_mse(model.thr.thr, *gt) : -1.0,
                           static_cast<int>(model.cloud.size())});
    };

    // Stage 2: RGB-only static warm-up.
    const int s2 = cfg.resolved_stage_iters(2);
    for (int it = 0; it < s2; ++it) {
        const int fi = it % n_frames;
        const JointStepResult r =
            joint_step(model, optim, ds, fi, no_windows, rgb_only,
                       lrs_at(it, s2), false, &adc_stats, nullptr,
                       cfg.blur_samples);
        track(r.total);
        log_row(2, it, r);
        if ((it + 1) % cfg.adc_interval == 0) {
            run_adc(it);
            reset_track();
        }
    }

    // Dynamic-static decomposition.
    if (cfg.skip_dsd) {
        for (auto& g : model.cloud.gaussians) g.label = Label::Dynamic;
        out.decomposition.labels.assign(model.cloud.size(),
                                        DecompLabel::Dynamic);
    } else {
        std::vector<Camera> views;
        std::vector<Image> gts;
        for (const auto& f : ds.frames) {
            views.push_back(f.cam);
            gts.push_back(f.image);
        }
        out.decomposition =
            decompose(model.cloud, views, gts, cfg.dsd, cfg.background);
        std::vector<Gaussian3D> kept;
        std::vector<int> old_index;
        for (size_t i = 0; i < model.cloud.size(); ++i) {
            const DecompLabel l = out.decomposition.labels[i];
            if (l == DecompLabel::Pruned) continue;
            Gaussian3D g = model.cloud.gaussians[i];
            g.label = l == DecompLabel::Dynamic ? Label::Dynamic
                                                : Label::Static;
            kept.push_back(g);
            old_index.push_back(static_cast<int>(i));
        }
        model.cloud.gaussians = std::move(kept);
        optim.remap(old_index, model.cloud.size());
        adc_stats.resize(0);
        adc_stats.resize(model.cloud.size());
    }

    // Stage 3: RGB-only warm-up of Gaussians + deformation.
    reset_track();
    const int s3 = cfg.resolved_stage_iters(3);
    for (int it = 0; it < s3; ++it) {
        const int fi = it % n_frames;
        const JointStepResult r =
            joint_step(model, optim, ds, fi, no_windows, rgb_only,
                       lrs_at(it, s3), false, &adc_stats, nullptr,
                       cfg.blur_samples);
        track(r.total);
        log_row(3, it, r);
        if ((it + 1) % cfg.adc_interval == 0) {
            run_adc(it);
            reset_track();
        }
    }

    // Stage 4: joint optimization with event supervision.
    reset_track();
    const int s4 = cfg.resolved_stage_iters(4);
    const CalibConfig joint_cfg = cfg.calib_config(s4, cfg.lr_thr0);
    const bool update_thr = cfg.use_events && !cfg.constant_threshold &&
                            !cfg.freeze_threshold;
    EventWindows windows;
    if (cfg.use_events)
        windows = build_event_windows(ds.frames, ds.events,
                                      cfg.bins_per_interval,
                                      cfg.pseudo_frames);
    const int adc_stop = static_cast<int>(cfg.adc_stop_frac * s4);
    for (int it = 0; it < s4; ++it) {
        const int fi = it % n_frames;
        double dms = 0.0;
        const JointStepResult r = joint_step(
            model, optim, ds, fi, windows, joint_cfg, lrs_at(it, s4),
            update_thr, it < adc_stop ? &adc_stats : nullptr, &dms,
            cfg.blur_samples);
        out.deform_ms_total += dms;
        ++out.deform_calls;
        track(r.total);
        log_row(4, it, r);
        if ((it + 1) % cfg.adc_interval == 0 && it < adc_stop) {
            run_adc(it);
            reset_track();
        }
    }
    out.diverged |= monitor.diverged;
    return out;
}

EvalResult evaluate(const JointModel& model, const Dataset& ds,
                    int timing_renders) {
    EvalResult res;
    for (const auto& f : ds.heldout) {
        const RenderedImage r = joint_render(model, f.cam);
        res.per_frame_psnr.push_back(psnr(r.color, f.image));
        res.psnr += res.per_frame_psnr.back() / ds.heldout.size();
        res.ssim += ssim(r.color, f.image) / ds.heldout.size();
    }

    if (ds.gt_thresholds) {
        const ThresholdField& gt = *ds.gt_thresholds;
        const ThresholdField& est = model.thr.thr;
        if (est.bins == gt.bins && est.width == gt.width &&
            est.height == gt.height) {
            res.thr_mse = threshold_mse(est, gt);
            const EventCountMap ecm =
                accumulate_ecm(ds.events, est.t_start, est.t_end, est.bins,
                               est.width, est.height);
            res.thr_mse_active = threshold_mse_active(est, gt, ecm);
        }
    }

    if (!ds.gt_masks.empty()) {
        int gt_dyn = 0, hit = 0;
        for (const auto& g : model.cloud.gaussians) {
            bool inside = false;
            for (size_t f = 0; f < ds.frames.size() && !inside; ++f) {
                const auto proj = project_gaussian(g, ds.frames[f].cam);
                if (!proj) continue;
                const int x = static_cast<int>(std::lround(proj->mean2d.x()));
                const int y = static_cast<int>(std::lround(proj->mean2d.y()));
                if (x < 0 || y < 0 || x >= ds.width || y >= ds.height)
                    continue;
                inside = ds.gt_masks[f].at(y, x) > 0.5;
            }
            if (!inside) continue;
            ++gt_dyn;
            hit += g.label == Label::Dynamic;
        }
        if (gt_dyn > 0) res.dynamic_recall = static_cast<double>(hit) / gt_dyn;
    }

    if (timing_renders > 0 && !ds.frames.empty()) {
        std::vector<double> times;
        for (int k = 0; k < timing_renders; ++k) {
            const double a = now_ms();
            joint_render(model, ds.frames[k % ds.frames.size()].cam);
            times.push_back(now_ms() - a);
        }
        std::sort(times.begin(), times.end());
        res.median_render_ms = times[times.size() / 2];
        res.fps = res.median_render_ms > 0 ? 1000.0 / res.median_render_ms
                                           : 0.0;
    }
    return res;
}

}  // namespace evsplat
