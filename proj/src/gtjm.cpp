#include "evsplat/gtjm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "evsplat/pipeline.hpp"

namespace evsplat {
namespace {

size_t bin_stride(const ThresholdField& f) {
    return 2 * static_cast<size_t>(f.height) * f.width;
}

void check_frames(const std::vector<FrameSample>& frames) {
    if (frames.size() < 2)
        throw std::invalid_argument("threshold estimation needs >= 2 frames");
    for (size_t i = 1; i < frames.size(); ++i)
        if (!(frames[i].cam.time > frames[i - 1].cam.time))
            throw std::invalid_argument("frame timestamps must increase");
}

double field_mse(const ThresholdField& est, const ThresholdField* gt) {
    return gt ? threshold_mse(est, *gt) : -1.0;
}

}  // namespace

void DivergenceMonitor::push(double v) {
    if (!std::isfinite(v)) {
        diverged = true;
        return;
    }
    hist.push_back(v);
    // "Decreases over any 100-iteration window": compare against the value
    // 100 pushes ago, with a 5% slack for stochastic per-frame noise. A run
    // that is genuinely diverging grows across the window; one that merely
    // wobbles around its floor does not.
    if (hist.size() > 100) {
        const double ref = hist[hist.size() - 101];
        if (v > ref * 1.05 + 1e-9) diverged = true;
    }
}

void write_calib_csv(std::ostream& os, const std::vector<CalibLogRow>& rows) {
    os << "iter,L_rgb,L_event,L_thres,thr_MSE\n";
    for (const auto& r : rows)
        os << r.iter << ',' << r.l_rgb << ',' << r.l_event << ',' << r.l_thres
           << ',' << r.thr_mse << '\n';
}

ThresholdParams ThresholdParams::init(int bins, int width, int height,
                                      double t0, double t1, double c) {
    ThresholdParams p;
    p.thr = ThresholdField::constant(bins, width, height, t0, t1, c);
    p.log_thr.assign(p.thr.values.size(), std::log(c));
    p.adam = Adam(p.log_thr.size());
    return p;
}

ThresholdParams ThresholdParams::from_field(const ThresholdField& f) {
    ThresholdParams p;
    p.thr = f;
    p.log_thr.resize(f.values.size());
    for (size_t i = 0; i < f.values.size(); ++i)
        p.log_thr[i] = std::log(f.values[i]);
    p.adam = Adam(p.log_thr.size());
    return p;
}

void ThresholdParams::step(const std::vector<double>& grad_c, double lr) {
    std::vector<double> grad_u(log_thr.size());
    for (size_t i = 0; i < log_thr.size(); ++i)
        grad_u[i] = grad_c[i] * thr.values[i];  // dC/du = C
    adam.step(log_thr, grad_u, lr);
    for (size_t i = 0; i < log_thr.size(); ++i)
        thr.values[i] = std::exp(log_thr[i]);
}

CalibResult estimate_threshold_rgb(const std::vector<FrameSample>& frames,
                                   const EventStream& events,
                                   const CalibConfig& cfg,
                                   const ThresholdField* gt) {
    check_frames(frames);
    const int n = static_cast<int>(frames.size());
    const int intervals = n - 1, bpi = cfg.bins_per_interval;
    const int W = events.width, H = events.height;
    const double t0 = frames.front().cam.time, t1 = frames.back().cam.time;

    ThresholdParams params =
        ThresholdParams::init(intervals * bpi, W, H, t0, t1, cfg.init_c);
    const size_t stride = bin_stride(params.thr);

    std::vector<EventCountMap> pair_ecm;
    for (int i = 0; i < intervals; ++i)
        pair_ecm.push_back(accumulate_ecm(events, frames[i].cam.time,
                                          frames[i + 1].cam.time, bpi, W, H));

    CalibResult out;
    DivergenceMonitor monitor;
    std::vector<double> grad_c(params.log_thr.size());
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        std::fill(grad_c.begin(), grad_c.end(), 0.0);
        double total = 0.0;
        for (int i = 0; i < intervals; ++i) {
            const ThresholdField slice = params.thr.slice(
                frames[i].cam.time, frames[i + 1].cam.time);
            const ThresholdLossResult res = threshold_loss(
                frames[i].image, frames[i + 1].image, pair_ecm[i], slice);
            total += res.value;
            const size_t off = static_cast<size_t>(i) * bpi * stride;
            for (size_t k = 0; k < res.d_thr.size(); ++k)
                grad_c[off + k] += res.d_thr[k];
        }
        monitor.push(total);
        params.step(grad_c, cfg.lr);
        if (iter % cfg.log_every == 0 || iter + 1 == cfg.iterations)
            out.log.push_back(
                {iter, 0.0, 0.0, total, field_mse(params.thr, gt)});
    }
    out.field = std::move(params.thr);
    out.diverged = monitor.diverged;
    return out;
}

EventWindows build_event_windows(const std::vector<FrameSample>& frames,
                                 const EventStream& events,
                                 int bins_per_interval, int pseudo_frames) {
    check_frames(frames);
    const int gaps = pseudo_frames + 1;
    if (bins_per_interval % gaps != 0)
        throw std::invalid_argument(
            "pseudo-frame schedule must align with the threshold bin grid");
    EventWindows w;
    w.pseudo_frames = pseudo_frames;
    w.bins_per_interval = bins_per_interval;
    const int W = events.width, H = events.height;
    for (size_t i = 0; i + 1 < frames.size(); ++i) {
        const double ta = frames[i].cam.time, tb = frames[i + 1].cam.time;
        w.interval_ecm.push_back(
            accumulate_ecm(events, ta, tb, bins_per_interval, W, H));
        std::vector<EventCountMap> per_gap;
        for (int g = 0; g < gaps; ++g) {
            const double ga = ta + (tb - ta) * g / gaps;
            const double gb = ta + (tb - ta) * (g + 1) / gaps;
            per_gap.push_back(
                accumulate_ecm(events, ga, gb, bins_per_interval / gaps, W, H));
        }
        w.gap_ecm.push_back(std::move(per_gap));
    }
    return w;
}

CalibResult refine_threshold_frozen_gs(const ThresholdField& init,
                                       const JointModel& frozen,
                                       const std::vector<FrameSample>& frames,
                                       const EventStream& events,
                                       const CalibConfig& cfg,
                                       const ThresholdField* gt) {
    check_frames(frames);
    const int intervals = static_cast<int>(frames.size()) - 1;
    const int bpi = cfg.bins_per_interval;
    if (init.bins != intervals * bpi)
        throw std::invalid_argument(
            "refine_threshold_frozen_gs: field grid does not match frames");
    if (init.width != events.width || init.height != events.height)
        throw std::invalid_argument(
            "refine_threshold_frozen_gs: resolution mismatch");

    const EventWindows windows =
        build_event_windows(frames, events, bpi, cfg.pseudo_frames);
    const int gaps = cfg.pseudo_frames + 1;

    // The model is frozen: render every pseudo-intermediate frame once.
    // node_images[i][j] is node j of interval i; RGB endpoints use ground
    // truth, interior nodes use renders.
    std::vector<std::vector<const Image*>> node_images(intervals);
    std::vector<Image> rendered;
    rendered.reserve(static_cast<size_t>(intervals) * cfg.pseudo_frames);
    for (int i = 0; i < intervals; ++i) {
        const double ta = frames[i].cam.time, tb = frames[i + 1].cam.time;
        node_images[i].resize(gaps + 1, nullptr);
        node_images[i][0] = &frames[i].image;
        node_images[i][gaps] = &frames[i + 1].image;
        for (int j = 1; j < gaps; ++j) {
            Camera cam = frames[i].cam;
            cam.time = ta + (tb - ta) * j / gaps;
            rendered.push_back(joint_render(frozen, cam).color);
            node_images[i][j] = &rendered.back();
        }
    }

    ThresholdParams params = ThresholdParams::from_field(init);
    const size_t stride = bin_stride(params.thr);
    const int n_gap_pairs = intervals * gaps;

    CalibResult out;
    DivergenceMonitor monitor;
    std::vector<double> grad_c(params.log_thr.size());
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        std::fill(grad_c.begin(), grad_c.end(), 0.0);
        double l_event = 0.0, l_thres = 0.0;
        for (int i = 0; i < intervals; ++i) {
            const double ta = frames[i].cam.time, tb = frames[i + 1].cam.time;
            for (int g = 0; g < gaps; ++g) {
                const EventCountMap& ecm = windows.gap_ecm[i][g];
                const ThresholdField slice =
                    params.thr.slice(ecm.t_start, ecm.t_end);
                const Image emap = integrate_events(ecm, slice);
                EventLossResult el = event_loss(*node_images[i][g + 1],
                                                *node_images[i][g], emap);
                l_event += el.value / n_gap_pairs;
                for (double& v : el.d_emap.data) v /= n_gap_pairs;
                const std::vector<double> d_slice =
                    emap_grad_to_threshold(ecm, el.d_emap);
                const size_t off = params.thr.bin_of(ecm.t_start) * stride;
                for (size_t k = 0; k < d_slice.size(); ++k)
                    grad_c[off + k] += cfg.weights.lambda_event * d_slice[k];
            }
            const ThresholdField slice = params.thr.slice(ta, tb);
            const ThresholdLossResult res = threshold_loss(
                frames[i].image, frames[i + 1].image,
                windows.interval_ecm[i], slice);
            l_thres += res.value / intervals;
            const size_t off = static_cast<size_t>(i) * bpi * stride;
            for (size_t k = 0; k < res.d_thr.size(); ++k)
                grad_c[off + k] +=
                    cfg.weights.lambda_thres * res.d_thr[k] / intervals;
        }
        const double total = cfg.weights.lambda_thres * l_thres +
                             cfg.weights.lambda_event * l_event;
        monitor.push(total);
        params.step(grad_c, cfg.lr);
        if (iter % cfg.log_every == 0 || iter + 1 == cfg.iterations)
            out.log.push_back(
                {iter, 0.0, l_event, l_thres, field_mse(params.thr, gt)});
    }
    out.field = std::move(params.thr);
    out.diverged = monitor.diverged;
    return out;
}

void JointOptim::init(const JointModel& model) {
    const size_t n = model.cloud.size();
    mu = Adam(3 * n);
    rot = Adam(4 * n);
    log_scale = Adam(3 * n);
    opacity = Adam(n);
    color = Adam(3 * n);
    size_t p = 0;
    for (const auto& w : model.deform.weights()) p += w.size();
    for (const auto& b : model.deform.biases()) p += b.size();
    deform = Adam(p);
}

void JointOptim::grow(size_t n) {
    mu.grow(3 * n);
    rot.grow(4 * n);
    log_scale.grow(3 * n);
    opacity.grow(n);
    color.grow(3 * n);
}

void JointOptim::remap(const std::vector<int>& old_index, size_t n) {
    auto expand = [&](int k) {
        std::vector<int> e(k * old_index.size());
        for (size_t i = 0; i < old_index.size(); ++i)
            for (int c = 0; c < k; ++c)
                e[k * i + c] = old_index[i] < 0 ? -1 : k * old_index[i] + c;
        return e;
    };
    mu.remap(expand(3), 3 * n);
    rot.remap(expand(4), 4 * n);
    log_scale.remap(expand(3), 3 * n);
    opacity.remap(expand(1), n);
    color.remap(expand(3), 3 * n);
}

JointStepResult joint_step(JointModel& model, JointOptim& optim,
                           const Dataset& ds, int frame_index,
                           const EventWindows& windows, const CalibConfig& cfg,
                           const JointLrs& lr, bool update_threshold,
                           RenderGradients* adc_stats, double* deform_ms,
                           int blur_samples) {
    const auto& frames = ds.frames;
    const int n = static_cast<int>(frames.size());
    const int interval = frame_index < n - 1 ? frame_index : frame_index - 1;
    const double ta = frames[interval].cam.time;
    const double tb = frames[interval + 1].cam.time;
    const bool use_events =
        cfg.weights.lambda_event > 0.0 || cfg.weights.lambda_thres > 0.0;

    RenderGradients gauss;
    gauss.resize(model.cloud.size());
    MlpGradients d_mlp = model.deform.zero_gradients();
    std::vector<double> grad_c(model.thr.log_thr.size(), 0.0);

    JointStepResult res;

    // RGB (or blur-formation) term on the target frame.
    const FrameSample& target = frames[frame_index];
    if (blur_samples > 1 && target.exposure > 0.0) {
        std::vector<RenderedImage> renders(blur_samples);
        std::vector<GaussianCloud> merged(blur_samples);
        std::vector<DeformCache> caches(blur_samples);
        std::vector<std::vector<int>> dyn(blur_samples);
        std::vector<Camera> cams(blur_samples, target.cam);
        std::vector<Image> colors;
        for (int k = 0; k < blur_samples; ++k) {
            const double off = -0.5 * target.exposure +
                               target.exposure * k / (blur_samples - 1);
            cams[k].time = std::clamp(target.cam.time + off,
                                      ds.t_start(), ds.t_end());
            renders[k] = joint_render(model, cams[k], deform_ms, &merged[k],
                                      &caches[k], &dyn[k]);
            colors.push_back(renders[k].color);
        }
        const BlurLossResult bl =
            blur_loss(colors, target.image, cfg.weights.lambda_s);
        res.l_rgb = bl.value;
        for (int k = 0; k < blur_samples; ++k) {
            RenderGradients g =
                joint_backward(model, cams[k], bl.d_renders[k], merged[k],
                               caches[k], dyn[k], &d_mlp);
            gauss.add(g);
        }
    } else {
        GaussianCloud merged;
        DeformCache cache;
        std::vector<int> dyn;
        const RenderedImage r =
            joint_render(model, target.cam, deform_ms, &merged, &cache, &dyn);
        const ScalarWithGrad rl =
            rgb_loss(r.color, target.image, cfg.weights.lambda_s);
        res.l_rgb = rl.value;
        gauss.add(joint_backward(model, target.cam, rl.grad, merged, cache,
                                 dyn, &d_mlp));
    }

    if (use_events) {
        const int gaps = cfg.pseudo_frames + 1;
        const size_t stride = bin_stride(model.thr.thr);

        // Node images across the interval: ground truth at the endpoints,
        // fresh renders at the pseudo timestamps.
        std::vector<const Image*> node(gaps + 1, nullptr);
        node[0] = &frames[interval].image;
        node[gaps] = &frames[interval + 1].image;
        std::vector<RenderedImage> renders(gaps + 1);
        std::vector<GaussianCloud> merged(gaps + 1);
        std::vector<DeformCache> caches(gaps + 1);
        std::vector<std::vector<int>> dyn(gaps + 1);
        std::vector<Camera> cams(gaps + 1, frames[interval].cam);
        std::vector<Image> node_upstream(gaps + 1);
        for (int j = 1; j < gaps; ++j) {
            cams[j].time = ta + (tb - ta) * j / gaps;
            renders[j] = joint_render(model, cams[j], deform_ms, &merged[j],
                                      &caches[j], &dyn[j]);
            node[j] = &renders[j].color;
            node_upstream[j] = Image(ds.width, ds.height, 3);
        }

        for (int g = 0; g < gaps; ++g) {
            const EventCountMap& ecm = windows.gap_ecm[interval][g];
            const ThresholdField slice =
                model.thr.thr.slice(ecm.t_start, ecm.t_end);
            const Image emap = integrate_events(ecm, slice);
            EventLossResult el = event_loss(*node[g + 1], *node[g], emap);
            res.l_event += el.value / gaps;
            const double w = cfg.weights.lambda_event / gaps;
            if (update_threshold) {
                for (double& v : el.d_emap.data) v *= w;
                const std::vector<double> d_slice =
                    emap_grad_to_threshold(ecm, el.d_emap);
                const size_t off = model.thr.thr.bin_of(ecm.t_start) * stride;
                for (size_t k = 0; k < d_slice.size(); ++k)
                    grad_c[off + k] += d_slice[k];
            }
            if (g + 1 < gaps + 1 && node_upstream[g + 1].size())
                for (size_t q = 0; q < node_upstream[g + 1].size(); ++q)
                    node_upstream[g + 1].data[q] += w * el.d_image_t2.data[q];
            if (g > 0 && node_upstream[g].size())
                for (size_t q = 0; q < node_upstream[g].size(); ++q)
                    node_upstream[g].data[q] += w * el.d_image_t1.data[q];
        }
        for (int j = 1; j < gaps; ++j)
            gauss.add(joint_backward(model, cams[j], node_upstream[j],
                                     merged[j], caches[j], dyn[j], &d_mlp));

        // Threshold modeling term over the RGB pair.
        const ThresholdField slice = model.thr.thr.slice(ta, tb);
        const ThresholdLossResult tl =
            threshold_loss(frames[interval].image, frames[interval + 1].image,
                           windows.interval_ecm[interval], slice);
        res.l_thres = tl.value;
        if (update_threshold) {
            const size_t off =
                static_cast<size_t>(interval) * windows.bins_per_interval *
                stride;
            for (size_t k = 0; k < tl.d_thr.size(); ++k)
                grad_c[off + k] += cfg.weights.lambda_thres * tl.d_thr[k];
        }
    }

    res.total = res.l_rgb + cfg.weights.lambda_event * res.l_event +
                cfg.weights.lambda_thres * res.l_thres;
    if (!std::isfinite(res.l_rgb) || !std::isfinite(res.l_event) ||
        !std::isfinite(res.l_thres)) {
        std::ostringstream msg;
        msg << "joint_step: non-finite loss at frame " << frame_index
            << ": L_rgb=" << res.l_rgb << " L_event=" << res.l_event
            << " L_thres=" << res.l_thres;
        throw std::runtime_error(msg.str());
    }

    if (adc_stats) {
        if (adc_stats->pos_grad_accum.size() != model.cloud.size())
            adc_stats->resize(model.cloud.size());
        for (size_t i = 0; i < model.cloud.size(); ++i) {
            adc_stats->pos_grad_accum[i] += gauss.pos_grad_accum[i];
            adc_stats->pos_grad_count[i] += gauss.pos_grad_count[i];
        }
    }

    apply_gauss_step(model.cloud, gauss, optim, lr);
    apply_deform_step(model.deform, d_mlp, optim.deform, lr.deform);
    if (update_threshold && use_events) model.thr.step(grad_c, lr.thr);
    return res;
}

}  // namespace evsplat
