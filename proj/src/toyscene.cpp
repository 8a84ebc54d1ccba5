#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "evsplat/dataset.hpp"
#include "evsplat/losses.hpp"
#include "evsplat/rng.hpp"

namespace evsplat {
namespace {

constexpr double kEdgeSoftness = 1.5;  // px, keeps object edges fittable

struct ToyObject {
    double phase;
    double half;  // half side length, px
    Vec3 color;
};

std::vector<ToyObject> make_objects(const ToySceneConfig& cfg) {
    // Chosen for strong luminance contrast against the ~0.45 background so
    // object motion actually fires events.
    static const Vec3 palette[4] = {{0.9, 0.85, 0.3},
                                    {0.08, 0.1, 0.3},
                                    {0.95, 0.5, 0.85},
                                    {0.05, 0.25, 0.05}};
    std::vector<ToyObject> objs;
    for (int j = 0; j < cfg.n_objects; ++j) {
        ToyObject o;
        o.phase = 2.0 * M_PI * j / std::max(1, cfg.n_objects);
        o.half = cfg.width / 8.0;
        o.color = palette[j % 4];
        objs.push_back(o);
    }
    return objs;
}

void object_center(const ToySceneConfig& cfg, const ToyObject& o, double t,
                   double* cx, double* cy) {
    *cx = cfg.width * (0.5 + 0.25 * std::sin(2.0 * M_PI * cfg.speed * t + o.phase));
    *cy = cfg.height *
          (0.5 + 0.22 * std::cos(M_PI * cfg.speed * t + o.phase + 0.4));
}

double object_alpha(const ToyObject& o, double dx, double dy) {
    const double m = std::max(std::abs(dx), std::abs(dy));
    return std::clamp((o.half - m) / kEdgeSoftness + 0.5, 0.0, 1.0);
}

Vec3 background(const ToySceneConfig& cfg, int x, int y) {
    const double u = static_cast<double>(x) / cfg.width;
    const double v = static_cast<double>(y) / cfg.height;
    return {0.42 + 0.18 * std::sin(2.0 * M_PI * u + 0.7) * std::cos(2.0 * M_PI * v),
            0.38 + 0.20 * (u + v) / 2.0,
            0.45 + 0.15 * std::cos(2.0 * M_PI * (u - v))};
}

// Triangle wave over interval index: log-brightness ramps linearly up one
// interval, down the next. Multiplier stays <= 1 so colors remain in range.
double flicker_multiplier(const ToySceneConfig& cfg, double t) {
    if (cfg.flicker_amp <= 0.0) return 1.0;
    const double s = t * (cfg.n_frames - 1);
    const double p = std::fmod(s, 2.0);
    const double tri = p < 1.0 ? p : 2.0 - p;
    return std::exp(cfg.flicker_amp * (tri - 1.0));
}

Image latent_frame(const ToySceneConfig& cfg, const std::vector<ToyObject>& objs,
                   double t, Image* mask) {
    Image img(cfg.width, cfg.height, 3);
    if (mask) *mask = Image(cfg.width, cfg.height, 1);
    std::vector<double> cx(objs.size()), cy(objs.size());
    for (size_t j = 0; j < objs.size(); ++j)
        object_center(cfg, objs[j], t, &cx[j], &cy[j]);
    const double flick = flicker_multiplier(cfg, t);
    for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
            Vec3 c = background(cfg, x, y);
            double cover = 0.0;
            for (size_t j = 0; j < objs.size(); ++j) {
                const double a = object_alpha(objs[j], x - cx[j], y - cy[j]);
                if (a <= 0.0) continue;
                c = (1.0 - a) * c + a * objs[j].color;
                cover = std::max(cover, a);
            }
            for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = flick * c[ch];
            if (mask) mask->at(y, x) = cover > 0.5 ? 1.0 : 0.0;
        }
    return img;
}

Camera toy_camera(const ToySceneConfig& cfg, double t) {
    Camera cam;
    cam.width = cfg.width;
    cam.height = cfg.height;
    cam.fx = cam.fy = cfg.width;
    cam.cx = (cfg.width - 1) / 2.0;
    cam.cy = (cfg.height - 1) / 2.0;
    cam.time = t;
    return cam;
}

}  // namespace

Dataset make_toy_scene(const ToySceneConfig& cfg) {
    if (cfg.n_frames < 2 || cfg.substeps < 1)
        throw std::invalid_argument("make_toy_scene: need >= 2 frames, >= 1 substep");
    const auto objs = make_objects(cfg);
    const int intervals = cfg.n_frames - 1;
    const int n_dense = intervals * cfg.substeps + 1;

    std::vector<Image> log_frames;
    std::vector<double> dense_times;
    log_frames.reserve(n_dense);
    dense_times.reserve(n_dense);
    for (int i = 0; i < n_dense; ++i) {
        const double t = static_cast<double>(i) / (n_dense - 1);
        dense_times.push_back(t);
        log_frames.push_back(log_luminance(latent_frame(cfg, objs, t, nullptr)));
    }

    SimulatorConfig sim;
    sim.c_lo = cfg.c_center - 0.5 * cfg.c_range;
    sim.c_hi = cfg.c_center + 0.5 * cfg.c_range;
    sim.polarity_sigma = cfg.polarity_sigma;
    sim.update_period_frames = cfg.update_period;
    sim.noise_fraction = cfg.noise_fraction;
    sim.gt_bins = intervals * cfg.bins_per_interval;
    sim.seed = cfg.seed;
    SimulationResult simulated = simulate_events(log_frames, dense_times, sim);

    Dataset ds;
    ds.width = cfg.width;
    ds.height = cfg.height;
    ds.events = std::move(simulated.stream);
    ds.gt_thresholds = std::move(simulated.gt_thresholds);
    ds.bbox_min = Vec3(-1.05, -1.05, 1.6);
    ds.bbox_max = Vec3(1.05, 1.05, 2.4);

    for (int i = 0; i < cfg.n_frames; ++i) {
        const double t = static_cast<double>(i) / intervals;
        FrameSample fs;
        fs.cam = toy_camera(cfg, t);
        Image mask;
        if (cfg.blurry) {
            const double exposure = 0.6 / intervals;
            fs.exposure = exposure;
            Image acc(cfg.width, cfg.height, 3);
            for (int k = 0; k < cfg.blur_latents; ++k) {
                const double off =
                    cfg.blur_latents > 1
                        ? -0.5 * exposure + exposure * k / (cfg.blur_latents - 1)
                        : 0.0;
                const double tk = std::clamp(t + off, 0.0, 1.0);
                const Image lat = latent_frame(cfg, objs, tk, nullptr);
                for (size_t q = 0; q < acc.size(); ++q)
                    acc.data[q] += lat.data[q] / cfg.blur_latents;
            }
            fs.image = std::move(acc);
            latent_frame(cfg, objs, t, &mask);  // mask from the sharp center
        } else {
            fs.image = latent_frame(cfg, objs, t, &mask);
        }
        ds.frames.push_back(std::move(fs));
        ds.gt_masks.push_back(std::move(mask));
    }

    // Held-out sharp frames at interval midpoints, spread across the span.
    for (int k = 0; k < cfg.n_heldout; ++k) {
        const int interval =
            cfg.n_heldout > 1 ? k * (intervals - 1) / (cfg.n_heldout - 1) : intervals / 2;
        const double t = (interval + 0.5) / intervals;
        FrameSample fs;
        fs.cam = toy_camera(cfg, t);
        fs.image = latent_frame(cfg, objs, t, nullptr);
        ds.heldout.push_back(std::move(fs));
    }
    return ds;
}

}  // namespace evsplat
