#include "doctest.h"

#include <cmath>

#include "evsplat/dataset.hpp"
#include "evsplat/gtjm.hpp"
#include "evsplat/losses.hpp"
#include "testutil.hpp"

using namespace evsplat;
namespace tu = evsplat::testutil;

namespace {

// Hand-built calibration fixture: one pixel ramps its log-luminance by an
// exact multiple of C per frame pair; events are placed at bin centers so
// the quadratic has its unique minimum exactly at C.
struct RampFixture {
    std::vector<FrameSample> frames;
    EventStream events;
    double c = 0.2;
    int intervals = 2, bpi = 4;

    RampFixture() {
        events.width = 2;
        events.height = 1;
        const double l0 = 0.05;  // linear luminance start
        for (int i = 0; i <= intervals; ++i) {
            FrameSample f;
            f.cam = tu::test_camera(2, 1);
            f.cam.time = static_cast<double>(i) / intervals;
            f.image = Image(2, 1, 3);
            // Per pair the log-luminance rises by exactly bpi * c.
            const double lum = l0 * std::exp(i * bpi * c);
            for (int ch = 0; ch < 3; ++ch) {
                f.image.at(0, 0, ch) = lum;
                f.image.at(0, 1, ch) = 0.3;  // static pixel, no events
            }
            frames.push_back(std::move(f));
        }
        // One positive event per bin at the bin center on pixel 0.
        const int bins = intervals * bpi;
        for (int b = 0; b < bins; ++b)
            events.events.push_back(
                {(b + 0.5) / bins, 0, 0, 1});
    }
};

Dataset tiny_scene(uint64_t seed = 21) {
    ToySceneConfig sc;
    sc.width = 12;
    sc.height = 12;
    sc.n_frames = 4;
    sc.substeps = 8;
    sc.update_period = 8;
    sc.seed = seed;
    return make_toy_scene(sc);
}

JointModel tiny_model(const Dataset& ds, uint64_t seed = 22) {
    Rng rng(seed);
    JointModel m;
    m.cloud = tu::random_cloud(rng, 12);
    for (size_t i = 0; i < m.cloud.size(); ++i)
        m.cloud.gaussians[i].label = i % 3 ? Label::Static : Label::Dynamic;
    m.deform = DeformationField(1, 8, rng);
    const int bins = (static_cast<int>(ds.frames.size()) - 1) * 4;
    m.thr = ThresholdParams::init(bins, ds.width, ds.height, ds.t_start(),
                                  ds.t_end(), 0.2);
    m.background = Vec3(0.2, 0.2, 0.2);
    return m;
}

bool same_cloud(const GaussianCloud& a, const GaussianCloud& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            if (a.gaussians[i].mu[k] != b.gaussians[i].mu[k]) return false;
            if (a.gaussians[i].log_scale[k] != b.gaussians[i].log_scale[k])
                return false;
            if (a.gaussians[i].color[k] != b.gaussians[i].color[k]) return false;
        }
        for (int k = 0; k < 4; ++k)
            if (a.gaussians[i].rot[k] != b.gaussians[i].rot[k]) return false;
        if (a.gaussians[i].opacity_logit != b.gaussians[i].opacity_logit)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("stage-1 recovers an exactly representable constant threshold") {
    RampFixture fx;
    CalibConfig cfg;
    cfg.iterations = 4000;
    cfg.lr = 1e-2;
    cfg.bins_per_interval = fx.bpi;
    const CalibResult r = estimate_threshold_rgb(fx.frames, fx.events, cfg);
    const int bins = fx.intervals * fx.bpi;
    // Every positive-polarity bin at pixel 0 is active with one event and the
    // pair residual vanishes exactly at C.
    for (int b = 0; b < bins; ++b) {
        const size_t idx =
            (static_cast<size_t>(b) * 2 + 0) * fx.events.height * fx.events.width;
        CHECK(std::abs(r.field.values[idx] - fx.c) < 1e-3);
    }
}

TEST_CASE("stage-1 leaves event-free pixels at the initial value") {
    RampFixture fx;
    CalibConfig cfg;
    cfg.iterations = 100;
    cfg.bins_per_interval = fx.bpi;
    const CalibResult r = estimate_threshold_rgb(fx.frames, fx.events, cfg);
    const int bins = fx.intervals * fx.bpi;
    for (int b = 0; b < bins; ++b)
        for (int p = 0; p < 2; ++p) {
            // Pixel 1 never fires.
            const size_t idx =
                (static_cast<size_t>(b) * 2 + p) * 2 + 1;
            CHECK(r.field.values[idx] == cfg.init_c);
        }
}

TEST_CASE("stage-1 requires at least two frames") {
    RampFixture fx;
    fx.frames.resize(1);
    CalibConfig cfg;
    CHECK_THROWS_AS(estimate_threshold_rgb(fx.frames, fx.events, cfg),
                    std::invalid_argument);
}

TEST_CASE("stage-1 beats the constant baseline on a flicker scene") {
    ToySceneConfig sc;
    sc.width = 16;
    sc.height = 16;
    sc.n_frames = 5;
    sc.substeps = 16;
    sc.update_period = 16;
    sc.n_objects = 0;
    sc.flicker_amp = 2.0;
    sc.noise_fraction = 0.05;
    sc.seed = 23;
    const Dataset ds = make_toy_scene(sc);
    CalibConfig cfg;
    cfg.iterations = 400;
    const CalibResult r = estimate_threshold_rgb(ds.frames, ds.events, cfg,
                                                 &*ds.gt_thresholds);
    const ThresholdField& gt = *ds.gt_thresholds;
    const ThresholdField cb = ThresholdField::constant(
        gt.bins, gt.width, gt.height, gt.t_start, gt.t_end, 0.2);
    const EventCountMap ecm = accumulate_ecm(ds.events, gt.t_start, gt.t_end,
                                             gt.bins, gt.width, gt.height);
    CHECK(threshold_mse_active(r.field, gt, ecm) <
          threshold_mse_active(cb, gt, ecm));
    CHECK(threshold_mse(r.field, gt) < threshold_mse(cb, gt));
}

TEST_CASE("threshold params are positive by construction") {
    ThresholdParams p = ThresholdParams::init(2, 3, 3, 0.0, 1.0, 0.2);
    for (double v : p.thr.values) CHECK(v == doctest::Approx(0.2));
    for (size_t i = 0; i < p.log_thr.size(); ++i)
        CHECK(p.log_thr[i] == doctest::Approx(std::log(0.2)));
    // Hammer with huge gradients: positivity must survive.
    std::vector<double> g(p.log_thr.size(), 1e6);
    for (int it = 0; it < 50; ++it) p.step(g, 0.5);
    for (double v : p.thr.values) {
        CHECK(v > 0.0);
        CHECK(std::isfinite(v));
        }
    ThresholdParams q = ThresholdParams::from_field(p.thr);
    for (size_t i = 0; i < q.log_thr.size(); ++i)
        CHECK(q.log_thr[i] == doctest::Approx(std::log(p.thr.values[i])));
}

TEST_CASE("event windows partition the event stream") {
    const Dataset ds = tiny_scene();
    const EventWindows w = build_event_windows(ds.frames, ds.events, 4, 3);
    REQUIRE(w.gap_ecm.size() == ds.frames.size() - 1);
    uint64_t gap_total = 0, interval_total = 0;
    for (size_t i = 0; i < w.gap_ecm.size(); ++i) {
        REQUIRE(w.gap_ecm[i].size() == 4);  // K + 1 gaps
        for (const auto& e : w.gap_ecm[i])
            for (uint32_t c : e.counts) gap_total += c;
        for (uint32_t c : w.interval_ecm[i].counts) interval_total += c;
    }
    CHECK(gap_total == interval_total);
    CHECK(interval_total == ds.events.events.size());
}

TEST_CASE("event windows reject a misaligned pseudo-frame schedule") {
    const Dataset ds = tiny_scene();
    CHECK_THROWS_AS(build_event_windows(ds.frames, ds.events, 4, 2),
                    std::invalid_argument);
    CHECK_NOTHROW(build_event_windows(ds.frames, ds.events, 4, 1));
}

TEST_CASE("refine with zero pseudo-frames continues the stage-1 estimator") {
    RampFixture fx;
    CalibConfig est_cfg;
    est_cfg.iterations = 50;
    est_cfg.bins_per_interval = fx.bpi;
    const CalibResult stage1 = estimate_threshold_rgb(fx.frames, fx.events,
                                                      est_cfg);

    // Continuation A: more estimator iterations from scratch.
    CalibConfig long_cfg = est_cfg;
    long_cfg.iterations = 100;
    const CalibResult direct = estimate_threshold_rgb(fx.frames, fx.events,
                                                      long_cfg);

    // Continuation B: frozen-GS refinement with K = 0 and the event term
    // disabled; lambda_thres cancels the per-interval averaging. Optimizer
    // state resets, so expect qualitative agreement, not bit equality.
    CalibConfig ref_cfg = est_cfg;
    ref_cfg.iterations = 5000;
    ref_cfg.pseudo_frames = 0;
    ref_cfg.weights.lambda_event = 0.0;
    ref_cfg.weights.lambda_thres = static_cast<double>(fx.intervals);
    JointModel dummy;  // never rendered with K = 0
    dummy.thr = ThresholdParams::from_field(stage1.field);
    const CalibResult refined = refine_threshold_frozen_gs(
        stage1.field, dummy, fx.frames, fx.events, ref_cfg);
    // Both should head to the same minimum (exact C on active bins).
    const int bins = fx.intervals * fx.bpi;
    for (int b = 0; b < bins; ++b) {
        const size_t idx = (static_cast<size_t>(b) * 2 + 0) * 2;
        CHECK(std::abs(refined.field.values[idx] - fx.c) < 5e-3);
    }
    CHECK(direct.log.back().l_thres <= stage1.log.back().l_thres);
}

TEST_CASE("joint step with zero event weights ignores the event machinery") {
    const Dataset ds = tiny_scene();
    JointModel a = tiny_model(ds);
    JointModel b = a;
    JointOptim oa, ob;
    oa.init(a);
    ob.init(b);

    CalibConfig cfg;
    cfg.weights.lambda_event = 0.0;
    cfg.weights.lambda_thres = 0.0;
    const EventWindows with = build_event_windows(ds.frames, ds.events, 4, 3);
    const EventWindows without;
    JointLrs lr;

    const JointStepResult ra = joint_step(a, oa, ds, 1, with, cfg, lr, false);
    const JointStepResult rb = joint_step(b, ob, ds, 1, without, cfg, lr, false);
    CHECK(ra.l_rgb == rb.l_rgb);
    CHECK(ra.total == rb.total);
    CHECK(same_cloud(a.cloud, b.cloud));
    for (size_t i = 0; i < a.thr.log_thr.size(); ++i)
        CHECK(a.thr.log_thr[i] == b.thr.log_thr[i]);
}

TEST_CASE("joint step reports per-term losses and moves the threshold") {
    const Dataset ds = tiny_scene();
    JointModel m = tiny_model(ds);
    JointOptim o;
    o.init(m);
    CalibConfig cfg;
    const EventWindows w = build_event_windows(ds.frames, ds.events, 4, 3);
    JointLrs lr;

    const std::vector<double> before = m.thr.log_thr;
    const JointStepResult r = joint_step(m, o, ds, 1, w, cfg, lr, true);
    CHECK(r.l_rgb > 0.0);
    CHECK(r.l_event >= 0.0);
    CHECK(r.l_thres >= 0.0);
    CHECK(r.total == doctest::Approx(r.l_rgb +
                                     cfg.weights.lambda_event * r.l_event +
                                     cfg.weights.lambda_thres * r.l_thres));
    bool moved = false;
    for (size_t i = 0; i < before.size(); ++i)
        if (m.thr.log_thr[i] != before[i]) moved = true;
    CHECK(moved);
    for (double v : m.thr.thr.values) CHECK(v > 0.0);
}

TEST_CASE("joint step keeps the threshold frozen when asked") {
    const Dataset ds = tiny_scene();
    JointModel m = tiny_model(ds);
    JointOptim o;
    o.init(m);
    CalibConfig cfg;
    const EventWindows w = build_event_windows(ds.frames, ds.events, 4, 3);
    const std::vector<double> before = m.thr.log_thr;
    joint_step(m, o, ds, 1, w, cfg, JointLrs{}, false);
    CHECK(m.thr.log_thr == before);
}

TEST_CASE("joint step aborts on a non-finite loss with a diagnostic") {
    const Dataset ds = tiny_scene();
    JointModel m = tiny_model(ds);
    m.cloud.gaussians[0].color[0] = std::numeric_limits<double>::quiet_NaN();
    JointOptim o;
    o.init(m);
    CalibConfig cfg;
    const EventWindows w = build_event_windows(ds.frames, ds.events, 4, 3);
    CHECK_THROWS_AS(joint_step(m, o, ds, 1, w, cfg, JointLrs{}, true),
                    std::runtime_error);
}

TEST_CASE("divergence monitor flags growth and NaN but not progress") {
    DivergenceMonitor ok;
    for (int i = 0; i < 300; ++i) ok.push(1.0 / (1.0 + i));
    CHECK(!ok.diverged);

    DivergenceMonitor flat;
    for (int i = 0; i < 150; ++i) flat.push(1.0 + 0.01 * std::sin(i * 0.3));
    CHECK(!flat.diverged);

    DivergenceMonitor bad;
    for (int i = 0; i < 120; ++i) bad.push(1.0);
    bad.push(1.2);
    CHECK(bad.diverged);

    DivergenceMonitor nan_case;
    nan_case.push(std::numeric_limits<double>::quiet_NaN());
    CHECK(nan_case.diverged);
}

TEST_CASE("calibration csv log is well-formed") {
    std::vector<CalibLogRow> rows = {{0, 0.1, 0.2, 0.3, 0.004},
                                     {25, 0.05, 0.1, 0.2, 0.003}};
    std::ostringstream os;
    write_calib_csv(os, rows);
    const std::string s = os.str();
    CHECK(s.find("iter") != std::string::npos);
    CHECK(s.find("L_thres") != std::string::npos);
    CHECK(std::count(s.begin(), s.end(), '\n') == 3);  // header + 2 rows
}
