#pragma once

#include <ostream>
#include <vector>

#include "evsplat/dataset.hpp"
#include "evsplat/deform.hpp"
#include "evsplat/losses.hpp"
#include "evsplat/optim.hpp"
#include "evsplat/render.hpp"

namespace evsplat {

// Threshold calibration settings. Learning rates follow the reference
// schedule scaled so total parameter travel is budget-independent.
struct CalibConfig {
    int iterations = 700;
    double lr = 2.4e-3;
    int pseudo_frames = 3;       // rendered sub-frame timestamps per interval
    int bins_per_interval = 4;   // must equal pseudo_frames + 1 for refinement
    LossWeights weights;
    double init_c = 0.2;
    int log_every = 25;
};

struct CalibLogRow {
    int iter = 0;
    double l_rgb = 0.0, l_event = 0.0, l_thres = 0.0;
    double thr_mse = -1.0;  // -1 when no ground truth is available
};

struct CalibResult {
    ThresholdField field;
    std::vector<CalibLogRow> log;
    bool diverged = false;
};

void write_calib_csv(std::ostream& os, const std::vector<CalibLogRow>& rows);

// Stage 1: Adam on the threshold field against log-luminance differences of
// consecutive RGB frames; exp-parameterized so positivity is structural.
CalibResult estimate_threshold_rgb(const std::vector<FrameSample>& frames,
                                   const EventStream& events,
                                   const CalibConfig& cfg,
                                   const ThresholdField* gt = nullptr);

// Threshold parameters and their optimizer state, shared by the refinement
// and joint stages. `thr.values` always equals exp(log_thr).
struct ThresholdParams {
    ThresholdField thr;
    std::vector<double> log_thr;
    Adam adam;

    static ThresholdParams init(int bins, int width, int height, double t0,
                                double t1, double c);
    static ThresholdParams from_field(const ThresholdField& f);
    void step(const std::vector<double>& grad_c, double lr);
};

// Model under joint optimization: labeled Gaussians, deformation MLP, and
// the threshold field.
struct JointModel {
    GaussianCloud cloud;
    DeformationField deform;
    ThresholdParams thr;
    Vec3 background = Vec3::Zero();
};

// Eq. 9: refine the threshold against events using pseudo-intermediate
// frames rendered from the frozen model; only the threshold is updated.
CalibResult refine_threshold_frozen_gs(const ThresholdField& init,
                                       const JointModel& frozen,
                                       const std::vector<FrameSample>& frames,
                                       const EventStream& events,
                                       const CalibConfig& cfg,
                                       const ThresholdField* gt = nullptr);

// Per-group optimizer state for the joint stage.
struct JointOptim {
    Adam mu, rot, log_scale, opacity, color, deform;
    void init(const JointModel& model);
    void grow(size_t n_gaussians);
    void remap(const std::vector<int>& old_index, size_t n_gaussians);
};

struct JointLrs {
    double pos = 1.6e-4;
    double rot = 1e-3;
    double scale = 5e-3;
    double opacity = 5e-2;
    double color = 2.5e-3;
    double deform = 1.6e-4;
    double thr = 1.6e-4;
};

struct JointStepResult {
    double l_rgb = 0.0, l_event = 0.0, l_thres = 0.0, total = 0.0;
};

// Event count maps accumulated once per dataset: one ECM per inter-node gap
// (pseudo-frame schedule) and one per whole RGB interval.
struct EventWindows {
    int pseudo_frames = 0, bins_per_interval = 0;
    std::vector<std::vector<EventCountMap>> gap_ecm;  // [interval][gap]
    std::vector<EventCountMap> interval_ecm;          // [interval]
};

EventWindows build_event_windows(const std::vector<FrameSample>& frames,
                                 const EventStream& events,
                                 int bins_per_interval, int pseudo_frames);

// Flags a run whose objective stops decreasing: the current value must stay
// within 5% (plus 1e-9 slack) of the best over the trailing 100 iterations.
struct DivergenceMonitor {
    std::vector<double> hist;
    bool diverged = false;
    void push(double v);
};

// Eq. 10: one optimizer step on L_rgb + lambda_e L_event + lambda_t L_thres
// with gradients to Gaussians, MLP, and the threshold simultaneously. The
// target frame's following interval (previous for the last frame) supplies
// the event windows. Throws on a non-finite loss term with a diagnostic
// breakdown. When update_threshold is false the threshold stays frozen.
JointStepResult joint_step(JointModel& model, JointOptim& optim,
                           const Dataset& ds, int frame_index,
                           const EventWindows& windows,
                           const CalibConfig& cfg, const JointLrs& lr,
                           bool update_threshold,
                           RenderGradients* adc_stats = nullptr,
                           double* deform_ms = nullptr,
                           int blur_samples = 1);

}  // namespace evsplat
