#pragma once

#include <optional>
#include <vector>

#include "evsplat/events.hpp"
#include "evsplat/image.hpp"
#include "evsplat/scene.hpp"

namespace evsplat {

// One RGB observation; cam.time carries the normalized timestamp.
struct FrameSample {
    Image image;       // H x W x 3, linear
    Camera cam;
    double exposure = 0.0;  // exposure window length (0 = sharp)
};

struct Dataset {
    int width = 0, height = 0;
    std::vector<FrameSample> frames;    // training views, time-sorted
    std::vector<FrameSample> heldout;   // evaluation views
    EventStream events;
    std::optional<ThresholdField> gt_thresholds;
    std::vector<Image> gt_masks;        // per training frame, H x W in {0,1}
    Vec3 bbox_min = Vec3(-1, -1, 1.5);  // random-init bounds
    Vec3 bbox_max = Vec3(1, 1, 2.5);

    double t_start() const { return frames.front().cam.time; }
    double t_end() const { return frames.back().cam.time; }
    void validate() const;  // throws std::invalid_argument
};

struct ToySceneConfig {
    int width = 32, height = 32;
    int n_frames = 10;       // training RGB frames
    int n_heldout = 3;       // held-out frames at interval midpoints
    int substeps = 12;       // dense simulator frames per RGB interval
    int n_objects = 1;       // moving soft squares
    double speed = 1.0;      // motion speed multiplier
    double c_center = 0.2;   // threshold distribution center
    double c_range = 0.2;    // c ~ U(center - range/2, center + range/2)
    double polarity_sigma = 0.1;
    double noise_fraction = 0.0;
    int bins_per_interval = 4;   // GT threshold bins per RGB interval
    int update_period = 12;      // simulator threshold update period (frames)
    // Global log-brightness triangle-wave modulation (peak-to-peak in log
    // units, alternating direction each interval). Gives every pixel a
    // monotone linear ramp per frame pair — dense, evenly spread events,
    // which is the regime threshold calibration needs.
    double flicker_amp = 0.0;
    bool blurry = false;         // average 8 latent frames per training view
    int blur_latents = 8;
    uint64_t seed = 7;
};

// Procedural dynamic scene: a smooth static background plus moving soft
// squares, observed by a fixed pinhole camera; events simulated from the
// dense latent sequence.
Dataset make_toy_scene(const ToySceneConfig& cfg);

}  // namespace evsplat
