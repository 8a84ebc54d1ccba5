#pragma once

#include <vector>

#include "evsplat/events.hpp"
#include "evsplat/image.hpp"

namespace evsplat {

struct LossWeights {
    double lambda_s = 0.2;
    double lambda_event = 5.0;
    double lambda_thres = 5.0;
};

constexpr double kLogGuard = 1e-5;

struct ScalarWithGrad {
    double value = 0.0;
    Image grad;  // w.r.t. the first image argument
};

// (1 - lambda_s) * L1 + lambda_s * (1 - SSIM) / 2, with gradient w.r.t. rendered.
ScalarWithGrad rgb_loss(const Image& rendered, const Image& gt, double lambda_s);

double ssim(const Image& a, const Image& b);
ScalarWithGrad ssim_with_grad(const Image& a, const Image& b);

double psnr(const Image& a, const Image& b);

// log(max(BT.601 luma, 1e-5)) and its adjoint.
Image log_luminance(const Image& img);

struct EventLossResult {
    double value = 0.0;
    Image d_image_t2;  // gradient w.r.t. the later image
    Image d_image_t1;  // gradient w.r.t. the earlier image
    Image d_emap;      // gradient w.r.t. the integrated event map
};

// Mean squared residual between the event-integrated brightness change and
// log-luma difference of the two images.
EventLossResult event_loss(const Image& image_t2, const Image& image_t1,
                           const Image& emap);

struct ThresholdLossResult {
    double value = 0.0;
    std::vector<double> d_thr;  // gradient w.r.t. the threshold values
};

ThresholdLossResult threshold_loss(const Image& frame_t, const Image& frame_f,
                                   const EventCountMap& ecm,
                                   const ThresholdField& thr);

// Chain an event-map gradient back to threshold values (integrate_events is
// linear in the thresholds).
std::vector<double> emap_grad_to_threshold(const EventCountMap& ecm,
                                           const Image& d_emap);

struct BlurLossResult {
    double value = 0.0;
    std::vector<Image> d_renders;
};

// Average-of-renders blur model: rgb_loss((1/n) sum I_i, gt).
BlurLossResult blur_loss(const std::vector<Image>& renders, const Image& gt_blurry,
                         double lambda_s);

double threshold_mse(const ThresholdField& est, const ThresholdField& gt);
// Restricted to entries with at least one event (event-active).
double threshold_mse_active(const ThresholdField& est, const ThresholdField& gt,
                            const EventCountMap& ecm);

}  // namespace evsplat
