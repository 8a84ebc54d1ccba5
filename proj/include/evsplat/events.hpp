#pragma once

#include <cstdint>
#include <vector>

#include "evsplat/image.hpp"

namespace evsplat {

struct Event {
    double t = 0.0;   // seconds
    uint16_t x = 0, y = 0;
    int8_t p = 1;     // +1 or -1
};

struct EventStream {
    int width = 0, height = 0;
    std::vector<Event> events;  // sorted by t nondecreasing

    void validate() const;
};

// Per-bin, per-polarity, per-pixel event counts over [t_start, t_end).
// Polarity index 0 = positive, 1 = negative.
struct EventCountMap {
    int bins = 0, width = 0, height = 0;
    double t_start = 0.0, t_end = 0.0;
    std::vector<uint32_t> counts;      // B x 2 x H x W
    uint64_t ignored = 0;              // events outside the window

    size_t idx(int b, int p, int y, int x) const {
        return ((static_cast<size_t>(b) * 2 + p) * height + y) * width + x;
    }
    uint32_t at(int b, int p, int y, int x) const { return counts[idx(b, p, y, x)]; }
    bool layout_matches(int b, int w, int h, double ts, double te) const {
        return bins == b && width == w && height == h && t_start == ts && t_end == te;
    }
};

// Per-bin, per-polarity, per-pixel contrast thresholds (log-brightness units).
struct ThresholdField {
    int bins = 0, width = 0, height = 0;
    double t_start = 0.0, t_end = 0.0;
    std::vector<double> values;  // B x 2 x H x W, strictly positive

    static ThresholdField constant(int b, int w, int h, double ts, double te,
                                   double value);
    size_t idx(int b, int p, int y, int x) const {
        return ((static_cast<size_t>(b) * 2 + p) * height + y) * width + x;
    }
    double at(int b, int p, int y, int x) const { return values[idx(b, p, y, x)]; }

    // Restriction to [ts, te); bin edges must align with the global grid.
    ThresholdField slice(double ts, double te) const;
    int bin_of(double t) const;
};

struct SimulatorConfig {
    double c_lo = 0.1, c_hi = 0.3;       // base threshold range
    double polarity_mu = 1.0, polarity_sigma = 0.1;  // C_n = C_p * n
    int update_period_frames = 50;        // temporal threshold update period
    double noise_fraction = 0.0;          // fraction of pixels with noise events
    int gt_bins = 64;                     // bins of the ground-truth field
    uint64_t seed = 0;
};

struct SimulationResult {
    EventStream stream;
    ThresholdField gt_thresholds;
};

EventCountMap accumulate_ecm(const EventStream& stream, double t_start,
                             double t_end, int bins, int width, int height);

// E_hat[x,y] = sum_b counts[b,+]*C[b,+] - counts[b,-]*C[b,-].
Image integrate_events(const EventCountMap& ecm, const ThresholdField& thr);

// Threshold-varying event simulator over a sequence of log-brightness frames.
SimulationResult simulate_events(const std::vector<Image>& log_frames,
                                 const std::vector<double>& timestamps,
                                 const SimulatorConfig& cfg);

}  // namespace evsplat
