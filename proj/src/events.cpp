#include "evsplat/events.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "evsplat/rng.hpp"

namespace evsplat {

void EventStream::validate() const {
    double last = -std::numeric_limits<double>::infinity();
    for (const Event& e : events) {
        if (e.x >= width || e.y >= height)
            throw std::invalid_argument("EventStream: pixel out of bounds");
        if (e.t < last)
            throw std::invalid_argument("EventStream: timestamps not sorted");
        if (e.p != 1 && e.p != -1)
            throw std::invalid_argument("EventStream: invalid polarity");
        last = e.t;
    }
}

ThresholdField ThresholdField::constant(int b, int w, int h, double ts,
                                        double te, double value) {
    ThresholdField f;
    f.bins = b;
    f.width = w;
    f.height = h;
    f.t_start = ts;
    f.t_end = te;
    f.values.assign(static_cast<size_t>(b) * 2 * h * w, value);
    return f;
}

int ThresholdField::bin_of(double t) const {
    const double dt = (t_end - t_start) / bins;
    int b = static_cast<int>(std::floor((t - t_start) / dt + 0.5));
    return std::clamp(b, 0, bins);
}

ThresholdField ThresholdField::slice(double ts, double te) const {
    const int b0 = bin_of(ts);
    const int b1 = bin_of(te);
    const double dt = (t_end - t_start) / bins;
    if (b1 <= b0)
        throw std::invalid_argument("ThresholdField::slice: empty range");
    if (std::abs(t_start + b0 * dt - ts) > 1e-9 * std::max(1.0, std::abs(ts)) ||
        std::abs(t_start + b1 * dt - te) > 1e-9 * std::max(1.0, std::abs(te)))
        throw std::invalid_argument("ThresholdField::slice: edges misaligned");
    ThresholdField out;
    out.bins = b1 - b0;
    out.width = width;
    out.height = height;
    // Keep the caller's (aligned) edges so downstream exact layout
    // comparisons against count maps built from the same window hold.
    out.t_start = ts;
    out.t_end = te;
    const size_t plane = static_cast<size_t>(2) * height * width;
    out.values.assign(values.begin() + b0 * plane, values.begin() + b1 * plane);
    return out;
}

EventCountMap accumulate_ecm(const EventStream& stream, double t_start,
                             double t_end, int bins, int width, int height) {
    if (!(t_start < t_end) || bins < 1)
        throw std::invalid_argument("accumulate_ecm: bad window");
    stream.validate();
    if (stream.width > width || stream.height > height)
        throw std::invalid_argument("accumulate_ecm: stream exceeds resolution");

    EventCountMap ecm;
    ecm.bins = bins;
    ecm.width = width;
    ecm.height = height;
    ecm.t_start = t_start;
    ecm.t_end = t_end;
    ecm.counts.assign(static_cast<size_t>(bins) * 2 * height * width, 0);

    const double span = t_end - t_start;
    for (const Event& e : stream.events) {
        if (e.t < t_start || e.t >= t_end) {
            ++ecm.ignored;
            continue;
        }
        int b = static_cast<int>((e.t - t_start) / span * bins);
        b = std::min(b, bins - 1);
        const int p = (e.p > 0) ? 0 : 1;
        ++ecm.counts[ecm.idx(b, p, e.y, e.x)];
    }
    return ecm;
}

Image integrate_events(const EventCountMap& ecm, const ThresholdField& thr) {
    if (!ecm.layout_matches(thr.bins, thr.width, thr.height, thr.t_start, thr.t_end))
        throw std::invalid_argument("integrate_events: layout mismatch");
    Image out(ecm.width, ecm.height, 1);
    for (int y = 0; y < ecm.height; ++y) {
        for (int x = 0; x < ecm.width; ++x) {
            double v = 0.0;
            for (int b = 0; b < ecm.bins; ++b) {
                v += ecm.at(b, 0, y, x) * thr.at(b, 0, y, x);
                v -= ecm.at(b, 1, y, x) * thr.at(b, 1, y, x);
            }
            out.at(y, x) = v;
        }
    }
    return out;
}

SimulationResult simulate_events(const std::vector<Image>& log_frames,
                                 const std::vector<double>& timestamps,
                                 const SimulatorConfig& cfg) {
    const size_t n = log_frames.size();
    if (n < 2 || timestamps.size() != n)
        throw std::invalid_argument("simulate_events: need >= 2 frames");
    for (size_t k = 1; k < n; ++k)
        if (!(timestamps[k] > timestamps[k - 1]))
            throw std::invalid_argument("simulate_events: non-monotone timestamps");
    const int W = log_frames[0].width, H = log_frames[0].height;
    for (const Image& f : log_frames)
        if (f.width != W || f.height != H || f.channels != 1)
            throw std::invalid_argument("simulate_events: frame shape mismatch");

    const int period = std::max(1, cfg.update_period_frames);
    const int n_updates = (static_cast<int>(n) - 2) / period + 1;

    // Thresholds per temporal update; spatially constant, per-pixel variation
    // enters through injected noise events.
    Rng thr_rng(cfg.seed);
    std::vector<double> cp(n_updates), cn(n_updates);
    for (int u = 0; u < n_updates; ++u) {
        cp[u] = thr_rng.uniform(cfg.c_lo, cfg.c_hi);
        const double ratio = thr_rng.normal(cfg.polarity_mu, cfg.polarity_sigma);
        cn[u] = std::max(cp[u] * ratio, 1e-3);
    }

    EventStream stream;
    stream.width = W;
    stream.height = H;

    // Per-pixel threshold-crossing state machines.
    std::vector<double> l_ref(static_cast<size_t>(W) * H);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) l_ref[static_cast<size_t>(y) * W + x] = log_frames[0].at(y, x);

    constexpr double kCrossEps = 1e-12;
    for (size_t k = 0; k + 1 < n; ++k) {
        const int u = static_cast<int>(k) / period;
        const double t0 = timestamps[k], t1 = timestamps[k + 1];
        const double dt = t1 - t0;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double a = log_frames[k].at(y, x);
                const double b = log_frames[k + 1].at(y, x);
                double& ref = l_ref[static_cast<size_t>(y) * W + x];
                if (b > a) {
                    while (ref + cp[u] <= b + kCrossEps) {
                        ref += cp[u];
                        const double frac = std::clamp((ref - a) / (b - a), 0.0, 1.0);
                        stream.events.push_back({t0 + frac * dt,
                                                 static_cast<uint16_t>(x),
                                                 static_cast<uint16_t>(y), 1});
                    }
                } else if (b < a) {
                    while (ref - cn[u] >= b - kCrossEps) {
                        ref -= cn[u];
                        const double frac = std::clamp((ref - a) / (b - a), 0.0, 1.0);
                        stream.events.push_back({t0 + frac * dt,
                                                 static_cast<uint16_t>(x),
                                                 static_cast<uint16_t>(y), -1});
                    }
                }
            }
        }
    }

    // Spatial variation: noise events on a seeded pixel mask. Quantized
    // N(0,1) draws per masked pixel per interval; L_ref is left untouched.
    if (cfg.noise_fraction > 0.0) {
        Rng noise_rng(cfg.seed + 0x9e3779b97f4a7c15ULL);
        std::vector<char> mask(static_cast<size_t>(W) * H);
        for (size_t i = 0; i < mask.size(); ++i)
            mask[i] = noise_rng.uniform() < cfg.noise_fraction;
        for (size_t k = 0; k + 1 < n; ++k) {
            const double t0 = timestamps[k], dt = timestamps[k + 1] - t0;
            for (int y = 0; y < H; ++y) {
                for (int x = 0; x < W; ++x) {
                    if (!mask[static_cast<size_t>(y) * W + x]) continue;
                    const long q = std::lround(noise_rng.normal());
                    const int8_t pol = q > 0 ? 1 : -1;
                    for (long i = 0; i < std::labs(q); ++i) {
                        stream.events.push_back({t0 + noise_rng.uniform() * dt,
                                                 static_cast<uint16_t>(x),
                                                 static_cast<uint16_t>(y), pol});
                    }
                }
            }
        }
    }

    std::sort(stream.events.begin(), stream.events.end(),
              [](const Event& a, const Event& b) {
                  return std::tie(a.t, a.y, a.x, a.p) < std::tie(b.t, b.y, b.x, b.p);
              });

    // Ground truth field on a uniform global grid; bins take the threshold
    // active at their center time.
    ThresholdField gt = ThresholdField::constant(cfg.gt_bins, W, H,
                                                 timestamps.front(),
                                                 timestamps.back(), 0.0);
    const double span = timestamps.back() - timestamps.front();
    for (int b = 0; b < cfg.gt_bins; ++b) {
        const double tc = timestamps.front() + (b + 0.5) * span / cfg.gt_bins;
        // Frame interval containing tc.
        size_t k = 0;
        while (k + 2 < n && timestamps[k + 1] <= tc) ++k;
        const int u = static_cast<int>(k) / period;
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                gt.values[gt.idx(b, 0, y, x)] = cp[u];
                gt.values[gt.idx(b, 1, y, x)] = cn[u];
            }
        }
    }
    return {std::move(stream), std::move(gt)};
}

}  // namespace evsplat
