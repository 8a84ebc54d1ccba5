#include "evsplat/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace evsplat {
namespace {

constexpr int kWin = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::vector<double>& ssim_kernel() {
    static const std::vector<double> k = [] {
        std::vector<double> v(kWin);
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i) {
            const double d = i - (kWin - 1) / 2.0;
            v[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
            sum += v[i];
        }
        for (double& x : v) x /= sum;
        return v;
    }();
    return k;
}

// Separable "same" convolution with zero padding; the kernel is symmetric so
// the operation is its own adjoint.
Image conv_same(const Image& img, const std::vector<double>& k) {
    const int r = static_cast<int>(k.size()) / 2;
    Image tmp(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double s = 0.0;
                for (int i = -r; i <= r; ++i) {
                    const int xx = x + i;
                    if (xx < 0 || xx >= img.width) continue;
                    s += k[i + r] * img.at(y, xx, c);
                }
                tmp.at(y, x, c) = s;
            }
    Image out(img.width, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                double s = 0.0;
                for (int i = -r; i <= r; ++i) {
                    const int yy = y + i;
                    if (yy < 0 || yy >= img.height) continue;
                    s += k[i + r] * tmp.at(yy, x, c);
                }
                out.at(y, x, c) = s;
            }
    return out;
}

Image hadamard(const Image& a, const Image& b) {
    Image out(a.width, a.height, a.channels);
    for (size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}

}  // namespace

ScalarWithGrad ssim_with_grad(const Image& a, const Image& b) {
    require_same_shape(a, b, "ssim");
    const auto& k = ssim_kernel();
    const Image mu_a = conv_same(a, k), mu_b = conv_same(b, k);
    const Image s_aa = conv_same(hadamard(a, a), k);
    const Image s_bb = conv_same(hadamard(b, b), k);
    const Image s_ab = conv_same(hadamard(a, b), k);

    const double inv_n = 1.0 / static_cast<double>(a.size());
    double total = 0.0;
    Image d_mu(a.width, a.height, a.channels);
    Image d_saa(a.width, a.height, a.channels);
    Image d_sab(a.width, a.height, a.channels);

    for (size_t i = 0; i < a.size(); ++i) {
        const double ma = mu_a.data[i], mb = mu_b.data[i];
        const double va = s_aa.data[i] - ma * ma;
        const double vb = s_bb.data[i] - mb * mb;
        const double vab = s_ab.data[i] - ma * mb;
        const double A1 = 2 * ma * mb + kC1, A2 = 2 * vab + kC2;
        const double B1 = ma * ma + mb * mb + kC1, B2 = va + vb + kC2;
        const double s = (A1 * A2) / (B1 * B2);
        total += s;

        const double p1 = A2 / (B1 * B2);
        const double p2 = A1 / (B1 * B2);
        const double p3 = -s / B1;
        const double p4 = -s / B2;
        d_mu.data[i] = inv_n * (p1 * 2 * mb - p2 * 2 * mb + p3 * 2 * ma - p4 * 2 * ma);
        d_saa.data[i] = inv_n * p4;
        d_sab.data[i] = inv_n * p2 * 2;
    }

    ScalarWithGrad out;
    out.value = total * inv_n;
    const Image t1 = conv_same(d_mu, k);
    const Image t2 = conv_same(d_saa, k);
    const Image t3 = conv_same(d_sab, k);
    out.grad = Image(a.width, a.height, a.channels);
    for (size_t i = 0; i < a.size(); ++i)
        out.grad.data[i] = t1.data[i] + 2 * a.data[i] * t2.data[i] + b.data[i] * t3.data[i];
    return out;
}

double ssim(const Image& a, const Image& b) {
    require_same_shape(a, b, "ssim");
    const auto& k = ssim_kernel();
    const Image mu_a = conv_same(a, k), mu_b = conv_same(b, k);
    const Image s_aa = conv_same(hadamard(a, a), k);
    const Image s_bb = conv_same(hadamard(b, b), k);
    const Image s_ab = conv_same(hadamard(a, b), k);
    double total = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double ma = mu_a.data[i], mb = mu_b.data[i];
        const double va = s_aa.data[i] - ma * ma;
        const double vb = s_bb.data[i] - mb * mb;
        const double vab = s_ab.data[i] - ma * mb;
        total += ((2 * ma * mb + kC1) * (2 * vab + kC2)) /
                 ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
    }
    return total / static_cast<double>(a.size());
}

ScalarWithGrad rgb_loss(const Image& rendered, const Image& gt, double lambda_s) {
    require_same_shape(rendered, gt, "rgb_loss");
    const double inv_n = 1.0 / static_cast<double>(rendered.size());
    double l1 = 0.0;
    Image grad(rendered.width, rendered.height, rendered.channels);
    for (size_t i = 0; i < rendered.size(); ++i) {
        const double d = rendered.data[i] - gt.data[i];
        l1 += std::abs(d);
        grad.data[i] = (1.0 - lambda_s) * inv_n * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
    }
    l1 *= inv_n;
    const ScalarWithGrad s = ssim_with_grad(rendered, gt);
    ScalarWithGrad out;
    out.value = (1.0 - lambda_s) * l1 + lambda_s * 0.5 * (1.0 - s.value);
    out.grad = std::move(grad);
    for (size_t i = 0; i < out.grad.size(); ++i)
        out.grad.data[i] += lambda_s * (-0.5) * s.grad.data[i];
    return out;
}

double psnr(const Image& a, const Image& b) {
    require_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.size());
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

Image log_luminance(const Image& img) {
    Image lum = luminance(img);
    for (double& v : lum.data) v = std::log(std::max(v, kLogGuard));
    return lum;
}

EventLossResult event_loss(const Image& image_t2, const Image& image_t1,
                           const Image& emap) {
    require_same_shape(image_t2, image_t1, "event_loss");
    if (emap.width != image_t2.width || emap.height != image_t2.height ||
        emap.channels != 1)
        throw std::invalid_argument("event_loss: event map shape mismatch");

    const Image lum2 = luminance(image_t2);
    const Image lum1 = luminance(image_t1);
    const int W = emap.width, H = emap.height;
    const double inv_n = 1.0 / static_cast<double>(W * H);

    EventLossResult out;
    out.d_image_t2 = Image(W, H, image_t2.channels);
    out.d_image_t1 = Image(W, H, image_t1.channels);
    out.d_emap = Image(W, H, 1);

    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double l2 = lum2.at(y, x), l1 = lum1.at(y, x);
            const double resid =
                emap.at(y, x) - (std::log(std::max(l2, kLogGuard)) -
                                 std::log(std::max(l1, kLogGuard)));
            out.value += resid * resid;
            const double g = 2.0 * inv_n * resid;
            out.d_emap.at(y, x) = g;
            if (image_t2.channels == 3) {
                if (l2 > kLogGuard)
                    for (int c = 0; c < 3; ++c)
                        out.d_image_t2.at(y, x, c) = -g * kBT601[c] / l2;
                if (l1 > kLogGuard)
                    for (int c = 0; c < 3; ++c)
                        out.d_image_t1.at(y, x, c) = g * kBT601[c] / l1;
            } else {
                if (l2 > kLogGuard) out.d_image_t2.at(y, x) = -g / l2;
                if (l1 > kLogGuard) out.d_image_t1.at(y, x) = g / l1;
            }
        }
    }
    out.value *= inv_n;
    return out;
}

std::vector<double> emap_grad_to_threshold(const EventCountMap& ecm,
                                           const Image& d_emap) {
    std::vector<double> d_thr(static_cast<size_t>(ecm.bins) * 2 * ecm.height *
                                  ecm.width,
                              0.0);
    for (int b = 0; b < ecm.bins; ++b)
        for (int y = 0; y < ecm.height; ++y)
            for (int x = 0; x < ecm.width; ++x) {
                const double g = d_emap.at(y, x);
                d_thr[ecm.idx(b, 0, y, x)] = g * ecm.at(b, 0, y, x);
                d_thr[ecm.idx(b, 1, y, x)] = -g * static_cast<double>(ecm.at(b, 1, y, x));
            }
    return d_thr;
}

ThresholdLossResult threshold_loss(const Image& frame_t, const Image& frame_f,
                                   const EventCountMap& ecm,
                                   const ThresholdField& thr) {
    const Image e_hat = integrate_events(ecm, thr);
    const Image log_t = log_luminance(frame_t);
    const Image log_f = log_luminance(frame_f);
    const int W = ecm.width, H = ecm.height;
    const double inv_n = 1.0 / static_cast<double>(W * H);

    ThresholdLossResult out;
    Image d_emap(W, H, 1);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double resid = e_hat.at(y, x) - (log_f.at(y, x) - log_t.at(y, x));
            out.value += resid * resid;
            d_emap.at(y, x) = 2.0 * inv_n * resid;
        }
    out.value *= inv_n;
    out.d_thr = emap_grad_to_threshold(ecm, d_emap);
    return out;
}

BlurLossResult blur_loss(const std::vector<Image>& renders, const Image& gt_blurry,
                         double lambda_s) {
    if (renders.empty()) throw std::invalid_argument("blur_loss: no renders");
    const double n = static_cast<double>(renders.size());
    Image avg(gt_blurry.width, gt_blurry.height, gt_blurry.channels);
    for (const Image& r : renders) {
        require_same_shape(r, gt_blurry, "blur_loss");
        for (size_t i = 0; i < avg.size(); ++i) avg.data[i] += r.data[i] / n;
    }
    ScalarWithGrad base = rgb_loss(avg, gt_blurry, lambda_s);
    BlurLossResult out;
    out.value = base.value;
    out.d_renders.reserve(renders.size());
    for (size_t k = 0; k < renders.size(); ++k) {
        Image g = base.grad;
        for (double& v : g.data) v /= n;
        out.d_renders.push_back(std::move(g));
    }
    return out;
}

double threshold_mse(const ThresholdField& est, const ThresholdField& gt) {
    if (est.values.size() != gt.values.size())
        throw std::invalid_argument("threshold_mse: shape mismatch");
    double s = 0.0;
    for (size_t i = 0; i < est.values.size(); ++i) {
        const double d = est.values[i] - gt.values[i];
        s += d * d;
    }
    return s / static_cast<double>(est.values.size());
}

double threshold_mse_active(const ThresholdField& est, const ThresholdField& gt,
                            const EventCountMap& ecm) {
    if (est.values.size() != gt.values.size() ||
        est.values.size() != ecm.counts.size())
        throw std::invalid_argument("threshold_mse_active: shape mismatch");
    double s = 0.0;
    size_t n = 0;
    for (size_t i = 0; i < est.values.size(); ++i) {
        if (ecm.counts[i] == 0) continue;
        const double d = est.values[i] - gt.values[i];
        s += d * d;
        ++n;
    }
    return n ? s / static_cast<double>(n) : 0.0;
}

}  // namespace evsplat
