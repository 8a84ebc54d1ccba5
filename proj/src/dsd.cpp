#include "evsplat/dsd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace evsplat {
namespace {

constexpr double kNormEps = 1e-12;

Image binomial_downsample(const Image& img) {
    // 5-tap binomial blur followed by factor-2 decimation.
    static const double k[5] = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
    Image tmp(img.width, img.height, 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double s = 0.0;
            for (int i = -2; i <= 2; ++i) {
                const int xx = std::clamp(x + i, 0, img.width - 1);
                s += k[i + 2] * img.at(y, xx);
            }
            tmp.at(y, x) = s;
        }
    Image blur(img.width, img.height, 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double s = 0.0;
            for (int i = -2; i <= 2; ++i) {
                const int yy = std::clamp(y + i, 0, img.height - 1);
                s += k[i + 2] * tmp.at(yy, x);
            }
            blur.at(y, x) = s;
        }
    const int w2 = std::max(1, img.width / 2), h2 = std::max(1, img.height / 2);
    Image out(w2, h2, 1);
    for (int y = 0; y < h2; ++y)
        for (int x = 0; x < w2; ++x) out.at(y, x) = blur.at(2 * y, 2 * x);
    return out;
}

// (luminance, grad_x, grad_y, 3x3 local std) per pixel.
Image handcrafted_features(const Image& lum) {
    Image out(lum.width, lum.height, 4);
    for (int y = 0; y < lum.height; ++y)
        for (int x = 0; x < lum.width; ++x) {
            const int xm = std::max(0, x - 1), xp = std::min(lum.width - 1, x + 1);
            const int ym = std::max(0, y - 1), yp = std::min(lum.height - 1, y + 1);
            double sum = 0.0, sum2 = 0.0;
            int n = 0;
            for (int yy = ym; yy <= yp; ++yy)
                for (int xx = xm; xx <= xp; ++xx) {
                    const double v = lum.at(yy, xx);
                    sum += v;
                    sum2 += v * v;
                    ++n;
                }
            const double mean = sum / n;
            const double var = std::max(0.0, sum2 / n - mean * mean);
            out.at(y, x, 0) = lum.at(y, x);
            out.at(y, x, 1) = 0.5 * (lum.at(y, xp) - lum.at(y, xm));
            out.at(y, x, 2) = 0.5 * (lum.at(yp, x) - lum.at(ym, x));
            out.at(y, x, 3) = std::sqrt(var);
        }
    return out;
}

Image cosine_per_pixel(const Image& fa, const Image& fb) {
    Image out(fa.width, fa.height, 1);
    for (int y = 0; y < fa.height; ++y)
        for (int x = 0; x < fa.width; ++x) {
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (int c = 0; c < fa.channels; ++c) {
                const double a = fa.at(y, x, c), b = fb.at(y, x, c);
                dot += a * b;
                na += a * a;
                nb += b * b;
            }
            na = std::sqrt(na);
            nb = std::sqrt(nb);
            double s;
            if (na < kNormEps && nb < kNormEps) {
                s = 1.0;  // zero-vector pair
            } else {
                s = dot / (std::max(na, kNormEps) * std::max(nb, kNormEps));
            }
            out.at(y, x) = std::clamp(s, -1.0, 1.0);
        }
    return out;
}

Image bilinear_upsample(const Image& src, int w, int h) {
    Image out(w, h, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double fx = (src.width > 1)
                                  ? static_cast<double>(x) * (src.width - 1) / (w - 1)
                                  : 0.0;
            const double fy = (src.height > 1)
                                  ? static_cast<double>(y) * (src.height - 1) / (h - 1)
                                  : 0.0;
            const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const int y1 = std::min(y0 + 1, src.height - 1);
            const double ax = fx - x0, ay = fy - y0;
            out.at(y, x) = (1 - ax) * (1 - ay) * src.at(y0, x0) +
                           ax * (1 - ay) * src.at(y0, x1) +
                           (1 - ax) * ay * src.at(y1, x0) + ax * ay * src.at(y1, x1);
        }
    return out;
}

struct GridIndex {
    double cell;
    std::map<std::tuple<int, int, int>, std::vector<int>> cells;
    const std::vector<Vec3>* pts;

    GridIndex(const std::vector<Vec3>& points, double cell_size)
        : cell(cell_size), pts(&points) {
        for (int i = 0; i < static_cast<int>(points.size()); ++i)
            cells[key(points[i])].push_back(i);
    }
    std::tuple<int, int, int> key(const Vec3& p) const {
        return {static_cast<int>(std::floor(p.x() / cell)),
                static_cast<int>(std::floor(p.y() / cell)),
                static_cast<int>(std::floor(p.z() / cell))};
    }
    // Exact nearest distance if it is <= cell, else a value > cell.
    double nearest_within_cell(const Vec3& q) const {
        auto [kx, ky, kz] = key(q);
        double best = std::numeric_limits<double>::infinity();
        for (int dx = -1; dx <= 1; ++dx)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dz = -1; dz <= 1; ++dz) {
                    auto it = cells.find({kx + dx, ky + dy, kz + dz});
                    if (it == cells.end()) continue;
                    for (int i : it->second)
                        best = std::min(best, ((*pts)[i] - q).squaredNorm());
                }
        return std::sqrt(best);
    }
};

}  // namespace

SimilarityMap similarity_map(const Image& rendered, const Image& gt, int levels) {
    require_same_shape(rendered, gt, "similarity_map");
    if (levels < 1) throw std::invalid_argument("similarity_map: levels >= 1");

    Image la = luminance(rendered), lb = luminance(gt);
    Image fused(rendered.width, rendered.height, 1);
    for (int l = 0; l < levels; ++l) {
        const Image sim = cosine_per_pixel(handcrafted_features(la),
                                           handcrafted_features(lb));
        const Image up = bilinear_upsample(sim, rendered.width, rendered.height);
        for (size_t i = 0; i < fused.size(); ++i) fused.data[i] += up.data[i] / levels;
        if (l + 1 < levels) {
            la = binomial_downsample(la);
            lb = binomial_downsample(lb);
        }
    }
    for (double& v : fused.data) v = std::clamp(v, -1.0, 1.0);
    return {std::move(fused)};
}

SimilarityMap similarity_map_from_features(const std::vector<Image>& feats_rendered,
                                           const std::vector<Image>& feats_gt,
                                           int out_width, int out_height) {
    if (feats_rendered.size() != feats_gt.size() || feats_rendered.empty())
        throw std::invalid_argument("similarity_map_from_features: level mismatch");
    const int levels = static_cast<int>(feats_rendered.size());
    Image fused(out_width, out_height, 1);
    for (int l = 0; l < levels; ++l) {
        require_same_shape(feats_rendered[l], feats_gt[l], "similarity features");
        const Image sim = cosine_per_pixel(feats_rendered[l], feats_gt[l]);
        const Image up = bilinear_upsample(sim, out_width, out_height);
        for (size_t i = 0; i < fused.size(); ++i) fused.data[i] += up.data[i] / levels;
    }
    for (double& v : fused.data) v = std::clamp(v, -1.0, 1.0);
    return {std::move(fused)};
}

double otsu(const SimilarityMap& sim) {
    const auto& v = sim.values.data;
    if (v.empty()) throw std::invalid_argument("otsu: empty map");
    const double lo = *std::min_element(v.begin(), v.end());
    const double hi = *std::max_element(v.begin(), v.end());
    if (hi <= lo) return lo;  // degenerate: empty mask

    constexpr int kBins = 256;
    std::vector<long long> hist(kBins, 0);
    for (double x : v) {
        int b = static_cast<int>((x - lo) / (hi - lo) * kBins);
        hist[std::min(b, kBins - 1)]++;
    }

    const long long total = static_cast<long long>(v.size());
    double sum_all = 0.0;
    for (int b = 0; b < kBins; ++b) sum_all += static_cast<double>(hist[b]) * b;

    long long w0 = 0;
    double sum0 = 0.0, best_var = -1.0;
    int best_t = 0;
    for (int t = 0; t < kBins - 1; ++t) {
        w0 += hist[t];
        sum0 += static_cast<double>(hist[t]) * t;
        const long long w1 = total - w0;
        if (w0 == 0 || w1 == 0) continue;
        const double m0 = sum0 / w0, m1 = (sum_all - sum0) / w1;
        const double var = static_cast<double>(w0) * static_cast<double>(w1) *
                           (m0 - m1) * (m0 - m1);
        if (var > best_var) {  // strict: ties keep the lowest threshold
            best_var = var;
            best_t = t;
        }
    }
    return lo + (best_t + 1) * (hi - lo) / kBins;
}

DynamicMask dynamic_mask(const SimilarityMap& sim) {
    DynamicMask out;
    out.otsu_threshold = otsu(sim);
    out.mask = Image(sim.values.width, sim.values.height, 1);
    for (size_t i = 0; i < sim.values.size(); ++i)
        out.mask.data[i] = sim.values.data[i] < out.otsu_threshold ? 1.0 : 0.0;
    return out;
}

std::vector<Vec3> unproject_mask(const Image& mask, const Image& depth,
                                 const Image& alpha, const Camera& cam) {
    std::vector<Vec3> points;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(y, x) == 0.0) continue;
            const double d = depth.at(y, x);
            if (!std::isfinite(d) || d <= 0.0 || alpha.at(y, x) <= 0.5) continue;
            const Vec3 p_cam((x - cam.cx) / cam.fx * d, (y - cam.cy) / cam.fy * d, d);
            points.push_back(cam.to_world(p_cam));
        }
    return points;
}

std::vector<Vec3> voxel_downsample(const std::vector<Vec3>& points, double cell) {
    if (cell <= 0.0) return points;
    std::map<std::tuple<int, int, int>, std::pair<Vec3, int>> voxels;
    for (const Vec3& p : points) {
        auto key = std::make_tuple(static_cast<int>(std::floor(p.x() / cell)),
                                   static_cast<int>(std::floor(p.y() / cell)),
                                   static_cast<int>(std::floor(p.z() / cell)));
        auto it = voxels.find(key);
        if (it == voxels.end())
            it = voxels.emplace(key, std::make_pair(Vec3::Zero(), 0)).first;
        it->second.first += p;
        ++it->second.second;
    }
    std::vector<Vec3> out;
    out.reserve(voxels.size());
    for (const auto& [key, v] : voxels) out.push_back(v.first / v.second);
    return out;
}

std::vector<DecompLabel> buffer_decompose(const GaussianCloud& cloud,
                                          const std::vector<Vec3>& points,
                                          const DecompositionConfig& cfg) {
    if (!(cfg.r1 > 0.0) || !(cfg.r1 <= cfg.r2))
        throw std::invalid_argument("buffer_decompose: need 0 < r1 <= r2");
    std::vector<DecompLabel> labels(cloud.size(), DecompLabel::Static);
    if (points.empty()) return labels;

    std::vector<Vec3> centers;
    centers.reserve(cloud.size());
    for (const auto& g : cloud.gaussians) centers.push_back(g.mu);
    const double unit = mean_nn_distance(centers);
    const double r1 = cfg.r1 * unit, r2 = cfg.r2 * unit;

    const GridIndex index(points, std::max(r2, 1e-12));
    for (size_t i = 0; i < cloud.size(); ++i) {
        const double d = index.nearest_within_cell(cloud.gaussians[i].mu);
        if (d < r1 || (r1 == r2 && d <= r1))
            labels[i] = DecompLabel::Dynamic;  // zero buffer: nothing pruned
        else if (d <= r2)
            labels[i] = DecompLabel::Pruned;
        // else Static
    }
    return labels;
}

DecompositionOutput decompose(const GaussianCloud& cloud,
                              const std::vector<Camera>& views,
                              const std::vector<Image>& gt_frames,
                              const DecompositionConfig& cfg,
                              const Vec3& background) {
    if (views.size() != gt_frames.size())
        throw std::invalid_argument("decompose: views/frames mismatch");
    DecompositionOutput out;
    std::vector<Vec3> merged;
    for (size_t v = 0; v < views.size(); ++v) {
        const RenderedImage r = render(cloud, views[v], background);
        const SimilarityMap sim =
            similarity_map(r.color, gt_frames[v], cfg.feature_levels);
        DynamicMask m = dynamic_mask(sim);
        auto pts = unproject_mask(m.mask, r.depth, r.alpha, views[v]);
        merged.insert(merged.end(), pts.begin(), pts.end());
        out.masks.push_back(std::move(m));
    }
    std::vector<Vec3> centers;
    centers.reserve(cloud.size());
    for (const auto& g : cloud.gaussians) centers.push_back(g.mu);
    out.basic_unit = mean_nn_distance(centers);
    merged = voxel_downsample(merged, 0.5 * out.basic_unit);
    out.labels = buffer_decompose(cloud, merged, cfg);
    return out;
}

}  // namespace evsplat
