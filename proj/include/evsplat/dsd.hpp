#pragma once

#include <vector>

#include "evsplat/image.hpp"
#include "evsplat/render.hpp"
#include "evsplat/scene.hpp"

namespace evsplat {

struct SimilarityMap {
    Image values;  // H x W in [-1, 1]
};

struct DynamicMask {
    Image mask;  // H x W, 0/1
    double otsu_threshold = 0.0;
};

struct DecompositionConfig {
    double r1 = 4.0;   // basic units
    double r2 = 16.0;  // basic units
    int feature_levels = 3;
};

enum class DecompLabel : uint8_t { Static = 0, Dynamic = 1, Pruned = 2 };

// Fused multi-scale cosine similarity between rendered and ground truth.
// Per pyramid level the per-pixel feature vector is (luminance, horizontal
// gradient, vertical gradient, 3x3 local std).
SimilarityMap similarity_map(const Image& rendered, const Image& gt, int levels);

// Externally computed per-level feature maps may replace the handcrafted
// extractor; each entry holds per-level H_l x W_l x C feature images.
SimilarityMap similarity_map_from_features(const std::vector<Image>& feats_rendered,
                                           const std::vector<Image>& feats_gt,
                                           int out_width, int out_height);

// Threshold maximizing inter-class variance over a 256-bin histogram spanning
// [min, max]; ties resolved toward the lowest threshold.
double otsu(const SimilarityMap& sim);

DynamicMask dynamic_mask(const SimilarityMap& sim);

// Pixels with mask set, finite depth and alpha > 0.5 unprojected to world.
std::vector<Vec3> unproject_mask(const Image& mask, const Image& depth,
                                 const Image& alpha, const Camera& cam);

std::vector<Vec3> voxel_downsample(const std::vector<Vec3>& points, double cell);

// Distance-based soft labeling: nearest point < r1 -> Dynamic, > r2 ->
// Static, in between -> Pruned (buffer zone, later refilled by ADC).
// Radii are given in basic units (mean nearest-neighbor center distance).
std::vector<DecompLabel> buffer_decompose(const GaussianCloud& cloud,
                                          const std::vector<Vec3>& points,
                                          const DecompositionConfig& cfg);

struct DecompositionOutput {
    std::vector<DecompLabel> labels;
    std::vector<DynamicMask> masks;  // one per view
    double basic_unit = 0.0;
};

// One-shot decomposition over the training views of an RGB-warmed-up cloud.
DecompositionOutput decompose(const GaussianCloud& cloud,
                              const std::vector<Camera>& views,
                              const std::vector<Image>& gt_frames,
                              const DecompositionConfig& cfg,
                              const Vec3& background);

}  // namespace evsplat
