#pragma once

#include "evsplat/image.hpp"
#include "evsplat/scene.hpp"

namespace evsplat {

struct RenderedImage {
    Image color;  // H x W x 3, linear RGB
    Image depth;  // H x W, alpha-weighted expected depth
    Image alpha;  // H x W, accumulated opacity
};

struct RenderGradients {
    std::vector<Vec3> d_mu;
    std::vector<Vec4> d_rot;
    std::vector<Vec3> d_log_scale;
    std::vector<double> d_opacity_logit;
    std::vector<Vec3> d_color;
    // Accumulated 2D positional gradient magnitude (NDC units) and the
    // number of renders each Gaussian participated in; drives ADC.
    std::vector<double> pos_grad_accum;
    std::vector<int> pos_grad_count;

    void resize(size_t n);
    void add(const RenderGradients& o);
    void scale(double s);
};

constexpr double kAlphaClamp = 0.99;
constexpr double kTransmitEps = 1e-4;
// Support cutoff for the screen bounding box. Wide enough that the truncated
// tail (exp(-18) ~ 1.5e-8) sits below finite-difference resolution, keeping
// analytic gradients exact for the rendered function.
constexpr double kBBoxSigma = 6.0;

RenderedImage render(const GaussianCloud& cloud, const Camera& cam,
                     const Vec3& background);

// Reverse-mode gradients of the compositing expression w.r.t. every Gaussian
// parameter, given an upstream H x W x 3 gradient on the color output. The
// depth sort is treated as piecewise constant (no gradient through ordering).
RenderGradients render_backward(const GaussianCloud& cloud, const Camera& cam,
                                const Vec3& background, const Image& upstream);

}  // namespace evsplat
