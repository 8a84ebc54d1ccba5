#include "doctest.h"

#include <cmath>

#include "evsplat/render.hpp"
#include "testutil.hpp"

using namespace evsplat;
namespace tu = evsplat::testutil;

namespace {

constexpr int kParamsPerGaussian = 14;  // mu 3, rot 4, log_scale 3, opacity 1, color 3

double get_param(const Gaussian3D& g, int k) {
    if (k < 3) return g.mu[k];
    if (k < 7) return g.rot[k - 3];
    if (k < 10) return g.log_scale[k - 7];
    if (k == 10) return g.opacity_logit;
    return g.color[k - 11];
}

void set_param(Gaussian3D& g, int k, double v) {
    if (k < 3) g.mu[k] = v;
    else if (k < 7) g.rot[k - 3] = v;
    else if (k < 10) g.log_scale[k - 7] = v;
    else if (k == 10) g.opacity_logit = v;
    else g.color[k - 11] = v;
}

double get_grad(const RenderGradients& gr, int i, int k) {
    if (k < 3) return gr.d_mu[i][k];
    if (k < 7) return gr.d_rot[i][k - 3];
    if (k < 10) return gr.d_log_scale[i][k - 7];
    if (k == 10) return gr.d_opacity_logit[i];
    return gr.d_color[i][k - 11];
}

double weighted_sum(const Image& img, const Image& w) {
    double s = 0.0;
    for (size_t i = 0; i < img.size(); ++i) s += img.data[i] * w.data[i];
    return s;
}

// One gradient check of <upstream, render(cloud)> against central differences.
void check_scene_gradients(uint64_t seed, int n_gaussians) {
    Rng rng(seed);
    Camera cam = tu::test_camera(16, 16, 12.0);
    GaussianCloud cloud = tu::random_cloud(rng, n_gaussians);
    const Vec3 bg(0.3, 0.2, 0.1);
    const Image upstream = tu::random_image(rng, 16, 16, 3, -1.0, 1.0);

    const RenderGradients grads = render_backward(cloud, cam, bg, upstream);

    const double h = 1e-4;
    for (int i = 0; i < n_gaussians; ++i) {
        for (int k = 0; k < kParamsPerGaussian; ++k) {
            const double x0 = get_param(cloud.gaussians[i], k);
            GaussianCloud c = cloud;
            set_param(c.gaussians[i], k, x0 + h);
            const double fp = weighted_sum(render(c, cam, bg).color, upstream);
            set_param(c.gaussians[i], k, x0 - h);
            const double fm = weighted_sum(render(c, cam, bg).color, upstream);
            const double fd = (fp - fm) / (2 * h);
            const double an = get_grad(grads, i, k);
            INFO("seed ", seed, " gaussian ", i, " param ", k, " fd=", fd,
                 " analytic=", an);
            CHECK(tu::rel_err(an, fd, 1e-3) < 1e-4);
        }
    }
}

}  // namespace

TEST_CASE("empty cloud renders the background") {
    Camera cam = tu::test_camera(8, 8);
    GaussianCloud cloud;
    const RenderedImage img = render(cloud, cam, Vec3(0.2, 0.2, 0.2));
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            for (int c = 0; c < 3; ++c) CHECK(img.color.at(y, x, c) == 0.2);
            CHECK(img.alpha.at(y, x) == 0.0);
        }
}

TEST_CASE("single centered gaussian composites against the background") {
    Camera cam = tu::test_camera(17, 17, 20.0);
    GaussianCloud cloud;
    Gaussian3D g;
    g.mu = Vec3(0, 0, 2.0);  // projects to the center pixel (8, 8)
    g.log_scale = Vec3::Constant(std::log(0.2));
    g.opacity_logit = std::log(0.99 / 0.01);
    g.color = Vec3(1, 0, 0);
    cloud.gaussians.push_back(g);
    const Vec3 bg(0.0, 0.0, 1.0);
    const RenderedImage img = render(cloud, cam, bg);
    CHECK(img.color.at(8, 8, 0) == doctest::Approx(0.99).epsilon(1e-9));
    CHECK(img.color.at(8, 8, 2) == doctest::Approx(0.01).epsilon(1e-7));
    CHECK(img.depth.at(8, 8) == doctest::Approx(0.99 * 2.0));
}

TEST_CASE("two-gaussian composite matches hand evaluation") {
    Camera cam = tu::test_camera(17, 17, 20.0);
    GaussianCloud cloud;
    Gaussian3D front;
    front.mu = Vec3(0, 0, 1.0);
    front.log_scale = Vec3::Constant(std::log(0.3));
    front.opacity_logit = 0.0;  // sigma = 0.5
    front.color = Vec3(1, 0, 0);
    Gaussian3D back = front;
    back.mu = Vec3(0, 0, 2.0);
    back.opacity_logit = std::log(0.99 / 0.01);
    back.color = Vec3(0, 0, 1);
    cloud.gaussians = {back, front};  // depth sort must reorder
    const RenderedImage img = render(cloud, cam, Vec3(0, 1, 0));
    CHECK(img.color.at(8, 8, 0) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(img.color.at(8, 8, 2) == doctest::Approx(0.5 * 0.99).epsilon(1e-7));
    CHECK(img.color.at(8, 8, 1) == doctest::Approx(0.005).epsilon(1e-6));
}

TEST_CASE("compositing weights plus residual transmittance sum to one") {
    // With zero colors and unit background the color output equals the
    // residual transmittance, so alpha + color must be 1 per pixel.
    Rng rng(77);
    GaussianCloud cloud = tu::random_cloud(rng, 24);
    for (auto& g : cloud.gaussians) g.color = Vec3::Zero();
    Camera cam = tu::test_camera(24, 24, 18.0);
    const RenderedImage img = render(cloud, cam, Vec3(1, 1, 1));
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x)
            CHECK(img.alpha.at(y, x) + img.color.at(y, x, 0) ==
                  doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("rendering is deterministic") {
    Rng rng(9);
    GaussianCloud cloud = tu::random_cloud(rng, 12);
    Camera cam = tu::test_camera(20, 20);
    const RenderedImage a = render(cloud, cam, Vec3(0.1, 0.2, 0.3));
    const RenderedImage b = render(cloud, cam, Vec3(0.1, 0.2, 0.3));
    CHECK(a.color.data == b.color.data);
    CHECK(a.depth.data == b.depth.data);
    CHECK(a.alpha.data == b.alpha.data);
}

TEST_CASE("depth ties break by gaussian index") {
    Camera cam = tu::test_camera(9, 9, 10.0);
    Gaussian3D a;
    a.mu = Vec3(0, 0, 1.0);
    a.log_scale = Vec3::Constant(std::log(0.2));
    a.opacity_logit = 10.0;  // nearly opaque
    a.color = Vec3(1, 0, 0);
    Gaussian3D b = a;
    b.color = Vec3(0, 1, 0);
    GaussianCloud cloud;
    cloud.gaussians = {a, b};
    const RenderedImage img = render(cloud, cam, Vec3::Zero());
    CHECK(img.color.at(4, 4, 0) > img.color.at(4, 4, 1));
}

TEST_CASE("upstream of zeros yields zero gradients") {
    Rng rng(21);
    GaussianCloud cloud = tu::random_cloud(rng, 4);
    Camera cam = tu::test_camera();
    const Image zeros(16, 16, 3);
    const RenderGradients g = render_backward(cloud, cam, Vec3::Zero(), zeros);
    for (size_t i = 0; i < cloud.size(); ++i) {
        CHECK(g.d_mu[i].norm() == 0.0);
        CHECK(g.d_rot[i].norm() == 0.0);
        CHECK(g.d_color[i].norm() == 0.0);
        CHECK(g.d_opacity_logit[i] == 0.0);
    }
}

TEST_CASE("single gaussian color gradient equals summed compositing weights") {
    Camera cam = tu::test_camera(16, 16, 12.0);
    Rng rng(2);
    GaussianCloud cloud = tu::random_cloud(rng, 1);
    Image upstream(16, 16, 3);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) upstream.at(y, x, 0) = 1.0;
    const RenderedImage img = render(cloud, cam, Vec3::Zero());
    double weight_sum = 0.0;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) weight_sum += img.alpha.at(y, x);
    const RenderGradients g = render_backward(cloud, cam, Vec3::Zero(), upstream);
    CHECK(g.d_color[0][0] == doctest::Approx(weight_sum).epsilon(1e-9));
    CHECK(g.d_color[0][1] == 0.0);
}

TEST_CASE("render gradients match finite differences on 20 random scenes") {
    for (uint64_t seed = 100; seed < 120; ++seed) check_scene_gradients(seed, 8);
}

TEST_CASE("behind-camera gaussians do not contribute or crash backward") {
    Camera cam = tu::test_camera();
    GaussianCloud cloud;
    Gaussian3D g;
    g.mu = Vec3(0, 0, -2.0);
    g.color = Vec3(1, 1, 1);
    g.opacity_logit = 5.0;
    cloud.gaussians.push_back(g);
    const RenderedImage img = render(cloud, cam, Vec3::Zero());
    CHECK(img.color.at(8, 8, 0) == 0.0);
    Image up(16, 16, 3, 1.0);
    const RenderGradients gr = render_backward(cloud, cam, Vec3::Zero(), up);
    CHECK(gr.d_mu[0].norm() == 0.0);
}
