#include "evsplat/render.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace evsplat {
namespace {

// Contributions below this alpha are skipped; far below every test tolerance.
constexpr double kAlphaSkip = 1e-12;
constexpr double kDetEps = 1e-12;

struct Splat {
    int index;          // position in the cloud
    Vec2 mean2d;
    Mat2 inv_cov;
    double depth;
    double opacity;     // sigmoid of the logit
    Vec3 color;
    int x0, x1, y0, y1; // inclusive pixel bounds
};

std::vector<Splat> prepare(const GaussianCloud& cloud, const Camera& cam) {
    std::vector<Splat> splats;
    splats.reserve(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i) {
        const Gaussian3D& g = cloud.gaussians[i];
        auto proj = project_gaussian(g, cam);
        if (!proj) continue;  // behind camera: culled
        const double det = proj->cov2d.determinant();
        if (det < kDetEps) continue;  // singular after regularization: skipped

        Splat s;
        s.index = static_cast<int>(i);
        s.mean2d = proj->mean2d;
        s.inv_cov = proj->cov2d.inverse();
        s.depth = proj->depth;
        s.opacity = g.opacity();
        s.color = g.color;

        const double rx = kBBoxSigma * std::sqrt(proj->cov2d(0, 0));
        const double ry = kBBoxSigma * std::sqrt(proj->cov2d(1, 1));
        s.x0 = std::max(0, static_cast<int>(std::floor(s.mean2d.x() - rx)));
        s.x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(s.mean2d.x() + rx)));
        s.y0 = std::max(0, static_cast<int>(std::floor(s.mean2d.y() - ry)));
        s.y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(s.mean2d.y() + ry)));
        if (s.x0 > s.x1 || s.y0 > s.y1) continue;  // off-screen
        splats.push_back(s);
    }
    // Ascending depth; ties broken by cloud index (stable ordering contract).
    std::stable_sort(splats.begin(), splats.end(),
                     [](const Splat& a, const Splat& b) {
                         if (a.depth != b.depth) return a.depth < b.depth;
                         return a.index < b.index;
                     });
    return splats;
}

// Per-row lists of splat indices (into the depth-sorted vector).
std::vector<std::vector<int>> row_bins(const std::vector<Splat>& splats, int height) {
    std::vector<std::vector<int>> bins(height);
    for (int k = 0; k < static_cast<int>(splats.size()); ++k)
        for (int y = splats[k].y0; y <= splats[k].y1; ++y)
            bins[y].push_back(k);
    return bins;
}

struct Contribution {
    int k;          // splat index
    double alpha;
    double gauss;   // exp(-power), before the opacity product
    bool clamped;
    double trans;   // transmittance in front of this contribution
    Vec2 d;         // pixel - mean2d
};

}  // namespace

void RenderGradients::resize(size_t n) {
    d_mu.assign(n, Vec3::Zero());
    d_rot.assign(n, Vec4::Zero());
    d_log_scale.assign(n, Vec3::Zero());
    d_opacity_logit.assign(n, 0.0);
    d_color.assign(n, Vec3::Zero());
    pos_grad_accum.assign(n, 0.0);
    pos_grad_count.assign(n, 0);
}

void RenderGradients::add(const RenderGradients& o) {
    for (size_t i = 0; i < d_mu.size(); ++i) {
        d_mu[i] += o.d_mu[i];
        d_rot[i] += o.d_rot[i];
        d_log_scale[i] += o.d_log_scale[i];
        d_opacity_logit[i] += o.d_opacity_logit[i];
        d_color[i] += o.d_color[i];
        pos_grad_accum[i] += o.pos_grad_accum[i];
        pos_grad_count[i] += o.pos_grad_count[i];
    }
}

void RenderGradients::scale(double s) {
    for (size_t i = 0; i < d_mu.size(); ++i) {
        d_mu[i] *= s;
        d_rot[i] *= s;
        d_log_scale[i] *= s;
        d_opacity_logit[i] *= s;
        d_color[i] *= s;
    }
}

RenderedImage render(const GaussianCloud& cloud, const Camera& cam,
                     const Vec3& background) {
    RenderedImage out;
    out.color = Image(cam.width, cam.height, 3);
    out.depth = Image(cam.width, cam.height, 1);
    out.alpha = Image(cam.width, cam.height, 1);

    const auto splats = prepare(cloud, cam);
    const auto bins = row_bins(splats, cam.height);

    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            double T = 1.0;
            Vec3 c = Vec3::Zero();
            double depth = 0.0, A = 0.0;
            for (int k : bins[y]) {
                const Splat& s = splats[k];
                if (x < s.x0 || x > s.x1) continue;
                const Vec2 d(x - s.mean2d.x(), y - s.mean2d.y());
                const double power = 0.5 * d.dot(s.inv_cov * d);
                const double gauss = std::exp(-power);
                const double alpha = std::min(s.opacity * gauss, kAlphaClamp);
                if (alpha < kAlphaSkip) continue;
                const double w = alpha * T;
                c += w * s.color;
                depth += w * s.depth;
                A += w;
                T *= (1.0 - alpha);
                if (T < kTransmitEps) break;
            }
            c += T * background;
            out.color.at(y, x, 0) = c.x();
            out.color.at(y, x, 1) = c.y();
            out.color.at(y, x, 2) = c.z();
            out.depth.at(y, x) = depth;
            out.alpha.at(y, x) = A;
        }
    }
    return out;
}

RenderGradients render_backward(const GaussianCloud& cloud, const Camera& cam,
                                const Vec3& background, const Image& upstream) {
    if (upstream.width != cam.width || upstream.height != cam.height ||
        upstream.channels != 3) {
        throw std::invalid_argument("render_backward: upstream shape mismatch");
    }

    RenderGradients grads;
    grads.resize(cloud.size());

    const auto splats = prepare(cloud, cam);
    const auto bins = row_bins(splats, cam.height);
    const size_t m = splats.size();

    // Screen-space accumulators per splat.
    std::vector<Vec2> g_mean(m, Vec2::Zero());
    std::vector<Mat2> g_lambda(m, Mat2::Zero());
    std::vector<double> g_sigma(m, 0.0);
    std::vector<Vec3> g_color(m, Vec3::Zero());
    std::vector<char> touched(m, 0);

    std::vector<Contribution> contribs;
    contribs.reserve(64);

    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const Vec3 u(upstream.at(y, x, 0), upstream.at(y, x, 1),
                         upstream.at(y, x, 2));
            if (u.x() == 0.0 && u.y() == 0.0 && u.z() == 0.0) continue;

            // Replay the forward composite, recording contributions.
            contribs.clear();
            double T = 1.0;
            for (int k : bins[y]) {
                const Splat& s = splats[k];
                if (x < s.x0 || x > s.x1) continue;
                const Vec2 d(x - s.mean2d.x(), y - s.mean2d.y());
                const double power = 0.5 * d.dot(s.inv_cov * d);
                const double gauss = std::exp(-power);
                const double raw = s.opacity * gauss;
                const double alpha = std::min(raw, kAlphaClamp);
                if (alpha < kAlphaSkip) continue;
                contribs.push_back({k, alpha, gauss, raw > kAlphaClamp, T, d});
                T *= (1.0 - alpha);
                if (T < kTransmitEps) break;
            }

            // Reverse pass: S holds the color composited behind the current
            // contribution (background included).
            Vec3 S = T * background;
            for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
                const Contribution& cn = *it;
                const Splat& s = splats[cn.k];
                const double w = cn.alpha * cn.trans;
                touched[cn.k] = 1;

                g_color[cn.k] += w * u;

                const double dL_dalpha =
                    u.dot(s.color * cn.trans - S / (1.0 - cn.alpha));
                if (!cn.clamped) {
                    g_sigma[cn.k] += dL_dalpha * cn.gauss;
                    const double dL_dgauss = dL_dalpha * s.opacity;
                    const double dL_dpower = -dL_dgauss * cn.gauss;
                    const Vec2 lam_d = s.inv_cov * cn.d;
                    g_mean[cn.k] += -dL_dpower * lam_d;  // d(d)/d(mean2d) = -I
                    g_lambda[cn.k] += dL_dpower * 0.5 * cn.d * cn.d.transpose();
                }
                S += w * s.color;
            }
        }
    }

    // Chain screen-space gradients back to 3D parameters.
    for (size_t k = 0; k < m; ++k) {
        if (!touched[k]) continue;
        const Splat& s = splats[k];
        const Gaussian3D& g = cloud.gaussians[s.index];

        // ADC statistic: positional gradient in NDC units.
        const Vec2 ndc_grad(g_mean[k].x() * cam.width * 0.5,
                            g_mean[k].y() * cam.height * 0.5);
        grads.pos_grad_accum[s.index] += ndc_grad.norm();
        grads.pos_grad_count[s.index] += 1;

        grads.d_color[s.index] += g_color[k];
        const double sig = s.opacity;
        grads.d_opacity_logit[s.index] += g_sigma[k] * sig * (1.0 - sig);

        // Lambda = cov2d^{-1}  =>  dL/dcov2d = -Lambda dL/dLambda Lambda.
        const Mat2 gC2 = -s.inv_cov * g_lambda[k] * s.inv_cov;

        const Vec3 p = cam.to_camera(g.mu);
        const double z = p.z();
        Eigen::Matrix<double, 2, 3> J;
        J << cam.fx / z, 0, -cam.fx * p.x() / (z * z),
             0, cam.fy / z, -cam.fy * p.y() / (z * z);

        const Mat3 Sigma = covariance(g);
        const Mat3 V = cam.rotation * Sigma * cam.rotation.transpose();

        Vec3 dL_dp = J.transpose() * g_mean[k];

        // cov2d = J V J^T: contributions through V and through J(p).
        const Mat3 dL_dV = J.transpose() * gC2 * J;
        const Eigen::Matrix<double, 2, 3> dL_dJ = 2.0 * gC2 * J * V;
        const double z2 = z * z, z3 = z2 * z;
        dL_dp.x() += dL_dJ(0, 2) * (-cam.fx / z2);
        dL_dp.y() += dL_dJ(1, 2) * (-cam.fy / z2);
        dL_dp.z() += dL_dJ(0, 0) * (-cam.fx / z2) + dL_dJ(1, 1) * (-cam.fy / z2) +
                     dL_dJ(0, 2) * (2.0 * cam.fx * p.x() / z3) +
                     dL_dJ(1, 2) * (2.0 * cam.fy * p.y() / z3);

        grads.d_mu[s.index] += cam.rotation.transpose() * dL_dp;

        const Mat3 dL_dSigma =
            cam.rotation.transpose() * dL_dV * cam.rotation;

        // Sigma = M M^T with M = R diag(exp(log_scale)).
        const Mat3 R = quat_to_rot(g.rot);
        const Vec3 sc = g.log_scale.array().exp();
        const Mat3 M = R * sc.asDiagonal();
        const Mat3 dL_dM = (dL_dSigma + dL_dSigma.transpose()) * M;

        for (int c = 0; c < 3; ++c) {
            double ds = 0.0;
            for (int r = 0; r < 3; ++r) ds += R(r, c) * dL_dM(r, c);
            grads.d_log_scale[s.index][c] += ds * sc[c];
        }

        const Mat3 dL_dR = dL_dM * sc.asDiagonal();

        // R is built from the normalized quaternion u = q / |q|.
        const Vec4 q = g.rot;
        const double qn = q.norm();
        const Vec4 un = q / qn;
        const double w = un[0], xq = un[1], yq = un[2], zq = un[3];
        Mat3 dR[4];
        dR[0] << 0, -zq, yq, zq, 0, -xq, -yq, xq, 0;
        dR[1] << 0, yq, zq, yq, -2 * xq, -w, zq, w, -2 * xq;
        dR[2] << -2 * yq, xq, w, xq, 0, zq, -w, zq, -2 * yq;
        dR[3] << -2 * zq, -w, xq, w, -2 * zq, yq, xq, yq, 0;
        Vec4 dL_du;
        for (int c = 0; c < 4; ++c)
            dL_du[c] = 2.0 * (dL_dR.array() * dR[c].array()).sum();
        grads.d_rot[s.index] +=
            (Eigen::Matrix4d::Identity() - un * un.transpose()) * dL_du / qn;
    }
    return grads;
}

}  // namespace evsplat
