#include "evsplat/scene.hpp"

#include <limits>

namespace evsplat {

Mat3 quat_to_rot(const Vec4& q) {
    const Vec4 u = q / q.norm();
    const double w = u[0], x = u[1], y = u[2], z = u[3];
    Mat3 R;
    R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return R;
}

Mat3 covariance(const Gaussian3D& g) {
    const Mat3 R = quat_to_rot(g.rot);
    const Vec3 s = g.log_scale.array().exp();
    const Mat3 M = R * s.asDiagonal();
    return M * M.transpose();
}

std::optional<Projection> project_gaussian(const Gaussian3D& g, const Camera& cam) {
    const Vec3 p = cam.to_camera(g.mu);
    if (p.z() <= kZNear) return std::nullopt;

    const double z = p.z();
    Projection out;
    out.mean2d = Vec2(cam.fx * p.x() / z + cam.cx, cam.fy * p.y() / z + cam.cy);
    out.depth = z;

    Eigen::Matrix<double, 2, 3> J;
    J << cam.fx / z, 0, -cam.fx * p.x() / (z * z),
         0, cam.fy / z, -cam.fy * p.y() / (z * z);

    const Mat3 V = cam.rotation * covariance(g) * cam.rotation.transpose();
    out.cov2d = J * V * J.transpose() + kCov2dFloor * Mat2::Identity();
    return out;
}

double mean_nn_distance(const std::vector<Vec3>& points) {
    const size_t n = points.size();
    if (n < 2) return 0.0;
    double total = 0.0;
    // O(n^2) is fine at desk scale for n up to a few thousand.
    for (size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            best = std::min(best, (points[i] - points[j]).squaredNorm());
        }
        total += std::sqrt(best);
    }
    return total / static_cast<double>(n);
}

}  // namespace evsplat
