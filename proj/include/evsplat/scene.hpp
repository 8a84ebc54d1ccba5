#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

namespace evsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

enum class Label : uint8_t { Static = 0, Dynamic = 1 };

// One anisotropic Gaussian primitive. Scale is stored in log space so the
// scaling matrix stays positive under unconstrained gradient steps; opacity
// is a logit mapped through a sigmoid. Color is flat RGB (SH degree 0).
struct Gaussian3D {
    Vec3 mu = Vec3::Zero();
    Vec4 rot = Vec4(1, 0, 0, 0);  // quaternion (w, x, y, z)
    Vec3 log_scale = Vec3::Zero();
    double opacity_logit = 0.0;
    Vec3 color = Vec3::Zero();
    Label label = Label::Static;

    double opacity() const { return 1.0 / (1.0 + std::exp(-opacity_logit)); }
    void normalize_rot() { rot /= rot.norm(); }
};

// Rotation matrix from a (not necessarily unit) quaternion; normalizes first.
Mat3 quat_to_rot(const Vec4& q);

// Sigma = R S S^T R^T with S = diag(exp(log_scale)).
Mat3 covariance(const Gaussian3D& g);

struct Camera {
    double fx = 1, fy = 1, cx = 0, cy = 0;
    Mat3 rotation = Mat3::Identity();   // world-to-camera
    Vec3 translation = Vec3::Zero();    // world-to-camera
    int width = 0, height = 0;
    double time = 0.0;  // normalized sequence time in [0, 1]

    Vec3 to_camera(const Vec3& p_world) const {
        return rotation * p_world + translation;
    }
    Vec3 to_world(const Vec3& p_cam) const {
        return rotation.transpose() * (p_cam - translation);
    }
};

struct GaussianCloud {
    std::vector<Gaussian3D> gaussians;
    bool canonical = true;

    size_t size() const { return gaussians.size(); }
};

constexpr double kZNear = 0.01;
constexpr double kCov2dFloor = 0.3;  // px^2, matches 3D-GS practice

struct Projection {
    Vec2 mean2d;   // pixels
    Mat2 cov2d;    // includes the 0.3 px^2 floor
    double depth;  // camera-space z
};

// EWA-style affine projection. Returns nullopt when the center is behind
// the camera (z <= z_near); the caller culls, it is not an error.
std::optional<Projection> project_gaussian(const Gaussian3D& g, const Camera& cam);

// Mean nearest-neighbor distance among Gaussian centers ("basic unit").
double mean_nn_distance(const std::vector<Vec3>& points);

}  // namespace evsplat
