#pragma once

#include <Eigen/Dense>
#include <vector>

#include "evsplat/rng.hpp"
#include "evsplat/scene.hpp"

namespace evsplat {

// [v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^{L-1} pi v), cos(2^{L-1} pi v)]
// per component; dimension comp * (1 + 2L).
Eigen::VectorXd positional_encoding(const Eigen::VectorXd& v, int bands);

struct MlpGradients {
    std::vector<Eigen::MatrixXd> d_weights;
    std::vector<Eigen::VectorXd> d_biases;

    void add(const MlpGradients& o);
    void setZero();
};

// Per-Gaussian upstream gradients on the deformed parameters.
struct DeformUpstream {
    std::vector<Vec3> d_mu;
    std::vector<Vec4> d_rot;
    std::vector<Vec3> d_log_scale;
};

struct DeformCache {
    double t = 0.0;
    std::vector<Eigen::VectorXd> inputs;              // encoded inputs
    std::vector<std::vector<Eigen::VectorXd>> hidden; // post-ReLU activations
    std::vector<Vec4> pre_norm_rot;                   // r + delta_r before renorm
};

// MLP mapping (encoded canonical position, encoded time) to displacements of
// position, rotation, and scale. The position enters through a stop-gradient.
class DeformationField {
public:
    static constexpr int kBandsMu = 10;
    static constexpr int kBandsT = 6;
    static constexpr int kOutputDim = 10;  // 3 + 4 + 3

    DeformationField() = default;
    DeformationField(int depth, int width, Rng& rng);

    int input_dim() const { return 3 * (1 + 2 * kBandsMu) + (1 + 2 * kBandsT); }
    int depth() const { return static_cast<int>(weights_.size()) - 1; }

    // Raw displacement (delta_mu, delta_r, delta_s) at (mu, t).
    Eigen::VectorXd evaluate(const Vec3& mu, double t) const;

    // Apply to a set of Dynamic Gaussians; quaternion renormalized after the
    // additive update. Fill `cache` to enable backward.
    std::vector<Gaussian3D> deform(const std::vector<Gaussian3D>& dynamic,
                                   double t, DeformCache* cache = nullptr) const;

    // Gradients of the loss w.r.t. MLP parameters and (through the additive
    // identity path only) the canonical Gaussian parameters.
    void backward(const std::vector<Gaussian3D>& dynamic, const DeformCache& cache,
                  const DeformUpstream& upstream, MlpGradients& d_params,
                  DeformUpstream& d_canonical) const;

    MlpGradients zero_gradients() const;

    std::vector<Eigen::MatrixXd>& weights() { return weights_; }
    std::vector<Eigen::VectorXd>& biases() { return biases_; }
    const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
    const std::vector<Eigen::VectorXd>& biases() const { return biases_; }

private:
    Eigen::VectorXd encode(const Vec3& mu, double t) const;
    std::vector<Eigen::MatrixXd> weights_;
    std::vector<Eigen::VectorXd> biases_;
};

}  // namespace evsplat
