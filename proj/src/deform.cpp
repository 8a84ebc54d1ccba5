#include "evsplat/deform.hpp"

#include <cmath>
#include <stdexcept>

namespace evsplat {

Eigen::VectorXd positional_encoding(const Eigen::VectorXd& v, int bands) {
    const int comp = static_cast<int>(v.size());
    Eigen::VectorXd out(comp * (1 + 2 * bands));
    int k = 0;
    for (int c = 0; c < comp; ++c) {
        out[k++] = v[c];
        double freq = M_PI;
        for (int l = 0; l < bands; ++l) {
            out[k++] = std::sin(freq * v[c]);
            out[k++] = std::cos(freq * v[c]);
            freq *= 2.0;
        }
    }
    return out;
}

void MlpGradients::add(const MlpGradients& o) {
    for (size_t i = 0; i < d_weights.size(); ++i) {
        d_weights[i] += o.d_weights[i];
        d_biases[i] += o.d_biases[i];
    }
}

void MlpGradients::setZero() {
    for (auto& w : d_weights) w.setZero();
    for (auto& b : d_biases) b.setZero();
}

DeformationField::DeformationField(int depth, int width, Rng& rng) {
    int in = input_dim();
    for (int l = 0; l < depth; ++l) {
        Eigen::MatrixXd W(width, in);
        const double bound = std::sqrt(2.0 / in);
        for (int r = 0; r < W.rows(); ++r)
            for (int c = 0; c < W.cols(); ++c)
                W(r, c) = rng.uniform(-bound, bound);
        weights_.push_back(std::move(W));
        biases_.push_back(Eigen::VectorXd::Zero(width));
        in = width;
    }
    // Zero-initialized output layer: training starts from the canonical scene.
    weights_.push_back(Eigen::MatrixXd::Zero(kOutputDim, in));
    biases_.push_back(Eigen::VectorXd::Zero(kOutputDim));
}

Eigen::VectorXd DeformationField::encode(const Vec3& mu, double t) const {
    Eigen::VectorXd enc_mu = positional_encoding(mu, kBandsMu);
    Eigen::VectorXd enc_t = positional_encoding(Eigen::VectorXd::Constant(1, t), kBandsT);
    Eigen::VectorXd in(enc_mu.size() + enc_t.size());
    in << enc_mu, enc_t;
    return in;
}

Eigen::VectorXd DeformationField::evaluate(const Vec3& mu, double t) const {
    Eigen::VectorXd a = encode(mu, t);
    const size_t L = weights_.size();
    for (size_t l = 0; l + 1 < L; ++l)
        a = (weights_[l] * a + biases_[l]).cwiseMax(0.0);
    return weights_.back() * a + biases_.back();
}

std::vector<Gaussian3D> DeformationField::deform(
    const std::vector<Gaussian3D>& dynamic, double t, DeformCache* cache) const {
    std::vector<Gaussian3D> out;
    out.reserve(dynamic.size());
    if (cache) {
        cache->t = t;
        cache->inputs.clear();
        cache->hidden.clear();
        cache->pre_norm_rot.clear();
    }
    const size_t L = weights_.size();
    for (const Gaussian3D& g : dynamic) {
        if (g.label != Label::Dynamic)
            throw std::invalid_argument("deform: static Gaussian passed");
        Eigen::VectorXd a = encode(g.mu, t);
        std::vector<Eigen::VectorXd> hs;
        if (cache) cache->inputs.push_back(a);
        for (size_t l = 0; l + 1 < L; ++l) {
            a = (weights_[l] * a + biases_[l]).cwiseMax(0.0);
            if (cache) hs.push_back(a);
        }
        const Eigen::VectorXd d = weights_.back() * a + biases_.back();

        Gaussian3D out_g = g;
        out_g.mu += Vec3(d[0], d[1], d[2]);
        const Vec4 pre = g.rot + Vec4(d[3], d[4], d[5], d[6]);
        out_g.rot = pre / pre.norm();
        out_g.log_scale += Vec3(d[7], d[8], d[9]);
        out.push_back(out_g);
        if (cache) {
            cache->hidden.push_back(std::move(hs));
            cache->pre_norm_rot.push_back(pre);
        }
    }
    return out;
}

MlpGradients DeformationField::zero_gradients() const {
    MlpGradients g;
    for (size_t l = 0; l < weights_.size(); ++l) {
        g.d_weights.push_back(Eigen::MatrixXd::Zero(weights_[l].rows(), weights_[l].cols()));
        g.d_biases.push_back(Eigen::VectorXd::Zero(biases_[l].size()));
    }
    return g;
}

void DeformationField::backward(const std::vector<Gaussian3D>& dynamic,
                                const DeformCache& cache,
                                const DeformUpstream& upstream,
                                MlpGradients& d_params,
                                DeformUpstream& d_canonical) const {
    const size_t n = dynamic.size();
    if (cache.inputs.size() != n || upstream.d_mu.size() != n)
        throw std::invalid_argument("deform backward: size mismatch");
    d_canonical.d_mu.assign(n, Vec3::Zero());
    d_canonical.d_rot.assign(n, Vec4::Zero());
    d_canonical.d_log_scale.assign(n, Vec3::Zero());

    const size_t L = weights_.size();
    for (size_t i = 0; i < n; ++i) {
        // Through the quaternion renormalization r' = v / |v|, v = r + dr.
        const Vec4& v = cache.pre_norm_rot[i];
        const double vn = v.norm();
        const Vec4 un = v / vn;
        const Vec4 d_v =
            (Eigen::Matrix4d::Identity() - un * un.transpose()) * upstream.d_rot[i] / vn;

        Eigen::VectorXd d_out(kOutputDim);
        d_out << upstream.d_mu[i], d_v, upstream.d_log_scale[i];

        // Identity path to canonical parameters; mu also feeds the encoding,
        // which is stop-gradiented.
        d_canonical.d_mu[i] = upstream.d_mu[i];
        d_canonical.d_rot[i] = d_v;
        d_canonical.d_log_scale[i] = upstream.d_log_scale[i];

        // MLP backprop.
        Eigen::VectorXd delta = d_out;
        const auto& hs = cache.hidden[i];
        for (int l = static_cast<int>(L) - 1; l >= 0; --l) {
            const Eigen::VectorXd& input = (l == 0) ? cache.inputs[i] : hs[l - 1];
            d_params.d_weights[l] += delta * input.transpose();
            d_params.d_biases[l] += delta;
            if (l > 0) {
                Eigen::VectorXd back = weights_[l].transpose() * delta;
                for (int j = 0; j < back.size(); ++j)
                    if (hs[l - 1][j] <= 0.0) back[j] = 0.0;
                delta = std::move(back);
            }
        }
    }
}

}  // namespace evsplat
