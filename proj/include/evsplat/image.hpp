#pragma once

#include <cassert>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace evsplat {

// Dense row-major image buffer, double precision throughout.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c),
          data(static_cast<size_t>(w) * h * c, fill) {}

    double& at(int y, int x, int c = 0) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    double at(int y, int x, int c = 0) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }
}

// BT.601 luma from a 3-channel image; passthrough for 1-channel.
inline Image luminance(const Image& img) {
    if (img.channels == 1) return img;
    if (img.channels != 3) throw std::invalid_argument("luminance: need 1 or 3 channels");
    Image out(img.width, img.height, 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            out.at(y, x) = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) +
                           0.114 * img.at(y, x, 2);
    return out;
}

constexpr double kBT601[3] = {0.299, 0.587, 0.114};

}  // namespace evsplat
