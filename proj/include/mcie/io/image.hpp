#pragma once

#include <string>
#include <vector>

#include "mcie/common/error.hpp"
#include "mcie/num/tensor.hpp"

namespace mcie::io {

// Row-major interleaved pixels, values in [0,1].
struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, int c, double fill = 0.0)
        : h(h), w(w), c(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

    double at(int r, int col, int ch) const {
        return data[(static_cast<std::size_t>(r) * w + col) * c + ch];
    }
    double& at(int r, int col, int ch) {
        return data[(static_cast<std::size_t>(r) * w + col) * c + ch];
    }
    bool operator==(const Image& o) const = default;
};

// 8-bit binary PPM (P6). Values clamp to [0,1] and round on write.
Image read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image& img);

// 8-bit binary PGM (P5) of a single-channel field in [0,1].
void write_pgm(const std::string& path, const std::vector<double>& values, int h, int w);

// Flattens to the [H*W, C] token layout the editor consumes, and back.
num::Tensor image_to_tokens(const Image& img);
Image tokens_to_image(const num::Tensor& tokens, int h, int w);

double mean_abs_diff(const Image& a, const Image& b);

}  // namespace mcie::io
