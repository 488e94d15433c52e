#include "mcie/io/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace mcie::io {

namespace {

unsigned char to_byte(double v) {
    const double clamped = std::clamp(v, 0.0, 1.0);
    return static_cast<unsigned char>(std::lround(clamped * 255.0));
}

int read_pnm_int(std::istream& is, const std::string& path) {
    // Skips whitespace and '#' comment lines per the PNM grammar.
    int ch = is.peek();
    while (is && (std::isspace(ch) || ch == '#')) {
        if (ch == '#') {
            std::string line;
            std::getline(is, line);
        } else {
            is.get();
        }
        ch = is.peek();
    }
    int v = 0;
    if (!(is >> v)) throw data_error("bad PNM header in " + path);
    return v;
}

}  // namespace

Image read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw data_error("cannot open image: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P6") throw data_error("not a binary PPM (P6): " + path);
    const int w = read_pnm_int(is, path);
    const int h = read_pnm_int(is, path);
    const int maxval = read_pnm_int(is, path);
    if (w < 1 || h < 1 || maxval != 255) throw data_error("unsupported PPM geometry in " + path);
    is.get();
    std::vector<unsigned char> bytes(static_cast<std::size_t>(h) * w * 3);
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!is) throw data_error("truncated PPM payload in " + path);
    Image img(h, w, 3);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
    return img;
}

void write_ppm(const std::string& path, const Image& img) {
    if (img.c != 3) throw contract_error("write_ppm needs 3 channels, got " + std::to_string(img.c));
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw data_error("cannot write image: " + path);
    os << "P6\n" << img.w << ' ' << img.h << "\n255\n";
    std::vector<unsigned char> bytes(img.data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(img.data[i]);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw data_error("short write to " + path);
}

void write_pgm(const std::string& path, const std::vector<double>& values, int h, int w) {
    if (static_cast<std::size_t>(h) * w != values.size()) {
        throw contract_error("write_pgm: " + std::to_string(values.size()) + " values for " +
                             std::to_string(h) + "x" + std::to_string(w));
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw data_error("cannot write image: " + path);
    os << "P5\n" << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> bytes(values.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(values[i]);
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw data_error("short write to " + path);
}

num::Tensor image_to_tokens(const Image& img) {
    return num::Tensor::from_vector({img.h * img.w, img.c}, img.data);
}

Image tokens_to_image(const num::Tensor& tokens, int h, int w) {
    if (tokens.ndim() != 2 || tokens.rows() != h * w) {
        throw contract_error("tokens_to_image: " + tokens.shape_str() + " does not cover " +
                             std::to_string(h) + "x" + std::to_string(w));
    }
    Image img(h, w, tokens.cols());
    img.data = tokens.value();
    return img;
}

double mean_abs_diff(const Image& a, const Image& b) {
    if (a.h != b.h || a.w != b.w || a.c != b.c) {
        throw contract_error("mean_abs_diff: image geometry mismatch");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) sum += std::fabs(a.data[i] - b.data[i]);
    return a.data.empty() ? 0.0 : sum / static_cast<double>(a.data.size());
}

}  // namespace mcie::io
