#pragma once
// 8-bit image container with binary PNM (P5/P6) read/write and deterministic
// resizing. PNM keeps the pipeline free of codec dependencies; corpora in
// other formats are converted on ingest (see README).

#include <cstdint>
#include <string>
#include <vector>

#include "conceptfaith/common.hpp"
#include "conceptfaith/tensor.hpp"

namespace conceptfaith {

struct Image {
    int width = 0, height = 0, channels = 0;  // channels: 1 (gray) or 3 (rgb)
    std::vector<std::uint8_t> pixels;          // row-major, interleaved

    Image() = default;
    Image(int w, int h, int ch)
        : width(w), height(h), channels(ch), pixels(static_cast<std::size_t>(w) * h * ch, 0) {}

    std::uint8_t& at(int y, int x, int ch) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + ch];
    }
    std::uint8_t at(int y, int x, int ch) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + ch];
    }
};

namespace detail {

inline void skip_pnm_space(const std::string& s, std::size_t& pos) {
    while (pos < s.size()) {
        if (std::isspace(static_cast<unsigned char>(s[pos]))) {
            ++pos;
        } else if (s[pos] == '#') {
            while (pos < s.size() && s[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
}

inline int read_pnm_int(const std::string& s, std::size_t& pos, const std::string& file) {
    skip_pnm_space(s, pos);
    std::size_t start = pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos == start) throw ParseError("malformed PNM header in " + file);
    return std::stoi(s.substr(start, pos - start));
}

}  // namespace detail

inline Image decode_pnm(const std::string& bytes, const std::string& name) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw ParseError("unsupported image format (want binary PGM/PPM): " + name);
    const int channels = bytes[1] == '5' ? 1 : 3;
    std::size_t pos = 2;
    const int w = detail::read_pnm_int(bytes, pos, name);
    const int h = detail::read_pnm_int(bytes, pos, name);
    const int maxval = detail::read_pnm_int(bytes, pos, name);
    if (maxval != 255) throw ParseError("only maxval 255 PNM supported: " + name);
    ++pos;  // single whitespace after maxval
    Image img(w, h, channels);
    if (bytes.size() - pos < img.pixels.size()) throw ParseError("truncated image data: " + name);
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), img.pixels.size(), img.pixels.begin());
    return img;
}

inline Image read_pnm(const std::string& path) {
    std::string bytes;
    try {
        bytes = read_file(path);
    } catch (const IoError&) {
        throw IoError("cannot decode image, unreadable file: " + path);
    }
    return decode_pnm(bytes, path);
}

inline std::string encode_pnm(const Image& img) {
    std::string out = (img.channels == 1 ? "P5\n" : "P6\n");
    out += std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
    return out;
}

inline void write_pnm(const std::string& path, const Image& img) {
    require(img.channels == 1 || img.channels == 3, "PNM supports 1 or 3 channels");
    write_file_atomic(path, encode_pnm(img));
}

inline const std::vector<std::string>& image_extensions() {
    static const std::vector<std::string> exts = {".pgm", ".ppm", ".pnm"};
    return exts;
}

// Grayscale [0,1] field; channel mean for RGB.
inline std::vector<double> to_gray(const Image& img) {
    std::vector<double> out(static_cast<std::size_t>(img.width) * img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (int ch = 0; ch < img.channels; ++ch) acc += img.at(y, x, ch);
            out[static_cast<std::size_t>(y) * img.width + x] = acc / (255.0 * img.channels);
        }
    return out;
}

// Deterministic resize of a gray field: exact box average for integer
// downscales, bilinear otherwise.
inline std::vector<double> resize_gray(const std::vector<double>& src, int sw, int sh, int dw, int dh) {
    std::vector<double> out(static_cast<std::size_t>(dw) * dh, 0.0);
    if (sw == dw && sh == dh) return src;
    if (sw % dw == 0 && sh % dh == 0) {
        const int bx = sw / dw, by = sh / dh;
        const double inv = 1.0 / (bx * by);
        for (int y = 0; y < dh; ++y)
            for (int x = 0; x < dw; ++x) {
                double acc = 0.0;
                for (int yy = 0; yy < by; ++yy)
                    for (int xx = 0; xx < bx; ++xx)
                        acc += src[static_cast<std::size_t>(y * by + yy) * sw + (x * bx + xx)];
                out[static_cast<std::size_t>(y) * dw + x] = acc * inv;
            }
        return out;
    }
    for (int y = 0; y < dh; ++y) {
        const double fy = (y + 0.5) * sh / dh - 0.5;
        const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, sh - 1);
        const int y1 = std::min(y0 + 1, sh - 1);
        const double wy = std::clamp(fy - y0, 0.0, 1.0);
        for (int x = 0; x < dw; ++x) {
            const double fx = (x + 0.5) * sw / dw - 0.5;
            const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, sw - 1);
            const int x1 = std::min(x0 + 1, sw - 1);
            const double wx = std::clamp(fx - x0, 0.0, 1.0);
            const double a = src[static_cast<std::size_t>(y0) * sw + x0] * (1 - wx) +
                             src[static_cast<std::size_t>(y0) * sw + x1] * wx;
            const double b = src[static_cast<std::size_t>(y1) * sw + x0] * (1 - wx) +
                             src[static_cast<std::size_t>(y1) * sw + x1] * wx;
            out[static_cast<std::size_t>(y) * dw + x] = a * (1 - wy) + b * wy;
        }
    }
    return out;
}

inline Image gray_to_image(const std::vector<double>& field, int w, int h) {
    Image img(w, h, 1);
    for (std::size_t i = 0; i < field.size(); ++i) {
        const double v = std::clamp(field[i], 0.0, 1.0);
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    return img;
}

}  // namespace conceptfaith
