#pragma once
// Procedural texture rendering. Backs the deterministic mock provider, the
// toy corpus builder, and the procedural concept-removal editor. Every image
// is a pure function of (family, key, options).

#include <cmath>
#include <string>

#include "conceptfaith/image.hpp"

namespace conceptfaith {

enum class TextureFamily { Striped, Dotted, Checker, Grid, Blobs, Plain, Noise };

inline const char* family_name(TextureFamily f) {
    switch (f) {
        case TextureFamily::Striped: return "striped";
        case TextureFamily::Dotted: return "dotted";
        case TextureFamily::Checker: return "checker";
        case TextureFamily::Grid: return "grid";
        case TextureFamily::Blobs: return "blobs";
        case TextureFamily::Plain: return "plain";
        case TextureFamily::Noise: return "noise";
    }
    return "noise";
}

// First family whose name appears in the text; Noise when none does.
inline TextureFamily family_from_text(const std::string& text) {
    const std::string t = to_lower(text);
    for (TextureFamily f : {TextureFamily::Striped, TextureFamily::Dotted, TextureFamily::Checker,
                            TextureFamily::Grid, TextureFamily::Blobs, TextureFamily::Plain}) {
        if (contains(t, family_name(f))) return f;
    }
    return TextureFamily::Noise;
}

struct ProcgenOptions {
    int size = 64;
    // 1.0 draws parameters from the full range; smaller values narrow the
    // range around its center, producing less varied (more synthetic-looking)
    // sets.
    double diversity = 1.0;
    // Difficulty knobs: scale the drawn noise level and contrast.
    double noise_scale = 1.0;
    double contrast_scale = 1.0;
};

namespace detail {

inline double draw_in(KeyedRng& rng, double lo, double hi, double diversity) {
    const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo) * diversity;
    return rng.uniform(mid - half, mid + half);
}

}  // namespace detail

inline Image render_texture(TextureFamily family, std::uint64_t key, const ProcgenOptions& opt = {}) {
    KeyedRng rng(key);
    const int n = opt.size;
    const double d = opt.diversity;
    const double bg = detail::draw_in(rng, 0.30, 0.70, d);
    double contrast = detail::draw_in(rng, 0.25, 0.40, d) * opt.contrast_scale;
    if (rng.next_double() < 0.5) contrast = -contrast;
    // Low-frequency families keep a fixed polarity (dark dots, bright disks)
    // so their set means do not cancel out.
    if (family == TextureFamily::Dotted) contrast = -std::abs(contrast);
    if (family == TextureFamily::Blobs) contrast = std::abs(contrast);
    const double fg = std::clamp(bg + contrast, 0.02, 0.98);
    const double noise_sigma = detail::draw_in(rng, 0.02, 0.06, d) * opt.noise_scale;

    std::vector<double> field(static_cast<std::size_t>(n) * n, bg);
    auto px = [&](int y, int x) -> double& { return field[static_cast<std::size_t>(y) * n + x]; };

    switch (family) {
        case TextureFamily::Striped: {
            const double theta = detail::draw_in(rng, 0.0, 3.14159265358979, d);
            const double freq = detail::draw_in(rng, 2.5, 6.0, d);
            const double phase = rng.uniform(0.0, 6.28318530717959);
            const double cx = std::cos(theta), sx = std::sin(theta);
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) {
                    const double u = (x * cx + y * sx) / n;
                    if (std::sin(6.28318530717959 * freq * u + phase) > 0) px(y, x) = fg;
                }
            break;
        }
        case TextureFamily::Dotted: {
            const int dots = static_cast<int>(detail::draw_in(rng, 12.0, 22.0, d));
            const double radius = detail::draw_in(rng, 0.05, 0.10, d) * n;
            for (int i = 0; i < dots; ++i) {
                const double cy = rng.uniform(0.0, n), cxd = rng.uniform(0.0, n);
                const int r = static_cast<int>(std::ceil(radius));
                for (int y = std::max(0, static_cast<int>(cy) - r); y < std::min(n, static_cast<int>(cy) + r + 1); ++y)
                    for (int x = std::max(0, static_cast<int>(cxd) - r); x < std::min(n, static_cast<int>(cxd) + r + 1); ++x) {
                        const double dy = y - cy, dx = x - cxd;
                        if (dy * dy + dx * dx <= radius * radius) px(y, x) = fg;
                    }
            }
            break;
        }
        case TextureFamily::Checker: {
            const int cell = std::max(3, static_cast<int>(detail::draw_in(rng, 5.0, 11.0, d)));
            const int oy = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cell)));
            const int ox = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cell)));
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x)
                    if ((((y + oy) / cell) + ((x + ox) / cell)) % 2 == 0) px(y, x) = fg;
            break;
        }
        case TextureFamily::Grid: {
            const int spacing = std::max(4, static_cast<int>(detail::draw_in(rng, 6.0, 12.0, d)));
            const int width = 1 + static_cast<int>(rng.next_below(2));
            const int oy = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spacing)));
            const int ox = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spacing)));
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x)
                    if ((y + oy) % spacing < width || (x + ox) % spacing < width) px(y, x) = fg;
            break;
        }
        case TextureFamily::Blobs: {
            // few large hard-edged disks, as opposed to Dotted's many small ones
            const int blobs = 3 + static_cast<int>(rng.next_below(4));
            const double radius = detail::draw_in(rng, 0.14, 0.24, d) * n;
            for (int i = 0; i < blobs; ++i) {
                const double cy = rng.uniform(0.0, n), cxd = rng.uniform(0.0, n);
                for (int y = 0; y < n; ++y)
                    for (int x = 0; x < n; ++x) {
                        const double dy = y - cy, dx = x - cxd;
                        if (dy * dy + dx * dx <= radius * radius) px(y, x) = fg;
                    }
            }
            break;
        }
        case TextureFamily::Plain:
            break;
        case TextureFamily::Noise: {
            for (auto& v : field) v = bg + (fg - bg) * rng.next_double();
            break;
        }
    }

    for (auto& v : field) {
        // Box-Muller from the keyed stream keeps renders platform-stable.
        const double u1 = std::max(rng.next_double(), 1e-12);
        const double u2 = rng.next_double();
        v += noise_sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.28318530717959 * u2);
    }
    return gray_to_image(field, n, n);
}

// Counterfactual edit: blend the image toward its own mean level, wiping the
// texture structure while keeping per-pixel noise so the output is not a
// constant field. strength=0 is the identity, strength=1 a full erase.
inline Image erase_texture(const Image& input, double strength, std::uint64_t key) {
    require(strength >= 0.0 && strength <= 1.0, "erase strength must be in [0,1]");
    std::vector<double> gray = to_gray(input);
    const double mean = mean_of(gray);
    KeyedRng rng(hash_combine(key, fnv1a64(input.pixels.data(), input.pixels.size())));
    for (auto& v : gray) {
        const double flat = mean + 0.02 * (rng.next_double() - 0.5);
        v = (1.0 - strength) * v + strength * flat;
    }
    return gray_to_image(gray, input.width, input.height);
}

}  // namespace conceptfaith
