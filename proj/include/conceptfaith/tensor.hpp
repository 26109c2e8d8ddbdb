#pragma once
// Dense (h, w, c) tensor with row-major layout and the small vector kernels
// the CAV/importance math is built on.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "conceptfaith/common.hpp"

namespace conceptfaith {

struct Tensor3 {
    int h = 0, w = 0, c = 0;
    std::vector<double> data;

    Tensor3() = default;
    Tensor3(int h_, int w_, int c_) : h(h_), w(w_), c(c_), data(static_cast<std::size_t>(h_) * w_ * c_, 0.0) {}

    std::size_t size() const { return data.size(); }
    double& at(int y, int x, int ch) { return data[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
    double at(int y, int x, int ch) const { return data[(static_cast<std::size_t>(y) * w + x) * c + ch]; }

    bool same_shape(const Tensor3& o) const { return h == o.h && w == o.w && c == o.c; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    // Spatial mean per channel.
    std::vector<double> global_average_pool() const {
        std::vector<double> out(static_cast<std::size_t>(c), 0.0);
        const double inv = 1.0 / (static_cast<double>(h) * w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch) out[ch] += at(y, x, ch);
        for (double& v : out) v *= inv;
        return out;
    }
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation (ddof=1); 0 for fewer than two values.
inline double stddev_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

inline std::vector<double> l2_normalized(const std::vector<double>& v) {
    const double n = norm2(v);
    require(n > 0.0, "cannot normalize zero vector");
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

}  // namespace conceptfaith
