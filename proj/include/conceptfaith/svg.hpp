#pragma once
// Minimal self-contained SVG plots: box, line-with-band, violin, and scatter
// with a fitted-curve overlay. Figures are views over emitted tables; no plot
// computes anything a table does not already hold, beyond display geometry.

#include <functional>
#include <string>
#include <vector>

#include "conceptfaith/common.hpp"
#include "conceptfaith/tensor.hpp"

namespace conceptfaith {
namespace svgplot {

struct Frame {
    int width = 680, height = 440;
    int left = 70, right = 24, top = 42, bottom = 56;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;

    double px(double x) const { return left + (x - xmin) / (xmax - xmin) * (width - left - right); }
    double py(double y) const { return height - bottom - (y - ymin) / (ymax - ymin) * (height - top - bottom); }
};

namespace detail {

inline std::string num(double v) { return format_double(v, 6); }

inline void open_svg(std::string& s, const Frame& f, const std::string& title) {
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(f.width) + "\" height=\"" +
         std::to_string(f.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + std::to_string(f.width / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
         title + "</text>\n";
}

inline void line(std::string& s, double x1, double y1, double x2, double y2, const std::string& color,
                 double width = 1.0) {
    s += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) +
         "\" stroke=\"" + color + "\" stroke-width=\"" + num(width) + "\"/>\n";
}

inline void text(std::string& s, double x, double y, const std::string& t, const std::string& anchor = "middle",
                 double rotate = 0.0) {
    s += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"" + anchor + "\"";
    if (rotate != 0.0) s += " transform=\"rotate(" + num(rotate) + " " + num(x) + " " + num(y) + ")\"";
    s += ">" + t + "</text>\n";
}

inline void rect(std::string& s, double x, double y, double w, double h, const std::string& fill,
                 const std::string& stroke) {
    s += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
         "\" fill=\"" + fill + "\" stroke=\"" + stroke + "\"/>\n";
}

inline void circle(std::string& s, double x, double y, double r, const std::string& fill) {
    s += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"" + num(r) + "\" fill=\"" + fill +
         "\" fill-opacity=\"0.7\"/>\n";
}

inline void polyline(std::string& s, const std::vector<std::pair<double, double>>& pts, const std::string& color,
                     double width = 1.5, const std::string& fill = "none") {
    s += "<polyline fill=\"" + fill + "\" stroke=\"" + color + "\" stroke-width=\"" + num(width) + "\" points=\"";
    for (const auto& [x, y] : pts) s += num(x) + "," + num(y) + " ";
    s += "\"/>\n";
}

inline void y_axis(std::string& s, const Frame& f, const std::string& label) {
    line(s, f.left, f.top, f.left, f.height - f.bottom, "black");
    for (int i = 0; i <= 5; ++i) {
        const double v = f.ymin + (f.ymax - f.ymin) * i / 5.0;
        const double y = f.py(v);
        line(s, f.left - 4, y, f.left, y, "black");
        text(s, f.left - 8, y + 4, format_double(v, 3), "end");
    }
    text(s, 16, (f.top + f.height - f.bottom) / 2.0, label, "middle", -90);
}

inline void x_axis_line(std::string& s, const Frame& f) {
    line(s, f.left, f.height - f.bottom, f.width - f.right, f.height - f.bottom, "black");
}

inline const char* palette(std::size_t i) {
    static const char* colors[] = {"#3b6fb6", "#c2533a", "#4d9948", "#8455b7", "#b58a2c", "#3aa0a8"};
    return colors[i % 6];
}

inline void span_of(const std::vector<double>& v, double& lo, double& hi) {
    for (double x : v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
}

inline void pad_span(double& lo, double& hi) {
    if (hi <= lo) hi = lo + 1.0;
    const double pad = 0.06 * (hi - lo);
    lo -= pad;
    hi += pad;
}

inline std::vector<double> quartiles(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    auto at = [&](double q) {
        const double pos = q * (static_cast<double>(v.size()) - 1.0);
        const std::size_t i = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(i);
        return i + 1 < v.size() ? v[i] * (1 - frac) + v[i + 1] * frac : v[i];
    };
    return {v.front(), at(0.25), at(0.5), at(0.75), v.back()};
}

}  // namespace detail

struct Group {
    std::string label;
    std::vector<double> values;
};

inline std::string box_plot(const std::vector<Group>& groups, const std::string& title,
                            const std::string& ylabel) {
    require(!groups.empty(), "box_plot needs at least one group");
    Frame f;
    double lo = 1e300, hi = -1e300;
    for (const auto& g : groups) detail::span_of(g.values, lo, hi);
    detail::pad_span(lo, hi);
    f.ymin = lo;
    f.ymax = hi;
    f.xmin = 0;
    f.xmax = static_cast<double>(groups.size());

    std::string s;
    detail::open_svg(s, f, title);
    detail::y_axis(s, f, ylabel);
    detail::x_axis_line(s, f);
    for (std::size_t i = 0; i < groups.size(); ++i) {
        if (groups[i].values.empty()) continue;
        const auto q = detail::quartiles(groups[i].values);
        const double cx = f.px(i + 0.5);
        const double half = 0.28 * (f.px(1) - f.px(0));
        detail::line(s, cx, f.py(q[0]), cx, f.py(q[1]), "black");
        detail::line(s, cx, f.py(q[3]), cx, f.py(q[4]), "black");
        detail::rect(s, cx - half, f.py(q[3]), 2 * half, f.py(q[1]) - f.py(q[3]), detail::palette(i), "black");
        detail::line(s, cx - half, f.py(q[2]), cx + half, f.py(q[2]), "black", 2.0);
        detail::text(s, cx, f.height - f.bottom + 18, groups[i].label);
    }
    s += "</svg>\n";
    return s;
}

struct Series {
    std::string label;
    std::vector<double> x, y, err;
};

inline std::string line_plot(const std::vector<Series>& series, const std::string& title,
                             const std::string& xlabel, const std::string& ylabel) {
    require(!series.empty(), "line_plot needs at least one series");
    Frame f;
    double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
    for (const auto& sr : series) {
        detail::span_of(sr.x, xlo, xhi);
        for (std::size_t i = 0; i < sr.y.size(); ++i) {
            const double e = i < sr.err.size() ? sr.err[i] : 0.0;
            ylo = std::min(ylo, sr.y[i] - e);
            yhi = std::max(yhi, sr.y[i] + e);
        }
    }
    detail::pad_span(xlo, xhi);
    detail::pad_span(ylo, yhi);
    f.xmin = xlo;
    f.xmax = xhi;
    f.ymin = ylo;
    f.ymax = yhi;

    std::string s;
    detail::open_svg(s, f, title);
    detail::y_axis(s, f, ylabel);
    detail::x_axis_line(s, f);
    for (int i = 0; i <= 5; ++i) {
        const double v = f.xmin + (f.xmax - f.xmin) * i / 5.0;
        detail::line(s, f.px(v), f.height - f.bottom, f.px(v), f.height - f.bottom + 4, "black");
        detail::text(s, f.px(v), f.height - f.bottom + 18, format_double(v, 3));
    }
    detail::text(s, (f.left + f.width - f.right) / 2.0, f.height - 10, xlabel);

    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& sr = series[si];
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < sr.x.size(); ++i) {
            pts.emplace_back(f.px(sr.x[i]), f.py(sr.y[i]));
            if (i < sr.err.size() && sr.err[i] > 0)
                detail::line(s, f.px(sr.x[i]), f.py(sr.y[i] - sr.err[i]), f.px(sr.x[i]), f.py(sr.y[i] + sr.err[i]),
                             detail::palette(si));
        }
        detail::polyline(s, pts, detail::palette(si));
        detail::text(s, f.width - f.right - 6, f.top + 16.0 * (si + 1), sr.label, "end");
        detail::line(s, f.width - f.right - 70, f.top + 16.0 * (si + 1) - 4, f.width - f.right - 56,
                     f.top + 16.0 * (si + 1) - 4, detail::palette(si), 2.0);
    }
    s += "</svg>\n";
    return s;
}

inline std::string violin_plot(const std::vector<Group>& groups, const std::string& title,
                               const std::string& ylabel) {
    require(!groups.empty(), "violin_plot needs at least one group");
    Frame f;
    double lo = 1e300, hi = -1e300;
    for (const auto& g : groups) detail::span_of(g.values, lo, hi);
    detail::pad_span(lo, hi);
    f.ymin = lo;
    f.ymax = hi;
    f.xmin = 0;
    f.xmax = static_cast<double>(groups.size());

    std::string s;
    detail::open_svg(s, f, title);
    detail::y_axis(s, f, ylabel);
    detail::x_axis_line(s, f);
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& v = groups[gi].values;
        if (v.size() < 2) continue;
        const double sd = stddev_of(v);
        const double bw = std::max(1e-9, 1.06 * sd * std::pow(static_cast<double>(v.size()), -0.2));
        const int steps = 48;
        std::vector<double> density(steps + 1, 0.0);
        double dmax = 0.0;
        for (int i = 0; i <= steps; ++i) {
            const double y = f.ymin + (f.ymax - f.ymin) * i / steps;
            double d = 0.0;
            for (double x : v) {
                const double z = (y - x) / bw;
                d += std::exp(-0.5 * z * z);
            }
            density[i] = d;
            dmax = std::max(dmax, d);
        }
        const double cx = f.px(gi + 0.5);
        const double half = 0.32 * (f.px(1) - f.px(0));
        std::vector<std::pair<double, double>> outline;
        for (int i = 0; i <= steps; ++i) {
            const double y = f.ymin + (f.ymax - f.ymin) * i / steps;
            outline.emplace_back(cx + half * density[i] / dmax, f.py(y));
        }
        for (int i = steps; i >= 0; --i) {
            const double y = f.ymin + (f.ymax - f.ymin) * i / steps;
            outline.emplace_back(cx - half * density[i] / dmax, f.py(y));
        }
        detail::polyline(s, outline, "black", 1.0, detail::palette(gi));
        detail::text(s, cx, f.height - f.bottom + 18, groups[gi].label);
    }
    s += "</svg>\n";
    return s;
}

inline std::string scatter_plot(const std::vector<double>& x, const std::vector<double>& y,
                                const std::function<double(double)>& overlay, const std::string& title,
                                const std::string& xlabel, const std::string& ylabel) {
    require(x.size() == y.size() && !x.empty(), "scatter_plot needs matched non-empty series");
    Frame f;
    double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
    detail::span_of(x, xlo, xhi);
    detail::span_of(y, ylo, yhi);
    detail::pad_span(xlo, xhi);
    detail::pad_span(ylo, yhi);
    f.xmin = xlo;
    f.xmax = xhi;
    f.ymin = ylo;
    f.ymax = yhi;

    std::string s;
    detail::open_svg(s, f, title);
    detail::y_axis(s, f, ylabel);
    detail::x_axis_line(s, f);
    for (int i = 0; i <= 5; ++i) {
        const double v = f.xmin + (f.xmax - f.xmin) * i / 5.0;
        detail::line(s, f.px(v), f.height - f.bottom, f.px(v), f.height - f.bottom + 4, "black");
        detail::text(s, f.px(v), f.height - f.bottom + 18, format_double(v, 3));
    }
    detail::text(s, (f.left + f.width - f.right) / 2.0, f.height - 10, xlabel);
    for (std::size_t i = 0; i < x.size(); ++i) detail::circle(s, f.px(x[i]), f.py(y[i]), 3.2, detail::palette(0));
    if (overlay) {
        std::vector<std::pair<double, double>> pts;
        for (int i = 0; i <= 100; ++i) {
            const double xv = f.xmin + (f.xmax - f.xmin) * i / 100.0;
            const double yv = overlay(xv);
            if (yv >= f.ymin && yv <= f.ymax) pts.emplace_back(f.px(xv), f.py(yv));
        }
        detail::polyline(s, pts, detail::palette(1), 2.0);
    }
    s += "</svg>\n";
    return s;
}

}  // namespace svgplot
}  // namespace conceptfaith
