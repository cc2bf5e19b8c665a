#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "otreg/contour.hpp"
#include "otreg/field_io.hpp"

namespace otreg {

struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
};

struct PlotSpec {
    std::string title;
    std::string xlabel, ylabel;
    bool log_x = false;
    bool log_y = false;
    int width = 560;
    int height = 400;
};

/// SVG 1.1 line plot with markers. Nonpositive values are dropped on log axes.
inline std::string line_plot_svg(const std::vector<PlotSeries>& series, const PlotSpec& spec) {
    auto tx = [&](double v) { return spec.log_x ? std::log10(v) : v; };
    auto ty = [&](double v) { return spec.log_y ? std::log10(v) : v; };
    auto usable = [&](double x, double y) {
        return std::isfinite(x) && std::isfinite(y) && (!spec.log_x || x > 0.0) && (!spec.log_y || y > 0.0);
    };
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!usable(s.x[i], s.y[i])) continue;
            x0 = std::min(x0, tx(s.x[i]));
            x1 = std::max(x1, tx(s.x[i]));
            y0 = std::min(y0, ty(s.y[i]));
            y1 = std::max(y1, ty(s.y[i]));
        }
    if (!std::isfinite(x0)) x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
    if (x1 - x0 < 1e-300) x0 -= 0.5, x1 += 0.5;
    if (y1 - y0 < 1e-300) y0 -= 0.5, y1 += 0.5;
    const double ml = 70, mr = 20, mt = 30, mb = 50;
    const double pw = spec.width - ml - mr, ph = spec.height - mt - mb;
    auto px = [&](double v) { return ml + (v - x0) / (x1 - x0) * pw; };
    auto py = [&](double v) { return mt + (y1 - v) / (y1 - y0) * ph; };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

    std::ostringstream os;
    char buf[160];
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << spec.width << "\" height=\"" << spec.height
       << "\" viewBox=\"0 0 " << spec.width << " " << spec.height << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof buf, "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"none\" stroke=\"black\"/>\n",
                  ml, mt, pw, ph);
    os << buf;
    for (int t = 0; t <= 4; ++t) {
        const double xv = x0 + (x1 - x0) * t / 4.0, yv = y0 + (y1 - y0) * t / 4.0;
        std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"10\" text-anchor=\"middle\">%s%.3g</text>\n", px(xv),
                      mt + ph + 15, spec.log_x ? "1e" : "", xv);
        os << buf;
        std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"10\" text-anchor=\"end\">%s%.3g</text>\n", ml - 4,
                      py(yv) + 3, spec.log_y ? "1e" : "", yv);
        os << buf;
    }
    os << "<text x=\"" << spec.width / 2 << "\" y=\"18\" font-size=\"13\" text-anchor=\"middle\">" << spec.title << "</text>\n";
    os << "<text x=\"" << spec.width / 2 << "\" y=\"" << spec.height - 10 << "\" font-size=\"11\" text-anchor=\"middle\">"
       << spec.xlabel << "</text>\n";
    os << "<text x=\"14\" y=\"" << spec.height / 2 << "\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
       << spec.height / 2 << ")\">" << spec.ylabel << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* col = colors[k % 5];
        std::string d;
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!usable(s.x[i], s.y[i])) continue;
            std::snprintf(buf, sizeof buf, "%c%.2f %.2f ", d.empty() ? 'M' : 'L', px(tx(s.x[i])), py(ty(s.y[i])));
            d += buf;
        }
        if (d.empty()) continue;
        os << "<path fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" d=\"" << d << "\"/>\n";
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!usable(s.x[i], s.y[i])) continue;
            std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2.5\" fill=\"%s\"/>\n", px(tx(s.x[i])), py(ty(s.y[i])), col);
            os << buf;
        }
        std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" font-size=\"11\" fill=\"%s\">%s</text>\n", ml + 8,
                      mt + 14 + 14.0 * k, col, s.label.c_str());
        os << buf;
    }
    os << "</svg>\n";
    return os.str();
}

namespace detail {

inline std::vector<std::vector<std::string>> load_csv(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw InputError("cannot open " + p.string());
    return read_csv(is);
}

inline std::vector<double> csv_column(const std::vector<std::vector<std::string>>& rows, const std::string& name) {
    if (rows.empty()) throw InputError("empty CSV");
    const auto& head = rows.front();
    const auto it = std::find(head.begin(), head.end(), name);
    if (it == head.end()) throw InputError("CSV lacks column " + name);
    const std::size_t c = static_cast<std::size_t>(it - head.begin());
    std::vector<double> out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (c >= rows[r].size()) throw InputError("CSV row is too short");
        out.push_back(std::stod(rows[r][c]));
    }
    return out;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw InputError("cannot open " + p.string() + " for writing");
    os << s;
}

} // namespace detail

/// Renders every figure whose source table exists in dir. Figures depend only on the CSVs, so
/// rendering twice yields identical bytes. Returns the file names written.
inline std::vector<std::string> render_figures(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path d(dir);
    std::vector<std::string> written;
    auto emit = [&](const std::string& name, const std::string& svg) {
        detail::write_text(d / name, svg);
        written.push_back(name);
    };
    if (fs::exists(d / "contours.csv")) {
        const auto lines = polylines_from_csv(detail::load_csv(d / "contours.csv"));
        double hw = 0.0;
        for (const auto& pl : lines)
            for (const auto& p : pl.points) hw = std::max({hw, std::abs(p[0]), std::abs(p[1])});
        hw = hw > 0.0 ? std::pow(2.0, std::ceil(std::log2(hw))) : 1.0;
        emit("contours.svg", polylines_svg(lines, hw));
    }
    if (fs::exists(d / "decay.csv")) {
        const auto rows = detail::load_csv(d / "decay.csv");
        emit("decay.svg", line_plot_svg({{"root", detail::csv_column(rows, "r"), detail::csv_column(rows, "root")}},
                                        {"counterexample decay", "r", "(r^-2 int |f-a|^p)^(1/p)", true, true}));
    }
    if (fs::exists(d / "exponents.csv")) {
        const auto rows = detail::load_csv(d / "exponents.csv");
        std::vector<double> r;
        for (double N : detail::csv_column(rows, "N")) r.push_back(std::ldexp(1.0, -static_cast<int>(N)));
        emit("exponents.svg", line_plot_svg({{"L2 average", r, detail::csv_column(rows, "l2_avg")},
                                             {"Linf", r, detail::csv_column(rows, "linf")}},
                                            {"sharpness exponents", "2^-N", "deviation from Q", true, true}));
    }
    if (fs::exists(d / "convex_lemma.csv")) {
        const auto rows = detail::load_csv(d / "convex_lemma.csv");
        emit("convex_lemma.svg", line_plot_svg({{"sup / delta^mu", detail::csv_column(rows, "N"), detail::csv_column(rows, "ratio")}},
                                               {"convex lemma ratio", "N", "ratio", false, false}));
    }
    if (fs::exists(d / "trace.csv")) {
        const auto rows = detail::load_csv(d / "trace.csv");
        const auto k = detail::csv_column(rows, "k");
        emit("trace.svg", line_plot_svg({{"E_k", k, detail::csv_column(rows, "E_k")}, {"p_k^2", k, detail::csv_column(rows, "p_sq_k")}},
                                        {"iteration trace", "k", "value", false, true}));
    }
    return written;
}

} // namespace otreg
