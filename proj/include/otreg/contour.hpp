#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "otreg/field_io.hpp"
#include "otreg/grid.hpp"

namespace otreg {

struct Polyline {
    double level = 0.0;
    std::vector<Point> points;
    bool closed = false;
};

namespace detail {

/// Edge identifier: lower node index and axis (0 = x edge, 1 = y edge).
using EdgeKey = std::pair<std::size_t, int>;

struct Segment {
    EdgeKey from, to;
    Point a, b;
};

} // namespace detail

/// Marching-squares contours of a 2-D field. Segments are oriented with larger values on the
/// left; saddle cells are split by the cell-center average. Levels outside the field range
/// produce no polylines.
inline std::vector<Polyline> level_sets(const ScalarField& f, const std::vector<double>& levels) {
    const Grid& g = f.grid;
    if (g.dim() != 2) throw InputError("level_sets needs a two-dimensional field");
    for (double v : f.values)
        if (!std::isfinite(v)) throw InputError("level_sets needs a finite field");
    const int n = g.nodes_per_axis();
    std::vector<Polyline> out;
    for (double level : levels) {
        std::vector<detail::Segment> segs;
        auto val = [&](int i, int j) { return f.values[g.flat({i, j, 0})] - level; };
        auto crossing = [&](int i0, int j0, int i1, int j1) {
            const double v0 = val(i0, j0), v1 = val(i1, j1);
            const double t = v0 / (v0 - v1);
            const Point p0 = g.node(Index{i0, j0, 0}), p1 = g.node(Index{i1, j1, 0});
            return p0 + t * (p1 - p0);
        };
        for (int j = 0; j + 1 < n; ++j)
            for (int i = 0; i + 1 < n; ++i) {
                // corners counterclockwise: (i,j), (i+1,j), (i+1,j+1), (i,j+1)
                const std::array<std::pair<int, int>, 4> c{{{i, j}, {i + 1, j}, {i + 1, j + 1}, {i, j + 1}}};
                std::array<bool, 4> above{};
                for (int k = 0; k < 4; ++k) above[k] = val(c[k].first, c[k].second) > 0.0;
                // edges e_k joins corner k and k+1
                auto edge_key = [&](int k) -> detail::EdgeKey {
                    const auto a = c[k], b = c[(k + 1) % 4];
                    const int ii = std::min(a.first, b.first), jj = std::min(a.second, b.second);
                    return {g.flat({ii, jj, 0}), a.second == b.second ? 0 : 1};
                };
                auto edge_point = [&](int k) {
                    const auto a = c[k], b = c[(k + 1) % 4];
                    return crossing(a.first, a.second, b.first, b.second);
                };
                std::vector<int> cut;
                for (int k = 0; k < 4; ++k)
                    if (above[k] != above[(k + 1) % 4]) cut.push_back(k);
                if (cut.empty()) continue;
                // edge k is "falling" when corner k is above and corner k+1 below (counterclockwise);
                // segments run from a falling edge to a rising edge so the above region lies on the left
                auto add = [&](int from_edge, int to_edge) {
                    segs.push_back({edge_key(from_edge), edge_key(to_edge), edge_point(from_edge), edge_point(to_edge)});
                };
                if (cut.size() == 2) {
                    const int falling = above[cut[0]] ? cut[0] : cut[1];
                    add(falling, falling == cut[0] ? cut[1] : cut[0]);
                } else {
                    double center = 0.0;
                    for (int k = 0; k < 4; ++k) center += val(c[k].first, c[k].second);
                    const bool joined = center > 0.0;
                    for (int k = 0; k < 4; ++k)
                        if (above[k]) add(k, joined ? (k + 1) % 4 : (k + 3) % 4);
                }
            }
        // stitch oriented segments into polylines
        std::map<detail::EdgeKey, std::size_t> by_start;
        for (std::size_t s = 0; s < segs.size(); ++s) by_start[segs[s].from] = s;
        std::map<detail::EdgeKey, std::size_t> by_end;
        for (std::size_t s = 0; s < segs.size(); ++s) by_end[segs[s].to] = s;
        std::vector<bool> used(segs.size(), false);
        auto emit = [&](std::size_t start) {
            Polyline pl;
            pl.level = level;
            std::size_t s = start;
            pl.points.push_back(segs[s].a);
            while (true) {
                used[s] = true;
                pl.points.push_back(segs[s].b);
                auto it = by_start.find(segs[s].to);
                if (it == by_start.end()) break;
                if (it->second == start) {
                    pl.closed = true;
                    break;
                }
                if (used[it->second]) break;
                s = it->second;
            }
            out.push_back(std::move(pl));
        };
        // open polylines start at segments with no predecessor
        for (std::size_t s = 0; s < segs.size(); ++s)
            if (!used[s] && by_end.find(segs[s].from) == by_end.end()) emit(s);
        for (std::size_t s = 0; s < segs.size(); ++s)
            if (!used[s]) emit(s);
    }
    return out;
}

/// CSV curve_id,x,y.
inline CsvTable polylines_csv(const std::vector<Polyline>& lines) {
    CsvTable tab({"curve_id", "x", "y"});
    for (std::size_t c = 0; c < lines.size(); ++c)
        for (const Point& p : lines[c].points) tab.row({CsvTable::num(c), CsvTable::num(p[0]), CsvTable::num(p[1])});
    return tab;
}

/// Reads polylines back from a curve_id,x,y CSV (closedness inferred from coincident ends).
inline std::vector<Polyline> polylines_from_csv(const std::vector<std::vector<std::string>>& rows) {
    std::vector<Polyline> out;
    long current = -1;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() < 3) throw InputError("polyline CSV rows need three columns");
        const long id = std::stol(rows[r][0]);
        if (id != current) {
            out.emplace_back();
            current = id;
        }
        out.back().points.push_back({std::stod(rows[r][1]), std::stod(rows[r][2]), 0.0});
    }
    for (auto& pl : out)
        if (pl.points.size() > 2) pl.closed = norm(pl.points.front() - pl.points.back()) < 1e-12;
    return out;
}

/// SVG 1.1 document drawing the polylines inside the square [-halfwidth, halfwidth]^2.
inline std::string polylines_svg(const std::vector<Polyline>& lines, double halfwidth, int pixels = 512) {
    std::ostringstream os;
    const double s = pixels / (2.0 * halfwidth);
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
       << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << pixels << "\" height=\"" << pixels
       << "\" viewBox=\"0 0 " << pixels << " " << pixels << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    char buf[64];
    for (const auto& pl : lines) {
        os << "<path fill=\"none\" stroke=\"black\" stroke-width=\"1\" d=\"";
        for (std::size_t k = 0; k < pl.points.size(); ++k) {
            const double x = (pl.points[k][0] + halfwidth) * s;
            const double y = (halfwidth - pl.points[k][1]) * s;
            std::snprintf(buf, sizeof buf, "%c%.3f %.3f ", k == 0 ? 'M' : 'L', x, y);
            os << buf;
        }
        if (pl.closed) os << "Z";
        os << "\"/>\n";
    }
    os << "</svg>\n";
    return os.str();
}

} // namespace otreg
