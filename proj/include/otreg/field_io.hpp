#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "otreg/grid.hpp"

namespace otreg {

namespace detail {

inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_header(std::ostream& os, const Grid& g) {
    os << "grid " << g.dim() << ' ' << fmt_double(g.spacing()) << ' ' << fmt_double(g.halfwidth()) << '\n';
}

inline Grid read_header(std::istream& is) {
    std::string tag;
    int n = 0;
    double h = 0.0, hw = 0.0;
    if (!(is >> tag >> n >> h >> hw) || tag != "grid") throw InputError("field file: bad header, expected 'grid n h halfwidth'");
    return Grid::from_spacing(n, h, hw);
}

template <class Row>
void read_rows(std::istream& is, const Grid& g, int width, Row&& row) {
    std::vector<std::uint8_t> seen(g.size(), 0);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        Index idx{0, 0, 0};
        for (int a = 0; a < g.dim(); ++a)
            if (!(ls >> idx[a])) throw InputError("field file: truncated index");
        if (!g.contains(idx)) throw InputError("field file: index outside grid");
        std::vector<double> vals(static_cast<std::size_t>(width));
        for (double& v : vals)
            if (!(ls >> v)) throw InputError("field file: truncated values");
        const std::size_t f = g.flat(idx);
        seen[f] = 1;
        row(f, vals);
    }
    for (auto s : seen)
        if (!s) throw InputError("field file: missing nodes");
}

} // namespace detail

/// Text format: "grid n h halfwidth" then one line per node "i1 .. in value...".
inline void write_field(std::ostream& os, const ScalarField& f) {
    detail::write_header(os, f.grid);
    for (std::size_t i = 0; i < f.size(); ++i) {
        const Index idx = f.grid.multi_index(i);
        for (int a = 0; a < f.grid.dim(); ++a) os << idx[a] << ' ';
        os << detail::fmt_double(f.values[i]) << '\n';
    }
}

inline void write_field(std::ostream& os, const VectorField& f) {
    detail::write_header(os, f.grid);
    for (std::size_t i = 0; i < f.size(); ++i) {
        const Index idx = f.grid.multi_index(i);
        for (int a = 0; a < f.grid.dim(); ++a) os << idx[a] << ' ';
        for (int a = 0; a < f.grid.dim(); ++a) os << (a ? " " : "") << detail::fmt_double(f.values[i][a]);
        os << '\n';
    }
}

inline void write_field(std::ostream& os, const DensityField& f) {
    detail::write_header(os, f.grid);
    for (std::size_t i = 0; i < f.size(); ++i) {
        const Index idx = f.grid.multi_index(i);
        for (int a = 0; a < f.grid.dim(); ++a) os << idx[a] << ' ';
        os << detail::fmt_double(f.support[i] ? f.values[i] : 0.0) << '\n';
    }
}

inline ScalarField read_scalar_field(std::istream& is) {
    const Grid g = detail::read_header(is);
    ScalarField f(g);
    detail::read_rows(is, g, 1, [&](std::size_t i, const std::vector<double>& v) { f.values[i] = v[0]; });
    return f;
}

inline VectorField read_vector_field(std::istream& is) {
    const Grid g = detail::read_header(is);
    VectorField f(g);
    detail::read_rows(is, g, g.dim(), [&](std::size_t i, const std::vector<double>& v) {
        for (int a = 0; a < g.dim(); ++a) f.values[i][a] = v[static_cast<std::size_t>(a)];
    });
    return f;
}

inline DensityField read_density_field(std::istream& is) {
    const Grid g = detail::read_header(is);
    std::vector<double> vals(g.size());
    detail::read_rows(is, g, 1, [&](std::size_t i, const std::vector<double>& v) { vals[i] = v[0]; });
    return DensityField::from_values(g, std::move(vals));
}

template <class Field>
void save_field(const std::string& path, const Field& f) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InputError("cannot open " + path + " for writing");
    write_field(os, f);
}

inline DensityField load_density_field(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("cannot open " + path);
    return read_density_field(is);
}

inline ScalarField load_scalar_field(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("cannot open " + path);
    return read_scalar_field(is);
}

inline VectorField load_vector_field(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("cannot open " + path);
    return read_vector_field(is);
}

/// Minimal CSV table: header row, '.' decimals, LF line endings.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

    CsvTable& row(const std::vector<std::string>& cells) {
        if (cells.size() != columns_.size()) throw UsageError("csv row width does not match header");
        rows_.push_back(cells);
        return *this;
    }

    static std::string num(double v) { return detail::fmt_double(v); }
    static std::string num(long long v) { return std::to_string(v); }
    static std::string num(int v) { return std::to_string(v); }
    static std::string num(std::size_t v) { return std::to_string(v); }
    static std::string flag(bool v) { return v ? "1" : "0"; }

    std::string str() const {
        std::string out;
        auto emit = [&](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (i) out += ',';
                out += cells[i];
            }
            out += '\n';
        };
        emit(columns_);
        for (const auto& r : rows_) emit(r);
        return out;
    }

    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw InputError("cannot open " + path + " for writing");
        os << str();
    }

    std::size_t rows() const { return rows_.size(); }

private:
    std::vector<std::string> columns_;
    std::vector<std::vector<std::string>> rows_;
};

/// Parses a CSV produced by CsvTable (no quoting). First row is the header.
inline std::vector<std::vector<std::string>> read_csv(std::istream& is) {
    std::vector<std::vector<std::string>> out;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        out.push_back(std::move(cells));
    }
    return out;
}

} // namespace otreg
