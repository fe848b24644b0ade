#pragma once

// Files: CSV tables, SHA-256 checksums, run manifests and SVG heatmaps.

#include "gridalign/error.hpp"
#include "gridalign/linalg.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

namespace gridalign::io {

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
    std::array<char, 32> buf{};
    const auto r = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (r.ec != std::errc()) fail(ErrorKind::numeric, "format_double: conversion failed");
    return {buf.data(), r.ptr};
}

inline std::optional<double> parse_double(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) fail(ErrorKind::config, "missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    }
};

/// RFC-4180 records: quoted fields may hold commas, doubled quotes and newlines.
inline Table parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> rec;
    std::string field;
    bool quoted = false, any = false;
    std::size_t line = 1;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line;
                field += c;
            }
            continue;
        }
        switch (c) {
        case '"':
            if (!field.empty()) fail(ErrorKind::io, "csv line " + std::to_string(line) + ": quote inside unquoted field");
            quoted = any = true;
            break;
        case ',':
            rec.push_back(std::move(field));
            field.clear();
            any = true;
            break;
        case '\r':
            break;
        case '\n':
            if (any || !field.empty()) {
                rec.push_back(std::move(field));
                records.push_back(std::move(rec));
            }
            rec.clear();
            field.clear();
            any = false;
            ++line;
            break;
        default:
            field += c;
            any = true;
        }
    }
    if (quoted) fail(ErrorKind::io, "csv: unterminated quoted field");
    if (any || !field.empty()) {
        rec.push_back(std::move(field));
        records.push_back(std::move(rec));
    }
    if (records.empty()) fail(ErrorKind::io, "csv: no header row");
    Table t;
    t.header = std::move(records.front());
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != t.header.size())
            fail(ErrorKind::io, "csv record " + std::to_string(r + 1) + ": expected " + std::to_string(t.header.size()) +
                                    " fields, got " + std::to_string(records[r].size()));
        t.rows.push_back(std::move(records[r]));
    }
    return t;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
    const auto parent = std::filesystem::path(path).parent_path();
    std::error_code ec;
    if (!parent.empty()) std::filesystem::create_directories(parent, ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write " + path);
    out << content;
    out.flush();
    if (!out) fail(ErrorKind::io, "write failed: " + path);
}

inline Table read_csv(const std::string& path) { return parse_csv(read_file(path)); }

inline std::string quote_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

inline std::string table_to_csv(const Table& t) {
    std::string out;
    const auto line = [&](const std::vector<std::string>& r) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (i) out += ',';
            out += quote_field(r[i]);
        }
        out += '\n';
    };
    line(t.header);
    for (const auto& r : t.rows) line(r);
    return out;
}

inline std::string matrix_to_csv(const std::vector<std::string>& header, const Matrix& m) {
    require(static_cast<Eigen::Index>(header.size()) == m.cols(), "matrix_to_csv: header width differs from columns");
    std::string out;
    for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + quote_field(header[i]);
    out += '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (c) out += ',';
            out += format_double(m(r, c));
        }
        out += '\n';
    }
    return out;
}

inline void write_matrix_csv(const std::string& path, const std::vector<std::string>& header, const Matrix& m) {
    write_file(path, matrix_to_csv(header, m));
}

struct NumericTable {
    std::vector<std::string> header;
    Matrix data;
};

/// Every field must parse as a double.
inline NumericTable to_numeric(const Table& t, const std::string& source = "csv") {
    NumericTable out{t.header, Matrix(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.header.size()))};
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        for (std::size_t c = 0; c < t.header.size(); ++c) {
            const auto v = parse_double(t.rows[r][c]);
            if (!v) fail(ErrorKind::io, source + ": row " + std::to_string(r + 1) + " column '" + t.header[c] +
                                            "' is not a number: '" + t.rows[r][c] + "'");
            out.data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = *v;
        }
    return out;
}

inline NumericTable read_numeric_csv(const std::string& path) { return to_numeric(read_csv(path), path); }

/// First row: corner label then x coordinates; each later row: y then values.
inline std::string grid_csv(const std::vector<double>& xs, const std::vector<double>& ys, const Matrix& values) {
    require(values.cols() == static_cast<Eigen::Index>(xs.size()) && values.rows() == static_cast<Eigen::Index>(ys.size()),
            "grid_csv: coordinate lengths differ from matrix shape");
    std::string out = "y\\x";
    for (double x : xs) out += "," + format_double(x);
    out += '\n';
    for (std::size_t r = 0; r < ys.size(); ++r) {
        out += format_double(ys[r]);
        for (Eigen::Index c = 0; c < values.cols(); ++c) out += "," + format_double(values(static_cast<Eigen::Index>(r), c));
        out += '\n';
    }
    return out;
}

struct GridTable {
    std::vector<double> xs, ys;
    Matrix values;
};

inline GridTable parse_grid_csv(const std::string& text) {
    const Table t = parse_csv(text);
    GridTable g;
    for (std::size_t c = 1; c < t.header.size(); ++c) {
        const auto v = parse_double(t.header[c]);
        if (!v) fail(ErrorKind::io, "grid csv: bad x coordinate '" + t.header[c] + "'");
        g.xs.push_back(*v);
    }
    g.values.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(g.xs.size()));
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        for (std::size_t c = 0; c < t.header.size(); ++c) {
            const auto v = parse_double(t.rows[r][c]);
            if (!v) fail(ErrorKind::io, "grid csv: bad value in row " + std::to_string(r + 1));
            if (c == 0) g.ys.push_back(*v);
            else g.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - 1)) = *v;
        }
    return g;
}

// ---------------------------------------------------------------------------
// Checksums and manifests
// ---------------------------------------------------------------------------

inline std::string sha256_hex(const std::string& bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        fail(ErrorKind::io, "sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

inline std::string sha256_file(const std::string& path) { return sha256_hex(read_file(path)); }

inline constexpr const char* artifact_version = "gridalign-artifacts/1";

struct ManifestEntry {
    std::string path;  // as written, relative to the output directory when possible
    std::string sha256;
    std::uintmax_t bytes = 0;
};

struct Manifest {
    std::string command;
    std::string config_sha256;
    std::vector<ManifestEntry> outputs;
    double wall_seconds = 0.0;
    nlohmann::json extra = nlohmann::json::object();

    void add(const std::string& path, const std::string& shown_as) {
        outputs.push_back({shown_as, sha256_file(path), std::filesystem::file_size(path)});
    }
};

inline nlohmann::json to_json(const Manifest& m) {
    nlohmann::json j;
    j["command"] = m.command;
    j["artifact_version"] = artifact_version;
    j["config_sha256"] = m.config_sha256;
    auto& outs = j["outputs"] = nlohmann::json::array();
    for (const auto& e : m.outputs) outs.push_back({{"path", e.path}, {"sha256", e.sha256}, {"bytes", e.bytes}});
    j["wall_seconds"] = m.wall_seconds;
    for (const auto& [k, v] : m.extra.items()) j[k] = v;
    return j;
}

// ---------------------------------------------------------------------------
// SVG heatmap
// ---------------------------------------------------------------------------

struct Rgb {
    int r, g, b;
};

/// Piecewise-linear ramp through five viridis anchor colors; t in [0, 1].
inline Rgb ramp_color(double t) {
    static constexpr std::array<Rgb, 5> anchors{{{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
    t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
    const double s = t * (anchors.size() - 1);
    const auto i = std::min(static_cast<std::size_t>(s), anchors.size() - 2);
    const double f = s - static_cast<double>(i);
    const auto mix = [&](int a, int b) { return static_cast<int>(std::lround(a + f * (b - a))); };
    return {mix(anchors[i].r, anchors[i + 1].r), mix(anchors[i].g, anchors[i + 1].g), mix(anchors[i].b, anchors[i + 1].b)};
}

inline constexpr int ramp_levels = 256;

/// Ramp level of a value: 0 .. ramp_levels-1, linear between lo and hi.
inline int ramp_level(double v, double lo, double hi) {
    if (!(hi > lo)) return 0;
    const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
    return std::min(ramp_levels - 1, static_cast<int>(std::floor(t * ramp_levels)));
}

/// One rect per matrix entry, row 0 at the bottom so y grows upward.
inline std::string heatmap_svg(const Matrix& values, int block = 4) {
    require(values.rows() >= 1 && values.cols() >= 1 && block >= 1, "heatmap_svg: empty matrix or bad block size");
    double lo = INFINITY, hi = -INFINITY;
    for (Eigen::Index r = 0; r < values.rows(); ++r)
        for (Eigen::Index c = 0; c < values.cols(); ++c)
            if (std::isfinite(values(r, c))) {
                lo = std::min(lo, values(r, c));
                hi = std::max(hi, values(r, c));
            }
    if (!std::isfinite(lo)) lo = hi = 0.0;
    const auto w = values.cols() * block, h = values.rows() * block;
    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
                      std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " + std::to_string(h) +
                      "\" shape-rendering=\"crispEdges\">\n";
    out += "<desc>min=" + format_double(lo) + " max=" + format_double(hi) + " levels=" + std::to_string(ramp_levels) +
           "</desc>\n";
    char buf[128];
    for (Eigen::Index r = 0; r < values.rows(); ++r)
        for (Eigen::Index c = 0; c < values.cols(); ++c) {
            const int level = ramp_level(values(r, c), lo, hi);
            const Rgb col = ramp_color(static_cast<double>(level) / (ramp_levels - 1));
            std::snprintf(buf, sizeof buf, "<rect x=\"%ld\" y=\"%ld\" width=\"%d\" height=\"%d\" fill=\"#%02x%02x%02x\" data-level=\"%d\"/>\n",
                          static_cast<long>(c * block), static_cast<long>((values.rows() - 1 - r) * block), block, block,
                          col.r, col.g, col.b, level);
            out += buf;
        }
    out += "</svg>\n";
    return out;
}

}  // namespace gridalign::io
