#pragma once

// Run configuration: INI-style sections or the same schema as JSON.
//
//   [synth]   cells, ranges, target_correlation, diagonal_factor, n, grid_seed, sample_seed
//   [mixing]  kind (identity|linear|rotation|file), seed, max_condition, angle, path
//   [train]   method (gridalign|fastica|hfs), lr, momentum, batch, bandwidth, epochs, seed,
//             plateau_window, plateau_tol, standardize_codes, ica_nonlinearity, ica_tol, ica_max_iter
//   [eval]    k_per_axis, top_fraction, bandwidth, restarts, refine (none|segmentation), seed, null_seed
//   [verify]  battery (default|empty), corollary_n, pushforward_n, test_points, bandwidth, tolerance, seed
//   [heatmap] input, columns, resolution, bandwidth, log, standardize, max_points, seed, block
//   [ingest]  input, columns, transforms, output
//   [io]      dir
//
// Lists are comma separated; ranges are lo:hi pairs ("0:4, 0:4").
// Comments: whole lines starting with ';' or '#', or ';' / '#' after whitespace.
// Unknown sections and keys are errors.

#include "gridalign/baselines.hpp"
#include "gridalign/core_grid.hpp"
#include "gridalign/error.hpp"
#include "gridalign/eval.hpp"
#include "gridalign/io.hpp"
#include "gridalign/train.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace gridalign {

using RawConfig = std::map<std::string, std::map<std::string, std::string>>;

struct SynthSection {
    std::vector<int> cells{4, 4};
    std::vector<Interval> ranges{{0.0, 4.0}, {0.0, 4.0}};
    double target_correlation = 0.61;
    std::optional<double> diagonal_factor;  // overrides the calibration when set
    long n = 50000;
    std::uint64_t grid_seed = 1;
    std::uint64_t sample_seed = 101;
};

struct MixingSection {
    std::string kind = "linear";
    std::uint64_t seed = 201;
    double max_condition = 100.0;
    double angle = 0.0;  // radians, rotation kind
    std::string path;    // DiffeoSpec JSON, file kind
};

struct TrainSection {
    std::string method = "gridalign";
    TrainConfig gridalign;
    HfsConfig hfs;
    IcaNonlinearity ica_nonlinearity = IcaNonlinearity::tanh;
    double ica_tol = 1e-6;
    int ica_max_iter = 500;
};

struct EvalSection {
    std::vector<int> k_per_axis;  // empty: cells - 1 per axis
    EvalOptions options;
};

struct VerifySection {
    std::string battery = "default";
    long corollary_n = 100000;
    long pushforward_n = 50000;
    int test_points = 1000;
    double bandwidth = 0.1;
    double tolerance = 0.15;
    std::uint64_t seed = 0;
};

struct HeatmapSection {
    std::string input = "latents.csv";
    std::vector<std::string> columns;  // empty: first two
    int resolution = 80;
    double bandwidth = 0.1;
    bool log = false;
    bool standardize = true;
    long max_points = 5000;
    std::uint64_t seed = 0;
    int block = 4;
};

struct IngestSection {
    std::string input;
    std::vector<std::string> columns;
    std::vector<std::string> transforms{"standardize"};
    std::string output = "ingested.csv";
};

struct RunConfig {
    SynthSection synth;
    MixingSection mixing;
    TrainSection train;
    EvalSection eval;
    VerifySection verify;
    HeatmapSection heatmap;
    IngestSection ingest;
    std::string dir = "run";
};

namespace config_detail {

inline const std::map<std::string, std::set<std::string>>& schema() {
    static const std::map<std::string, std::set<std::string>> s{
        {"synth", {"cells", "ranges", "target_correlation", "diagonal_factor", "n", "grid_seed", "sample_seed"}},
        {"mixing", {"kind", "seed", "max_condition", "angle", "path"}},
        {"train",
         {"method", "lr", "momentum", "batch", "bandwidth", "epochs", "seed", "plateau_window", "plateau_tol",
          "standardize_codes", "ica_nonlinearity", "ica_tol", "ica_max_iter"}},
        {"eval", {"k_per_axis", "top_fraction", "bandwidth", "restarts", "refine", "seed", "null_seed"}},
        {"verify", {"battery", "corollary_n", "pushforward_n", "test_points", "bandwidth", "tolerance", "seed"}},
        {"heatmap", {"input", "columns", "resolution", "bandwidth", "log", "standardize", "max_points", "seed", "block"}},
        {"ingest", {"input", "columns", "transforms", "output"}},
        {"io", {"dir"}},
    };
    return s;
}

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) out.push_back(trim(cur));
    return out;
}

[[noreturn]] inline void bad(const std::string& where, const std::string& what) {
    fail(ErrorKind::config, "config [" + where + "]: " + what);
}

inline double to_real(const std::string& where, const std::string& v) {
    const auto d = io::parse_double(v);
    if (!d || !std::isfinite(*d)) bad(where, "expected a number, got '" + v + "'");
    return *d;
}

inline long to_long(const std::string& where, const std::string& v) {
    long out = 0;
    const auto t = trim(v);
    const auto r = std::from_chars(t.data(), t.data() + t.size(), out);
    if (r.ec != std::errc() || r.ptr != t.data() + t.size()) bad(where, "expected an integer, got '" + v + "'");
    return out;
}

inline std::uint64_t to_seed(const std::string& where, const std::string& v) {
    std::uint64_t out = 0;
    const auto t = trim(v);
    const auto r = std::from_chars(t.data(), t.data() + t.size(), out);
    if (r.ec != std::errc() || r.ptr != t.data() + t.size()) bad(where, "expected a non-negative integer, got '" + v + "'");
    return out;
}

inline bool to_bool(const std::string& where, const std::string& v) {
    const auto t = trim(v);
    if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
    if (t == "false" || t == "0" || t == "no" || t == "off") return false;
    bad(where, "expected true or false, got '" + v + "'");
}

inline std::string one_of(const std::string& where, const std::string& v, std::initializer_list<const char*> allowed) {
    const auto t = trim(v);
    std::string list;
    for (const char* a : allowed) {
        if (t == a) return t;
        list += (list.empty() ? "" : "|") + std::string(a);
    }
    bad(where, "expected one of " + list + ", got '" + v + "'");
}

inline std::string json_scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
    if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
    if (v.is_number()) return io::format_double(v.get<double>());
    fail(ErrorKind::config, "config: unsupported JSON value " + v.dump());
}

}  // namespace config_detail

/// Section/key/value text from INI, rejecting unknown names.
inline RawConfig parse_ini(const std::string& text) {
    boost::property_tree::ptree pt;
    std::istringstream in(text);
    try {
        boost::property_tree::ini_parser::read_ini(in, pt);
    } catch (const boost::property_tree::ini_parser_error& e) {
        fail(ErrorKind::config, std::string("config: ") + e.message() + " at line " + std::to_string(e.line()));
    }
    RawConfig raw;
    for (const auto& [section, body] : pt) {
        if (body.empty() && !body.data().empty()) fail(ErrorKind::config, "config: key '" + section + "' outside any section");
        for (const auto& [key, value] : body) {
            std::string v = value.data();
            // inline comment: ';' or '#' after whitespace
            for (std::size_t i = 1; i < v.size(); ++i)
                if ((v[i] == ';' || v[i] == '#') && std::isspace(static_cast<unsigned char>(v[i - 1]))) {
                    v.resize(i);
                    break;
                }
            raw[section][key] = config_detail::trim(v);
        }
    }
    return raw;
}

inline RawConfig parse_json_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::config, std::string("config: ") + e.what());
    }
    if (!j.is_object()) fail(ErrorKind::config, "config: top level must be an object of sections");
    RawConfig raw;
    for (const auto& [section, body] : j.items()) {
        if (!body.is_object()) fail(ErrorKind::config, "config: section '" + section + "' must be an object");
        for (const auto& [key, v] : body.items()) {
            if (v.is_array()) {
                std::string s;
                for (const auto& e : v) s += (s.empty() ? "" : ",") + config_detail::json_scalar(e);
                raw[section][key] = s;
            } else {
                raw[section][key] = config_detail::json_scalar(v);
            }
        }
    }
    return raw;
}

/// JSON when the first non-blank character is '{', INI otherwise.
inline RawConfig parse_config_text(const std::string& text) {
    const auto p = text.find_first_not_of(" \t\r\n");
    return p != std::string::npos && text[p] == '{' ? parse_json_config(text) : parse_ini(text);
}

inline void check_schema(const RawConfig& raw) {
    const auto& s = config_detail::schema();
    for (const auto& [section, keys] : raw) {
        const auto it = s.find(section);
        if (it == s.end()) fail(ErrorKind::config, "config: unknown section [" + section + "]");
        for (const auto& [key, _] : keys)
            if (!it->second.count(key)) fail(ErrorKind::config, "config: unknown key '" + key + "' in [" + section + "]");
    }
}

/// "section.key=value"
inline void apply_override(RawConfig& raw, const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
        fail(ErrorKind::config, "config override must look like section.key=value: '" + assignment + "'");
    using config_detail::trim;
    raw[trim(assignment.substr(0, dot))][trim(assignment.substr(dot + 1, eq - dot - 1))] = trim(assignment.substr(eq + 1));
}

inline RunConfig build_config(const RawConfig& raw) {
    using namespace config_detail;
    check_schema(raw);
    RunConfig c;
    const auto get = [&](const std::string& s, const std::string& k) -> std::optional<std::string> {
        const auto it = raw.find(s);
        if (it == raw.end()) return std::nullopt;
        const auto kt = it->second.find(k);
        if (kt == it->second.end()) return std::nullopt;
        return kt->second;
    };

    // synth
    if (auto v = get("synth", "cells")) {
        c.synth.cells.clear();
        for (const auto& e : split_list(*v)) c.synth.cells.push_back(static_cast<int>(to_long("synth", e)));
    }
    if (auto v = get("synth", "ranges")) {
        c.synth.ranges.clear();
        for (const auto& e : split_list(*v)) {
            const auto colon = e.find(':');
            if (colon == std::string::npos) bad("synth", "range '" + e + "' must be lo:hi");
            c.synth.ranges.push_back({to_real("synth", e.substr(0, colon)), to_real("synth", e.substr(colon + 1))});
        }
    } else if (c.synth.cells.size() != c.synth.ranges.size()) {
        c.synth.ranges.assign(c.synth.cells.size(), Interval{0.0, 4.0});
    }
    if (c.synth.cells.size() != c.synth.ranges.size()) bad("synth", "cells and ranges differ in length");
    for (int k : c.synth.cells)
        if (k < 2) bad("synth", "every axis needs at least 2 cells");
    if (auto v = get("synth", "target_correlation")) c.synth.target_correlation = to_real("synth", *v);
    if (auto v = get("synth", "diagonal_factor")) c.synth.diagonal_factor = to_real("synth", *v);
    if (auto v = get("synth", "n")) c.synth.n = to_long("synth", *v);
    if (c.synth.n < 1) bad("synth", "n must be positive");
    if (auto v = get("synth", "grid_seed")) c.synth.grid_seed = to_seed("synth", *v);
    if (auto v = get("synth", "sample_seed")) c.synth.sample_seed = to_seed("synth", *v);

    // mixing
    if (auto v = get("mixing", "kind")) c.mixing.kind = one_of("mixing", *v, {"identity", "linear", "rotation", "file"});
    if (auto v = get("mixing", "seed")) c.mixing.seed = to_seed("mixing", *v);
    if (auto v = get("mixing", "max_condition")) c.mixing.max_condition = to_real("mixing", *v);
    if (auto v = get("mixing", "angle")) c.mixing.angle = to_real("mixing", *v);
    if (auto v = get("mixing", "path")) c.mixing.path = *v;
    if (c.mixing.kind == "file" && c.mixing.path.empty()) bad("mixing", "kind=file needs a path");
    if (c.mixing.kind == "rotation" && c.synth.cells.size() != 2) bad("mixing", "rotation needs d = 2");

    // train
    auto& t = c.train;
    if (auto v = get("train", "method")) t.method = one_of("train", *v, {"gridalign", "fastica", "hfs"});
    if (auto v = get("train", "lr")) t.gridalign.learning_rate = t.hfs.learning_rate = to_real("train", *v);
    if (auto v = get("train", "momentum")) t.gridalign.momentum = t.hfs.momentum = to_real("train", *v);
    if (auto v = get("train", "batch")) t.gridalign.batch_size = t.hfs.batch_size = to_long("train", *v);
    if (auto v = get("train", "bandwidth")) t.gridalign.bandwidth = to_real("train", *v);
    if (auto v = get("train", "epochs")) t.gridalign.max_epochs = t.hfs.max_epochs = static_cast<int>(to_long("train", *v));
    if (auto v = get("train", "seed")) t.gridalign.seed = t.hfs.seed = to_seed("train", *v);
    if (auto v = get("train", "plateau_window"))
        t.gridalign.plateau_window = t.hfs.plateau_window = static_cast<int>(to_long("train", *v));
    if (auto v = get("train", "plateau_tol")) t.gridalign.plateau_tol = t.hfs.plateau_tol = to_real("train", *v);
    if (auto v = get("train", "standardize_codes")) t.gridalign.standardize_codes = to_bool("train", *v);
    if (auto v = get("train", "ica_nonlinearity")) t.ica_nonlinearity = ica_nonlinearity_from_string(trim(*v));
    if (auto v = get("train", "ica_tol")) t.ica_tol = to_real("train", *v);
    if (auto v = get("train", "ica_max_iter")) t.ica_max_iter = static_cast<int>(to_long("train", *v));
    t.gridalign.validate();
    t.hfs.validate();
    if (!(t.ica_tol > 0.0) || t.ica_max_iter < 1) bad("train", "ica_tol and ica_max_iter must be positive");

    // eval
    if (auto v = get("eval", "k_per_axis"))
        for (const auto& e : split_list(*v)) c.eval.k_per_axis.push_back(static_cast<int>(to_long("eval", e)));
    auto& d = c.eval.options.detect;
    if (auto v = get("eval", "top_fraction")) d.top_fraction = to_real("eval", *v);
    if (auto v = get("eval", "bandwidth")) d.bandwidth = to_real("eval", *v);
    if (auto v = get("eval", "restarts")) d.restarts = static_cast<int>(to_long("eval", *v));
    if (auto v = get("eval", "refine"))
        d.refine = one_of("eval", *v, {"none", "segmentation"}) == "none" ? Refinement::none : Refinement::segmentation;
    if (auto v = get("eval", "seed")) d.seed = to_seed("eval", *v);
    if (auto v = get("eval", "null_seed")) c.eval.options.null_seed = to_seed("eval", *v);
    if (!(d.top_fraction > 0.0 && d.top_fraction <= 1.0)) bad("eval", "top_fraction must be in (0, 1]");
    if (!(d.bandwidth > 0.0)) bad("eval", "bandwidth must be positive");
    if (d.restarts < 1) bad("eval", "restarts must be >= 1");

    // verify
    auto& vf = c.verify;
    if (auto v = get("verify", "battery")) vf.battery = one_of("verify", *v, {"default", "empty"});
    if (auto v = get("verify", "corollary_n")) vf.corollary_n = to_long("verify", *v);
    if (auto v = get("verify", "pushforward_n")) vf.pushforward_n = to_long("verify", *v);
    if (auto v = get("verify", "test_points")) vf.test_points = static_cast<int>(to_long("verify", *v));
    if (auto v = get("verify", "bandwidth")) vf.bandwidth = to_real("verify", *v);
    if (auto v = get("verify", "tolerance")) vf.tolerance = to_real("verify", *v);
    if (auto v = get("verify", "seed")) vf.seed = to_seed("verify", *v);
    if (vf.corollary_n < 1 || vf.pushforward_n < 2 || vf.test_points < 1) bad("verify", "sample counts must be positive");

    // heatmap
    auto& h = c.heatmap;
    if (auto v = get("heatmap", "input")) h.input = *v;
    if (auto v = get("heatmap", "columns")) h.columns = split_list(*v);
    if (auto v = get("heatmap", "resolution")) h.resolution = static_cast<int>(to_long("heatmap", *v));
    if (auto v = get("heatmap", "bandwidth")) h.bandwidth = to_real("heatmap", *v);
    if (auto v = get("heatmap", "log")) h.log = to_bool("heatmap", *v);
    if (auto v = get("heatmap", "standardize")) h.standardize = to_bool("heatmap", *v);
    if (auto v = get("heatmap", "max_points")) h.max_points = to_long("heatmap", *v);
    if (auto v = get("heatmap", "seed")) h.seed = to_seed("heatmap", *v);
    if (auto v = get("heatmap", "block")) h.block = static_cast<int>(to_long("heatmap", *v));
    if (!h.columns.empty() && h.columns.size() != 2) bad("heatmap", "columns must name exactly two columns");
    if (h.resolution < 2 || h.max_points < 1 || h.block < 1 || !(h.bandwidth > 0.0))
        bad("heatmap", "resolution >= 2, max_points >= 1, block >= 1 and bandwidth > 0 required");

    // ingest
    if (auto v = get("ingest", "input")) c.ingest.input = *v;
    if (auto v = get("ingest", "columns")) c.ingest.columns = split_list(*v);
    if (auto v = get("ingest", "transforms")) {
        c.ingest.transforms = split_list(*v);
        for (const auto& tr : c.ingest.transforms) one_of("ingest", tr, {"log", "standardize"});
    }
    if (auto v = get("ingest", "output")) c.ingest.output = *v;

    if (auto v = get("io", "dir")) c.dir = *v;
    return c;
}

inline RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
    RawConfig raw = path.empty() ? RawConfig{} : parse_config_text(io::read_file(path));
    for (const auto& o : overrides) apply_override(raw, o);
    return build_config(raw);
}

inline std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& e : v) s += (s.empty() ? "" : ",") + e;
    return s;
}

/// Canonical JSON of the resolved configuration; its hash goes into manifests.
inline nlohmann::json to_json(const RunConfig& c) {
    nlohmann::json ranges = nlohmann::json::array();
    for (const auto& r : c.synth.ranges) ranges.push_back({r.lo, r.hi});
    const auto& g = c.train.gridalign;
    const auto& d = c.eval.options.detect;
    return {
        {"synth",
         {{"cells", c.synth.cells},
          {"ranges", ranges},
          {"target_correlation", c.synth.target_correlation},
          {"diagonal_factor", c.synth.diagonal_factor ? nlohmann::json(*c.synth.diagonal_factor) : nlohmann::json(nullptr)},
          {"n", c.synth.n},
          {"grid_seed", c.synth.grid_seed},
          {"sample_seed", c.synth.sample_seed}}},
        {"mixing",
         {{"kind", c.mixing.kind},
          {"seed", c.mixing.seed},
          {"max_condition", c.mixing.max_condition},
          {"angle", c.mixing.angle},
          {"path", c.mixing.path}}},
        {"train",
         {{"method", c.train.method},
          {"gridalign",
           {{"lr", g.learning_rate},
            {"momentum", g.momentum},
            {"batch", g.batch_size},
            {"bandwidth", g.bandwidth},
            {"epochs", g.max_epochs},
            {"seed", g.seed},
            {"plateau_window", g.plateau_window},
            {"plateau_tol", g.plateau_tol},
            {"standardize_codes", g.standardize_codes}}},
          {"hfs",
           {{"lr", c.train.hfs.learning_rate},
            {"momentum", c.train.hfs.momentum},
            {"batch", c.train.hfs.batch_size},
            {"epochs", c.train.hfs.max_epochs},
            {"seed", c.train.hfs.seed},
            {"plateau_window", c.train.hfs.plateau_window},
            {"plateau_tol", c.train.hfs.plateau_tol}}},
          {"fastica",
           {{"nonlinearity", to_string(c.train.ica_nonlinearity)},
            {"tol", c.train.ica_tol},
            {"max_iter", c.train.ica_max_iter}}}}},
        {"eval",
         {{"k_per_axis", c.eval.k_per_axis},
          {"top_fraction", d.top_fraction},
          {"bandwidth", d.bandwidth},
          {"restarts", d.restarts},
          {"refine", to_string(d.refine)},
          {"seed", d.seed},
          {"null_seed", c.eval.options.null_seed}}},
        {"verify",
         {{"battery", c.verify.battery},
          {"corollary_n", c.verify.corollary_n},
          {"pushforward_n", c.verify.pushforward_n},
          {"test_points", c.verify.test_points},
          {"bandwidth", c.verify.bandwidth},
          {"tolerance", c.verify.tolerance},
          {"seed", c.verify.seed}}},
        {"heatmap",
         {{"input", c.heatmap.input},
          {"columns", c.heatmap.columns},
          {"resolution", c.heatmap.resolution},
          {"bandwidth", c.heatmap.bandwidth},
          {"log", c.heatmap.log},
          {"standardize", c.heatmap.standardize},
          {"max_points", c.heatmap.max_points},
          {"seed", c.heatmap.seed},
          {"block", c.heatmap.block}}},
        {"ingest",
         {{"input", c.ingest.input},
          {"columns", c.ingest.columns},
          {"transforms", c.ingest.transforms},
          {"output", c.ingest.output}}},
        {"io", {{"dir", c.dir}}},
    };
}

inline std::string config_hash(const RunConfig& c) { return io::sha256_hex(to_json(c).dump()); }

}  // namespace gridalign
