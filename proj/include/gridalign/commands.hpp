#pragma once

// The CLI subcommands as functions of a resolved RunConfig. Each writes its
// artifacts under cfg.dir and a manifest_<command>.json listing them.

#include "gridalign/baselines.hpp"
#include "gridalign/config.hpp"
#include "gridalign/density.hpp"
#include "gridalign/eval.hpp"
#include "gridalign/io.hpp"
#include "gridalign/synth.hpp"
#include "gridalign/train.hpp"

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

namespace gridalign {

using io::Manifest;

namespace cmd_detail {

inline std::string in_dir(const RunConfig& c, const std::string& name) {
    const std::filesystem::path p(name);
    return p.is_absolute() ? name : (std::filesystem::path(c.dir) / p).string();
}

inline std::vector<std::string> names(const char* prefix, Eigen::Index n) {
    std::vector<std::string> out;
    for (Eigen::Index i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
}

class Writer {
public:
    Writer(const RunConfig& c, std::string command) : cfg_(c), t0_(std::chrono::steady_clock::now()) {
        m_.command = std::move(command);
        m_.config_sha256 = config_hash(c);
    }

    void text(const std::string& name, const std::string& content) {
        const auto path = in_dir(cfg_, name);
        io::write_file(path, content);
        m_.add(path, name);
    }
    void json(const std::string& name, const nlohmann::json& j) { text(name, j.dump(2) + "\n"); }

    nlohmann::json& extra() { return m_.extra; }

    Manifest finish() {
        m_.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
        io::write_file(in_dir(cfg_, "manifest_" + m_.command + ".json"), io::to_json(m_).dump(2) + "\n");
        return m_;
    }

private:
    const RunConfig& cfg_;
    std::chrono::steady_clock::time_point t0_;
    Manifest m_;
};

inline nlohmann::json read_json(const std::string& path) {
    try {
        return nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::io, path + ": " + e.what());
    }
}

inline nlohmann::json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector vec_from(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace cmd_detail

/// Grid spec described by the synth section, diagonal boost applied.
inline GridSpec synth_spec(const RunConfig& c) {
    GridSpec spec = make_grid_spec(c.synth.cells, c.synth.ranges, c.synth.grid_seed);
    if (spec.dim() >= 2) {
        if (c.synth.diagonal_factor) spec = boost_diagonal(spec, *c.synth.diagonal_factor);
        else if (c.synth.target_correlation > 0.0)
            spec = boost_diagonal(spec, calibrate_diagonal_boost(spec, c.synth.target_correlation));
    }
    return spec;
}

inline DiffeoSpec synth_mixing(const RunConfig& c, std::size_t d) {
    if (c.mixing.kind == "identity") return DiffeoSpec::identity(d);
    if (c.mixing.kind == "linear") return DiffeoSpec::linear(random_invertible_matrix(d, c.mixing.seed, c.mixing.max_condition));
    if (c.mixing.kind == "rotation") return DiffeoSpec::rotation2d(c.mixing.angle);
    auto h = diffeo_from_json(cmd_detail::read_json(c.mixing.path));
    if (h.dim() != d) fail(ErrorKind::config, "mixing file has dimension " + std::to_string(h.dim()) + ", grid has " + std::to_string(d));
    return h;
}

inline Manifest cmd_gen(const RunConfig& c) {
    using namespace cmd_detail;
    Writer w(c, "gen");
    const GridSpec spec = synth_spec(c);
    const DiffeoSpec h = synth_mixing(c, spec.dim());
    const Matrix z = sample_latents(spec, c.synth.n, c.synth.sample_seed);
    const Matrix x = h.apply_forward(z);
    const auto d = static_cast<Eigen::Index>(spec.dim());
    w.text("latents.csv", io::matrix_to_csv(names("z", d), z));
    w.text("observations.csv", io::matrix_to_csv(names("x", d), x));
    w.json("gridspec.json", to_json(spec));
    w.json("mixing.json", to_json(h));
    w.extra()["rows"] = c.synth.n;
    if (spec.dim() >= 2) w.extra()["latent_correlation"] = latent_correlation(spec, 0, 1);
    return w.finish();
}

struct Dataset {
    GridSpec spec;
    DiffeoSpec mixing;
    Matrix latents;
    Matrix observations;
};

inline Dataset load_dataset(const RunConfig& c) {
    using namespace cmd_detail;
    Dataset ds{grid_spec_from_json(read_json(in_dir(c, "gridspec.json"))),
               diffeo_from_json(read_json(in_dir(c, "mixing.json"))),
               io::read_numeric_csv(in_dir(c, "latents.csv")).data,
               io::read_numeric_csv(in_dir(c, "observations.csv")).data};
    const auto d = static_cast<Eigen::Index>(ds.spec.dim());
    if (ds.latents.cols() != d || ds.latents.rows() != ds.observations.rows())
        fail(ErrorKind::io, "dataset: latents and observations are not row-aligned with the grid dimension");
    return ds;
}

inline nlohmann::json model_to_json(const UnmixingModel& m) {
    return {{"W", matrix_to_json(m.W)},
            {"input_mean", cmd_detail::vec_json(m.input_mean)},
            {"input_scale", cmd_detail::vec_json(m.input_scale)}};
}

inline UnmixingModel model_from_json(const nlohmann::json& j) {
    try {
        UnmixingModel m{matrix_from_json(j.at("W")), cmd_detail::vec_from(j.at("input_mean")),
                        cmd_detail::vec_from(j.at("input_scale"))};
        require(m.input_mean.size() == m.W.cols() && m.input_scale.size() == m.W.cols(), "model: shape mismatch");
        return m;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::io, std::string("model json: ") + e.what());
    }
}

inline std::string log_csv(const std::vector<LogRow>& log) {
    std::string out = "epoch,step,loss\n";
    for (const auto& r : log)
        out += std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + io::format_double(r.loss) + "\n";
    return out;
}

inline Manifest cmd_train(const RunConfig& c) {
    using namespace cmd_detail;
    Writer w(c, "train");
    const Dataset ds = load_dataset(c);
    const auto d = static_cast<Eigen::Index>(ds.spec.dim());
    if (ds.observations.cols() < d)
        fail("train: observations have " + std::to_string(ds.observations.cols()) + " columns, fewer than the " +
             std::to_string(d) + " latent factors");
    nlohmann::json model;
    model["method"] = c.train.method;
    std::vector<LogRow> log;
    if (c.train.method == "fastica") {
        const auto wm = whiten_fit(ds.observations, d);
        const auto ica = fastica_fit(whiten_apply(wm, ds.observations), c.train.ica_nonlinearity, c.train.ica_tol,
                                     c.train.ica_max_iter, c.train.gridalign.seed);
        model["model"] = model_to_json(ica_unmixing(wm, ica));
        model["converged"] = ica.converged;
        model["iterations"] = ica.iterations;
        model["nonlinearity"] = to_string(ica.nonlinearity);
        model["rotation"] = matrix_to_json(ica.rotation);
    } else {
        const TrainTrace t = c.train.method == "hfs" ? hfs_fit(ds.observations, c.train.hfs, d)
                                                     : train_linear(ds.observations, c.train.gridalign, d);
        model["model"] = model_to_json(t.model);
        model["best_epoch"] = t.best_epoch;
        model["epochs_run"] = t.epochs_run;
        model["stop_reason"] = t.stop_reason;
        model["epoch_losses"] = t.epoch_losses;
        model["constant_columns"] = t.constant_columns;
        log = t.log;
    }
    w.json("model.json", model);
    w.text("train_log.csv", log_csv(log));
    return w.finish();
}

inline nlohmann::json cmd_eval_report(const RunConfig& c, const std::string& model_path) {
    using namespace cmd_detail;
    const Dataset ds = load_dataset(c);
    const nlohmann::json mj = read_json(model_path);
    const UnmixingModel model = model_from_json(mj.at("model"));
    if (model.input_dim() != ds.observations.cols() || model.latent_dim() != static_cast<Eigen::Index>(ds.spec.dim()))
        fail("eval: model shape does not fit the dataset");
    std::vector<int> cells;
    for (std::size_t i = 0; i < ds.spec.dim(); ++i) cells.push_back(static_cast<int>(ds.spec.coordination.axis(i).size()) + 1);
    if (!c.eval.k_per_axis.empty()) {
        std::vector<int> k(cells.size());
        for (std::size_t i = 0; i < k.size(); ++i) k[i] = cells[i] - 1;
        if (c.eval.k_per_axis != k) fail(ErrorKind::config, "config [eval]: k_per_axis must equal the grid's thresholds per axis");
    }
    const IndexMatrix truth = assign_cells(ds.latents, ds.spec.coordination);
    EvalReport rep = evaluate_codes(model.encode(ds.observations), truth, cells, c.eval.options);
    if (const auto* lin = std::get_if<LinearMap>(&ds.mixing.node())) rep.alignment = alignment_index(model.effective_matrix(), lin->matrix);
    else if (const auto* rot = std::get_if<RotationMap>(&ds.mixing.node())) rep.alignment = alignment_index(model.effective_matrix(), rot->matrix);
    rep.config["method"] = mj.value("method", "unknown");
    rep.config["config_sha256"] = config_hash(c);
    nlohmann::json j = to_json(rep);
    j["loss_trajectory"] = mj.value("epoch_losses", std::vector<double>{});
    return j;
}

inline Manifest cmd_eval(const RunConfig& c, const std::string& model_path = "") {
    using namespace cmd_detail;
    Writer w(c, "eval");
    const auto j = cmd_eval_report(c, model_path.empty() ? in_dir(c, "model.json") : model_path);
    w.json("eval_report.json", j);
    std::string csv = "cell,indices,true_count,pred_count,agree_count\n";
    for (const auto& r : j.at("confusion")) {
        std::string idx;
        for (const auto& i : r.at("indices")) idx += (idx.empty() ? "" : " ") + std::to_string(i.get<int>());
        csv += std::to_string(r.at("cell").get<std::size_t>()) + "," + idx + "," + std::to_string(r.at("true_count").get<std::size_t>()) +
               "," + std::to_string(r.at("pred_count").get<std::size_t>()) + "," +
               std::to_string(r.at("agree_count").get<std::size_t>()) + "\n";
    }
    w.text("confusion.csv", csv);
    w.extra()["agreement"] = j.at("match").at("agreement");
    return w.finish();
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct VerifyCase {
    std::string name;
    std::string kind;  // corollary | pushforward
    bool passed = false;
    nlohmann::json detail;
};

/// Seeded axis-respecting map: signed permutation then one monotone map per axis.
inline DiffeoSpec random_axis_respecting(std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    const auto perm = rng.permutation(d);
    std::vector<int> signs;
    std::vector<MonotoneMap> maps;
    for (std::size_t i = 0; i < d; ++i) {
        signs.push_back(rng.uniform() < 0.5 ? -1 : 1);
        switch (rng.below(3)) {
        case 0:
            maps.push_back(MonotoneMap::affine(rng.uniform(0.2, 3.0), rng.uniform(-2.0, 2.0)));
            break;
        case 1:
            maps.push_back(MonotoneMap::cubic(rng.uniform(0.1, 2.0)));
            break;
        default:
            maps.push_back(MonotoneMap::tanh(rng.uniform(0.5, 2.0), rng.uniform(0.2, 1.5), rng.uniform(-2.0, 2.0), rng.uniform(-1.0, 1.0)));
        }
    }
    return DiffeoSpec::compose({DiffeoSpec::signed_permutation(perm, signs), DiffeoSpec::coordwise(std::move(maps))});
}

inline std::vector<VerifyCase> run_verify_battery(const RunConfig& c) {
    std::vector<VerifyCase> out;
    if (c.verify.battery == "empty") return out;
    const auto& v = c.verify;
    const auto corollary = [&](const std::string& name, const DiscreteCoordination& a, const DiffeoSpec& h, std::uint64_t s) {
        VerifyCase vc{name, "corollary", false, {}};
        try {
            const auto r = verify_corollary(a, h, v.corollary_n, s);
            vc.passed = r.passed;
            vc.detail = {{"samples", r.samples}, {"violations", r.violations}};
        } catch (const Error& e) {
            vc.detail = {{"error", e.what()}};
        }
        out.push_back(std::move(vc));
    };
    for (std::size_t d : {2u, 3u}) {
        const GridSpec g = make_grid_spec(std::vector<int>(d, 4), std::vector<Interval>(d, Interval{0.0, 4.0}), v.seed + d);
        const std::string tag = "d" + std::to_string(d) + ":";
        std::vector<std::size_t> swap(d);
        std::iota(swap.begin(), swap.end(), std::size_t{0});
        std::swap(swap[0], swap[1]);
        std::vector<std::size_t> keep(d);
        std::iota(keep.begin(), keep.end(), std::size_t{0});
        std::vector<int> plus(d, 1), flip(d, 1);
        flip[0] = -1;
        std::vector<MonotoneMap> warp;
        for (std::size_t i = 0; i < d; ++i) warp.push_back(i % 2 ? MonotoneMap::cubic(1.0) : MonotoneMap::tanh(1.0, 1.0, 0.0, 0.0));
        corollary(tag + "identity", g.coordination, DiffeoSpec::identity(d), v.seed);
        corollary(tag + "swap+warp", g.coordination,
                  DiffeoSpec::compose({DiffeoSpec::signed_permutation(swap, plus), DiffeoSpec::coordwise(warp)}), v.seed + 1);
        corollary(tag + "reversal+warp", g.coordination,
                  DiffeoSpec::compose({DiffeoSpec::signed_permutation(keep, flip), DiffeoSpec::coordwise(warp)}), v.seed + 2);
        for (std::uint64_t k = 0; k < 3; ++k)
            corollary(tag + "random" + std::to_string(k), g.coordination, random_axis_respecting(d, v.seed * 1000 + d * 10 + k),
                      v.seed + 3 + k);
    }

    // coarser grid, so that most test points sit away from the walls
    const GridSpec g = make_grid_spec({3, 3}, {{0.0, 4.0}, {0.0, 4.0}}, v.seed + 2);
    const Matrix z = sample_latents(g, v.pushforward_n, v.seed + 7);
    const Matrix tests = sample_latents(g, v.test_points, v.seed + 8);
    const auto push = [&](const std::string& name, const DiffeoSpec& h) {
        VerifyCase vc{name, "pushforward", false, {}};
        try {
            const auto r = verify_pushforward_density(h, g, z, h.apply_forward(tests), v.bandwidth);
            vc.passed = r.used > 0 && r.mean_abs_rel_error < v.tolerance;
            vc.detail = {{"mean_abs_rel_error", r.mean_abs_rel_error}, {"used", r.used}, {"excluded", r.excluded},
                         {"tolerance", v.tolerance}};
        } catch (const Error& e) {
            vc.detail = {{"error", e.what()}};
        }
        out.push_back(std::move(vc));
    };
    // maps of moderate local scale: the same bandwidth is used on both sides
    Matrix shear(2, 2);
    shear << 1.1, 0.3, -0.2, 0.9;
    push("identity", DiffeoSpec::identity(2));
    push("linear", DiffeoSpec::linear(shear));
    push("rotation", DiffeoSpec::rotation2d(0.5));
    push("monotone+rotation",
         DiffeoSpec::compose({DiffeoSpec::coordwise({MonotoneMap::tanh(2.5, 0.4, -0.8, 0.0), MonotoneMap::affine(1.2, -1.0)}),
                              DiffeoSpec::rotation2d(-0.7)}));
    return out;
}

struct VerifyOutcome {
    Manifest manifest;
    bool all_passed = true;
};

inline VerifyOutcome cmd_verify(const RunConfig& c) {
    cmd_detail::Writer w(c, "verify");
    const auto cases = run_verify_battery(c);
    nlohmann::json j;
    auto& arr = j["cases"] = nlohmann::json::array();
    bool ok = true;
    for (const auto& vc : cases) {
        arr.push_back({{"name", vc.name}, {"kind", vc.kind}, {"passed", vc.passed}, {"detail", vc.detail}});
        ok = ok && vc.passed;
    }
    j["passed"] = ok;
    w.json("verify_report.json", j);
    w.extra()["passed"] = ok;
    return {w.finish(), ok};
}

// ---------------------------------------------------------------------------
// heatmap and ingest
// ---------------------------------------------------------------------------

/// Natural log of every entry; names each offending row (1-based) otherwise.
inline void log_transform(Matrix& x, const std::vector<std::string>& header) {
    std::string bad;
    std::size_t count = 0;
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        for (Eigen::Index c = 0; c < x.cols(); ++c)
            if (!(x(r, c) > 0.0)) {
                if (++count <= 20) bad += (bad.empty() ? "" : ", ") + std::to_string(r + 1) + " (" + header[static_cast<std::size_t>(c)] + ")";
                break;
            }
    if (count) fail("log transform needs positive values; offending rows: " + bad + (count > 20 ? ", ..." : ""));
    x = x.array().log().matrix();
}

inline std::vector<std::size_t> select_columns(const std::vector<std::string>& header, const std::vector<std::string>& wanted) {
    std::vector<std::size_t> idx;
    for (const auto& w : wanted) {
        const auto it = std::find(header.begin(), header.end(), w);
        if (it == header.end()) fail(ErrorKind::config, "missing column '" + w + "'");
        idx.push_back(static_cast<std::size_t>(it - header.begin()));
    }
    return idx;
}

inline Manifest cmd_heatmap(const RunConfig& c) {
    using namespace cmd_detail;
    Writer w(c, "heatmap");
    const auto& hc = c.heatmap;
    const auto table = io::read_numeric_csv(in_dir(c, hc.input));
    if (table.header.size() < 2) fail("heatmap: input needs at least two columns");
    const auto cols = hc.columns.empty() ? std::vector<std::size_t>{0, 1} : select_columns(table.header, hc.columns);
    Matrix x(table.data.rows(), 2);
    for (int j = 0; j < 2; ++j) x.col(j) = table.data.col(static_cast<Eigen::Index>(cols[j]));
    if (x.rows() < 1) fail("heatmap: input has no rows");
    if (hc.log) log_transform(x, {table.header[cols[0]], table.header[cols[1]]});
    if (hc.standardize) x = standardize(x).data;
    if (x.rows() > hc.max_points) {
        Rng rng(hc.seed);
        const auto p = rng.permutation(static_cast<std::size_t>(x.rows()));
        Matrix sub(hc.max_points, 2);
        for (Eigen::Index r = 0; r < hc.max_points; ++r) sub.row(r) = x.row(static_cast<Eigen::Index>(p[r]));
        x = std::move(sub);
    }
    const Vector lo = x.colwise().minCoeff().transpose(), hi = x.colwise().maxCoeff().transpose();
    Heatmap hm;
    if (!(hi(0) > lo(0)) || !(hi(1) > lo(1))) {
        // no spread along a selected axis: no density variation to show
        for (int i = 0; i < hc.resolution; ++i) {
            hm.xs.push_back(lo(0) - 1.0 + 2.0 * i / (hc.resolution - 1));
            hm.ys.push_back(lo(1) - 1.0 + 2.0 * i / (hc.resolution - 1));
        }
        hm.values = Matrix::Zero(hc.resolution, hc.resolution);
    } else {
        hm = gradient_magnitude_heatmap(KdeModel(x, hc.bandwidth), {lo(0), hi(0), lo(1), hi(1)}, hc.resolution, hc.resolution);
    }
    w.text("heatmap.csv", io::grid_csv(hm.xs, hm.ys, hm.values));
    w.text("heatmap.svg", io::heatmap_svg(hm.values, hc.block));
    return w.finish();
}

inline Manifest cmd_ingest(const RunConfig& c) {
    using namespace cmd_detail;
    Writer w(c, "ingest");
    const auto& ic = c.ingest;
    if (ic.input.empty()) fail(ErrorKind::config, "config [ingest]: input is required");
    const auto table = io::read_csv(ic.input);
    const auto cols = ic.columns.empty() ? [&] {
        std::vector<std::size_t> all(table.header.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
    }()
                                         : select_columns(table.header, ic.columns);
    std::vector<std::string> header;
    for (auto k : cols) header.push_back(table.header[k]);
    std::vector<std::vector<double>> kept;
    std::size_t dropped = 0;
    for (const auto& row : table.rows) {
        std::vector<double> v;
        bool ok = true;
        for (auto k : cols) {
            const auto d = io::parse_double(row[k]);
            ok = ok && d && std::isfinite(*d);
            v.push_back(d ? *d : 0.0);
        }
        if (ok) kept.push_back(std::move(v));
        else ++dropped;
    }
    if (kept.empty()) fail("ingest: all " + std::to_string(table.rows.size()) + " rows were dropped as non-finite");
    Matrix x(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t r = 0; r < kept.size(); ++r)
        for (std::size_t j = 0; j < cols.size(); ++j) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = kept[r][j];
    for (const auto& t : ic.transforms) {
        if (t == "log") log_transform(x, header);
        else x = standardize(x).data;
    }
    w.text(ic.output, io::matrix_to_csv(header, x));
    w.extra()["rows_in"] = table.rows.size();
    w.extra()["rows_out"] = kept.size();
    w.extra()["dropped_rows"] = dropped;
    w.extra()["transforms"] = ic.transforms;
    return w.finish();
}

}  // namespace gridalign
