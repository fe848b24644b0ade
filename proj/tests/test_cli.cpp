#include "gridalign/commands.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace gridalign;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("gridalign_cli_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

RunConfig small_config(const fs::path& dir, std::vector<std::string> extra = {}) {
    RawConfig raw;
    apply_override(raw, "io.dir=" + dir.string());
    apply_override(raw, "synth.n=4000");
    for (const auto& e : extra) apply_override(raw, e);
    return build_config(raw);
}

int run_cli(const std::string& args) {
    const int rc = std::system((std::string(GRIDALIGN_BIN) + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) { return io::read_file(p.string()); }

}  // namespace

TEST(CliGen, DefaultShapeAndDeterminism) {
    const auto d = fresh_dir("gen");
    RawConfig raw;
    apply_override(raw, "io.dir=" + d.string());
    const auto cfg = build_config(raw);
    const auto m1 = cmd_gen(cfg);
    const auto x = io::read_numeric_csv((d / "observations.csv").string());
    EXPECT_EQ(x.data.rows(), 50000);
    EXPECT_EQ(x.data.cols(), 2);
    const auto spec = grid_spec_from_json(nlohmann::json::parse(slurp(d / "gridspec.json")));
    EXPECT_EQ(spec.coordination.axis(0).size(), 3u);
    EXPECT_EQ(spec.coordination.axis(1).size(), 3u);
    const double rho = m1.extra.at("latent_correlation").get<double>();
    EXPECT_GE(rho, 0.5);
    EXPECT_LE(rho, 0.7);
    const auto m2 = cmd_gen(cfg);
    ASSERT_EQ(m1.outputs.size(), m2.outputs.size());
    for (std::size_t i = 0; i < m1.outputs.size(); ++i) EXPECT_EQ(m1.outputs[i].sha256, m2.outputs[i].sha256);
    EXPECT_TRUE(fs::exists(d / "manifest_gen.json"));
}

TEST(CliGen, IdentityMixingCopiesLatents) {
    const auto d = fresh_dir("gen_identity");
    cmd_gen(small_config(d, {"mixing.kind=identity"}));
    const auto z = io::read_numeric_csv((d / "latents.csv").string());
    const auto x = io::read_numeric_csv((d / "observations.csv").string());
    EXPECT_EQ(z.data, x.data);
}

TEST(CliTrain, WritesModelAndLogForEachMethod) {
    const auto d = fresh_dir("train");
    cmd_gen(small_config(d));
    for (const std::string method : {"gridalign", "hfs", "fastica"}) {
        const auto cfg = small_config(d, {"train.method=" + method, "train.epochs=2", "train.batch=1000"});
        cmd_train(cfg);
        const auto model = nlohmann::json::parse(slurp(d / "model.json"));
        EXPECT_EQ(model.at("method"), method);
        EXPECT_EQ(model_from_json(model.at("model")).W.rows(), 2);
        const auto log = io::read_csv((d / "train_log.csv").string());
        EXPECT_EQ(log.header, (std::vector<std::string>{"epoch", "step", "loss"}));
        if (method == "fastica") EXPECT_TRUE(model.contains("converged"));
        else EXPECT_FALSE(log.rows.empty());
    }
}

TEST(CliEval, GroundTruthInverseRecoversCells) {
    const auto d = fresh_dir("eval");
    auto cfg = small_config(d, {"synth.n=20000"});
    cmd_gen(cfg);
    const auto h = diffeo_from_json(nlohmann::json::parse(slurp(d / "mixing.json")));
    const auto& lin = std::get<LinearMap>(h.node());
    const UnmixingModel truth{lin.inverse, Vector::Zero(2), Vector::Ones(2)};
    io::write_file((d / "truth.json").string(), nlohmann::json{{"method", "truth"}, {"model", model_to_json(truth)}}.dump());
    const auto m = cmd_eval(cfg, (d / "truth.json").string());
    EXPECT_GT(m.extra.at("agreement").get<double>(), 0.99);
    const auto rep = nlohmann::json::parse(slurp(d / "eval_report.json"));
    EXPECT_NEAR(rep.at("alignment_index").get<double>(), 1.0, 1e-9);
    EXPECT_LT(rep.at("null_agreement").get<double>(), 0.15);
    EXPECT_EQ(io::read_csv((d / "confusion.csv").string()).rows.size(), 16u);
}

TEST(CliEval, ReportIsByteIdenticalAcrossRuns) {
    const auto d = fresh_dir("eval_det");
    const auto cfg = small_config(d, {"synth.n=6000", "train.epochs=2", "train.batch=2000"});
    cmd_gen(cfg);
    cmd_train(cfg);
    cmd_eval(cfg);
    const auto first = slurp(d / "eval_report.json");
    cmd_gen(cfg);
    cmd_train(cfg);
    cmd_eval(cfg);
    EXPECT_EQ(first, slurp(d / "eval_report.json"));
}

TEST(CliVerify, DefaultBatteryPasses) {
    const auto d = fresh_dir("verify");
    const auto r = cmd_verify(small_config(d));
    EXPECT_TRUE(r.all_passed);
    const auto rep = nlohmann::json::parse(slurp(d / "verify_report.json"));
    int corollary = 0, push = 0;
    for (const auto& c : rep.at("cases")) {
        EXPECT_TRUE(c.at("passed").get<bool>()) << c.dump();
        (c.at("kind") == "corollary" ? corollary : push)++;
    }
    EXPECT_GE(corollary, 12);
    EXPECT_GE(push, 3);
}

TEST(CliHeatmap, RidgesNearThresholdsAndConstantIsZero) {
    const auto d = fresh_dir("heatmap");
    const auto cfg = small_config(d, {"synth.n=20000", "heatmap.standardize=false", "heatmap.resolution=100"});
    cmd_gen(cfg);
    cmd_heatmap(cfg);
    const auto g = io::parse_grid_csv(slurp(d / "heatmap.csv"));
    const auto spec = grid_spec_from_json(nlohmann::json::parse(slurp(d / "gridspec.json")));
    // strongest interior column should sit on an x threshold
    const Vector col = g.values.colwise().mean().transpose();
    Eigen::Index best = -1;
    for (Eigen::Index c = 0; c < col.size(); ++c) {
        if (g.xs[c] < g.xs.front() + 0.3 || g.xs[c] > g.xs.back() - 0.3) continue;
        if (best < 0 || col(c) > col(best)) best = c;
    }
    ASSERT_GE(best, 0);
    double nearest = INFINITY;
    for (double t : spec.coordination.axis(0).values()) nearest = std::min(nearest, std::abs(t - g.xs[best]));
    EXPECT_LT(nearest, 0.15);

    io::write_file((d / "const.csv").string(), "a,b\n2,3\n2,3\n2,3\n");
    cmd_heatmap(small_config(d, {"heatmap.input=const.csv"}));
    EXPECT_EQ(io::parse_grid_csv(slurp(d / "heatmap.csv")).values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(CliHeatmap, LogRejectsNonPositiveRows) {
    const auto d = fresh_dir("heatmap_log");
    io::write_file((d / "in.csv").string(), "a,b\n1,2\n0,3\n4,-1\n");
    try {
        cmd_heatmap(small_config(d, {"heatmap.input=in.csv", "heatmap.log=true"}));
        FAIL() << "expected an error";
    } catch (const Error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("2 (a)"), std::string::npos) << msg;
        EXPECT_NE(msg.find("3 (b)"), std::string::npos) << msg;
    }
}

TEST(CliIngest, LogStandardizeAndDropCount) {
    const auto d = fresh_dir("ingest");
    io::write_file((d / "in.csv").string(), "u,v,w\n1,10,a\n2,20,b\nnan,5,c\n4,inf,d\n8,80,e\n16,x,f\n");
    const auto cfg = small_config(d, {"ingest.input=" + (d / "in.csv").string(), "ingest.columns=u,v",
                                      "ingest.transforms=log,standardize"});
    const auto m = cmd_ingest(cfg);
    EXPECT_EQ(m.extra.at("dropped_rows"), 3);
    const auto out = io::read_numeric_csv((d / "ingested.csv").string());
    ASSERT_EQ(out.data.rows(), 3);
    for (Eigen::Index c = 0; c < 2; ++c) {
        EXPECT_NEAR(out.data.col(c).mean(), 0.0, 1e-9);
        EXPECT_NEAR(std::sqrt(out.data.col(c).array().square().mean()), 1.0, 1e-9);
    }
    const auto manifest = nlohmann::json::parse(slurp(d / "manifest_ingest.json"));
    EXPECT_EQ(manifest.at("dropped_rows"), 3);
}

TEST(CliIngest, Errors) {
    const auto d = fresh_dir("ingest_err");
    io::write_file((d / "z.csv").string(), "u\n1\n0\n");
    io::write_file((d / "nan.csv").string(), "u\nnan\n");
    const auto with = [&](const std::string& in, const std::string& cols, const std::string& tr) {
        return small_config(d, {"ingest.input=" + (d / in).string(), "ingest.columns=" + cols, "ingest.transforms=" + tr});
    };
    EXPECT_THROW(cmd_ingest(with("z.csv", "missing", "standardize")), Error);
    try {
        cmd_ingest(with("z.csv", "u", "log"));
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("2 (u)"), std::string::npos);
    }
    EXPECT_THROW(cmd_ingest(with("nan.csv", "u", "standardize")), Error);
}

TEST(CliBinary, ExitCodes) {
    const auto d = fresh_dir("binary").string();
    EXPECT_EQ(run_cli("--out " + d + " verify --battery empty"), 0);
    EXPECT_EQ(run_cli("--out " + d + " --set synth.nope=1 gen"), 2);
    EXPECT_EQ(run_cli("--out " + d + " --config " + d + "/missing.ini gen"), 2);
    EXPECT_EQ(run_cli("--out " + d + " --set verify.tolerance=1e-12 verify"), 4);
    EXPECT_EQ(run_cli("--out " + d + " --set synth.n=3000 --set mixing.kind=identity gen"), 0);
    // a model that collapses one code axis
    io::write_file(d + "/flat.json",
                   R"({"method":"x","model":{"W":[[1,0],[0,0]],"input_mean":[0,0],"input_scale":[1,1]}})");
    EXPECT_EQ(run_cli("--out " + d + " eval --model " + d + "/flat.json"), 3);
    EXPECT_EQ(run_cli("--help"), 0);
}
