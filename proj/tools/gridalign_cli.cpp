// gridalign command line: gen | train | eval | verify | heatmap | ingest

#include "gridalign/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace gridalign;

struct Shortcut {
    std::string flag;
    std::string key;
    std::string help;
    std::string value;
};

void add_shortcuts(CLI::App* sub, std::vector<Shortcut>& s) {
    for (auto& sc : s) sub->add_option(sc.flag, sc.value, sc.help);
}

void collect(const std::vector<Shortcut>& s, std::vector<std::string>& overrides) {
    for (const auto& sc : s)
        if (!sc.value.empty()) overrides.push_back(sc.key + "=" + sc.value);
}

void summarize(const Manifest& m) {
    for (const auto& e : m.outputs) std::cout << e.path << "  " << e.sha256.substr(0, 12) << "  " << e.bytes << " bytes\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gridalign: axis-aligned grid recovery from mixed observations"};
    app.require_subcommand(1);

    std::string config_path, out_dir, model_path;
    std::vector<std::string> sets;
    app.add_option("-c,--config", config_path, "INI or JSON config file");
    app.add_option("--set", sets, "override, section.key=value (repeatable)");
    app.add_option("-o,--out", out_dir, "artifact directory (io.dir)");

    auto* gen = app.add_subcommand("gen", "sample latents and observations from a grid model");
    std::vector<Shortcut> gen_s{{"--n", "synth.n", "rows", ""},
                                {"--grid-seed", "synth.grid_seed", "grid seed", ""},
                                {"--sample-seed", "synth.sample_seed", "sample seed", ""},
                                {"--mixing", "mixing.kind", "identity|linear|rotation|file", ""}};
    add_shortcuts(gen, gen_s);

    auto* train = app.add_subcommand("train", "fit an unmixing map");
    std::vector<Shortcut> train_s{{"--method", "train.method", "gridalign|fastica|hfs", ""},
                                  {"--lr", "train.lr", "learning rate", ""},
                                  {"--momentum", "train.momentum", "momentum", ""},
                                  {"--batch", "train.batch", "batch size", ""},
                                  {"--bandwidth", "train.bandwidth", "kernel bandwidth", ""},
                                  {"--epochs", "train.epochs", "max epochs", ""},
                                  {"--seed", "train.seed", "seed", ""},
                                  {"--plateau-window", "train.plateau_window", "early-stop window", ""},
                                  {"--plateau-tol", "train.plateau_tol", "early-stop tolerance", ""}};
    add_shortcuts(train, train_s);
    std::string data_dir;
    train->add_option("--data", data_dir, "directory holding gen outputs (default: --out)");

    auto* eval = app.add_subcommand("eval", "detect the grid in the codes and score it");
    eval->add_option("--model", model_path, "model.json (default: <out>/model.json)");
    std::vector<Shortcut> eval_s{{"--refine", "eval.refine", "none|segmentation", ""},
                                 {"--top-fraction", "eval.top_fraction", "kept fraction", ""}};
    add_shortcuts(eval, eval_s);

    auto* verify = app.add_subcommand("verify", "check the invariance guarantees numerically");
    std::vector<Shortcut> verify_s{{"--battery", "verify.battery", "default|empty", ""},
                                   {"--seed", "verify.seed", "seed", ""}};
    add_shortcuts(verify, verify_s);

    auto* heatmap = app.add_subcommand("heatmap", "density gradient magnitude over two columns");
    std::vector<Shortcut> heat_s{{"--input", "heatmap.input", "CSV input", ""},
                                 {"--columns", "heatmap.columns", "two column names", ""},
                                 {"--resolution", "heatmap.resolution", "grid points per axis", ""},
                                 {"--bandwidth", "heatmap.bandwidth", "kernel bandwidth", ""},
                                 {"--log", "heatmap.log", "log-transform first (true|false)", ""}};
    add_shortcuts(heatmap, heat_s);

    auto* ingest = app.add_subcommand("ingest", "clean and transform a CSV");
    std::vector<Shortcut> ingest_s{{"--input", "ingest.input", "CSV input", ""},
                                   {"--columns", "ingest.columns", "columns to keep", ""},
                                   {"--transforms", "ingest.transforms", "log, standardize (in order)", ""},
                                   {"--output", "ingest.output", "output file name", ""}};
    add_shortcuts(ingest, ingest_s);

    CLI11_PARSE(app, argc, argv);

    try {
        std::vector<std::string> overrides = sets;
        if (!out_dir.empty()) overrides.push_back("io.dir=" + out_dir);
        for (auto* s : {&gen_s, &train_s, &eval_s, &verify_s, &heat_s, &ingest_s}) collect(*s, overrides);
        RunConfig cfg = load_config(config_path, overrides);

        if (gen->parsed()) summarize(cmd_gen(cfg));
        else if (train->parsed()) {
            if (!data_dir.empty() && data_dir != cfg.dir) {
                // read the dataset from --data, write the model under --out
                RunConfig in = cfg;
                in.dir = data_dir;
                for (const char* f : {"gridspec.json", "mixing.json", "latents.csv", "observations.csv"})
                    io::write_file(cmd_detail::in_dir(cfg, f), io::read_file(cmd_detail::in_dir(in, f)));
            }
            summarize(cmd_train(cfg));
        } else if (eval->parsed()) {
            const auto m = cmd_eval(cfg, model_path);
            summarize(m);
            std::cout << "agreement " << m.extra.at("agreement").get<double>() << "\n";
        } else if (verify->parsed()) {
            const auto r = cmd_verify(cfg);
            summarize(r.manifest);
            if (!r.all_passed) {
                std::cerr << "error: verification battery failed; see verify_report.json\n";
                return exit_code(ErrorKind::verification);
            }
        } else if (heatmap->parsed()) summarize(cmd_heatmap(cfg));
        else if (ingest->parsed()) {
            const auto m = cmd_ingest(cfg);
            summarize(m);
            std::cout << "dropped " << m.extra.at("dropped_rows").get<std::size_t>() << " non-finite rows\n";
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
