#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "concurl/datasets.hpp"
#include "concurl/ensemble.hpp"
#include "concurl/metrics.hpp"
#include "concurl/trainer.hpp"

namespace fs = std::filesystem;
using namespace concurl;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct DataArgs {
    std::string manifest;
    std::string csv;
    int label_column = -1;
    bool header = false;
};

void add_data_options(CLI::App* app, DataArgs& args) {
    app->add_option("--dataset", args.manifest, "Dataset manifest JSON");
    app->add_option("--data", args.csv, "CSV file with one row per point");
    app->add_option("--label-column", args.label_column, "Label column of --data (negative counts from the end)");
    app->add_flag("--header", args.header, "--data starts with a header row");
}

std::optional<Dataset> load_data(const DataArgs& args) {
    if (!args.manifest.empty() && !args.csv.empty()) {
        throw ConfigError("give either --dataset or --data, not both");
    }
    if (!args.csv.empty()) {
        return load_csv(args.csv, args.label_column, args.header);
    }
    if (!args.manifest.empty()) {
        std::ifstream in(args.manifest);
        if (!in) {
            throw DataError("cannot open manifest " + args.manifest);
        }
        nlohmann::json m;
        try {
            in >> m;
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("manifest " + args.manifest + " is not valid JSON: " + e.what());
        }
        return load_dataset(m, fs::path(args.manifest).parent_path());
    }
    return std::nullopt;
}

// One label per line taken from `column`; a non-integer first line is a header.
std::vector<int> read_labels(const fs::path& path, int column) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::vector<int> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = detail::split_csv_line(line);
        const int c = column < 0 ? static_cast<int>(cells.size()) + column : column;
        if (c < 0 || c >= static_cast<int>(cells.size())) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": no column " + std::to_string(column));
        }
        const std::string cell = detail::trim(cells[static_cast<std::size_t>(c)]);
        try {
            std::size_t used = 0;
            const int v = std::stoi(cell, &used);
            if (used != cell.size()) throw std::invalid_argument(cell);
            labels.push_back(v);
        } catch (const std::exception&) {
            if (line_no == 1 && labels.empty()) continue;
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": label '" + cell +
                              "' is not an integer");
        }
    }
    if (labels.empty()) {
        throw FormatError(path.string() + " holds no labels");
    }
    return labels;
}

void write_json(const nlohmann::json& j, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << j.dump(2) << "\n";
        return;
    }
    std::ofstream out(out_path);
    if (!out) {
        throw DataError("cannot write " + out_path);
    }
    out << j.dump(2) << "\n";
}

int run(int argc, char** argv) {
    CLI::App app{"Consensus clustering with representation learning"};
    app.require_subcommand(1);

    // generate-data
    auto* gen = app.add_subcommand("generate-data", "Write a Gaussian-blob dataset");
    BlobSpec blob;
    std::string gen_out = "blobs.csv";
    std::string gen_manifest;
    gen->add_option("--K,--clusters", blob.num_clusters, "Number of blobs")->check(CLI::PositiveNumber);
    gen->add_option("--dim", blob.dim, "Feature dimension")->check(CLI::PositiveNumber);
    gen->add_option("--points-per-cluster", blob.points_per_cluster)->check(CLI::PositiveNumber);
    gen->add_option("--center-scale", blob.center_scale);
    gen->add_option("--noise-sigma", blob.noise_sigma);
    gen->add_option("--seed", blob.seed);
    gen->add_option("--out", gen_out, "Output CSV (label in the last column)");
    gen->add_option("--manifest", gen_manifest, "Also write a dataset manifest pointing at --out");

    // train
    auto* tr = app.add_subcommand("train", "Train a model and write run artifacts");
    std::string config_path;
    DataArgs train_data;
    std::optional<std::string> mode;
    std::optional<int> epochs;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> batch_size;
    std::optional<double> lr;
    std::optional<int> eval_every;
    std::optional<std::string> output_dir;
    bool quiet = false;
    tr->add_option("--config", config_path, "Config JSON (all TrainConfig fields)");
    add_data_options(tr, train_data);
    tr->add_option("--mode", mode, "concurl | byol | soft | byol_soft");
    tr->add_option("--epochs", epochs);
    tr->add_option("--seed", seed);
    tr->add_option("--batch-size", batch_size);
    tr->add_option("--lr,--learning-rate", lr);
    tr->add_option("--eval-every", eval_every);
    tr->add_option("--output-dir", output_dir);
    tr->add_flag("--quiet", quiet);

    // eval
    auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset");
    std::string eval_ckpt;
    DataArgs eval_data;
    std::string eval_out;
    ev->add_option("--checkpoint", eval_ckpt)->required();
    add_data_options(ev, eval_data);
    ev->add_option("--out", eval_out, "Report JSON path (stdout when omitted)");

    // diversity
    auto* dv = app.add_subcommand("diversity", "Pairwise NMI of the ensemble clusterings");
    std::string div_ckpt, div_ensemble;
    DataArgs div_data;
    std::string div_out;
    dv->add_option("--checkpoint", div_ckpt)->required();
    dv->add_option("--ensemble", div_ensemble, "Ensemble file (defaults to ensemble.ccrl next to the checkpoint)");
    add_data_options(dv, div_data);
    dv->add_option("--out", div_out);

    // metrics
    auto* mt = app.add_subcommand("metrics", "ACC / NMI / ARI between two label files");
    std::string pred_path, truth_path, metrics_out;
    int pred_col = 0, truth_col = 0;
    mt->add_option("--pred", pred_path)->required();
    mt->add_option("--truth", truth_path)->required();
    mt->add_option("--pred-column", pred_col);
    mt->add_option("--truth-column", truth_col);
    mt->add_option("--out", metrics_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    if (gen->parsed()) {
        auto ds = generate_blobs(blob);
        save_csv(ds, gen_out);
        if (!gen_manifest.empty()) {
            const fs::path m(gen_manifest);
            const fs::path rel = fs::proximate(fs::absolute(gen_out), fs::absolute(m).parent_path());
            write_json({{"kind", "csv"},
                        {"K", blob.num_clusters},
                        {"paths", {{"csv", rel.string()}}},
                        {"label_column", -1}},
                       gen_manifest);
        }
        std::cerr << "wrote " << ds.size() << " points to " << gen_out << "\n";
        return 0;
    }

    if (tr->parsed()) {
        TrainConfig cfg = config_path.empty() ? train_config_from_json(nlohmann::json::object())
                                              : load_train_config(config_path);
        if (mode) cfg.mode = mode_from_string(*mode);
        if (epochs) cfg.epochs = *epochs;
        if (seed) cfg.seed = *seed;
        if (batch_size) cfg.batch_size = *batch_size;
        if (lr) cfg.adam.learning_rate = *lr;
        if (eval_every) cfg.eval_every = *eval_every;
        if (output_dir) cfg.output_dir = *output_dir;
        cfg.validate();
        auto data = load_data(train_data);
        const Dataset ds = data ? std::move(*data) : load_config_dataset(cfg);
        auto art = train(cfg, ds, quiet ? nullptr : &std::cerr);
        std::cout << nlohmann::json{{"acc", art.final_report.acc},
                                    {"nmi", art.final_report.nmi},
                                    {"ari", art.final_report.ari},
                                    {"steps", art.steps},
                                    {"output_dir", cfg.output_dir.string()}}
                         .dump()
                  << "\n";
        return 0;
    }

    if (ev->parsed()) {
        auto data = load_data(eval_data);
        if (!data) throw ConfigError("eval needs --dataset or --data");
        write_json(to_json(evaluate(eval_ckpt, *data)), eval_out);
        return 0;
    }

    if (dv->parsed()) {
        auto data = load_data(div_data);
        if (!data) throw ConfigError("diversity needs --dataset or --data");
        const fs::path ens_path =
            div_ensemble.empty() ? fs::path(div_ckpt).parent_path() / "ensemble.ccrl" : fs::path(div_ensemble);
        auto loaded = load_checkpoint(div_ckpt);
        const auto settings = eval_settings_from_json(loaded.extra.at("eval"));
        auto ens = load_ensemble(ens_path);
        auto outcome = evaluate_state(loaded.state, *data, settings);
        auto rec = diversity(ensemble_assignments(outcome.z, loaded.state.prototypes.value, ens, settings.tau));
        write_json(to_json(rec), div_out);
        return 0;
    }

    if (mt->parsed()) {
        const auto pred = read_labels(pred_path, pred_col);
        const auto truth = read_labels(truth_path, truth_col);
        if (pred.size() != truth.size()) {
            throw DataError("label files differ in length: " + std::to_string(pred.size()) + " vs " +
                            std::to_string(truth.size()));
        }
        write_json(to_json(make_report(pred, truth)), metrics_out);
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitData;
    } catch (const DimensionError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
