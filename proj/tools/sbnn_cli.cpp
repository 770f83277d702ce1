// Command-line front end: train -> export -> infer -> bench -> hist.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sbnn/sbnn.hpp"

namespace {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw sbnn::FormatError("cannot open " + path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

// "CxHxW" -> three ints
void parse_dims(const std::string& dims, int& c, int& h, int& w) {
    char sep1, sep2;
    std::istringstream in(dims);
    if (!(in >> c >> sep1 >> h >> sep2 >> w) || sep1 != 'x' || sep2 != 'x' ||
        c <= 0 || h <= 0 || w <= 0)
        throw sbnn::ConfigError("--dims expects CxHxW, got " + dims);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"self-binarizing network toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    auto* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("--config", config_path, "run configuration file")
        ->required()
        ->check(CLI::ExistingFile);

    std::string export_ckpt, export_out;
    bool export_alpha = false;
    auto* exp = app.add_subcommand("export", "freeze a checkpoint to a binary model");
    exp->add_option("--checkpoint", export_ckpt, "checkpoint file")
        ->required()
        ->check(CLI::ExistingFile);
    exp->add_option("--out", export_out, "output model file")->required();
    exp->add_flag("--alpha", export_alpha, "fold per-channel alpha scales into thresholds");

    std::string infer_model, infer_data, infer_format = "synthetic-blobs";
    std::string infer_out_dir = "out";
    auto* infer = app.add_subcommand("infer", "run a frozen model over a dataset");
    infer->add_option("--model", infer_model, "frozen model file")
        ->required()
        ->check(CLI::ExistingFile);
    infer->add_option("--data", infer_data, "dataset path")->required();
    infer->add_option("--format", infer_format,
                      "mnist-idx | cifar10-binary | synthetic-blobs");
    infer->add_option("--out-dir", infer_out_dir, "output directory");

    std::string bench_dims = "64x256x256";
    std::string bench_batches = "1,2,4,8,16";
    std::string bench_out_dir = "out";
    auto* bench = app.add_subcommand("bench", "time BN vs SBN vs BinaryBN");
    bench->add_option("--dims", bench_dims, "feature map CxHxW");
    bench->add_option("--batches", bench_batches, "comma-separated batch sizes");
    bench->add_option("--out-dir", bench_out_dir, "output directory");

    std::vector<std::string> hist_ckpts;
    std::string hist_out_dir = "out";
    auto* hist = app.add_subcommand("hist", "weight histograms from checkpoints");
    hist->add_option("--checkpoints", hist_ckpts, "checkpoint files")
        ->required()
        ->check(CLI::ExistingFile);
    hist->add_option("--out-dir", hist_out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            const sbnn::RunConfig config =
                sbnn::parse_config(read_text_file(config_path));
            const auto art = sbnn::cmd_train(config);
            const auto& last = art.result.metrics.back();
            std::printf("trained %d epochs: loss %.4f train_acc %.4f val_acc %.4f\n",
                        static_cast<int>(art.result.metrics.size()),
                        static_cast<double>(last.train_loss),
                        static_cast<double>(last.train_acc),
                        static_cast<double>(last.val_acc));
            std::printf("metrics: %s\ncheckpoint: %s\n", art.metrics_path.c_str(),
                        art.checkpoint_path.c_str());
        } else if (*exp) {
            const std::string out =
                sbnn::cmd_export(export_ckpt, export_out, export_alpha);
            std::printf("frozen model: %s\n", out.c_str());
        } else if (*infer) {
            const auto art = sbnn::cmd_infer(
                infer_model, infer_data,
                sbnn::dataset_format_from_string(infer_format), infer_out_dir);
            std::printf("predictions: %s\naccuracy: %.4f over %zu samples\n",
                        art.predictions_path.c_str(),
                        static_cast<double>(art.accuracy), art.count);
        } else if (*bench) {
            int c, h, w;
            parse_dims(bench_dims, c, h, w);
            std::vector<int> batches;
            std::istringstream bs(bench_batches);
            std::string tok;
            while (std::getline(bs, tok, ',')) batches.push_back(std::stoi(tok));
            const auto art = sbnn::cmd_bench(c, h, w, batches, bench_out_dir);
            std::printf("bench results: %s\n", art.bench_path.c_str());
        } else if (*hist) {
            const std::string path = sbnn::cmd_hist(hist_ckpts, hist_out_dir);
            std::printf("histograms: %s\n", path.c_str());
        }
    } catch (const sbnn::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: Internal: %s\n", e.what());
        return 1;
    }
    return 0;
}
