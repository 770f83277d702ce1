#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "sbnn/bench.hpp"
#include "sbnn/binrt.hpp"
#include "sbnn/checkpoint.hpp"
#include "sbnn/config.hpp"
#include "sbnn/dataset.hpp"
#include "sbnn/freeze.hpp"
#include "sbnn/trainer.hpp"

namespace sbnn {

namespace detail {

inline std::string csv_float(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.7g", v);
    return buf;
}

inline std::string resolve_out_dir(const std::string& configured) {
    if (const char* env = std::getenv("SBNN_OUT_DIR"); env && *env)
        return env;
    return configured;
}

inline void ensure_dir(const std::string& dir) {
    std::filesystem::create_directories(dir);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// CSV emission (fixed column orders, documented in the README)
// ---------------------------------------------------------------------------

inline std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
    std::ostringstream out;
    out << "epoch,nu,lr,train_loss,train_acc,val_acc\n";
    for (const EpochMetrics& m : rows)
        out << m.epoch << ',' << detail::csv_float(m.nu) << ','
            << detail::csv_float(m.lr) << ',' << detail::csv_float(m.train_loss)
            << ',' << detail::csv_float(m.train_acc) << ','
            << detail::csv_float(m.val_acc) << '\n';
    return out.str();
}

inline std::string histograms_csv(const std::vector<HistogramSnapshot>& rows) {
    std::ostringstream out;
    out << "layer,epoch,bin_center,pre_density,post_density\n";
    for (const HistogramSnapshot& s : rows)
        for (size_t b = 0; b < s.hist.bin_centers.size(); ++b)
            out << s.layer << ',' << s.epoch << ','
                << detail::csv_float(s.hist.bin_centers[b]) << ','
                << detail::csv_float(s.hist.pre_density[b]) << ','
                << detail::csv_float(s.hist.post_density[b]) << '\n';
    return out.str();
}

inline std::string bench_csv(const std::vector<BenchResult>& rows) {
    std::ostringstream out;
    out << "variant,batch,c,h,w,median_ns,iqr_ns,output_bytes,storage_bits\n";
    for (const BenchResult& r : rows)
        out << to_string(r.variant) << ',' << r.batch << ',' << r.c << ','
            << r.h << ',' << r.w << ',' << detail::csv_float(r.median_ns) << ','
            << detail::csv_float(r.iqr_ns) << ',' << r.output_bytes << ','
            << r.storage_bits << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArtifacts {
    std::string out_dir;
    std::string metrics_path;
    std::string histograms_path;
    std::string checkpoint_path;
    TrainResult result;
};

inline TrainArtifacts cmd_train(const RunConfig& config) {
    config.validate();
    const std::string out_dir = detail::resolve_out_dir(config.out_dir);
    detail::ensure_dir(out_dir);

    const Dataset full = load_dataset(config.dataset_path, config.dataset_format);
    Dataset train_split, val_split;
    split_dataset(full, config.val_fraction, config.seed, train_split, val_split);
    const std::vector<float> medians = train_split.channel_medians();

    ModelGraph model =
        ModelGraph::build(parse_architecture(config.arch),
                          train_split.input_shape(), config.mode, config.seed);
    if (model.num_classes() != full.num_classes)
        throw InvalidArchitecture(
            "classifier head width " + std::to_string(model.num_classes()) +
            " != dataset classes " + std::to_string(full.num_classes));

    const NuSchedule schedule(config.nu_start, config.nu_end,
                              std::max(config.epochs - 1, 0));
    TrainOptions opts;
    opts.epochs = config.epochs;
    opts.batch_size = config.batch_size;
    opts.lr0 = config.lr;
    opts.lr_decay = config.lr_decay;
    opts.seed = config.seed;
    opts.augment = config.augment;
    opts.hist_every = config.hist_every;

    auto make_checkpoint = [&](int epoch, float nu,
                               const std::vector<AdamState>& adam,
                               const ModelGraph& m) {
        Checkpoint ck;
        ck.config = config;
        ck.epoch = epoch;
        ck.nu = nu;
        ck.input_shape = train_split.input_shape();
        ck.input_medians = medians;
        ck.model = m;
        ck.adam = adam;
        return ck;
    };

    EpochHook hook;
    if (config.checkpoint_every > 0) {
        hook = [&](int epoch, float nu, const ModelGraph& m,
                   const std::vector<AdamState>& adam) {
            if ((epoch + 1) % config.checkpoint_every == 0)
                save_checkpoint(make_checkpoint(epoch, nu, adam, m),
                                out_dir + "/checkpoint_epoch" +
                                    std::to_string(epoch) + ".sbck");
        };
    }

    TrainResult result =
        train(model, train_split, val_split, schedule, opts, hook);

    TrainArtifacts art;
    art.out_dir = out_dir;
    art.metrics_path = out_dir + "/metrics.csv";
    art.histograms_path = out_dir + "/histograms.csv";
    art.checkpoint_path = out_dir + "/checkpoint.sbck";
    atomic_write_text(art.metrics_path, metrics_csv(result.metrics));
    atomic_write_text(art.histograms_path, histograms_csv(result.histograms));
    save_checkpoint(make_checkpoint(config.epochs - 1, result.final_nu,
                                    result.adam, model),
                    art.checkpoint_path);
    atomic_write_text(out_dir + "/config.txt", serialize_config(config));
    art.result = std::move(result);
    return art;
}

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------

inline std::string cmd_export(const std::string& checkpoint_path,
                              const std::string& out_path, bool alpha_flag) {
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    FreezeOptions opt;
    opt.use_alpha = alpha_flag || ck.config.use_alpha_fold;
    opt.input_mode = ck.config.input_mode;
    opt.input_medians = ck.input_medians;
    opt.nu = ck.nu;
    save_frozen(freeze_model(ck.model, opt), out_path);
    return out_path;
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

struct InferArtifacts {
    std::string predictions_path;
    float accuracy = 0.0f;
    size_t count = 0;
};

inline InferArtifacts cmd_infer(const std::string& model_path,
                                const std::string& data_path,
                                DatasetFormat format,
                                const std::string& out_dir_cfg = "out") {
    const std::string out_dir = detail::resolve_out_dir(out_dir_cfg);
    detail::ensure_dir(out_dir);
    const FrozenModel fm = load_frozen(model_path);
    const Dataset data = load_dataset(data_path, format);
    if (data.input_shape() !=
        std::vector<int>{static_cast<int>(fm.in_ch), static_cast<int>(fm.in_h),
                         static_cast<int>(fm.in_w)})
        throw FormatError("dataset shape does not match model metadata");

    std::ostringstream csv;
    csv << "image_index,argmax";
    for (uint32_t k = 0; k < fm.num_classes; ++k) csv << ",score_" << k;
    csv << '\n';

    const int c = data.images.dim(1), h = data.images.dim(2),
              w = data.images.dim(3);
    const size_t per = static_cast<size_t>(c) * h * w;
    constexpr int kChunk = 256;
    size_t correct = 0;
    for (int start = 0; start < data.count(); start += kChunk) {
        const int take = std::min(kChunk, data.count() - start);
        Tensor x({take, c, h, w});
        std::copy(data.images.data() + static_cast<size_t>(start) * per,
                  data.images.data() + static_cast<size_t>(start + take) * per,
                  x.data());
        const FrozenOutput out = run_frozen(fm, x);
        for (int i = 0; i < take; ++i) {
            csv << (start + i) << ',' << out.predictions[static_cast<size_t>(i)];
            for (uint32_t k = 0; k < fm.num_classes; ++k)
                csv << ',' << out.scores.at4(i, static_cast<int>(k), 0, 0);
            csv << '\n';
            if (out.predictions[static_cast<size_t>(i)] ==
                data.labels[static_cast<size_t>(start + i)])
                ++correct;
        }
    }

    InferArtifacts art;
    art.predictions_path = out_dir + "/predictions.csv";
    art.count = static_cast<size_t>(data.count());
    art.accuracy = data.count() ? static_cast<float>(correct) /
                                      static_cast<float>(data.count())
                                : 0.0f;
    atomic_write_text(art.predictions_path, csv.str());
    return art;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArtifacts {
    std::string bench_path;
    std::string annotations_path;
    std::vector<BenchResult> results;
};

inline BenchArtifacts cmd_bench(int c, int h, int w,
                                const std::vector<int>& batches,
                                const std::string& out_dir_cfg = "out",
                                const BenchConfig& bench_cfg = {}) {
    const std::string out_dir = detail::resolve_out_dir(out_dir_cfg);
    detail::ensure_dir(out_dir);
    std::vector<BenchResult> all;
    for (BNVariant v : {BNVariant::BN, BNVariant::SBN, BNVariant::BinaryBN}) {
        auto rows = run_bench(v, c, h, w, batches, bench_cfg);
        all.insert(all.end(), rows.begin(), rows.end());
    }
    BenchArtifacts art;
    art.bench_path = out_dir + "/bench.csv";
    art.annotations_path = out_dir + "/bench_annotations.csv";
    atomic_write_text(art.bench_path, bench_csv(all));
    std::ostringstream ann;
    ann << "arch,min_channels,max_channels\n";
    for (const ArchAnnotation& a : bench_annotations())
        ann << a.arch << ',' << a.min_channels << ',' << a.max_channels << '\n';
    atomic_write_text(art.annotations_path, ann.str());
    art.results = std::move(all);
    return art;
}

// ---------------------------------------------------------------------------
// hist
// ---------------------------------------------------------------------------

inline std::string cmd_hist(const std::vector<std::string>& checkpoint_paths,
                            const std::string& out_dir_cfg = "out") {
    const std::string out_dir = detail::resolve_out_dir(out_dir_cfg);
    detail::ensure_dir(out_dir);
    std::vector<HistogramSnapshot> rows;
    for (const std::string& path : checkpoint_paths) {
        const Checkpoint ck = load_checkpoint(path);
        for (const Layer& layer : ck.model.layers()) {
            if (const auto* cl = std::get_if<ConvLayer>(&layer)) {
                if (cl->binarize)
                    rows.push_back({cl->name, ck.epoch,
                                    histogram_snapshot(cl->cw, ck.nu)});
            } else if (const auto* dl = std::get_if<DenseLayer>(&layer)) {
                if (dl->binarize)
                    rows.push_back({dl->name, ck.epoch,
                                    histogram_snapshot(dl->cw, ck.nu)});
            }
        }
    }
    const std::string path = out_dir + "/histograms.csv";
    atomic_write_text(path, histograms_csv(rows));
    return path;
}

}  // namespace sbnn
