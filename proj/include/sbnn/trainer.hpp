#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sbnn/adam.hpp"
#include "sbnn/dataset.hpp"
#include "sbnn/histogram.hpp"
#include "sbnn/model.hpp"
#include "sbnn/schedule.hpp"

namespace sbnn {

struct TrainOptions {
    int epochs = 30;
    int batch_size = 128;
    float lr0 = 1e-3f;
    float lr_decay = 0.95f;
    uint32_t seed = 1;
    bool augment = false;
    int hist_every = 0;  // 0: snapshot only the first and last epoch
};

struct EpochMetrics {
    int epoch = 0;
    float nu = 0.0f;
    float lr = 0.0f;
    float train_loss = 0.0f;
    float train_acc = 0.0f;
    float val_acc = 0.0f;
};

struct HistogramSnapshot {
    std::string layer;
    int epoch = 0;
    HistogramPair hist;
};

struct TrainResult {
    std::vector<EpochMetrics> metrics;
    std::vector<HistogramSnapshot> histograms;
    float final_nu = 1.0f;
    // Optimizer state in canonical slot order (conv/dense latent, then BN
    // gamma and beta per batch-norm layer), for checkpointing.
    std::vector<AdamState> adam;
};

// Batched inference accuracy with running BN statistics.
inline float evaluate(const ModelGraph& model, const Dataset& data,
                      const EvalOptions& opt, int batch_size = 256) {
    if (data.count() == 0) return 0.0f;
    int correct = 0;
    const int c = data.images.dim(1), h = data.images.dim(2),
              w = data.images.dim(3);
    const size_t per = static_cast<size_t>(c) * h * w;
    for (int start = 0; start < data.count(); start += batch_size) {
        const int take = std::min(batch_size, data.count() - start);
        Tensor x({take, c, h, w});
        std::copy(data.images.data() + static_cast<size_t>(start) * per,
                  data.images.data() + static_cast<size_t>(start + take) * per,
                  x.data());
        const Tensor logits = model.forward_eval(x, opt);
        for (int i = 0; i < take; ++i)
            if (argmax_row(logits, i) == data.labels[static_cast<size_t>(start + i)])
                ++correct;
    }
    return static_cast<float>(correct) / static_cast<float>(data.count());
}

// Epoch hook arguments: completed epoch, its nu, the model, and the
// optimizer state in canonical slot order.
using EpochHook = std::function<void(int, float, const ModelGraph&,
                                     const std::vector<AdamState>&)>;

// One self-binarizing training run: per epoch, advance nu, refresh the
// constrained weights, run an Adam minibatch epoch, and log metrics.
inline TrainResult train(ModelGraph& model, const Dataset& train_data,
                         const Dataset& val_data, const NuSchedule& schedule,
                         const TrainOptions& opts,
                         const EpochHook& epoch_hook = {}) {
    if (train_data.count() == 0) throw DegenerateBatch("empty training set");

    // One optimizer slot per parameter tensor, in layer order.
    struct ParamSlot {
        bool is_bn_gamma = false, is_bn_beta = false;
        size_t layer_index = 0;
    };
    std::vector<ParamSlot> slots;
    std::vector<AdamState> adam;
    for (size_t li = 0; li < model.layers().size(); ++li) {
        Layer& layer = model.layers()[li];
        if (auto* cl = std::get_if<ConvLayer>(&layer)) {
            adam.emplace_back(cl->cw.latent().shape(), opts.lr0, opts.lr_decay);
            slots.push_back({false, false, li});
        } else if (auto* dl = std::get_if<DenseLayer>(&layer)) {
            adam.emplace_back(dl->cw.latent().shape(), opts.lr0, opts.lr_decay);
            slots.push_back({false, false, li});
        } else if (auto* bl = std::get_if<BatchNormLayer>(&layer)) {
            const int c = bl->state.channels();
            adam.emplace_back(std::vector<int>{c}, opts.lr0, opts.lr_decay);
            slots.push_back({true, false, li});
            adam.emplace_back(std::vector<int>{c}, opts.lr0, opts.lr_decay);
            slots.push_back({false, true, li});
        }
    }

    DatasetStream stream(train_data, opts.batch_size, opts.augment);
    TrainResult result;

    auto snapshot_histograms = [&](int epoch, float nu) {
        for (const Layer& layer : model.layers()) {
            if (const auto* cl = std::get_if<ConvLayer>(&layer)) {
                if (cl->binarize)
                    result.histograms.push_back(
                        {cl->name, epoch, histogram_snapshot(cl->cw, nu)});
            } else if (const auto* dl = std::get_if<DenseLayer>(&layer)) {
                if (dl->binarize)
                    result.histograms.push_back(
                        {dl->name, epoch, histogram_snapshot(dl->cw, nu)});
            }
        }
    };

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        const float nu = nu_at(schedule, std::min(epoch, schedule.total_epochs));
        model.refresh_weights_all(nu);
        stream.start_epoch((static_cast<uint64_t>(opts.seed) << 20) ^
                           static_cast<uint64_t>(epoch));

        double loss_sum = 0.0;
        size_t seen = 0;
        int correct = 0, batch_index = 0;
        Batch batch;
        while (stream.next(batch)) {
            auto fr = model.forward_train(batch.images, batch.labels, nu);
            if (!std::isfinite(fr.loss))
                throw NonFiniteLoss("loss became non-finite at epoch " +
                                    std::to_string(epoch) + " batch " +
                                    std::to_string(batch_index));
            model.backward();

            for (size_t si = 0; si < slots.size(); ++si) {
                Layer& layer = model.layers()[slots[si].layer_index];
                AdamState& state = adam[si];
                if (auto* cl = std::get_if<ConvLayer>(&layer)) {
                    adam_step(state, cl->cw.latent(), cl->grad_latent, epoch);
                    cl->cw.clip_latent();
                    cl->cw.refresh(nu);
                } else if (auto* dl = std::get_if<DenseLayer>(&layer)) {
                    adam_step(state, dl->cw.latent(), dl->grad_latent, epoch);
                    dl->cw.clip_latent();
                    dl->cw.refresh(nu);
                } else if (auto* bl = std::get_if<BatchNormLayer>(&layer)) {
                    if (slots[si].is_bn_gamma)
                        adam_step(state, bl->state.gamma, bl->dgamma, epoch);
                    else
                        adam_step(state, bl->state.beta, bl->dbeta, epoch);
                }
            }

            const size_t n = batch.labels.size();
            loss_sum += static_cast<double>(fr.loss) * static_cast<double>(n);
            for (int i = 0; i < static_cast<int>(n); ++i)
                if (argmax_row(fr.logits, i) == batch.labels[static_cast<size_t>(i)])
                    ++correct;
            seen += n;
            ++batch_index;
        }

        EpochMetrics m;
        m.epoch = epoch;
        m.nu = nu;
        m.lr = opts.lr0 * static_cast<float>(
                              std::pow(static_cast<double>(opts.lr_decay), epoch));
        m.train_loss = static_cast<float>(loss_sum / static_cast<double>(seen));
        m.train_acc = static_cast<float>(correct) / static_cast<float>(seen);
        EvalOptions eval_opt;
        eval_opt.nu = nu;
        m.val_acc = evaluate(model, val_data, eval_opt);
        result.metrics.push_back(m);

        const bool last = epoch == opts.epochs - 1;
        if (epoch == 0 || last ||
            (opts.hist_every > 0 && epoch % opts.hist_every == 0))
            snapshot_histograms(epoch, nu);
        if (epoch_hook) epoch_hook(epoch, nu, model, adam);
        result.final_nu = nu;
    }
    result.adam = std::move(adam);
    return result;
}

}  // namespace sbnn
