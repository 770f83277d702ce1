// End-to-end coverage of the convolutional path: train a small CNN on a
// synthetic image task, freeze it, and run the packed integer pipeline.

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "sbnn/binrt.hpp"
#include "sbnn/freeze.hpp"
#include "sbnn/trainer.hpp"

using namespace sbnn;

namespace {

// Two-class 1x8x8 images: a bright 4x4 block in the top-left (class 0) or
// bottom-right (class 1) corner over a dark background, plus noise.
Dataset block_images(uint32_t seed, int n) {
    std::mt19937 rng(seed);
    std::normal_distribution<float> noise(0.0f, 0.25f);
    std::uniform_int_distribution<int> cls(0, 1);
    Dataset ds;
    ds.num_classes = 2;
    ds.images = Tensor({n, 1, 8, 8});
    ds.labels.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int c = cls(rng);
        ds.labels[static_cast<size_t>(i)] = c;
        for (int h = 0; h < 8; ++h)
            for (int w = 0; w < 8; ++w) {
                const bool bright = c == 0 ? (h < 4 && w < 4) : (h >= 4 && w >= 4);
                const float v = (bright ? 0.7f : -0.7f) + noise(rng);
                ds.images.at4(i, 0, h, w) = std::clamp(v, -1.0f, 1.0f);
            }
    }
    return ds;
}

}  // namespace

TEST_CASE("CNN: train, freeze, and run the integer pipeline") {
    const Dataset full = block_images(11, 400);
    Dataset train_set, val_set;
    split_dataset(full, 0.2f, 2, train_set, val_set);

    ModelGraph model = ModelGraph::build(
        parse_architecture("conv(4,3,1,0) pool bn act dense(2) softmax"),
        train_set.input_shape(), BinMode::Soft, 3);
    TrainOptions opts;
    opts.epochs = 15;
    opts.batch_size = 32;
    opts.seed = 3;
    const NuSchedule schedule(1.0f, 1000.0f, opts.epochs - 1);
    const TrainResult result =
        train(model, train_set, val_set, schedule, opts);
    REQUIRE(result.metrics.back().train_acc >= 0.9f);

    // Float graph with sign activations is the reference.
    EvalOptions sign_eval;
    sign_eval.nu = 1000.0f;
    sign_eval.sign_activations = true;
    const Tensor ref = model.forward_eval(val_set.images, sign_eval);
    int ref_correct = 0;
    for (int i = 0; i < val_set.count(); ++i)
        if (argmax_row(ref, i) == val_set.labels[static_cast<size_t>(i)])
            ++ref_correct;
    REQUIRE(static_cast<float>(ref_correct) / val_set.count() >= 0.9f);

    // Int8 first layer: thresholds were scaled into the q7 domain.
    FreezeOptions int8_opt;
    int8_opt.input_mode = InputMode::Int8;
    int8_opt.nu = result.final_nu;
    const FrozenModel fm = freeze_model(model, int8_opt);
    const FrozenOutput frozen = run_frozen(fm, val_set.images);
    int agree = 0, frozen_correct = 0;
    for (int i = 0; i < val_set.count(); ++i) {
        if (frozen.predictions[static_cast<size_t>(i)] == argmax_row(ref, i))
            ++agree;
        if (frozen.predictions[static_cast<size_t>(i)] ==
            val_set.labels[static_cast<size_t>(i)])
            ++frozen_correct;
    }
    REQUIRE(static_cast<float>(agree) / val_set.count() >= 0.95f);
    REQUIRE(static_cast<float>(frozen_correct) / val_set.count() >= 0.9f);

    // Median-binarized inputs also run end to end; on this high-contrast
    // task the thresholded images still carry the class.
    FreezeOptions med_opt;
    med_opt.input_mode = InputMode::MedianBinarize;
    med_opt.input_medians = train_set.channel_medians();
    med_opt.nu = result.final_nu;
    const FrozenModel fmed = freeze_model(model, med_opt);
    const FrozenOutput med_out = run_frozen(fmed, val_set.images);
    int med_correct = 0;
    for (int i = 0; i < val_set.count(); ++i)
        if (med_out.predictions[static_cast<size_t>(i)] ==
            val_set.labels[static_cast<size_t>(i)])
            ++med_correct;
    REQUIRE(static_cast<float>(med_correct) / val_set.count() >= 0.8f);

    // Frozen file round-trips and reproduces identical predictions.
    const FrozenModel back = deserialize_frozen(serialize_frozen(fm));
    const FrozenOutput again = run_frozen(back, val_set.images);
    REQUIRE(again.predictions == frozen.predictions);
}
