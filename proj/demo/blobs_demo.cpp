// Minimal end-to-end walkthrough: train a small MLP on the synthetic blob
// task with the scaled-tanh schedule, freeze it to a fully binary model,
// and compare float vs integer inference.

#include <cstdio>

#include "sbnn/sbnn.hpp"

int main() {
    using namespace sbnn;

    const Dataset full = make_blobs(/*seed=*/7, /*n=*/1000);
    Dataset train_set, val_set;
    split_dataset(full, 0.2f, /*seed=*/1, train_set, val_set);

    ModelGraph model = ModelGraph::build(
        parse_architecture("dense(16) bn act dense(16) bn act dense(2) softmax"),
        train_set.input_shape(), BinMode::Soft, /*seed=*/1);

    TrainOptions opts;
    opts.epochs = 30;
    opts.batch_size = 64;
    const NuSchedule schedule(1.0f, 1000.0f, opts.epochs - 1);
    const TrainResult result = train(model, train_set, val_set, schedule, opts);
    std::printf("final epoch: nu=%.0f train_acc=%.3f val_acc=%.3f\n",
                static_cast<double>(result.final_nu),
                static_cast<double>(result.metrics.back().train_acc),
                static_cast<double>(result.metrics.back().val_acc));

    EvalOptions sign_eval;
    sign_eval.sign_activations = true;
    std::printf("float graph, sign activations: val_acc=%.3f\n",
                static_cast<double>(evaluate(model, val_set, sign_eval)));

    FreezeOptions fopt;
    fopt.input_mode = InputMode::Int8;
    fopt.nu = result.final_nu;
    const FrozenModel frozen = freeze_model(model, fopt);
    const FrozenOutput out = run_frozen(frozen, val_set.images);
    int correct = 0;
    for (size_t i = 0; i < out.predictions.size(); ++i)
        if (out.predictions[i] == val_set.labels[i]) ++correct;
    std::printf("frozen binary model:          val_acc=%.3f\n",
                static_cast<double>(correct) / static_cast<double>(val_set.count()));
    return 0;
}
