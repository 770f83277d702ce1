#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "sbnn/constrained_weights.hpp"
#include "sbnn/error.hpp"
#include "sbnn/layer_ops.hpp"
#include "sbnn/tensor.hpp"

namespace sbnn {

enum class LayerKind { Conv, Dense, MaxPool, BatchNorm, Activation, SoftmaxCE };

// One entry of the architecture description. Dimensions of the incoming
// tensor are inferred when the model is built.
struct LayerSpec {
    LayerKind kind;
    int out_channels = 0;  // conv / dense width
    int kernel = 0;
    int stride = 1;
    int pad = 0;
    bool binarize = true;  // per-layer opt-out for conv/dense
};

// ---------------------------------------------------------------------------
// Stateful layers
// ---------------------------------------------------------------------------

struct ConvLayer {
    ConstrainedWeights cw;
    std::string name;
    int in_ch = 0, out_ch = 0, kernel = 0, stride = 1, pad = 0;
    bool binarize = true;
    Tensor input_cache;
    Tensor grad_latent;
    bool cache_valid = false;

    int fan_in() const { return in_ch * kernel * kernel; }
};

struct DenseLayer {
    ConstrainedWeights cw;
    std::string name;
    int in_features = 0, out_features = 0;
    bool binarize = true;
    Tensor input_cache;           // flattened [N,in]
    std::vector<int> pre_flatten; // original input shape, for backward
    Tensor grad_latent;
    bool cache_valid = false;
};

struct PoolLayer {
    MaxPoolCache cache;
};

struct BatchNormLayer {
    BatchNormState state;
    BatchNormCache cache;
    std::vector<float> dgamma, dbeta;
};

struct ActivationLayer {
    Tensor input_cache;
    bool cache_valid = false;
};

struct SoftmaxLayer {
    SoftmaxCECache cache;
};

using Layer = std::variant<ConvLayer, DenseLayer, PoolLayer, BatchNormLayer,
                           ActivationLayer, SoftmaxLayer>;

// How an already-trained graph is evaluated.
enum class WeightForm {
    Trained,        // mode-dependent forward weights at the given nu
    SignOfLatent,   // B = sign(P)
    AlphaSignOfLatent,  // alpha_c * sign(P), alpha from the export rule
};

struct EvalOptions {
    float nu = 1000.0f;
    bool sign_activations = false;
    WeightForm weights = WeightForm::Trained;
};

// Alpha used when folding a trained layer: least-squares scale of the
// effective float weights onto their sharpened tanh.
inline AlphaScale export_alpha(const ConstrainedWeights& cw, float nu) {
    return alpha_optimal(cw.effective_float_weights(nu), nu);
}

namespace detail {

inline Tensor eval_weights(const ConstrainedWeights& cw, bool binarize,
                           const EvalOptions& opt) {
    if (!binarize) return cw.latent();
    switch (opt.weights) {
        case WeightForm::Trained:
            switch (cw.mode()) {
                case BinMode::Soft:
                    return scaled_tanh_forward(cw.latent(), opt.nu);
                case BinMode::HardSTE:
                    return sign_forward(cw.latent());
                case BinMode::HardSTEWithAlpha: {
                    Tensor w = sign_forward(cw.latent());
                    const AlphaScale a = export_alpha(cw, opt.nu);
                    const size_t per = w.size() / static_cast<size_t>(w.dim(0));
                    for (int c = 0; c < w.dim(0); ++c) {
                        float* p = w.data() + static_cast<size_t>(c) * per;
                        for (size_t i = 0; i < per; ++i) p[i] *= a.alpha[c];
                    }
                    return w;
                }
            }
            break;
        case WeightForm::SignOfLatent:
            return sign_forward(cw.latent());
        case WeightForm::AlphaSignOfLatent: {
            Tensor w = sign_forward(cw.latent());
            const AlphaScale a = export_alpha(cw, opt.nu);
            const size_t per = w.size() / static_cast<size_t>(w.dim(0));
            for (int c = 0; c < w.dim(0); ++c) {
                float* p = w.data() + static_cast<size_t>(c) * per;
                for (size_t i = 0; i < per; ++i) p[i] *= a.alpha[c];
            }
            return w;
        }
    }
    throw WrongMode("unknown weight form");
}

inline Tensor flatten_batch(const Tensor& x) {
    if (x.rank() == 2) return x;
    const int n = x.dim(0);
    const int f = static_cast<int>(x.size()) / n;
    return Tensor::from_data({n, f}, x.vec());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sequential model
// ---------------------------------------------------------------------------

class ModelGraph {
public:
    ModelGraph() = default;

    // input_shape is [C,H,W]; flat feature inputs use [F,1,1].
    static ModelGraph build(const std::vector<LayerSpec>& specs,
                            const std::vector<int>& input_shape, BinMode mode,
                            uint32_t seed) {
        if (input_shape.size() != 3)
            throw InvalidArchitecture("input shape must be [C,H,W]");
        validate_specs(specs);

        ModelGraph g;
        g.mode_ = mode;
        g.input_shape_ = input_shape;
        std::mt19937 rng(seed);

        int c = input_shape[0], h = input_shape[1], w = input_shape[2];
        bool flat = false;
        int conv_count = 0, dense_count = 0;
        for (const LayerSpec& spec : specs) {
            switch (spec.kind) {
                case LayerKind::Conv: {
                    if (flat)
                        throw InvalidArchitecture("conv after flattening dense");
                    ConvLayer l;
                    l.name = "conv" + std::to_string(conv_count++);
                    l.in_ch = c;
                    l.out_ch = spec.out_channels;
                    l.kernel = spec.kernel;
                    l.stride = spec.stride;
                    l.pad = spec.pad;
                    l.binarize = spec.binarize;
                    l.cw = ConstrainedWeights(
                        {l.out_ch, l.in_ch, l.kernel, l.kernel}, mode);
                    l.cw.init_uniform(rng);
                    const int ph = h + 2 * l.pad, pw = w + 2 * l.pad;
                    if (l.kernel > ph || l.kernel > pw ||
                        (ph - l.kernel) % l.stride != 0 ||
                        (pw - l.kernel) % l.stride != 0)
                        throw InvalidArchitecture("conv output extent not integral");
                    h = (ph - l.kernel) / l.stride + 1;
                    w = (pw - l.kernel) / l.stride + 1;
                    c = l.out_ch;
                    g.layers_.emplace_back(std::move(l));
                    break;
                }
                case LayerKind::Dense: {
                    DenseLayer l;
                    l.name = "dense" + std::to_string(dense_count++);
                    l.in_features = flat ? c : c * h * w;
                    l.out_features = spec.out_channels;
                    l.binarize = spec.binarize;
                    l.cw = ConstrainedWeights({l.out_features, l.in_features},
                                              mode);
                    l.cw.init_uniform(rng);
                    c = l.out_features;
                    h = w = 1;
                    flat = true;
                    g.layers_.emplace_back(std::move(l));
                    break;
                }
                case LayerKind::MaxPool:
                    if (flat || h < 2 || w < 2)
                        throw InvalidArchitecture("maxpool needs a >=2x2 map");
                    h /= 2;
                    w /= 2;
                    g.layers_.emplace_back(PoolLayer{});
                    break;
                case LayerKind::BatchNorm: {
                    BatchNormLayer l;
                    l.state = BatchNormState(c);
                    g.layers_.emplace_back(std::move(l));
                    break;
                }
                case LayerKind::Activation:
                    g.layers_.emplace_back(ActivationLayer{});
                    break;
                case LayerKind::SoftmaxCE:
                    g.layers_.emplace_back(SoftmaxLayer{});
                    break;
            }
        }
        g.num_classes_ = c;
        g.refresh_weights_all(1.0f);
        return g;
    }

    // Enforces the block structure the freezing path relies on: every
    // conv/dense (except the classifier head) is followed, possibly after
    // pooling, by batch norm and then an activation; softmax-CE terminates
    // the graph and nothing else may appear after the head.
    static void validate_specs(const std::vector<LayerSpec>& specs) {
        if (specs.size() < 2) throw InvalidArchitecture("too few layers");
        if (specs.back().kind != LayerKind::SoftmaxCE)
            throw InvalidArchitecture("model must end with softmax-ce");
        for (size_t i = 0; i + 1 < specs.size(); ++i)
            if (specs[i].kind == LayerKind::SoftmaxCE)
                throw InvalidArchitecture("softmax-ce before the end");
        if (specs[specs.size() - 2].kind != LayerKind::Dense)
            throw InvalidArchitecture("classifier head must be dense");

        for (size_t i = 0; i + 2 < specs.size(); ++i) {
            const LayerKind k = specs[i].kind;
            if (k != LayerKind::Conv && k != LayerKind::Dense) continue;
            size_t j = i + 1;
            if (k == LayerKind::Conv && j < specs.size() &&
                specs[j].kind == LayerKind::MaxPool)
                ++j;
            if (j + 1 >= specs.size() || specs[j].kind != LayerKind::BatchNorm ||
                specs[j + 1].kind != LayerKind::Activation)
                throw InvalidArchitecture(
                    "conv/dense must be followed by batchnorm and an activation");
        }
        for (size_t i = 0; i < specs.size(); ++i) {
            if (specs[i].kind == LayerKind::MaxPool &&
                (i == 0 || specs[i - 1].kind != LayerKind::Conv))
                throw InvalidArchitecture("maxpool must follow a conv");
            if (specs[i].kind == LayerKind::Activation &&
                (i == 0 || specs[i - 1].kind != LayerKind::BatchNorm))
                throw InvalidArchitecture("activation must follow batchnorm");
        }
        if (specs.front().kind != LayerKind::Conv &&
            specs.front().kind != LayerKind::Dense)
            throw InvalidArchitecture("model must start with conv or dense");
    }

    BinMode mode() const { return mode_; }
    int num_classes() const { return num_classes_; }
    const std::vector<int>& input_shape() const { return input_shape_; }
    std::vector<Layer>& layers() { return layers_; }
    const std::vector<Layer>& layers() const { return layers_; }

    void refresh_weights_all(float nu) {
        for (Layer& layer : layers_) {
            if (auto* cl = std::get_if<ConvLayer>(&layer)) cl->cw.refresh(nu);
            if (auto* dl = std::get_if<DenseLayer>(&layer)) dl->cw.refresh(nu);
        }
        current_nu_ = nu;
    }

    struct ForwardResult {
        float loss = 0.0f;
        Tensor logits;
    };

    // Training-mode pass; fills every layer cache for a subsequent backward().
    ForwardResult forward_train(const Tensor& input,
                                const std::vector<int>& labels, float nu) {
        current_nu_ = nu;
        Tensor x = input;
        ForwardResult r;
        for (Layer& layer : layers_) {
            if (auto* cl = std::get_if<ConvLayer>(&layer)) {
                cl->input_cache = x;
                cl->cache_valid = true;
                const Tensor& w =
                    cl->binarize ? cl->cw.forward_weights() : cl->cw.latent();
                x = conv2d(x, w, cl->stride, cl->pad);
            } else if (auto* dl = std::get_if<DenseLayer>(&layer)) {
                dl->pre_flatten = x.shape();
                Tensor xf = detail::flatten_batch(x);
                dl->input_cache = xf;
                dl->cache_valid = true;
                const Tensor& w =
                    dl->binarize ? dl->cw.forward_weights() : dl->cw.latent();
                x = dense_forward(xf, w);
            } else if (auto* pl = std::get_if<PoolLayer>(&layer)) {
                x = maxpool2x2_forward(x, &pl->cache);
            } else if (auto* bl = std::get_if<BatchNormLayer>(&layer)) {
                x = batchnorm_forward_train(x, bl->state, &bl->cache);
            } else if (auto* al = std::get_if<ActivationLayer>(&layer)) {
                al->input_cache = x;
                al->cache_valid = true;
                x = mode_ == BinMode::Soft ? scaled_tanh_forward(x, nu)
                                           : sign_forward(x);
            } else if (auto* sl = std::get_if<SoftmaxLayer>(&layer)) {
                r.logits = x;
                r.loss = softmax_ce_forward(x, labels, &sl->cache);
            }
        }
        return r;
    }

    // Backpropagates through the cached minibatch, leaving parameter
    // gradients in each layer (grad_latent, dgamma/dbeta).
    void backward() {
        Tensor up;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
            Layer& layer = *it;
            if (auto* sl = std::get_if<SoftmaxLayer>(&layer)) {
                up = softmax_ce_backward(sl->cache);
                sl->cache.valid = false;
            } else if (auto* al = std::get_if<ActivationLayer>(&layer)) {
                if (!al->cache_valid) throw StaleCache("activation backward");
                up = mode_ == BinMode::Soft
                         ? scaled_tanh_backward(al->input_cache, current_nu_, up)
                         : ste_backward(al->input_cache, up);
                al->cache_valid = false;
            } else if (auto* bl = std::get_if<BatchNormLayer>(&layer)) {
                up = batchnorm_backward(up, bl->state, bl->cache, bl->dgamma,
                                        bl->dbeta);
                bl->cache.valid = false;
            } else if (auto* pl = std::get_if<PoolLayer>(&layer)) {
                up = maxpool2x2_backward(up, pl->cache);
                pl->cache.valid = false;
            } else if (auto* dl = std::get_if<DenseLayer>(&layer)) {
                if (!dl->cache_valid) throw StaleCache("dense backward");
                const Tensor& w =
                    dl->binarize ? dl->cw.forward_weights() : dl->cw.latent();
                Tensor dx, dw;
                dense_backward(dl->input_cache, w, up, dx, dw);
                dl->grad_latent = dl->binarize ? dl->cw.grad_latent(dw) : dw;
                up = Tensor::from_data(dl->pre_flatten, dx.vec());
                dl->cache_valid = false;
            } else if (auto* cl = std::get_if<ConvLayer>(&layer)) {
                if (!cl->cache_valid) throw StaleCache("conv backward");
                const Tensor& w =
                    cl->binarize ? cl->cw.forward_weights() : cl->cw.latent();
                Tensor dx, dw;
                conv2d_backward(cl->input_cache, w, cl->stride, cl->pad, up, dx,
                                dw);
                cl->grad_latent = cl->binarize ? cl->cw.grad_latent(dw) : dw;
                up = std::move(dx);
                cl->cache_valid = false;
            }
        }
    }

    // Inference pass with running BN statistics; does not touch caches.
    Tensor forward_eval(const Tensor& input, const EvalOptions& opt) const {
        Tensor x = input;
        for (const Layer& layer : layers_) {
            if (const auto* cl = std::get_if<ConvLayer>(&layer)) {
                x = conv2d(x, detail::eval_weights(cl->cw, cl->binarize, opt),
                           cl->stride, cl->pad);
            } else if (const auto* dl = std::get_if<DenseLayer>(&layer)) {
                x = dense_forward(detail::flatten_batch(x),
                                  detail::eval_weights(dl->cw, dl->binarize, opt));
            } else if (std::get_if<PoolLayer>(&layer)) {
                x = maxpool2x2_forward(x);
            } else if (const auto* bl = std::get_if<BatchNormLayer>(&layer)) {
                x = batchnorm_forward_infer(x, bl->state);
            } else if (std::get_if<ActivationLayer>(&layer)) {
                x = opt.sign_activations || mode_ != BinMode::Soft
                        ? sign_forward(x)
                        : scaled_tanh_forward(x, opt.nu);
            }
            // softmax layer: logits pass through, argmax unchanged
        }
        return x;
    }

    float current_nu() const { return current_nu_; }

private:
    std::vector<Layer> layers_;
    std::vector<int> input_shape_;
    BinMode mode_ = BinMode::Soft;
    int num_classes_ = 0;
    float current_nu_ = 1.0f;
};

// ---------------------------------------------------------------------------
// Architecture string parsing
// ---------------------------------------------------------------------------

// Grammar (whitespace-separated tokens):
//   conv(out,k,stride,pad[,fp])  dense(out[,fp])  pool  bn  act  softmax
inline std::vector<LayerSpec> parse_architecture(const std::string& text) {
    std::vector<LayerSpec> specs;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) {
        LayerSpec s{};
        auto args_of = [&tok](const std::string& head) {
            std::vector<std::string> args;
            if (tok.size() < head.size() + 2 || tok.back() != ')')
                throw ConfigError("malformed layer token: " + tok);
            std::string body = tok.substr(head.size() + 1,
                                          tok.size() - head.size() - 2);
            std::istringstream bs(body);
            std::string a;
            while (std::getline(bs, a, ',')) args.push_back(a);
            return args;
        };
        if (tok.rfind("conv(", 0) == 0) {
            auto args = args_of("conv");
            if (args.size() < 4) throw ConfigError("conv needs (out,k,stride,pad)");
            s.kind = LayerKind::Conv;
            s.out_channels = std::stoi(args[0]);
            s.kernel = std::stoi(args[1]);
            s.stride = std::stoi(args[2]);
            s.pad = std::stoi(args[3]);
            if (args.size() > 4) {
                if (args[4] != "fp") throw ConfigError("unknown conv flag " + args[4]);
                s.binarize = false;
            }
        } else if (tok.rfind("dense(", 0) == 0) {
            auto args = args_of("dense");
            if (args.empty()) throw ConfigError("dense needs (out)");
            s.kind = LayerKind::Dense;
            s.out_channels = std::stoi(args[0]);
            if (args.size() > 1) {
                if (args[1] != "fp") throw ConfigError("unknown dense flag " + args[1]);
                s.binarize = false;
            }
        } else if (tok == "pool") {
            s.kind = LayerKind::MaxPool;
        } else if (tok == "bn") {
            s.kind = LayerKind::BatchNorm;
        } else if (tok == "act") {
            s.kind = LayerKind::Activation;
        } else if (tok == "softmax") {
            s.kind = LayerKind::SoftmaxCE;
        } else {
            throw ConfigError("unknown layer token: " + tok);
        }
        specs.push_back(s);
    }
    return specs;
}

inline std::string architecture_string(const std::vector<LayerSpec>& specs) {
    std::string out;
    for (const LayerSpec& s : specs) {
        if (!out.empty()) out += ' ';
        switch (s.kind) {
            case LayerKind::Conv:
                out += "conv(" + std::to_string(s.out_channels) + "," +
                       std::to_string(s.kernel) + "," + std::to_string(s.stride) +
                       "," + std::to_string(s.pad) + (s.binarize ? "" : ",fp") +
                       ")";
                break;
            case LayerKind::Dense:
                out += "dense(" + std::to_string(s.out_channels) +
                       (s.binarize ? "" : ",fp") + ")";
                break;
            case LayerKind::MaxPool: out += "pool"; break;
            case LayerKind::BatchNorm: out += "bn"; break;
            case LayerKind::Activation: out += "act"; break;
            case LayerKind::SoftmaxCE: out += "softmax"; break;
        }
    }
    return out;
}

inline int argmax_row(const Tensor& logits, int row) {
    const int k = logits.dim(1);
    int best = 0;
    for (int j = 1; j < k; ++j)
        if (logits.at2(row, j) > logits.at2(row, best)) best = j;
    return best;
}

inline float accuracy(const Tensor& logits, const std::vector<int>& labels) {
    int correct = 0;
    for (int n = 0; n < logits.dim(0); ++n)
        if (argmax_row(logits, n) == labels[static_cast<size_t>(n)]) ++correct;
    return static_cast<float>(correct) / static_cast<float>(logits.dim(0));
}

}  // namespace sbnn
