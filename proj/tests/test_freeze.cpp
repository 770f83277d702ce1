#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "sbnn/binrt.hpp"
#include "sbnn/freeze.hpp"
#include "sbnn/model.hpp"

using namespace sbnn;

namespace {

BatchNormState state_with(std::vector<float> mu, std::vector<float> sigma,
                          std::vector<float> gamma, std::vector<float> beta) {
    BatchNormState st(static_cast<int>(mu.size()));
    st.running_mean = std::move(mu);
    st.gamma = std::move(gamma);
    st.beta = std::move(beta);
    for (size_t i = 0; i < sigma.size(); ++i)
        st.running_var[i] = sigma[i] * sigma[i] - st.epsilon;
    return st;
}

}  // namespace

TEST_CASE("fold_bn: identity normalization reduces to plain sign") {
    const BatchNormState st = state_with({0}, {1}, {1}, {0});
    const BinaryBNThresholds th = fold_bn(st);
    REQUIRE(th.T[0] == Catch::Approx(0.0).margin(1e-6));
    REQUIRE(th.gamma_sign[0] == 1);
    REQUIRE(th.gamma_zero[0] == 0);
}

TEST_CASE("fold_bn hand case and grid cross-check with negative gamma") {
    const BatchNormState st = state_with({2}, {3}, {-0.5f}, {1});
    const BinaryBNThresholds th = fold_bn(st);
    REQUIRE(th.T[0] == Catch::Approx(8.0).margin(1e-5));
    REQUIRE(th.gamma_sign[0] == 0);

    for (float i = -20.0f; i <= 20.0f; i += 0.37f) {
        const double bn = (static_cast<double>(i) - 2.0) / st.sigma_r(0) *
                              (-0.5) + 1.0;
        const bool want = bn > 0.0;
        const bool got = (static_cast<double>(i) > th.T[0]) ==
                         (th.gamma_sign[0] != 0);
        REQUIRE(got == want);
    }
}

TEST_CASE("fold_bn gamma = 0 becomes a constant-channel mask") {
    const BatchNormState st = state_with({1, 1}, {2, 2}, {0, 0}, {0.7f, -0.1f});
    const BinaryBNThresholds th = fold_bn(st);
    REQUIRE(th.gamma_zero[0] == 1);
    REQUIRE(th.beta_pos[0] == 1);   // beta > 0: always fire
    REQUIRE(th.gamma_zero[1] == 1);
    REQUIRE(th.beta_pos[1] == 0);   // beta <= 0: never fire
}

TEST_CASE("fold exactness: XNOR(I > T, gamma > 0) == (BN(I) > 0)") {
    std::mt19937 rng(1);
    std::uniform_real_distribution<double> mu(-5, 5), sg(0.1, 5), gm(-5, 5),
        bt(-5, 5), in(-20, 20);
    int mismatches = 0;
    for (int trial = 0; trial < 20000; ++trial) {
        double gamma = gm(rng);
        if (gamma == 0.0) gamma = 1.0;
        const double m = mu(rng), s = sg(rng), b = bt(rng), I = in(rng);
        const double T = m - s * b / gamma;
        const bool fold = (I > T) == (gamma > 0);
        const bool exact = ((I - m) / s * gamma + b) > 0;
        if (fold != exact) ++mismatches;
    }
    REQUIRE(mismatches == 0);
}

TEST_CASE("apply_alpha divides thresholds and preserves the comparison") {
    BinaryBNThresholds th;
    th.T = {8.0f, -3.0f};
    th.gamma_sign = {1, 0};
    th.gamma_zero = {0, 0};
    th.beta_pos = {0, 0};
    AlphaScale a;
    a.alpha = {2.0f, 1.0f};
    a.degenerate = {0, 0};
    const BinaryBNThresholds out = apply_alpha(th, a);
    REQUIRE(out.T[0] == Catch::Approx(4.0));
    REQUIRE(out.T[1] == Catch::Approx(-3.0));
    REQUIRE(out.gamma_sign[0] == 1);

    AlphaScale bad;
    bad.alpha = {0.0f, 1.0f};
    bad.degenerate = {0, 0};
    REQUIRE_THROWS_AS(apply_alpha(th, bad), NonPositiveAlpha);

    // Grid equivalence: XNOR(alpha*I > T, g) == XNOR(I > T/alpha, g).
    std::mt19937 rng(2);
    std::uniform_real_distribution<double> d(-10, 10), ap(0.05, 4.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const double I = d(rng), T = d(rng), alpha = ap(rng);
        const bool g = d(rng) > 0;
        const bool lhs = (alpha * I > T) == g;
        const bool rhs = (I > T / alpha) == g;
        REQUIRE(lhs == rhs);
    }
}

TEST_CASE("threshold quantization: zero, floor semantics, scale growth") {
    auto simple = [](std::vector<float> T, int k) {
        BinaryBNThresholds th;
        th.T = std::move(T);
        th.gamma_sign.assign(th.T.size(), 1);
        th.gamma_zero.assign(th.T.size(), 0);
        th.beta_pos.assign(th.T.size(), 0);
        return quantize_thresholds(th, k);
    };

    const QuantizedThresholds z = simple({0.0f}, 16);
    REQUIRE(z.t_q[0] == 0);
    REQUIRE(z.scale_exp == 0);

    const QuantizedThresholds q83 = simple({8.3f}, 25);
    REQUIRE(q83.scale_exp == 0);
    REQUIRE(q83.t_q[0] == 8);
    for (int i = -25; i <= 25; ++i)
        REQUIRE((i > 8.3) == (static_cast<int64_t>(i) > q83.threshold(0)));

    const QuantizedThresholds q300 = simple({300.0f}, 1000);
    REQUIRE(q300.scale_exp == 2);
    REQUIRE(q300.t_q[0] == 75);
    REQUIRE(q300.threshold(0) == 300);
    for (int i = -1000; i <= 1000; ++i)
        REQUIRE((i > 300.0) == (static_cast<int64_t>(i) > q300.threshold(0)));
}

TEST_CASE("s = 0 quantization is exact over the whole integer domain") {
    std::mt19937 rng(3);
    std::uniform_real_distribution<float> d(-120.0f, 120.0f);
    for (int trial = 0; trial < 30; ++trial) {
        const int k = 512;
        BinaryBNThresholds th;
        th.T = {d(rng), d(rng), d(rng)};
        th.gamma_sign = {1, 0, 1};
        th.gamma_zero = {0, 0, 0};
        th.beta_pos = {0, 0, 0};
        const QuantizedThresholds q = quantize_thresholds(th, k);
        REQUIRE(q.scale_exp == 0);
        for (int c = 0; c < 3; ++c)
            for (int i = -k; i <= k; ++i)
                REQUIRE((i > static_cast<double>(th.T[static_cast<size_t>(c)])) ==
                        (static_cast<int64_t>(i) > q.threshold(c)));
    }
}

TEST_CASE("thresholds beyond the reachable range stay constant channels") {
    BinaryBNThresholds th;
    th.T = {600.0f, -600.0f, 100.0f};
    th.gamma_sign = {1, 1, 1};
    th.gamma_zero = {0, 0, 0};
    th.beta_pos = {0, 0, 0};
    const int k = 512;
    const QuantizedThresholds q = quantize_thresholds(th, k);
    for (int i = -k; i <= k; ++i) {
        REQUIRE_FALSE(static_cast<int64_t>(i) > q.threshold(0));  // never
        REQUIRE(static_cast<int64_t>(i) > q.threshold(1));        // always
    }
}

TEST_CASE("freeze_weights bit pattern") {
    const BitTensor b = freeze_weights(Tensor::from_data({3}, {0.3f, -0.2f, 0.0f}));
    REQUIRE(b.get(0, 0) == true);
    REQUIRE(b.get(0, 1) == false);
    REQUIRE(b.get(0, 2) == false);
}

namespace {

ModelGraph tiny_cnn(BinMode mode = BinMode::Soft) {
    return ModelGraph::build(
        parse_architecture("conv(4,3,1,0) pool bn act dense(2) softmax"),
        {1, 8, 8}, mode, 17);
}

}  // namespace

TEST_CASE("freeze_model emits conv/pool/threshold/dense records in order") {
    ModelGraph m = tiny_cnn();
    m.refresh_weights_all(1000.0f);
    FreezeOptions opt;
    opt.input_mode = InputMode::Int8;
    const FrozenModel fm = freeze_model(m, opt);
    REQUIRE(fm.layers.size() == 4);
    REQUIRE(std::holds_alternative<FrozenConv>(fm.layers[0]));
    REQUIRE(std::holds_alternative<FrozenPool>(fm.layers[1]));
    REQUIRE(std::holds_alternative<FrozenThresholdAct>(fm.layers[2]));
    REQUIRE(std::holds_alternative<FrozenDense>(fm.layers[3]));
    REQUIRE(fm.num_classes == 2);

    const auto& conv = std::get<FrozenConv>(fm.layers[0]);
    REQUIRE(conv.out_ch == 4);
    REQUIRE(conv.weights.dim(1) == 9);

    // First layer runs on q7 inputs: thresholds were scaled by 127 and
    // quantized against fan_in*127.
    const auto& th = std::get<FrozenThresholdAct>(fm.layers[2]);
    REQUIRE(th.th.channels() == 4);
}

TEST_CASE("freeze_model rejects opted-out layers and needs medians in median mode") {
    ModelGraph m = ModelGraph::build(
        parse_architecture("dense(8,fp) bn act dense(2) softmax"), {2, 1, 1},
        BinMode::Soft, 3);
    m.refresh_weights_all(1000.0f);
    FreezeOptions opt;
    REQUIRE_THROWS_AS(freeze_model(m, opt), UnfoldableLayer);

    ModelGraph ok = tiny_cnn();
    ok.refresh_weights_all(1000.0f);
    FreezeOptions median_opt;
    median_opt.input_mode = InputMode::MedianBinarize;
    median_opt.input_medians = {0.1f, 0.2f};  // wrong channel count
    REQUIRE_THROWS_AS(freeze_model(ok, median_opt), ChannelMismatch);
}

TEST_CASE("frozen model serialization round-trips bit-identically") {
    ModelGraph m = tiny_cnn();
    m.refresh_weights_all(1000.0f);
    FreezeOptions opt;
    opt.use_alpha = true;
    const FrozenModel fm = freeze_model(m, opt);

    const std::vector<uint8_t> bytes = serialize_frozen(fm);
    const FrozenModel back = deserialize_frozen(bytes);
    const std::vector<uint8_t> bytes2 = serialize_frozen(back);
    REQUIRE(bytes == bytes2);

    // Corrupting any byte trips the CRC trailer.
    std::vector<uint8_t> corrupted = bytes;
    corrupted[10] ^= 0x40;
    REQUIRE_THROWS_AS(deserialize_frozen(corrupted), ChecksumError);

    // A wrong magic (with a fixed-up CRC) is a format error.
    std::vector<uint8_t> bad_magic = bytes;
    bad_magic[0] = 'X';
    bad_magic.resize(bad_magic.size() - 4);
    {
        BinaryWriter w;
        w.bytes(bad_magic.data(), bad_magic.size());
        w.append_crc32();
        REQUIRE_THROWS_AS(deserialize_frozen(w.buffer()), FormatError);
    }
}

TEST_CASE("frozen file holds exactly the integer payload layout") {
    ModelGraph m = tiny_cnn();
    m.refresh_weights_all(1000.0f);
    FreezeOptions opt;
    opt.input_mode = InputMode::Int8;
    const FrozenModel fm = freeze_model(m, opt);
    const std::vector<uint8_t> bytes = serialize_frozen(fm);

    // magic + version + layer_count + header (mode + 4 u32, no medians)
    size_t want = 4 + 2 + 2 + 1 + 16;
    // conv record: tag + 4 u32 + stride/pad + 4 rows of ceil(9/8) bytes
    want += 1 + 16 + 2 + 4 * 2;
    // pool record: tag + 4 u32
    want += 1 + 16;
    // threshold record: tag + 4 u32 + 4 i8 + scale + 3 bitfields of 1 byte
    want += 1 + 16 + 4 + 1 + 3;
    // dense record: tag + 4 u32 + 2 rows of ceil(36/8) bytes
    want += 1 + 16 + 2 * 5;
    want += 4;  // crc trailer
    REQUIRE(bytes.size() == want);
}

TEST_CASE("alpha fold: scaled comparison equals folded threshold, exhaustively") {
    // alpha*(B (*) X) > T  ==  (B (*) X) > T/alpha on the integer domain,
    // and the floor quantizer keeps that exact while scale_exp stays 0.
    std::mt19937 rng(9);
    std::uniform_real_distribution<double> ap(0.1, 4.0), tv(-100.0, 100.0);
    std::uniform_int_distribution<int> coin(0, 1);
    const int k = 120;
    for (int trial = 0; trial < 50; ++trial) {
        const double alpha = ap(rng);
        const double t = std::clamp(tv(rng) * alpha, -100.0, 100.0);
        const bool g = coin(rng) == 1;

        BinaryBNThresholds th;
        th.T = {static_cast<float>(t)};
        th.gamma_sign = {static_cast<uint8_t>(g)};
        th.gamma_zero = {0};
        th.beta_pos = {0};
        AlphaScale a;
        a.alpha = {static_cast<float>(alpha)};
        a.degenerate = {0};
        const QuantizedThresholds q =
            quantize_thresholds(apply_alpha(th, a), k);
        REQUIRE(q.scale_exp == 0);

        for (int i = -k; i <= k; ++i) {
            const bool explicit_scale =
                (alpha * i > static_cast<double>(th.T[0])) == g;
            const bool folded = (static_cast<int64_t>(i) > q.threshold(0)) == g;
            REQUIRE(explicit_scale == folded);
        }
    }
}

TEST_CASE("alpha fold preserves whole-network predictions on binary inputs") {
    // Reference path: explicit alpha-scaled binary weights on the hidden
    // layer (float math), plain sign weights on the head. Frozen path: alpha
    // folded into thresholds. Predictions must agree exactly.
    ModelGraph m = ModelGraph::build(
        parse_architecture("dense(8) bn act dense(2) softmax"), {12, 1, 1},
        BinMode::Soft, 21);
    m.refresh_weights_all(1000.0f);
    auto* l0 = std::get_if<DenseLayer>(&m.layers()[0]);
    auto* l1 = std::get_if<BatchNormLayer>(&m.layers()[1]);
    auto* l3 = std::get_if<DenseLayer>(&m.layers()[3]);
    // Give BN non-trivial folded thresholds.
    std::mt19937 rng(4);
    std::uniform_real_distribution<float> d(-1.0f, 1.0f);
    for (int c = 0; c < 8; ++c) {
        l1->state.running_mean[static_cast<size_t>(c)] = d(rng) * 2.0f;
        l1->state.gamma[static_cast<size_t>(c)] = d(rng) + (d(rng) > 0 ? 1.5f : -1.5f);
        l1->state.beta[static_cast<size_t>(c)] = d(rng);
    }

    FreezeOptions opt;
    opt.use_alpha = true;
    opt.input_mode = InputMode::MedianBinarize;
    opt.input_medians.assign(12, 0.0f);
    opt.nu = 1000.0f;
    const FrozenModel fm = freeze_model(m, opt);

    Tensor x({16, 12, 1, 1});
    for (auto& v : x.vec()) v = d(rng);
    const BitTensor xb = binarize_input(fm, x);
    const FrozenOutput frozen = run_frozen(fm, xb);

    // Explicit-alpha float reference over the same +-1 inputs.
    const Tensor pm1 = xb.unpack();
    const Tensor flat = Tensor::from_data({16, 12}, pm1.vec());
    const AlphaScale alpha = export_alpha(l0->cw, 1000.0f);
    Tensor w1 = sign_forward(l0->cw.latent());
    for (int c = 0; c < 8; ++c)
        for (int i = 0; i < 12; ++i)
            w1.at2(c, i) *= alpha.alpha[static_cast<size_t>(c)];
    const Tensor h = dense_forward(flat, w1);
    const Tensor hb = sign_forward(batchnorm_forward_infer(h, l1->state));
    const Tensor w2 = sign_forward(l3->cw.latent());
    const Tensor scores = dense_forward(hb, w2);
    for (int n = 0; n < 16; ++n) {
        REQUIRE(frozen.predictions[static_cast<size_t>(n)] ==
                argmax_row(scores, n));
        // Integer scores equal the float reference values as well.
        for (int c = 0; c < 2; ++c)
            REQUIRE(static_cast<float>(frozen.scores.at4(n, c, 0, 0)) ==
                    scores.at2(n, c));
    }
}
