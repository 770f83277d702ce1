#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "sbnn/layer_ops.hpp"
#include "oracle.hpp"

using namespace sbnn;

namespace {

Tensor random_tensor(const std::vector<int>& shape, std::mt19937& rng,
                     float lo = -1.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> dist(lo, hi);
    Tensor t(shape);
    for (auto& v : t.vec()) v = dist(rng);
    return t;
}

std::vector<double> to_double(const Tensor& t) {
    return {t.vec().begin(), t.vec().end()};
}

}  // namespace

TEST_CASE("sign forward: -1 at zero, idempotent") {
    const Tensor x = Tensor::from_data({4}, {0.0f, 0.3f, -0.3f, 1e-30f});
    const Tensor s = sign_forward(x);
    REQUIRE(s[0] == -1.0f);
    REQUIRE(s[1] == 1.0f);
    REQUIRE(s[2] == -1.0f);
    REQUIRE(s[3] == 1.0f);
    std::mt19937 rng(1);
    const Tensor r = random_tensor({32}, rng, -3.0f, 3.0f);
    const Tensor once = sign_forward(r);
    const Tensor twice = sign_forward(once);
    for (size_t i = 0; i < once.size(); ++i) REQUIRE(once[i] == twice[i]);
}

TEST_CASE("straight-through estimator clips outside |x| <= 1") {
    const Tensor x = Tensor::from_data({4}, {0.5f, 2.0f, 1.0f, -1.0f});
    const Tensor up = Tensor::from_data({4}, {2.0f, 2.0f, 3.0f, 4.0f});
    const Tensor g = ste_backward(x, up);
    REQUIRE(g[0] == 2.0f);
    REQUIRE(g[1] == 0.0f);  // clipped region
    REQUIRE(g[2] == 3.0f);  // boundary included
    REQUIRE(g[3] == 4.0f);
}

TEST_CASE("scaled tanh forward values and range") {
    const Tensor zero = Tensor::from_data({1}, {0.0f});
    REQUIRE(scaled_tanh_forward(zero, 17.0f)[0] == 0.0f);

    const Tensor x = Tensor::from_data({1}, {0.01f});
    // tanh(10), evaluated independently in extended precision
    REQUIRE(scaled_tanh_forward(x, 1000.0f)[0] ==
            Catch::Approx(0.99999999587769276).epsilon(1e-7));

    // Strictly inside (-1,1) wherever float32 can represent the gap; |y|
    // never exceeds 1 even where tanh saturates to the rounded endpoint.
    std::mt19937 rng(2);
    const Tensor r = random_tensor({64}, rng, -4.0f, 4.0f);
    for (float nu : {1.0f, 5.0f, 20.0f, 1000.0f}) {
        const Tensor y = scaled_tanh_forward(r, nu);
        const Tensor yn = scaled_tanh_forward(scale(r, -1.0f), nu);
        for (size_t i = 0; i < y.size(); ++i) {
            REQUIRE(std::fabs(y[i]) <= 1.0f);
            if (std::fabs(nu * r[i]) < 8.0f) REQUIRE(std::fabs(y[i]) < 1.0f);
            REQUIRE(y[i] == Catch::Approx(-yn[i]).margin(1e-7));  // odd
        }
    }
    REQUIRE_THROWS_AS(scaled_tanh_forward(zero, 0.5f), OutOfRange);
}

TEST_CASE("scaled tanh is monotone in x for fixed nu") {
    std::vector<float> xs;
    for (int i = -40; i <= 40; ++i) xs.push_back(0.05f * i);
    for (float nu : {1.0f, 7.0f, 200.0f}) {
        float prev = -2.0f;
        for (float v : xs) {
            const float y =
                scaled_tanh_forward(Tensor::from_data({1}, {v}), nu)[0];
            REQUIRE(y >= prev);
            prev = y;
        }
    }
}

TEST_CASE("scaled tanh converges to sign monotonically over the schedule") {
    std::vector<float> grid;
    for (int i = 1; i <= 20; ++i) {
        grid.push_back(0.05f * i);
        grid.push_back(-0.05f * i);
    }
    double prev = 2.0;
    for (int e = 0; e <= 20; ++e) {
        const double nu = std::pow(1000.0, e / 20.0);
        double sup = 0.0;
        for (float x : grid) {
            const double s = x > 0 ? 1.0 : -1.0;
            sup = std::max(sup, std::fabs(std::tanh(nu * x) - s));
        }
        REQUIRE(sup <= prev + 1e-12);
        prev = sup;
    }
}

TEST_CASE("scaled tanh backward: value at zero, saturation, finite differences") {
    const Tensor zero = Tensor::from_data({1}, {0.0f});
    const Tensor one = Tensor::from_data({1}, {1.0f});
    REQUIRE(scaled_tanh_backward(zero, 5.0f, one)[0] == Catch::Approx(5.0));

    const Tensor big = Tensor::from_data({1}, {50.0f});
    REQUIRE(std::fabs(scaled_tanh_backward(big, 5.0f, one)[0]) < 1e-6);

    std::mt19937 rng(3);
    std::uniform_real_distribution<double> xs(-2.0, 2.0);
    for (float nu : {1.0f, 5.0f, 20.0f}) {
        for (int t = 0; t < 200; ++t) {
            const double x = xs(rng);
            const double h = 1e-4;
            const double fd =
                (std::tanh(nu * (x + h)) - std::tanh(nu * (x - h))) / (2 * h);
            const float got = scaled_tanh_backward(
                Tensor::from_data({1}, {static_cast<float>(x)}), nu, one)[0];
            REQUIRE(std::fabs(got - fd) / std::max(std::fabs(fd), 1e-6) < 1e-5);
        }
    }
}

TEST_CASE("batchnorm training mode: identity, collapsed scale, moments") {
    std::mt19937 rng(4);

    // Already zero-mean unit-variance input stays put (up to epsilon).
    BatchNormState st(1);
    Tensor x({8, 1, 1, 1});
    const float vals[8] = {-1.5f, 1.5f, -0.5f, 0.5f, -1.0f, 1.0f, -0.25f, 0.25f};
    double mean = 0, var = 0;
    for (int i = 0; i < 8; ++i) mean += vals[i];
    mean /= 8;
    for (int i = 0; i < 8; ++i) var += (vals[i] - mean) * (vals[i] - mean);
    var /= 8;
    const double sd = std::sqrt(var);
    for (int i = 0; i < 8; ++i)
        x[static_cast<size_t>(i)] = static_cast<float>((vals[i] - mean) / sd);
    const Tensor y = batchnorm_forward_train(x, st);
    for (size_t i = 0; i < y.size(); ++i)
        REQUIRE(y[i] == Catch::Approx(x[i]).margin(1e-4));

    // gamma = 0 collapses to beta.
    BatchNormState st0(2);
    st0.gamma = {0.0f, 0.0f};
    st0.beta = {0.7f, -0.3f};
    const Tensor r = random_tensor({4, 2, 3, 3}, rng);
    const Tensor yb = batchnorm_forward_train(r, st0);
    for (int n = 0; n < 4; ++n)
        for (int c = 0; c < 2; ++c)
            for (int i = 0; i < 9; ++i)
                REQUIRE(yb[(static_cast<size_t>(n) * 2 + c) * 9 + i] ==
                        Catch::Approx(st0.beta[static_cast<size_t>(c)]));

    // Random batch: per-channel output mean == beta, std == |gamma|.
    BatchNormState st2(3);
    st2.gamma = {1.3f, -0.8f, 2.0f};
    st2.beta = {0.1f, 0.5f, -1.0f};
    const Tensor big = random_tensor({16, 3, 4, 4}, rng, -3.0f, 5.0f);
    const Tensor out = batchnorm_forward_train(big, st2);
    const Tensor m = reduce_mean(out, {0, 2, 3});
    const Tensor v = reduce_var(out, {0, 2, 3});
    for (int c = 0; c < 3; ++c) {
        REQUIRE(m[static_cast<size_t>(c)] ==
                Catch::Approx(st2.beta[static_cast<size_t>(c)]).margin(1e-4));
        REQUIRE(std::sqrt(v[static_cast<size_t>(c)]) ==
                Catch::Approx(std::fabs(st2.gamma[static_cast<size_t>(c)]))
                    .margin(1e-3));
    }

    // Degenerate batch.
    BatchNormState st3(2);
    Tensor tiny({1, 2, 1, 1});
    REQUIRE_THROWS_AS(batchnorm_forward_train(tiny, st3), DegenerateBatch);
}

TEST_CASE("batchnorm running statistics follow the EMA rule") {
    BatchNormState st(1);
    st.momentum = 0.1f;
    Tensor x = Tensor::from_data({4, 1, 1, 1}, {1.0f, 2.0f, 3.0f, 4.0f});
    batchnorm_forward_train(x, st);
    // batch mean 2.5, population var 1.25
    REQUIRE(st.running_mean[0] == Catch::Approx(0.9f * 0.0f + 0.1f * 2.5f));
    REQUIRE(st.running_var[0] == Catch::Approx(0.9f * 1.0f + 0.1f * 1.25f));
}

TEST_CASE("batchnorm inference mode matches the scalar affine form") {
    std::mt19937 rng(5);
    BatchNormState st(1);
    st.running_mean = {0.0f};
    st.running_var = {1.0f - st.epsilon};  // sigma_r exactly 1
    const Tensor x = random_tensor({3, 1, 2, 2}, rng);
    const Tensor y = batchnorm_forward_infer(x, st);
    for (size_t i = 0; i < x.size(); ++i)
        REQUIRE(y[i] == Catch::Approx(x[i]).margin(1e-6));

    // I = mu_r gives beta.
    BatchNormState st2(1);
    st2.running_mean = {1.7f};
    st2.beta = {0.4f};
    st2.gamma = {2.5f};
    Tensor centered({2, 1, 1, 1}, 1.7f);
    const Tensor yb = batchnorm_forward_infer(centered, st2);
    for (size_t i = 0; i < yb.size(); ++i)
        REQUIRE(yb[i] == Catch::Approx(0.4f).margin(1e-6));

    // Random params against the scalar oracle.
    BatchNormState st3(4);
    std::uniform_real_distribution<float> d(-2.0f, 2.0f);
    for (int c = 0; c < 4; ++c) {
        st3.running_mean[static_cast<size_t>(c)] = d(rng);
        st3.running_var[static_cast<size_t>(c)] = 0.5f + std::fabs(d(rng));
        st3.gamma[static_cast<size_t>(c)] = d(rng);
        st3.beta[static_cast<size_t>(c)] = d(rng);
    }
    const Tensor r = random_tensor({2, 4, 3, 3}, rng, -4.0f, 4.0f);
    const Tensor yr = batchnorm_forward_infer(r, st3);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 4; ++c)
            for (int i = 0; i < 9; ++i) {
                const size_t idx = (static_cast<size_t>(n) * 4 + c) * 9 + i;
                const double want = oracle::bn_infer_scalar(
                    r[idx], st3.running_mean[static_cast<size_t>(c)],
                    st3.sigma_r(c), st3.gamma[static_cast<size_t>(c)],
                    st3.beta[static_cast<size_t>(c)]);
                REQUIRE(yr[idx] == Catch::Approx(want).margin(1e-6));
            }
}

TEST_CASE("batchnorm backward matches finite differences of the oracle") {
    std::mt19937 rng(6);
    for (int trial = 0; trial < 5; ++trial) {
        const int N = 4, C = 3, H = 2, W = 2;
        const Tensor x = random_tensor({N, C, H, W}, rng, -2.0f, 2.0f);
        BatchNormState st(C);
        for (int c = 0; c < C; ++c) {
            st.gamma[static_cast<size_t>(c)] = 0.5f + 0.3f * c;
            st.beta[static_cast<size_t>(c)] = -0.2f + 0.1f * c;
        }
        const Tensor up = random_tensor({N, C, H, W}, rng);

        BatchNormState run = st;
        BatchNormCache cache;
        batchnorm_forward_train(x, run, &cache);
        std::vector<float> dgamma, dbeta;
        const Tensor dx = batchnorm_backward(up, st, cache, dgamma, dbeta);

        const std::vector<double> upd = to_double(up);
        const std::vector<double> gd(st.gamma.begin(), st.gamma.end());
        const std::vector<double> bd(st.beta.begin(), st.beta.end());
        auto loss_x = [&](const std::vector<double>& xv) {
            const auto out = oracle::batchnorm_train_ref(
                xv, N, C, H * W, gd, bd, st.epsilon);
            double l = 0;
            for (size_t i = 0; i < out.size(); ++i) l += out[i] * upd[i];
            return l;
        };
        const auto fd_x = oracle::grad_fd(loss_x, to_double(x));
        REQUIRE(oracle::rel_error(to_double(dx), fd_x) < 1e-4);

        const std::vector<double> xd = to_double(x);
        auto loss_g = [&](const std::vector<double>& gv) {
            const auto out =
                oracle::batchnorm_train_ref(xd, N, C, H * W, gv, bd, st.epsilon);
            double l = 0;
            for (size_t i = 0; i < out.size(); ++i) l += out[i] * upd[i];
            return l;
        };
        const auto fd_g = oracle::grad_fd(loss_g, gd);
        REQUIRE(oracle::rel_error({dgamma.begin(), dgamma.end()}, fd_g) < 1e-4);

        auto loss_b = [&](const std::vector<double>& bv) {
            const auto out =
                oracle::batchnorm_train_ref(xd, N, C, H * W, gd, bv, st.epsilon);
            double l = 0;
            for (size_t i = 0; i < out.size(); ++i) l += out[i] * upd[i];
            return l;
        };
        const auto fd_b = oracle::grad_fd(loss_b, bd);
        REQUIRE(oracle::rel_error({dbeta.begin(), dbeta.end()}, fd_b) < 1e-4);
    }
}

TEST_CASE("conv and dense backward match finite differences") {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor x = random_tensor({2, 2, 5, 5}, rng);
        const Tensor k = random_tensor({3, 2, 3, 3}, rng);
        const Tensor y = conv2d(x, k, 1, 1);
        const Tensor up = random_tensor(y.shape(), rng);
        Tensor dx, dk;
        conv2d_backward(x, k, 1, 1, up, dx, dk);

        const auto upd = to_double(up);
        const auto kd = to_double(k);
        auto loss_x = [&](const std::vector<double>& xv) {
            const auto out = oracle::conv2d_ref(xv, {2, 2, 5, 5}, kd,
                                                {3, 2, 3, 3}, 1, 1);
            double l = 0;
            for (size_t i = 0; i < out.size(); ++i) l += out[i] * upd[i];
            return l;
        };
        REQUIRE(oracle::rel_error(to_double(dx),
                                  oracle::grad_fd(loss_x, to_double(x))) < 1e-4);
        const auto xd = to_double(x);
        auto loss_k = [&](const std::vector<double>& kv) {
            const auto out = oracle::conv2d_ref(xd, {2, 2, 5, 5}, kv,
                                                {3, 2, 3, 3}, 1, 1);
            double l = 0;
            for (size_t i = 0; i < out.size(); ++i) l += out[i] * upd[i];
            return l;
        };
        REQUIRE(oracle::rel_error(to_double(dk),
                                  oracle::grad_fd(loss_k, to_double(k))) < 1e-4);
    }

    for (int trial = 0; trial < 5; ++trial) {
        const Tensor x = random_tensor({4, 6}, rng);
        const Tensor w = random_tensor({3, 6}, rng);
        const Tensor up = random_tensor({4, 3}, rng);
        Tensor dx, dw;
        dense_backward(x, w, up, dx, dw);
        const auto upd = to_double(up);
        const auto wd = to_double(w);
        auto loss_x = [&](const std::vector<double>& xv) {
            const auto out = oracle::dense_ref(xv, 4, 6, wd, 3);
            double l = 0;
            for (size_t i = 0; i < out.size(); ++i) l += out[i] * upd[i];
            return l;
        };
        REQUIRE(oracle::rel_error(to_double(dx),
                                  oracle::grad_fd(loss_x, to_double(x))) < 1e-4);
        const auto xd = to_double(x);
        auto loss_w = [&](const std::vector<double>& wv) {
            const auto out = oracle::dense_ref(xd, 4, 6, wv, 3);
            double l = 0;
            for (size_t i = 0; i < out.size(); ++i) l += out[i] * upd[i];
            return l;
        };
        REQUIRE(oracle::rel_error(to_double(dw),
                                  oracle::grad_fd(loss_w, to_double(w))) < 1e-4);
    }
}

TEST_CASE("zero upstream gives zero parameter gradients") {
    std::mt19937 rng(8);
    const Tensor x = random_tensor({2, 2, 4, 4}, rng);
    const Tensor k = random_tensor({3, 2, 3, 3}, rng);
    const Tensor up(conv2d(x, k, 1, 0).shape(), 0.0f);
    Tensor dx, dk;
    conv2d_backward(x, k, 1, 0, up, dx, dk);
    for (size_t i = 0; i < dk.size(); ++i) REQUIRE(dk[i] == 0.0f);
    for (size_t i = 0; i < dx.size(); ++i) REQUIRE(dx[i] == 0.0f);
}

TEST_CASE("maxpool forward ties break row-major and backward routes gradient") {
    // Tie in the first window: first element wins.
    Tensor x({1, 1, 2, 4}, 0.0f);
    x.at4(0, 0, 0, 0) = 5.0f;
    x.at4(0, 0, 1, 1) = 5.0f;   // same value later in the window
    x.at4(0, 0, 0, 2) = -1.0f;
    x.at4(0, 0, 0, 3) = 2.0f;
    MaxPoolCache cache;
    const Tensor y = maxpool2x2_forward(x, &cache);
    REQUIRE(y.at4(0, 0, 0, 0) == 5.0f);
    REQUIRE(cache.argmax[0] == 0);  // row-major first

    const Tensor up = Tensor::from_data({1, 1, 1, 2}, {1.0f, 2.0f});
    const Tensor dx = maxpool2x2_backward(up, cache);
    REQUIRE(dx.at4(0, 0, 0, 0) == 1.0f);
    REQUIRE(dx.at4(0, 0, 1, 1) == 0.0f);
    REQUIRE(dx.at4(0, 0, 0, 3) == 2.0f);

    MaxPoolCache stale;
    REQUIRE_THROWS_AS(maxpool2x2_backward(up, stale), StaleCache);
}

TEST_CASE("maxpool backward matches finite differences on separated inputs") {
    std::mt19937 rng(9);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor x({2, 2, 4, 4});
        // Pairwise-distinct values keep the argmax stable under FD steps.
        std::vector<float> vals(x.size());
        for (size_t i = 0; i < vals.size(); ++i)
            vals[i] = static_cast<float>(i) * 0.01f;
        std::shuffle(vals.begin(), vals.end(), rng);
        for (size_t i = 0; i < x.size(); ++i) x[i] = vals[i];

        MaxPoolCache cache;
        const Tensor y = maxpool2x2_forward(x, &cache);
        const Tensor up = random_tensor(y.shape(), rng);
        const Tensor dx = maxpool2x2_backward(up, cache);

        const auto upd = to_double(up);
        auto loss = [&](const std::vector<double>& xv) {
            const auto out = oracle::maxpool_ref(xv, {2, 2, 4, 4});
            double l = 0;
            for (size_t i = 0; i < out.size(); ++i) l += out[i] * upd[i];
            return l;
        };
        REQUIRE(oracle::rel_error(to_double(dx),
                                  oracle::grad_fd(loss, to_double(x), 1e-4)) <
                1e-4);
    }
}

TEST_CASE("softmax cross-entropy: saturated-correct case and finite differences") {
    // One-hot-correct logit: loss and gradient near zero.
    Tensor logits = Tensor::from_data({1, 3}, {30.0f, 0.0f, 0.0f});
    SoftmaxCECache cache;
    const float loss = softmax_ce_forward(logits, {0}, &cache);
    REQUIRE(loss < 1e-6f);
    const Tensor g = softmax_ce_backward(cache);
    for (size_t i = 0; i < g.size(); ++i) REQUIRE(std::fabs(g[i]) < 1e-6f);

    std::mt19937 rng(10);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor l = random_tensor({4, 5}, rng, -2.0f, 2.0f);
        std::uniform_int_distribution<int> lab(0, 4);
        std::vector<int> labels(4);
        for (auto& v : labels) v = lab(rng);
        SoftmaxCECache c2;
        softmax_ce_forward(l, labels, &c2);
        const Tensor dl = softmax_ce_backward(c2);
        auto loss_fn = [&](const std::vector<double>& lv) {
            return oracle::softmax_ce_ref(lv, 4, 5, labels);
        };
        REQUIRE(oracle::rel_error(to_double(dl),
                                  oracle::grad_fd(loss_fn, to_double(l))) < 1e-4);
    }

    SoftmaxCECache stale;
    REQUIRE_THROWS_AS(softmax_ce_backward(stale), StaleCache);
    REQUIRE_THROWS_AS(softmax_ce_forward(logits, {3}, nullptr), OutOfRange);
}

TEST_CASE("batchnorm backward requires a matching forward") {
    BatchNormState st(2);
    BatchNormCache cache;
    std::vector<float> dg, db;
    Tensor up({2, 2, 1, 1}, 1.0f);
    REQUIRE_THROWS_AS(batchnorm_backward(up, st, cache, dg, db), StaleCache);
}
