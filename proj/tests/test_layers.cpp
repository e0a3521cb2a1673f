#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "shdptcn/layers.hpp"

using namespace shdptcn;

namespace {

Value random_value(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = -2.0,
                   double hi = 2.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Value v = make_value(std::move(shape));
    for (auto& x : v->data()) x = dist(rng);
    return v;
}

// Direct evaluation of the dilated causal convolution sum, written
// independently of the tape op.
std::vector<double> conv_oracle(const std::vector<double>& x, std::size_t cin, std::size_t len,
                                const std::vector<double>& w, std::size_t cout, std::size_t ksz,
                                const std::vector<double>& bias, std::size_t d) {
    std::vector<double> out(cout * len, 0.0);
    for (std::size_t oc = 0; oc < cout; ++oc)
        for (std::size_t t = 0; t < len; ++t) {
            double acc = bias[oc];
            for (std::size_t ic = 0; ic < cin; ++ic)
                for (std::size_t k = 1; k <= ksz; ++k) {
                    // out(t) = sum_k f_k * x_{t-(K-k)d}, zero outside the series
                    const long src = static_cast<long>(t) - static_cast<long>((ksz - k) * d);
                    if (src >= 0)
                        acc += w[(oc * cin + ic) * ksz + (k - 1)] * x[ic * len + src];
                }
            out[oc * len + t] = acc;
        }
    return out;
}

SelfAttentionLayer identity_attention(std::size_t d) {
    std::mt19937_64 rng(0);
    SelfAttentionLayer layer(d, rng);
    auto set_identity = [d](LinearLayer& l) {
        std::fill(l.weight->data().begin(), l.weight->data().end(), 0.0);
        for (std::size_t i = 0; i < d; ++i) l.weight->at(i * d + i) = 1.0;
    };
    set_identity(layer.wq);
    set_identity(layer.wk);
    set_identity(layer.wv);
    return layer;
}

}  // namespace

TEST_CASE("self attention single row with identity weights is identity") {
    Tape tape;
    auto layer = identity_attention(2);
    Value a = make_value({1, 2}, {2, 3});
    Value out = layer.forward(tape, a);
    CHECK(out->at(0) == doctest::Approx(2.0));
    CHECK(out->at(1) == doctest::Approx(3.0));
}

TEST_CASE("self attention identical rows give identical outputs") {
    std::mt19937_64 rng(21);
    SelfAttentionLayer layer(3, rng);
    Tape tape;
    Value a = make_value({2, 3}, {0.4, -1.1, 0.9, 0.4, -1.1, 0.9});
    Value out = layer.forward(tape, a);
    for (std::size_t j = 0; j < 3; ++j)
        CHECK(out->at(j) == doctest::Approx(out->at(3 + j)));
}

TEST_CASE("self attention matches hand-rolled oracle, n=2 d=1") {
    // Q = K = V = a with unit weights; out_i = sum_j softmax(a_i a_j / 1)_j a_j
    const double l3 = std::log(3.0);
    std::mt19937_64 rng(0);
    SelfAttentionLayer layer(1, rng);
    layer.wq.weight->at(0) = 1.0;
    layer.wk.weight->at(0) = 1.0;
    layer.wv.weight->at(0) = 1.0;
    Tape tape;
    Value a = make_value({2, 1}, {0.0, l3});
    Value out = layer.forward(tape, a);

    auto softmax2 = [](double s0, double s1) {
        const double m = std::max(s0, s1);
        const double e0 = std::exp(s0 - m), e1 = std::exp(s1 - m);
        return std::pair{e0 / (e0 + e1), e1 / (e0 + e1)};
    };
    auto [w00, w01] = softmax2(0.0 * 0.0, 0.0 * l3);
    auto [w10, w11] = softmax2(l3 * 0.0, l3 * l3);
    CHECK(out->at(0) == doctest::Approx(w00 * 0.0 + w01 * l3));
    CHECK(out->at(1) == doctest::Approx(w10 * 0.0 + w11 * l3));
}

TEST_CASE("attention weights are row-stochastic and permutation-equivariant") {
    std::mt19937_64 rng(33);
    for (int trial = 0; trial < 50; ++trial) {
        SelfAttentionLayer layer(3, rng);
        const std::size_t n = 5;
        Value a = random_value({n, 3}, rng);

        Tape tape;
        Value w = layer.attention_weights(tape, a);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                CHECK(w->at(i * n + j) >= 0.0);
                s += w->at(i * n + j);
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }

        // permuting input rows permutes output rows identically
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        Value ap = make_value(a->shape());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < 3; ++j) ap->at(i * 3 + j) = a->at(perm[i] * 3 + j);
        Tape t1, t2;
        Value out = layer.forward(t1, a);
        Value outp = layer.forward(t2, ap);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < 3; ++j)
                CHECK(outp->at(i * 3 + j) == doctest::Approx(out->at(perm[i] * 3 + j)));
    }
}

TEST_CASE("causal conv hand cases") {
    std::mt19937_64 rng(0);
    // K=2, d=1, F=[1,1]: y_t = x_{t-1} + x_t
    {
        CausalConvLayer layer(1, 1, 2, 1, rng);
        layer.kernel_v->data() = {1, 1};
        layer.gain->at(0) = std::sqrt(2.0);  // effective weights back to [1,1]
        layer.bias->at(0) = 0.0;
        Tape tape;
        Value x = make_value({1, 4}, {1, 2, 3, 4});
        Value out = layer.forward(tape, x);
        const std::vector<double> expect{1, 3, 5, 7};
        for (std::size_t i = 0; i < 4; ++i) CHECK(out->at(i) == doctest::Approx(expect[i]));
    }
    // K=3, d=2, F=[1,0,1]: y_t = x_{t-4} + x_t
    {
        CausalConvLayer layer(1, 1, 3, 2, rng);
        layer.kernel_v->data() = {1, 0, 1};
        layer.gain->at(0) = std::sqrt(2.0);
        layer.bias->at(0) = 0.0;
        Tape tape;
        Value x = make_value({1, 5}, {1, 2, 3, 4, 5});
        Value out = layer.forward(tape, x);
        const std::vector<double> expect{1, 2, 3, 4, 6};
        for (std::size_t i = 0; i < 5; ++i) CHECK(out->at(i) == doctest::Approx(expect[i]));
    }
}

TEST_CASE("delta filter reproduces the input") {
    std::mt19937_64 rng(41);
    CausalConvLayer layer(1, 1, 3, 2, rng);
    layer.kernel_v->data() = {0, 0, 1};  // f_K = 1
    layer.gain->at(0) = 1.0;
    layer.bias->at(0) = 0.0;
    Tape tape;
    Value x = random_value({1, 8}, rng);
    Value out = layer.forward(tape, x);
    for (std::size_t i = 0; i < 8; ++i) CHECK(out->at(i) == doctest::Approx(x->at(i)));
}

TEST_CASE("causal conv matches direct oracle on random instances") {
    std::mt19937_64 rng(55);
    std::uniform_int_distribution<std::size_t> kdist(1, 4), tdist(1, 64), cdist(1, 3);
    const std::size_t dils[4] = {1, 2, 4, 8};
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t ksz = kdist(rng), len = tdist(rng), d = dils[rng() % 4];
        const std::size_t cin = cdist(rng), cout = cdist(rng);
        Value x = random_value({cin, len}, rng);
        Value w = random_value({cout, cin, ksz}, rng);
        Value bias = random_value({cout}, rng);
        Tape tape;
        Value out = causal_conv1d(tape, x, w, bias, d);
        auto expect = conv_oracle(x->data(), cin, len, w->data(), cout, ksz, bias->data(), d);
        for (std::size_t i = 0; i < expect.size(); ++i)
            CHECK(out->at(i) == doctest::Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("causal conv gradient passes finite differences") {
    std::mt19937_64 rng(61);
    Value x = random_value({2, 6}, rng);
    Value bias = random_value({2}, rng);
    Value w0 = random_value({2, 2, 3}, rng);
    auto f_w = [&](Tape& t, const Value& w) { return sum(t, causal_conv1d(t, x, w, bias, 2)); };
    CHECK(grad_check(f_w, w0, 1e-5, 1e-4).passed(1e-4));
    auto f_x = [&](Tape& t, const Value& xx) { return sum(t, causal_conv1d(t, xx, w0, bias, 2)); };
    CHECK(grad_check(f_x, x, 1e-5, 1e-4).passed(1e-4));
}

TEST_CASE("receptive field formula") {
    CHECK(receptive_field(3, {4}) == 9);           // (K-1)d+1
    CHECK(receptive_field(1, {1, 2, 4}) == 1);     // pointwise
    CHECK(receptive_field(2, {1, 2, 4}) == 8);     // 1 + (1+2+4)
    CHECK_THROWS_AS(receptive_field(2, {}), std::invalid_argument);
}

TEST_CASE("receptive field matches perturbation probing, K=2 dilations 1,2,4") {
    std::mt19937_64 rng(71);
    CausalConvLayer l1(1, 1, 2, 1, rng), l2(1, 1, 2, 2, rng), l3(1, 1, 2, 4, rng);
    const std::size_t rf = receptive_field(2, {1, 2, 4});
    auto run = [&](const Value& x) {
        Tape tape;
        return l3.forward(tape, l2.forward(tape, l1.forward(tape, x)));
    };
    const std::size_t len = 16, t = len - 1;
    Value x = random_value({1, len}, rng);
    const double base = run(x)->at(t);
    // flipping the input at lag rf-1 changes out(t); at lag rf it does not
    Value near = make_value(x->shape(), x->data());
    near->at(t - (rf - 1)) += 1.0;
    CHECK(run(near)->at(t) != base);
    Value far = make_value(x->shape(), x->data());
    far->at(t - rf) += 1.0;
    CHECK(run(far)->at(t) == base);
}

TEST_CASE("weight norm hand case and annihilator") {
    Tape tape;
    Value v = make_value({1, 1, 2}, {3, 4});
    Value g = make_value({1}, {5.0});
    Value out = weight_norm(tape, v, g);
    CHECK(out->at(0) == doctest::Approx(3.0));
    CHECK(out->at(1) == doctest::Approx(4.0));

    Value g0 = make_value({1}, {0.0});
    Value out0 = weight_norm(tape, v, g0);
    CHECK(out0->at(0) == 0.0);
    CHECK(out0->at(1) == 0.0);
}

TEST_CASE("weight-normalized kernels have per-channel norm |g|") {
    std::mt19937_64 rng(81);
    for (int trial = 0; trial < 50; ++trial) {
        Value v = random_value({2, 3, 2}, rng);
        Value g = random_value({2}, rng, -3.0, 3.0);
        Tape tape;
        Value w = weight_norm(tape, v, g);
        for (std::size_t oc = 0; oc < 2; ++oc) {
            double s = 0.0;
            for (std::size_t i = 0; i < 6; ++i) s += w->at(oc * 6 + i) * w->at(oc * 6 + i);
            CHECK(std::sqrt(s) == doctest::Approx(std::abs(g->at(oc))).epsilon(1e-12));
        }
    }
}

TEST_CASE("weight norm gradient flows to v and g") {
    std::mt19937_64 rng(91);
    Value v0 = random_value({2, 2, 3}, rng);
    Value g0 = random_value({2}, rng, 0.5, 2.0);
    auto f_v = [&](Tape& t, const Value& v) { return sum(t, weight_norm(t, v, g0)); };
    CHECK(grad_check(f_v, v0, 1e-5, 1e-4).passed(1e-4));
    auto f_g = [&](Tape& t, const Value& g) { return sum(t, weight_norm(t, v0, g)); };
    CHECK(grad_check(f_g, g0, 1e-5, 1e-4).passed(1e-4));
}

TEST_CASE("dropout modes") {
    std::mt19937_64 rng(101);
    Value x = random_value({4, 4}, rng);
    Tape tape;
    DropoutState eval_state(0.5, false, 1);
    CHECK(dropout(tape, eval_state, x)->data() == x->data());
    DropoutState zero_rate(0.0, true, 1);
    CHECK(dropout(tape, zero_rate, x)->data() == x->data());
}

TEST_CASE("inverted dropout preserves the mean at rate 0.5") {
    Tape tape;
    Value x = make_value({100000}, std::vector<double>(100000, 1.0));
    DropoutState state(0.5, true, 12345);
    Value out = dropout(tape, state, x);
    const double mean = std::accumulate(out->data().begin(), out->data().end(), 0.0) / 1e5;
    CHECK(mean > 0.98);
    CHECK(mean < 1.02);
}

TEST_CASE("residual block: zero F gives identity") {
    std::mt19937_64 rng(111);
    ResidualBlock block(2, 2, 3, 1, 0.0, rng);
    for (auto* conv : {&block.conv1, &block.conv2}) {
        // tiny v direction with zero gain: effective weights are exactly 0
        std::fill(conv->kernel_v->data().begin(), conv->kernel_v->data().end(), 1.0);
        std::fill(conv->gain->data().begin(), conv->gain->data().end(), 0.0);
        std::fill(conv->bias->data().begin(), conv->bias->data().end(), 0.0);
    }
    Value x = random_value({2, 7}, rng);
    Tape tape;
    DropoutState drop(0.0, false, 0);
    Value out = block.forward(tape, x, drop);
    CHECK(out->data() == x->data());  // bit-exact
}

TEST_CASE("residual block hand case: K=1 unit convs") {
    std::mt19937_64 rng(121);
    ResidualBlock block(1, 1, 1, 1, 0.0, rng);
    for (auto* conv : {&block.conv1, &block.conv2}) {
        conv->kernel_v->data() = {1.0};
        conv->gain->data() = {1.0};
        conv->bias->data() = {0.0};
    }
    Tape tape;
    DropoutState drop(0.0, false, 0);
    Value x = make_value({1, 2}, {-1, 2});
    Value out = block.forward(tape, x, drop);  // relu(relu(x)) + x
    CHECK(out->at(0) == doctest::Approx(-1.0));
    CHECK(out->at(1) == doctest::Approx(4.0));
}

TEST_CASE("residual block is causal") {
    std::mt19937_64 rng(131);
    ResidualBlock block(2, 3, 3, 2, 0.0, rng);
    DropoutState drop(0.0, false, 0);
    const std::size_t len = 10;
    Value x = random_value({2, len}, rng);
    Tape t0;
    Value base = block.forward(t0, x, drop);
    for (std::size_t t = 0; t + 1 < len; ++t) {
        Value xp = make_value(x->shape(), x->data());
        for (std::size_t tp = t + 1; tp < len; ++tp)
            for (std::size_t c = 0; c < 2; ++c) xp->at(c * len + tp) += 1.0;
        Tape t1;
        Value out = block.forward(t1, xp, drop);
        for (std::size_t c = 0; c < 3; ++c)
            CHECK(out->at(c * len + t) == base->at(c * len + t));  // bit-identical
    }
}

TEST_CASE("eval-mode forward is deterministic") {
    std::mt19937_64 rng(141);
    ResidualBlock block(2, 2, 3, 1, 0.3, rng);
    Value x = random_value({2, 6}, rng);
    DropoutState d1(0.3, false, 1), d2(0.3, false, 99);
    Tape t1, t2;
    CHECK(block.forward(t1, x, d1)->data() == block.forward(t2, x, d2)->data());
}

TEST_CASE("residual block passes grad check through all parameters") {
    std::mt19937_64 rng(151);
    ResidualBlock block(2, 2, 2, 1, 0.0, rng);
    Value x = random_value({2, 5}, rng, 0.2, 1.5);  // keep relu away from kinks
    DropoutState drop(0.0, false, 0);
    auto f = [&](Tape& t, const Value& v) {
        block.conv1.kernel_v = v;
        return sum(t, block.forward(t, x, drop));
    };
    Value v0 = make_value(block.conv1.kernel_v->shape(), block.conv1.kernel_v->data());
    CHECK(grad_check(f, v0, 1e-5, 1e-3).passed(1e-3));
}
