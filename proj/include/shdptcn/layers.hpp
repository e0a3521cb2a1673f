#pragma once

#include <optional>
#include <random>
#include <utility>

#include "shdptcn/tensor.hpp"

namespace shdptcn {

/// Uniform init in ±sqrt(1/fan_in); biases stay zero.
inline void init_uniform(Tensor& t, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.data()) v = dist(rng);
}

using NamedParams = std::vector<std::pair<std::string, Value>>;

struct LinearLayer {
    Value weight;  // [d_in × d_out]
    Value bias;    // [d_out], absent when has_bias == false
    bool has_bias = true;

    LinearLayer() = default;
    LinearLayer(std::size_t d_in, std::size_t d_out, bool with_bias, std::mt19937_64& rng)
        : weight(make_value({d_in, d_out})), has_bias(with_bias) {
        init_uniform(*weight, d_in, rng);
        if (with_bias) bias = make_value({d_out});
    }

    Value forward(Tape& tape, const Value& x) const {
        Value y = matmul(tape, x, weight);
        return has_bias ? add_bias(tape, y, bias) : y;
    }

    void collect(NamedParams& out, const std::string& path) const {
        out.emplace_back(path + ".weight", weight);
        if (has_bias) out.emplace_back(path + ".bias", bias);
    }
};

/// Scaled dot-product self-attention over time positions: Q, K, V are
/// d×d projections of the same input, output = softmax(QKᵀ/√d)·V.
struct SelfAttentionLayer {
    LinearLayer wq, wk, wv;  // all d×d, no bias
    std::size_t dim = 0;

    SelfAttentionLayer() = default;
    SelfAttentionLayer(std::size_t d, std::mt19937_64& rng)
        : wq(d, d, false, rng), wk(d, d, false, rng), wv(d, d, false, rng), dim(d) {}

    Value forward(Tape& tape, const Value& a) const {
        if (a->ndim() != 2 || a->cols() != dim)
            throw std::invalid_argument("self_attention: input feature dim " +
                                        Tensor::shape_string(a->shape()) + " does not match d=" +
                                        std::to_string(dim));
        Value q = wq.forward(tape, a);
        Value k = wk.forward(tape, a);
        Value v = wv.forward(tape, a);
        Value scores = scale(tape, matmul(tape, q, transpose(tape, k)),
                             1.0 / std::sqrt(static_cast<double>(dim)));
        Value attn = softmax_rows(tape, scores);
        return matmul(tape, attn, v);
    }

    /// The row-stochastic attention weight matrix, for inspection.
    Value attention_weights(Tape& tape, const Value& a) const {
        Value q = wq.forward(tape, a);
        Value k = wk.forward(tape, a);
        Value scores = scale(tape, matmul(tape, q, transpose(tape, k)),
                             1.0 / std::sqrt(static_cast<double>(dim)));
        return softmax_rows(tape, scores);
    }

    void collect(NamedParams& out, const std::string& path) const {
        wq.collect(out, path + ".wq");
        wk.collect(out, path + ".wk");
        wv.collect(out, path + ".wv");
    }
};

/// Causal dilated convolution with weight-normalized kernels.
struct CausalConvLayer {
    Value kernel_v;  // direction parameter, [c_out × c_in × K]
    Value gain;      // per-output-channel g, [c_out]
    Value bias;      // [c_out]
    std::size_t in_channels = 0, out_channels = 0, kernel_size = 0, dilation = 1;

    CausalConvLayer() = default;
    CausalConvLayer(std::size_t cin, std::size_t cout, std::size_t ksz, std::size_t d,
                    std::mt19937_64& rng)
        : kernel_v(make_value({cout, cin, ksz})),
          gain(make_value({cout})),
          bias(make_value({cout})),
          in_channels(cin),
          out_channels(cout),
          kernel_size(ksz),
          dilation(d) {
        init_uniform(*kernel_v, cin * ksz, rng);
        // g starts at the initial kernel norm so the effective weight
        // equals v at initialization
        const std::size_t slice = cin * ksz;
        for (std::size_t oc = 0; oc < cout; ++oc) {
            double s = 0.0;
            for (std::size_t i = 0; i < slice; ++i) {
                const double v = kernel_v->at(oc * slice + i);
                s += v * v;
            }
            gain->at(oc) = std::sqrt(s);
        }
    }

    Value forward(Tape& tape, const Value& x) const {
        Value w = weight_norm(tape, kernel_v, gain);
        return causal_conv1d(tape, x, w, bias, dilation);
    }

    void collect(NamedParams& out, const std::string& path) const {
        out.emplace_back(path + ".kernel_v", kernel_v);
        out.emplace_back(path + ".gain", gain);
        out.emplace_back(path + ".bias", bias);
    }
};

/// Inverted dropout: train mode zeroes each element with probability rate
/// and scales survivors by 1/(1−rate); eval mode is the identity.
struct DropoutState {
    double rate = 0.0;
    bool train = false;
    std::mt19937_64 rng;

    DropoutState() = default;
    DropoutState(double r, bool train_mode, std::uint64_t seed)
        : rate(r), train(train_mode), rng(seed) {
        if (r < 0.0 || r >= 1.0)
            throw std::invalid_argument("dropout rate must be in [0,1)");
    }
};

inline Value dropout(Tape& tape, DropoutState& state, const Value& x) {
    if (!state.train || state.rate == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - state.rate);
    const double inv_keep = 1.0 / (1.0 - state.rate);
    std::vector<double> mask(x->numel());
    for (auto& m : mask) m = keep(state.rng) ? inv_keep : 0.0;
    return elementwise_mul(tape, x, make_value(x->shape(), std::move(mask)));
}

/// Residual unit H(x) = F(x) + S(x): F is two weight-normalized causal
/// convolutions, each followed by ReLU and dropout; S is the identity when
/// channel counts match and a 1×1 convolution otherwise.
struct ResidualBlock {
    CausalConvLayer conv1, conv2;
    std::optional<CausalConvLayer> match_conv;
    double dropout_rate = 0.0;

    ResidualBlock() = default;
    ResidualBlock(std::size_t cin, std::size_t cout, std::size_t ksz, std::size_t d,
                  double drop_rate, std::mt19937_64& rng)
        : conv1(cin, cout, ksz, d, rng),
          conv2(cout, cout, ksz, d, rng),
          dropout_rate(drop_rate) {
        if (cin != cout) match_conv.emplace(cin, cout, 1, 1, rng);
    }

    Value forward(Tape& tape, const Value& x, DropoutState& drop) const {
        Value h = dropout(tape, drop, relu(tape, conv1.forward(tape, x)));
        h = dropout(tape, drop, relu(tape, conv2.forward(tape, h)));
        Value skip = match_conv ? match_conv->forward(tape, x) : x;
        return add(tape, h, skip);
    }

    void collect(NamedParams& out, const std::string& path) const {
        conv1.collect(out, path + ".conv1");
        conv2.collect(out, path + ".conv2");
        if (match_conv) match_conv->collect(out, path + ".match_conv");
    }
};

/// Receptive field of a stack of causal convolutions with shared kernel
/// size K: 1 + Σ (K−1)·d over the per-convolution dilations. A single
/// layer reduces to (K−1)d+1.
inline std::size_t receptive_field(std::size_t kernel_size,
                                   const std::vector<std::size_t>& conv_dilations) {
    if (kernel_size < 1) throw std::invalid_argument("receptive_field: K must be >= 1");
    if (conv_dilations.empty())
        throw std::invalid_argument("receptive_field: dilation list must be nonempty");
    std::size_t rf = 1;
    for (std::size_t d : conv_dilations) rf += (kernel_size - 1) * d;
    return rf;
}

}  // namespace shdptcn
