#pragma once

#include <nlohmann/json.hpp>

#include "shdptcn/data.hpp"
#include "shdptcn/layers.hpp"

namespace shdptcn {

struct ModelConfig {
    std::size_t window_len = 100;
    std::size_t topic_dim = 50;   // 0 disables topic features
    std::size_t channels = 0;     // 0 means "same as input channel count"
    std::size_t kernel_size = 3;
    std::size_t num_blocks = 3;   // dilations 1, 2, 4, ...
    double dropout_rate = 0.1;
    bool use_attention = true;
    std::uint64_t seed = 7;

    std::size_t input_channels() const { return 1 + topic_dim; }
    std::size_t hidden_channels() const { return channels ? channels : input_channels(); }

    void validate() const {
        if (window_len < 2) throw std::invalid_argument("ModelConfig.window_len must be >= 2");
        if (kernel_size < 1) throw std::invalid_argument("ModelConfig.kernel_size must be >= 1");
        if (num_blocks < 1) throw std::invalid_argument("ModelConfig.num_blocks must be >= 1");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw std::invalid_argument("ModelConfig.dropout_rate must be in [0,1)");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"window_len", c.window_len},   {"topic_dim", c.topic_dim},
         {"channels", c.channels},       {"kernel_size", c.kernel_size},
         {"num_blocks", c.num_blocks},   {"dropout_rate", c.dropout_rate},
         {"use_attention", c.use_attention}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.window_len = j.value("window_len", c.window_len);
    c.topic_dim = j.value("topic_dim", c.topic_dim);
    c.channels = j.value("channels", c.channels);
    c.kernel_size = j.value("kernel_size", c.kernel_size);
    c.num_blocks = j.value("num_blocks", c.num_blocks);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    c.use_attention = j.value("use_attention", c.use_attention);
    c.seed = j.value("seed", c.seed);
}

struct Prediction {
    double point = 0.0;         // normalized scale
    double denormalized = 0.0;  // original heat scale
};

/// Self-attention encoder feeding stacked causal-dilated residual blocks
/// and a scalar linear head on the last time step.
class ShdpTcnModel {
public:
    ShdpTcnModel() = default;

    explicit ShdpTcnModel(const ModelConfig& config) : config_(config) {
        config.validate();
        std::mt19937_64 rng(config.seed);
        if (config.use_attention)
            attention_.emplace(config.input_channels(), rng);
        std::size_t cin = config.input_channels();
        const std::size_t hidden = config.hidden_channels();
        for (std::size_t b = 0; b < config.num_blocks; ++b) {
            const std::size_t dilation = std::size_t{1} << b;
            blocks_.emplace_back(cin, hidden, config.kernel_size, dilation, config.dropout_rate,
                                 rng);
            cin = hidden;
        }
        head_ = LinearLayer(hidden, 1, true, rng);
    }

    const ModelConfig& config() const { return config_; }
    const std::optional<SelfAttentionLayer>& attention() const { return attention_; }
    const std::vector<ResidualBlock>& blocks() const { return blocks_; }
    const LinearLayer& head() const { return head_; }

    /// Time-major input: [window_len × (1 + topic_dim)], channel 0 carries
    /// the heat value, the topic feature broadcasts to every time step.
    Value assemble_input(const std::vector<double>& heat_window,
                         const std::vector<double>& topic_feature) const {
        if (heat_window.size() != config_.window_len)
            throw std::invalid_argument("assemble_input: window length " +
                                        std::to_string(heat_window.size()) + ", expected " +
                                        std::to_string(config_.window_len));
        if (topic_feature.size() != config_.topic_dim)
            throw std::invalid_argument("assemble_input: topic feature length " +
                                        std::to_string(topic_feature.size()) + ", expected " +
                                        std::to_string(config_.topic_dim));
        const std::size_t n = config_.window_len, d = config_.input_channels();
        std::vector<double> data(n * d);
        for (std::size_t t = 0; t < n; ++t) {
            data[t * d] = heat_window[t];
            for (std::size_t j = 0; j < config_.topic_dim; ++j)
                data[t * d + 1 + j] = topic_feature[j];
        }
        return make_value({n, d}, std::move(data));
    }

    /// Full forward pass on a [n × d] time-major input; returns the scalar
    /// next-step prediction (normalized scale).
    Value forward(Tape& tape, const Value& input, DropoutState& drop) const {
        if (input->ndim() != 2 || input->cols() != config_.input_channels())
            throw std::invalid_argument("forward: input shape " +
                                        Tensor::shape_string(input->shape()) +
                                        " does not match model channels " +
                                        std::to_string(config_.input_channels()));
        Value x = attention_ ? attention_->forward(tape, input) : input;
        x = transpose(tape, x);  // [channels × time]
        for (const auto& block : blocks_) x = block.forward(tape, x, drop);
        return head_.forward(tape, last_time_step(tape, x));  // [1×1]
    }

    Prediction predict(const std::vector<double>& heat_window,
                       const std::vector<double>& topic_feature,
                       const Normalizer& norm) const {
        Tape tape;
        DropoutState drop(config_.dropout_rate, false, 0);
        const double point = forward(tape, assemble_input(heat_window, topic_feature), drop)->at(0);
        return Prediction{point, norm.denormalize(point)};
    }

    /// Autoregressive rollout: each prediction is appended to the window
    /// for the next step; the topic feature stays fixed.
    std::vector<Prediction> predict_horizon(const HeatSeries& series,
                                            const std::vector<double>& topic_feature,
                                            const Normalizer& norm, std::size_t steps) const {
        if (steps < 1) throw std::invalid_argument("predict_horizon: steps must be >= 1");
        if (series.values.size() < config_.window_len)
            throw std::invalid_argument("predict_horizon: series length " +
                                        std::to_string(series.values.size()) +
                                        " shorter than window " +
                                        std::to_string(config_.window_len));
        std::vector<double> window(series.values.end() - config_.window_len,
                                   series.values.end());
        for (auto& v : window) v = norm.normalize(v);
        std::vector<Prediction> out;
        out.reserve(steps);
        for (std::size_t s = 0; s < steps; ++s) {
            Prediction p = predict(window, topic_feature, norm);
            out.push_back(p);
            window.erase(window.begin());
            window.push_back(p.point);
        }
        return out;
    }

    NamedParams parameters() const {
        NamedParams out;
        if (attention_) attention_->collect(out, "attention");
        for (std::size_t b = 0; b < blocks_.size(); ++b)
            blocks_[b].collect(out, "block" + std::to_string(b));
        head_.collect(out, "head");
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, p] : parameters()) n += p->numel();
        return n;
    }

    /// Closed form of parameter_count() as a function of the config.
    static std::size_t expected_parameter_count(const ModelConfig& c) {
        const std::size_t d = c.input_channels(), h = c.hidden_channels(), k = c.kernel_size;
        std::size_t n = c.use_attention ? 3 * d * d : 0;
        std::size_t cin = d;
        for (std::size_t b = 0; b < c.num_blocks; ++b) {
            n += h * cin * k + 2 * h;  // conv1: v + gain + bias
            n += h * h * k + 2 * h;    // conv2
            if (cin != h) n += h * cin + 2 * h;  // 1x1 match conv
            cin = h;
        }
        return n + h + 1;  // head
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["config"] = config_;
        nlohmann::json params = nlohmann::json::object();
        for (const auto& [name, p] : parameters()) {
            params[name] = {{"shape", p->shape()}, {"values", p->data()}};
        }
        j["params"] = params;
        return j;
    }

    static ShdpTcnModel from_json(const nlohmann::json& j) {
        ShdpTcnModel model(j.at("config").get<ModelConfig>());
        const auto& params = j.at("params");
        for (auto& [name, p] : model.parameters()) {
            if (!params.contains(name))
                throw std::runtime_error("model file missing parameter '" + name + "'");
            const auto& entry = params.at(name);
            const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
            if (shape != p->shape())
                throw std::runtime_error("parameter '" + name + "' shape " +
                                         Tensor::shape_string(shape) +
                                         " does not match config-derived shape " +
                                         Tensor::shape_string(p->shape()));
            p->data() = entry.at("values").get<std::vector<double>>();
            if (p->data().size() != p->numel())
                throw std::runtime_error("parameter '" + name + "' value count mismatch");
        }
        return model;
    }

    /// Per-convolution dilations of the block stack (two convs per block).
    std::vector<std::size_t> conv_dilations() const {
        std::vector<std::size_t> out;
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            const std::size_t d = std::size_t{1} << b;
            out.push_back(d);
            out.push_back(d);
        }
        return out;
    }

    std::size_t model_receptive_field() const {
        return receptive_field(config_.kernel_size, conv_dilations());
    }

private:
    ModelConfig config_;
    std::optional<SelfAttentionLayer> attention_;
    std::vector<ResidualBlock> blocks_;
    LinearLayer head_;
};

}  // namespace shdptcn
