#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "shdptcn/model.hpp"

using namespace shdptcn;

namespace {

ModelConfig toy_config() {
    ModelConfig c;
    c.window_len = 8;
    c.topic_dim = 1;
    c.channels = 2;
    c.kernel_size = 2;
    c.num_blocks = 1;
    c.dropout_rate = 0.0;
    c.use_attention = true;
    c.seed = 99;
    return c;
}

void zero_convs(ShdpTcnModel& model) {
    for (auto& [name, p] : model.parameters()) {
        if (name.find("block") != 0) continue;
        if (name.find(".gain") != std::string::npos ||
            name.find(".bias") != std::string::npos)
            std::fill(p->data().begin(), p->data().end(), 0.0);
        if (name.find(".kernel_v") != std::string::npos)
            std::fill(p->data().begin(), p->data().end(), 1.0);  // direction only, gain 0
    }
}

}  // namespace

TEST_CASE("build produces the configured structure deterministically") {
    ModelConfig c;  // defaults
    ShdpTcnModel m(c);
    REQUIRE(m.blocks().size() == 3);
    CHECK(m.blocks()[0].conv1.dilation == 1);
    CHECK(m.blocks()[1].conv1.dilation == 2);
    CHECK(m.blocks()[2].conv1.dilation == 4);

    ShdpTcnModel m2(c);
    for (std::size_t i = 0; i < m.parameters().size(); ++i)
        CHECK(m.parameters()[i].second->data() == m2.parameters()[i].second->data());
}

TEST_CASE("invalid configs are rejected by field") {
    ModelConfig c;
    c.window_len = 1;
    CHECK_THROWS_WITH_AS(ShdpTcnModel{c}, doctest::Contains("window_len"),
                         std::invalid_argument);
    c = ModelConfig{};
    c.kernel_size = 0;
    CHECK_THROWS_WITH_AS(ShdpTcnModel{c}, doctest::Contains("kernel_size"),
                         std::invalid_argument);
    c = ModelConfig{};
    c.dropout_rate = 1.0;
    CHECK_THROWS_WITH_AS(ShdpTcnModel{c}, doctest::Contains("dropout_rate"),
                         std::invalid_argument);
}

TEST_CASE("pointwise degenerate model has receptive field 1") {
    ModelConfig c = toy_config();
    c.num_blocks = 1;
    c.kernel_size = 1;
    ShdpTcnModel m(c);
    CHECK(m.model_receptive_field() == 1);
}

TEST_CASE("assemble_input layouts") {
    ModelConfig c = toy_config();
    c.window_len = 3;
    c.topic_dim = 0;
    ShdpTcnModel m(c);
    Value in = m.assemble_input({1, 2, 3}, {});
    CHECK(in->shape() == std::vector<std::size_t>{3, 1});
    CHECK(in->data() == std::vector<double>{1, 2, 3});

    ModelConfig c2 = toy_config();
    c2.window_len = 2;
    c2.topic_dim = 2;
    ShdpTcnModel m2(c2);
    Value in2 = m2.assemble_input({1, 2}, {5, 6});
    CHECK(in2->shape() == std::vector<std::size_t>{2, 3});
    CHECK(in2->data() == std::vector<double>{1, 5, 6, 2, 5, 6});

    CHECK_THROWS_AS(m2.assemble_input({1}, {5, 6}), std::invalid_argument);

    // paper defaults: 100 heat + 50 topic dims
    ModelConfig c3;
    CHECK(c3.window_len + c3.topic_dim == 150);
}

TEST_CASE("forward with zero convs reduces to head on last input step") {
    ModelConfig c = toy_config();
    c.use_attention = false;
    c.topic_dim = 0;
    c.channels = 1;  // identity skip path
    ShdpTcnModel m(c);
    zero_convs(m);
    std::vector<double> window{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
    Tape tape;
    DropoutState drop(0.0, false, 0);
    const double out = m.forward(tape, m.assemble_input(window, {}), drop)->at(0);
    const double w = m.head().weight->at(0), b = m.head().bias->at(0);
    CHECK(out == doctest::Approx(w * window.back() + b));
}

TEST_CASE("prediction invariant outside the receptive field") {
    ModelConfig c;
    c.window_len = 40;
    c.topic_dim = 0;
    c.channels = 2;
    c.dropout_rate = 0.0;
    c.use_attention = false;  // attention is global; only the TCN is local
    ShdpTcnModel m(c);
    // all-positive kernels and biases keep every relu active, so the
    // farthest kernel tap genuinely reaches the output
    for (auto& [name, p] : m.parameters()) {
        if (name.find(".kernel_v") != std::string::npos)
            for (auto& v : p->data()) v = 0.3;
        if (name.find(".gain") != std::string::npos)
            for (auto& v : p->data()) v = 1.0;
        if (name.find(".bias") != std::string::npos)
            for (auto& v : p->data()) v = 0.1;
    }
    const std::size_t rf = m.model_receptive_field();
    REQUIRE(rf < c.window_len);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<double> window(c.window_len);
    for (auto& v : window) v = dist(rng);
    DropoutState drop(0.0, false, 0);
    Tape t1;
    const double base = m.forward(t1, m.assemble_input(window, {}), drop)->at(0);

    auto perturbed = window;
    for (std::size_t i = 0; i + rf < window.size(); ++i) perturbed[i] += 3.0;
    Tape t2;
    CHECK(m.forward(t2, m.assemble_input(perturbed, {}), drop)->at(0) == base);

    auto inside = window;
    inside[window.size() - rf] += 3.0;
    Tape t3;
    CHECK(m.forward(t3, m.assemble_input(inside, {}), drop)->at(0) != base);
}

TEST_CASE("eval forward twice is identical") {
    ShdpTcnModel m(toy_config());
    std::vector<double> window{1, 2, 3, 4, 5, 6, 7, 8};
    Normalizer norm{0.0, 10.0};
    Prediction p1 = m.predict(window, {0.5}, norm);
    Prediction p2 = m.predict(window, {0.5}, norm);
    CHECK(p1.point == p2.point);
    CHECK(p1.denormalized == doctest::Approx(p1.point * 10.0));
}

TEST_CASE("end-to-end gradient check on toy config") {
    ModelConfig c = toy_config();
    ShdpTcnModel m(c);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(0.1, 0.9);
    std::vector<double> window(c.window_len);
    for (auto& v : window) v = dist(rng);
    const double target = 0.4;

    for (auto& [name, p] : m.parameters()) {
        // finite differences against analytic grads through the real parameter
        Tape tape;
        DropoutState drop(0.0, false, 0);
        Value pred = m.forward(tape, m.assemble_input(window, {0.3}), drop);
        Value diff = sub(tape, pred, make_value({1, 1}, {target}));
        Value loss = elementwise_mul(tape, diff, diff);
        for (auto& [n2, q] : m.parameters()) q->zero_grad();
        tape.backward(loss);

        const double eps = 1e-5;
        for (std::size_t i = 0; i < p->numel(); ++i) {
            const double saved = p->at(i);
            p->at(i) = saved + eps;
            Tape tp;
            const double fp =
                [&] {
                    DropoutState d(0.0, false, 0);
                    Value pr = m.forward(tp, m.assemble_input(window, {0.3}), d);
                    Value df = sub(tp, pr, make_value({1, 1}, {target}));
                    return elementwise_mul(tp, df, df);
                }()
                    ->at(0);
            p->at(i) = saved - eps;
            Tape tm;
            const double fm =
                [&] {
                    DropoutState d(0.0, false, 0);
                    Value pr = m.forward(tm, m.assemble_input(window, {0.3}), d);
                    Value df = sub(tm, pr, make_value({1, 1}, {target}));
                    return elementwise_mul(tm, df, df);
                }()
                    ->at(0);
            p->at(i) = saved;
            const double numeric = (fp - fm) / (2 * eps);
            const double analytic = p->grad()[i];
            const double rel =
                std::abs(numeric - analytic) / std::max(std::abs(numeric) + std::abs(analytic), 1e-8);
            CHECK(rel <= 1e-3);
        }
    }
}

TEST_CASE("parameter count matches the closed form") {
    for (ModelConfig c : {ModelConfig{}, toy_config()}) {
        ShdpTcnModel m(c);
        CHECK(m.parameter_count() == ShdpTcnModel::expected_parameter_count(c));
    }
    // plain-TCN ablation drops exactly the attention parameters
    ModelConfig full = toy_config();
    ModelConfig plain = full;
    plain.use_attention = false;
    const std::size_t d = full.input_channels();
    CHECK(ShdpTcnModel::expected_parameter_count(full) ==
          ShdpTcnModel::expected_parameter_count(plain) + 3 * d * d);
}

TEST_CASE("save/load round trip and shape validation") {
    ShdpTcnModel m(toy_config());
    nlohmann::json j = m.to_json();
    ShdpTcnModel loaded = ShdpTcnModel::from_json(j);
    Normalizer norm{0, 1};
    std::vector<double> window{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
    CHECK(m.predict(window, {0.5}, norm).point == loaded.predict(window, {0.5}, norm).point);

    // config/shape disagreement refuses to load
    nlohmann::json bad = j;
    bad["config"]["channels"] = 5;
    CHECK_THROWS(ShdpTcnModel::from_json(bad));
}

TEST_CASE("predict_horizon") {
    ModelConfig c = toy_config();
    c.topic_dim = 0;
    ShdpTcnModel m(c);
    HeatSeries series;
    series.topic = "t";
    series.start_month = parse_month("2020-01");
    series.values = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    Normalizer norm{0.0, 10.0};

    auto one = m.predict_horizon(series, {}, norm, 1);
    REQUIRE(one.size() == 1);
    std::vector<double> window(series.values.end() - 8, series.values.end());
    for (auto& v : window) v = norm.normalize(v);
    CHECK(one[0].point == m.predict(window, {}, norm).point);

    auto three = m.predict_horizon(series, {}, norm, 3);
    CHECK(three.size() == 3);
    CHECK(three[0].point == one[0].point);

    HeatSeries tiny = series;
    tiny.values.resize(4);
    CHECK_THROWS_AS(m.predict_horizon(tiny, {}, norm, 1), std::invalid_argument);
}
