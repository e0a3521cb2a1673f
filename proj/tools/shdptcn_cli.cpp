// Command-line front end: synthesize or ingest topic-heat data, train the
// forecaster, evaluate against baselines, roll out forecasts, and run the
// gradient verification suite.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "shdptcn/train.hpp"

namespace fs = std::filesystem;
using namespace shdptcn;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    json j;
    in >> j;
    return j;
}

// Write-then-rename so partially written artifacts never appear.
void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out << content;
    }
    fs::rename(tmp, path);
}

void write_json_atomic(const std::string& path, const json& j) {
    write_file_atomic(path, j.dump(2) + "\n");
}

TopicFeatureSource load_feature_source(const std::string& embeddings_path,
                                       std::size_t topic_dim, std::uint64_t seed) {
    TopicFeatureSource src(topic_dim, seed, true);
    if (!embeddings_path.empty()) {
        json j = read_json_file(embeddings_path);
        for (auto& [topic, vec] : j.items())
            src.add(topic, vec.get<std::vector<double>>());
    }
    return src;
}

struct TrainInputs {
    std::string series_csv;
    std::string embeddings;
    std::string topic;  // overrides the series topic name when nonempty
    ModelConfig model_cfg;
    TrainConfig train_cfg;
    SplitSpec split;
};

json train_manifest(const TrainInputs& in, const std::string& model_out,
                    const std::string& loss_out) {
    json m;
    m["tool_version"] = kToolVersion;
    m["command"] = "train";
    m["model_config"] = in.model_cfg;
    m["train_config"] = in.train_cfg;
    m["split"] = {{"cutoff_month", month_to_string(in.split.cutoff_month)}};
    m["data"] = {{"series_csv", in.series_csv},
                 {"embeddings", in.embeddings},
                 {"topic", in.topic}};
    m["artifacts"] = {{"model", model_out}, {"loss_history", loss_out}};
    return m;
}

TrainInputs inputs_from_manifest(const json& m) {
    TrainInputs in;
    in.model_cfg = m.at("model_config").get<ModelConfig>();
    in.train_cfg = m.at("train_config").get<TrainConfig>();
    in.split.cutoff_month = parse_month(m.at("split").at("cutoff_month").get<std::string>());
    in.series_csv = m.at("data").at("series_csv").get<std::string>();
    in.embeddings = m.at("data").value("embeddings", "");
    in.topic = m.at("data").value("topic", "");
    return in;
}

int run_train(const TrainInputs& in, const std::string& model_out) {
    HeatSeries series = read_series_csv_file(in.series_csv);
    if (!in.topic.empty()) series.topic = in.topic;
    if (series.topic.empty()) series.topic = fs::path(in.series_csv).stem().string();

    auto features =
        load_feature_source(in.embeddings, in.model_cfg.topic_dim, in.model_cfg.seed);
    auto wd = make_windows(series, &features, in.model_cfg.window_len, in.model_cfg.topic_dim,
                           in.split);
    std::cerr << "train samples: " << wd.train.size() << ", test samples: " << wd.test.size()
              << "\n";

    ShdpTcnModel model(in.model_cfg);
    auto history = train(model, wd.train, in.train_cfg);

    json model_json = model.to_json();
    model_json["training_stats"] = {
        {"normalizer_min", wd.normalizer.min},
        {"normalizer_max", wd.normalizer.max},
        {"trend_epsilon", default_trend_epsilon(wd.train)},
        {"topic", series.topic},
        {"final_train_loss", history.epoch_losses.back()}};
    write_json_atomic(model_out, model_json);

    const std::string loss_out = model_out + ".loss_history.csv";
    std::ostringstream loss_csv;
    loss_csv << "epoch,mean_loss\n";
    loss_csv.precision(17);
    for (std::size_t e = 0; e < history.epoch_losses.size(); ++e)
        loss_csv << e + 1 << "," << history.epoch_losses[e] << "\n";
    write_file_atomic(loss_out, loss_csv.str());

    write_json_atomic(model_out + ".manifest.json", train_manifest(in, model_out, loss_out));
    std::cerr << "model written to " << model_out << " (final loss "
              << history.epoch_losses.back() << ")\n";
    return 0;
}

struct LoadedModel {
    ShdpTcnModel model;
    Normalizer normalizer;
    double trend_epsilon = 0.0;
    std::string topic;
};

LoadedModel load_model(const std::string& path) {
    json j = read_json_file(path);
    LoadedModel lm{ShdpTcnModel::from_json(j), {}, 0.0, ""};
    if (j.contains("training_stats")) {
        const auto& s = j["training_stats"];
        lm.normalizer.min = s.value("normalizer_min", 0.0);
        lm.normalizer.max = s.value("normalizer_max", 1.0);
        lm.trend_epsilon = s.value("trend_epsilon", 0.0);
        lm.topic = s.value("topic", "");
    }
    return lm;
}

bool check(const char* name, bool ok) {
    std::cout << (ok ? "PASS " : "FAIL ") << name << "\n";
    return ok;
}

int run_gradcheck() {
    std::mt19937_64 rng(2024);
    auto random_value = [&](std::vector<std::size_t> shape) {
        std::uniform_real_distribution<double> dist(0.2, 1.5);
        Value v = make_value(std::move(shape));
        for (auto& x : v->data()) x = dist(rng);
        return v;
    };
    bool all_ok = true;

    {
        Value b = random_value({4, 3});
        auto f = [&](Tape& t, const Value& x) { return sum(t, matmul(t, x, b)); };
        all_ok &= check("matmul", grad_check(f, random_value({5, 4}), 1e-5, 1e-4).passed(1e-4));
    }
    {
        // random linear functional; a plain mean of row-stochastic output
        // would be constant
        Value coeffs = random_value({3, 5});
        auto f = [&](Tape& t, const Value& x) {
            return sum(t, elementwise_mul(t, softmax_rows(t, x), coeffs));
        };
        all_ok &= check("softmax_rows", grad_check(f, random_value({3, 5}), 1e-5, 1e-4).passed(1e-4));
    }
    {
        auto f = [](Tape& t, const Value& x) { return sum(t, relu(t, x)); };
        all_ok &= check("relu", grad_check(f, random_value({6}), 1e-5, 1e-4).passed(1e-4));
    }
    {
        Value w = random_value({2, 2, 3});
        Value bias = random_value({2});
        auto f = [&](Tape& t, const Value& x) {
            return sum(t, causal_conv1d(t, x, w, bias, 2));
        };
        all_ok &= check("causal_conv1d", grad_check(f, random_value({2, 8}), 1e-5, 1e-4).passed(1e-4));
    }
    {
        Value g = random_value({2});
        auto f = [&](Tape& t, const Value& v) { return sum(t, weight_norm(t, v, g)); };
        all_ok &= check("weight_norm", grad_check(f, random_value({2, 2, 3}), 1e-5, 1e-4).passed(1e-4));
    }
    {
        SelfAttentionLayer layer(3, rng);
        auto f = [&](Tape& t, const Value& a) { return sum(t, layer.forward(t, a)); };
        all_ok &= check("self_attention", grad_check(f, random_value({4, 3}), 1e-5, 1e-4).passed(1e-4));
    }
    {
        ResidualBlock block(2, 2, 2, 1, 0.0, rng);
        DropoutState drop(0.0, false, 0);
        Value x = random_value({2, 5});
        auto f = [&](Tape& t, const Value& v) {
            block.conv1.kernel_v = v;
            return sum(t, block.forward(t, x, drop));
        };
        Value v0 = make_value(block.conv1.kernel_v->shape(), block.conv1.kernel_v->data());
        all_ok &= check("residual_block", grad_check(f, v0, 1e-5, 1e-3).passed(1e-3));
    }
    {
        ModelConfig c;
        c.window_len = 8;
        c.topic_dim = 1;
        c.channels = 2;
        c.num_blocks = 1;
        c.dropout_rate = 0.0;
        c.use_attention = true;
        ShdpTcnModel model(c);
        std::vector<double> window(8, 0.5);
        const auto params = model.parameters();
        bool ok = true;
        for (auto& [name, p] : params) {
            Tape tape;
            DropoutState drop(0.0, false, 0);
            Value pred = model.forward(tape, model.assemble_input(window, {0.3}), drop);
            Value diff = sub(tape, pred, make_value({1, 1}, {0.4}));
            for (auto& [n2, q] : params) q->zero_grad();
            tape.backward(elementwise_mul(tape, diff, diff));
            for (std::size_t i = 0; i < p->numel(); ++i) {
                const double eps = 1e-5, saved = p->at(i);
                auto eval = [&] {
                    Tape t;
                    DropoutState d(0.0, false, 0);
                    Value pr = model.forward(t, model.assemble_input(window, {0.3}), d);
                    Value df = sub(t, pr, make_value({1, 1}, {0.4}));
                    return elementwise_mul(t, df, df)->at(0);
                };
                p->at(i) = saved + eps;
                const double fp = eval();
                p->at(i) = saved - eps;
                const double fm = eval();
                p->at(i) = saved;
                const double numeric = (fp - fm) / (2 * eps), analytic = p->grad()[i];
                const double rel = std::abs(numeric - analytic) /
                                   std::max(std::abs(numeric) + std::abs(analytic), 1e-8);
                if (rel > 1e-3) ok = false;
            }
        }
        all_ok &= check("shdp_tcn_end_to_end", ok);
    }
    return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SHDP-TCN topic-heat forecaster"};
    app.require_subcommand(1);

    // generate ------------------------------------------------------
    auto* gen = app.add_subcommand("generate", "Write synthetic topic-heat series CSVs");
    std::string gen_spec, gen_out;
    gen->add_option("--spec", gen_spec, "synthetic spec JSON file")->required();
    gen->add_option("--out", gen_out, "output directory")->required();

    // ingest --------------------------------------------------------
    auto* ing = app.add_subcommand("ingest", "Build a monthly heat series from demand records");
    std::string ing_records, ing_topic, ing_out, ing_start, ing_end;
    ing->add_option("--records", ing_records, "records CSV (month,category_id,topic_words)")
        ->required();
    ing->add_option("--topic", ing_topic, "topic word to count")->required();
    ing->add_option("--out", ing_out, "output series CSV")->required();
    ing->add_option("--start", ing_start, "first month YYYY-MM (default: first record month)");
    ing->add_option("--end", ing_end, "last month YYYY-MM (default: last record month)");

    // train ---------------------------------------------------------
    auto* tr = app.add_subcommand("train", "Train the forecaster on a series CSV");
    std::string tr_series, tr_config, tr_model_out = "model.json", tr_manifest, tr_embeddings,
                tr_topic, tr_cutoff, tr_optimizer;
    std::size_t tr_window = 0, tr_topic_dim = 0, tr_channels = 0, tr_kernel = 0, tr_blocks = 0,
                tr_batch = 0, tr_epochs = 0;
    double tr_dropout = -1.0, tr_lr = -1.0;
    std::uint64_t tr_seed = 0, tr_shuffle_seed = 0;
    bool tr_no_attention = false;
    tr->add_option("--series", tr_series, "input series CSV");
    tr->add_option("--config", tr_config, "config JSON (model_config/train_config blocks)");
    tr->add_option("--from-manifest", tr_manifest, "re-run a previous training manifest");
    tr->add_option("--model-out", tr_model_out, "output model JSON")
        ->capture_default_str();
    tr->add_option("--embeddings", tr_embeddings, "topic embeddings JSON file");
    tr->add_option("--topic", tr_topic, "topic name override for the series");
    tr->add_option("--cutoff", tr_cutoff, "train/test cutoff month (default 2019-06)");
    tr->add_option("--window", tr_window, "history window length (default 100)");
    tr->add_option("--topic-dim", tr_topic_dim, "topic feature dimension, 0 disables (default 50)");
    tr->add_option("--channels", tr_channels, "hidden channels (default: input channel count)");
    tr->add_option("--kernel-size", tr_kernel, "convolution kernel size (default 3)");
    tr->add_option("--blocks", tr_blocks, "residual blocks, dilations 1,2,4,... (default 3)");
    tr->add_option("--dropout", tr_dropout, "dropout rate (default 0.1)");
    tr->add_flag("--no-attention", tr_no_attention, "disable the self-attention encoder");
    tr->add_option("--seed", tr_seed, "parameter init seed (default 7)");
    tr->add_option("--batch-size", tr_batch, "mini-batch size (default 32)");
    tr->add_option("--epochs", tr_epochs, "training epochs (default 32)");
    tr->add_option("--lr", tr_lr, "learning rate (default 1e-3)");
    tr->add_option("--optimizer", tr_optimizer, "adam or sgd (default adam)");
    tr->add_option("--shuffle-seed", tr_shuffle_seed, "epoch shuffle seed (default 1)");

    // evaluate ------------------------------------------------------
    auto* ev = app.add_subcommand("evaluate", "Evaluate a trained model against baselines");
    std::string ev_model, ev_series, ev_report = "report.json", ev_cutoff, ev_embeddings,
                ev_topic;
    ev->add_option("--model", ev_model, "trained model JSON")->required();
    ev->add_option("--series", ev_series, "series CSV to evaluate on")->required();
    ev->add_option("--report-out", ev_report, "output report JSON")->capture_default_str();
    ev->add_option("--cutoff", ev_cutoff, "train/test cutoff month (default 2019-06)");
    ev->add_option("--embeddings", ev_embeddings, "topic embeddings JSON file");
    ev->add_option("--topic", ev_topic, "topic name override for the series");

    // forecast ------------------------------------------------------
    auto* fc = app.add_subcommand("forecast", "Autoregressive multi-step forecast");
    std::string fc_model, fc_series, fc_out = "forecast.csv", fc_embeddings, fc_topic;
    std::size_t fc_steps = 1;
    fc->add_option("--model", fc_model, "trained model JSON")->required();
    fc->add_option("--series", fc_series, "series CSV providing the history window")->required();
    fc->add_option("--steps", fc_steps, "months to forecast")->capture_default_str();
    fc->add_option("--out", fc_out, "output forecast CSV")->capture_default_str();
    fc->add_option("--embeddings", fc_embeddings, "topic embeddings JSON file");
    fc->add_option("--topic", fc_topic, "topic name override for the series");

    // gradcheck -----------------------------------------------------
    app.add_subcommand("gradcheck",
                       "Run the finite-difference verification suite and print a table");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            json js = read_json_file(gen_spec);
            SyntheticSpec spec;
            spec.months = js.value("months", spec.months);
            spec.num_topics = js.value("num_topics", spec.num_topics);
            if (js.contains("start_month"))
                spec.start_month = parse_month(js["start_month"].get<std::string>());
            spec.base = js.value("base", spec.base);
            spec.slope_min = js.value("slope_min", spec.slope_min);
            spec.slope_max = js.value("slope_max", spec.slope_max);
            spec.amplitude = js.value("amplitude", spec.amplitude);
            spec.noise_level = js.value("noise_level", spec.noise_level);
            spec.seed = js.value("seed", spec.seed);

            auto data = generate_synthetic(spec);
            fs::create_directories(gen_out);
            if (data.series.empty()) {
                std::cerr << "warning: spec declares zero topics; nothing to write\n";
                return 0;
            }
            json truth = json::array();
            for (std::size_t i = 0; i < data.series.size(); ++i) {
                std::ostringstream csv;
                write_series_csv(csv, data.series[i]);
                write_file_atomic(gen_out + "/" + data.series[i].topic + ".csv", csv.str());
                const auto& c = data.components[i];
                truth.push_back({{"topic", c.topic},
                                 {"base", c.base},
                                 {"slope", c.slope},
                                 {"amplitude", c.amplitude},
                                 {"noise_level", c.noise_level}});
            }
            write_json_atomic(gen_out + "/ground_truth.json", truth);
            std::cerr << "wrote " << data.series.size() << " series to " << gen_out << "\n";
            return 0;
        }

        if (ing->parsed()) {
            auto parsed = read_records_csv(ing_records);
            for (int line : parsed.unknown_category_lines)
                std::cerr << "warning: unknown category id at line " << line << "\n";
            if (parsed.records.empty()) throw std::runtime_error("records CSV has no records");

            int lo = parsed.records.front().month, hi = lo;
            std::map<int, int> counts;
            for (const auto& r : parsed.records) {
                lo = std::min(lo, r.month);
                hi = std::max(hi, r.month);
                ++counts[r.category_id];
            }
            if (!ing_start.empty()) lo = parse_month(ing_start);
            if (!ing_end.empty()) hi = parse_month(ing_end);

            std::cout << "Category id\tC Num\tCategory\n";
            for (const auto& [id, n] : counts) {
                auto it = category_table().find(id);
                std::cout << id << "\t" << n << "\t"
                          << (it != category_table().end() ? it->second : "(unknown)") << "\n";
            }

            auto series = compute_heat_series(parsed.records, ing_topic, lo, hi);
            std::ostringstream csv;
            write_series_csv(csv, series);
            write_file_atomic(ing_out, csv.str());
            std::cerr << "series for '" << ing_topic << "' written to " << ing_out << "\n";
            return 0;
        }

        if (tr->parsed()) {
            TrainInputs in;
            if (!tr_manifest.empty()) {
                in = inputs_from_manifest(read_json_file(tr_manifest));
            } else if (!tr_config.empty()) {
                json cfg = read_json_file(tr_config);
                if (cfg.contains("model_config")) in.model_cfg = cfg["model_config"];
                if (cfg.contains("train_config")) in.train_cfg = cfg["train_config"];
                if (cfg.contains("cutoff_month"))
                    in.split.cutoff_month = parse_month(cfg["cutoff_month"].get<std::string>());
            }
            // explicit flags override config-file and manifest values
            if (!tr_series.empty()) in.series_csv = tr_series;
            if (tr->count("--embeddings")) in.embeddings = tr_embeddings;
            if (tr->count("--topic")) in.topic = tr_topic;
            if (tr->count("--cutoff")) in.split.cutoff_month = parse_month(tr_cutoff);
            if (tr->count("--window")) in.model_cfg.window_len = tr_window;
            if (tr->count("--topic-dim")) in.model_cfg.topic_dim = tr_topic_dim;
            if (tr->count("--channels")) in.model_cfg.channels = tr_channels;
            if (tr->count("--kernel-size")) in.model_cfg.kernel_size = tr_kernel;
            if (tr->count("--blocks")) in.model_cfg.num_blocks = tr_blocks;
            if (tr->count("--dropout")) in.model_cfg.dropout_rate = tr_dropout;
            if (tr_no_attention) in.model_cfg.use_attention = false;
            if (tr->count("--seed")) in.model_cfg.seed = tr_seed;
            if (tr->count("--batch-size")) in.train_cfg.batch_size = tr_batch;
            if (tr->count("--epochs")) in.train_cfg.epochs = tr_epochs;
            if (tr->count("--lr")) in.train_cfg.learning_rate = tr_lr;
            if (tr->count("--optimizer")) in.train_cfg.optimizer = tr_optimizer;
            if (tr->count("--shuffle-seed")) in.train_cfg.shuffle_seed = tr_shuffle_seed;
            if (in.series_csv.empty())
                throw std::runtime_error("train: --series (or a manifest) is required");
            return run_train(in, tr_model_out);
        }

        if (ev->parsed()) {
            LoadedModel lm = load_model(ev_model);
            HeatSeries series = read_series_csv_file(ev_series);
            series.topic = !ev_topic.empty() ? ev_topic
                           : !lm.topic.empty() ? lm.topic
                                               : fs::path(ev_series).stem().string();
            SplitSpec split;
            if (!ev_cutoff.empty()) split.cutoff_month = parse_month(ev_cutoff);
            const auto& cfg = lm.model.config();
            auto features = load_feature_source(ev_embeddings, cfg.topic_dim, cfg.seed);
            auto wd = make_windows(series, &features, cfg.window_len, cfg.topic_dim, split);
            if (wd.test.empty()) throw std::runtime_error("no test samples after the cutoff");

            const double eps =
                lm.trend_epsilon > 0.0 ? lm.trend_epsilon : default_trend_epsilon(wd.train);
            auto report = evaluate(lm.model, wd.test, eps);
            write_json_atomic(ev_report, report_to_json(report));
            std::cout << report_table({{"persistence", report.persistence},
                                       {"seasonal-naive", report.seasonal_naive},
                                       {"shdp-tcn", report.model}});
            return 0;
        }

        if (fc->parsed()) {
            LoadedModel lm = load_model(fc_model);
            HeatSeries series = read_series_csv_file(fc_series);
            series.topic = !fc_topic.empty() ? fc_topic
                           : !lm.topic.empty() ? lm.topic
                                               : fs::path(fc_series).stem().string();
            const auto& cfg = lm.model.config();
            auto features = load_feature_source(fc_embeddings, cfg.topic_dim, cfg.seed);
            std::vector<double> topic_feature;
            if (cfg.topic_dim > 0) topic_feature = features.lookup(series.topic).vector;

            auto preds = lm.model.predict_horizon(series, topic_feature, lm.normalizer, fc_steps);
            std::ostringstream csv;
            csv << "month,predicted_value\n";
            csv.precision(17);
            for (std::size_t s = 0; s < preds.size(); ++s)
                csv << month_to_string(series.last_month() + 1 + static_cast<int>(s)) << ","
                    << preds[s].denormalized << "\n";
            write_file_atomic(fc_out, csv.str());
            std::cerr << "forecast written to " << fc_out << "\n";
            return 0;
        }

        // gradcheck
        return run_gradcheck();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
