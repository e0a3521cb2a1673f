#pragma once

#include <array>
#include <iomanip>
#include <numeric>

#include "shdptcn/model.hpp"

namespace shdptcn {

struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t epochs = 32;
    double learning_rate = 1e-3;
    std::string optimizer = "adam";  // "adam" or "sgd"
    std::uint64_t shuffle_seed = 1;

    void validate() const {
        if (batch_size < 1) throw std::invalid_argument("TrainConfig.batch_size must be >= 1");
        if (epochs < 1) throw std::invalid_argument("TrainConfig.epochs must be >= 1");
        if (learning_rate < 0.0)
            throw std::invalid_argument("TrainConfig.learning_rate must be >= 0");
        if (optimizer != "adam" && optimizer != "sgd")
            throw std::invalid_argument("TrainConfig.optimizer must be 'adam' or 'sgd'");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"batch_size", c.batch_size},
         {"epochs", c.epochs},
         {"learning_rate", c.learning_rate},
         {"optimizer", c.optimizer},
         {"shuffle_seed", c.shuffle_seed}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.optimizer = j.value("optimizer", c.optimizer);
    c.shuffle_seed = j.value("shuffle_seed", c.shuffle_seed);
}

/// Adam with the usual bias correction; beta = (0.9, 0.999), eps = 1e-8.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Value> params, double lr)
        : params_(std::move(params)), lr_(lr) {
        for (const auto& p : params_) {
            m_.emplace_back(p->numel(), 0.0);
            v_.emplace_back(p->numel(), 0.0);
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            for (std::size_t k = 0; k < p.numel(); ++k) {
                const double g = p.grad()[k];
                m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g;
                v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g * g;
                p.data()[k] -= lr_ * (m_[i][k] / bc1) / (std::sqrt(v_[i][k] / bc2) + eps_);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

private:
    std::vector<Value> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
};

class SgdOptimizer {
public:
    SgdOptimizer(std::vector<Value> params, double lr) : params_(std::move(params)), lr_(lr) {}

    void step() {
        for (auto& p : params_)
            for (std::size_t k = 0; k < p->numel(); ++k) p->data()[k] -= lr_ * p->grad()[k];
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

private:
    std::vector<Value> params_;
    double lr_;
};

inline double mse_loss(const std::vector<double>& pred, const std::vector<double>& target) {
    if (pred.size() != target.size())
        throw std::invalid_argument("mse_loss: length mismatch " + std::to_string(pred.size()) +
                                    " vs " + std::to_string(target.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        s += d * d;
    }
    return s / static_cast<double>(pred.size());
}

struct TrainingHistory {
    std::vector<double> epoch_losses;  // mean training loss per epoch
};

/// Mini-batch training on MSE with per-epoch shuffling. Deterministic under
/// fixed model seed and shuffle_seed. Aborts on non-finite loss.
inline TrainingHistory train(ShdpTcnModel& model, const std::vector<WindowSample>& samples,
                             const TrainConfig& cfg) {
    cfg.validate();
    if (samples.empty()) throw std::invalid_argument("train: empty training set");

    std::vector<Value> params;
    for (auto& [name, p] : model.parameters()) params.push_back(p);
    std::optional<AdamOptimizer> adam;
    std::optional<SgdOptimizer> sgd;
    if (cfg.optimizer == "adam")
        adam.emplace(params, cfg.learning_rate);
    else
        sgd.emplace(params, cfg.learning_rate);
    auto step = [&] { adam ? adam->step() : sgd->step(); };
    auto zero_grad = [&] { adam ? adam->zero_grad() : sgd->zero_grad(); };

    std::mt19937_64 shuffle_rng(cfg.shuffle_seed);
    DropoutState drop(model.config().dropout_rate, true, cfg.shuffle_seed ^ 0x9e3779b97f4a7c15ull);

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);

    TrainingHistory history;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            Tape tape;
            Value total;
            for (std::size_t i = start; i < end; ++i) {
                const auto& s = samples[order[i]];
                Value pred =
                    model.forward(tape, model.assemble_input(s.heat_window, s.topic_feature), drop);
                Value diff = sub(tape, pred, make_value({1, 1}, {s.target}));
                Value sq = elementwise_mul(tape, diff, diff);
                total = total ? add(tape, total, sq) : sq;
            }
            Value loss = scale(tape, total, 1.0 / static_cast<double>(end - start));
            if (!std::isfinite(loss->at(0)))
                throw std::runtime_error("train: non-finite loss " + std::to_string(loss->at(0)) +
                                         " at epoch " + std::to_string(epoch) + ", batch " +
                                         std::to_string(batches));
            zero_grad();
            tape.backward(loss);
            step();
            epoch_loss += loss->at(0);
            ++batches;
        }
        history.epoch_losses.push_back(epoch_loss / static_cast<double>(batches));
    }
    return history;
}

// ---------------------------------------------------------------------
// Trend classification protocol
// ---------------------------------------------------------------------

enum class TrendLabel { rise, fall, stable };

inline const char* trend_name(TrendLabel l) {
    switch (l) {
        case TrendLabel::rise: return "rise";
        case TrendLabel::fall: return "fall";
        default: return "stable";
    }
}

inline TrendLabel label_transition(double prev, double next, double epsilon) {
    if (std::abs(next - prev) <= epsilon) return TrendLabel::stable;
    return next > prev ? TrendLabel::rise : TrendLabel::fall;
}

/// Labels for consecutive transitions of a series: label_t for t >= 1.
inline std::vector<TrendLabel> trend_labels(const std::vector<double>& values, double epsilon) {
    if (values.size() < 2) throw std::invalid_argument("trend_labels: need at least 2 values");
    if (epsilon < 0.0) throw std::invalid_argument("trend_labels: epsilon must be >= 0");
    std::vector<TrendLabel> out;
    out.reserve(values.size() - 1);
    for (std::size_t i = 1; i < values.size(); ++i)
        out.push_back(label_transition(values[i - 1], values[i], epsilon));
    return out;
}

/// Default threshold: 5% of the training targets' standard deviation.
inline double default_trend_epsilon(const std::vector<WindowSample>& train_samples) {
    if (train_samples.empty()) return 0.0;
    double mean = 0.0;
    for (const auto& s : train_samples) mean += s.target;
    mean /= static_cast<double>(train_samples.size());
    double var = 0.0;
    for (const auto& s : train_samples) var += (s.target - mean) * (s.target - mean);
    var /= static_cast<double>(train_samples.size());
    return 0.05 * std::sqrt(var);
}

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

struct ClassificationReport {
    std::array<std::array<std::size_t, 3>, 3> confusion{};  // [true][pred], rise/fall/stable
    std::array<ClassMetrics, 3> per_class;
    double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
};

inline ClassificationReport classification_metrics(const std::vector<TrendLabel>& pred,
                                                   const std::vector<TrendLabel>& truth) {
    if (pred.size() != truth.size() || pred.empty())
        throw std::invalid_argument("classification_metrics: label lists must be equal nonempty");
    ClassificationReport r;
    for (std::size_t i = 0; i < pred.size(); ++i)
        ++r.confusion[static_cast<int>(truth[i])][static_cast<int>(pred[i])];
    std::size_t supported = 0;
    for (int c = 0; c < 3; ++c) {
        std::size_t tp = r.confusion[c][c], fp = 0, fn = 0;
        for (int o = 0; o < 3; ++o) {
            if (o == c) continue;
            fp += r.confusion[o][c];
            fn += r.confusion[c][o];
        }
        auto& m = r.per_class[c];
        m.support = tp + fn;
        m.precision = (tp + fp) ? static_cast<double>(tp) / (tp + fp) : 0.0;
        m.recall = (tp + fn) ? static_cast<double>(tp) / (tp + fn) : 0.0;
        m.f1 = (m.precision + m.recall) > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
        if (m.support > 0) {
            ++supported;
            r.macro_precision += m.precision;
            r.macro_recall += m.recall;
            r.macro_f1 += m.f1;
        }
    }
    if (supported > 0) {
        r.macro_precision /= supported;
        r.macro_recall /= supported;
        r.macro_f1 /= supported;
    }
    return r;
}

// ---------------------------------------------------------------------
// Evaluation against baselines
// ---------------------------------------------------------------------

struct ForecastMetrics {
    double mse = 0.0;
    double mae = 0.0;
    ClassificationReport trends;
};

struct EvalReport {
    ForecastMetrics model;
    ForecastMetrics persistence;
    ForecastMetrics seasonal_naive;
    double trend_epsilon = 0.0;
    std::size_t test_samples = 0;
};

inline ForecastMetrics forecast_metrics(const std::vector<double>& preds,
                                        const std::vector<WindowSample>& samples,
                                        double epsilon) {
    ForecastMetrics m;
    std::vector<double> targets;
    std::vector<TrendLabel> pred_labels, true_labels;
    double mae = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double last = samples[i].heat_window.back();
        targets.push_back(samples[i].target);
        mae += std::abs(preds[i] - samples[i].target);
        pred_labels.push_back(label_transition(last, preds[i], epsilon));
        true_labels.push_back(label_transition(last, samples[i].target, epsilon));
    }
    m.mse = mse_loss(preds, targets);
    m.mae = mae / static_cast<double>(samples.size());
    m.trends = classification_metrics(pred_labels, true_labels);
    return m;
}

/// One-step-ahead evaluation (eval mode) on every test window, plus the
/// persistence and seasonal-naive baselines on the same samples. The
/// seasonal baseline predicts the value 12 months before the target and
/// falls back to persistence when the window is shorter than 12.
inline EvalReport evaluate(const ShdpTcnModel& model, const std::vector<WindowSample>& test,
                           double trend_epsilon) {
    if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
    EvalReport report;
    report.trend_epsilon = trend_epsilon;
    report.test_samples = test.size();

    std::vector<double> model_preds, persist_preds, seasonal_preds;
    for (const auto& s : test) {
        Tape tape;
        DropoutState drop(model.config().dropout_rate, false, 0);
        model_preds.push_back(
            model.forward(tape, model.assemble_input(s.heat_window, s.topic_feature), drop)->at(0));
        persist_preds.push_back(s.heat_window.back());
        seasonal_preds.push_back(s.heat_window.size() >= 12
                                     ? s.heat_window[s.heat_window.size() - 12]
                                     : s.heat_window.back());
    }
    report.model = forecast_metrics(model_preds, test, trend_epsilon);
    report.persistence = forecast_metrics(persist_preds, test, trend_epsilon);
    report.seasonal_naive = forecast_metrics(seasonal_preds, test, trend_epsilon);
    return report;
}

// ---------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------

inline nlohmann::json metrics_to_json(const ForecastMetrics& m) {
    nlohmann::json per_class = nlohmann::json::object();
    static const char* names[3] = {"rise", "fall", "stable"};
    for (int c = 0; c < 3; ++c)
        per_class[names[c]] = {{"precision", m.trends.per_class[c].precision},
                               {"recall", m.trends.per_class[c].recall},
                               {"f1", m.trends.per_class[c].f1},
                               {"support", m.trends.per_class[c].support}};
    return {{"mse", m.mse},
            {"mae", m.mae},
            {"macro_precision", m.trends.macro_precision},
            {"macro_recall", m.trends.macro_recall},
            {"macro_f1", m.trends.macro_f1},
            {"per_class", per_class},
            {"confusion_matrix", m.trends.confusion}};
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    return {{"model", metrics_to_json(r.model)},
            {"persistence", metrics_to_json(r.persistence)},
            {"seasonal_naive", metrics_to_json(r.seasonal_naive)},
            {"trend_epsilon", r.trend_epsilon},
            {"test_samples", r.test_samples}};
}

/// Text table in the comparison layout: one row per forecaster, macro
/// precision / recall / F1 columns.
inline std::string report_table(const std::vector<std::pair<std::string, ForecastMetrics>>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(18) << "model" << std::right << std::setw(11) << "precision"
       << std::setw(9) << "recall" << std::setw(9) << "F1" << std::setw(12) << "MSE"
       << "\n";
    os << std::string(59, '-') << "\n";
    os << std::fixed << std::setprecision(4);
    for (const auto& [name, m] : rows)
        os << std::left << std::setw(18) << name << std::right << std::setw(11)
           << m.trends.macro_precision << std::setw(9) << m.trends.macro_recall << std::setw(9)
           << m.trends.macro_f1 << std::setw(12) << m.mse << "\n";
    return os.str();
}

}  // namespace shdptcn
