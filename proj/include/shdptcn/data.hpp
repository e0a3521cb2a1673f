#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace shdptcn {

// ---------------------------------------------------------------------
// Calendar months as flat indices (year*12 + month-1)
// ---------------------------------------------------------------------

inline int parse_month(const std::string& ym) {
    if (ym.size() != 7 || ym[4] != '-')
        throw std::invalid_argument("bad month '" + ym + "', expected YYYY-MM");
    const int year = std::stoi(ym.substr(0, 4));
    const int mon = std::stoi(ym.substr(5, 2));
    if (mon < 1 || mon > 12)
        throw std::invalid_argument("bad month '" + ym + "', month out of range");
    return year * 12 + (mon - 1);
}

inline std::string month_to_string(int idx) {
    const int year = idx / 12, mon = idx % 12 + 1;
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02d", year, mon);
    return buf;
}

// ---------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------

struct DemandRecord {
    int month = 0;  // flat month index
    int category_id = 0;
    std::vector<std::string> topic_words;
};

struct HeatSeries {
    std::string topic;
    int start_month = 0;
    std::vector<double> values;  // one per consecutive month, zero-filled gaps

    int month_at(std::size_t i) const { return start_month + static_cast<int>(i); }
    int last_month() const { return start_month + static_cast<int>(values.size()) - 1; }
};

struct TopicFeature {
    std::string topic;
    std::vector<double> vector;
};

struct WindowSample {
    std::vector<double> heat_window;     // normalized
    std::vector<double> topic_feature;   // empty when topic_dim == 0
    double target = 0.0;                 // normalized next-month heat
    int target_month = 0;
};

struct SplitSpec {
    int cutoff_month = parse_month("2019-06");  // last training target month
};

/// Min-max scaling to [0,1] fit on training data only. A zero range maps
/// everything to 0.5.
struct Normalizer {
    double min = 0.0;
    double max = 1.0;

    double normalize(double v) const {
        return max > min ? (v - min) / (max - min) : 0.5;
    }
    double denormalize(double v) const {
        return max > min ? v * (max - min) + min : min;
    }
};

/// Industry category table (id -> name) used by ingestion summaries.
inline const std::map<int, std::string>& category_table() {
    static const std::map<int, std::string> table = {
        {10000, "Manufacturing"},
        {10001, "Agriculture, forestry and fishery"},
        {10002, "Biomedical industry"},
        {10003, "Scientific Services"},
        {10004, "Electronic Information Industry"},
        {10005, "Water and environment industry"},
        {10006, "Education"},
        {10007, "New Materials and Energy"},
        {10008, "Light industry and petrochemical"},
        {10009, "industry Construction"},
    };
    return table;
}

// ---------------------------------------------------------------------
// Records CSV: header `month,category_id,topic_words`, topic_words
// `|`-separated, months as YYYY-MM.
// ---------------------------------------------------------------------

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(s);
    while (std::getline(is, field, sep)) out.push_back(field);
    if (!s.empty() && s.back() == sep) out.push_back("");
    return out;
}

struct RecordsCsv {
    std::vector<DemandRecord> records;
    std::vector<int> unknown_category_lines;
};

inline RecordsCsv read_records_csv(std::istream& in) {
    RecordsCsv result;
    std::string line;
    std::vector<int> bad_lines;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1 && line.rfind("month,", 0) == 0) continue;
        if (line.empty()) continue;
        auto fields = split(line, ',');
        if (fields.size() != 3) {
            bad_lines.push_back(lineno);
            continue;
        }
        DemandRecord rec;
        try {
            rec.month = parse_month(fields[0]);
            rec.category_id = std::stoi(fields[1]);
        } catch (const std::exception&) {
            bad_lines.push_back(lineno);
            continue;
        }
        for (auto& w : split(fields[2], '|'))
            if (!w.empty()) rec.topic_words.push_back(w);
        if (!category_table().count(rec.category_id))
            result.unknown_category_lines.push_back(lineno);
        result.records.push_back(std::move(rec));
    }
    if (!bad_lines.empty()) {
        std::ostringstream os;
        os << "malformed records CSV rows at line";
        if (bad_lines.size() > 1) os << "s";
        for (int l : bad_lines) os << " " << l;
        throw std::runtime_error(os.str());
    }
    return result;
}

inline RecordsCsv read_records_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open records CSV: " + path);
    return read_records_csv(in);
}

// ---------------------------------------------------------------------
// Series CSV: header `month,value`
// ---------------------------------------------------------------------

inline void write_series_csv(std::ostream& out, const HeatSeries& series) {
    out << "month,value\n";
    for (std::size_t i = 0; i < series.values.size(); ++i) {
        std::ostringstream v;
        v.precision(17);
        v << series.values[i];
        out << month_to_string(series.month_at(i)) << "," << v.str() << "\n";
    }
}

inline HeatSeries read_series_csv(std::istream& in, const std::string& topic = "") {
    HeatSeries series;
    series.topic = topic;
    std::string line;
    int lineno = 0;
    int prev_month = -1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (lineno == 1 && line.rfind("month,", 0) == 0) continue;
        if (line.empty()) continue;
        auto fields = split(line, ',');
        if (fields.size() != 2)
            throw std::runtime_error("malformed series CSV at line " + std::to_string(lineno));
        const int m = parse_month(fields[0]);
        if (series.values.empty())
            series.start_month = m;
        else if (m != prev_month + 1)
            throw std::runtime_error("series CSV months not consecutive at line " +
                                     std::to_string(lineno));
        prev_month = m;
        series.values.push_back(std::stod(fields[1]));
    }
    if (series.values.empty()) throw std::runtime_error("series CSV contains no data rows");
    return series;
}

inline HeatSeries read_series_csv_file(const std::string& path, const std::string& topic = "") {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open series CSV: " + path);
    return read_series_csv(in, topic);
}

// ---------------------------------------------------------------------
// Heat computation
// ---------------------------------------------------------------------

/// Monthly heat of a topic: count of records per month whose topic_words
/// contain the topic; months without records count 0.
inline HeatSeries compute_heat_series(const std::vector<DemandRecord>& records,
                                      const std::string& topic, int start_month, int end_month) {
    if (end_month < start_month)
        throw std::invalid_argument("compute_heat_series: empty month range");
    HeatSeries series;
    series.topic = topic;
    series.start_month = start_month;
    series.values.assign(static_cast<std::size_t>(end_month - start_month + 1), 0.0);
    for (const auto& rec : records) {
        if (rec.month < start_month || rec.month > end_month) continue;
        if (std::find(rec.topic_words.begin(), rec.topic_words.end(), topic) !=
            rec.topic_words.end())
            series.values[static_cast<std::size_t>(rec.month - start_month)] += 1.0;
    }
    return series;
}

/// Topic word with maximal frequency in the month; ties break to the
/// lexicographically smallest word. Empty month -> nullopt.
inline std::optional<std::string> dominant_topic(const std::vector<DemandRecord>& records,
                                                 int month) {
    std::map<std::string, int> counts;
    for (const auto& rec : records)
        if (rec.month == month)
            for (const auto& w : rec.topic_words) ++counts[w];
    if (counts.empty()) return std::nullopt;
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it)
        if (it->second > best->second) best = it;
    return best->first;
}

// ---------------------------------------------------------------------
// Topic features
// ---------------------------------------------------------------------

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

/// Deterministic stub embedding: topic_dim values in [-1,1] seeded from a
/// hash of the topic string. Stands in for the upstream topic-word model.
inline TopicFeature stub_topic_feature(const std::string& topic, std::size_t topic_dim,
                                       std::uint64_t seed = 0) {
    std::mt19937_64 rng(fnv1a64(topic) ^ seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    TopicFeature f;
    f.topic = topic;
    f.vector.resize(topic_dim);
    for (auto& v : f.vector) v = dist(rng);
    return f;
}

/// Embeddings-file lookup with optional stub fallback. `embeddings` maps
/// topic -> vector; pass nullptr to always use the stub.
class TopicFeatureSource {
public:
    TopicFeatureSource(std::size_t topic_dim, std::uint64_t seed, bool allow_stub = true)
        : topic_dim_(topic_dim), seed_(seed), allow_stub_(allow_stub) {}

    void add(const std::string& topic, std::vector<double> vec) {
        if (vec.size() != topic_dim_)
            throw std::invalid_argument("embedding for '" + topic + "' has dimension " +
                                        std::to_string(vec.size()) + ", expected " +
                                        std::to_string(topic_dim_));
        table_[topic] = std::move(vec);
    }

    TopicFeature lookup(const std::string& topic) const {
        auto it = table_.find(topic);
        if (it != table_.end()) return TopicFeature{topic, it->second};
        if (!allow_stub_ && !table_.empty())
            throw std::runtime_error("missing embedding for topic '" + topic + "'");
        return stub_topic_feature(topic, topic_dim_, seed_);
    }

    std::size_t dim() const { return topic_dim_; }

private:
    std::size_t topic_dim_;
    std::uint64_t seed_;
    bool allow_stub_;
    std::map<std::string, std::vector<double>> table_;
};

// ---------------------------------------------------------------------
// Supervised windows
// ---------------------------------------------------------------------

struct WindowedData {
    std::vector<WindowSample> train;
    std::vector<WindowSample> test;
    Normalizer normalizer;  // fit on the training split only
};

/// Maximum window length that still yields at least one training sample
/// for the given series and cutoff.
inline int max_feasible_window(const HeatSeries& series, const SplitSpec& split) {
    return split.cutoff_month - series.start_month;
}

/// Sliding windows of length window_len, stride 1; the target is the next
/// month's value. Samples with target month <= cutoff go to train, the
/// rest to test. Min-max normalization is fit on training windows+targets
/// and applied to both splits.
inline WindowedData make_windows(const HeatSeries& series,
                                 const TopicFeatureSource* features, std::size_t window_len,
                                 std::size_t topic_dim, const SplitSpec& split) {
    if (window_len < 2) throw std::invalid_argument("window_len must be >= 2");
    if (series.values.size() < window_len + 1)
        throw std::invalid_argument(
            "series too short: " + std::to_string(series.values.size()) + " months, need at least " +
            std::to_string(window_len + 1));

    const int first_target = series.start_month + static_cast<int>(window_len);
    if (first_target > split.cutoff_month) {
        const int max_w = max_feasible_window(series, split);
        throw std::invalid_argument(
            "window length " + std::to_string(window_len) +
            " leaves no training samples before cutoff " + month_to_string(split.cutoff_month) +
            "; maximum feasible window_len for this series is " + std::to_string(max_w));
    }

    WindowedData out;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    const std::size_t n_samples = series.values.size() - window_len;
    for (std::size_t i = 0; i < n_samples; ++i) {
        const int target_month = series.start_month + static_cast<int>(i + window_len);
        if (target_month <= split.cutoff_month)
            for (std::size_t j = i; j <= i + window_len; ++j) {
                lo = std::min(lo, series.values[j]);
                hi = std::max(hi, series.values[j]);
            }
    }
    out.normalizer = Normalizer{lo, hi};

    for (std::size_t i = 0; i < n_samples; ++i) {
        WindowSample s;
        s.target_month = series.start_month + static_cast<int>(i + window_len);
        s.heat_window.resize(window_len);
        for (std::size_t j = 0; j < window_len; ++j)
            s.heat_window[j] = out.normalizer.normalize(series.values[i + j]);
        s.target = out.normalizer.normalize(series.values[i + window_len]);
        if (topic_dim > 0 && features)
            s.topic_feature = features->lookup(series.topic).vector;
        if (s.target_month <= split.cutoff_month)
            out.train.push_back(std::move(s));
        else
            out.test.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------

struct SyntheticSpec {
    int months = 114;
    int num_topics = 1;
    int start_month = parse_month("2012-01");
    double base = 50.0;
    double slope_min = 0.0;
    double slope_max = 0.5;
    double amplitude = 5.0;
    double noise_level = 0.0;
    std::uint64_t seed = 42;
};

struct SyntheticComponents {
    std::string topic;
    double base = 0.0;
    double slope = 0.0;
    double amplitude = 0.0;
    double noise_level = 0.0;
};

struct SyntheticData {
    std::vector<HeatSeries> series;
    std::vector<SyntheticComponents> components;
};

/// value_t = max(0, round(base + slope*t + amplitude*sin(2*pi*t/12) + noise)).
inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    if (spec.months < 1) throw std::invalid_argument("synthetic spec: months must be >= 1");
    if (spec.num_topics < 0) throw std::invalid_argument("synthetic spec: num_topics must be >= 0");
    SyntheticData out;
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> slope_dist(spec.slope_min, spec.slope_max);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int k = 0; k < spec.num_topics; ++k) {
        SyntheticComponents comp;
        char name[32];
        std::snprintf(name, sizeof name, "topic_%02d", k);
        comp.topic = name;
        comp.base = spec.base;
        comp.slope = spec.slope_min == spec.slope_max ? spec.slope_min : slope_dist(rng);
        comp.amplitude = spec.amplitude;
        comp.noise_level = spec.noise_level;

        HeatSeries s;
        s.topic = comp.topic;
        s.start_month = spec.start_month;
        s.values.resize(static_cast<std::size_t>(spec.months));
        for (int t = 0; t < spec.months; ++t) {
            double v = comp.base + comp.slope * t +
                       comp.amplitude * std::sin(2.0 * M_PI * t / 12.0);
            if (spec.noise_level > 0.0) v += spec.noise_level * noise(rng);
            s.values[static_cast<std::size_t>(t)] = std::max(0.0, std::round(v));
        }
        out.series.push_back(std::move(s));
        out.components.push_back(std::move(comp));
    }
    return out;
}

}  // namespace shdptcn
