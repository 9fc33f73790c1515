#include "fundus/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>

#include "fundus/csv.hpp"
#include "fundus/error.hpp"

namespace fundus {

EvalBatch::EvalBatch(std::vector<double> actual, std::vector<double> predicted)
    : actual_(std::move(actual)), predicted_(std::move(predicted)) {
    if (actual_.empty()) fail(ErrorKind::InvalidInput, "evaluation batch is empty");
    if (actual_.size() != predicted_.size()) {
        fail(ErrorKind::InvalidInput, "actual and predicted lengths differ (" + std::to_string(actual_.size()) +
                                          " vs " + std::to_string(predicted_.size()) + ")");
    }
    for (std::size_t i = 0; i < actual_.size(); ++i) {
        if (!std::isfinite(actual_[i]) || !std::isfinite(predicted_[i])) {
            fail(ErrorKind::InvalidInput, "non-finite value at index " + std::to_string(i));
        }
    }
}

std::vector<double> EvalBatch::distances() const {
    std::vector<double> d(actual_.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::abs(actual_[i] - predicted_[i]);
    return d;
}

RegressionReport regression_metrics(const EvalBatch& batch) {
    const auto a = batch.actual();
    const auto p = batch.predicted();
    const double n = static_cast<double>(batch.size());

    double abs_sum = 0.0;
    double rss = 0.0;
    double mean_actual = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double r = a[i] - p[i];
        abs_sum += std::abs(r);
        rss += r * r;
        mean_actual += a[i];
    }
    mean_actual /= n;
    double tss = 0.0;
    for (const double v : a) tss += (v - mean_actual) * (v - mean_actual);

    RegressionReport report;
    report.mae = abs_sum / n;
    report.mse = rss / n;
    report.rss = rss;
    report.tss = tss;
    if (tss == 0.0) {
        warn("R^2 undefined: all actual values are equal");
        report.r_squared = std::numeric_limits<double>::quiet_NaN();
    } else {
        report.r_squared = 1.0 - rss / tss;
    }
    return report;
}

double cs_score(const EvalBatch& batch, int j) {
    if (j < 0) fail(ErrorKind::InvalidInput, "CS threshold must be nonnegative");
    const auto a = batch.actual();
    const auto p = batch.predicted();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::abs(a[i] - p[i]) <= static_cast<double>(j)) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(a.size());
}

double mcs_score(const EvalBatch& batch, int max_j) {
    if (max_j < 0) fail(ErrorKind::InvalidInput, "MCS range must be nonnegative");
    // One sort, then each threshold is a binary search.
    std::vector<double> d = batch.distances();
    std::sort(d.begin(), d.end());
    const double n = static_cast<double>(d.size());
    double total = 0.0;
    for (int j = 0; j <= max_j; ++j) {
        const auto hits = std::upper_bound(d.begin(), d.end(), static_cast<double>(j)) - d.begin();
        total += 100.0 * static_cast<double>(hits) / n;
    }
    return total / static_cast<double>(max_j + 1);
}

namespace {

double rate(std::int64_t num, std::int64_t den, const char* name) {
    if (den == 0) fail(ErrorKind::UndefinedMetric, std::string(name) + " has a zero denominator");
    return static_cast<double>(num) / static_cast<double>(den);
}

double harmonic(double x, double y, const char* name) {
    if (x + y == 0.0) fail(ErrorKind::UndefinedMetric, std::string(name) + " has a zero denominator");
    return 2.0 * x * y / (x + y);
}

}  // namespace

GenderReport classification_report(const ConfusionCounts& c, F1Variant variant) {
    if (c.tp < 0 || c.fp < 0 || c.tn < 0 || c.fn < 0) fail(ErrorKind::InvalidInput, "negative confusion count");
    if (c.total() < 1) fail(ErrorKind::InvalidInput, "confusion counts are all zero");

    GenderReport r;
    r.sensitivity = rate(c.tp, c.tp + c.fn, "sensitivity");
    r.specificity = rate(c.tn, c.tn + c.fp, "specificity");
    r.ppv = rate(c.tp, c.tp + c.fp, "ppv");
    r.npv = rate(c.tn, c.tn + c.fn, "npv");
    r.f1 = variant == F1Variant::Paper ? harmonic(r.specificity, r.sensitivity, "f1")
                                       : harmonic(r.ppv, r.sensitivity, "f1");
    r.accuracy_percent = 100.0 * static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    return r;
}

std::string to_string(Gender g) { return g == Gender::Male ? "male" : "female"; }

Gender parse_gender(const std::string& token) {
    std::string t;
    for (const char c : token) {
        if (!std::isspace(static_cast<unsigned char>(c))) t += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    if (t == "male" || t == "m" || t == "man") return Gender::Male;
    if (t == "female" || t == "f" || t == "woman") return Gender::Female;
    fail(ErrorKind::InvalidInput, "unrecognized gender token '" + token + "'");
}

ConfusionCounts confusion_counts(std::span<const Gender> actual, std::span<const Gender> predicted) {
    if (actual.size() != predicted.size()) fail(ErrorKind::InvalidInput, "gender label lengths differ");
    ConfusionCounts c;
    for (std::size_t i = 0; i < actual.size(); ++i) {
        const bool pos_actual = actual[i] == Gender::Male;
        const bool pos_pred = predicted[i] == Gender::Male;
        if (pos_actual && pos_pred) ++c.tp;
        else if (!pos_actual && pos_pred) ++c.fp;
        else if (!pos_actual && !pos_pred) ++c.tn;
        else ++c.fn;
    }
    return c;
}

namespace {

csv::Table read_with_header(const std::filesystem::path& path, const std::vector<std::string>& expected) {
    csv::Table t = csv::read(path);
    if (t.header != expected) {
        std::string want;
        for (const auto& h : expected) want += (want.empty() ? "" : ",") + h;
        fail(ErrorKind::Format, path.string() + ": expected header '" + want + "'");
    }
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        if (t.rows[r].size() != expected.size()) {
            fail(ErrorKind::Format, path.string() + ": line " + std::to_string(t.lines[r]) + " has " +
                                        std::to_string(t.rows[r].size()) + " fields");
        }
    }
    return t;
}

double parse_age(const std::string& text, const std::filesystem::path& path, int line) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size() && std::isfinite(v)) return v;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::Format, path.string() + ": line " + std::to_string(line) + " has non-numeric age '" + text + "'");
}

}  // namespace

std::vector<AgePrediction> read_age_predictions(const std::filesystem::path& path) {
    const auto t = read_with_header(path, {"sample_id", "actual_age", "predicted_age"});
    std::vector<AgePrediction> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        out.push_back({t.rows[r][0], parse_age(t.rows[r][1], path, t.lines[r]), parse_age(t.rows[r][2], path, t.lines[r])});
    }
    return out;
}

std::vector<GenderPrediction> read_gender_predictions(const std::filesystem::path& path) {
    const auto t = read_with_header(path, {"sample_id", "actual_gender", "predicted_gender"});
    std::vector<GenderPrediction> out;
    for (const auto& row : t.rows) out.push_back({row[0], parse_gender(row[1]), parse_gender(row[2])});
    return out;
}

void write_age_predictions(const std::filesystem::path& path, std::span<const AgePrediction> rows) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out.precision(17);
    out << "sample_id,actual_age,predicted_age\n";
    for (const auto& r : rows) out << csv::escape(r.sample_id) << ',' << r.actual << ',' << r.predicted << '\n';
}

void write_gender_predictions(const std::filesystem::path& path, std::span<const GenderPrediction> rows) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << "sample_id,actual_gender,predicted_gender\n";
    for (const auto& r : rows) {
        out << csv::escape(r.sample_id) << ',' << to_string(r.actual) << ',' << to_string(r.predicted) << '\n';
    }
}

EvalBatch to_batch(std::span<const AgePrediction> rows) {
    std::vector<double> a;
    std::vector<double> p;
    for (const auto& r : rows) {
        a.push_back(r.actual);
        p.push_back(r.predicted);
    }
    return EvalBatch(std::move(a), std::move(p));
}

}  // namespace fundus
