#ifndef FUNDUS_METRICS_HPP
#define FUNDUS_METRICS_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fundus {

/// Paired actual/predicted ages in years. Construction validates: equal,
/// nonzero lengths and finite entries.
class EvalBatch {
public:
    EvalBatch(std::vector<double> actual, std::vector<double> predicted);

    std::span<const double> actual() const { return actual_; }
    std::span<const double> predicted() const { return predicted_; }
    std::size_t size() const { return actual_.size(); }

    /// |a_i - p_i|
    std::vector<double> distances() const;

private:
    std::vector<double> actual_;
    std::vector<double> predicted_;
};

struct RegressionReport {
    double mae = 0.0;
    double mse = 0.0;
    // NaN when every actual value is equal (zero total sum of squares).
    double r_squared = 0.0;
    double rss = 0.0;
    double tss = 0.0;
};

RegressionReport regression_metrics(const EvalBatch& batch);

/// Percentage of samples whose absolute error is at most `j` years.
double cs_score(const EvalBatch& batch, int j);

/// Mean of CS_0 .. CS_J.
double mcs_score(const EvalBatch& batch, int max_j);

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t tn = 0;
    std::int64_t fn = 0;

    std::int64_t total() const { return tp + fp + tn + fn; }
};

enum class F1Variant {
    Paper,     // harmonic mean of specificity and sensitivity
    Standard,  // harmonic mean of precision (PPV) and sensitivity
};

struct GenderReport {
    double sensitivity = 0.0;
    double specificity = 0.0;
    double ppv = 0.0;
    double npv = 0.0;
    double f1 = 0.0;
    double accuracy_percent = 0.0;
};

GenderReport classification_report(const ConfusionCounts& counts, F1Variant variant = F1Variant::Paper);

enum class Gender { Male, Female };

std::string to_string(Gender g);
/// Accepts male/female, m/f, man/woman in any case; anything else throws.
Gender parse_gender(const std::string& token);

/// Tallies with `male` as the positive class.
ConfusionCounts confusion_counts(std::span<const Gender> actual, std::span<const Gender> predicted);

struct AgePrediction {
    std::string sample_id;
    double actual = 0.0;
    double predicted = 0.0;
};

struct GenderPrediction {
    std::string sample_id;
    Gender actual = Gender::Male;
    Gender predicted = Gender::Male;
};

/// Reads `sample_id,actual_age,predicted_age`.
std::vector<AgePrediction> read_age_predictions(const std::filesystem::path& path);
/// Reads `sample_id,actual_gender,predicted_gender`.
std::vector<GenderPrediction> read_gender_predictions(const std::filesystem::path& path);

void write_age_predictions(const std::filesystem::path& path, std::span<const AgePrediction> rows);
void write_gender_predictions(const std::filesystem::path& path, std::span<const GenderPrediction> rows);

EvalBatch to_batch(std::span<const AgePrediction> rows);

}  // namespace fundus

#endif
