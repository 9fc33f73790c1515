#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "fundus/error.hpp"
#include "fundus/metrics.hpp"

using namespace fundus;
using doctest::Approx;

namespace {

// Independent threshold counter: explicit double loop, no sorting.
double brute_mcs(const std::vector<double>& a, const std::vector<double>& p, int max_j) {
    double sum = 0.0;
    for (int j = 0; j <= max_j; ++j) {
        int hits = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = a[i] > p[i] ? a[i] - p[i] : p[i] - a[i];
            if (!(d > j)) ++hits;
        }
        sum += 100.0 * hits / static_cast<double>(a.size());
    }
    return sum / (max_j + 1);
}

EvalBatch example_batch() { return EvalBatch({10, 20, 30}, {10, 21, 33}); }

}  // namespace

TEST_CASE("EvalBatch rejects empty, mismatched and non-finite input") {
    CHECK_THROWS_AS(EvalBatch({}, {}), Error);
    CHECK_THROWS_AS(EvalBatch({1, 2}, {1}), Error);
    CHECK_THROWS_AS(EvalBatch({1, NAN}, {1, 2}), Error);
    try {
        EvalBatch({}, {});
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InvalidInput);
    }
}

TEST_CASE("regression_metrics on hand-enumerated batches") {
    auto r = regression_metrics(example_batch());
    CHECK(r.mae == Approx(4.0 / 3.0));
    CHECK(r.mse == Approx(10.0 / 3.0));
    CHECK(r.rss == Approx(10.0));
    CHECK(r.tss == Approx(200.0));
    CHECK(r.r_squared == Approx(0.95));

    r = regression_metrics(EvalBatch({5, 7, 9}, {5, 7, 9}));
    CHECK(r.mae == 0.0);
    CHECK(r.mse == 0.0);
    CHECK(r.r_squared == 1.0);

    r = regression_metrics(EvalBatch({1, 2}, {2, 1}));
    CHECK(r.mae == Approx(1.0));
    CHECK(r.mse == Approx(1.0));
    CHECK(r.r_squared == Approx(-3.0));
}

TEST_CASE("regression_metrics reports NaN R^2 when all actual ages are equal") {
    const auto r = regression_metrics(EvalBatch({40, 40, 40}, {39, 40, 42}));
    CHECK(std::isnan(r.r_squared));
    CHECK(r.mae == Approx(1.0));
}

TEST_CASE("regression_metrics is invariant to joint permutation") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> age(1.0, 120.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> a(25), p(25);
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = age(rng);
            p[i] = age(rng);
        }
        std::vector<std::size_t> idx(a.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        std::vector<double> a2, p2;
        for (auto i : idx) {
            a2.push_back(a[i]);
            p2.push_back(p[i]);
        }
        const auto r1 = regression_metrics(EvalBatch(a, p));
        const auto r2 = regression_metrics(EvalBatch(a2, p2));
        CHECK(r1.mae == Approx(r2.mae).epsilon(1e-12));
        CHECK(r1.mse == Approx(r2.mse).epsilon(1e-12));
        CHECK(r1.r_squared == Approx(r2.r_squared).epsilon(1e-12));
    }
}

TEST_CASE("cs_score examples and threshold ties") {
    CHECK(cs_score(example_batch(), 1) == Approx(200.0 / 3.0));
    CHECK(cs_score(example_batch(), 3) == Approx(100.0));
    CHECK(cs_score(example_batch(), 0) == Approx(100.0 / 3.0));
    CHECK(cs_score(EvalBatch({3, 4}, {3, 4}), 0) == 100.0);
    // |a - p| == j counts as a hit.
    CHECK(cs_score(EvalBatch({10}, {12}), 2) == 100.0);
    CHECK_THROWS_AS(cs_score(example_batch(), -1), Error);
}

TEST_CASE("mcs_score examples") {
    CHECK(mcs_score(example_batch(), 2) == Approx(500.0 / 9.0));
    CHECK(mcs_score(EvalBatch({3, 50}, {3, 50}), 4) == 100.0);
    // Direct mean of the FCV-5 cumulative scores.
    CHECK((83.282 + 93.147 + 94.718) / 3.0 == Approx(90.382).epsilon(1e-5));
}

TEST_CASE("cs_score is monotone in j and saturates at the max distance") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> age(1.0, 120.0);
    std::uniform_int_distribution<int> len(1, 60);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = len(rng);
        std::vector<double> a(n), p(n);
        double max_d = 0.0;
        for (int i = 0; i < n; ++i) {
            a[i] = age(rng);
            p[i] = age(rng);
            max_d = std::max(max_d, std::abs(a[i] - p[i]));
        }
        EvalBatch b(a, p);
        double prev = -1.0;
        for (int j = 0; j <= 120; j += 3) {
            const double cs = cs_score(b, j);
            CHECK(cs >= prev);
            CHECK(cs >= 0.0);
            CHECK(cs <= 100.0);
            prev = cs;
        }
        CHECK(cs_score(b, static_cast<int>(std::ceil(max_d))) == 100.0);
    }
}

TEST_CASE("mcs_score matches a brute-force double loop") {
    std::mt19937_64 rng(1234);
    std::uniform_real_distribution<double> age(0.0, 120.0);
    std::uniform_int_distribution<int> len(1, 200);
    std::uniform_int_distribution<int> jdist(0, 10);
    std::bernoulli_distribution integral(0.5);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = len(rng);
        const bool ints = integral(rng);
        std::vector<double> a(n), p(n);
        for (int i = 0; i < n; ++i) {
            a[i] = ints ? std::round(age(rng)) : age(rng);
            p[i] = ints ? std::round(age(rng)) : age(rng);
        }
        const int J = jdist(rng);
        REQUIRE(std::abs(mcs_score(EvalBatch(a, p), J) - brute_mcs(a, p, J)) <= 1e-9);
    }
}

TEST_CASE("classification_report reproduces the FAG-Net gender row") {
    const auto r = classification_report({1141, 74, 1065, 121}, F1Variant::Paper);
    CHECK(r.sensitivity == Approx(0.904).epsilon(0.001 / 0.904));
    CHECK(std::abs(r.specificity - 0.935) <= 0.001);
    CHECK(std::abs(r.ppv - 0.939) <= 0.001);
    CHECK(std::abs(r.npv - 0.898) <= 0.001);
    CHECK(std::abs(r.f1 - 0.919) <= 0.001);
    CHECK(std::abs(r.accuracy_percent - 91.878) <= 0.001);
}

TEST_CASE("classification_report degenerate and symmetric counts") {
    auto r = classification_report({1, 0, 1, 0});
    CHECK(r.sensitivity == 1.0);
    CHECK(r.specificity == 1.0);
    CHECK(r.ppv == 1.0);
    CHECK(r.npv == 1.0);
    CHECK(r.f1 == 1.0);
    CHECK(r.accuracy_percent == 100.0);

    r = classification_report({1, 1, 1, 1}, F1Variant::Standard);
    CHECK(r.sensitivity == 0.5);
    CHECK(r.specificity == 0.5);
    CHECK(r.ppv == 0.5);
    CHECK(r.npv == 0.5);
    CHECK(r.f1 == 0.5);
    CHECK(r.accuracy_percent == 50.0);
}

TEST_CASE("classification_report names the undefined metric") {
    try {
        classification_report({0, 0, 5, 0});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::UndefinedMetric);
        CHECK(std::string(e.what()).find("sensitivity") != std::string::npos);
    }
    CHECK_THROWS_AS(classification_report({0, 0, 0, 0}), Error);
}

TEST_CASE("paper and standard F1 agree when ppv equals specificity") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> count(1, 500);
    for (int trial = 0; trial < 200; ++trial) {
        // tp == tn forces tp/(tp+fp) == tn/(tn+fp).
        const std::int64_t t = count(rng);
        const ConfusionCounts c{t, count(rng), t, count(rng)};
        const auto paper = classification_report(c, F1Variant::Paper);
        const auto standard = classification_report(c, F1Variant::Standard);
        REQUIRE(paper.ppv == Approx(paper.specificity));
        CHECK(paper.f1 == Approx(standard.f1).epsilon(1e-12));
    }
}

TEST_CASE("confusion counts use male as the positive class") {
    const std::vector<Gender> a{Gender::Male, Gender::Male, Gender::Female, Gender::Female, Gender::Male};
    const std::vector<Gender> p{Gender::Male, Gender::Female, Gender::Female, Gender::Male, Gender::Male};
    const auto c = confusion_counts(a, p);
    CHECK(c.tp == 2);
    CHECK(c.fn == 1);
    CHECK(c.tn == 1);
    CHECK(c.fp == 1);
    CHECK(parse_gender("Female") == Gender::Female);
    CHECK(parse_gender(" F ") == Gender::Female);
    CHECK(parse_gender("M") == Gender::Male);
    CHECK_THROWS_AS(parse_gender("x"), Error);
}

TEST_CASE("prediction dumps parse and validate their header") {
    const auto dir = std::filesystem::temp_directory_path() / "fundus_metrics_test";
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "age.csv");
        out << "sample_id,actual_age,predicted_age\na,10,10\nb,20,21\nc,30,33\n";
    }
    const auto rows = read_age_predictions(dir / "age.csv");
    REQUIRE(rows.size() == 3);
    CHECK(regression_metrics(to_batch(rows)).r_squared == Approx(0.95));

    {
        std::ofstream out(dir / "gender.csv");
        out << "sample_id,actual_gender,predicted_gender\na,male,male\nb,female,male\n";
    }
    const auto g = read_gender_predictions(dir / "gender.csv");
    REQUIRE(g.size() == 2);
    CHECK(g[1].actual == Gender::Female);

    {
        std::ofstream out(dir / "bad.csv");
        out << "id,age\n1,2\n";
    }
    CHECK_THROWS_AS(read_age_predictions(dir / "bad.csv"), Error);
    CHECK_THROWS_AS(read_age_predictions(dir / "missing.csv"), Error);

    write_age_predictions(dir / "roundtrip.csv", rows);
    const auto again = read_age_predictions(dir / "roundtrip.csv");
    CHECK(again[2].predicted == 33.0);
}
