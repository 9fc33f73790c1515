#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "fundus/config.hpp"
#include "fundus/error.hpp"
#include "fundus/losses.hpp"

using namespace fundus;
using doctest::Approx;

namespace {

// Hand enumeration of one CLF term.
double clf_term(double d, double varphi, int J) { return d <= J ? d * varphi : d * d * d + varphi; }

double clf_at(double actual, double predicted, const ClfParams& p) {
    return clf_loss(EvalBatch({actual}, {predicted}), p);
}

}  // namespace

TEST_CASE("clf_loss piecewise values") {
    CHECK(clf_loss(EvalBatch({0}, {2}), {0.1, 3, 1.0}) == Approx(0.2));
    CHECK(clf_loss(EvalBatch({5}, {5}), {0.25, 0, 1.0}) == 0.0);
    CHECK(clf_loss(EvalBatch({0, 0}, {2, 5}), {0.1, 3, 1.0}) == Approx(62.65));
    // d == J stays on the linear branch.
    CHECK(clf_loss(EvalBatch({10}, {13}), {0.1, 3, 1.0}) == Approx(0.3));
}

TEST_CASE("clf_loss matches enumeration over a (d, varphi, J) grid") {
    for (int J = 0; J <= 6; ++J) {
        for (const double varphi : {0.0001, 0.01, 0.1, 0.3}) {
            for (int k = 0; k <= 40; ++k) {
                const double d = 0.25 * k;
                const ClfParams p{varphi, J, 1.0};
                CHECK(clf_at(50.0, 50.0 + d, p) == Approx(clf_term(d, varphi, J)).epsilon(1e-12));
                CHECK(clf_at(50.0, 50.0 - d, p) == Approx(clf_term(d, varphi, J)).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("clf penalty jumps up just past J") {
    for (int J = 1; J <= 10; ++J) {
        for (const double varphi : {0.0001, 0.001, 0.05, 0.1, 0.2, 0.3}) {
            const ClfParams p{varphi, J, 1.0};
            const double below = clf_at(0.0, J, p);
            const double above = clf_at(0.0, J + 1e-9, p);
            CHECK(above > below);
            CHECK(below == Approx(J * varphi));
        }
    }
}

TEST_CASE("clf analytic gradient matches central differences") {
    const ClfParams p{0.1, 3, 1.0};
    const double h = 1e-6;
    for (const double d : {0.5, p.J - 0.1, p.J + 0.1, 10.0}) {
        for (const double sign : {1.0, -1.0}) {
            const double a = 40.0;
            const double pred = a + sign * d;
            const double analytic = clf_gradient(EvalBatch({a}, {pred}), p)[0];
            const double numeric = (clf_at(a, pred + h, p) - clf_at(a, pred - h, p)) / (2 * h);
            CAPTURE(d);
            CHECK(std::abs(analytic - numeric) <= 1e-4 * std::abs(numeric));
        }
    }
}

TEST_CASE("tensor CLF and ALF agree with the scalar forms and autograd with clf_gradient") {
    const ClfParams p{0.05, 2, 0.7};
    const std::vector<double> a{10, 20, 30, 40, 55};
    const std::vector<double> pr{10.5, 21.9, 26, 48, 55};
    const EvalBatch batch(a, pr);
    const auto ta = torch::tensor(a, torch::kFloat64);
    auto tp = torch::tensor(pr, torch::kFloat64).requires_grad_(true);

    CHECK(loss_ops::clf(ta, tp, p).item<double>() == Approx(clf_loss(batch, p)).epsilon(1e-12));
    CHECK(loss_ops::alf(ta, tp, p).item<double>() == Approx(alf_loss(batch, p)).epsilon(1e-12));

    loss_ops::clf(ta, tp, p).backward();
    const auto g = clf_gradient(batch, p);
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(tp.grad()[static_cast<long>(i)].item<double>() == Approx(g[i]).epsilon(1e-12));
    }
}

TEST_CASE("alf_loss examples and homogeneity in psi") {
    CHECK(alf_loss(EvalBatch({10}, {12}), {0.1, 3, 1.0}) == Approx(6.2 / 3.0));
    CHECK(alf_loss(EvalBatch({1, 2, 3}, {1, 2, 3}), {0.1, 3, 1.0}) == 0.0);
    CHECK(alf_loss(EvalBatch({10, 70}, {35, 2}), {0.1, 3, 0.0}) == 0.0);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> age(1, 100), w(0.0, 4.0);
    for (int t = 0; t < 100; ++t) {
        const EvalBatch b({age(rng), age(rng)}, {age(rng), age(rng)});
        const double psi = w(rng);
        const double k = w(rng);
        CHECK(alf_loss(b, {0.1, 3, k * psi}) == Approx(k * alf_loss(b, {0.1, 3, psi})).epsilon(1e-12));
    }
}

TEST_CASE("ClfParams validation") {
    CHECK_THROWS_AS((ClfParams{0.1, -1, 1.0}.validate()), Error);
    CHECK_THROWS_AS((ClfParams{0.1, 3, -1.0}.validate()), Error);
    // Out-of-range varphi only warns.
    CHECK_NOTHROW((ClfParams{0.9, 3, 1.0}.validate()));

    Config c;
    c.set("loss.psi", "2");
    c.set("loss.varphi", "0.01");
    c.set("loss.J", "4");
    const auto p = ClfParams::from_config(c);
    CHECK(p.psi == 2.0);
    CHECK(p.varphi == 0.01);
    CHECK(p.J == 4);
}

TEST_CASE("kl_divergence closed forms") {
    CHECK(kl_divergence({{0.0}, {1.0}}, KlVariant::Standard) == 0.0);
    CHECK(kl_divergence({{0.0}, {1.0}}, KlVariant::Paper) == Approx(-std::numbers::e / 2.0).epsilon(1e-12));
    CHECK(kl_divergence({{1.0}, {1.0}}, KlVariant::Standard) == Approx(0.5));
    CHECK(kl_divergence({{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}}, KlVariant::Paper) ==
          Approx(-1.5 * std::numbers::e));
    CHECK_THROWS_AS(kl_divergence({{0.0}, {0.0}}), Error);
    CHECK_THROWS_AS(kl_divergence({{0.0}, {-1.0}}), Error);
    CHECK_THROWS_AS(kl_divergence({{0.0, 1.0}, {1.0}}), Error);
}

TEST_CASE("standard KL is nonnegative and zero only at the prior") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> mu(0.0, 2.0);
    std::uniform_real_distribution<double> log_sigma(-4.0, 3.0);
    std::uniform_int_distribution<int> dims(1, 16);
    for (int t = 0; t < 10000; ++t) {
        LatentMoments m;
        const int n = dims(rng);
        for (int i = 0; i < n; ++i) {
            m.mu.push_back(mu(rng));
            m.sigma.push_back(std::exp(log_sigma(rng)));
        }
        REQUIRE(kl_divergence(m) > 0.0);
    }
    CHECK(kl_divergence({{0, 0, 0, 0}, {1, 1, 1, 1}}) == 0.0);
}

TEST_CASE("tensor KL matches scalar KL per sample mean") {
    const auto mu = torch::tensor({0.3, -1.2, 0.0, 0.5}, torch::kFloat64).reshape({2, 2});
    const auto sigma = torch::tensor({0.8, 1.5, 1.0, 0.2}, torch::kFloat64).reshape({2, 2});
    for (const auto v : {KlVariant::Standard, KlVariant::Paper}) {
        const double expected = 0.5 * (kl_divergence({{0.3, -1.2}, {0.8, 1.5}}, v) +
                                       kl_divergence({{0.0, 0.5}, {1.0, 0.2}}, v));
        CHECK(loss_ops::kl(mu, sigma, v).item<double>() == Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("tlf_fgc_loss") {
    CHECK(tlf_fgc_loss(3, 6, 0) == 3.0);
    CHECK(tlf_fgc_loss(0, 0, 0) == 0.0);
    CHECK(tlf_fgc_loss(1, 1, 1) == 1.0);
    CHECK(tlf_fgc_loss(0.2, 5.0, 1.7) == Approx(tlf_fgc_loss(1.7, 0.2, 5.0)));
    CHECK(tlf_fgc_loss(0.2, 5.0, 1.7) == Approx(tlf_fgc_loss(5.0, 1.7, 0.2)));
    CHECK_THROWS_AS(tlf_fgc_loss(INFINITY, 0, 0), Error);
    CHECK_THROWS_AS(tlf_fgc_loss(0, NAN, 0), Error);
}
