#include <doctest.h>

#include <random>

#include "haemsa/error.hpp"
#include "haemsa/metrics.hpp"
#include "support/oracles.hpp"

using namespace haemsa;

TEST_CASE("sentiment binning") {
    CHECK(bin_sentiment(2.7, 7) == 6);
    CHECK(bin_sentiment(0.0, 7) == 3);
    CHECK(bin_sentiment(0.0, 2) == 1);
    CHECK(bin_sentiment(-0.01, 2) == 0);
    CHECK(bin_sentiment(-3.4, 7) == 0);
    CHECK(bin_sentiment(2.6, 5) == 4);
    CHECK(bin_sentiment(-1.5, 5) == 0);  // rounds half away from zero
    CHECK_THROWS_AS(bin_sentiment(NAN, 7), ValueError);
    CHECK_THROWS_AS(bin_sentiment(0.0, 3), ValueError);
}

TEST_CASE("perfect predictions") {
    const std::vector<double> s{-2.5, -0.3, 0.0, 1.2, 2.9};
    const auto r = regression_metrics(s, s);
    CHECK(r.mae == 0.0);
    CHECK(r.acc7 == 100.0);
    CHECK(r.acc5 == 100.0);
    CHECK(r.acc2 == 100.0);
    CHECK(regression_metrics(std::vector<double>{1, 2}, std::vector<double>{1, 2}).mae == 0.0);
    const std::vector<int> c{0, 1, 2, 2, 1};
    const auto f = f1_metrics(c, c, 3);
    CHECK(f.weighted_f1 == 100.0);
    for (double v : f.per_class_f1) CHECK(v == 1.0);
    CHECK_THROWS_AS(regression_metrics(std::vector<double>{1}, std::vector<double>{1, 2}), ShapeError);
}

TEST_CASE("hand-computed two-class weighted F1") {
    const auto f = f1_metrics(std::vector<int>{0, 0, 1}, std::vector<int>{0, 1, 1}, 2);
    CHECK(f.per_class_f1[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(f.per_class_f1[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(f.weighted_f1 == doctest::Approx(66.6666666667).epsilon(1e-9));
    CHECK(f.confusion[1][0] == 1);
    CHECK(f.confusion[0][0] == 1);
}

TEST_CASE("absent class has F1 0 and no weight") {
    const auto f = f1_metrics(std::vector<int>{0, 1}, std::vector<int>{0, 1}, 3);
    CHECK(f.per_class_f1[2] == 0.0);
    CHECK(f.weighted_f1 == 100.0);
    CHECK_THROWS_AS(f1_metrics(std::vector<int>{3}, std::vector<int>{0}, 3), LabelError);
}

TEST_CASE("all metrics match the brute-force oracle on random sets") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-3.6, 3.6);
    std::uniform_int_distribution<int> c(0, 5);
    for (int set = 0; set < 20; ++set) {
        std::vector<double> p(200), y(200);
        std::vector<int> cp(200), cy(200);
        for (int i = 0; i < 200; ++i) {
            p[i] = u(rng);
            y[i] = std::clamp(u(rng), -3.0, 3.0);
            cp[i] = c(rng);
            cy[i] = i % 3 == 0 ? cp[i] : c(rng);
        }
        const auto m = evaluate_metrics(p, y, cp, cy, 6);
        const auto o = oracle::metric_oracle(p, y, cp, cy, 6);
        CHECK(std::fabs(m.mae - o.mae) <= 1e-9);
        CHECK(std::fabs(m.acc7 - o.acc7) <= 1e-9);
        CHECK(std::fabs(m.acc5 - o.acc5) <= 1e-9);
        CHECK(std::fabs(m.acc2 - o.acc2) <= 1e-9);
        CHECK(std::fabs(m.weighted_f1 - o.weighted_f1) <= 1e-9);
        for (int k = 0; k < 6; ++k) CHECK(std::fabs(m.per_class_f1[static_cast<std::size_t>(k)] - o.f1[static_cast<std::size_t>(k)]) <= 1e-9);
        CHECK(m.n == 200);
    }
}

TEST_CASE("weighted F1 is invariant under a consistent class permutation") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> c(0, 4);
    std::vector<int> p(300), y(300);
    for (int i = 0; i < 300; ++i) {
        p[i] = c(rng);
        y[i] = i % 2 ? p[i] : c(rng);
    }
    const std::vector<int> perm{3, 0, 4, 1, 2};
    std::vector<int> pp(300), yp(300);
    for (int i = 0; i < 300; ++i) {
        pp[i] = perm[static_cast<std::size_t>(p[i])];
        yp[i] = perm[static_cast<std::size_t>(y[i])];
    }
    CHECK(f1_metrics(p, y, 5).weighted_f1 == doctest::Approx(f1_metrics(pp, yp, 5).weighted_f1).epsilon(1e-12));
}

TEST_CASE("Acc-2 of the sign predictor is the sign-agreement fraction") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-3, 3);
    std::vector<double> y(500), p(500);
    double agree = 0;
    for (int i = 0; i < 500; ++i) {
        y[i] = u(rng);
        p[i] = u(rng) > -1.0 ? 1.0 : -1.0;
        agree += (p[i] >= 0) == (y[i] >= 0);
    }
    CHECK(regression_metrics(p, y).acc2 == doctest::Approx(100.0 * agree / 500).epsilon(1e-12));
}

TEST_CASE("metrics report JSON round-trip") {
    const auto m = evaluate_metrics(std::vector<double>{0.5, -1.0}, std::vector<double>{0.2, -2.0},
                                    std::vector<int>{1, 0}, std::vector<int>{1, 1}, 2);
    const auto back = MetricsReport::from_json(m.to_json());
    CHECK(back.acc7 == m.acc7);
    CHECK(back.mae == m.mae);
    CHECK(back.confusion == m.confusion);
    CHECK(back.per_class_f1 == m.per_class_f1);
}
