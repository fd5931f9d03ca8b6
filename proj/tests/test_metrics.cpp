#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "caqa/metrics.hpp"
#include "caqa/rng.hpp"

using namespace caqa;

namespace {

// O(N^2) rank assignment by counting, independent of the sort-based path.
std::vector<double> counting_ranks(const std::vector<double>& xs) {
    std::vector<double> ranks(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        std::size_t below = 0, equal = 0;
        for (std::size_t j = 0; j < xs.size(); ++j) {
            if (xs[j] < xs[i]) ++below;
            if (j != i && xs[j] == xs[i]) ++equal;
        }
        ranks[i] = static_cast<double>(below + 1) + static_cast<double>(equal) / 2.0;
    }
    return ranks;
}

double srcc_oracle(const std::vector<double>& p, const std::vector<double>& t) {
    std::vector<double> rx = counting_ranks(p), ry = counting_ranks(t);
    const double n = static_cast<double>(p.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < p.size(); ++i) mx += rx[i], my += ry[i];
    mx /= n;
    my /= n;
    double cov = 0, vx = 0, vy = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    return cov / std::sqrt(vx * vy);
}

double pairwise_oracle(const std::vector<double>& p, const std::vector<double>& t) {
    double credit = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t j = 0; j < p.size(); ++j) {
            if (j <= i) continue;
            ++pairs;
            const double pd = p[i] - p[j], td = t[i] - t[j];
            if (pd == 0 || td == 0)
                credit += 0.5;
            else if ((pd > 0) == (td > 0))
                credit += 1.0;
        }
    return credit / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("srcc worked examples") {
    CHECK(srcc({1, 2, 3}, {10, 20, 30}) == Catch::Approx(1.0));
    CHECK(srcc({1, 2, 3}, {30, 20, 10}) == Catch::Approx(-1.0));
    CHECK(srcc({1, 2, 3}, {1, 3, 2}) == Catch::Approx(0.5));
    CHECK_THROWS_AS(srcc({1}, {2}), std::invalid_argument);
    CHECK_THROWS_AS(srcc({1, 1, 1}, {1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS(srcc({1, 2}, {1, 2, 3}), std::invalid_argument);
}

TEST_CASE("pairwise accuracy worked examples") {
    CHECK(pairwise_accuracy({1, 2, 3}, {10, 20, 30}) == 1.0);
    CHECK(pairwise_accuracy({1, 2, 3}, {30, 20, 10}) == 0.0);
    CHECK(pairwise_accuracy({1, 2, 3}, {1, 3, 2}) == Catch::Approx(2.0 / 3.0));
    CHECK(pairwise_accuracy({1, 1}, {1, 2}) == 0.5);  // tie -> half credit
    CHECK_THROWS_AS(pairwise_accuracy({1}, {1}), std::invalid_argument);
}

TEST_CASE("rank metrics match brute-force oracles on random series") {
    Rng rng(2024);
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t n = 2 + rng.below(49);
        std::vector<double> p(n), t(n);
        for (std::size_t i = 0; i < n; ++i) {
            // quantized draws so ties actually occur
            p[i] = std::floor(rng.uniform(0.0, 20.0));
            t[i] = std::floor(rng.uniform(0.0, 20.0));
        }
        CHECK(pairwise_accuracy(p, t) == pairwise_oracle(p, t));
        try {
            const double got = srcc(p, t);
            CHECK(std::fabs(got - srcc_oracle(p, t)) < 1e-12);
        } catch (const std::invalid_argument&) {
            // all-tied series: oracle denominator is zero too
            auto all_same = [](const std::vector<double>& v) {
                for (double x : v)
                    if (x != v[0]) return false;
                return true;
            };
            CHECK((all_same(p) || all_same(t)));
        }
    }
}

TEST_CASE("srcc is invariant under strictly increasing transforms") {
    Rng rng(31);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 5 + rng.below(30);
        std::vector<double> p(n), t(n), p2(n), t2(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = rng.uniform(-3.0, 3.0);
            t[i] = rng.uniform(-3.0, 3.0);
            p2[i] = std::exp(p[i]) * 2.0 + 1.0;
            t2[i] = t[i] * t[i] * t[i] + 0.5 * t[i];
        }
        CHECK(srcc(p, t) == Catch::Approx(srcc(p2, t2)).margin(1e-12));
    }
}

TEST_CASE("performance matrix metrics: worked examples") {
    PerformanceMatrix p2(2, MetricKind::Srcc);
    p2.set(0, 0, 0.9);
    p2.set(1, 0, 0.6);
    p2.set(1, 1, 0.8);
    CHECK(p2.average_performance() == Catch::Approx(0.7));
    CHECK(p2.negative_backward_transfer() == Catch::Approx(0.3));

    PerformanceMatrix p1(1, MetricKind::Srcc);
    p1.set(0, 0, 0.9);
    CHECK(p1.average_performance() == Catch::Approx(0.9));
    CHECK_THROWS_AS(p1.negative_backward_transfer(), std::invalid_argument);
    CHECK_THROWS_AS(p1.maximum_forgetting(), std::invalid_argument);

    // positive transfer clamps NBT to zero
    PerformanceMatrix pos(2, MetricKind::Srcc);
    pos.set(0, 0, 0.5);
    pos.set(1, 0, 0.9);
    pos.set(1, 1, 0.9);
    CHECK(pos.negative_backward_transfer() == 0.0);

    // column [0.9, 0.7, 0.8]: max 0.9, min over non-diagonal rows 0.7
    PerformanceMatrix p3(3, MetricKind::Srcc);
    p3.set(0, 0, 0.9);
    p3.set(1, 0, 0.7);
    p3.set(2, 0, 0.8);
    p3.set(1, 1, 0.9);
    p3.set(2, 1, 0.9);
    p3.set(2, 2, 0.9);
    CHECK(p3.maximum_forgetting() == Catch::Approx(((0.9 - 0.7) + 0.0) / 2.0));

    PerformanceMatrix c(3, MetricKind::Srcc);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j <= i; ++j) c.set(i, j, 0.42);
    CHECK(c.average_performance() == Catch::Approx(0.42));
    CHECK(c.negative_backward_transfer() == 0.0);
    CHECK(c.maximum_forgetting() == Catch::Approx(0.0).margin(1e-15));

    // MF can be negative: the formula is unclamped
    PerformanceMatrix neg(2, MetricKind::Srcc);
    neg.set(0, 0, 0.5);
    neg.set(1, 0, 0.8);
    neg.set(1, 1, 0.9);
    CHECK(neg.maximum_forgetting() == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("performance matrix metrics match direct formula oracles") {
    Rng rng(77);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t T = 2 + rng.below(6);
        PerformanceMatrix m(T, MetricKind::Srcc);
        std::vector<std::vector<double>> v(T, std::vector<double>(T));
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = 0; j <= i; ++j) {
                v[i][j] = rng.uniform(-1.0, 1.0);
                m.set(i, j, v[i][j]);
            }
        double ap = 0;
        for (std::size_t j = 0; j < T; ++j) ap += v[T - 1][j];
        ap /= static_cast<double>(T);
        CHECK(m.average_performance() == ap);

        double nbt = 0;
        for (std::size_t t = 0; t + 1 < T; ++t) nbt += std::max(0.0, v[t][t] - v[T - 1][t]);
        nbt /= static_cast<double>(T - 1);
        CHECK(m.negative_backward_transfer() == nbt);

        double mf = 0;
        for (std::size_t t = 0; t + 1 < T; ++t) {
            double hi = -2.0, lo = 2.0;
            for (std::size_t i = t; i < T; ++i) hi = std::max(hi, v[i][t]);
            for (std::size_t j = t; j < T; ++j)
                if (j != t) lo = std::min(lo, v[j][t]);
            mf += hi - lo;
        }
        mf /= static_cast<double>(T - 1);
        CHECK(m.maximum_forgetting() == mf);

        CHECK(m.negative_backward_transfer() >= 0.0);
    }
}

TEST_CASE("matrix guards undefined cells and incomplete rows") {
    PerformanceMatrix m(3, MetricKind::PairwiseAccuracy);
    CHECK_THROWS_AS(m.set(0, 1, 0.5), std::out_of_range);  // above the diagonal
    m.set(0, 0, 0.8);
    m.set(1, 0, 0.7);
    m.set(1, 1, 0.9);
    CHECK_FALSE(m.defined(2, 0));
    CHECK_THROWS_AS(m.at(2, 0), std::out_of_range);
    CHECK_THROWS_AS(m.average_performance(), std::invalid_argument);  // last row incomplete
}

TEST_CASE("matrix CSV round-trip with NA cells") {
    PerformanceMatrix m(3, MetricKind::Srcc);
    m.set(0, 0, 0.25);
    m.set(1, 0, 0.125);
    m.set(1, 1, 1.0);
    std::string csv = m.to_csv("cafebabe");
    CHECK(csv.find("# config_hash=cafebabe") != std::string::npos);
    CHECK(csv.find("NA") != std::string::npos);

    std::istringstream in(csv);
    PerformanceMatrix back = PerformanceMatrix::from_csv(in);
    CHECK(back == m);
}
