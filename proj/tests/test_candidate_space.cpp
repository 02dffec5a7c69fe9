#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "formbo/candidate_space.hpp"

using namespace formbo;

namespace {

ParameterSpec continuous_spec(std::string name, std::optional<double> lo = {}, std::optional<double> hi = {}) {
    ParameterSpec s;
    s.name = std::move(name);
    s.lower = lo;
    s.upper = hi;
    return s;
}

std::vector<double> sorted_column(const CandidateSet& c, Index j) {
    std::vector<double> v(c.points.col(j).data(), c.points.col(j).data() + c.size());
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace

TEST_CASE("expand_ranges grows half the factor per side") {
    const std::vector<ParameterRange> obs = {ParameterRange::continuous("p", 10, 20)};

    auto r = expand_ranges(obs, std::vector{continuous_spec("p")}, 0.1);
    CHECK(r[0].lo == doctest::Approx(9.5).epsilon(1e-15));
    CHECK(r[0].hi == doctest::Approx(20.5).epsilon(1e-15));

    r = expand_ranges(obs, std::vector{continuous_spec("p", 10.0)}, 0.1);
    CHECK(r[0].lo == 10.0);
    CHECK(r[0].hi == doctest::Approx(20.5).epsilon(1e-15));

    r = expand_ranges(obs, std::vector{continuous_spec("p")}, 0.0);
    CHECK(r[0].lo == 10.0);
    CHECK(r[0].hi == 20.0);
}

TEST_CASE("expand_ranges edits discrete sets and reports infeasible parameters") {
    const std::vector<ParameterRange> obs = {ParameterRange::discrete("Rp", {220, 340})};
    ParameterSpec s;
    s.name = "Rp";
    s.kind = ParameterKind::discrete;
    s.add_values = {160};
    s.discard_values = {340};
    const auto r = expand_ranges(obs, std::vector{s}, 0.1);
    CHECK(r[0].values == std::vector<double>{160, 220});

    const std::vector<ParameterRange> narrow = {ParameterRange::continuous("p", 10, 20)};
    CHECK_THROWS_WITH_AS(expand_ranges(narrow, std::vector{continuous_spec("p", 30.0)}, 0.1),
                         doctest::Contains("infeasible parameter p"), Error);
}

TEST_CASE("a parameter without history needs both bounds") {
    CHECK_THROWS_WITH_AS(expand_ranges({}, std::vector{continuous_spec("p", 1.0)}, 0.1), doctest::Contains("p"),
                         ConfigError);
    const auto r = expand_ranges({}, std::vector{continuous_spec("p", 1.0, 2.0)}, 0.1);
    CHECK(r[0].lo == 1.0);
    CHECK(r[0].hi == 2.0);
}

TEST_CASE("strict linear generation sweeps the diagonal") {
    const std::vector<ParameterRange> one = {ParameterRange::continuous("a", 0, 1)};
    auto c = generate_linear(one, 3, 0, false);
    REQUIRE(c.size() == 3);
    CHECK(c.points(0, 0) == 0.0);
    CHECK(c.points(1, 0) == 0.5);
    CHECK(c.points(2, 0) == 1.0);

    const std::vector<ParameterRange> two = {ParameterRange::continuous("a", 0, 1),
                                             ParameterRange::continuous("b", 0, 10)};
    c = generate_linear(two, 3, 0, false);
    Eigen::MatrixXd expected(3, 2);
    expected << 0, 0, 0.5, 5, 1, 10;
    CHECK(c.points == expected);
    CHECK(c.names == std::vector<std::string>{"a", "b"});
}

TEST_CASE("permuted linear generation keeps each column's multiset") {
    const std::vector<ParameterRange> ranges = {ParameterRange::continuous("a", 0, 1),
                                                ParameterRange::continuous("b", -5, 10),
                                                ParameterRange::discrete("Rp", {160, 220, 280})};
    const auto strict = generate_linear(ranges, 101, 42, false);
    const auto perm = generate_linear(ranges, 101, 42, true);
    for (Index j = 0; j < 3; ++j) CHECK(sorted_column(strict, j) == sorted_column(perm, j));
    CHECK(perm.points != strict.points);

    // Discrete columns cycle their value set.
    CHECK(strict.points(0, 2) == 160);
    CHECK(strict.points(1, 2) == 220);
    CHECK(strict.points(2, 2) == 280);
    CHECK(strict.points(3, 2) == 160);

    const auto again = generate_linear(ranges, 101, 42, true);
    CHECK(again.points == perm.points);
    CHECK(generate_linear(ranges, 101, 43, true).points != perm.points);
}

TEST_CASE("combination generation is the Cartesian product, first dimension slowest") {
    const std::vector<ParameterRange> ranges = {ParameterRange::continuous("a", 0, 1),
                                                ParameterRange::discrete("Rp", {160, 220})};
    const std::vector<int> steps = {2, 0};
    const auto c = generate_combination(ranges, steps, std::nullopt, 0);
    Eigen::MatrixXd expected(4, 2);
    expected << 0, 160, 0, 220, 1, 160, 1, 220;
    CHECK(c.points == expected);
    CHECK(c.generation == Generation::combination);

    const auto capped = generate_combination(ranges, steps, Index{2}, 9);
    REQUIRE(capped.size() == 2);
    CHECK(capped.points.row(0) != capped.points.row(1));
    for (Index i = 0; i < 2; ++i) {
        bool found = false;
        for (Index k = 0; k < 4; ++k) found |= capped.points.row(i) == expected.row(k);
        CHECK(found);
    }
}

TEST_CASE("combination rounding and safety bound") {
    auto a = ParameterRange::continuous("a", 0, 1);
    a.precision = 1;
    const std::vector<ParameterRange> ranges = {a};
    const auto c = generate_combination(ranges, std::vector<int>{3}, std::nullopt, 0);
    CHECK(sorted_column(c, 0) == std::vector<double>{0.0, 0.5, 1.0});

    std::vector<ParameterRange> wide;
    for (int i = 0; i < 9; ++i) wide.push_back(ParameterRange::continuous("x" + std::to_string(i), 0, 1));
    const std::vector<int> many(9, 10);
    CHECK_THROWS_WITH_AS(generate_combination(wide, many, std::nullopt, 0), doctest::Contains("cap"), Error);
    CHECK(generate_combination(wide, many, Index{100}, 0).size() == 100);
}

TEST_CASE("generated columns stay within their effective ranges") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-100, 100);
    std::uniform_int_distribution<int> dims(1, 5), prec(0, 3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<ParameterRange> ranges;
        const int d = dims(rng);
        for (int j = 0; j < d; ++j) {
            double lo = u(rng), hi = u(rng);
            if (lo > hi) std::swap(lo, hi);
            auto r = ParameterRange::continuous("x" + std::to_string(j), lo, hi);
            if (trial % 2) r.precision = prec(rng);
            ranges.push_back(r);
        }
        const auto lin = generate_linear(ranges, 50, trial);
        const auto comb = generate_combination(ranges, std::vector<int>(d, 4), Index{60}, trial);
        for (const auto* c : {&lin, &comb})
            for (Index j = 0; j < d; ++j) {
                CHECK(c->points.col(j).minCoeff() >= ranges[j].lo);
                CHECK(c->points.col(j).maxCoeff() <= ranges[j].hi);
            }
    }
}

TEST_CASE("round half to even") {
    CHECK(round_to_precision(0.125, 2) == 0.12);
    CHECK(round_to_precision(2.5, 0) == 2.0);
    CHECK(round_to_precision(3.5, 0) == 4.0);
    CHECK(round_to_precision(1.23456, 3) == 1.235);
}
