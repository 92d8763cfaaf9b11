#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "riskq/distribution.hpp"
#include "riskq/risk.hpp"

using namespace riskq;

namespace {

std::mt19937_64 rng(777);

QuantileDistribution random_dist(int max_atoms = 8) {
    std::uniform_int_distribution<int> natoms(1, max_atoms);
    std::uniform_real_distribution<double> atom(-50.0, 50.0);
    std::uniform_real_distribution<double> mass(0.05, 1.0);
    int n = natoms(rng);
    std::vector<double> atoms(n), masses(n);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        atoms[i] = atom(rng);
        masses[i] = mass(rng);
        total += masses[i];
    }
    for (double& m : masses) m /= total;
    return QuantileDistribution(std::move(atoms), std::move(masses));
}

DistortionSpec random_spec() {
    std::uniform_int_distribution<int> pick(0, 3);
    std::uniform_real_distribution<double> level(0.05, 1.0);
    std::uniform_real_distribution<double> shift(-1.5, 1.5);
    switch (pick(rng)) {
        case 0: return {DistortionKind::cvar, level(rng)};
        case 1: return {DistortionKind::wang, shift(rng)};
        case 2: return {DistortionKind::cpw, 0.3 + level(rng)};
        default: return {DistortionKind::neutral, 0.0};
    }
}

} // namespace

TEST_CASE("gaussian cdf and inverse") {
    CHECK(gaussian_cdf(0.0) == 0.5);
    CHECK_THAT(gaussian_inv_cdf(0.5), Catch::Matchers::WithinAbs(0.0, 1e-12));
    CHECK_THAT(gaussian_cdf(1.959964), Catch::Matchers::WithinAbs(0.975, 1e-6));
    CHECK_THROWS_AS(gaussian_inv_cdf(0.0), DomainError);
    CHECK_THROWS_AS(gaussian_inv_cdf(1.0), DomainError);

    for (int k = 0; k < 2000; ++k) {
        std::uniform_real_distribution<double> unit(1e-8, 1.0 - 1e-8);
        double p = unit(rng);
        REQUIRE_THAT(gaussian_cdf(gaussian_inv_cdf(p)), Catch::Matchers::WithinAbs(p, 1e-9));
    }
}

TEST_CASE("distortion specs validate their invariants") {
    CHECK_THROWS_AS(DistortionSpec(DistortionKind::cvar, 0.0), DomainError);
    CHECK_THROWS_AS(DistortionSpec(DistortionKind::cvar, 1.5), DomainError);
    CHECK_THROWS_AS(DistortionSpec(DistortionKind::cpw, -0.5), DomainError);
    DistortionSpec neutral(DistortionKind::neutral, 0.0);
    CHECK(neutral.g(0.3) == 0.3);
}

TEST_CASE("distorted expectation on worked cases") {
    QuantileDistribution d({0.0, 100.0}, {0.5, 0.5});
    CHECK(distorted_expectation(d, {DistortionKind::cvar, 0.5}) == 0.0);
    CHECK(distorted_expectation(d, {DistortionKind::cvar, 1.0}) == d.expectation());
    CHECK_THAT(distorted_expectation(d, {DistortionKind::wang, 0.0}),
               Catch::Matchers::WithinAbs(d.expectation(), 1e-9));
}

TEST_CASE("risk measure dispatch") {
    QuantileDistribution d({0.25, 1.0}, {0.5, 0.5});
    CHECK(RiskMeasure::var(0.5).evaluate(d) == 0.25);

    QuantileDistribution drima_b({5.0, 0.0}, {0.5, 0.5});
    CHECK(RiskMeasure::cvar(1.0).evaluate(drima_b) == 2.5);

    CHECK(RiskMeasure::neutral().evaluate(QuantileDistribution::dirac(7.0)) == 7.0);
}

TEST_CASE("cvar at level 1 equals the expectation") {
    auto m = RiskMeasure::cvar(1.0);
    for (int k = 0; k < 2000; ++k) {
        auto d = random_dist();
        REQUIRE_THAT(m.evaluate(d), Catch::Matchers::WithinAbs(d.expectation(), 1e-12));
    }
}

TEST_CASE("wang at shift 0 equals the expectation") {
    auto m = RiskMeasure::wang(0.0);
    for (int k = 0; k < 2000; ++k) {
        auto d = random_dist();
        REQUIRE_THAT(m.evaluate(d), Catch::Matchers::WithinAbs(d.expectation(), 1e-9));
    }
}

TEST_CASE("distortion weights sum to one") {
    for (int k = 0; k < 500; ++k) {
        auto d = random_dist();
        auto spec = random_spec();
        double g_prev = 0.0;
        double total = 0.0;
        const auto& cum = d.cumulative();
        for (std::size_t j = 0; j < d.size(); ++j) {
            double g_cur = (j + 1 == d.size()) ? 1.0 : spec.g(std::min(cum[j], 1.0));
            total += g_cur - g_prev;
            g_prev = g_cur;
        }
        REQUIRE_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-9));
    }
}

TEST_CASE("uniform-quantile evaluation matches the distribution route") {
    std::uniform_real_distribution<double> atom(-20.0, 20.0);
    std::uniform_real_distribution<double> level(0.0, 1.0);
    for (int k = 0; k < 500; ++k) {
        std::uniform_int_distribution<int> natoms(1, 16);
        int n = natoms(rng);
        std::vector<double> q(n);
        for (double& x : q) x = atom(rng);
        std::sort(q.begin(), q.end());
        auto dist = QuantileDistribution::from_quantiles(q);

        std::vector<RiskMeasure> measures = {RiskMeasure::var(level(rng)),
                                             RiskMeasure::distorted(random_spec())};
        for (const auto& m : measures) {
            double direct = m.evaluate_sorted_uniform(q.data(), n);
            double via_dist = m.evaluate(dist);
            REQUIRE_THAT(direct, Catch::Matchers::WithinAbs(via_dist, 1e-12));

            auto w = m.uniform_weights(n);
            double dotted = 0.0;
            for (int j = 0; j < n; ++j) dotted += w[j] * q[j];
            REQUIRE_THAT(dotted, Catch::Matchers::WithinAbs(direct, 1e-12));
        }
    }
}

TEST_CASE("risk measure string grammar") {
    CHECK(RiskMeasure::parse("var:0.5").is_var());
    CHECK(RiskMeasure::parse("var 0.5").var_level() == 0.5);
    CHECK(RiskMeasure::parse("cvar:0.2").spec().kind == DistortionKind::cvar);
    CHECK(RiskMeasure::parse("wang:0.75").spec().eta == 0.75);
    CHECK(RiskMeasure::parse("cpw").spec().eta == 0.71);
    auto neutral = RiskMeasure::parse("neutral");
    CHECK(neutral.spec().kind == DistortionKind::cvar);
    CHECK(neutral.spec().eta == 1.0);
    CHECK_THROWS_AS(RiskMeasure::parse("var"), ParseError);
    CHECK_THROWS_AS(RiskMeasure::parse("gumbel:0.5"), ParseError);
    CHECK_THROWS_AS(RiskMeasure::parse("cvar:zzz"), ParseError);
    CHECK_THROWS_AS(RiskMeasure::parse("var:1.5"), DomainError);
}
