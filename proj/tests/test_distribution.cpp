#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "riskq/distribution.hpp"
#include "riskq/risk.hpp"

using namespace riskq;

namespace {

std::mt19937_64 rng(12345);

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

} // namespace

TEST_CASE("quantile is the generalized inverse CDF") {
    QuantileDistribution d({0.0, 100.0}, {0.5, 0.5});
    CHECK(d.quantile(0.5) == 0.0);
    CHECK(d.quantile(0.75) == 100.0);

    QuantileDistribution dirac = QuantileDistribution::dirac(3.5);
    CHECK(dirac.quantile(0.0) == 3.5);
    CHECK(dirac.quantile(0.3) == 3.5);
    CHECK(dirac.quantile(1.0) == 3.5);

    QuantileDistribution e({0.25, 1.0}, {0.5, 0.5});
    CHECK(e.quantile(0.5) == 0.25);

    CHECK(d.quantile(0.0) == 0.0); // smallest atom at omega = 0
    CHECK_THROWS_AS(d.quantile(-0.1), DomainError);
    CHECK_THROWS_AS(d.quantile(1.1), DomainError);
}

TEST_CASE("expectation") {
    CHECK(QuantileDistribution({3.0, 0.0}, {0.5, 0.5}).expectation() == 1.5);
    CHECK(QuantileDistribution::dirac(-7.25).expectation() == -7.25);
    CHECK(QuantileDistribution({0.0, 100.0, 200.0}, {0.25, 0.5, 0.25}).expectation() == 100.0);
}

TEST_CASE("construction validates masses") {
    CHECK_THROWS_AS(QuantileDistribution({0.0, 1.0}, {0.5, 0.4}), DomainError);
    CHECK_THROWS_AS(QuantileDistribution({0.0, 1.0}, {-0.5, 1.5}), DomainError);
    CHECK_THROWS_AS(QuantileDistribution({}, {}), DomainError);
}

TEST_CASE("canonicalization sorts and merges equal atoms") {
    QuantileDistribution d({5.0, 1.0, 5.0}, {0.25, 0.5, 0.25});
    REQUIRE(d.size() == 2);
    CHECK(d.atoms()[0] == 1.0);
    CHECK(d.atoms()[1] == 5.0);
    CHECK(d.masses()[1] == 0.5);
}

TEST_CASE("independent_sum enumerates the exact product") {
    QuantileDistribution za({0.25, 1.0}, {0.5, 0.5});
    QuantileDistribution zb({0.0, 100.0}, {0.5, 0.5});

    auto joint = independent_sum({za, zb}, {1.0, 1.0});
    REQUIRE(joint.size() == 4);
    CHECK(joint.atoms() == std::vector<double>{0.25, 1.0, 100.25, 101.0});
    for (double m : joint.masses()) CHECK(m == 0.25);
    CHECK(joint.quantile(0.5) == 1.0);

    auto same = independent_sum({za}, {1.0});
    CHECK(same.atoms() == za.atoms());
    CHECK(same.masses() == za.masses());

    auto resz = independent_sum({zb, zb}, {2.0, 2.0});
    CHECK(resz.quantile(0.5) == 200.0);

    CHECK_THROWS_AS(independent_sum({za, zb}, {1.0, -1.0}), DomainError);
}

TEST_CASE("independent_sum respects the atom cap") {
    std::vector<QuantileDistribution> dists;
    std::vector<double> weights;
    for (int i = 0; i < 8; ++i) {
        dists.push_back(random_dist(8));
        weights.push_back(1.0);
    }
    CHECK_THROWS_AS(independent_sum(dists, weights, 1000), CapacityError);
}

TEST_CASE("map_values pushes atoms through f") {
    QuantileDistribution d({3.0, 0.0}, {0.5, 0.5});
    auto cubed = map_values(d, [](double x) { return x * x * x; });
    CHECK(cubed.atoms() == std::vector<double>{0.0, 27.0});
    CHECK(cubed.expectation() == 13.5);

    auto same = map_values(d, [](double x) { return x; });
    CHECK(same.atoms() == d.atoms());

    auto exp5 = map_values(QuantileDistribution::dirac(3.0),
                           [](double x) { return std::pow(5.0, x); });
    CHECK(exp5.atoms() == std::vector<double>{125.0});

    CHECK_THROWS_AS(map_values(d, [](double) { return std::nan(""); }), NumericError);
}

TEST_CASE("parse_distribution reads atom:mass pairs") {
    auto d = parse_distribution("0:0.5 100:0.5");
    CHECK(d.atoms() == std::vector<double>{0.0, 100.0});
    CHECK_THROWS_AS(parse_distribution("0:0.5 100:0.4"), ParseError);
    CHECK_THROWS_AS(parse_distribution("junk"), ParseError);
    CHECK_THROWS_AS(parse_distribution(""), ParseError);
}

TEST_CASE("quantile function is non-decreasing in omega") {
    for (int trial = 0; trial < 200; ++trial) {
        auto d = random_dist();
        double prev = d.quantile(0.0);
        for (int k = 1; k <= 50; ++k) {
            double w = static_cast<double>(k) / 50.0;
            double cur = d.quantile(w);
            REQUIRE(cur >= prev);
            prev = cur;
        }
    }
}

TEST_CASE("VaR and DRMs are equivariant under positive affine maps") {
    std::uniform_real_distribution<double> scale(0.0, 3.0);
    std::uniform_real_distribution<double> shift(-10.0, 10.0);
    std::uniform_real_distribution<double> level(0.01, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        auto d = random_dist();
        double a = scale(rng), b = shift(rng);
        auto mapped = map_values(d, [&](double x) { return a * x + b; });
        std::vector<RiskMeasure> measures = {
            RiskMeasure::var(level(rng)), RiskMeasure::cvar(level(rng)),
            RiskMeasure::wang(shift(rng) / 10.0), RiskMeasure::cpw(0.3 + level(rng))};
        for (const auto& m : measures) {
            double lhs = m.evaluate(mapped);
            double rhs = a * m.evaluate(d) + b;
            REQUIRE_THAT(lhs, Catch::Matchers::WithinAbs(rhs, 1e-9));
        }
    }
}

TEST_CASE("comonotonic additivity of quantile mixtures") {
    std::uniform_int_distribution<int> natoms(1, 8);
    std::uniform_int_distribution<int> nparts(2, 4);
    std::uniform_real_distribution<double> atom(-20.0, 20.0);
    std::uniform_real_distribution<double> weight(0.0, 2.0);
    std::uniform_real_distribution<double> level(0.01, 1.0);

    for (int trial = 0; trial < 200; ++trial) {
        int n = natoms(rng);
        int parts = nparts(rng);
        std::vector<std::vector<double>> qs(parts, std::vector<double>(n));
        std::vector<double> ks(parts);
        std::vector<double> mixed(n, 0.0);
        for (int p = 0; p < parts; ++p) {
            for (int j = 0; j < n; ++j) qs[p][j] = atom(rng);
            std::sort(qs[p].begin(), qs[p].end());
            ks[p] = weight(rng);
            for (int j = 0; j < n; ++j) mixed[j] += ks[p] * qs[p][j];
        }
        auto joint = QuantileDistribution::from_quantiles(mixed);

        double alpha = level(rng);
        auto var = RiskMeasure::var(alpha);
        double var_sum = 0.0;
        for (int p = 0; p < parts; ++p)
            var_sum += ks[p] * var.evaluate(QuantileDistribution::from_quantiles(qs[p]));
        REQUIRE(var.evaluate(joint) == var_sum);

        auto drm = RiskMeasure::wang(0.75);
        double drm_sum = 0.0;
        for (int p = 0; p < parts; ++p)
            drm_sum += ks[p] * drm.evaluate(QuantileDistribution::from_quantiles(qs[p]));
        REQUIRE_THAT(drm.evaluate(joint), Catch::Matchers::WithinAbs(drm_sum, 1e-9));
    }
}
