#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "riskq/agent.hpp"

using namespace riskq;

namespace {

AgentNetConfig tiny_config(UtilityVariant v) {
    AgentNetConfig cfg;
    cfg.obs_dim = 4;
    cfg.num_actions = 3;
    cfg.num_agents = 2;
    cfg.quantiles = 8;
    cfg.hidden = 16;
    cfg.iqn_embed = 8;
    cfg.variant = v;
    return cfg;
}

Mat random_input(int batch, const AgentNetConfig& cfg, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Mat x(batch, cfg.input_dim());
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = unit(rng);
    return x;
}

} // namespace

TEST_CASE("fresh nets emit finite sorted quantiles") {
    std::mt19937_64 rng(21);
    auto cfg = tiny_config(UtilityVariant::qr_sorted);
    AgentNet net(cfg);
    ParameterStore store;
    net.init(store, rng);

    Tape t(false);
    Mat x = random_input(5, cfg, rng);
    auto fwd = net.forward(t, store, t.constant(x), net.initial_hidden(t, 5), rng);
    const Mat& v = t.value(fwd.values);
    REQUIRE(v.rows() == 5);
    REQUIRE(v.cols() == cfg.num_actions * cfg.quantiles);
    REQUIRE(v.allFinite());
    for (Eigen::Index r = 0; r < v.rows(); ++r)
        for (int a = 0; a < cfg.num_actions; ++a)
            for (int j = 1; j < cfg.quantiles; ++j)
                REQUIRE(v(r, a * cfg.quantiles + j) >= v(r, a * cfg.quantiles + j - 1));
    REQUIRE(fwd.fractions == midpoint_fractions(cfg.quantiles));
}

TEST_CASE("forward passes are deterministic for frozen parameters") {
    std::mt19937_64 rng(22);
    auto cfg = tiny_config(UtilityVariant::qr_sorted);
    AgentNet net(cfg);
    ParameterStore store;
    net.init(store, rng);
    Mat x = random_input(3, cfg, rng);

    auto run = [&]() {
        Tape t(false);
        std::mt19937_64 omega(0);
        auto fwd = net.forward(t, store, t.constant(x), net.initial_hidden(t, 3), omega);
        return Mat(t.value(fwd.values));
    };
    CHECK(run() == run());
}

TEST_CASE("sorted output is the ascending permutation of the unsorted one") {
    std::mt19937_64 rng(23);
    auto cfg_unsorted = tiny_config(UtilityVariant::qr_unsorted);
    auto cfg_sorted = tiny_config(UtilityVariant::qr_sorted);
    AgentNet unsorted(cfg_unsorted), sorted(cfg_sorted);
    ParameterStore store;
    unsorted.init(store, rng); // same parameter names serve both variants

    Mat x = random_input(4, cfg_unsorted, rng);
    Tape t(false);
    std::mt19937_64 omega(0);
    auto raw = unsorted.forward(t, store, t.constant(x), unsorted.initial_hidden(t, 4), omega);
    auto asc = sorted.forward(t, store, t.constant(x), sorted.initial_hidden(t, 4), omega);

    Mat manual = t.value(raw.values);
    for (Eigen::Index r = 0; r < manual.rows(); ++r)
        for (int a = 0; a < cfg_unsorted.num_actions; ++a) {
            auto seg = manual.row(r).segment(a * cfg_unsorted.quantiles, cfg_unsorted.quantiles);
            std::sort(seg.begin(), seg.end());
        }
    CHECK(manual == t.value(asc.values));
}

TEST_CASE("iqn variants sample fresh sorted fractions per pass") {
    std::mt19937_64 rng(24);
    auto cfg = tiny_config(UtilityVariant::iqn_sorted);
    AgentNet net(cfg);
    ParameterStore store;
    net.init(store, rng);

    Mat x = random_input(2, cfg, rng);
    Tape t(false);
    std::mt19937_64 omega(5);
    auto f1 = net.forward(t, store, t.constant(x), net.initial_hidden(t, 2), omega);
    auto f2 = net.forward(t, store, t.constant(x), net.initial_hidden(t, 2), omega);
    CHECK(f1.fractions != f2.fractions);
    CHECK(std::is_sorted(f1.fractions.begin(), f1.fractions.end()));
    REQUIRE(t.value(f1.values).allFinite());
    for (Eigen::Index r = 0; r < 2; ++r)
        for (int a = 0; a < cfg.num_actions; ++a)
            for (int j = 1; j < cfg.quantiles; ++j)
                REQUIRE(t.value(f1.values)(r, a * cfg.quantiles + j) >=
                        t.value(f1.values)(r, a * cfg.quantiles + j - 1));
}

TEST_CASE("risk-greedy action selection") {
    std::vector<std::vector<double>> utilities = {{3.0, 3.0}, {0.0, 5.0}};
    CHECK(risk_greedy_action(utilities, RiskMeasure::cvar(1.0)) == 0);
    CHECK(risk_greedy_action(utilities, RiskMeasure::var(1.0)) == 1);
    std::vector<std::vector<double>> tied = {{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}};
    CHECK(risk_greedy_action(tied, RiskMeasure::var(0.5)) == 0);
}

TEST_CASE("row-based greedy matches the distribution route") {
    std::mt19937_64 rng(25);
    std::uniform_real_distribution<double> unit(-5.0, 5.0);
    const int actions = 4, j_count = 8;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> row(actions * j_count);
        for (double& v : row) v = unit(rng);
        std::vector<std::vector<double>> per_action(actions);
        for (int a = 0; a < actions; ++a) {
            per_action[a].assign(row.begin() + a * j_count, row.begin() + (a + 1) * j_count);
        }
        std::uniform_real_distribution<double> level(0.0, 1.0);
        auto measure = (trial % 2) ? RiskMeasure::var(level(rng))
                                   : RiskMeasure::wang(level(rng));
        auto weights = measure.uniform_weights(j_count);
        CHECK(risk_greedy_from_row(row.data(), actions, j_count, weights, false) ==
              risk_greedy_action(per_action, measure));
    }
}

TEST_CASE("greedy choice is invariant under common positive affine maps") {
    std::mt19937_64 rng(26);
    std::uniform_real_distribution<double> unit(-5.0, 5.0);
    std::uniform_real_distribution<double> pos(0.1, 4.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::vector<double>> per_action(3, std::vector<double>(6));
        for (auto& q : per_action)
            for (double& v : q) v = unit(rng);
        double a = pos(rng), b = unit(rng);
        auto mapped = per_action;
        for (auto& q : mapped)
            for (double& v : q) v = a * v + b;
        auto measure = RiskMeasure::cpw(0.71);
        CHECK(risk_greedy_action(per_action, measure) == risk_greedy_action(mapped, measure));
    }
}

TEST_CASE("cvar at level one reduces to the mean argmax") {
    std::mt19937_64 rng(27);
    std::uniform_real_distribution<double> unit(-5.0, 5.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::vector<double>> per_action(4, std::vector<double>(5));
        for (auto& q : per_action)
            for (double& v : q) v = unit(rng);
        int via_cvar = risk_greedy_action(per_action, RiskMeasure::cvar(1.0));
        int best = 0;
        double best_mean = 0.0;
        for (std::size_t a = 0; a < per_action.size(); ++a) {
            double mean = 0.0;
            for (double v : per_action[a]) mean += v;
            mean /= static_cast<double>(per_action[a].size());
            if (a == 0 || mean > best_mean) {
                best = static_cast<int>(a);
                best_mean = mean;
            }
        }
        CHECK(via_cvar == best);
    }
}

TEST_CASE("epsilon-greedy exploration statistics") {
    std::mt19937_64 rng(28);

    SECTION("epsilon 0 is always greedy") {
        for (int k = 0; k < 100; ++k) CHECK(epsilon_greedy(2, 4, 0.0, rng) == 2);
    }

    SECTION("epsilon 1 is uniform within 3 sigma") {
        const int n = 10000, actions = 4;
        std::vector<int> counts(actions, 0);
        for (int k = 0; k < n; ++k) ++counts[epsilon_greedy(0, actions, 1.0, rng)];
        double p = 1.0 / actions;
        double sigma = std::sqrt(n * p * (1.0 - p));
        for (int a = 0; a < actions; ++a)
            CHECK(std::abs(counts[a] - n * p) <= 3.0 * sigma);
    }

    SECTION("epsilon 0.5 with two actions picks greedy about 75%") {
        const int n = 10000;
        int greedy_count = 0;
        for (int k = 0; k < n; ++k)
            if (epsilon_greedy(1, 2, 0.5, rng) == 1) ++greedy_count;
        double sigma = std::sqrt(n * 0.75 * 0.25);
        CHECK(std::abs(greedy_count - n * 0.75) <= 3.0 * sigma);
    }

    CHECK_THROWS_AS(epsilon_greedy(0, 2, 1.5, rng), DomainError);
}
