#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "riskq/learner.hpp"

using namespace riskq;

namespace {

std::mt19937_64 rng(60606);

struct TinySetup {
    AgentNetConfig agent;
    MixerConfig mixer;
    LearnerConfig learner;
};

TinySetup tiny_setup(MixerVariant variant = MixerVariant::riskq, int agents = 2, int actions = 3,
                     int j_count = 4) {
    TinySetup s;
    s.agent.obs_dim = 3;
    s.agent.num_actions = actions;
    s.agent.num_agents = agents;
    s.agent.quantiles = j_count;
    s.agent.hidden = 8;
    s.agent.variant = UtilityVariant::qr_sorted;

    s.mixer.variant = variant;
    s.mixer.num_agents = agents;
    s.mixer.state_dim = 4;
    s.mixer.quantiles = j_count;
    s.mixer.key_dim = s.agent.hidden;
    s.mixer.embed_dim = 8;
    s.mixer.heads = 2;
    s.mixer.head_dim = 4;
    s.mixer.hyper_hidden = 8;
    s.mixer.joint_action_dim = agents * actions;
    return s;
}

EpisodeBatch random_episode(const TinySetup& s, int length, std::mt19937_64& r,
                            double reward_scale = 1.0) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_int_distribution<int> act(0, s.agent.num_actions - 1);
    EpisodeBatch e;
    for (int t = 0; t <= length; ++t) {
        std::vector<std::vector<double>> per_agent;
        for (int i = 0; i < s.agent.num_agents; ++i) {
            std::vector<double> o(static_cast<std::size_t>(s.agent.obs_dim));
            for (double& v : o) v = unit(r);
            per_agent.push_back(std::move(o));
        }
        e.obs.push_back(std::move(per_agent));
        std::vector<double> st(static_cast<std::size_t>(s.mixer.state_dim));
        for (double& v : st) v = unit(r);
        e.state.push_back(std::move(st));
    }
    for (int t = 0; t < length; ++t) {
        std::vector<int> u(static_cast<std::size_t>(s.agent.num_agents));
        for (int& a : u) a = act(r);
        e.actions.push_back(std::move(u));
        e.rewards.push_back(reward_scale * unit(r));
        e.terminated.push_back(t + 1 == length ? 1 : 0);
    }
    return e;
}

std::vector<RiskMeasure> measures_for(int agents, const RiskMeasure& m) {
    return std::vector<RiskMeasure>(static_cast<std::size_t>(agents), m);
}

} // namespace

TEST_CASE("qr huber loss on worked examples") {
    CHECK(qr_huber_loss({2.0, 2.0}, {0.25, 0.75}, {2.0, 2.0}) == 0.0);
    CHECK(qr_huber_loss({0.0}, {0.25}, {1.0}) == 0.125);  // delta = +1
    CHECK(qr_huber_loss({1.0}, {0.25}, {0.0}) == 0.375);  // delta = -1
    CHECK_THROWS_AS(qr_huber_loss({0.0}, {0.25, 0.5}, {1.0}), ContractError);
}

TEST_CASE("epsilon annealing schedule") {
    CHECK(anneal_epsilon(0) == 1.0);
    CHECK(anneal_epsilon(100000) == 0.05);
    CHECK_THAT(anneal_epsilon(50000), Catch::Matchers::WithinAbs(0.525, 1e-12));
    CHECK(anneal_epsilon(200000) == 0.05);
}

TEST_CASE("replay buffer is FIFO with bounded sampling") {
    auto s = tiny_setup();
    ReplayBuffer buffer(3);
    for (int k = 0; k < 5; ++k) {
        auto e = random_episode(s, 2 + k, rng);
        buffer.insert(std::move(e));
    }
    CHECK(buffer.size() == 3);
    // capacity 3, five inserts: episodes of lengths 4, 5 overwrote 2, 3
    std::vector<int> lengths;
    for (std::size_t i = 0; i < buffer.size(); ++i) lengths.push_back(buffer.at(i).length());
    std::sort(lengths.begin(), lengths.end());
    CHECK(lengths == std::vector<int>{4, 5, 6});

    CHECK_THROWS_AS(buffer.sample(4, rng), ContractError);
    auto sampled = buffer.sample(3, rng);
    CHECK(sampled.size() == 3);
}

TEST_CASE("targets: terminal steps equal the reward") {
    auto s = tiny_setup();
    Learner learner(s.agent, s.mixer, s.learner, measures_for(2, RiskMeasure::wang(0.75)), 11);
    auto e = random_episode(s, 3, rng);
    auto targets = learner.compute_targets({&e});
    const Mat& last = targets.y[2];
    for (int j = 0; j < s.agent.quantiles; ++j) CHECK(last(0, j) == e.rewards[2]);
}

TEST_CASE("targets: monte-carlo limit and linearity in lambda") {
    auto s = tiny_setup();

    SECTION("lambda 1, gamma 1 telescopes to the return") {
        auto cfg = s.learner;
        cfg.gamma = 1.0;
        cfg.td_lambda = 1.0;
        Learner learner(s.agent, s.mixer, cfg, measures_for(2, RiskMeasure::var(0.5)), 12);
        auto e = random_episode(s, 3, rng);
        e.rewards = {1.0, 1.0, 1.0};
        auto targets = learner.compute_targets({&e});
        for (int j = 0; j < s.agent.quantiles; ++j) CHECK(targets.y[0](0, j) == 3.0);
    }

    SECTION("lambda interpolates linearly") {
        auto make = [&](double lambda) {
            auto cfg = s.learner;
            cfg.td_lambda = lambda;
            return Learner(s.agent, s.mixer, cfg, measures_for(2, RiskMeasure::var(0.5)), 13);
        };
        auto l0 = make(0.0);
        auto l1 = make(1.0);
        auto lh = make(0.5);
        auto e = random_episode(s, 2, rng);
        Mat y0 = l0.compute_targets({&e}).y[0];
        Mat y1 = l1.compute_targets({&e}).y[0];
        Mat yh = lh.compute_targets({&e}).y[0];
        CHECK((yh - 0.5 * (y0 + y1)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("bootstrap actions are the per-agent risk-greedy ones") {
    auto s = tiny_setup();
    auto wang = RiskMeasure::wang(0.75);
    auto var1 = RiskMeasure::var(1.0);
    // mixed-metric split: agent 0 acts under var(1), agent 1 under wang(0.75)
    Learner learner(s.agent, s.mixer, s.learner, {var1, wang}, 14);
    auto e = random_episode(s, 3, rng);
    auto targets = learner.compute_targets({&e});

    // recompute greedy actions through the slow distribution route
    AgentNet net(s.agent);
    auto& tp = learner.target_parameters();
    Tape t(false);
    std::mt19937_64 omega(0x51ab5eedULL);
    std::vector<int> hidden = {net.initial_hidden(t, 1), net.initial_hidden(t, 1)};
    for (int step = 0; step < 3; ++step) {
        auto fractions = net.make_fractions(omega);
        for (int i = 0; i < 2; ++i) {
            Mat input = Mat::Zero(1, s.agent.input_dim());
            int col = 0;
            for (double v : e.obs[step][i]) input(0, col++) = v;
            if (step > 0) input(0, col + e.actions[step - 1][i]) = 1.0;
            col += s.agent.num_actions;
            input(0, col + i) = 1.0;
            auto fwd = net.forward(t, tp, t.constant(input), hidden[i], fractions);
            hidden[i] = fwd.hidden;
            std::vector<std::vector<double>> per_action;
            for (int a = 0; a < s.agent.num_actions; ++a) {
                const Mat& v = t.value(fwd.values);
                per_action.emplace_back(v.row(0).segment(a * s.agent.quantiles,
                                                         s.agent.quantiles).begin(),
                                        v.row(0).segment(a * s.agent.quantiles,
                                                         s.agent.quantiles).end());
            }
            int expect = risk_greedy_action(per_action, i == 0 ? var1 : wang);
            CHECK(targets.greedy[step][i][0] == expect);
        }
    }
}

TEST_CASE("padded steps contribute zero loss and zero gradient") {
    auto s = tiny_setup();
    Learner learner(s.agent, s.mixer, s.learner, measures_for(2, RiskMeasure::wang(0.75)), 15);
    auto short_e = random_episode(s, 2, rng);
    auto long_e = random_episode(s, 5, rng);

    auto loss_and_grads = [&](const std::vector<const EpisodeBatch*>& eps) {
        auto targets = learner.compute_targets(eps);
        Tape t(true);
        int loss = learner.build_loss(t, eps, targets);
        double value = t.value(loss)(0, 0);
        t.backward(loss);
        return std::make_pair(value, t.parameter_gradients(learner.parameters()));
    };

    auto [l_short, g_short] = loss_and_grads({&short_e});
    auto [l_long, g_long] = loss_and_grads({&long_e});
    auto [l_both, g_both] = loss_and_grads({&short_e, &long_e});

    CHECK_THAT(l_both, Catch::Matchers::WithinAbs((2.0 * l_short + 5.0 * l_long) / 7.0, 1e-12));
    for (const auto& [name, g] : g_both) {
        Mat expected = (2.0 * g_short.at(name) + 5.0 * g_long.at(name)) / 7.0;
        REQUIRE((g - expected).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("target parameters only move on sync") {
    auto s = tiny_setup();
    Learner learner(s.agent, s.mixer, s.learner, measures_for(2, RiskMeasure::wang(0.75)), 16);
    ReplayBuffer buffer(16);
    std::mt19937_64 r(1);
    for (int k = 0; k < 4; ++k) buffer.insert(random_episode(s, 3, r));

    auto cfg = s.learner;
    auto snapshot = learner.target_parameters().clone();
    auto before_online = learner.parameters().get("agent.fc1.w");
    std::mt19937_64 sample_rng(2);
    LearnerConfig small = cfg;
    (void)small;
    auto episodes = buffer.sample(4, sample_rng);
    learner.train_on(episodes);
    learner.train_on(episodes);

    for (const auto& [name, e] : snapshot.all())
        REQUIRE(learner.target_parameters().get(name) == e.value);
    CHECK(learner.parameters().get("agent.fc1.w") != before_online);

    learner.sync_target();
    for (const auto& [name, e] : learner.parameters().all())
        REQUIRE(learner.target_parameters().get(name) == e.value);
}

TEST_CASE("training overfits a frozen episode") {
    auto s = tiny_setup();
    auto cfg = s.learner;
    cfg.lr = 0.002;
    Learner learner(s.agent, s.mixer, cfg, measures_for(2, RiskMeasure::wang(0.75)), 17);
    std::mt19937_64 r(3);
    auto e = random_episode(s, 3, r);

    double initial = 0.0;
    double last = 0.0;
    for (int step = 0; step < 500; ++step) {
        last = learner.train_on({&e});
        if (step == 0) initial = last;
    }
    INFO("initial " << initial << " final " << last);
    CHECK(std::isfinite(initial));
    CHECK(last < 0.1 * initial);
}

TEST_CASE("full training loss passes a finite-difference check") {
    auto s = tiny_setup(MixerVariant::riskq, 2, 3, 4);
    Learner learner(s.agent, s.mixer, s.learner, measures_for(2, RiskMeasure::wang(0.75)), 18);
    std::mt19937_64 r(4);
    std::vector<EpisodeBatch> eps;
    for (int k = 0; k < 2; ++k) eps.push_back(random_episode(s, 3, r));
    std::vector<const EpisodeBatch*> batch = {&eps[0], &eps[1]};
    auto targets = learner.compute_targets(batch);

    auto build = [&](Tape& t) { return learner.build_loss(t, batch, targets); };
    double err = finite_diff_check(learner.parameters(), build, 1e-5, r, 0.02);
    INFO("max relative error " << err);
    CHECK(err <= 1e-4);
}

TEST_CASE("select_actions is deterministic and respects epsilon zero") {
    auto s = tiny_setup();
    Learner learner(s.agent, s.mixer, s.learner, measures_for(2, RiskMeasure::wang(0.75)), 19);
    std::vector<std::vector<double>> obs = {{0.1, 0.2, 0.3}, {-0.1, 0.0, 0.4}};

    auto run = [&]() {
        auto rollout = learner.new_rollout();
        std::mt19937_64 explore(9);
        std::vector<int> all;
        for (int step = 0; step < 3; ++step) {
            auto a = learner.select_actions(obs, rollout, 0.0, explore);
            all.insert(all.end(), a.begin(), a.end());
        }
        return all;
    };
    CHECK(run() == run());
}
