#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include "riskq/distribution.hpp"
#include "riskq/errors.hpp"
#include "riskq/rigm.hpp"

namespace riskq {

struct StepResult {
    std::vector<std::vector<double>> obs; // per agent
    std::vector<double> state;
    double reward = 0.0;
    bool terminated = false;
    std::map<std::string, double> info;
};

/// Uniform stepping contract shared by all environments. Instances are owned
/// by a single rollout worker; run several instances for parallel rollouts.
class Env {
public:
    virtual ~Env() = default;
    virtual int num_agents() const = 0;
    virtual int num_actions() const = 0;
    virtual int obs_dim() const = 0;
    virtual int state_dim() const = 0;
    virtual int horizon() const = 0;
    virtual StepResult reset(std::uint64_t seed) = 0;
    virtual StepResult step(const std::vector<int>& actions) = 0;
};

// ---------------------------------------------------------------------------
// Multi-Agent Cliff Navigation
// ---------------------------------------------------------------------------

/// Grid layout: the bottom row holds the start corner, a cliff strip and the
/// goal corner; the two agents start stacked in the cells above the start
/// corner. Stepping into a cliff cell ends the episode at -100; the team is
/// paid 0 once both agents stand on the goal. An agent that reaches the goal
/// waits there (moves ignored) at -0.5 per step until its partner arrives.
struct MacnConfig {
    int rows = 4;
    int cols = 11;
    int horizon = 100;
    int visibility = 2; // Chebyshev range for seeing the other agent

    void validate() const {
        if (rows < 3 || cols < 3) throw DomainError("macn grid must be at least 3x3");
        if (horizon < 1) throw DomainError("macn horizon must be positive");
    }

    bool is_cliff(int r, int c) const { return r == rows - 1 && c > 0 && c < cols - 1; }
    std::pair<int, int> goal() const { return {rows - 1, cols - 1}; }
    std::pair<int, int> start(int agent) const { return {rows - 2 - agent, 0}; }
};

class MacnEnv : public Env {
public:
    explicit MacnEnv(MacnConfig cfg) : cfg_(cfg) { cfg_.validate(); }

    int num_agents() const override { return 2; }
    int num_actions() const override { return 4; } // up, down, left, right
    int obs_dim() const override { return 5; }
    int state_dim() const override { return 5; }
    int horizon() const override { return cfg_.horizon; }
    const MacnConfig& config() const { return cfg_; }

    StepResult reset(std::uint64_t) override {
        for (int i = 0; i < 2; ++i) pos_[i] = cfg_.start(i);
        t_ = 0;
        done_ = false;
        StepResult r;
        fill_views(r);
        return r;
    }

    StepResult step(const std::vector<int>& actions) override {
        if (done_) throw ContractError("step on a terminated episode");
        if (actions.size() != 2) throw ContractError("macn expects two actions");
        auto goal = cfg_.goal();
        for (int i = 0; i < 2; ++i) {
            if (actions[i] < 0 || actions[i] >= 4) throw ContractError("invalid macn action");
            if (pos_[i] == goal) continue; // waiting on the goal
            auto [r, c] = pos_[i];
            switch (actions[i]) {
                case 0: r -= 1; break;
                case 1: r += 1; break;
                case 2: c -= 1; break;
                case 3: c += 1; break;
            }
            r = std::clamp(r, 0, cfg_.rows - 1);
            c = std::clamp(c, 0, cfg_.cols - 1);
            pos_[i] = {r, c};
        }
        ++t_;

        StepResult out;
        bool cliff = cfg_.is_cliff(pos_[0].first, pos_[0].second) ||
                     cfg_.is_cliff(pos_[1].first, pos_[1].second);
        int on_goal = (pos_[0] == goal ? 1 : 0) + (pos_[1] == goal ? 1 : 0);
        if (cliff) {
            out.reward = -100.0;
            out.terminated = true;
            out.info["cliff"] = 1.0;
        } else if (on_goal == 2) {
            out.reward = 0.0;
            out.terminated = true;
            out.info["joint_goal"] = 1.0;
        } else if (on_goal == 1) {
            out.reward = -0.5;
        } else {
            out.reward = -1.0;
        }
        if (!out.terminated && t_ >= cfg_.horizon) out.terminated = true;
        done_ = out.terminated;
        fill_views(out);
        return out;
    }

private:
    void fill_views(StepResult& r) const {
        r.obs.assign(2, std::vector<double>(5, 0.0));
        for (int i = 0; i < 2; ++i) {
            int other = 1 - i;
            r.obs[i][0] = static_cast<double>(pos_[i].first + 1) / cfg_.rows;
            r.obs[i][1] = static_cast<double>(pos_[i].second + 1) / cfg_.cols;
            int dr = std::abs(pos_[i].first - pos_[other].first);
            int dc = std::abs(pos_[i].second - pos_[other].second);
            if (std::max(dr, dc) <= cfg_.visibility) {
                r.obs[i][2] = static_cast<double>(pos_[other].first + 1) / cfg_.rows;
                r.obs[i][3] = static_cast<double>(pos_[other].second + 1) / cfg_.cols;
            }
            r.obs[i][4] = static_cast<double>(i);
        }
        r.state = {static_cast<double>(pos_[0].first + 1) / cfg_.rows,
                   static_cast<double>(pos_[0].second + 1) / cfg_.cols,
                   static_cast<double>(pos_[1].first + 1) / cfg_.rows,
                   static_cast<double>(pos_[1].second + 1) / cfg_.cols,
                   static_cast<double>(t_) / cfg_.horizon};
    }

    MacnConfig cfg_;
    std::pair<int, int> pos_[2];
    int t_ = 0;
    bool done_ = false;
};

/// Best achievable joint return, by uniform-cost search over the product
/// state space with the exact step-reward rules.
inline double macn_optimal_return(const MacnConfig& cfg) {
    cfg.validate();
    const int cells = cfg.rows * cfg.cols;
    auto cell = [&](int r, int c) { return r * cfg.cols + c; };
    auto goal = cfg.goal();
    const int goal_cell = cell(goal.first, goal.second);

    auto encode = [&](int p0, int p1) { return p0 * cells + p1; };
    std::vector<double> dist(static_cast<std::size_t>(cells) * cells,
                             std::numeric_limits<double>::infinity());
    using QE = std::pair<double, int>;
    std::priority_queue<QE, std::vector<QE>, std::greater<>> queue;

    auto p0 = cfg.start(0);
    auto p1 = cfg.start(1);
    int start = encode(cell(p0.first, p0.second), cell(p1.first, p1.second));
    dist[static_cast<std::size_t>(start)] = 0.0;
    queue.push({0.0, start});

    auto move = [&](int c, int action) {
        if (c == goal_cell) return c;
        int r = c / cfg.cols, col = c % cfg.cols;
        switch (action) {
            case 0: r -= 1; break;
            case 1: r += 1; break;
            case 2: col -= 1; break;
            case 3: col += 1; break;
        }
        r = std::clamp(r, 0, cfg.rows - 1);
        col = std::clamp(col, 0, cfg.cols - 1);
        return cell(r, col);
    };

    while (!queue.empty()) {
        auto [d, s] = queue.top();
        queue.pop();
        if (d > dist[static_cast<std::size_t>(s)]) continue;
        int c0 = s / cells, c1 = s % cells;
        if (c0 == goal_cell && c1 == goal_cell) return -d;
        for (int a0 = 0; a0 < 4; ++a0) {
            int n0 = move(c0, a0);
            for (int a1 = 0; a1 < 4; ++a1) {
                int n1 = move(c1, a1);
                bool cliff = cfg.is_cliff(n0 / cfg.cols, n0 % cfg.cols) ||
                             cfg.is_cliff(n1 / cfg.cols, n1 % cfg.cols);
                if (cliff) continue; // -100 and death is never part of an optimal plan
                int on_goal = (n0 == goal_cell ? 1 : 0) + (n1 == goal_cell ? 1 : 0);
                double cost = on_goal == 2 ? 0.0 : (on_goal == 1 ? 0.5 : 1.0);
                int ns = encode(n0, n1);
                if (d + cost < dist[static_cast<std::size_t>(ns)]) {
                    dist[static_cast<std::size_t>(ns)] = d + cost;
                    queue.push({d + cost, ns});
                }
            }
        }
    }
    throw ContractError("macn goal unreachable");
}

// ---------------------------------------------------------------------------
// Multi-Agent Car Following
// ---------------------------------------------------------------------------

enum class CrashMode { pessimistic, optimistic };

inline CrashMode parse_crash_mode(const std::string& s) {
    if (s == "pessimistic") return CrashMode::pessimistic;
    if (s == "optimistic") return CrashMode::optimistic;
    throw ParseError("unknown crash mode '" + s + "'");
}

/// Two cars on a 1-D track choosing accelerations from {-1, 0, +1}. Speeding
/// past the threshold crashes with probability 1 (pessimistic) or
/// min(1, 0.4 * overspeed) (optimistic). Reward sources: per-step penalty,
/// mutual-observation bonus, progress shaping, individual and joint arrival
/// bonuses, and the crash cost.
struct MacfConfig {
    double track_length = 30.0;
    double speed_threshold = 1.5;
    CrashMode crash_mode = CrashMode::pessimistic;
    double observation_range = 4.0;
    int horizon = 200;
    double step_penalty = -0.1;
    double mutual_observation_bonus = 0.05;
    double distance_shaping = 0.01;
    double individual_arrival = 1.0;
    double joint_arrival = 10.0;
    double crash_cost = -10.0;
    double start_gap = 2.0; // leader's head start

    double max_speed() const { return 2.0 * speed_threshold; }

    void validate() const {
        if (track_length <= 0.0) throw DomainError("macf track length must be positive");
        if (speed_threshold <= 0.0) throw DomainError("macf speed threshold must be positive");
        if (horizon < 1) throw DomainError("macf horizon must be positive");
        if (start_gap < 0.0 || start_gap >= track_length)
            throw DomainError("macf start gap must be inside the track");
    }
};

class MacfEnv : public Env {
public:
    explicit MacfEnv(MacfConfig cfg) : cfg_(cfg) { cfg_.validate(); }

    int num_agents() const override { return 2; }
    int num_actions() const override { return 3; } // decelerate, coast, accelerate
    int obs_dim() const override { return 7; }
    int state_dim() const override { return 7; }
    int horizon() const override { return cfg_.horizon; }
    const MacfConfig& config() const { return cfg_; }

    StepResult reset(std::uint64_t seed) override {
        rng_.seed(seed);
        x_[0] = 0.0;
        x_[1] = cfg_.start_gap;
        v_[0] = v_[1] = 0.0;
        arrived_[0] = arrived_[1] = false;
        t_ = 0;
        done_ = false;
        StepResult r;
        fill_views(r);
        return r;
    }

    StepResult step(const std::vector<int>& actions) override {
        if (done_) throw ContractError("step on a terminated episode");
        if (actions.size() != 2) throw ContractError("macf expects two actions");

        StepResult out;
        out.reward = cfg_.step_penalty;
        int crashed = 0;
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        for (int i = 0; i < 2; ++i) {
            if (actions[i] < 0 || actions[i] >= 3) throw ContractError("invalid macf action");
            if (arrived_[i]) continue;
            double accel = static_cast<double>(actions[i] - 1);
            v_[i] = std::clamp(v_[i] + accel, 0.0, cfg_.max_speed());
            double before = x_[i];
            x_[i] = std::min(x_[i] + v_[i], cfg_.track_length);
            out.reward += cfg_.distance_shaping * (x_[i] - before);

            double overspeed = v_[i] - cfg_.speed_threshold;
            if (overspeed > 0.0) {
                double p = cfg_.crash_mode == CrashMode::pessimistic
                               ? 1.0
                               : std::min(1.0, 0.4 * overspeed);
                if (unit(rng_) < p) ++crashed;
            }
            if (!arrived_[i] && x_[i] >= cfg_.track_length) {
                arrived_[i] = true;
                v_[i] = 0.0;
                out.reward += cfg_.individual_arrival;
            }
        }
        ++t_;

        if (std::abs(x_[0] - x_[1]) <= cfg_.observation_range)
            out.reward += cfg_.mutual_observation_bonus;

        if (crashed > 0) {
            out.reward += cfg_.crash_cost;
            out.terminated = true;
        } else if (arrived_[0] && arrived_[1]) {
            out.reward += cfg_.joint_arrival;
            out.terminated = true;
        } else if (t_ >= cfg_.horizon) {
            out.terminated = true;
        }
        out.info["crashed"] = static_cast<double>(crashed);
        done_ = out.terminated;
        fill_views(out);
        return out;
    }

private:
    void fill_views(StepResult& r) const {
        r.obs.assign(2, std::vector<double>(7, 0.0));
        for (int i = 0; i < 2; ++i) {
            int other = 1 - i;
            r.obs[i][0] = x_[i] / cfg_.track_length;
            r.obs[i][1] = v_[i] / cfg_.max_speed();
            r.obs[i][2] = arrived_[i] ? 1.0 : 0.0;
            if (std::abs(x_[i] - x_[other]) <= cfg_.observation_range) {
                r.obs[i][3] = 1.0;
                r.obs[i][4] = x_[other] / cfg_.track_length;
                r.obs[i][5] = v_[other] / cfg_.max_speed();
            }
            r.obs[i][6] = static_cast<double>(i);
        }
        r.state = {x_[0] / cfg_.track_length, v_[0] / cfg_.max_speed(), arrived_[0] ? 1.0 : 0.0,
                   x_[1] / cfg_.track_length, v_[1] / cfg_.max_speed(), arrived_[1] ? 1.0 : 0.0,
                   static_cast<double>(t_) / cfg_.horizon};
    }

    MacfConfig cfg_;
    std::mt19937_64 rng_;
    double x_[2] = {0.0, 0.0};
    double v_[2] = {0.0, 0.0};
    bool arrived_[2] = {false, false};
    int t_ = 0;
    bool done_ = false;
};

// ---------------------------------------------------------------------------
// One-step matrix-game adapter
// ---------------------------------------------------------------------------

/// Wraps a one-step game and a joint-construction rule as an environment:
/// each episode is a single step whose team reward is sampled from the joint
/// return distribution of the chosen joint action.
class MatrixGameEnv : public Env {
public:
    MatrixGameEnv(OneStepGame game, JointModel model, const RiskMeasure& mask_measure)
        : game_(std::move(game)) {
        game_.validate();
        actions_ = game_.num_actions(0);
        for (int i = 1; i < game_.num_agents(); ++i)
            if (game_.num_actions(i) != actions_)
                throw ContractError("matrix env needs a uniform action count");

        // residual rules need their greedy anchor before builds
        if (auto* r = std::get_if<ResidualQuantileMix>(&model)) {
            if (!r->greedy) r->greedy = decentralized_greedy_actions(game_, mask_measure);
        } else if (auto* r2 = std::get_if<ResidualMonotoneQuantileMix>(&model)) {
            if (!r2->greedy) r2->greedy = decentralized_greedy_actions(game_, mask_measure);
        }

        JointAction u(static_cast<std::size_t>(game_.num_agents()), 0);
        while (true) {
            tables_.emplace_back(build_joint(game_, model, u));
            int i = game_.num_agents() - 1;
            while (i >= 0) {
                if (++u[static_cast<std::size_t>(i)] < actions_) break;
                u[static_cast<std::size_t>(i)] = 0;
                --i;
            }
            if (i < 0) break;
        }
    }

    int num_agents() const override { return game_.num_agents(); }
    int num_actions() const override { return actions_; }
    int obs_dim() const override { return 1; }
    int state_dim() const override { return 1; }
    int horizon() const override { return 1; }
    const QuantileDistribution& joint_table(const JointAction& u) const {
        return tables_[static_cast<std::size_t>(index_of(u))];
    }

    StepResult reset(std::uint64_t seed) override {
        rng_.seed(seed);
        done_ = false;
        StepResult r;
        r.obs.assign(static_cast<std::size_t>(num_agents()), {1.0});
        r.state = {1.0};
        return r;
    }

    StepResult step(const std::vector<int>& actions) override {
        if (done_) throw ContractError("step on a terminated episode");
        const auto& dist = tables_[static_cast<std::size_t>(index_of(actions))];
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        double u = unit(rng_);
        double cum = 0.0;
        double reward = dist.atoms().back();
        for (std::size_t j = 0; j < dist.size(); ++j) {
            cum += dist.masses()[j];
            if (u <= cum) {
                reward = dist.atoms()[j];
                break;
            }
        }
        done_ = true;
        StepResult r;
        r.obs.assign(static_cast<std::size_t>(num_agents()), {1.0});
        r.state = {1.0};
        r.reward = reward;
        r.terminated = true;
        return r;
    }

private:
    int index_of(const std::vector<int>& u) const {
        if (static_cast<int>(u.size()) != game_.num_agents())
            throw ContractError("joint action arity mismatch");
        int idx = 0;
        for (int a : u) {
            if (a < 0 || a >= actions_) throw ContractError("action index out of range");
            idx = idx * actions_ + a;
        }
        return idx;
    }

    OneStepGame game_;
    int actions_ = 0;
    std::vector<QuantileDistribution> tables_;
    std::mt19937_64 rng_;
    bool done_ = false;
};

} // namespace riskq
