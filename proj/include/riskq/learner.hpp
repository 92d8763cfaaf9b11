#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <vector>

#include "riskq/agent.hpp"
#include "riskq/mixer.hpp"
#include "riskq/nn.hpp"
#include "riskq/risk.hpp"

namespace riskq {

/// One stored episode. Observations and states carry T+1 entries (reset view
/// plus one per step); actions, rewards and termination flags carry T.
struct EpisodeBatch {
    std::vector<std::vector<std::vector<double>>> obs; // [t][agent][dim]
    std::vector<std::vector<double>> state;            // [t][dim]
    std::vector<std::vector<int>> actions;             // [t][agent]
    std::vector<double> rewards;                       // [t]
    std::vector<std::uint8_t> terminated;              // [t]

    int length() const { return static_cast<int>(rewards.size()); }

    void validate() const {
        std::size_t t = rewards.size();
        if (t == 0) throw ContractError("empty episode");
        if (obs.size() != t + 1 || state.size() != t + 1 || actions.size() != t ||
            terminated.size() != t)
            throw ContractError("episode field lengths disagree");
        for (double r : rewards)
            if (!std::isfinite(r)) throw ContractError("non-finite reward in episode");
    }
};

/// FIFO ring of episodes with uniform sampling.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity = 5000) : capacity_(capacity) {}

    void insert(EpisodeBatch episode) {
        episode.validate();
        if (episodes_.size() < capacity_) {
            episodes_.push_back(std::move(episode));
        } else {
            episodes_[next_] = std::move(episode);
            next_ = (next_ + 1) % capacity_;
        }
    }

    std::size_t size() const { return episodes_.size(); }
    const EpisodeBatch& at(std::size_t i) const { return episodes_[i]; }

    /// Uniform sample of n distinct stored episodes.
    std::vector<const EpisodeBatch*> sample(std::size_t n, std::mt19937_64& rng) const {
        if (n > episodes_.size())
            throw ContractError("cannot sample more episodes than stored");
        std::vector<std::size_t> idx(episodes_.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t k = 0; k < n; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
            std::swap(idx[k], idx[pick(rng)]);
        }
        std::vector<const EpisodeBatch*> out;
        out.reserve(n);
        for (std::size_t k = 0; k < n; ++k) out.push_back(&episodes_[idx[k]]);
        return out;
    }

private:
    std::size_t capacity_;
    std::size_t next_ = 0;
    std::vector<EpisodeBatch> episodes_;
};

/// epsilon(step) = max(finish, start - step * (start - finish) / anneal_steps)
inline double anneal_epsilon(long long step, double start = 1.0, double finish = 0.05,
                             long long anneal_steps = 100000) {
    if (anneal_steps <= 0) return finish;
    double eps = start - static_cast<double>(step) * (start - finish) /
                             static_cast<double>(anneal_steps);
    return std::max(finish, eps);
}

/// Reference quantile-Huber regression loss:
/// (1/M) sum_m sum_j |w_j - 1{y_m - p_j < 0}| * L_kappa(y_m - p_j) / kappa.
inline double qr_huber_loss(const std::vector<double>& predicted,
                            const std::vector<double>& fractions,
                            const std::vector<double>& targets, double kappa = 1.0) {
    if (predicted.size() != fractions.size())
        throw ContractError("qr_huber_loss fraction count mismatch");
    if (targets.empty()) throw ContractError("qr_huber_loss needs target samples");
    double acc = 0.0;
    for (double y : targets) {
        for (std::size_t j = 0; j < predicted.size(); ++j) {
            double delta = y - predicted[j];
            double w = std::abs(fractions[j] - (delta < 0.0 ? 1.0 : 0.0));
            double huber = std::abs(delta) <= kappa ? 0.5 * delta * delta
                                                    : kappa * (std::abs(delta) - 0.5 * kappa);
            acc += w * huber / kappa;
        }
    }
    return acc / static_cast<double>(targets.size());
}

struct LearnerConfig {
    double gamma = 0.99;
    double td_lambda = 0.6;
    double lr = 0.001;
    double rms_decay = 0.99;
    double rms_eps = 1e-5;
    double grad_clip = 10.0;
    double kappa = 1.0;
    int batch_size = 32;
};

/// Owns the online and target parameter stores and runs the quantile-mixture
/// training step: risk-greedy bootstrap actions under the target network,
/// per-quantile TD(lambda) returns, masked quantile-Huber regression, and an
/// RMSProp update with global-norm clipping.
class Learner {
public:
    Learner(AgentNetConfig agent_cfg, MixerConfig mixer_cfg, LearnerConfig cfg,
            std::vector<RiskMeasure> per_agent_measures, std::uint64_t init_seed)
        : agent_cfg_(agent_cfg),
          mixer_cfg_(mixer_cfg),
          cfg_(cfg),
          measures_(std::move(per_agent_measures)),
          agent_(agent_cfg),
          mixer_(mixer_cfg),
          omega_rng_(init_seed ^ 0x9e3779b97f4a7c15ULL) {
        if (static_cast<int>(measures_.size()) != mixer_cfg_.num_agents)
            throw ContractError("one risk measure per agent required");
        std::mt19937_64 rng(init_seed);
        agent_.init(online_, rng);
        mixer_.init(online_, rng);
        target_ = online_.clone();
        for (const auto& m : measures_)
            measure_weights_.push_back(m.uniform_weights(agent_cfg_.quantiles));
    }

    const AgentNetConfig& agent_config() const { return agent_cfg_; }
    const MixerConfig& mixer_config() const { return mixer_cfg_; }
    ParameterStore& parameters() { return online_; }
    const ParameterStore& parameters() const { return online_; }
    ParameterStore& target_parameters() { return target_; }
    const std::vector<RiskMeasure>& measures() const { return measures_; }

    void sync_target() { target_ = online_.clone(); }

    // ---- acting ----

    struct RolloutState {
        Mat hidden;                    // [N x hidden]
        std::vector<int> prev_actions; // -1 before the first step
    };

    RolloutState new_rollout() const {
        RolloutState s;
        s.hidden = Mat::Zero(mixer_cfg_.num_agents, agent_cfg_.hidden);
        s.prev_actions.assign(static_cast<std::size_t>(mixer_cfg_.num_agents), -1);
        return s;
    }

    /// Risk-greedy actions with per-agent epsilon exploration; advances the
    /// recurrent state. Uses the online parameters.
    std::vector<int> select_actions(const std::vector<std::vector<double>>& obs,
                                    RolloutState& rollout, double epsilon,
                                    std::mt19937_64& explore_rng) {
        int n = mixer_cfg_.num_agents;
        Mat input(n, agent_cfg_.input_dim());
        for (int i = 0; i < n; ++i)
            fill_input_row(input, i, obs[static_cast<std::size_t>(i)],
                           rollout.prev_actions[static_cast<std::size_t>(i)], i);

        Tape t(false);
        auto fwd = agent_.forward(t, online_, t.constant(input), t.constant(rollout.hidden),
                                  omega_rng_);
        rollout.hidden = t.value(fwd.hidden);

        const Mat& values = t.value(fwd.values);
        bool sorted = variant_sorted(agent_cfg_.variant);
        std::vector<int> actions(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            int greedy = risk_greedy_from_row(values.row(i).data(), agent_cfg_.num_actions,
                                              agent_cfg_.quantiles,
                                              measure_weights_[static_cast<std::size_t>(i)],
                                              sorted);
            actions[static_cast<std::size_t>(i)] =
                epsilon_greedy(greedy, agent_cfg_.num_actions, epsilon, explore_rng);
            rollout.prev_actions[static_cast<std::size_t>(i)] =
                actions[static_cast<std::size_t>(i)];
        }
        return actions;
    }

    // ---- training ----

    struct TargetResult {
        std::vector<Mat> y;                              // per step, [B x J]
        std::vector<std::vector<std::vector<int>>> greedy; // [t][agent][episode]
    };

    /// Bootstrap targets from the target network: per-agent risk-greedy
    /// actions, target-mixer quantiles (sorted), then per-quantile-index
    /// TD(lambda) returns computed backward in time. No gradients flow here.
    TargetResult compute_targets(const std::vector<const EpisodeBatch*>& episodes) {
        int b = static_cast<int>(episodes.size());
        int t_max = 0;
        for (const auto* e : episodes) t_max = std::max(t_max, e->length());
        int n = mixer_cfg_.num_agents;
        int j_count = agent_cfg_.quantiles;

        Tape t(false);
        // target-net mixer quantiles at the greedy joint action, per step
        std::vector<Mat> boot(static_cast<std::size_t>(t_max), Mat::Zero(b, j_count));
        TargetResult result;
        result.greedy.assign(static_cast<std::size_t>(t_max),
                             std::vector<std::vector<int>>(
                                 static_cast<std::size_t>(n),
                                 std::vector<int>(static_cast<std::size_t>(b), 0)));

        std::vector<int> hidden(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) hidden[static_cast<std::size_t>(i)] = t.constant(Mat::Zero(b, agent_cfg_.hidden));
        // target omega stream is deterministic per call for the IQN variants
        std::mt19937_64 omega(0x51ab5eedULL);

        bool sorted = variant_sorted(agent_cfg_.variant);
        for (int step = 0; step < t_max; ++step) {
            std::vector<int> theta_nodes(static_cast<std::size_t>(n));
            std::vector<int> key_nodes(static_cast<std::size_t>(n));
            auto fractions = agent_.make_fractions(omega);
            for (int i = 0; i < n; ++i) {
                Mat input = Mat::Zero(b, agent_cfg_.input_dim());
                for (int e = 0; e < b; ++e) {
                    const auto* ep = episodes[static_cast<std::size_t>(e)];
                    if (step > ep->length()) continue;
                    int prev = step > 0 ? ep->actions[static_cast<std::size_t>(step - 1)]
                                              [static_cast<std::size_t>(i)]
                                        : -1;
                    fill_input_row(input, e,
                                   ep->obs[static_cast<std::size_t>(step)]
                                          [static_cast<std::size_t>(i)],
                                   prev, i);
                }
                auto fwd = agent_.forward(t, target_, t.constant(input),
                                          hidden[static_cast<std::size_t>(i)], fractions);
                hidden[static_cast<std::size_t>(i)] = fwd.hidden;
                key_nodes[static_cast<std::size_t>(i)] = fwd.hidden;

                // per-row greedy action under this agent's measure
                const Mat& values = t.value(fwd.values);
                std::vector<int> greedy_rows(static_cast<std::size_t>(b), 0);
                for (int e = 0; e < b; ++e) {
                    int g = risk_greedy_from_row(values.row(e).data(), agent_cfg_.num_actions,
                                                 j_count,
                                                 measure_weights_[static_cast<std::size_t>(i)],
                                                 sorted);
                    greedy_rows[static_cast<std::size_t>(e)] = g;
                    result.greedy[static_cast<std::size_t>(step)][static_cast<std::size_t>(i)]
                                 [static_cast<std::size_t>(e)] = g;
                }
                theta_nodes[static_cast<std::size_t>(i)] =
                    t.gather_blocks(fwd.values, greedy_rows, j_count);
            }

            Mat state = Mat::Zero(b, mixer_cfg_.state_dim);
            Mat onehot = Mat::Zero(b, mixer_cfg_.joint_action_dim);
            for (int e = 0; e < b; ++e) {
                const auto* ep = episodes[static_cast<std::size_t>(e)];
                if (step > ep->length()) continue;
                const auto& s = ep->state[static_cast<std::size_t>(step)];
                for (std::size_t c = 0; c < s.size(); ++c)
                    state(e, static_cast<Eigen::Index>(c)) = s[c];
                for (int i = 0; i < n; ++i)
                    onehot(e, i * agent_cfg_.num_actions +
                                  result.greedy[static_cast<std::size_t>(step)]
                                               [static_cast<std::size_t>(i)]
                                               [static_cast<std::size_t>(e)]) = 1.0;
            }
            // the greedy joint action is the masked one: residual drops out
            Mat mask = Mat::Zero(b, 1);
            int mixed = mixer_.mix(t, target_, theta_nodes, t.constant(state), key_nodes, &mask,
                                   &onehot);
            Mat theta = t.value(mixed);
            for (int e = 0; e < b; ++e) {
                auto row = theta.row(e);
                std::sort(row.begin(), row.end());
            }
            boot[static_cast<std::size_t>(step)] = std::move(theta);
        }

        // per-quantile-index lambda returns, backward in time
        result.y.assign(static_cast<std::size_t>(t_max), Mat::Zero(b, j_count));
        double gamma = cfg_.gamma, lambda = cfg_.td_lambda;
        for (int step = t_max - 1; step >= 0; --step) {
            Mat& y = result.y[static_cast<std::size_t>(step)];
            for (int e = 0; e < b; ++e) {
                const auto* ep = episodes[static_cast<std::size_t>(e)];
                if (step >= ep->length()) continue;
                double r = ep->rewards[static_cast<std::size_t>(step)];
                if (ep->terminated[static_cast<std::size_t>(step)] || step + 1 >= ep->length()) {
                    y.row(e).setConstant(r);
                } else {
                    const Mat& next_boot = boot[static_cast<std::size_t>(step + 1)];
                    const Mat& next_y = result.y[static_cast<std::size_t>(step + 1)];
                    y.row(e) = (r + gamma * ((1.0 - lambda) * next_boot.row(e).array() +
                                             lambda * next_y.row(e).array()))
                                   .matrix();
                }
            }
        }
        return result;
    }

    /// One optimization step on a sampled batch. Returns the masked loss.
    double train_step(const ReplayBuffer& buffer, std::mt19937_64& rng) {
        auto episodes = buffer.sample(static_cast<std::size_t>(cfg_.batch_size), rng);
        return train_on(episodes);
    }

    double train_on(const std::vector<const EpisodeBatch*>& episodes) {
        auto targets = compute_targets(episodes);
        Tape t(true);
        int loss = build_loss(t, episodes, targets);
        double loss_value = t.value(loss)(0, 0);
        if (!std::isfinite(loss_value)) throw NumericError("non-finite training loss");
        t.backward(loss);
        auto grads = t.parameter_gradients(online_);
        clip_global_norm(grads, cfg_.grad_clip);
        rmsprop_update(online_, grads, cfg_.lr, cfg_.rms_decay, cfg_.rms_eps);
        return loss_value;
    }

    /// Builds the masked batch loss on the given tape (exposed so gradient
    /// checks can drive the full pipeline).
    int build_loss(Tape& t, const std::vector<const EpisodeBatch*>& episodes,
                   const TargetResult& targets) {
        int b = static_cast<int>(episodes.size());
        int t_max = 0;
        for (const auto* e : episodes) t_max = std::max(t_max, e->length());
        int n = mixer_cfg_.num_agents;
        int j_count = agent_cfg_.quantiles;
        bool sorted = variant_sorted(agent_cfg_.variant);
        bool residual = mixer_uses_residual(mixer_cfg_.variant);

        std::vector<int> hidden(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            hidden[static_cast<std::size_t>(i)] = t.constant(Mat::Zero(b, agent_cfg_.hidden));

        int loss_acc = -1;
        double total_mask = 0.0;
        for (int step = 0; step < t_max; ++step) {
            std::vector<int> theta_nodes(static_cast<std::size_t>(n));
            std::vector<int> key_nodes(static_cast<std::size_t>(n));
            std::vector<std::vector<int>> greedy_rows(
                static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(b), 0));
            auto fractions = agent_.make_fractions(omega_rng_);

            for (int i = 0; i < n; ++i) {
                Mat input = Mat::Zero(b, agent_cfg_.input_dim());
                std::vector<int> chosen(static_cast<std::size_t>(b), 0);
                for (int e = 0; e < b; ++e) {
                    const auto* ep = episodes[static_cast<std::size_t>(e)];
                    if (step >= ep->length()) continue;
                    int prev = step > 0 ? ep->actions[static_cast<std::size_t>(step - 1)]
                                              [static_cast<std::size_t>(i)]
                                        : -1;
                    fill_input_row(input, e,
                                   ep->obs[static_cast<std::size_t>(step)]
                                          [static_cast<std::size_t>(i)],
                                   prev, i);
                    chosen[static_cast<std::size_t>(e)] =
                        ep->actions[static_cast<std::size_t>(step)][static_cast<std::size_t>(i)];
                }
                auto fwd = agent_.forward(t, online_, t.constant(input),
                                          hidden[static_cast<std::size_t>(i)], fractions);
                hidden[static_cast<std::size_t>(i)] = fwd.hidden;
                key_nodes[static_cast<std::size_t>(i)] = fwd.hidden;

                if (residual) {
                    const Mat& values = t.value(fwd.values);
                    for (int e = 0; e < b; ++e)
                        greedy_rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(e)] =
                            risk_greedy_from_row(values.row(e).data(), agent_cfg_.num_actions,
                                                 j_count,
                                                 measure_weights_[static_cast<std::size_t>(i)],
                                                 sorted);
                }
                theta_nodes[static_cast<std::size_t>(i)] =
                    t.gather_blocks(fwd.values, chosen, j_count);
            }

            Mat state = Mat::Zero(b, mixer_cfg_.state_dim);
            Mat onehot = Mat::Zero(b, mixer_cfg_.joint_action_dim);
            Mat res_mask = Mat::Ones(b, 1);
            Mat step_mask = Mat::Zero(b, 1);
            for (int e = 0; e < b; ++e) {
                const auto* ep = episodes[static_cast<std::size_t>(e)];
                if (step >= ep->length()) continue;
                step_mask(e, 0) = 1.0;
                const auto& s = ep->state[static_cast<std::size_t>(step)];
                for (std::size_t c = 0; c < s.size(); ++c)
                    state(e, static_cast<Eigen::Index>(c)) = s[c];
                bool all_greedy = true;
                for (int i = 0; i < n; ++i) {
                    int a = ep->actions[static_cast<std::size_t>(step)][static_cast<std::size_t>(i)];
                    onehot(e, i * agent_cfg_.num_actions + a) = 1.0;
                    if (residual &&
                        a != greedy_rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(e)])
                        all_greedy = false;
                }
                if (residual && all_greedy) res_mask(e, 0) = 0.0;
            }

            int mixed = mixer_.mix(t, online_, theta_nodes, t.constant(state), key_nodes,
                                   &res_mask, &onehot);
            int step_loss = t.qr_huber(mixed, targets.y[static_cast<std::size_t>(step)],
                                       fractions, cfg_.kappa);
            int masked = t.sum_all(t.hadamard(step_loss, t.constant(step_mask)));
            loss_acc = (loss_acc < 0) ? masked : t.add(loss_acc, masked);
            total_mask += step_mask.sum();
        }
        if (total_mask <= 0.0) throw ContractError("batch has no unmasked steps");
        return t.scale(loss_acc, 1.0 / total_mask);
    }

private:
    void fill_input_row(Mat& input, int row, const std::vector<double>& obs, int prev_action,
                        int agent_id) const {
        if (static_cast<int>(obs.size()) != agent_cfg_.obs_dim)
            throw ContractError("observation size mismatch");
        int col = 0;
        for (double v : obs) input(row, col++) = v;
        if (prev_action >= 0) input(row, col + prev_action) = 1.0;
        col += agent_cfg_.num_actions;
        input(row, col + agent_id) = 1.0;
    }

    AgentNetConfig agent_cfg_;
    MixerConfig mixer_cfg_;
    LearnerConfig cfg_;
    std::vector<RiskMeasure> measures_;
    std::vector<std::vector<double>> measure_weights_;
    AgentNet agent_;
    MixerNet mixer_;
    ParameterStore online_;
    ParameterStore target_;
    std::mt19937_64 omega_rng_;
};

} // namespace riskq
