#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "riskq/distribution.hpp"
#include "riskq/nn.hpp"
#include "riskq/rigm.hpp"
#include "riskq/risk.hpp"

namespace riskq {

enum class UtilityVariant { qr_sorted, qr_unsorted, iqn_sorted, iqn_unsorted };

inline UtilityVariant parse_utility_variant(const std::string& s) {
    if (s == "qr_sorted") return UtilityVariant::qr_sorted;
    if (s == "qr_unsorted") return UtilityVariant::qr_unsorted;
    if (s == "iqn_sorted") return UtilityVariant::iqn_sorted;
    if (s == "iqn_unsorted") return UtilityVariant::iqn_unsorted;
    throw ParseError("unknown utility variant '" + s + "'");
}

inline bool variant_sorted(UtilityVariant v) {
    return v == UtilityVariant::qr_sorted || v == UtilityVariant::iqn_sorted;
}
inline bool variant_iqn(UtilityVariant v) {
    return v == UtilityVariant::iqn_sorted || v == UtilityVariant::iqn_unsorted;
}

struct AgentNetConfig {
    int obs_dim = 0;
    int num_actions = 0;
    int num_agents = 0; // one-hot agent id appended to the input
    int quantiles = 32;
    int hidden = 64;
    int iqn_embed = 64;
    UtilityVariant variant = UtilityVariant::qr_sorted;

    // observation + one-hot previous action + one-hot agent id
    int input_dim() const { return obs_dim + num_actions + num_agents; }
};

/// Shared per-agent utility network: MLP -> GRU -> quantile head. Outputs a
/// [B x A*J] matrix of quantile values, J per action, sorted ascending per
/// action in the sorted variants.
class AgentNet {
public:
    explicit AgentNet(AgentNetConfig cfg)
        : cfg_(cfg),
          fc1_{"agent.fc1", cfg.input_dim(), cfg.hidden, Activation::relu},
          gru_{"agent.gru", cfg.hidden, cfg.hidden},
          qr_head_{"agent.out", cfg.hidden, cfg.num_actions * cfg.quantiles, Activation::linear},
          iqn_embed_{"agent.iqn_embed", cfg.iqn_embed, cfg.hidden, Activation::relu},
          iqn_head_{"agent.out", cfg.hidden, cfg.num_actions, Activation::linear} {}

    const AgentNetConfig& config() const { return cfg_; }

    void init(ParameterStore& store, std::mt19937_64& rng) const {
        fc1_.init(store, rng);
        gru_.init(store, rng);
        if (variant_iqn(cfg_.variant)) {
            iqn_embed_.init(store, rng);
            iqn_head_.init(store, rng);
        } else {
            qr_head_.init(store, rng);
        }
    }

    struct Forward {
        int values;  // [B x A*J], blocks of J per action
        int hidden;  // [B x hidden]
        std::vector<double> fractions; // length J
    };

    /// Fractions for one forward pass: quantile midpoints for the QR
    /// variants, freshly sampled sorted uniforms for IQN. Agents mixing into
    /// one joint head must share the result (the shared-sample contract).
    std::vector<double> make_fractions(std::mt19937_64& omega_rng) const {
        if (!variant_iqn(cfg_.variant)) return midpoint_fractions(cfg_.quantiles);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::vector<double> fractions(static_cast<std::size_t>(cfg_.quantiles));
        for (double& w : fractions) w = unit(omega_rng);
        std::sort(fractions.begin(), fractions.end());
        return fractions;
    }

    Forward forward(Tape& t, ParameterStore& store, int input, int hidden,
                    std::mt19937_64& omega_rng) const {
        return forward(t, store, input, hidden, make_fractions(omega_rng));
    }

    /// One recurrent step over a batch at the given fractions.
    Forward forward(Tape& t, ParameterStore& store, int input, int hidden,
                    std::vector<double> fractions) const {
        int trunk = fc1_(t, store, input);
        int h = gru_.step(t, store, trunk, hidden);

        Forward out;
        out.hidden = h;
        out.fractions = std::move(fractions);
        if (static_cast<int>(out.fractions.size()) != cfg_.quantiles)
            throw ContractError("fraction count mismatch");
        if (!variant_iqn(cfg_.variant)) {
            out.values = qr_head_(t, store, h);
        } else {
            // per-sample cosine embedding modulating the trunk feature
            int b = t.rows(input);
            std::vector<int> per_action(static_cast<std::size_t>(cfg_.num_actions));
            std::vector<int> per_j(static_cast<std::size_t>(cfg_.quantiles));
            for (int j = 0; j < cfg_.quantiles; ++j) {
                Mat cosfeat(1, cfg_.iqn_embed);
                for (int k = 0; k < cfg_.iqn_embed; ++k)
                    cosfeat(0, k) =
                        std::cos(M_PI * k * out.fractions[static_cast<std::size_t>(j)]);
                int embed = iqn_embed_(t, store, t.constant(cosfeat)); // [1 x hidden]
                int tiled = t.matmul(t.constant(Mat::Ones(b, 1)), embed);
                per_j[static_cast<std::size_t>(j)] =
                    iqn_head_(t, store, t.hadamard(h, tiled)); // [B x A]
            }
            for (int a = 0; a < cfg_.num_actions; ++a) {
                std::vector<int> cols(static_cast<std::size_t>(cfg_.quantiles));
                for (int j = 0; j < cfg_.quantiles; ++j)
                    cols[static_cast<std::size_t>(j)] =
                        t.slice_cols(per_j[static_cast<std::size_t>(j)], a, 1);
                per_action[static_cast<std::size_t>(a)] = t.concat_cols(cols);
            }
            out.values = t.concat_cols(per_action);
        }
        if (variant_sorted(cfg_.variant))
            out.values = t.sort_blocks(out.values, cfg_.quantiles);
        return out;
    }

    int initial_hidden(Tape& t, int batch) const {
        return t.constant(Mat::Zero(batch, cfg_.hidden));
    }

private:
    AgentNetConfig cfg_;
    Dense fc1_;
    GruCell gru_;
    Dense qr_head_;
    Dense iqn_embed_;
    Dense iqn_head_;
};

/// Risk-greedy action from per-action quantile vectors (uniform masses),
/// smallest index winning ties.
inline int risk_greedy_action(const std::vector<std::vector<double>>& per_action_quantiles,
                              const RiskMeasure& measure) {
    if (per_action_quantiles.empty()) throw ContractError("no actions to select from");
    int best = 0;
    double best_value = 0.0;
    for (std::size_t a = 0; a < per_action_quantiles.size(); ++a) {
        auto dist = QuantileDistribution::from_quantiles(per_action_quantiles[a]);
        double v = measure.evaluate(dist);
        if (a == 0 || v > best_value) {
            best = static_cast<int>(a);
            best_value = v;
        }
    }
    return best;
}

/// Fast path over one row of an AgentNet output ([A*J] action-major blocks).
/// `weights` must come from measure.uniform_weights(J). If the values are not
/// sorted per action (unsorted variants) a local sorted copy is used.
inline int risk_greedy_from_row(const double* row, int num_actions, int quantiles,
                                const std::vector<double>& weights, bool values_sorted) {
    int best = 0;
    double best_value = 0.0;
    std::vector<double> scratch;
    for (int a = 0; a < num_actions; ++a) {
        const double* q = row + a * quantiles;
        double v = 0.0;
        if (values_sorted) {
            for (int j = 0; j < quantiles; ++j) v += weights[static_cast<std::size_t>(j)] * q[j];
        } else {
            scratch.assign(q, q + quantiles);
            std::sort(scratch.begin(), scratch.end());
            for (int j = 0; j < quantiles; ++j)
                v += weights[static_cast<std::size_t>(j)] * scratch[static_cast<std::size_t>(j)];
        }
        if (a == 0 || v > best_value) {
            best = a;
            best_value = v;
        }
    }
    return best;
}

/// With probability epsilon a uniform random action, otherwise the greedy one.
inline int epsilon_greedy(int greedy, int num_actions, double epsilon, std::mt19937_64& rng) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw DomainError("epsilon must be in [0,1]");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (unit(rng) < epsilon) {
        std::uniform_int_distribution<int> pick(0, num_actions - 1);
        return pick(rng);
    }
    return greedy;
}

} // namespace riskq
