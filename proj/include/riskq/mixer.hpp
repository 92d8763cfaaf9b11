#pragma once

#include <string>
#include <vector>

#include "riskq/distribution.hpp"
#include "riskq/nn.hpp"

namespace riskq {

enum class MixerVariant { riskq, riskq_qmix, riskq_residual, riskq_residual_qmix, sum, qi };

inline MixerVariant parse_mixer_variant(const std::string& s) {
    if (s == "riskq") return MixerVariant::riskq;
    if (s == "riskq_qmix") return MixerVariant::riskq_qmix;
    if (s == "riskq_residual") return MixerVariant::riskq_residual;
    if (s == "riskq_residual_qmix") return MixerVariant::riskq_residual_qmix;
    if (s == "sum") return MixerVariant::sum;
    if (s == "qi") return MixerVariant::qi;
    throw ParseError("unknown mixer variant '" + s + "'");
}

inline const char* mixer_name(MixerVariant v) {
    switch (v) {
        case MixerVariant::riskq: return "riskq";
        case MixerVariant::riskq_qmix: return "riskq_qmix";
        case MixerVariant::riskq_residual: return "riskq_residual";
        case MixerVariant::riskq_residual_qmix: return "riskq_residual_qmix";
        case MixerVariant::sum: return "sum";
        case MixerVariant::qi: return "qi";
    }
    return "?";
}

inline bool mixer_uses_residual(MixerVariant v) {
    return v == MixerVariant::riskq_residual || v == MixerVariant::riskq_residual_qmix;
}

struct MixerConfig {
    MixerVariant variant = MixerVariant::riskq;
    int num_agents = 0;
    int state_dim = 0;
    int quantiles = 0;
    int key_dim = 0;          // per-agent history embedding (GRU hidden) size
    int embed_dim = 32;       // state embedding width
    int heads = 4;
    int head_dim = 16;
    int hyper_hidden = 32;    // monotone mixing hidden width
    int joint_action_dim = 0; // sum of one-hot action widths, for residual/qi heads
};

/// Mixes per-agent quantile vectors that share one set of fractions omega_j
/// into the joint quantile vector theta(tau, u, omega_j).
///
/// Weights k_i and monotone mixing weights are rectified through |.|, the
/// residual head through -|.|, so the sign constraints hold for any
/// parameter values.
class MixerNet {
public:
    explicit MixerNet(MixerConfig cfg)
        : cfg_(cfg),
          state_embed_{"mixer.state_embed", cfg.state_dim, cfg.embed_dim, Activation::relu},
          attn_{"mixer.attn", cfg.embed_dim, cfg.key_dim, cfg.heads, cfg.head_dim},
          hyper_w1_{"mixer.hyper_w1", cfg.state_dim, cfg.num_agents * cfg.hyper_hidden,
                    Activation::linear},
          hyper_b1_{"mixer.hyper_b1", cfg.state_dim, cfg.hyper_hidden, Activation::linear},
          hyper_w2_{"mixer.hyper_w2", cfg.state_dim, cfg.hyper_hidden, Activation::linear},
          hyper_b2a_{"mixer.hyper_b2a", cfg.state_dim, cfg.hyper_hidden, Activation::relu},
          hyper_b2b_{"mixer.hyper_b2b", cfg.hyper_hidden, 1, Activation::linear},
          residual1_{"mixer.residual1", cfg.embed_dim + cfg.joint_action_dim, cfg.hyper_hidden,
                     Activation::relu},
          residual2_{"mixer.residual2", cfg.hyper_hidden, cfg.quantiles, Activation::linear},
          qi1_{"mixer.qi1", cfg.embed_dim + cfg.joint_action_dim, cfg.hyper_hidden,
               Activation::relu},
          qi2_{"mixer.qi2", cfg.hyper_hidden, 1, Activation::linear} {}

    const MixerConfig& config() const { return cfg_; }

    void init(ParameterStore& store, std::mt19937_64& rng) const {
        switch (cfg_.variant) {
            case MixerVariant::riskq:
                state_embed_.init(store, rng);
                attn_.init(store, rng);
                break;
            case MixerVariant::riskq_qmix:
                hyper_w1_.init(store, rng);
                hyper_b1_.init(store, rng);
                hyper_w2_.init(store, rng);
                hyper_b2a_.init(store, rng);
                hyper_b2b_.init(store, rng);
                break;
            case MixerVariant::riskq_residual:
                state_embed_.init(store, rng);
                attn_.init(store, rng);
                residual1_.init(store, rng);
                residual2_.init(store, rng);
                break;
            case MixerVariant::riskq_residual_qmix:
                hyper_w1_.init(store, rng);
                hyper_b1_.init(store, rng);
                hyper_w2_.init(store, rng);
                hyper_b2a_.init(store, rng);
                hyper_b2b_.init(store, rng);
                state_embed_.init(store, rng);
                residual1_.init(store, rng);
                residual2_.init(store, rng);
                break;
            case MixerVariant::sum:
                break;
            case MixerVariant::qi:
                state_embed_.init(store, rng);
                qi1_.init(store, rng);
                qi2_.init(store, rng);
                break;
        }
    }

    struct Introspection {
        std::vector<int> agent_weights; // [B x 1] node per agent (riskq variants)
        int residual = -1;              // [B x J] node, already <= 0
    };

    /// theta_agents: one [B x J] node per agent at shared fractions.
    /// residual_mask: per-row 1.0 where u differs from the greedy joint
    /// action, 0.0 at the greedy one (residual variants only).
    /// joint_action_onehot: [B x joint_action_dim] (residual and qi variants).
    int mix(Tape& t, ParameterStore& store, const std::vector<int>& theta_agents, int state,
            const std::vector<int>& keys, const Mat* residual_mask = nullptr,
            const Mat* joint_action_onehot = nullptr, Introspection* out = nullptr) const {
        if (static_cast<int>(theta_agents.size()) != cfg_.num_agents)
            throw ContractError("mixer expects one quantile vector per agent");
        for (int id : theta_agents)
            if (t.cols(id) != cfg_.quantiles)
                throw ContractError("per-agent quantile fractions mismatch");

        switch (cfg_.variant) {
            case MixerVariant::riskq:
                return weighted_sum(t, store, theta_agents, state, keys, out);
            case MixerVariant::sum: {
                int acc = theta_agents[0];
                for (std::size_t i = 1; i < theta_agents.size(); ++i)
                    acc = t.add(acc, theta_agents[i]);
                return acc;
            }
            case MixerVariant::qi: {
                if (!joint_action_onehot)
                    throw ContractError("qi mixer needs the joint action one-hot");
                int s = state_embed_(t, store, state);
                int x = t.concat_cols({s, t.constant(*joint_action_onehot)});
                int q = qi2_(t, store, qi1_(t, store, x)); // [B x 1]
                return t.broadcast_col(q, cfg_.quantiles);
            }
            case MixerVariant::riskq_qmix:
                return monotone_mix(t, store, theta_agents, state);
            case MixerVariant::riskq_residual: {
                int main = weighted_sum(t, store, theta_agents, state, keys, out);
                return t.add(main, residual_term(t, store, state, residual_mask,
                                                 joint_action_onehot, out));
            }
            case MixerVariant::riskq_residual_qmix: {
                int main = monotone_mix(t, store, theta_agents, state);
                return t.add(main, residual_term(t, store, state, residual_mask,
                                                 joint_action_onehot, out));
            }
        }
        throw ContractError("unreachable mixer variant");
    }

private:
    int weighted_sum(Tape& t, ParameterStore& store, const std::vector<int>& theta_agents,
                     int state, const std::vector<int>& keys, Introspection* out) const {
        if (static_cast<int>(keys.size()) != cfg_.num_agents)
            throw ContractError("mixer expects one history key per agent");
        int s = state_embed_(t, store, state);
        auto weights = attn_(t, store, s, keys);
        if (out) out->agent_weights = weights;
        int acc = -1;
        for (int i = 0; i < cfg_.num_agents; ++i) {
            int term = t.col_scale(theta_agents[static_cast<std::size_t>(i)],
                                   weights[static_cast<std::size_t>(i)]);
            acc = (i == 0) ? term : t.add(acc, term);
        }
        return acc;
    }

    int monotone_mix(Tape& t, ParameterStore& store, const std::vector<int>& theta_agents,
                     int state) const {
        int w1 = t.abs_(hyper_w1_(t, store, state));   // [B x N*H]
        int b1 = hyper_b1_(t, store, state);           // [B x H]
        int w2 = t.abs_(hyper_w2_(t, store, state));   // [B x H]
        int b2 = hyper_b2b_(t, store, hyper_b2a_(t, store, state)); // [B x 1]
        std::vector<int> cols(static_cast<std::size_t>(cfg_.quantiles));
        for (int j = 0; j < cfg_.quantiles; ++j) {
            std::vector<int> parts;
            parts.reserve(theta_agents.size());
            for (int id : theta_agents) parts.push_back(t.slice_cols(id, j, 1));
            int xj = t.concat_cols(parts); // [B x N]
            int hidden = t.elu(t.add(t.bmm_rows(w1, xj, cfg_.num_agents, cfg_.hyper_hidden), b1));
            cols[static_cast<std::size_t>(j)] = t.add(t.rowwise_dot(hidden, w2), b2);
        }
        return t.concat_cols(cols);
    }

    int residual_term(Tape& t, ParameterStore& store, int state, const Mat* residual_mask,
                      const Mat* joint_action_onehot, Introspection* out) const {
        if (!residual_mask || !joint_action_onehot)
            throw ContractError("residual mixer needs a mask and the joint action one-hot");
        int s = state_embed_(t, store, state);
        int x = t.concat_cols({s, t.constant(*joint_action_onehot)});
        int raw = residual2_(t, store, residual1_(t, store, x));
        int res = t.scale(t.abs_(raw), -1.0); // theta_r <= 0 structurally
        if (out) out->residual = res;
        return t.col_scale(res, t.constant(*residual_mask));
    }

    MixerConfig cfg_;
    Dense state_embed_;
    AttentionWeights attn_;
    Dense hyper_w1_, hyper_b1_, hyper_w2_, hyper_b2a_, hyper_b2b_;
    Dense residual1_, residual2_;
    Dense qi1_, qi2_;
};

/// Uniform-mass Dirac mixture over the J joint quantile values.
inline QuantileDistribution joint_distribution(const std::vector<double>& theta) {
    return QuantileDistribution::from_quantiles(theta);
}

} // namespace riskq
