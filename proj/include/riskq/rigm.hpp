#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "riskq/distribution.hpp"
#include "riskq/errors.hpp"
#include "riskq/risk.hpp"

namespace riskq {

using JointAction = std::vector<int>;

/// A stateless one-step cooperative game: per agent i and per action u_i a
/// return distribution utility Z_i(u_i).
struct OneStepGame {
    // utilities[i][a] is Z_i for agent i taking action a
    std::vector<std::vector<QuantileDistribution>> utilities;

    int num_agents() const { return static_cast<int>(utilities.size()); }
    int num_actions(int agent) const { return static_cast<int>(utilities[agent].size()); }

    void validate() const {
        if (utilities.empty()) throw DomainError("game needs at least one agent");
        for (const auto& per_agent : utilities)
            if (per_agent.empty()) throw DomainError("every agent needs at least one action");
    }
};

inline std::vector<double> midpoint_fractions(int n) {
    std::vector<double> w(n);
    for (int j = 0; j < n; ++j) w[j] = (2.0 * j + 1.0) / (2.0 * n);
    return w;
}

// ---------------------------------------------------------------------------
// Joint-construction rules
// ---------------------------------------------------------------------------

/// Z_jt = sum_i w_i Z_i with independent per-agent utilities (VDN has all
/// weights 1; the degenerate ResZ example uses weights 2).
struct IndependentSum {
    std::vector<double> weights;
};

/// Z_jt = sum_i f(Z_i) distribution-wise with independent summands (the
/// QMIX-cubic construction uses f = x^3).
struct ValueTransform {
    std::function<double(double)> f;
    std::string name;
};

/// Mean-shape decomposition: Z_jt = f(sum_i E[Z_i]) + sum_i (Z_i - E[Z_i]).
struct MeanShape {
    std::function<double(double)> f_of_mean_sum;
    std::string name;
};

/// Quantile mixture: the J-atom uniform mixture whose j-th atom is
/// sum_i k_i * theta_i(omega_j) at shared fractions omega_j = (2j-1)/(2J).
struct QuantileMix {
    std::vector<double> weights;
    int num_quantiles;
};

/// Monotone quantile mixture: j-th atom is M(theta_1(omega_j), ...,
/// theta_N(omega_j)) for a map M non-decreasing in every argument.
struct MonotoneQuantileMix {
    std::function<double(const std::vector<double>&)> map;
    int num_quantiles;
    std::string name;
};

/// Masked-residual quantile mixture: j-th atom is
/// sum_i k_i theta_i(omega_j) + m(u) * residual(u, j), residual <= 0 and
/// m(u) = 0 exactly at the declared greedy joint action.
struct ResidualQuantileMix {
    std::vector<double> weights;
    int num_quantiles;
    std::function<double(const JointAction&, int)> residual;
    std::optional<JointAction> greedy; // resolved by check_rigm when unset
};

/// Monotone main with masked residual. The main term follows the literal
/// construction: it is the monotone map applied to the per-agent quantiles of
/// the greedy actions at the anchor fraction, a constant across joint actions
/// and atom indices, so only the masked non-positive residual varies with u.
struct ResidualMonotoneQuantileMix {
    std::function<double(const std::vector<double>&)> map;
    int num_quantiles;
    std::function<double(const JointAction&, int)> residual;
    std::optional<JointAction> greedy;
    double anchor_fraction = 0.5;
    std::string name;
};

using JointModel = std::variant<IndependentSum, ValueTransform, MeanShape, QuantileMix,
                                MonotoneQuantileMix, ResidualQuantileMix,
                                ResidualMonotoneQuantileMix>;

struct RigmVerdict {
    bool holds = false;
    JointAction joint_greedy;
    JointAction decentralized_greedy;
    std::vector<std::pair<JointAction, double>> risk_table;

    double risk_of(const JointAction& u) const {
        for (const auto& [a, v] : risk_table)
            if (a == u) return v;
        throw ContractError("joint action not in risk table");
    }
};

namespace detail {

inline void require_valid_action(const OneStepGame& game, const JointAction& u) {
    if (static_cast<int>(u.size()) != game.num_agents())
        throw ContractError("joint action arity mismatch");
    for (int i = 0; i < game.num_agents(); ++i)
        if (u[i] < 0 || u[i] >= game.num_actions(i))
            throw ContractError("action index out of range");
}

inline std::vector<double> agent_quantiles(const OneStepGame& game, int agent, int action,
                                           const std::vector<double>& fractions) {
    std::vector<double> q(fractions.size());
    for (std::size_t j = 0; j < fractions.size(); ++j)
        q[j] = game.utilities[agent][action].quantile(fractions[j]);
    return q;
}

} // namespace detail

/// Builds the joint return distribution for one joint action under the given
/// rule. Residual rules must have their greedy anchor resolved.
inline QuantileDistribution build_joint(const OneStepGame& game, const JointModel& model,
                                        const JointAction& u, std::size_t sum_cap = 1000000) {
    detail::require_valid_action(game, u);
    const int n = game.num_agents();

    if (const auto* m = std::get_if<IndependentSum>(&model)) {
        if (static_cast<int>(m->weights.size()) != n)
            throw ContractError("independent_sum weight arity mismatch");
        std::vector<QuantileDistribution> parts;
        parts.reserve(n);
        for (int i = 0; i < n; ++i) parts.push_back(game.utilities[i][u[i]]);
        return independent_sum(parts, m->weights, sum_cap);
    }
    if (const auto* m = std::get_if<ValueTransform>(&model)) {
        std::vector<QuantileDistribution> parts;
        parts.reserve(n);
        for (int i = 0; i < n; ++i) parts.push_back(map_values(game.utilities[i][u[i]], m->f));
        return independent_sum(parts, std::vector<double>(n, 1.0), sum_cap);
    }
    if (const auto* m = std::get_if<MeanShape>(&model)) {
        double mean_sum = 0.0;
        std::vector<QuantileDistribution> shapes;
        shapes.reserve(n);
        for (int i = 0; i < n; ++i) {
            const auto& z = game.utilities[i][u[i]];
            double mu = z.expectation();
            mean_sum += mu;
            shapes.push_back(map_values(z, [mu](double x) { return x - mu; }));
        }
        double mean_part = m->f_of_mean_sum(mean_sum);
        if (!std::isfinite(mean_part)) throw NumericError("mean-shape f produced non-finite value");
        auto shape = independent_sum(shapes, std::vector<double>(n, 1.0), sum_cap);
        return map_values(shape, [mean_part](double x) { return x + mean_part; });
    }
    if (const auto* m = std::get_if<QuantileMix>(&model)) {
        if (static_cast<int>(m->weights.size()) != n)
            throw ContractError("quantile_mix weight arity mismatch");
        auto fractions = midpoint_fractions(m->num_quantiles);
        std::vector<double> atoms(fractions.size(), 0.0);
        for (int i = 0; i < n; ++i) {
            if (m->weights[i] < 0.0) throw DomainError("quantile_mix weights must be >= 0");
            auto q = detail::agent_quantiles(game, i, u[i], fractions);
            for (std::size_t j = 0; j < atoms.size(); ++j) atoms[j] += m->weights[i] * q[j];
        }
        return QuantileDistribution::from_quantiles(atoms);
    }
    if (const auto* m = std::get_if<MonotoneQuantileMix>(&model)) {
        auto fractions = midpoint_fractions(m->num_quantiles);
        std::vector<double> atoms(fractions.size());
        std::vector<double> args(n);
        for (std::size_t j = 0; j < fractions.size(); ++j) {
            for (int i = 0; i < n; ++i)
                args[i] = game.utilities[i][u[i]].quantile(fractions[j]);
            atoms[j] = m->map(args);
        }
        return QuantileDistribution::from_quantiles(atoms);
    }
    if (const auto* m = std::get_if<ResidualQuantileMix>(&model)) {
        if (!m->greedy)
            throw ContractError("residual rule needs its greedy joint action resolved");
        if (static_cast<int>(m->weights.size()) != n)
            throw ContractError("residual_quantile_mix weight arity mismatch");
        auto fractions = midpoint_fractions(m->num_quantiles);
        bool masked_off = (u == *m->greedy);
        std::vector<double> atoms(fractions.size(), 0.0);
        for (int i = 0; i < n; ++i) {
            if (m->weights[i] < 0.0) throw DomainError("residual weights must be >= 0");
            auto q = detail::agent_quantiles(game, i, u[i], fractions);
            for (std::size_t j = 0; j < atoms.size(); ++j) atoms[j] += m->weights[i] * q[j];
        }
        if (!masked_off) {
            for (std::size_t j = 0; j < atoms.size(); ++j) {
                double r = m->residual(u, static_cast<int>(j));
                if (r > 0.0) throw DomainError("residual values must be <= 0");
                atoms[j] += r;
            }
        }
        return QuantileDistribution::from_quantiles(atoms);
    }
    const auto& m = std::get<ResidualMonotoneQuantileMix>(model);
    if (!m.greedy) throw ContractError("residual rule needs its greedy joint action resolved");
    std::vector<double> args(n);
    for (int i = 0; i < n; ++i)
        args[i] = game.utilities[i][(*m.greedy)[i]].quantile(m.anchor_fraction);
    double main_value = m.map(args);
    bool masked_off = (u == *m.greedy);
    std::vector<double> atoms(static_cast<std::size_t>(m.num_quantiles), main_value);
    if (!masked_off) {
        for (std::size_t j = 0; j < atoms.size(); ++j) {
            double r = m.residual(u, static_cast<int>(j));
            if (r > 0.0) throw DomainError("residual values must be <= 0");
            atoms[j] += r;
        }
    }
    return QuantileDistribution::from_quantiles(atoms);
}

/// Per-agent risk-greedy actions, smallest index winning ties within tie_tol.
inline JointAction decentralized_greedy_actions(const OneStepGame& game, const RiskMeasure& measure,
                                                double tie_tol = 1e-9) {
    JointAction greedy(game.num_agents());
    for (int i = 0; i < game.num_agents(); ++i) {
        int best = 0;
        double best_value = measure.evaluate(game.utilities[i][0]);
        for (int a = 1; a < game.num_actions(i); ++a) {
            double v = measure.evaluate(game.utilities[i][a]);
            if (v > best_value + tie_tol) {
                best = a;
                best_value = v;
            }
        }
        greedy[i] = best;
    }
    return greedy;
}

/// Brute-force RIGM check: enumerates every joint action (lexicographic by
/// agent index), evaluates the risk metric on the joint construction and on
/// per-agent utilities, and compares the two greedy selections.
inline RigmVerdict check_rigm(const OneStepGame& game, JointModel model, const RiskMeasure& measure,
                              std::size_t max_joint_actions = 100000, double tie_tol = 1e-9) {
    game.validate();
    const int n = game.num_agents();

    std::size_t total = 1;
    for (int i = 0; i < n; ++i) {
        std::size_t actions = static_cast<std::size_t>(game.num_actions(i));
        if (total > max_joint_actions / actions)
            throw CapacityError("joint action count exceeds cap");
        total *= actions;
    }

    RigmVerdict verdict;
    verdict.decentralized_greedy = decentralized_greedy_actions(game, measure, tie_tol);

    // residual rules: anchor mask (and frozen main) at the per-agent greedy
    if (auto* r = std::get_if<ResidualQuantileMix>(&model)) {
        if (!r->greedy) r->greedy = verdict.decentralized_greedy;
    } else if (auto* r2 = std::get_if<ResidualMonotoneQuantileMix>(&model)) {
        if (!r2->greedy) r2->greedy = verdict.decentralized_greedy;
        if (measure.is_var())
            r2->anchor_fraction = measure.var_level();
        else if (measure.spec().kind == DistortionKind::cvar)
            r2->anchor_fraction = measure.spec().eta;
        else
            r2->anchor_fraction = 0.5;
    }

    JointAction u(n, 0);
    bool first = true;
    double best = 0.0;
    while (true) {
        double value = measure.evaluate(build_joint(game, model, u));
        verdict.risk_table.emplace_back(u, value);
        if (first || value > best + tie_tol) {
            best = value;
            verdict.joint_greedy = u;
            first = false;
        }
        int i = n - 1;
        while (i >= 0) {
            if (++u[i] < game.num_actions(i)) break;
            u[i] = 0;
            --i;
        }
        if (i < 0) break;
    }

    verdict.holds = (verdict.joint_greedy == verdict.decentralized_greedy);
    return verdict;
}

// ---------------------------------------------------------------------------
// Canned counterexample suite
// ---------------------------------------------------------------------------

struct SuiteCheck {
    std::string label;
    double expected;
    double actual;
    bool ok;
};

struct SuiteScenario {
    std::string name;
    bool expect_holds;
    RigmVerdict verdict;
    bool verdict_ok;
    std::vector<SuiteCheck> value_checks;

    bool passed() const {
        if (!verdict_ok) return false;
        for (const auto& c : value_checks)
            if (!c.ok) return false;
        return true;
    }
};

struct SuiteReport {
    std::vector<SuiteScenario> scenarios;

    bool all_passed() const {
        for (const auto& s : scenarios)
            if (!s.passed()) return false;
        return true;
    }
};

namespace detail {

inline OneStepGame two_agent_game(const QuantileDistribution& za, const QuantileDistribution& zb) {
    OneStepGame game;
    game.utilities = {{za, zb}, {za, zb}};
    return game;
}

inline void check_cell(SuiteScenario& s, const std::string& label, double expected, double actual) {
    s.value_checks.push_back({label, expected, actual, expected == actual});
}

inline std::string joint_str(const JointAction& u) {
    std::string s = "(";
    for (std::size_t i = 0; i < u.size(); ++i) {
        if (i) s += ",";
        s += static_cast<char>('a' + u[i]);
    }
    return s + ")";
}

} // namespace detail

/// Runs the five negative constructions and the positive quantile-mixture
/// scenarios, asserting every published table value exactly.
inline SuiteReport run_counterexample_suite() {
    SuiteReport report;

    const auto za_vdn = QuantileDistribution({0.25, 1.0}, {0.5, 0.5});
    const auto zb_vdn = QuantileDistribution({0.0, 100.0}, {0.5, 0.5});
    const auto var_half = RiskMeasure::var(0.5);
    const auto cvar_one = RiskMeasure::cvar(1.0);

    { // additive factorization breaks VaR_0.5
        SuiteScenario s;
        s.name = "vdn-var0.5";
        s.expect_holds = false;
        auto game = detail::two_agent_game(za_vdn, zb_vdn);
        JointModel model = IndependentSum{{1.0, 1.0}};
        s.verdict = check_rigm(game, model, var_half);
        detail::check_cell(s, "(a,a)", 1.25, s.verdict.risk_of({0, 0}));
        detail::check_cell(s, "(a,b)", 1.0, s.verdict.risk_of({0, 1}));
        detail::check_cell(s, "(b,a)", 1.0, s.verdict.risk_of({1, 0}));
        detail::check_cell(s, "(b,b)", 100.0, s.verdict.risk_of({1, 1}));
        s.verdict_ok = !s.verdict.holds && s.verdict.joint_greedy == JointAction{1, 1} &&
                       s.verdict.decentralized_greedy == JointAction{0, 0};
        report.scenarios.push_back(std::move(s));
    }

    { // cubic monotone transform breaks CVaR_1
        SuiteScenario s;
        s.name = "qmix-cubic-cvar1";
        s.expect_holds = false;
        auto game = detail::two_agent_game(QuantileDistribution::dirac(2.0),
                                           QuantileDistribution({3.0, 0.0}, {0.5, 0.5}));
        JointModel model = ValueTransform{[](double x) { return x * x * x; }, "cube"};
        s.verdict = check_rigm(game, model, cvar_one);
        detail::check_cell(s, "psi1[Z^3(a)]", 8.0,
                           cvar_one.evaluate(map_values(game.utilities[0][0],
                                                        [](double x) { return x * x * x; })));
        detail::check_cell(s, "psi1[Z^3(b)]", 13.5,
                           cvar_one.evaluate(map_values(game.utilities[0][1],
                                                        [](double x) { return x * x * x; })));
        s.verdict_ok = !s.verdict.holds && s.verdict.joint_greedy == JointAction{1, 1} &&
                       s.verdict.decentralized_greedy == JointAction{0, 0};
        report.scenarios.push_back(std::move(s));
    }

    { // mean-shape decomposition breaks VaR_1
        SuiteScenario s;
        s.name = "dfac-mean-shape-var1";
        s.expect_holds = false;
        OneStepGame game;
        game.utilities = {{QuantileDistribution::dirac(5.0),
                           QuantileDistribution({6.0, 0.0}, {0.5, 0.5})}};
        JointModel model = MeanShape{[](double q) { return std::pow(5.0, q); }, "pow5"};
        s.verdict = check_rigm(game, model, RiskMeasure::var(1.0));
        s.verdict_ok = !s.verdict.holds && s.verdict.joint_greedy == JointAction{0} &&
                       s.verdict.decentralized_greedy == JointAction{1};
        report.scenarios.push_back(std::move(s));
    }

    { // weighted-sum main with zero residual breaks VaR_0.5
        SuiteScenario s;
        s.name = "resz-degenerate-var0.5";
        s.expect_holds = false;
        auto game = detail::two_agent_game(za_vdn, zb_vdn);
        JointModel model = IndependentSum{{2.0, 2.0}};
        s.verdict = check_rigm(game, model, var_half);
        detail::check_cell(s, "(a,a)", 2.5, s.verdict.risk_of({0, 0}));
        detail::check_cell(s, "(a,b)", 2.0, s.verdict.risk_of({0, 1}));
        detail::check_cell(s, "(b,a)", 2.0, s.verdict.risk_of({1, 0}));
        detail::check_cell(s, "(b,b)", 200.0, s.verdict.risk_of({1, 1}));
        s.verdict_ok = !s.verdict.holds && s.verdict.joint_greedy == JointAction{1, 1} &&
                       s.verdict.decentralized_greedy == JointAction{0, 0};
        report.scenarios.push_back(std::move(s));
    }

    const auto za_drima = QuantileDistribution::dirac(3.0);
    const auto zb_drima = QuantileDistribution({5.0, 0.0}, {0.5, 0.5});

    { // per-quantile monotone mixing breaks CVaR_1
        SuiteScenario s;
        s.name = "drima-cubic-cvar1";
        s.expect_holds = false;
        auto game = detail::two_agent_game(za_drima, zb_drima);
        JointModel model = MonotoneQuantileMix{
            [](const std::vector<double>& x) {
                double v = 0.0;
                for (double xi : x) v += xi * xi * xi;
                return v;
            },
            2, "sum_cubes"};
        s.verdict = check_rigm(game, model, cvar_one);
        detail::check_cell(s, "(a,a)", 54.0, s.verdict.risk_of({0, 0}));
        detail::check_cell(s, "(a,b)", 89.5, s.verdict.risk_of({0, 1}));
        detail::check_cell(s, "(b,a)", 89.5, s.verdict.risk_of({1, 0}));
        detail::check_cell(s, "(b,b)", 125.0, s.verdict.risk_of({1, 1}));
        s.verdict_ok = !s.verdict.holds && s.verdict.joint_greedy == JointAction{1, 1} &&
                       s.verdict.decentralized_greedy == JointAction{0, 0};
        report.scenarios.push_back(std::move(s));
    }

    // positive scenarios: the quantile-mixture family keeps joint and
    // decentralized greedy actions aligned
    const std::vector<RiskMeasure> drm_family = {var_half, RiskMeasure::cvar(0.5),
                                                 RiskMeasure::wang(0.75), RiskMeasure::cpw(0.71)};
    auto game = detail::two_agent_game(za_vdn, zb_vdn);
    for (const auto& measure : drm_family) {
        SuiteScenario s;
        s.name = "quantile-mix-" + measure.str();
        s.expect_holds = true;
        JointModel model = QuantileMix{{1.0, 1.0}, 2};
        s.verdict = check_rigm(game, model, measure);
        s.verdict_ok = s.verdict.holds;
        report.scenarios.push_back(std::move(s));
    }
    for (const auto& measure : drm_family) {
        SuiteScenario s;
        s.name = "residual-quantile-mix-" + measure.str();
        s.expect_holds = true;
        JointModel model = ResidualQuantileMix{
            {1.0, 1.0}, 2, [](const JointAction&, int) { return -1.0; }, std::nullopt};
        s.verdict = check_rigm(game, model, measure);
        s.verdict_ok = s.verdict.holds;
        report.scenarios.push_back(std::move(s));
    }
    {
        SuiteScenario s;
        s.name = "monotone-quantile-mix-var:0.5";
        s.expect_holds = true;
        JointModel model = MonotoneQuantileMix{
            [](const std::vector<double>& x) {
                double v = 0.0;
                for (double xi : x) v += xi * xi * xi;
                return v;
            },
            2, "sum_cubes"};
        s.verdict = check_rigm(game, model, var_half);
        s.verdict_ok = s.verdict.holds;
        report.scenarios.push_back(std::move(s));
    }

    return report;
}

} // namespace riskq
