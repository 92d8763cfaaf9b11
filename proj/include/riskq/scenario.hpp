#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "riskq/rigm.hpp"

namespace riskq {

/// A parsed verifier scenario: per-agent utility stanzas, a joint model and
/// a risk measure.
///
/// File format (one item per line, '#' starts a comment):
///   agent <name>
///   <action_name>: <atom>:<mass> <atom>:<mass> ...
///   ...
///   model: independent_sum <w1> ... <wN>
///        | value_transform <identity|cube|pow5>
///        | mean_shape <identity|cube|pow5>
///        | quantile_mix <J> <k1> ... <kN>
///        | monotone_quantile_mix <J> <sum|sum_cubes>
///        | residual_quantile_mix <J> <residual<=0> <k1> ... <kN>
///   measure: <var|cvar|wang|cpw|neutral> [param]
struct Scenario {
    OneStepGame game;
    JointModel model;
    RiskMeasure measure;
    std::vector<std::string> agent_names;
    std::vector<std::vector<std::string>> action_names;
};

namespace detail {

inline std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::function<double(double)> named_scalar_fn(const std::string& name, int line) {
    if (name == "identity") return [](double x) { return x; };
    if (name == "cube") return [](double x) { return x * x * x; };
    if (name == "pow5") return [](double x) { return std::pow(5.0, x); };
    throw ParseError("unknown transform '" + name + "'", line);
}

inline std::function<double(const std::vector<double>&)> named_monotone_map(const std::string& name,
                                                                            int line) {
    if (name == "sum")
        return [](const std::vector<double>& x) {
            double v = 0.0;
            for (double xi : x) v += xi;
            return v;
        };
    if (name == "sum_cubes")
        return [](const std::vector<double>& x) {
            double v = 0.0;
            for (double xi : x) v += xi * xi * xi;
            return v;
        };
    throw ParseError("unknown monotone map '" + name + "'", line);
}

} // namespace detail

inline Scenario parse_scenario(std::istream& in) {
    Scenario sc{OneStepGame{}, IndependentSum{{}}, RiskMeasure::var(0.5), {}, {}};
    bool have_model = false, have_measure = false;
    std::string raw;
    int line_no = 0;

    while (std::getline(in, raw)) {
        ++line_no;
        auto hash = raw.find('#');
        if (hash != std::string::npos) raw = raw.substr(0, hash);
        std::string line = detail::trim(raw);
        if (line.empty()) continue;

        if (line.rfind("agent", 0) == 0 &&
            (line.size() == 5 || std::isspace(static_cast<unsigned char>(line[5])))) {
            sc.game.utilities.emplace_back();
            sc.action_names.emplace_back();
            std::string name = detail::trim(line.substr(5));
            sc.agent_names.push_back(name.empty() ? std::to_string(sc.game.utilities.size())
                                                  : name);
            continue;
        }

        auto colon = line.find(':');
        if (colon == std::string::npos)
            throw ParseError("expected 'key: value' or 'agent <name>'", line_no);
        std::string key = detail::trim(line.substr(0, colon));
        std::string rest = detail::trim(line.substr(colon + 1));

        if (key == "model") {
            std::istringstream is(rest);
            std::string rule;
            is >> rule;
            auto read_doubles = [&]() {
                std::vector<double> v;
                double x;
                while (is >> x) v.push_back(x);
                return v;
            };
            if (rule == "independent_sum") {
                sc.model = IndependentSum{read_doubles()};
            } else if (rule == "value_transform") {
                std::string fname;
                is >> fname;
                sc.model = ValueTransform{detail::named_scalar_fn(fname, line_no), fname};
            } else if (rule == "mean_shape") {
                std::string fname;
                is >> fname;
                sc.model = MeanShape{detail::named_scalar_fn(fname, line_no), fname};
            } else if (rule == "quantile_mix") {
                int j = 0;
                if (!(is >> j) || j < 1) throw ParseError("quantile_mix needs J >= 1", line_no);
                sc.model = QuantileMix{read_doubles(), j};
            } else if (rule == "monotone_quantile_mix") {
                int j = 0;
                std::string mname;
                if (!(is >> j >> mname) || j < 1)
                    throw ParseError("monotone_quantile_mix needs J and a map name", line_no);
                sc.model = MonotoneQuantileMix{detail::named_monotone_map(mname, line_no), j, mname};
            } else if (rule == "residual_quantile_mix") {
                int j = 0;
                double res = 0.0;
                if (!(is >> j >> res) || j < 1)
                    throw ParseError("residual_quantile_mix needs J and a residual value", line_no);
                if (res > 0.0) throw ParseError("residual value must be <= 0", line_no);
                sc.model = ResidualQuantileMix{
                    read_doubles(), j, [res](const JointAction&, int) { return res; },
                    std::nullopt};
            } else {
                throw ParseError("unknown model rule '" + rule + "'", line_no);
            }
            have_model = true;
            continue;
        }

        if (key == "measure") {
            try {
                sc.measure = RiskMeasure::parse(rest);
            } catch (const ParseError& e) {
                throw ParseError(e.what(), line_no);
            }
            have_measure = true;
            continue;
        }

        // an action line inside the current agent stanza
        if (sc.game.utilities.empty())
            throw ParseError("action line before any 'agent' stanza", line_no);
        try {
            sc.game.utilities.back().push_back(parse_distribution(rest));
            sc.action_names.back().push_back(key);
        } catch (const ParseError& e) {
            throw ParseError("agent " + sc.agent_names.back() + ", action '" + key +
                                 "': " + e.what(),
                             line_no);
        }
        continue;
    }

    if (sc.game.utilities.empty()) throw ParseError("scenario has no agent stanzas");
    if (!have_model) throw ParseError("scenario is missing a model: line");
    if (!have_measure) throw ParseError("scenario is missing a measure: line");
    sc.game.validate();

    auto arity_ok = [&](const std::vector<double>& w) {
        return static_cast<int>(w.size()) == sc.game.num_agents();
    };
    if (const auto* m = std::get_if<IndependentSum>(&sc.model)) {
        if (!arity_ok(m->weights))
            throw ParseError("independent_sum needs one weight per agent");
    } else if (const auto* q = std::get_if<QuantileMix>(&sc.model)) {
        if (!arity_ok(q->weights)) throw ParseError("quantile_mix needs one weight per agent");
    } else if (const auto* r = std::get_if<ResidualQuantileMix>(&sc.model)) {
        if (!arity_ok(r->weights))
            throw ParseError("residual_quantile_mix needs one weight per agent");
    }
    return sc;
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open scenario file '" + path + "'");
    return parse_scenario(in);
}

} // namespace riskq
