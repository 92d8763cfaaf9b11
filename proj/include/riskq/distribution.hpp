#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "riskq/errors.hpp"

namespace riskq {

/// A discrete return distribution: a mixture of Dirac atoms with probability
/// masses. Canonical form keeps atoms sorted ascending, merges atoms that
/// coincide (within 1e-12) and drops zero-mass atoms. Immutable after
/// construction, so values can be shared freely across threads.
class QuantileDistribution {
public:
    /// Builds a canonical distribution. Masses must be non-negative and sum
    /// to 1 within 1e-9, otherwise a DomainError is thrown.
    QuantileDistribution(std::vector<double> atoms, std::vector<double> masses) {
        if (atoms.size() != masses.size())
            throw DomainError("atom/mass count mismatch");
        if (atoms.empty())
            throw DomainError("distribution needs at least one atom");
        double total = 0.0;
        for (std::size_t i = 0; i < atoms.size(); ++i) {
            if (!std::isfinite(atoms[i]))
                throw DomainError("non-finite atom");
            if (masses[i] < -1e-12)
                throw DomainError("negative mass");
            if (masses[i] < 0.0) masses[i] = 0.0;
            total += masses[i];
        }
        if (std::abs(total - 1.0) > 1e-9) {
            std::ostringstream os;
            os << "masses sum to " << total << ", expected 1";
            throw DomainError(os.str());
        }

        std::vector<std::size_t> order(atoms.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return atoms[a] < atoms[b]; });

        atoms_.reserve(atoms.size());
        masses_.reserve(atoms.size());
        for (std::size_t k : order) {
            if (masses[k] == 0.0) continue;
            if (!atoms_.empty() && atoms[k] - atoms_.back() <= 1e-12) {
                masses_.back() += masses[k];
            } else {
                atoms_.push_back(atoms[k]);
                masses_.push_back(masses[k]);
            }
        }
        if (atoms_.empty()) {
            // all masses were zero-clamped; keep a single atom so the CDF exists
            atoms_.push_back(atoms[order.front()]);
            masses_.push_back(1.0);
        }
        cumulative_.resize(masses_.size());
        std::partial_sum(masses_.begin(), masses_.end(), cumulative_.begin());
    }

    static QuantileDistribution dirac(double value) {
        return QuantileDistribution({value}, {1.0});
    }

    /// Uniform-mass mixture over the given quantile values (need not be
    /// pre-sorted; construction canonicalizes).
    static QuantileDistribution from_quantiles(const std::vector<double>& values) {
        if (values.empty())
            throw DomainError("distribution needs at least one atom");
        std::vector<double> masses(values.size(), 1.0 / static_cast<double>(values.size()));
        return QuantileDistribution(values, std::move(masses));
    }

    const std::vector<double>& atoms() const { return atoms_; }
    const std::vector<double>& masses() const { return masses_; }
    std::size_t size() const { return atoms_.size(); }

    /// Generalized inverse CDF: inf{z : omega <= CDF(z)}. omega = 0 returns
    /// the smallest atom.
    double quantile(double omega) const {
        if (!(omega >= 0.0 && omega <= 1.0))
            throw DomainError("quantile requires omega in [0,1]");
        for (std::size_t j = 0; j < cumulative_.size(); ++j) {
            if (cumulative_[j] >= omega - 1e-12) return atoms_[j];
        }
        return atoms_.back();
    }

    double min() const { return atoms_.front(); }
    double max() const { return atoms_.back(); }

    double expectation() const {
        double s = 0.0;
        for (std::size_t j = 0; j < atoms_.size(); ++j) s += atoms_[j] * masses_[j];
        return s;
    }

    /// Cumulative masses F_j = sum_{l<=j} masses_l.
    const std::vector<double>& cumulative() const { return cumulative_; }

private:
    std::vector<double> atoms_;
    std::vector<double> masses_;
    std::vector<double> cumulative_;
};

/// Exact distribution of sum_i weights_i * X_i for independent X_i. Full
/// product enumeration; throws CapacityError if the product of atom counts
/// would exceed max_atoms.
inline QuantileDistribution independent_sum(const std::vector<QuantileDistribution>& dists,
                                            const std::vector<double>& weights,
                                            std::size_t max_atoms = 1000000) {
    if (dists.empty()) throw DomainError("independent_sum of zero distributions");
    if (dists.size() != weights.size())
        throw DomainError("independent_sum weight count mismatch");
    for (double w : weights) {
        if (!std::isfinite(w) || w < 0.0)
            throw DomainError("independent_sum weights must be finite and non-negative");
    }

    std::size_t count = 1;
    for (const auto& d : dists) {
        if (count > max_atoms / d.size())
            throw CapacityError("independent_sum atom count would exceed cap");
        count *= d.size();
    }

    std::vector<double> atoms{0.0};
    std::vector<double> masses{1.0};
    for (std::size_t i = 0; i < dists.size(); ++i) {
        const auto& d = dists[i];
        std::vector<double> next_atoms;
        std::vector<double> next_masses;
        next_atoms.reserve(atoms.size() * d.size());
        next_masses.reserve(atoms.size() * d.size());
        for (std::size_t a = 0; a < atoms.size(); ++a) {
            for (std::size_t b = 0; b < d.size(); ++b) {
                next_atoms.push_back(atoms[a] + weights[i] * d.atoms()[b]);
                next_masses.push_back(masses[a] * d.masses()[b]);
            }
        }
        atoms = std::move(next_atoms);
        masses = std::move(next_masses);
    }
    return QuantileDistribution(std::move(atoms), std::move(masses));
}

/// Pushes every atom through f and re-canonicalizes. Throws NumericError on
/// non-finite output.
inline QuantileDistribution map_values(const QuantileDistribution& dist,
                                       const std::function<double(double)>& f) {
    std::vector<double> atoms;
    atoms.reserve(dist.size());
    for (double a : dist.atoms()) {
        double v = f(a);
        if (!std::isfinite(v)) throw NumericError("map_values produced a non-finite atom");
        atoms.push_back(v);
    }
    return QuantileDistribution(std::move(atoms), dist.masses());
}

/// Parses the scenario fragment format: whitespace-separated `atom:mass`
/// pairs, e.g. "0:0.5 100:0.5".
inline QuantileDistribution parse_distribution(const std::string& text) {
    std::istringstream is(text);
    std::vector<double> atoms, masses;
    std::string tok;
    while (is >> tok) {
        auto colon = tok.find(':');
        if (colon == std::string::npos)
            throw ParseError("expected atom:mass pair, got '" + tok + "'");
        try {
            std::size_t used = 0;
            double a = std::stod(tok.substr(0, colon), &used);
            if (used != colon) throw std::invalid_argument(tok);
            std::string mass_part = tok.substr(colon + 1);
            double m = std::stod(mass_part, &used);
            if (used != mass_part.size()) throw std::invalid_argument(tok);
            atoms.push_back(a);
            masses.push_back(m);
        } catch (const std::logic_error&) {
            throw ParseError("malformed atom:mass pair '" + tok + "'");
        }
    }
    if (atoms.empty()) throw ParseError("empty distribution");
    try {
        return QuantileDistribution(std::move(atoms), std::move(masses));
    } catch (const DomainError& e) {
        throw ParseError(e.what());
    }
}

} // namespace riskq
