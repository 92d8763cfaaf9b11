#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <string>

#include "riskq/distribution.hpp"
#include "riskq/errors.hpp"

namespace riskq {

/// Standard normal CDF.
inline double gaussian_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

/// Standard normal inverse CDF for p strictly inside (0,1). Rational
/// approximation (Acklam) refined by one Newton step on gaussian_cdf.
inline double gaussian_inv_cdf(double p) {
    if (!(p > 0.0 && p < 1.0))
        throw DomainError("gaussian_inv_cdf requires p in (0,1)");

    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};

    const double plow = 0.02425;
    double x;
    if (p < plow) {
        double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        double q = p - 0.5;
        double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }

    // one Newton step: x -= (Phi(x) - p) / phi(x)
    double e = gaussian_cdf(x) - p;
    double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    if (pdf > 0.0) x -= e / pdf;
    return x;
}

enum class DistortionKind { cvar, wang, cpw, neutral };

inline const char* distortion_name(DistortionKind k) {
    switch (k) {
        case DistortionKind::cvar: return "cvar";
        case DistortionKind::wang: return "wang";
        case DistortionKind::cpw: return "cpw";
        case DistortionKind::neutral: return "neutral";
    }
    return "?";
}

/// A distortion function g: [0,1] -> [0,1] with g(0)=0, g(1)=1, g
/// non-decreasing. Construction validates the invariants on a grid.
struct DistortionSpec {
    DistortionKind kind;
    double eta; // risk level alpha for cvar/cpw, shift for wang, unused for neutral

    DistortionSpec(DistortionKind k, double e) : kind(k), eta(e) {
        switch (kind) {
            case DistortionKind::cvar:
                if (!(eta > 0.0 && eta <= 1.0))
                    throw DomainError("cvar risk level must be in (0,1]");
                break;
            case DistortionKind::cpw:
                if (!(eta > 0.0))
                    throw DomainError("cpw parameter must be positive");
                break;
            case DistortionKind::wang:
                if (!std::isfinite(eta))
                    throw DomainError("wang shift must be finite");
                break;
            case DistortionKind::neutral:
                eta = 0.0;
                break;
        }
        check_grid();
    }

    double g(double omega) const {
        if (omega <= 0.0) return 0.0;
        if (omega >= 1.0) return 1.0;
        switch (kind) {
            case DistortionKind::neutral:
                return omega;
            case DistortionKind::cvar:
                return std::min(omega / eta, 1.0);
            case DistortionKind::wang:
                return gaussian_cdf(gaussian_inv_cdf(omega) + eta);
            case DistortionKind::cpw: {
                double num = std::pow(omega, eta);
                double den = std::pow(num + std::pow(1.0 - omega, eta), 1.0 / eta);
                return num / den;
            }
        }
        return omega;
    }

    std::string str() const {
        std::ostringstream os;
        os << distortion_name(kind);
        if (kind != DistortionKind::neutral) os << ":" << eta;
        return os.str();
    }

private:
    void check_grid() const {
        const int n = 1000;
        double prev = g(0.0);
        if (std::abs(prev) > 1e-12) throw DomainError("distortion must satisfy g(0)=0");
        for (int i = 1; i <= n; ++i) {
            double w = static_cast<double>(i) / n;
            double cur = g(w);
            if (cur < prev - 1e-12)
                throw DomainError("distortion must be non-decreasing: " + str());
            if (cur < -1e-12 || cur > 1.0 + 1e-12)
                throw DomainError("distortion must map into [0,1]: " + str());
            prev = cur;
        }
        if (std::abs(prev - 1.0) > 1e-12) throw DomainError("distortion must satisfy g(1)=1");
    }
};

/// Exact distorted expectation of a Dirac mixture: the Lebesgue-Stieltjes sum
/// sum_j atoms_j * (g(F_j) - g(F_{j-1})).
inline double distorted_expectation(const QuantileDistribution& dist, const DistortionSpec& spec) {
    double value = 0.0;
    double g_prev = 0.0;
    const auto& cum = dist.cumulative();
    for (std::size_t j = 0; j < dist.size(); ++j) {
        double f = std::min(cum[j], 1.0);
        double g_cur = (j + 1 == dist.size()) ? 1.0 : spec.g(f);
        value += dist.atoms()[j] * (g_cur - g_prev);
        g_prev = g_cur;
    }
    return value;
}

/// A risk metric psi_alpha: either VaR(alpha) or a distorted expectation.
class RiskMeasure {
public:
    static RiskMeasure var(double alpha) {
        if (!(alpha >= 0.0 && alpha <= 1.0))
            throw DomainError("var risk level must be in [0,1]");
        RiskMeasure m;
        m.alpha_ = alpha;
        return m;
    }

    static RiskMeasure distorted(DistortionSpec spec) {
        RiskMeasure m;
        m.spec_ = spec;
        return m;
    }

    static RiskMeasure cvar(double alpha) { return distorted({DistortionKind::cvar, alpha}); }
    static RiskMeasure wang(double eta) { return distorted({DistortionKind::wang, eta}); }
    static RiskMeasure cpw(double eta) { return distorted({DistortionKind::cpw, eta}); }
    static RiskMeasure neutral() { return distorted({DistortionKind::neutral, 0.0}); }

    /// Grammar: `name[:param]`, e.g. "var:0.5", "cvar:0.2", "wang:0.75",
    /// "cpw:0.71"; "neutral" aliases cvar:1.0. A space also separates name
    /// and parameter (scenario-file form, e.g. "var 0.5").
    static RiskMeasure parse(const std::string& text) {
        std::string name = text;
        std::optional<double> param;
        auto sep = text.find_first_of(": \t");
        if (sep != std::string::npos) {
            name = text.substr(0, sep);
            std::string rest = text.substr(sep + 1);
            try {
                std::size_t used = 0;
                param = std::stod(rest, &used);
                while (used < rest.size() && std::isspace(static_cast<unsigned char>(rest[used])))
                    ++used;
                if (used != rest.size()) throw std::invalid_argument(rest);
            } catch (const std::logic_error&) {
                throw ParseError("bad risk parameter in '" + text + "'");
            }
        }
        if (name == "var") {
            if (!param) throw ParseError("var requires a risk level");
            return var(*param);
        }
        if (name == "cvar") {
            if (!param) throw ParseError("cvar requires a risk level");
            return cvar(*param);
        }
        if (name == "wang") {
            if (!param) throw ParseError("wang requires a shift parameter");
            return wang(*param);
        }
        if (name == "cpw") return cpw(param.value_or(0.71));
        if (name == "neutral") return cvar(1.0);
        throw ParseError("unknown risk measure '" + name + "'");
    }

    bool is_var() const { return !spec_.has_value(); }
    double var_level() const { return alpha_; }
    const DistortionSpec& spec() const { return *spec_; }

    double evaluate(const QuantileDistribution& dist) const {
        if (is_var()) return dist.quantile(alpha_);
        return distorted_expectation(dist, *spec_);
    }

    /// Risk value of a uniform-mass mixture given its sorted quantile values.
    /// Equivalent to evaluate(QuantileDistribution::from_quantiles(q)) but
    /// without constructing the distribution.
    double evaluate_sorted_uniform(const double* q, int n) const {
        if (is_var()) {
            if (alpha_ <= 0.0) return q[0];
            int j = static_cast<int>(std::ceil(alpha_ * n - 1e-12));
            if (j < 1) j = 1;
            if (j > n) j = n;
            return q[j - 1];
        }
        double value = 0.0;
        double g_prev = 0.0;
        for (int j = 1; j <= n; ++j) {
            double g_cur = (j == n) ? 1.0 : spec_->g(static_cast<double>(j) / n);
            value += q[j - 1] * (g_cur - g_prev);
            g_prev = g_cur;
        }
        return value;
    }

    /// Per-index weights for evaluate_sorted_uniform; dot(weights, q) gives
    /// the risk value of a sorted uniform-mass quantile vector.
    std::vector<double> uniform_weights(int n) const {
        std::vector<double> w(n, 0.0);
        if (is_var()) {
            int j = 1;
            if (alpha_ > 0.0) {
                j = static_cast<int>(std::ceil(alpha_ * n - 1e-12));
                j = std::max(1, std::min(n, j));
            }
            w[j - 1] = 1.0;
            return w;
        }
        double g_prev = 0.0;
        for (int j = 1; j <= n; ++j) {
            double g_cur = (j == n) ? 1.0 : spec_->g(static_cast<double>(j) / n);
            w[j - 1] = g_cur - g_prev;
            g_prev = g_cur;
        }
        return w;
    }

    std::string str() const {
        if (is_var()) {
            std::ostringstream os;
            os << "var:" << alpha_;
            return os.str();
        }
        return spec_->str();
    }

private:
    RiskMeasure() = default;
    double alpha_ = 0.0;
    std::optional<DistortionSpec> spec_;
};

} // namespace riskq
