#pragma once
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>
#include <sbs/error.hpp>
#include <sbs/parameters.hpp>
#include <sbs/random.hpp>

namespace sbs {

enum class ProbabilityScheme
{
    local,
    global,
    combined,
    constant,
};

/// Which gradient drives the probabilities: the accumulated (CMA) estimate
/// after folding the current batch, or the current batch gradient alone.
enum class GradientSource
{
    accumulated,
    batch,
};

inline std::string_view to_string(ProbabilityScheme s) noexcept
{
    switch (s) {
        case ProbabilityScheme::local: return "local";
        case ProbabilityScheme::global: return "global";
        case ProbabilityScheme::combined: return "combined";
        case ProbabilityScheme::constant: return "constant";
    }
    return "unknown";
}

inline std::string_view to_string(GradientSource s) noexcept
{
    return s == GradientSource::accumulated ? "accumulated" : "batch";
}

struct ProbabilityConfig
{
    ProbabilityScheme scheme = ProbabilityScheme::combined;
    double alpha = 0.1;
    double lambda = -4.0;
    double constant_p = 1.0;
    GradientSource source = GradientSource::accumulated;

    void validate() const
    {
        if (!std::isfinite(alpha) || !std::isfinite(lambda)) throw PreconditionError("alpha and lambda must be finite");
        if (!(constant_p > 0.0 && constant_p <= 1.0)) throw PreconditionError("constant p must lie in (0, 1]");
    }
};

/// s(x; alpha, gamma) = 1 / (1 + exp(-alpha x - gamma)), evaluated without overflow.
inline double sigmoid(double x, double alpha, double gamma) noexcept
{
    const double z = alpha * x + gamma;
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Statistics of |g_j| per parameter group, plus the size-weighted mean and
/// std of the group means across groups. Stds are population stds.
struct GroupStats
{
    std::vector<double> mean;
    std::vector<double> stddev;
    std::vector<double> weight;
    double cross_mean = 0.0;
    double cross_stddev = 0.0;
};

inline GroupStats compute_group_stats(std::span<const double> gradient, std::span<const ParameterGroup> groups)
{
    GroupStats s;
    s.mean.resize(groups.size());
    s.stddev.resize(groups.size());
    s.weight.resize(groups.size());
    double weight_total = 0.0;
    for (std::size_t l = 0; l < groups.size(); ++l) {
        const auto& g = groups[l];
        if (g.length == 0) throw PreconditionError("empty parameter group " + g.name());
        if (g.offset + g.length > gradient.size()) throw ShapeError("gradient does not cover group " + g.name());
        const double count = static_cast<double>(g.length);
        double sum = 0.0;
        for (std::size_t j = g.offset; j < g.offset + g.length; ++j) sum += std::abs(gradient[j]);
        const double mu = sum / count;
        double ss = 0.0;
        for (std::size_t j = g.offset; j < g.offset + g.length; ++j) {
            const double d = std::abs(gradient[j]) - mu;
            ss += d * d;
        }
        s.mean[l] = mu;
        s.stddev[l] = std::sqrt(ss / count);
        s.weight[l] = count;
        weight_total += count;
    }
    double wsum = 0.0;
    for (std::size_t l = 0; l < groups.size(); ++l) wsum += s.weight[l] * s.mean[l];
    s.cross_mean = wsum / weight_total;
    double wss = 0.0;
    for (std::size_t l = 0; l < groups.size(); ++l) {
        const double d = s.mean[l] - s.cross_mean;
        wss += s.weight[l] * d * d;
    }
    s.cross_stddev = std::sqrt(wss / weight_total);
    return s;
}

/// Per-parameter update probabilities with the intermediate quantities.
struct ProbabilityField
{
    std::vector<double> p;
    std::vector<double> normalized;     ///< within-group standardized |g_j|
    std::vector<double> group_score;    ///< across-group standardized group mean
    std::vector<double> offset;         ///< per-group logistic offset gamma
};

/*
 * local    : p_j = s(v_j; alpha, 0)
 * global   : p_j = s(v_j; 0, lambda * mu~_l)
 * combined : p_j = s(v_j; alpha, lambda * mu~_l)
 * constant : p_j = constant_p
 * with v_j = (|g_j| - mu_l) / sigma_l and mu~_l = (mu_l - mu) / sigma. A zero
 * std maps the corresponding standardized values to 0.
 */
inline ProbabilityField compute_probabilities(const GroupStats& stats, std::span<const double> gradient,
                                              std::span<const ParameterGroup> groups, const ProbabilityConfig& config)
{
    if (stats.mean.size() != groups.size()) throw PreconditionError("group stats do not match the groups");
    const auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(stats.cross_mean) || !finite(stats.cross_stddev)) {
        throw NumericalError("non-finite cross-group gradient statistics");
    }
    ProbabilityField f;
    std::size_t m = 0;
    for (const auto& g : groups) m = std::max(m, g.offset + g.length);
    if (gradient.size() < m) throw ShapeError("gradient does not cover all parameters");
    f.p.assign(m, config.constant_p);
    f.normalized.assign(m, 0.0);
    f.group_score.assign(groups.size(), 0.0);
    f.offset.assign(groups.size(), 0.0);
    if (config.scheme == ProbabilityScheme::constant) return f;

    const double alpha = config.scheme == ProbabilityScheme::global ? 0.0 : config.alpha;
    const double lambda = config.scheme == ProbabilityScheme::local ? 0.0 : config.lambda;
    for (std::size_t l = 0; l < groups.size(); ++l) {
        const auto& g = groups[l];
        const double mu = stats.mean[l], sd = stats.stddev[l];
        if (!finite(mu) || !finite(sd)) throw NumericalError("non-finite gradient statistics in group " + g.name());
        f.group_score[l] = stats.cross_stddev > 0.0 ? (mu - stats.cross_mean) / stats.cross_stddev : 0.0;
        f.offset[l] = lambda * f.group_score[l];
        for (std::size_t j = g.offset; j < g.offset + g.length; ++j) {
            const double v = sd > 0.0 ? (std::abs(gradient[j]) - mu) / sd : 0.0;
            f.normalized[j] = v;
            f.p[j] = sigmoid(v, alpha, f.offset[l]);
        }
    }
    return f;
}

/// chi_j = 1 with probability p_j, drawn as u_j < p_j from `rng`.
inline void sample_indicators(std::span<const double> p, SeedStream& rng, std::span<std::uint8_t> out)
{
    if (out.size() != p.size()) throw ShapeError("indicator buffer length mismatch");
    for (std::size_t j = 0; j < p.size(); ++j) out[j] = rng.uniform() < p[j] ? 1 : 0;
}

inline std::vector<std::uint8_t> sample_indicators(std::span<const double> p, SeedStream& rng)
{
    std::vector<std::uint8_t> out(p.size());
    sample_indicators(p, rng, out);
    return out;
}

} // namespace sbs
