#pragma once
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>
#include <sbs/error.hpp>

namespace sbs {

enum class LrScheme
{
    constant,
    exponential,
    staircase,
    sigmoid_anneal,
};

inline std::string_view to_string(LrScheme s) noexcept
{
    switch (s) {
        case LrScheme::constant: return "constant";
        case LrScheme::exponential: return "exponential";
        case LrScheme::staircase: return "staircase";
        case LrScheme::sigmoid_anneal: return "sigmoid";
    }
    return "unknown";
}

/// Closed-form learning rate as a function of (epoch, total epochs).
struct LrSchedule
{
    LrScheme scheme = LrScheme::sigmoid_anneal;
    double initial = 0.1;
    double final = 0.001;
    double steepness = 15.0;
    double decay_power = 0.05;
    std::vector<double> milestones{0.5, 0.75};

    void validate() const
    {
        if (!(initial > 0.0)) throw PreconditionError("initial learning rate must be positive");
        if (!(final >= 0.0)) throw PreconditionError("final learning rate must be non-negative");
        if (scheme == LrScheme::sigmoid_anneal && final > initial) {
            throw PreconditionError("sigmoid annealing needs final <= initial learning rate");
        }
        for (double m : milestones) {
            if (!(m > 0.0 && m < 1.0)) throw PreconditionError("staircase milestones must lie in (0, 1)");
        }
    }
};

inline double logistic(double x) noexcept
{
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/*
 * constant     : initial
 * exponential  : initial * exp(-decay_power * epoch)
 * staircase    : initial * 10^-(milestones with epoch >= m * total)
 * sigmoid      : final + (initial - final) * (1 - logistic(steepness * (epoch / total - 1/2)))
 */
inline double lr_at(const LrSchedule& s, double epoch, double total_epochs)
{
    if (!(total_epochs >= 1.0)) throw PreconditionError("total epochs must be at least 1");
    if (!(epoch >= 0.0 && epoch <= total_epochs)) {
        throw PreconditionError("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(total_epochs) + "]");
    }
    switch (s.scheme) {
        case LrScheme::constant:
            return s.initial;
        case LrScheme::exponential:
            return s.initial * std::exp(-s.decay_power * epoch);
        case LrScheme::staircase: {
            int passed = 0;
            for (double m : s.milestones)
                if (epoch >= m * total_epochs) ++passed;
            return s.initial * std::pow(10.0, -passed);
        }
        case LrScheme::sigmoid_anneal:
            return s.final + (s.initial - s.final) * (1.0 - logistic(s.steepness * (epoch / total_epochs - 0.5)));
    }
    return s.initial;
}

} // namespace sbs
