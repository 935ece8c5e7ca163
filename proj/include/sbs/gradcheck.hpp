#pragma once
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>
#include <sbs/error.hpp>
#include <sbs/model.hpp>

namespace sbs {

struct GradCheckReport
{
    double max_relative_error = 0.0;
    double mean_relative_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    bool passed = false;
};

inline constexpr std::size_t gradcheck_parameter_budget = 10'000;

/// Denominator floor of the relative error, so coordinates with a
/// vanishing gradient are judged on absolute error.
inline constexpr double gradcheck_denominator_floor = 1e-6;

/*
 * Compares an analytic gradient against central differences
 * (f(w + h e_j) - f(w - h e_j)) / 2h, one coordinate at a time.
 * relative error_j = |a_j - n_j| / max(|a_j|, |n_j|, floor).
 */
inline GradCheckReport finite_difference_check(const std::function<double(std::span<const double>)>& loss,
                                               std::span<const double> analytic, std::span<const double> point,
                                               double step, double tolerance)
{
    if (!(step > 0.0)) throw PreconditionError("step must be positive");
    if (point.size() > gradcheck_parameter_budget) {
        throw PreconditionError("finite-difference budget exceeded: " + std::to_string(point.size())
                                + " parameters > " + std::to_string(gradcheck_parameter_budget));
    }
    if (analytic.size() != point.size()) throw ShapeError("gradient length does not match parameter count");

    GradCheckReport rep;
    std::vector<double> w(point.begin(), point.end());
    double total = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        const double saved = w[j];
        w[j] = saved + step;
        const double fp = loss(w);
        w[j] = saved - step;
        const double fm = loss(w);
        w[j] = saved;
        const double numeric = (fp - fm) / (2.0 * step);
        const double denom = std::max({std::abs(analytic[j]), std::abs(numeric), gradcheck_denominator_floor});
        const double rel = std::abs(analytic[j] - numeric) / denom;
        total += rel;
        if (rel > rep.max_relative_error || j == 0) {
            rep.max_relative_error = rel;
            rep.worst_index = j;
        }
    }
    rep.checked = w.size();
    rep.mean_relative_error = w.empty() ? 0.0 : total / static_cast<double>(w.size());
    rep.passed = rep.max_relative_error < tolerance;
    return rep;
}

/// Checks backward() of the model's training-mode loss on one batch.
/// Batch-norm running statistics are not touched.
inline GradCheckReport finite_difference_check(const ModelGraph& graph, const ParameterStore& params,
                                               const Tensor& inputs, std::span<const int> labels, double step,
                                               double tolerance)
{
    if (!(step > 0.0)) throw PreconditionError("step must be positive");
    if (params.size() > gradcheck_parameter_budget) {
        throw PreconditionError("finite-difference budget exceeded: " + std::to_string(params.size())
                                + " parameters > " + std::to_string(gradcheck_parameter_budget));
    }
    const auto analytic = loss_gradient(graph, params, inputs, labels);
    ParameterStore probe = params;
    const auto loss = [&](std::span<const double> w) {
        probe.assign(w);
        return forward(graph, probe, inputs, labels, Mode::train).loss_value.scalar;
    };
    return finite_difference_check(loss, analytic, params.values(), step, tolerance);
}

} // namespace sbs
