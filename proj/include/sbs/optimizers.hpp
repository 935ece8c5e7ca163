#pragma once
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>
#include <sbs/data.hpp>
#include <sbs/error.hpp>

namespace sbs {

/// Non-finite gradient entry; `index` is the flat parameter id.
class NonFiniteGradient : public NumericalError
{
public:
    NonFiniteGradient(std::size_t index, const std::string& what)
        : NumericalError(what + " at parameter " + std::to_string(index)), index(index) {}

    std::size_t index;
};

namespace detail {

inline void check_finite_gradient(std::span<const double> g, const char* what)
{
    for (std::size_t j = 0; j < g.size(); ++j)
        if (!std::isfinite(g[j])) throw NonFiniteGradient(j, what);
}

} // namespace detail

/// Heavy-ball velocity: v <- coefficient * v + g, w <- w - lr * v.
struct MomentumState
{
    double coefficient = 0.0;
    std::vector<double> velocity;

    MomentumState() = default;
    MomentumState(std::size_t m, double coefficient) : coefficient(coefficient), velocity(m, 0.0)
    {
        if (!(coefficient >= 0.0 && coefficient < 1.0)) throw PreconditionError("momentum must lie in [0, 1)");
    }
};

/// w <- w - lr * g, or the heavy-ball update when `momentum` is given.
inline void sgd_step(std::span<double> params, std::span<const double> gradient, double lr,
                     MomentumState* momentum = nullptr)
{
    if (gradient.size() != params.size()) throw ShapeError("gradient length does not match parameter count");
    if (!(lr > 0.0)) throw PreconditionError("learning rate must be positive");
    detail::check_finite_gradient(gradient, "non-finite gradient");
    if (momentum) {
        auto& v = momentum->velocity;
        if (v.size() != params.size()) throw ShapeError("momentum state length mismatch");
        for (std::size_t j = 0; j < params.size(); ++j) {
            v[j] = momentum->coefficient * v[j] + gradient[j];
            params[j] -= lr * v[j];
        }
    } else {
        for (std::size_t j = 0; j < params.size(); ++j) params[j] -= lr * gradient[j];
    }
}

/*
 * Per-parameter state of the stochastic-batch-size optimizer.
 *
 *   accumulated  cumulative moving average of universal-batch gradients
 *                since the parameter was last applied
 *   count        k_j: batches folded since the last application, plus one
 *                once the current batch has been folded and not applied
 *   samples      examples behind `accumulated`, used to weight batches of
 *                unequal size
 *
 * Invariants: count >= 1; after an application accumulated = 0, count = 1.
 */
class GateState
{
public:
    GateState() = default;

    /// `batch_limit` > 0 enables the guard count <= batch_limit at fold time.
    explicit GateState(std::size_t m, std::size_t batch_limit = 0)
        : accumulated_(m, 0.0), count_(m, 1), samples_(m, 0), last_(m, 0), batch_limit_(batch_limit) {}

    std::size_t size() const noexcept { return accumulated_.size(); }
    std::span<const double> accumulated() const noexcept { return accumulated_; }
    std::span<const std::uint32_t> counts() const noexcept { return count_; }
    std::span<const std::uint8_t> last_indicators() const noexcept { return last_; }
    std::size_t batch_limit() const noexcept { return batch_limit_; }
    void set_batch_limit(std::size_t limit) noexcept { batch_limit_ = limit; }

    /// g~_j <- g~_j + (b / (samples_j + b)) (g_j - g~_j) for a batch of b examples.
    /// With equal batch sizes the weight is 1 / k_j.
    void fold(std::span<const double> batch_gradient, std::size_t batch_size)
    {
        if (batch_gradient.size() != size()) throw ShapeError("batch gradient length does not match gate state");
        if (batch_size == 0) throw PreconditionError("batch size must be positive");
        detail::check_finite_gradient(batch_gradient, "non-finite batch gradient");
        const double b = static_cast<double>(batch_size);
        for (std::size_t j = 0; j < size(); ++j) {
            if (batch_limit_ && count_[j] > batch_limit_) {
                throw NumericalError("accumulated batch count " + std::to_string(count_[j]) + " of parameter "
                                     + std::to_string(j) + " exceeds the batches per epoch ("
                                     + std::to_string(batch_limit_) + ")");
            }
            samples_[j] += batch_size;
            const double weight = b / static_cast<double>(samples_[j]);
            accumulated_[j] += weight * (batch_gradient[j] - accumulated_[j]);
        }
        detail::check_finite_gradient(accumulated_, "non-finite accumulated gradient");
    }

    /*
     * For chi_j = 1: w_j <- w_j - (k_j lr) g~_j, then g~_j <- 0, k_j <- 1.
     * With momentum the velocity absorbs k_j g~_j and w_j <- w_j - lr v_j;
     * velocities of parameters that are not applied stay untouched.
     * For chi_j = 0: k_j <- k_j + 1. Returns the number of applied parameters.
     */
    std::size_t apply(std::span<double> params, std::span<const std::uint8_t> indicators, double lr,
                      MomentumState* momentum = nullptr)
    {
        if (params.size() != size() || indicators.size() != size()) {
            throw ShapeError("parameter or indicator length does not match gate state");
        }
        if (!(lr >= 0.0)) throw PreconditionError("learning rate must be non-negative");
        if (momentum && momentum->velocity.size() != size()) throw ShapeError("momentum state length mismatch");
        std::size_t applied = 0;
        for (std::size_t j = 0; j < size(); ++j) {
            last_[j] = indicators[j] ? 1 : 0;
            if (!indicators[j]) {
                ++count_[j];
                continue;
            }
            const double k = static_cast<double>(count_[j]);
            if (momentum) {
                auto& v = momentum->velocity[j];
                v = momentum->coefficient * v + k * accumulated_[j];
                params[j] -= lr * v;
            } else {
                params[j] -= (k * lr) * accumulated_[j];
            }
            accumulated_[j] = 0.0;
            count_[j] = 1;
            samples_[j] = 0;
            ++applied;
        }
        return applied;
    }

    /// Discards unapplied accumulations: g~ <- 0, k <- 1.
    void reset() noexcept
    {
        std::fill(accumulated_.begin(), accumulated_.end(), 0.0);
        std::fill(count_.begin(), count_.end(), 1u);
        std::fill(samples_.begin(), samples_.end(), 0u);
    }

private:
    std::vector<double> accumulated_;
    std::vector<std::uint32_t> count_;
    std::vector<std::uint64_t> samples_;
    std::vector<std::uint8_t> last_;
    std::size_t batch_limit_ = 0;
};

/// fold() of the universal-batch gradient followed by apply().
inline std::size_t sbs_cma_step(std::span<double> params, std::span<const double> batch_gradient,
                                std::size_t batch_size, GateState& gate, std::span<const std::uint8_t> indicators,
                                double lr, MomentumState* momentum = nullptr)
{
    gate.fold(batch_gradient, batch_size);
    return gate.apply(params, indicators, lr, momentum);
}

inline void epoch_reset(GateState& gate) noexcept { gate.reset(); }

inline constexpr std::size_t reference_parameter_budget = 10'000;

/// Mean-loss gradient over the given example indices at the given parameters.
using IndexedGradientFn = std::function<std::vector<double>(std::span<const std::size_t>, std::span<const double>)>;

/// Per-parameter stochastic batch of the direct (recomputing) optimizer,
/// stored as the id of the first universal batch accumulated this epoch.
/// Accumulated sets are always the contiguous run [first, current].
class RefBatchState
{
public:
    static constexpr std::int64_t empty = -1;

    RefBatchState() = default;
    explicit RefBatchState(std::size_t m) : first_(m, empty) {}

    std::size_t size() const noexcept { return first_.size(); }
    std::span<const std::int64_t> first_batches() const noexcept { return first_; }

    /// Universal batches in parameter j's stochastic batch, counting `batch`.
    std::size_t batch_count(std::size_t j, std::size_t batch) const
    {
        return first_[j] == empty ? 0 : batch - static_cast<std::size_t>(first_[j]) + 1;
    }

    void reset() noexcept { std::fill(first_.begin(), first_.end(), empty); }

    /*
     * Every parameter adds universal batch `batch` to its stochastic batch;
     * parameters with chi_j = 1 take the gradient of the mean loss over their
     * whole stochastic batch at the current iterate, step by (k_j lr) and
     * clear their batch. All gradients are evaluated before any parameter
     * moves. `applied_gradient`, when given, receives the gradient used for
     * each applied parameter (0 elsewhere).
     */
    std::size_t step(std::span<double> params, const IndexedGradientFn& gradient_over, const BatchPlan& plan,
                     std::size_t batch, std::span<const std::uint8_t> indicators, double lr,
                     std::vector<double>* applied_gradient)
    {
        const std::size_t m = params.size();
        if (m > reference_parameter_budget) {
            throw PreconditionError("reference optimizer budget exceeded: " + std::to_string(m) + " parameters > "
                                    + std::to_string(reference_parameter_budget));
        }
        if (size() != m || indicators.size() != m) throw ShapeError("reference state length mismatch");
        if (batch >= plan.batch_count()) throw PreconditionError("batch id outside the epoch plan");
        if (!(lr >= 0.0)) throw PreconditionError("learning rate must be non-negative");

        for (auto& f : first_)
            if (f == empty) f = static_cast<std::int64_t>(batch);

        std::map<std::int64_t, std::vector<double>> gradients;
        for (std::size_t j = 0; j < m; ++j) {
            if (!indicators[j] || gradients.count(first_[j])) continue;
            std::vector<std::size_t> indices;
            for (auto b = static_cast<std::size_t>(first_[j]); b <= batch; ++b) {
                indices.insert(indices.end(), plan.batches[b].begin(), plan.batches[b].end());
            }
            auto g = gradient_over(indices, params);
            if (g.size() != m) throw ShapeError("gradient callback returned the wrong length");
            detail::check_finite_gradient(g, "non-finite stochastic-batch gradient");
            gradients.emplace(first_[j], std::move(g));
        }

        if (applied_gradient) applied_gradient->assign(m, 0.0);
        std::size_t applied = 0;
        for (std::size_t j = 0; j < m; ++j) {
            if (!indicators[j]) continue;
            const double gj = gradients.at(first_[j])[j];
            const double k = static_cast<double>(batch_count(j, batch));
            params[j] -= (k * lr) * gj;
            if (applied_gradient) (*applied_gradient)[j] = gj;
            first_[j] = empty;
            ++applied;
        }
        return applied;
    }

private:
    std::vector<std::int64_t> first_;
};

inline void epoch_reset(RefBatchState& state) noexcept { state.reset(); }

/// Direct stochastic-batch-size update; a test oracle for sbs_cma_step.
inline std::size_t sbs_reference_step(std::span<double> params, const IndexedGradientFn& gradient_over,
                                      const BatchPlan& plan, std::size_t batch, RefBatchState& state,
                                      std::span<const std::uint8_t> indicators, double lr,
                                      std::vector<double>* applied_gradient = nullptr)
{
    return state.step(params, gradient_over, plan, batch, indicators, lr, applied_gradient);
}

} // namespace sbs
